//! Level-set extraction by marching squares and a minimal SVG writer.

use std::fmt::Write;

use geomreg_core::penalty::ContourValues;

pub type Segment = [(f64, f64); 2];

/// `count` levels evenly spaced strictly between the grid minimum and maximum.
pub fn even_levels(c: &ContourValues, count: usize) -> Vec<f64> {
    let lo = c.values.min();
    let hi = c.values.max();
    (1..=count).map(|i| lo + (hi - lo) * i as f64 / (count + 1) as f64).collect()
}

/// Line segments of `{(x, y) : f(x, y) = level}` with linear interpolation
/// along cell edges. Saddle cells are split using the cell-centre average.
pub fn level_segments(c: &ContourValues, level: f64) -> Vec<Segment> {
    let (ny, nx) = c.values.shape();
    let mut out = Vec::new();
    if nx < 2 || ny < 2 {
        return out;
    }
    for iy in 0..ny - 1 {
        for ix in 0..nx - 1 {
            let corner = |dx: usize, dy: usize| (c.xs[ix + dx], c.ys[iy + dy], c.values[(iy + dy, ix + dx)]);
            // Counter-clockwise from the lower-left corner.
            let k = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
            let inside = k.map(|(_, _, v)| v >= level);
            let mut crossings = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (k[e], k[(e + 1) % 4]);
                if inside[e] != inside[(e + 1) % 4] {
                    let t = (level - a.2) / (b.2 - a.2);
                    crossings.push((e, (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))));
                }
            }
            match crossings.len() {
                2 => out.push([crossings[0].1, crossings[1].1]),
                4 => {
                    let centre = k.iter().map(|p| p.2).sum::<f64>() / 4.0;
                    let p = |e: usize| crossings[e].1;
                    if (centre >= level) == inside[0] {
                        out.push([p(0), p(1)]);
                        out.push([p(2), p(3)]);
                    } else {
                        out.push([p(3), p(0)]);
                        out.push([p(1), p(2)]);
                    }
                }
                _ => {}
            }
        }
    }
    out
}

/// Renders the level sets of `c` as an SVG document of side `size` pixels.
pub fn render(c: &ContourValues, levels: &[f64], size: f64, title: &str) -> String {
    let (x0, x1) = (c.xs[0], c.xs[c.xs.len() - 1]);
    let (y0, y1) = (c.ys[0], c.ys[c.ys.len() - 1]);
    let margin = 10.0;
    let span = size - 2.0 * margin;
    let px = |x: f64| margin + (x - x0) / (x1 - x0) * span;
    let py = |y: f64| margin + (y1 - y) / (y1 - y0) * span;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(
        s,
        r##"<rect x="{margin}" y="{margin}" width="{span}" height="{span}" fill="none" stroke="#999"/>"##
    );
    if x0 < 0.0 && x1 > 0.0 {
        let _ = writeln!(s, r##"<line x1="{0:.3}" y1="{margin}" x2="{0:.3}" y2="{1}" stroke="#ccc"/>"##, px(0.0), margin + span);
    }
    if y0 < 0.0 && y1 > 0.0 {
        let _ = writeln!(s, r##"<line x1="{margin}" y1="{0:.3}" x2="{1}" y2="{0:.3}" stroke="#ccc"/>"##, py(0.0), margin + span);
    }
    let n = levels.len().max(1);
    for (i, &level) in levels.iter().enumerate() {
        let shade = (40.0 + 180.0 * i as f64 / n as f64) as u8;
        let mut d = String::new();
        for [a, b] in level_segments(c, level) {
            let _ = write!(d, "M{:.3} {:.3}L{:.3} {:.3}", px(a.0), py(a.1), px(b.0), py(b.1));
        }
        if d.is_empty() {
            continue;
        }
        let _ = writeln!(
            s,
            r#"<path data-level="{level}" d="{d}" fill="none" stroke="rgb({shade},{shade},255)" stroke-width="1.2"/>"#
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn grid(n: usize, f: impl Fn(f64, f64) -> f64) -> ContourValues {
        let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
        let ys = xs.clone();
        let values = DMatrix::from_fn(n, n, |iy, ix| f(xs[ix], ys[iy]));
        ContourValues { xs, ys, values }
    }

    #[test]
    fn circle_segments_lie_near_the_level() {
        let c = grid(81, |x, y| x * x + y * y);
        let segs = level_segments(&c, 0.25);
        assert!(segs.len() > 40);
        for [a, b] in segs {
            for (x, y) in [a, b] {
                assert!(((x * x + y * y).sqrt() - 0.5).abs() < 0.01);
            }
        }
    }

    #[test]
    fn linear_field_gives_straight_line() {
        let c = grid(11, |x, _| x);
        for [a, b] in level_segments(&c, 0.3) {
            assert!((a.0 - 0.3).abs() < 1e-12 && (b.0 - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn saddle_cell_yields_two_segments() {
        let c = ContourValues {
            xs: vec![0.0, 1.0],
            ys: vec![0.0, 1.0],
            values: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
        };
        assert_eq!(level_segments(&c, 0.5).len(), 2);
    }

    #[test]
    fn levels_are_interior_and_svg_is_well_formed() {
        let c = grid(21, |x, y| x.abs() + y.abs());
        let levels = even_levels(&c, 4);
        assert_eq!(levels.len(), 4);
        assert!(levels.iter().all(|&l| l > 0.0 && l < 2.0));
        let svg = render(&c, &levels, 300.0, "l1 <ball>");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<path").count(), 4);
        assert!(svg.contains("&lt;ball&gt;"));
    }
}
