use std::sync::Arc;

use geomreg_core::gram::StabilizedGram;
use geomreg_core::penalty::{contour_grid, ContourBasis, ContourValues, GridSpec, PenaltyConfig};
use nalgebra::DMatrix;

use crate::cli::{BasisArg, ContoursArgs};
use crate::error::{CliError, Result};
use crate::formats::{write_json, GramJson};
use crate::io::{fmt_f64, write_table};
use crate::manifest::{RunManifest, RESULTS_DIR};
use crate::svg;

use super::{check_arity, parse_family, prepare_run_dir, rel};

/// Stabilized Gram with eigenvalues `eigenvalues` of `C_δ` along axes rotated by `angle`.
pub fn rotated_gram(eigenvalues: &[f64], angle: f64, delta: f64) -> Result<StabilizedGram> {
    if eigenvalues.len() != 2 {
        return Err(CliError::Usage(format!("--eigenvalues needs 2 values, got {}", eigenvalues.len())));
    }
    if let Some(e) = eigenvalues.iter().find(|&&e| !(e.is_finite() && e >= delta)) {
        return Err(CliError::Usage(format!("eigenvalue {e} must be at least delta = {delta}")));
    }
    let (s, c) = angle.sin_cos();
    let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(eigenvalues));
    let c_delta = &r * d * r.transpose();
    let c_n = c_delta - DMatrix::identity(2, 2) * delta;
    Ok(StabilizedGram::from_gram_matrix(c_n, delta)?)
}

pub fn penalty_from_args(args: &ContoursArgs) -> Result<PenaltyConfig> {
    let family = parse_family(&args.method)?;
    check_arity(family, &args.params)?;
    let gram = if family.needs_gram() {
        Some(Arc::new(rotated_gram(&args.eigenvalues, args.angle, args.delta)?))
    } else {
        None
    };
    family.instantiate(&args.params, gram).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn contours_from_args(args: &ContoursArgs) -> Result<(PenaltyConfig, ContourValues)> {
    let config = penalty_from_args(args)?;
    let [lo, hi] = args.range[..] else {
        return Err(CliError::Usage("--range needs `lo,hi`".into()));
    };
    if !(lo < hi) || args.resolution < 2 {
        return Err(CliError::Usage("--range needs lo < hi and --resolution at least 2".into()));
    }
    let basis = match args.basis {
        BasisArg::Canonical => ContourBasis::Canonical,
        BasisArg::Eigen => ContourBasis::Eigen,
    };
    let values = contour_grid(&config, &GridSpec::square(lo, hi, args.resolution), basis)?;
    Ok((config, values))
}

/// Writes `x,y,value` rows (x fastest) and optional SVG level sets.
pub fn cmd_contours(args: &ContoursArgs) -> Result<()> {
    let (config, values) = contours_from_args(args)?;
    let mut outputs = vec![rel(RESULTS_DIR, "contours.csv")];
    if config.gram().is_some() {
        outputs.push(rel(RESULTS_DIR, "gram.json"));
    }
    if args.svg_levels.is_some() {
        outputs.push(rel(RESULTS_DIR, "contours.svg"));
    }
    prepare_run_dir(&args.out)?;
    let run_config = serde_json::json!({ "args": args });
    let mut manifest = RunManifest::new("contours", 0, 1, run_config, outputs);
    manifest.write(&args.out)?;

    let results = args.out.join(RESULTS_DIR);
    let mut rows = Vec::with_capacity(values.xs.len() * values.ys.len());
    for (iy, &y) in values.ys.iter().enumerate() {
        for (ix, &x) in values.xs.iter().enumerate() {
            rows.push(vec![fmt_f64(x), fmt_f64(y), fmt_f64(values.values[(iy, ix)])]);
        }
    }
    write_table(&results.join("contours.csv"), &["x", "y", "value"], &rows)?;
    if let Some(g) = config.gram() {
        write_json(&results.join("gram.json"), &GramJson::from(&**g))?;
    }
    if let Some(count) = args.svg_levels {
        let levels = svg::even_levels(&values, count);
        let title = format!("{} {:?}", config.family().name(), config.params());
        let path = results.join("contours.svg");
        std::fs::write(&path, svg::render(&values, &levels, 480.0, &title)).map_err(|e| CliError::io(&path, e))?;
    }
    println!("{} grid points written to {}", rows.len(), results.join("contours.csv").display());
    manifest.finish(&args.out, "ok")
}
