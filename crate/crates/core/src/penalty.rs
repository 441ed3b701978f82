//! Weight penalties and their (sub)gradients.
//!
//! For a `p × d` weight matrix `W` (rows index inputs):
//!
//! | family       | value                                  | gradient                        |
//! |--------------|----------------------------------------|---------------------------------|
//! | Ridge        | `λ‖W‖_F²`                              | `2λW`                           |
//! | Lasso        | `λ‖W‖₁`                                | `λ sign(W)`                     |
//! | Elastic Net  | `λ(α‖W‖₁ + (1−α)/2 ‖W‖_F²)`            | `λα sign(W) + λ(1−α)W`          |
//! | Covridge     | `λ₁ tr(WᵀC_δW) + λ₂‖W‖_F²`             | `2λ₁C_δW + 2λ₂W`                |
//! | Sparridge    | `λ₁ tr(WᵀC_δW) + γ‖W‖₁`                | `2λ₁C_δW + γ sign(W)`           |
//!
//! `sign(0) = 0`. With `λ₁ = 0` the Covridge and Sparridge code paths perform
//! exactly the same floating-point operations as Ridge and Lasso.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DMatrix;

use crate::gram::StabilizedGram;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PenaltyFamily {
    None,
    Ridge,
    Lasso,
    ElasticNet,
    Covridge,
    Sparridge,
}

impl PenaltyFamily {
    pub const ALL: [PenaltyFamily; 6] = [
        PenaltyFamily::None,
        PenaltyFamily::Ridge,
        PenaltyFamily::Lasso,
        PenaltyFamily::ElasticNet,
        PenaltyFamily::Covridge,
        PenaltyFamily::Sparridge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PenaltyFamily::None => "none",
            PenaltyFamily::Ridge => "ridge",
            PenaltyFamily::Lasso => "lasso",
            PenaltyFamily::ElasticNet => "elastic_net",
            PenaltyFamily::Covridge => "covridge",
            PenaltyFamily::Sparridge => "sparridge",
        }
    }

    pub fn parse(name: &str) -> Option<PenaltyFamily> {
        let lowered: Vec<u8> = name
            .bytes()
            .filter(|b| *b != b'_' && *b != b'-')
            .map(|b| b.to_ascii_lowercase())
            .collect();
        match lowered.as_slice() {
            b"none" | b"unregularized" => Some(PenaltyFamily::None),
            b"ridge" | b"l2" => Some(PenaltyFamily::Ridge),
            b"lasso" | b"l1" => Some(PenaltyFamily::Lasso),
            b"elasticnet" | b"en" => Some(PenaltyFamily::ElasticNet),
            b"covridge" => Some(PenaltyFamily::Covridge),
            b"sparridge" => Some(PenaltyFamily::Sparridge),
            _ => None,
        }
    }

    /// Number of tuning scalars.
    pub fn arity(self) -> usize {
        self.param_names().len()
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            PenaltyFamily::None => &[],
            PenaltyFamily::Ridge | PenaltyFamily::Lasso => &["lambda"],
            PenaltyFamily::ElasticNet => &["lambda", "alpha"],
            PenaltyFamily::Covridge => &["lambda1", "lambda2"],
            PenaltyFamily::Sparridge => &["lambda1", "gamma"],
        }
    }

    pub fn needs_gram(self) -> bool {
        matches!(self, PenaltyFamily::Covridge | PenaltyFamily::Sparridge)
    }

    /// Builds a validated config from `params` (in [`param_names`](Self::param_names) order).
    pub fn instantiate(self, params: &[f64], gram: Option<Arc<StabilizedGram>>) -> Result<PenaltyConfig> {
        if params.len() != self.arity() {
            return Err(Error::DimensionMismatch {
                context: "penalty parameters",
                expected: self.arity(),
                found: params.len(),
            });
        }
        let need_gram = || gram.clone().ok_or_else(|| Error::invalid("gram", "this penalty needs a Gram matrix"));
        let config = match self {
            PenaltyFamily::None => PenaltyConfig::None,
            PenaltyFamily::Ridge => PenaltyConfig::Ridge { lambda: params[0] },
            PenaltyFamily::Lasso => PenaltyConfig::Lasso { lambda: params[0] },
            PenaltyFamily::ElasticNet => PenaltyConfig::ElasticNet {
                lambda: params[0],
                alpha: params[1],
            },
            PenaltyFamily::Covridge => PenaltyConfig::Covridge {
                lambda1: params[0],
                lambda2: params[1],
                gram: need_gram()?,
            },
            PenaltyFamily::Sparridge => PenaltyConfig::Sparridge {
                lambda1: params[0],
                gamma: params[1],
                gram: need_gram()?,
            },
        };
        config.validate()?;
        Ok(config)
    }
}

impl fmt::Display for PenaltyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub enum PenaltyConfig {
    None,
    Ridge { lambda: f64 },
    Lasso { lambda: f64 },
    ElasticNet { lambda: f64, alpha: f64 },
    Covridge { lambda1: f64, lambda2: f64, gram: Arc<StabilizedGram> },
    Sparridge { lambda1: f64, gamma: f64, gram: Arc<StabilizedGram> },
}

fn check_scalar(name: &'static str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::invalid(name, "must be finite and non-negative"));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn l1(w: &DMatrix<f64>) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

fn sign_matrix(w: &DMatrix<f64>) -> DMatrix<f64> {
    w.map(sign)
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PenaltyConfig::None => Ok(()),
            PenaltyConfig::Ridge { lambda } | PenaltyConfig::Lasso { lambda } => check_scalar("lambda", lambda),
            PenaltyConfig::ElasticNet { lambda, alpha } => {
                check_scalar("lambda", lambda)?;
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(Error::invalid("alpha", "must lie in [0, 1]"));
                }
                Ok(())
            }
            PenaltyConfig::Covridge { lambda1, lambda2, .. } => {
                check_scalar("lambda1", lambda1)?;
                check_scalar("lambda2", lambda2)
            }
            PenaltyConfig::Sparridge { lambda1, gamma, .. } => {
                check_scalar("lambda1", lambda1)?;
                check_scalar("gamma", gamma)
            }
        }
    }

    pub fn family(&self) -> PenaltyFamily {
        match self {
            PenaltyConfig::None => PenaltyFamily::None,
            PenaltyConfig::Ridge { .. } => PenaltyFamily::Ridge,
            PenaltyConfig::Lasso { .. } => PenaltyFamily::Lasso,
            PenaltyConfig::ElasticNet { .. } => PenaltyFamily::ElasticNet,
            PenaltyConfig::Covridge { .. } => PenaltyFamily::Covridge,
            PenaltyConfig::Sparridge { .. } => PenaltyFamily::Sparridge,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            PenaltyConfig::None => Vec::new(),
            PenaltyConfig::Ridge { lambda } | PenaltyConfig::Lasso { lambda } => alloc::vec![lambda],
            PenaltyConfig::ElasticNet { lambda, alpha } => alloc::vec![lambda, alpha],
            PenaltyConfig::Covridge { lambda1, lambda2, .. } => alloc::vec![lambda1, lambda2],
            PenaltyConfig::Sparridge { lambda1, gamma, .. } => alloc::vec![lambda1, gamma],
        }
    }

    pub fn gram(&self) -> Option<&Arc<StabilizedGram>> {
        match self {
            PenaltyConfig::Covridge { gram, .. } | PenaltyConfig::Sparridge { gram, .. } => Some(gram),
            _ => None,
        }
    }

    /// Same family and scalars with a different Gram matrix.
    pub fn with_gram(&self, new: Arc<StabilizedGram>) -> PenaltyConfig {
        match *self {
            PenaltyConfig::Covridge { lambda1, lambda2, .. } => PenaltyConfig::Covridge {
                lambda1,
                lambda2,
                gram: new,
            },
            PenaltyConfig::Sparridge { lambda1, gamma, .. } => PenaltyConfig::Sparridge {
                lambda1,
                gamma,
                gram: new,
            },
            _ => self.clone(),
        }
    }

    /// The Gram-free part of the penalty: Covridge keeps its `λ₂` ridge term,
    /// Sparridge its `γ` lasso term, and every other family is returned as is.
    pub fn companion(&self) -> PenaltyConfig {
        match *self {
            PenaltyConfig::Covridge { lambda2, .. } => PenaltyConfig::Ridge { lambda: lambda2 },
            PenaltyConfig::Sparridge { gamma, .. } => PenaltyConfig::Lasso { lambda: gamma },
            _ => self.clone(),
        }
    }

    fn check_dims(&self, w: &DMatrix<f64>) -> Result<()> {
        if let Some(g) = self.gram() {
            if g.dim() != w.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "penalty weight rows vs Gram dimension",
                    expected: g.dim(),
                    found: w.nrows(),
                });
            }
        }
        Ok(())
    }

    pub fn value(&self, w: &DMatrix<f64>) -> Result<f64> {
        self.check_dims(w)?;
        let v = match self {
            PenaltyConfig::None => 0.0,
            PenaltyConfig::Ridge { lambda } => lambda * w.norm_squared(),
            PenaltyConfig::Lasso { lambda } => lambda * l1(w),
            PenaltyConfig::ElasticNet { lambda, alpha } => {
                lambda * (alpha * l1(w) + (1.0 - alpha) / 2.0 * w.norm_squared())
            }
            PenaltyConfig::Covridge { lambda1, lambda2, gram } => {
                let mut v = lambda2 * w.norm_squared();
                if *lambda1 != 0.0 {
                    v += lambda1 * gram.quadratic(w);
                }
                v
            }
            PenaltyConfig::Sparridge { lambda1, gamma, gram } => {
                let mut v = gamma * l1(w);
                if *lambda1 != 0.0 {
                    v += lambda1 * gram.quadratic(w);
                }
                v
            }
        };
        Ok(v)
    }

    pub fn gradient(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dims(w)?;
        let g = match self {
            PenaltyConfig::None => DMatrix::zeros(w.nrows(), w.ncols()),
            PenaltyConfig::Ridge { lambda } => w * (2.0 * lambda),
            PenaltyConfig::Lasso { lambda } => sign_matrix(w) * *lambda,
            PenaltyConfig::ElasticNet { lambda, alpha } => {
                sign_matrix(w) * (lambda * alpha) + w * (lambda * (1.0 - alpha))
            }
            PenaltyConfig::Covridge { lambda1, lambda2, gram } => {
                let mut g = w * (2.0 * lambda2);
                if *lambda1 != 0.0 {
                    g += gram.apply(w) * (2.0 * lambda1);
                }
                g
            }
            PenaltyConfig::Sparridge { lambda1, gamma, gram } => {
                let mut g = sign_matrix(w) * *gamma;
                if *lambda1 != 0.0 {
                    g += gram.apply(w) * (2.0 * lambda1);
                }
                g
            }
        };
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContourBasis {
    /// Coordinates are the raw weight entries; Gram penalties use `C_δ` as given.
    Canonical,
    /// Coordinates are eigen-coordinates of `C_δ`, axis 1 along the
    /// lowest-variance direction and axis 2 along the highest.
    Eigen,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn square(lo: f64, hi: f64, resolution: usize) -> Self {
        GridSpec {
            x_range: (lo, hi),
            y_range: (lo, hi),
            nx: resolution,
            ny: resolution,
        }
    }
}

fn axis(range: (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return alloc::vec![range.0];
    }
    // Weighted endpoints keep a range symmetric about zero exactly mirrored.
    let m = (n - 1) as f64;
    (0..n)
        .map(|i| (range.0 * (m - i as f64) + range.1 * i as f64) / m)
        .collect()
}

/// Penalty values over a 2-D weight slice; `values[(iy, ix)]` is the value at `(xs[ix], ys[iy])`.
#[derive(Debug, Clone)]
pub struct ContourValues {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: DMatrix<f64>,
}

/// Evaluates `config` on every point `(w₁, w₂)` of `grid`, treating the point
/// as a `2 × 1` weight matrix.
pub fn contour_grid(config: &PenaltyConfig, grid: &GridSpec, basis: ContourBasis) -> Result<ContourValues> {
    if grid.nx == 0 || grid.ny == 0 {
        return Err(Error::invalid("grid", "resolution must be at least 1 along each axis"));
    }
    let ordered = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
    if !ordered(grid.x_range) || !ordered(grid.y_range) {
        return Err(Error::invalid("grid", "axis ranges must be finite with min <= max"));
    }
    if let Some(g) = config.gram() {
        if g.dim() != 2 {
            return Err(Error::DimensionMismatch {
                context: "contour Gram dimension",
                expected: 2,
                found: g.dim(),
            });
        }
    }
    let effective = match (basis, config.gram()) {
        (ContourBasis::Eigen, Some(g)) => config.with_gram(Arc::new(g.eigenbasis_ascending())),
        _ => config.clone(),
    };
    let xs = axis(grid.x_range, grid.nx);
    let ys = axis(grid.y_range, grid.ny);
    let mut values = DMatrix::zeros(grid.ny, grid.nx);
    let mut point = DMatrix::zeros(2, 1);
    for (iy, &y) in ys.iter().enumerate() {
        for (ix, &x) in xs.iter().enumerate() {
            point[(0, 0)] = x;
            point[(1, 0)] = y;
            values[(iy, ix)] = effective.value(&point)?;
        }
    }
    Ok(ContourValues { xs, ys, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gram::build_gram;
    use crate::rng::stream_rng;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn diag_gram(c_delta: [f64; 2], delta: f64) -> Arc<StabilizedGram> {
        let c_n = DMatrix::from_row_slice(2, 2, &[c_delta[0] - delta, 0.0, 0.0, c_delta[1] - delta]);
        Arc::new(StabilizedGram::from_gram_matrix(c_n, delta).unwrap())
    }

    #[test]
    fn covridge_reduces_to_half_frobenius() {
        let g = diag_gram([2.0, 3.0], 0.1);
        let p = PenaltyFamily::Covridge.instantiate(&[0.0, 0.5], Some(g)).unwrap();
        assert_eq!(p.value(&DMatrix::from_element(2, 2, 1.0)).unwrap(), 2.0);
    }

    #[test]
    fn covridge_quadratic_by_hand() {
        let g = diag_gram([2.0, 3.0], 0.1);
        let p = PenaltyFamily::Covridge.instantiate(&[1.0, 0.0], Some(g)).unwrap();
        let w = DMatrix::identity(2, 2);
        assert!((p.value(&w).unwrap() - 5.0).abs() < 1e-12);
        let grad = p.gradient(&w).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 6.0]);
        assert!((grad - expected).amax() < 1e-12);
    }

    #[test]
    fn sparridge_reduces_to_l1() {
        let g = diag_gram([2.0, 3.0], 0.1);
        let p = PenaltyFamily::Sparridge.instantiate(&[0.0, 0.1], Some(g)).unwrap();
        let w = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.0, 3.0]);
        assert!((p.value(&w).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn ridge_and_lasso_gradients() {
        let r = PenaltyConfig::Ridge { lambda: 0.5 };
        assert_eq!(r.gradient(&DMatrix::from_element(1, 1, 2.0)).unwrap()[(0, 0)], 2.0);
        let l = PenaltyConfig::Lasso { lambda: 1.0 };
        let g = l.gradient(&DMatrix::from_row_slice(1, 2, &[0.0, -3.0])).unwrap();
        assert_eq!(g.as_slice(), &[0.0, -1.0]);
    }

    #[test]
    fn elastic_net_uses_half_on_l2_part() {
        let p = PenaltyConfig::ElasticNet { lambda: 2.0, alpha: 0.25 };
        let w = DMatrix::from_row_slice(1, 2, &[1.0, -2.0]);
        // 2 * (0.25 * 3 + 0.75 / 2 * 5)
        assert!((p.value(&w).unwrap() - 5.25).abs() < 1e-15);
        let g = p.gradient(&w).unwrap();
        assert!((g[(0, 0)] - (0.5 + 1.5)).abs() < 1e-15);
        assert!((g[(0, 1)] - (-0.5 - 3.0)).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = PenaltyFamily::Covridge.instantiate(&[1.0, 1.0], Some(diag_gram([1.0, 1.0], 0.1))).unwrap();
        assert!(p.value(&DMatrix::zeros(3, 1)).is_err());
        assert!(p.gradient(&DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn instantiate_validates() {
        assert!(PenaltyFamily::Ridge.instantiate(&[-1.0], None).is_err());
        assert!(PenaltyFamily::ElasticNet.instantiate(&[1.0, 1.5], None).is_err());
        assert!(PenaltyFamily::Covridge.instantiate(&[1.0, 1.0], None).is_err());
        assert!(PenaltyFamily::Lasso.instantiate(&[1.0, 2.0], None).is_err());
        assert_eq!(PenaltyFamily::parse("Elastic-Net"), Some(PenaltyFamily::ElasticNet));
    }

    #[test]
    fn contour_origin_symmetry_and_anisotropy() {
        let grid = GridSpec::square(-2.0, 2.0, 5);
        let ridge = contour_grid(&PenaltyConfig::Ridge { lambda: 1.0 }, &grid, ContourBasis::Canonical).unwrap();
        assert_eq!(ridge.values[(2, 2)], 0.0);
        assert_eq!(ridge.values, ridge.values.transpose());

        let cov = PenaltyFamily::Covridge
            .instantiate(&[1.0, 0.0], Some(diag_gram([3.0, 1.0], 0.1)))
            .unwrap();
        let grid = GridSpec::square(0.0, 1.0, 2);
        let c = contour_grid(&cov, &grid, ContourBasis::Eigen).unwrap();
        // values[(iy, ix)]: (x=1, y=0) -> [0][1], (x=0, y=1) -> [1][0]
        let ratio = c.values[(1, 0)] / c.values[(0, 1)];
        assert!((ratio - 3.0).abs() < 1e-12);
    }

    #[test]
    fn contour_rejects_empty_grid() {
        let grid = GridSpec::square(-1.0, 1.0, 0);
        assert!(contour_grid(&PenaltyConfig::None, &grid, ContourBasis::Canonical).is_err());
    }

    fn random_gram(seed: u64, p: usize) -> Arc<StabilizedGram> {
        let mut rng = stream_rng(seed, 9);
        let z: Vec<f64> = (0..30).map(|_| rng.random::<f64>() - 0.5).collect();
        let h = DMatrix::from_fn(30, p, |i, _| z[i] + rng.random::<f64>() - 0.5);
        Arc::new(build_gram(&h, 0.01).unwrap())
    }

    fn all_configs(seed: u64, p: usize) -> Vec<PenaltyConfig> {
        let g = random_gram(seed, p);
        vec![
            PenaltyConfig::None,
            PenaltyConfig::Ridge { lambda: 0.3 },
            PenaltyConfig::Lasso { lambda: 0.2 },
            PenaltyConfig::ElasticNet { lambda: 0.4, alpha: 0.6 },
            PenaltyConfig::Covridge { lambda1: 0.7, lambda2: 0.2, gram: g.clone() },
            PenaltyConfig::Sparridge { lambda1: 0.5, gamma: 0.3, gram: g },
        ]
    }

    fn random_w(rng: &mut crate::rng::Rng, p: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(p, d, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    proptest! {
        #[test]
        fn reduction_identities_are_exact(seed in any::<u64>(), lambda in 0.0f64..2.0) {
            let mut rng = stream_rng(seed, 0);
            let w = random_w(&mut rng, 4, 3);
            let g = random_gram(seed, 4);
            let cov = PenaltyConfig::Covridge { lambda1: 0.0, lambda2: lambda, gram: g.clone() };
            let ridge = PenaltyConfig::Ridge { lambda };
            prop_assert_eq!(cov.value(&w).unwrap(), ridge.value(&w).unwrap());
            prop_assert_eq!(cov.gradient(&w).unwrap(), ridge.gradient(&w).unwrap());
            let spar = PenaltyConfig::Sparridge { lambda1: 0.0, gamma: lambda, gram: g };
            let lasso = PenaltyConfig::Lasso { lambda };
            prop_assert_eq!(spar.value(&w).unwrap(), lasso.value(&w).unwrap());
            prop_assert_eq!(spar.gradient(&w).unwrap(), lasso.gradient(&w).unwrap());
        }

        #[test]
        fn non_negative_and_zero_only_at_origin(seed in any::<u64>()) {
            let mut rng = stream_rng(seed, 1);
            let w = random_w(&mut rng, 3, 2);
            for c in all_configs(seed, 3) {
                let v = c.value(&w).unwrap();
                prop_assert!(v >= 0.0);
                prop_assert_eq!(c.value(&DMatrix::zeros(3, 2)).unwrap(), 0.0);
                if c.family() != PenaltyFamily::None {
                    prop_assert!(v > 0.0);
                }
            }
        }

        #[test]
        fn convexity_spot_check(seed in any::<u64>(), t in 0.01f64..0.99) {
            let mut rng = stream_rng(seed, 2);
            let a = random_w(&mut rng, 3, 2);
            let b = random_w(&mut rng, 3, 2);
            let mid = &a * t + &b * (1.0 - t);
            for c in all_configs(seed, 3) {
                let lhs = c.value(&mid).unwrap();
                let rhs = t * c.value(&a).unwrap() + (1.0 - t) * c.value(&b).unwrap();
                prop_assert!(lhs <= rhs + 1e-10);
            }
        }

        #[test]
        fn covridge_eigen_decomposition(seed in any::<u64>(), p in 1usize..8) {
            let g = random_gram(seed, p);
            let mut rng = stream_rng(seed, 3);
            let w = random_w(&mut rng, p, 2);
            let (l1, l2) = (0.8, 0.3);
            let cov = PenaltyConfig::Covridge { lambda1: l1, lambda2: l2, gram: g.clone() };
            let rot = g.eigenvectors().transpose() * &w;
            let expected: f64 = (0..p).map(|i| (l1 * g.eigenvalues()[i] + l2) * rot.row(i).norm_squared()).sum();
            let v = cov.value(&w).unwrap();
            prop_assert!((v - expected).abs() <= 1e-10 * expected);
        }
    }
}
