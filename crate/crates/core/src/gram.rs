//! The stabilized empirical Gram matrix `C_δ = HᵀH/n + δI`.
//!
//! `H` is any `n × p` representation of the training rows: standardized input
//! features, or post-activation values of a hidden layer. The spectral pair
//! `C_δ = U diag(μᵢ + δ) Uᵀ` and the symmetric root `C_δ^{1/2}` are computed on
//! first use, because the training loop only ever needs products `C_δ W`.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::boxed::Box;

use nalgebra::{DMatrix, DVector};
use once_cell::race::OnceBox;

use crate::linalg::{symmetric_eigen_desc, symmetrize};
use crate::{Error, Result};

/// Default ridge stabilization when none is configured.
pub const DEFAULT_DELTA: f64 = 1e-3;
/// Eigenvalues of `C_n` above `-EIGEN_CLIP` are treated as round-off and clipped to 0.
pub const EIGEN_CLIP: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Spectrum {
    /// `μᵢ + δ`, non-increasing.
    pub eigenvalues: DVector<f64>,
    /// Orthogonal `U`; column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: DMatrix<f64>,
    /// `U diag(√(μᵢ + δ)) Uᵀ`.
    pub sqrt: DMatrix<f64>,
}

#[derive(Debug)]
pub struct StabilizedGram {
    c_n: DMatrix<f64>,
    delta: f64,
    c_delta: DMatrix<f64>,
    /// `H/√n`, kept when `n < p` so that `C_n W` costs `O(npd)` instead of `O(p²d)`.
    factor: Option<DMatrix<f64>>,
    spectrum: OnceBox<Spectrum>,
}

impl Clone for StabilizedGram {
    fn clone(&self) -> Self {
        let spectrum = OnceBox::new();
        if let Some(s) = self.spectrum.get() {
            let _ = spectrum.set(Box::new(s.clone()));
        }
        StabilizedGram {
            c_n: self.c_n.clone(),
            delta: self.delta,
            c_delta: self.c_delta.clone(),
            factor: self.factor.clone(),
            spectrum,
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidDelta(delta));
    }
    Ok(())
}

/// Builds `C_n = HᵀH/n` and `C_δ = C_n + δI` from an `n × p` representation.
pub fn build_gram(representation: &DMatrix<f64>, delta: f64) -> Result<StabilizedGram> {
    check_delta(delta)?;
    let (n, p) = representation.shape();
    if n == 0 || p == 0 {
        return Err(Error::invalid("representation", "need at least one row and one column"));
    }
    for j in 0..p {
        for i in 0..n {
            if !representation[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    let c_n = symmetrize(&(representation.tr_mul(representation) / n as f64));
    let factor = (n < p).then(|| representation / (n as f64).sqrt());
    Ok(StabilizedGram::assemble(c_n, delta, factor))
}

impl StabilizedGram {
    /// Stabilizes an already-formed symmetric PSD matrix `C_n`.
    ///
    /// The spectrum is computed eagerly so that a matrix that is not PSD is
    /// rejected here.
    pub fn from_gram_matrix(c_n: DMatrix<f64>, delta: f64) -> Result<StabilizedGram> {
        check_delta(delta)?;
        if !c_n.is_square() || c_n.nrows() == 0 {
            return Err(Error::invalid("c_n", "must be a non-empty square matrix"));
        }
        if let Some((idx, _)) = c_n.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let p = c_n.nrows();
            return Err(Error::NonFinite { row: idx % p, col: idx / p });
        }
        let asym = (&c_n - c_n.transpose()).amax();
        if asym > 1e-10 * c_n.amax().max(1.0) {
            return Err(Error::invalid("c_n", "matrix is not symmetric"));
        }
        let (raw, _) = symmetric_eigen_desc(&c_n);
        let min = raw.min();
        if min < -EIGEN_CLIP * c_n.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        let gram = StabilizedGram::assemble(symmetrize(&c_n), delta, None);
        gram.spectrum();
        Ok(gram)
    }

    fn assemble(c_n: DMatrix<f64>, delta: f64, factor: Option<DMatrix<f64>>) -> StabilizedGram {
        let p = c_n.nrows();
        let c_delta = &c_n + DMatrix::<f64>::identity(p, p) * delta;
        StabilizedGram {
            c_n,
            delta,
            c_delta,
            factor,
            spectrum: OnceBox::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.c_n.nrows()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn c_n(&self) -> &DMatrix<f64> {
        &self.c_n
    }

    pub fn c_delta(&self) -> &DMatrix<f64> {
        &self.c_delta
    }

    pub fn spectrum(&self) -> &Spectrum {
        self.spectrum.get_or_init(|| {
            let (raw, vectors) = symmetric_eigen_desc(&self.c_n);
            let eigenvalues = raw.map(|mu| mu.max(0.0) + self.delta);
            let root = DMatrix::from_diagonal(&eigenvalues.map(|v| v.sqrt()));
            let sqrt = symmetrize(&(&vectors * root * vectors.transpose()));
            Box::new(Spectrum {
                eigenvalues,
                eigenvectors: vectors,
                sqrt,
            })
        })
    }

    /// `μᵢ + δ`, non-increasing.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.spectrum().eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.spectrum().eigenvectors
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.spectrum().sqrt
    }

    /// `C_δ W` for a `p × d` matrix `W`.
    pub fn apply(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            Some(f) => {
                let mut out = f.tr_mul(&(f * w));
                out += w * self.delta;
                out
            }
            None => &self.c_delta * w,
        }
    }

    /// `tr(Wᵀ C_δ W) = ‖C_δ^{1/2} W‖_F²`.
    pub fn quadratic(&self, w: &DMatrix<f64>) -> f64 {
        w.dot(&self.apply(w))
    }

    /// The same stabilized matrix expressed in its own eigenbasis with the
    /// eigenvalues in ascending order: `C_n` becomes `diag(μ_min, …, μ_max)`.
    pub fn eigenbasis_ascending(&self) -> StabilizedGram {
        let mu = self.eigenvalues().map(|v| v - self.delta);
        let ascending = DVector::from_iterator(mu.len(), mu.iter().rev().copied());
        let gram = StabilizedGram::assemble(DMatrix::from_diagonal(&ascending), self.delta, None);
        gram.spectrum();
        gram
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn identity_representation() {
        let g = build_gram(&DMatrix::identity(2, 2), 0.1).unwrap();
        assert!((g.c_n() - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
        assert!((g.c_delta() - DMatrix::identity(2, 2) * 0.6).amax() < 1e-15);
        assert!((g.sqrt() - DMatrix::identity(2, 2) * 0.6f64.sqrt()).amax() < 1e-12);
    }

    #[test]
    fn rank_one_representation() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let g = build_gram(&h, 0.1).unwrap();
        let ev = g.eigenvalues();
        assert!((ev[0] - 2.1).abs() < 1e-12);
        assert!((ev[1] - 0.1).abs() < 1e-12);
        let raw = ev.map(|v| v - 0.1);
        assert!((raw[0] - 2.0).abs() < 1e-12 && raw[1].abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_delta_and_non_finite() {
        let h = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let err = build_gram(&h, 0.0).unwrap_err();
        assert!(alloc::format!("{err}").contains("delta must be positive"));
        assert!(build_gram(&h, -1.0).is_err());
        let bad = DMatrix::from_row_slice(1, 2, &[f64::NAN, 4.0]);
        assert!(matches!(build_gram(&bad, 0.1), Err(Error::NonFinite { row: 0, col: 0 })));
    }

    #[test]
    fn wide_factor_matches_dense_product() {
        let mut rng = stream_rng(3, 0);
        let h = DMatrix::from_fn(4, 9, |_, _| rng.random::<f64>() - 0.5);
        let w = DMatrix::from_fn(9, 3, |_, _| rng.random::<f64>() - 0.5);
        let g = build_gram(&h, 0.05).unwrap();
        assert!(g.factor.is_some());
        assert!((g.apply(&w) - g.c_delta() * &w).amax() < 1e-13);
    }

    #[test]
    fn from_gram_matrix_rejects_indefinite() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            StabilizedGram::from_gram_matrix(c, 0.1),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn eigenbasis_view_is_ascending_diagonal() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let g = StabilizedGram::from_gram_matrix(c, 0.5).unwrap();
        let e = g.eigenbasis_ascending();
        assert!((e.c_delta()[(0, 0)] - 1.5).abs() < 1e-12);
        assert!((e.c_delta()[(1, 1)] - 3.5).abs() < 1e-12);
        assert_eq!(e.c_delta()[(0, 1)], 0.0);
    }

    fn random_h(seed: u64, n: usize, p: usize) -> DMatrix<f64> {
        let mut rng = stream_rng(seed, 1);
        let z: DVector<f64> = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        DMatrix::from_fn(n, p, |i, _| z[i] + rng.random::<f64>() - 0.5)
    }

    proptest! {
        #[test]
        fn spectral_invariants(seed in any::<u64>(), n in 1usize..30, p in 1usize..10, delta in 1e-4f64..2.0) {
            let g = build_gram(&random_h(seed, n, p), delta).unwrap();
            let s = g.sqrt();
            let rel = (s * s - g.c_delta()).norm() / g.c_delta().norm();
            prop_assert!(rel < 1e-8);
            let u = g.eigenvectors();
            prop_assert!((u.transpose() * u - DMatrix::identity(p, p)).amax() < 1e-10);
            prop_assert!(g.eigenvalues().min() >= delta - 1e-10);
            let ev = g.eigenvalues();
            prop_assert!(ev.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn rotation_identity(seed in any::<u64>(), n in 2usize..25, p in 1usize..10, d in 1usize..4) {
            let g = build_gram(&random_h(seed, n, p), 0.01).unwrap();
            let mut rng = stream_rng(seed, 2);
            let w = DMatrix::from_fn(p, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let rotated = g.eigenvectors().transpose() * &w;
            let weighted: f64 = (0..p).map(|i| g.eigenvalues()[i] * rotated.row(i).norm_squared()).sum();
            let direct = g.quadratic(&w);
            prop_assert!((direct - weighted).abs() <= 1e-10 * direct.abs().max(1e-300));
        }

        #[test]
        fn row_permutation_invariance(seed in any::<u64>(), n in 2usize..25, p in 1usize..8) {
            let h = random_h(seed, n, p);
            let mut rows: alloc::vec::Vec<usize> = (0..n).collect();
            rows.reverse();
            rows.rotate_left((seed % n as u64) as usize);
            let permuted = crate::linalg::select_rows(&h, &rows);
            let a = build_gram(&h, 0.1).unwrap();
            let b = build_gram(&permuted, 0.1).unwrap();
            prop_assert!((a.c_n() - b.c_n()).amax() < 1e-12);
        }
    }

    #[test]
    fn clone_keeps_spectrum() {
        let g = build_gram(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]), 0.1).unwrap();
        let _ = g.spectrum();
        let c = g.clone();
        assert!(c.spectrum.get().is_some());
        assert_eq!(c.eigenvalues(), g.eigenvalues());
    }
}
