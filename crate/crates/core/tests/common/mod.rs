//! Reference computations that share no code path with the library solvers.

#![allow(dead_code)]

use geomreg_core::rng::{derive_seed, stream_rng, Rng};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Entries uniform in `[-1, 1]` with magnitude at least `floor`.
pub fn bounded_matrix(rng: &mut Rng, rows: usize, cols: usize, floor: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let mag = rng.random_range(floor..=1.0);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

/// Central differences of `f` at `w`, entry by entry.
pub fn central_difference(f: impl Fn(&DMatrix<f64>) -> f64, w: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(w.nrows(), w.ncols());
    let mut probe = w.clone();
    for k in 0..w.len() {
        let v = w[k];
        probe[k] = v + h;
        let up = f(&probe);
        probe[k] = v - h;
        let down = f(&probe);
        probe[k] = v;
        g[k] = (up - down) / (2.0 * h);
    }
    g
}

/// `max|a − b| / max|b|`, zero when both vanish.
pub fn relative_max_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).amax();
    let scale = b.amax().max(a.amax());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: `(values, vectors)`
/// with eigenvectors as columns, unsorted.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let p = a.nrows();
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(p, p);
    for _sweep in 0..100 {
        let off: f64 = (0..p).flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[(i, j)] * m[(i, j)]).sum();
        if off < 1e-30 * m.norm_squared().max(1e-300) {
            break;
        }
        for i in 0..p {
            for j in i + 1..p {
                if m[(i, j)] == 0.0 {
                    continue;
                }
                let theta = (m[(j, j)] - m[(i, i)]) / (2.0 * m[(i, j)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..p {
                    let (mki, mkj) = (m[(k, i)], m[(k, j)]);
                    m[(k, i)] = c * mki - s * mkj;
                    m[(k, j)] = s * mki + c * mkj;
                }
                for k in 0..p {
                    let (mik, mjk) = (m[(i, k)], m[(j, k)]);
                    m[(i, k)] = c * mik - s * mjk;
                    m[(j, k)] = s * mik + c * mjk;
                }
                for k in 0..p {
                    let (vki, vkj) = (v[(k, i)], v[(k, j)]);
                    v[(k, i)] = c * vki - s * vkj;
                    v[(k, j)] = s * vki + c * vkj;
                }
            }
        }
    }
    ((0..p).map(|i| m[(i, i)]).collect(), v)
}

/// `Σⱼ (μⱼ + δ)‖uⱼᵀW‖²` with `(μⱼ, uⱼ)` the eigenpairs of `HᵀH/n`.
pub fn eigen_weighted_quadratic(h: &DMatrix<f64>, w: &DMatrix<f64>, delta: f64) -> f64 {
    let n = h.nrows() as f64;
    let p = h.ncols();
    let mut c = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            c[(i, j)] = (0..h.nrows()).map(|r| h[(r, i)] * h[(r, j)]).sum::<f64>() / n;
        }
    }
    let (mu, u) = jacobi_eigen(&c);
    (0..p)
        .map(|j| {
            let proj: f64 = (0..w.ncols())
                .map(|col| {
                    let s: f64 = (0..p).map(|r| u[(r, j)] * w[(r, col)]).sum();
                    s * s
                })
                .sum();
            (mu[j] + delta) * proj
        })
        .sum()
}

/// Random regression problem with `n ∈ [20, 200]`, `p ∈ [1, max_p]`.
pub fn random_regression(seed: u64, i: usize, max_p: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = stream_rng(derive_seed(seed, i as u64), 7);
    let n = rng.random_range(20..=200);
    let p = rng.random_range(1..=max_p);
    let x = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
    let w = DVector::from_fn(p, |_, _| normal(&mut rng));
    let y = DVector::from_fn(n, |r, _| (0..p).map(|j| x[(r, j)] * w[j]).sum::<f64>() + 0.5 * normal(&mut rng));
    (x, y)
}

/// `(XᵀX/n + δI)` built by explicit loops.
pub fn design_c_delta(x: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    let (n, p) = x.shape();
    DMatrix::from_fn(p, p, |i, j| {
        let s: f64 = (0..n).map(|r| x[(r, i)] * x[(r, j)]).sum::<f64>() / n as f64;
        if i == j {
            s + delta
        } else {
            s
        }
    })
}

/// Full-batch gradient descent on `(1/2n)‖y − Xw‖² + (λ₁/2)wᵀCw + (λ₂/2)‖w‖²`.
pub fn gradient_descent_covridge(x: &DMatrix<f64>, y: &DVector<f64>, c: &DMatrix<f64>, lambda1: f64, lambda2: f64) -> DVector<f64> {
    let (n, p) = x.shape();
    let xtx = DMatrix::from_fn(p, p, |i, j| (0..n).map(|r| x[(r, i)] * x[(r, j)]).sum::<f64>() / n as f64);
    let hess = &xtx + c * lambda1 + DMatrix::<f64>::identity(p, p) * lambda2;
    let lipschitz = (0..p).map(|i| (0..p).map(|j| hess[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / lipschitz;
    let xty = DVector::from_fn(p, |j, _| (0..n).map(|r| x[(r, j)] * y[r]).sum::<f64>() / n as f64);
    let mut w = DVector::zeros(p);
    for _ in 0..2_000_000 {
        let grad = DVector::from_fn(p, |j, _| (0..p).map(|k| hess[(j, k)] * w[k]).sum::<f64>() - xty[j]);
        let next = &w - grad * step;
        let moved = (&next - &w).amax();
        w = next;
        if moved < 1e-15 {
            break;
        }
    }
    w
}

/// `½wᵀAw − bᵀw + γ‖w‖₁`.
pub fn lasso_quadratic_objective(a: &DMatrix<f64>, b: &DVector<f64>, gamma: f64, w: &DVector<f64>) -> f64 {
    0.5 * w.dot(&(a * w)) - b.dot(w) + gamma * w.lp_norm(1)
}

/// Exact minimizer of `½wᵀAw − bᵀw + γ‖w‖₁` (`A` positive definite) by
/// enumerating every sign pattern in `{−1, 0, +1}ᵖ`.
pub fn brute_force_lasso_quadratic(a: &DMatrix<f64>, b: &DVector<f64>, gamma: f64) -> DVector<f64> {
    let p = b.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(p as u32) {
        let mut signs = vec![0i8; p];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = (c % 3) as i8 - 1;
            c /= 3;
        }
        let support: Vec<usize> = (0..p).filter(|&j| signs[j] != 0).collect();
        let mut w = DVector::zeros(p);
        if !support.is_empty() {
            let m = support.len();
            let sub = DMatrix::from_fn(m, m, |i, j| a[(support[i], support[j])]);
            let rhs = DVector::from_fn(m, |i, _| b[support[i]] - gamma * signs[support[i]] as f64);
            let Some(sol) = sub.lu().solve(&rhs) else { continue };
            if support.iter().zip(sol.iter()).any(|(&j, &v)| v * signs[j] as f64 <= 0.0) {
                continue;
            }
            for (&j, &v) in support.iter().zip(sol.iter()) {
                w[j] = v;
            }
        }
        let grad = a * &w - b;
        if (0..p).any(|j| signs[j] == 0 && grad[j].abs() > gamma * (1.0 + 1e-9) + 1e-12) {
            continue;
        }
        let obj = lasso_quadratic_objective(a, b, gamma, &w);
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, w));
        }
    }
    best.expect("a positive definite problem has a consistent sign pattern").1
}
