//! Penalized linear estimators.
//!
//! All objectives here use the `½` scaling
//!
//! ```text
//! Covridge:  (1/2n)‖y − Xw‖² + (λ₁/2) wᵀC_δw + (λ₂/2)‖w‖²
//! Sparridge: (1/2n)‖y − Xw‖² + (λ₁/2) wᵀC_δw + γ‖w‖₁
//! ```
//!
//! so the quadratic parts are half of the corresponding network penalty
//! values in [`crate::penalty`] (`λ₁ tr(WᵀC_δW)` there, `λ₁/2 wᵀC_δw` here).
//! With `Q_n = XᵀX/n` and `q_n = Xᵀy/n` the Covridge minimizer is
//! `ŵ = (Q_n + λ₁C_δ + λ₂I)⁻¹ q_n`.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::gram::{build_gram, StabilizedGram};
use crate::linalg::{max_eigenvalue, relative_frobenius, symmetrize, SpdFactor};
use crate::rng::{derive_seed, stream_rng};
use crate::{Error, Executor, Result};

/// Coefficients with magnitude below this are reported as exact zeros.
pub const ZERO_SNAP: f64 = 1e-12;
/// `|w⋆ⱼ|` above this puts `j` in the active set of the limit criterion.
pub const ACTIVE_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LinearProblem {
    x: DMatrix<f64>,
    y: DVector<f64>,
    gram: Arc<StabilizedGram>,
    q_n: DMatrix<f64>,
    q_vec: DVector<f64>,
}

impl LinearProblem {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, gram: Arc<StabilizedGram>) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::invalid("x", "design must have at least one row and column"));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                context: "response length vs design rows",
                expected: n,
                found: y.len(),
            });
        }
        if gram.dim() != p {
            return Err(Error::DimensionMismatch {
                context: "Gram dimension vs design columns",
                expected: p,
                found: gram.dim(),
            });
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: k % n, col: k / n });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, col: p });
        }
        let inv_n = 1.0 / n as f64;
        let q_n = symmetrize(&(x.tr_mul(&x) * inv_n));
        let q_vec = x.tr_mul(&y) * inv_n;
        Ok(LinearProblem { x, y, gram, q_n, q_vec })
    }

    /// Uses the design itself as the Gram representation (`H = X`).
    pub fn with_design_gram(x: DMatrix<f64>, y: DVector<f64>, delta: f64) -> Result<Self> {
        let gram = Arc::new(build_gram(&x, delta)?);
        LinearProblem::new(x, y, gram)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn gram(&self) -> &StabilizedGram {
        &self.gram
    }

    pub fn q_n(&self) -> &DMatrix<f64> {
        &self.q_n
    }

    pub fn q_vec(&self) -> &DVector<f64> {
        &self.q_vec
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// `Q_n + λ₁C_δ + λ₂I`.
    pub fn hessian(&self, lambda1: f64, lambda2: f64) -> DMatrix<f64> {
        hessian(&self.q_n, self.gram.c_delta(), lambda1, lambda2)
    }

    fn check_len(&self, w: &DVector<f64>, context: &'static str) -> Result<()> {
        if w.len() != self.p() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.p(),
                found: w.len(),
            });
        }
        Ok(())
    }

    /// `(1/2n)‖y − Xw‖²`.
    pub fn half_mse(&self, w: &DVector<f64>) -> f64 {
        (&self.y - &self.x * w).norm_squared() / (2.0 * self.n() as f64)
    }
}

fn hessian(q: &DMatrix<f64>, c: &DMatrix<f64>, lambda1: f64, lambda2: f64) -> DMatrix<f64> {
    let mut h = q + c * lambda1;
    for i in 0..h.nrows() {
        h[(i, i)] += lambda2;
    }
    h
}

fn check_scalars(pairs: &[(&'static str, f64)]) -> Result<()> {
    for &(name, v) in pairs {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid(name, "must be finite and non-negative"));
        }
    }
    Ok(())
}

/// Covridge objective `(1/2n)‖y − Xw‖² + (λ₁/2)wᵀC_δw + (λ₂/2)‖w‖²`.
pub fn covridge_objective(problem: &LinearProblem, lambda1: f64, lambda2: f64, w: &DVector<f64>) -> Result<f64> {
    problem.check_len(w, "coefficient length")?;
    let cw = problem.gram.c_delta() * w;
    Ok(problem.half_mse(w) + 0.5 * lambda1 * w.dot(&cw) + 0.5 * lambda2 * w.norm_squared())
}

/// `ŵ = (Q_n + λ₁C_δ + λ₂I)⁻¹ q_n`, via a checked Cholesky solve.
pub fn covridge_closed_form(problem: &LinearProblem, lambda1: f64, lambda2: f64) -> Result<DVector<f64>> {
    check_scalars(&[("lambda1", lambda1), ("lambda2", lambda2)])?;
    let factor = SpdFactor::new(&problem.hessian(lambda1, lambda2))?;
    Ok(factor.solve(&problem.q_vec))
}

/// Shrunken target `w°ₙ = (Q_n + λ₁C_δ + λ₂I)⁻¹ Q_n w₀`.
pub fn shrunken_target(problem: &LinearProblem, lambda1: f64, lambda2: f64, w0: &DVector<f64>) -> Result<DVector<f64>> {
    check_scalars(&[("lambda1", lambda1), ("lambda2", lambda2)])?;
    problem.check_len(w0, "true coefficient length")?;
    let factor = SpdFactor::new(&problem.hessian(lambda1, lambda2))?;
    Ok(factor.solve(&(&problem.q_n * w0)))
}

/// Sandwich covariance `σ² H⁻¹ Q H⁻¹` with `H = Q + λ₁C_δ + λ₂I`.
pub fn covridge_asym_cov(
    q: &DMatrix<f64>,
    c_delta: &DMatrix<f64>,
    lambda1: f64,
    lambda2: f64,
    sigma2: f64,
) -> Result<DMatrix<f64>> {
    check_scalars(&[("lambda1", lambda1), ("lambda2", lambda2), ("sigma2", sigma2)])?;
    if q.shape() != c_delta.shape() || !q.is_square() {
        return Err(Error::DimensionMismatch {
            context: "Q vs C_delta shape",
            expected: q.nrows(),
            found: c_delta.nrows(),
        });
    }
    let factor = SpdFactor::new(&hessian(q, c_delta, lambda1, lambda2))?;
    let h_inv_q = factor.solve_matrix(q);
    let sandwich = factor.solve_matrix(&h_inv_q.transpose());
    Ok(symmetrize(&sandwich) * sigma2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearMethod {
    Covridge,
    Sparridge,
}

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub w_hat: DVector<f64>,
    /// Shrunken target, when the true coefficients were supplied.
    pub w_circ: Option<DVector<f64>>,
    /// Limit target under a population `Q`, when one was supplied.
    pub w_star: Option<DVector<f64>>,
    /// Sandwich covariance, when a noise variance was supplied (Covridge only).
    pub asym_cov: Option<DMatrix<f64>>,
    pub method: LinearMethod,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each proximal step, when tracing was requested.
    pub objective_trace: Vec<f64>,
}

/// Inference inputs for [`covridge_fit`].
#[derive(Debug, Clone)]
pub struct Truth<'a> {
    pub w0: &'a DVector<f64>,
    pub sigma2: f64,
    /// Population `Q`; `Q_n` is used when absent.
    pub population_q: Option<&'a DMatrix<f64>>,
}

/// Closed-form Covridge fit with optional shrunken target and sandwich covariance.
pub fn covridge_fit(problem: &LinearProblem, lambda1: f64, lambda2: f64, truth: Option<Truth<'_>>) -> Result<LinearFit> {
    let w_hat = covridge_closed_form(problem, lambda1, lambda2)?;
    let (mut w_circ, mut w_star, mut asym_cov) = (None, None, None);
    if let Some(t) = truth {
        w_circ = Some(shrunken_target(problem, lambda1, lambda2, t.w0)?);
        let q = t.population_q.unwrap_or(&problem.q_n);
        if let Some(pq) = t.population_q {
            let f = SpdFactor::new(&hessian(pq, problem.gram.c_delta(), lambda1, lambda2))?;
            w_star = Some(f.solve(&(pq * t.w0)));
        }
        asym_cov = Some(covridge_asym_cov(q, problem.gram.c_delta(), lambda1, lambda2, t.sigma2)?);
    }
    Ok(LinearFit {
        w_hat,
        w_circ,
        w_star,
        asym_cov,
        method: LinearMethod::Covridge,
        iterations: 0,
        converged: true,
        objective_trace: Vec::new(),
    })
}

/// `sign(z)·max(|z| − t, 0)`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Nesterov-accelerated steps (FISTA) instead of plain proximal gradient.
    pub accelerated: bool,
    /// Re-solve exactly on the detected support and keep the result when it
    /// satisfies the optimality conditions.
    pub polish: bool,
    pub trace: bool,
}

impl Default for ProxOptions {
    fn default() -> Self {
        ProxOptions {
            tol: 1e-10,
            max_iter: 100_000,
            accelerated: false,
            polish: true,
            trace: false,
        }
    }
}

/// Composite problem `½uᵀAu − bᵀu + γ Σ_{j∈F} |uⱼ|`, where `F` is the set of
/// coordinates flagged in `l1_mask`.
struct Composite<'a> {
    a: &'a DMatrix<f64>,
    b: DVector<f64>,
    gamma: f64,
    l1_mask: &'a [bool],
}

struct ProxOutcome {
    u: DVector<f64>,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

impl Composite<'_> {
    fn objective(&self, u: &DVector<f64>) -> f64 {
        let l1: f64 = u.iter().zip(self.l1_mask).filter(|(_, m)| **m).map(|(v, _)| v.abs()).sum();
        0.5 * u.dot(&(self.a * u)) - self.b.dot(u) + self.gamma * l1
    }

    fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        self.a * u - &self.b
    }

    fn prox(&self, v: &mut DVector<f64>, t: f64) {
        for (x, m) in v.iter_mut().zip(self.l1_mask) {
            if *m {
                *x = soft_threshold(*x, t);
            }
        }
    }

    /// Largest violation of the optimality conditions at `u`.
    fn kkt_residual(&self, u: &DVector<f64>) -> f64 {
        let g = self.gradient(u);
        let mut worst: f64 = 0.0;
        for j in 0..u.len() {
            let r = if !self.l1_mask[j] {
                g[j].abs()
            } else if u[j] == 0.0 {
                (g[j].abs() - self.gamma).max(0.0)
            } else {
                (g[j] + self.gamma * u[j].signum()).abs()
            };
            worst = worst.max(r);
        }
        worst
    }

    fn solve(&self, opts: &ProxOptions) -> Result<ProxOutcome> {
        let p = self.b.len();
        let lipschitz = max_eigenvalue(self.a);
        if !(lipschitz > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: lipschitz });
        }
        let step = 1.0 / lipschitz;
        let thresh = self.gamma * step;
        let mut u = DVector::zeros(p);
        let mut y = u.clone();
        let mut t_k: f64 = 1.0;
        let mut best = (self.objective(&u), u.clone());
        let mut trace = Vec::new();
        let mut iterations = 0;
        let mut converged = false;
        while iterations < opts.max_iter {
            iterations += 1;
            let base = if opts.accelerated { &y } else { &u };
            let mut next = base - self.gradient(base) * step;
            self.prox(&mut next, thresh);
            let change = (&next - &u).amax();
            if opts.accelerated {
                let t_next = (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt()) / 2.0;
                y = &next + (&next - &u) * ((t_k - 1.0) / t_next);
                t_k = t_next;
            }
            u = next;
            let obj = self.objective(&u);
            if opts.trace {
                trace.push(obj);
            }
            if obj <= best.0 {
                best = (obj, u.clone());
            }
            if change < opts.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            u = best.1;
        }
        if opts.polish {
            if let Some(polished) = self.polish(&u) {
                if self.kkt_residual(&polished) <= self.kkt_residual(&u) {
                    u = polished;
                }
            }
        }
        for v in u.iter_mut() {
            if v.abs() < ZERO_SNAP {
                *v = 0.0;
            }
        }
        Ok(ProxOutcome {
            u,
            iterations,
            converged,
            trace,
        })
    }

    /// Exact solve on the support of `u` with its signs fixed; `None` when
    /// the candidate changes sign or violates a zero coordinate's condition.
    fn polish(&self, u: &DVector<f64>) -> Option<DVector<f64>> {
        let support: Vec<usize> = (0..u.len()).filter(|&j| !self.l1_mask[j] || u[j] != 0.0).collect();
        let mut out = DVector::zeros(u.len());
        if !support.is_empty() {
            let a_ss = DMatrix::from_fn(support.len(), support.len(), |i, k| self.a[(support[i], support[k])]);
            let rhs = DVector::from_iterator(
                support.len(),
                support.iter().map(|&j| {
                    if self.l1_mask[j] {
                        self.b[j] - self.gamma * u[j].signum()
                    } else {
                        self.b[j]
                    }
                }),
            );
            let sol = SpdFactor::new(&a_ss).ok()?.solve(&rhs);
            for (i, &j) in support.iter().enumerate() {
                if self.l1_mask[j] && sol[i] * u[j] <= 0.0 {
                    return None;
                }
                out[j] = sol[i];
            }
        }
        let g = self.gradient(&out);
        let ok = (0..u.len()).all(|j| !self.l1_mask[j] || out[j] != 0.0 || g[j].abs() <= self.gamma * (1.0 + 1e-12));
        ok.then_some(out)
    }
}

/// Sparridge by proximal gradient with step `1/L`, `L = λ_max(Q_n + λ₁C_δ)`.
///
/// The iteration stops once successive iterates differ by less than `tol` in
/// max-norm. Coefficients below [`ZERO_SNAP`] are returned as exact zeros. When
/// `max_iter` is exhausted the best iterate is returned with `converged = false`.
pub fn sparridge_solve(problem: &LinearProblem, lambda1: f64, gamma: f64, tol: f64, max_iter: usize) -> Result<LinearFit> {
    sparridge_solve_with(
        problem,
        lambda1,
        gamma,
        &ProxOptions {
            tol,
            max_iter,
            ..ProxOptions::default()
        },
    )
}

pub fn sparridge_solve_with(problem: &LinearProblem, lambda1: f64, gamma: f64, opts: &ProxOptions) -> Result<LinearFit> {
    check_scalars(&[("lambda1", lambda1), ("gamma", gamma)])?;
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    let a = problem.hessian(lambda1, 0.0);
    let mask = alloc::vec![true; problem.p()];
    let comp = Composite {
        a: &a,
        b: problem.q_vec.clone(),
        gamma,
        l1_mask: &mask,
    };
    let out = comp.solve(opts)?;
    // The composite objective differs from the Sparridge one by the constant ‖y‖²/2n.
    let offset = problem.y.norm_squared() / (2.0 * problem.n() as f64);
    Ok(LinearFit {
        w_hat: out.u,
        w_circ: None,
        w_star: None,
        asym_cov: None,
        method: LinearMethod::Sparridge,
        iterations: out.iterations,
        converged: out.converged,
        objective_trace: out.trace.into_iter().map(|v| v + offset).collect(),
    })
}

/// Sparridge objective `(1/2n)‖y − Xw‖² + (λ₁/2)wᵀC_δw + γ‖w‖₁`.
pub fn sparridge_objective(problem: &LinearProblem, lambda1: f64, gamma: f64, w: &DVector<f64>) -> Result<f64> {
    problem.check_len(w, "coefficient length")?;
    let cw = problem.gram.c_delta() * w;
    Ok(problem.half_mse(w) + 0.5 * lambda1 * w.dot(&cw) + gamma * w.lp_norm(1))
}

/// Largest violation of the Sparridge optimality conditions at `w`:
/// `|gⱼ| ≤ γ` where `wⱼ = 0`, `gⱼ + γ sign(wⱼ) = 0` elsewhere, with `g` the
/// smooth-part gradient.
pub fn sparridge_kkt_residual(problem: &LinearProblem, lambda1: f64, gamma: f64, w: &DVector<f64>) -> Result<f64> {
    problem.check_len(w, "coefficient length")?;
    let a = problem.hessian(lambda1, 0.0);
    let mask = alloc::vec![true; problem.p()];
    Ok(Composite {
        a: &a,
        b: problem.q_vec.clone(),
        gamma,
        l1_mask: &mask,
    }
    .kkt_residual(w))
}

/// Minimizer of `Δ(u) = ½uᵀHu − uᵀZ + γ(Σ_{j∈A⋆} sign(w⋆ⱼ)uⱼ + Σ_{j∉A⋆}|uⱼ|)`
/// with `A⋆ = {j : |w⋆ⱼ| > 1e-10}`.
pub fn limit_criterion_minimize(h: &DMatrix<f64>, z: &DVector<f64>, gamma: f64, w_star: &DVector<f64>) -> Result<DVector<f64>> {
    let p = z.len();
    if h.shape() != (p, p) || w_star.len() != p {
        return Err(Error::DimensionMismatch {
            context: "limit criterion dimensions",
            expected: p,
            found: if h.nrows() != p { h.nrows() } else { w_star.len() },
        });
    }
    check_scalars(&[("gamma", gamma)])?;
    let factor = SpdFactor::new(h)?;
    if gamma == 0.0 {
        return Ok(factor.solve(z));
    }
    let active: Vec<bool> = w_star.iter().map(|v| v.abs() > ACTIVE_THRESHOLD).collect();
    let l1_mask: Vec<bool> = active.iter().map(|a| !a).collect();
    let b = DVector::from_fn(p, |j, _| {
        if active[j] {
            z[j] - gamma * w_star[j].signum()
        } else {
            z[j]
        }
    });
    if l1_mask.iter().all(|m| !m) {
        return Ok(factor.solve(&b));
    }
    let comp = Composite {
        a: h,
        b,
        gamma,
        l1_mask: &l1_mask,
    };
    Ok(comp
        .solve(&ProxOptions {
            tol: 1e-13,
            ..ProxOptions::default()
        })?
        .u)
}

/// Draws of `U* = argmin Δ(u)` with `Z ~ N(0, σ²Q)`, one per row.
pub fn sample_limit_law(
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    sigma2: f64,
    gamma: f64,
    w_star: &DVector<f64>,
    draws: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    check_scalars(&[("sigma2", sigma2)])?;
    let p = w_star.len();
    let (values, vectors) = crate::linalg::symmetric_eigen_desc(q);
    let root = &vectors * DMatrix::from_diagonal(&values.map(|v| (v.max(0.0) * sigma2).sqrt()));
    let mut out = DMatrix::zeros(draws, p);
    let mut rng = stream_rng(seed, 0);
    for r in 0..draws {
        let xi = DVector::from_fn(p, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let u = limit_criterion_minimize(h, &(&root * xi), gamma, w_star)?;
        out.set_row(r, &u.transpose());
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Theorem1Report {
    pub n: usize,
    pub p: usize,
    pub replications: usize,
    pub w_circ: DVector<f64>,
    /// Mean of `√n(ŵ − w°ₙ)` over replications.
    pub empirical_mean: DVector<f64>,
    /// Sample covariance (denominator `R − 1`) of `√n(ŵ − w°ₙ)`.
    pub empirical_cov: DMatrix<f64>,
    /// `σ² H⁻¹ Q_n H⁻¹`.
    pub theoretical_cov: DMatrix<f64>,
    /// `‖Σ̂ − Σ‖_F / ‖Σ‖_F`, absolute when `Σ = 0`.
    pub relative_frobenius_error: f64,
    /// `4 √Σⱼⱼ / √R` per coordinate.
    pub mean_bounds: DVector<f64>,
    /// `max_i ‖xᵢ‖² / n`, small when no row dominates the design.
    pub max_leverage: f64,
}

impl Theorem1Report {
    pub fn mean_within_bounds(&self) -> bool {
        self.empirical_mean.iter().zip(self.mean_bounds.iter()).all(|(m, b)| m.abs() <= *b)
    }

    pub fn passes(&self, cov_tolerance: f64) -> bool {
        self.relative_frobenius_error <= cov_tolerance && self.mean_within_bounds()
    }
}

/// Parameters of a fixed-design Monte Carlo check of the Covridge limit law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Setup {
    pub sigma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub delta: f64,
    pub replications: usize,
    pub seed: u64,
}

/// Simulates `y = Xw₀ + ε`, `ε ~ N(0, σ²)`, fits the closed form per replication
/// and compares the spread of `√n(ŵ − w°ₙ)` with the sandwich covariance.
///
/// The Gram matrix is built from the fixed design. Replication `r` draws its
/// noise from a generator seeded by `derive_seed(seed, r)`.
pub fn validate_theorem1<E: Executor>(design: &DMatrix<f64>, w0: &DVector<f64>, setup: &Theorem1Setup, exec: &E) -> Result<Theorem1Report> {
    let (n, p) = design.shape();
    if setup.replications < 2 {
        return Err(Error::invalid("replications", "need at least two replications"));
    }
    if !(setup.sigma.is_finite() && setup.sigma >= 0.0) {
        return Err(Error::invalid("sigma", "must be finite and non-negative"));
    }
    let y0 = design * w0;
    let problem = LinearProblem::with_design_gram(design.clone(), y0, setup.delta)?;
    problem.check_len(w0, "true coefficient length")?;
    let factor = SpdFactor::new(&problem.hessian(setup.lambda1, setup.lambda2))?;
    let qw0 = &problem.q_n * w0;
    let w_circ = factor.solve(&qw0);
    let theoretical_cov = covridge_asym_cov(&problem.q_n, problem.gram.c_delta(), setup.lambda1, setup.lambda2, setup.sigma * setup.sigma)?;
    let root_n = (n as f64).sqrt();
    let inv_n = 1.0 / n as f64;

    let draws: Vec<DVector<f64>> = exec.map(setup.replications, |r| {
        let mut rng = stream_rng(derive_seed(setup.seed, r as u64), 0);
        let eps = DVector::from_fn(n, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            setup.sigma * v
        });
        let q_vec = &qw0 + design.tr_mul(&eps) * inv_n;
        (factor.solve(&q_vec) - &w_circ) * root_n
    });

    let r = setup.replications as f64;
    let mut mean = DVector::zeros(p);
    for d in &draws {
        mean += d;
    }
    mean /= r;
    let mut cov = DMatrix::zeros(p, p);
    for d in &draws {
        let c = d - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= r - 1.0;
    let relative_frobenius_error = relative_frobenius(&cov, &theoretical_cov);
    let mean_bounds = DVector::from_fn(p, |j, _| 4.0 * theoretical_cov[(j, j)].max(0.0).sqrt() / r.sqrt());
    let max_leverage = (0..n).map(|i| design.row(i).norm_squared()).fold(0.0, f64::max) * inv_n;
    Ok(Theorem1Report {
        n,
        p,
        replications: setup.replications,
        w_circ,
        empirical_mean: mean,
        empirical_cov: cov,
        theoretical_cov,
        relative_frobenius_error,
        mean_bounds,
        max_leverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Sequential;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn diag_gram(c_delta: [f64; 2], delta: f64) -> Arc<StabilizedGram> {
        let c_n = DMatrix::from_row_slice(2, 2, &[c_delta[0] - delta, 0.0, 0.0, c_delta[1] - delta]);
        Arc::new(StabilizedGram::from_gram_matrix(c_n, delta).unwrap())
    }

    fn identity_problem(c: [f64; 2]) -> LinearProblem {
        LinearProblem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![2.0, 4.0]), diag_gram(c, 0.1)).unwrap()
    }

    fn close(a: &DVector<f64>, b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn closed_form_hand_cases() {
        let pr = identity_problem([2.0, 1.0]);
        assert!(close(&covridge_closed_form(&pr, 0.0, 0.0).unwrap(), &[2.0, 4.0], 1e-12));
        assert!(close(&covridge_closed_form(&pr, 0.0, 0.5).unwrap(), &[1.0, 2.0], 1e-12));
        assert!(close(&covridge_closed_form(&pr, 0.25, 0.0).unwrap(), &[1.0, 8.0 / 3.0], 1e-12));
    }

    #[test]
    fn shrunken_target_hand_cases() {
        let pr = identity_problem([2.0, 1.0]);
        let w0 = DVector::from_vec(vec![1.0, 1.0]);
        assert!(close(&shrunken_target(&pr, 0.0, 0.0, &w0).unwrap(), &[1.0, 1.0], 1e-12));
        assert!(close(&shrunken_target(&pr, 0.25, 0.0, &w0).unwrap(), &[0.5, 2.0 / 3.0], 1e-12));
        let mut last = f64::INFINITY;
        for l2 in [0.0, 0.1, 1.0, 10.0, 100.0] {
            let norm = shrunken_target(&pr, 0.0, l2, &w0).unwrap().norm();
            assert!(norm < last);
            last = norm;
        }
    }

    #[test]
    fn sandwich_hand_cases() {
        let q = DMatrix::identity(2, 2);
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let s = covridge_asym_cov(&q, &c, 1.0, 0.0, 1.0).unwrap();
        assert!((s[(0, 0)] - 1.0 / 9.0).abs() < 1e-14 && (s[(1, 1)] - 0.25).abs() < 1e-14);
        assert_eq!(covridge_asym_cov(&q, &c, 1.0, 0.0, 0.0).unwrap(), DMatrix::zeros(2, 2));
        let q2 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let ols = covridge_asym_cov(&q2, &c, 0.0, 0.0, 3.0).unwrap();
        let expected = q2.clone().try_inverse().unwrap() * 3.0;
        assert!((ols - expected).amax() < 1e-12);
    }

    #[test]
    fn singular_system_is_rejected() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let pr = LinearProblem::new(x, DVector::from_vec(vec![1.0, 1.0]), diag_gram([1.0, 1.0], 0.1)).unwrap();
        assert!(matches!(covridge_closed_form(&pr, 0.0, 0.0), Err(Error::NotPositiveDefinite { .. })));
        assert!(covridge_closed_form(&pr, 0.1, 0.0).is_ok());
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-2.5, 0.5), -2.0);
    }

    fn random_problem(seed: u64, n: usize, p: usize) -> LinearProblem {
        let mut rng = stream_rng(seed, 0);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] * 2.0 - x[(i, p - 1)] + rng.random::<f64>() - 0.5);
        LinearProblem::with_design_gram(x, y, 1e-3).unwrap()
    }

    #[test]
    fn sparridge_null_threshold() {
        let pr = random_problem(3, 10, 4);
        let gamma = pr.q_vec().amax();
        let fit = sparridge_solve(&pr, 0.0, gamma, 1e-12, 10_000).unwrap();
        assert!(fit.w_hat.iter().all(|v| *v == 0.0));
        assert!(fit.converged);
    }

    #[test]
    fn sparridge_hits_iteration_cap() {
        let pr = random_problem(4, 30, 6);
        let fit = sparridge_solve_with(&pr, 0.5, 0.01, &ProxOptions { tol: 1e-300, max_iter: 3, polish: false, ..ProxOptions::default() }).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 3);
    }

    #[test]
    fn accelerated_mode_agrees() {
        let pr = random_problem(5, 40, 5);
        let plain = sparridge_solve(&pr, 0.3, 0.05, 1e-12, 100_000).unwrap();
        let fast = sparridge_solve_with(&pr, 0.3, 0.05, &ProxOptions { accelerated: true, ..ProxOptions::default() }).unwrap();
        assert!((plain.w_hat - fast.w_hat).amax() < 1e-8);
    }

    #[test]
    fn limit_criterion_hand_cases() {
        let h = DMatrix::identity(2, 2);
        let z = DVector::from_vec(vec![3.0, 0.0]);
        let empty = DVector::zeros(2);
        assert!(close(&limit_criterion_minimize(&h, &z, 1.0, &empty).unwrap(), &[2.0, 0.0], 1e-12));
        let a1 = DVector::from_vec(vec![0.7, 0.0]);
        assert!(close(&limit_criterion_minimize(&h, &z, 1.0, &a1).unwrap(), &[2.0, 0.0], 1e-12));
        let h2 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let direct = h2.clone().try_inverse().unwrap() * &z;
        assert!((limit_criterion_minimize(&h2, &z, 0.0, &a1).unwrap() - direct).amax() < 1e-12);
        assert!(limit_criterion_minimize(&DMatrix::zeros(2, 2), &z, 1.0, &empty).is_err());
    }

    #[test]
    fn theorem1_noiseless_is_exact() {
        let mut rng = stream_rng(1, 0);
        let x = DMatrix::from_fn(50, 3, |_, _| rng.random::<f64>() - 0.5);
        let w0 = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let setup = Theorem1Setup { sigma: 0.0, lambda1: 0.3, lambda2: 0.1, delta: 1e-3, replications: 10, seed: 3 };
        let rep = validate_theorem1(&x, &w0, &setup, &Sequential).unwrap();
        assert_eq!(rep.empirical_cov, DMatrix::zeros(3, 3));
        assert_eq!(rep.theoretical_cov, DMatrix::zeros(3, 3));
        assert!(rep.passes(0.0));
    }

    #[test]
    fn theorem1_small_monte_carlo() {
        let mut rng = stream_rng(2, 0);
        let x = DMatrix::from_fn(400, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let w0 = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let setup = Theorem1Setup { sigma: 1.0, lambda1: 0.3, lambda2: 0.1, delta: 1e-3, replications: 2000, seed: 3 };
        let rep = validate_theorem1(&x, &w0, &setup, &Sequential).unwrap();
        assert!(rep.relative_frobenius_error < 0.15, "{}", rep.relative_frobenius_error);
        assert!(rep.max_leverage < 0.05);
    }

    #[test]
    fn limit_law_draws_are_deterministic() {
        let h = DMatrix::identity(2, 2);
        let w_star = DVector::from_vec(vec![1.0, 0.0]);
        let a = sample_limit_law(&h, &h, 1.0, 0.5, &w_star, 20, 4).unwrap();
        assert_eq!(a, sample_limit_law(&h, &h, 1.0, 0.5, &w_star, 20, 4).unwrap());
        // The inactive coordinate is soft-thresholded, so some draws sit exactly at zero.
        assert!(a.column(1).iter().any(|v| *v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sparridge_objective_never_increases(seed in any::<u64>(), gamma in 0.001f64..0.5) {
            let pr = random_problem(seed, 25, 5);
            let fit = sparridge_solve_with(&pr, 0.4, gamma, &ProxOptions { trace: true, polish: false, ..ProxOptions::default() }).unwrap();
            for w in fit.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
        }

        #[test]
        fn sparridge_kkt_holds(seed in any::<u64>(), gamma in 0.001f64..0.5, lambda1 in 0.0f64..1.0) {
            let pr = random_problem(seed, 30, 6);
            let fit = sparridge_solve(&pr, lambda1, gamma, 1e-10, 200_000).unwrap();
            prop_assert!(sparridge_kkt_residual(&pr, lambda1, gamma, &fit.w_hat).unwrap() < 1e-6);
        }

        #[test]
        fn sparsity_non_increasing_in_gamma(seed in any::<u64>()) {
            let pr = random_problem(seed, 30, 6);
            let mut last = usize::MAX;
            for gamma in [0.001, 0.01, 0.1, 0.5, 0.9] {
                let nnz = sparridge_solve(&pr, 0.1, gamma, 1e-12, 200_000).unwrap().w_hat.iter().filter(|v| **v != 0.0).count();
                prop_assert!(nnz <= last);
                last = nnz;
            }
        }

        #[test]
        fn gamma_zero_matches_covridge(seed in any::<u64>(), lambda1 in 0.0f64..1.0) {
            let pr = random_problem(seed, 30, 5);
            let spar = sparridge_solve(&pr, lambda1, 0.0, 1e-12, 200_000).unwrap();
            let cov = covridge_closed_form(&pr, lambda1, 0.0).unwrap();
            prop_assert!((spar.w_hat - cov).amax() < 1e-8);
        }
    }
}
