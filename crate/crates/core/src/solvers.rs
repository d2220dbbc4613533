//! Single-user waveform solvers.
//!
//! Both solvers rebuild the optimal auxiliaries at the current waveform and
//! then maximize the resulting concave quadratic surrogate in `X`:
//!
//! * [`fp_kld`] solves the stationarity equation `A X R_H1 + μ X = B`
//!   exactly, with `μ` chosen by complementary slackness.
//! * [`mm_kld`] bounds `vec(X)^H (R_H1^T ⊗ A) vec(X)` by `λ̄ ‖X‖²` and takes
//!   the resulting closed-form step, normalized to full power.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{power_iteration, ComplexMatrix, HermitianMatrix};
use crate::objective::{AuxiliaryVariables, Evaluation};
use crate::scenario::{KldProblem, Waveform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SylvesterMethod {
    /// Eigendecompositions of the two Kronecker factors.
    Spectral,
    /// Eigendecomposition of the explicit `(N_t T) × (N_t T)` operator.
    Dense,
}

/// Upper bound used for `λ_max(A)` when power iteration does not converge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralFallback {
    /// `Tr(A)`.
    Trace,
    /// The exact top eigenvalue from a dense eigendecomposition.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Relative-improvement stopping tolerance.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Spectral margin; `None` selects `max(1e-6 λ_p, 1e-12)`.
    pub delta: Option<f64>,
    /// Relative tolerance on the power residual of the `μ` search.
    pub mu_tol: f64,
    pub power_iter_k: usize,
    pub power_iter_tol: f64,
    pub spectral_fallback: SpectralFallback,
    pub sylvester: SylvesterMethod,
    /// Seed of the power-iteration start vectors.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_iters: 5000,
            delta: None,
            mu_tol: 1e-10,
            power_iter_k: 100,
            power_iter_tol: 1e-10,
            spectral_fallback: SpectralFallback::Exact,
            sylvester: SylvesterMethod::Spectral,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn check(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidParameter(format!("delta must be positive, got {d}")));
            }
        }
        if !(self.mu_tol > 0.0) || self.power_iter_k == 0 || !(self.power_iter_tol > 0.0) {
            return Err(Error::InvalidParameter("mu_tol, power_iter_k and power_iter_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    MaxIters,
}

/// Per-iteration record of a solver run. Entry 0 of the objective and
/// timing lists is the starting point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub objective_per_iter: Vec<f64>,
    pub elapsed_seconds_per_iter: Vec<f64>,
    pub iterations: usize,
    pub status: Status,
    pub final_power: f64,
    /// Multiplier of each FP iteration.
    pub mu_per_iter: Vec<f64>,
    /// Step size of each accelerated iteration.
    pub gamma_per_iter: Vec<f64>,
    /// Seed used for power iteration.
    pub seed: u64,
    /// Number of spectral bounds that fell back after power iteration failed.
    pub spectral_fallbacks: usize,
}

impl SolverTrace {
    pub(crate) fn start(f0: f64, seed: u64) -> Self {
        Self {
            objective_per_iter: vec![f0],
            elapsed_seconds_per_iter: vec![0.0],
            iterations: 0,
            status: Status::MaxIters,
            final_power: 0.0,
            mu_per_iter: Vec::new(),
            gamma_per_iter: Vec::new(),
            seed,
            spectral_fallbacks: 0,
        }
    }

    pub(crate) fn push(&mut self, f: f64, elapsed: f64) {
        self.objective_per_iter.push(f);
        self.elapsed_seconds_per_iter.push(elapsed);
        self.iterations += 1;
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_per_iter.last().expect("trace always holds the starting value")
    }

    /// Largest drop between consecutive objective values, relative to
    /// `max(1, |f|)`.
    pub fn worst_relative_decrease(&self) -> f64 {
        self.objective_per_iter
            .windows(2)
            .map(|w| (w[0] - w[1]) / w[0].abs().max(1.0))
            .fold(0.0, f64::max)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.worst_relative_decrease() <= slack
    }

    /// Seconds per iteration, excluding the first (warm-up) iteration when
    /// more than one is available.
    pub fn per_iteration_seconds(&self) -> Vec<f64> {
        let t = &self.elapsed_seconds_per_iter;
        let d: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        if d.len() > 1 {
            d[1..].to_vec()
        } else {
            d
        }
    }

    pub fn total_seconds(&self) -> f64 {
        *self.elapsed_seconds_per_iter.last().unwrap_or(&0.0)
    }
}

/// Stopping rule `|Δf| / max(1, |f|) < ε`.
pub fn has_converged(f_old: f64, f_new: f64, epsilon: f64) -> bool {
    (f_new - f_old).abs() / f_old.abs().max(1.0) < epsilon
}

/// Expansion point and curvature of the nonhomogeneous bound.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxationState {
    pub z: ComplexMatrix,
    pub lambda_bar: f64,
    pub lambda_p: f64,
}

/// Eigendecomposition `M = U diag(values) U^H`.
#[derive(Clone, Debug)]
pub struct SpectralFactor {
    pub values: DVector<f64>,
    pub vectors: ComplexMatrix,
}

impl SpectralFactor {
    pub fn new(m: &HermitianMatrix) -> Self {
        let (values, vectors) = m.eigh();
        Self { values, vectors }
    }
}

/// Relative drop threshold for pseudo-division at `μ = 0`.
const PSEUDO_DIVISION_TOL: f64 = 1e-12;

/// Solves `(d_k + μ) x_k = b_k` for the smallest `μ ≥ 0` with
/// `Σ |x_k|² ≤ p_t`.
fn diagonal_power_solve(b: &[Complex64], d: &[f64], p_t: f64, mu_tol: f64) -> Result<(Vec<Complex64>, f64)> {
    let b_norm_sq: f64 = b.iter().map(|v| v.norm_sqr()).sum();
    if b_norm_sq == 0.0 {
        return Ok((vec![Complex64::new(0.0, 0.0); b.len()], 0.0));
    }
    let d_max = d.iter().cloned().fold(0.0, f64::max);
    let cut = PSEUDO_DIVISION_TOL * d_max;

    let mut dropped = 0.0;
    let mut power0 = 0.0;
    for (bk, &dk) in b.iter().zip(d) {
        if dk > cut && dk > 0.0 {
            power0 += bk.norm_sqr() / (dk * dk);
        } else {
            dropped += bk.norm_sqr();
        }
    }
    if dropped <= 1e-18 * b_norm_sq && power0 <= p_t {
        let x = b
            .iter()
            .zip(d)
            .map(|(bk, &dk)| if dk > cut && dk > 0.0 { bk / dk } else { Complex64::new(0.0, 0.0) })
            .collect();
        return Ok((x, 0.0));
    }

    let power = |mu: f64| -> f64 {
        b.iter()
            .zip(d)
            .map(|(bk, &dk)| {
                let den = dk.max(0.0) + mu;
                bk.norm_sqr() / (den * den)
            })
            .sum()
    };
    let mut lo = 0.0_f64;
    let mut hi = b_norm_sq.sqrt() / p_t.sqrt();
    while power(hi) > p_t {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::InfeasibleMu);
        }
    }
    let mut mu = hi;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let pm = power(mid);
        if (pm - p_t).abs() <= mu_tol * p_t {
            mu = mid;
            break;
        }
        if pm > p_t {
            lo = mid;
        } else {
            hi = mid;
        }
        mu = hi;
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let x = b.iter().zip(d).map(|(bk, &dk)| bk / (dk.max(0.0) + mu)).collect();
    Ok((x, mu))
}

fn check_sylvester_shapes(a: usize, r: usize, b: &ComplexMatrix, p_t: f64) -> Result<()> {
    if b.nrows() != a || b.ncols() != r {
        return Err(Error::ShapeMismatch(format!(
            "Sylvester right-hand side is {}x{}, expected {a}x{r}",
            b.nrows(),
            b.ncols()
        )));
    }
    if !(p_t > 0.0) {
        return Err(Error::InvalidParameter(format!("power budget must be positive, got {p_t}")));
    }
    Ok(())
}

/// Solves `A X R + μ X = B` over `Tr(X X^H) ≤ p_t` from the factor
/// eigendecompositions.
pub fn solve_sylvester_spectral(
    a: &SpectralFactor,
    r: &SpectralFactor,
    b: &ComplexMatrix,
    p_t: f64,
    mu_tol: f64,
) -> Result<(Waveform, f64)> {
    let (t, n) = (a.values.len(), r.values.len());
    check_sylvester_shapes(t, n, b, p_t)?;
    let bt = a.vectors.adjoint() * b * &r.vectors;
    let d: Vec<f64> = (0..n)
        .flat_map(|j| (0..t).map(move |i| (i, j)))
        .map(|(i, j)| a.values[i].max(0.0) * r.values[j])
        .collect();
    let (xt, mu) = diagonal_power_solve(bt.as_slice(), &d, p_t, mu_tol)?;
    let xt = DMatrix::from_column_slice(t, n, &xt);
    Ok((Waveform::new(&a.vectors * xt * r.vectors.adjoint()), mu))
}

/// [`solve_sylvester_spectral`] with both eigendecompositions computed here.
pub fn solve_x_sylvester(
    a: &HermitianMatrix,
    r_h1: &HermitianMatrix,
    b: &ComplexMatrix,
    p_t: f64,
    mu_tol: f64,
) -> Result<(Waveform, f64)> {
    solve_sylvester_spectral(&SpectralFactor::new(a), &SpectralFactor::new(r_h1), b, p_t, mu_tol)
}

/// Same problem through the explicit vectorized operator `R^T ⊗ A`.
pub fn solve_x_sylvester_dense(
    a: &HermitianMatrix,
    r_h1: &HermitianMatrix,
    b: &ComplexMatrix,
    p_t: f64,
    mu_tol: f64,
) -> Result<(Waveform, f64)> {
    let (t, n) = (a.dim(), r_h1.dim());
    check_sylvester_shapes(t, n, b, p_t)?;
    let big = HermitianMatrix::symmetrize(r_h1.as_matrix().transpose().kronecker(a.as_matrix()));
    let f = SpectralFactor::new(&big);
    let bv = DMatrix::from_column_slice(t * n, 1, b.as_slice());
    let bt = f.vectors.adjoint() * bv;
    let d: Vec<f64> = f.values.iter().map(|v| v.max(0.0)).collect();
    let (xt, mu) = diagonal_power_solve(bt.as_slice(), &d, p_t, mu_tol)?;
    let xv = &f.vectors * DMatrix::from_column_slice(t * n, 1, &xt);
    Ok((Waveform::new(DMatrix::from_column_slice(t, n, xv.as_slice())), mu))
}

/// `λ_p = λ_max(A) λ_max(R)` and `λ̄ = λ_p + δ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralBound {
    pub lambda_p: f64,
    pub lambda_bar: f64,
    /// Set when power iteration failed and the fallback bound was used.
    pub fallback: bool,
}

/// Default margin `max(1e-6 λ_p, 1e-12)` unless `opts.delta` is set.
pub fn margin(lambda_p: f64, opts: &SolverOptions) -> f64 {
    opts.delta.unwrap_or_else(|| (1e-6 * lambda_p).max(1e-12))
}

/// Top eigenvalue by power iteration, replaced by the configured fallback
/// on non-convergence. The second value reports whether it was.
pub fn max_eig_or_bound(m: &HermitianMatrix, opts: &SolverOptions) -> (f64, bool) {
    let run = power_iteration(m, opts.power_iter_k, opts.power_iter_tol, opts.seed);
    if run.converged {
        return (run.value.max(0.0), false);
    }
    let bound = match opts.spectral_fallback {
        SpectralFallback::Trace => m.trace(),
        SpectralFallback::Exact => m.eigen_range().1,
    };
    (bound.max(0.0), true)
}

/// Spectral bound of `R_H1^T ⊗ A`, with both factors by power iteration.
pub fn lambda_bar(a: &HermitianMatrix, r_h1: &HermitianMatrix, opts: &SolverOptions) -> SpectralBound {
    let (lr, fr) = max_eig_or_bound(r_h1, opts);
    lambda_bar_with(a, lr, fr, opts)
}

/// `G Ψ^H Ψ G^H` for `Γ = G^H G`. Since `A = (Ψ G^H)(Ψ G^H)^H`, this
/// `N_t × N_t` matrix has the nonzero spectrum of `A`.
pub fn reduced_a(aux: &AuxiliaryVariables, root: &ComplexMatrix) -> HermitianMatrix {
    HermitianMatrix::gram(&(&aux.psi * root.adjoint()).adjoint())
}

/// Spectral bound with a known `λ_max(R_H1)`.
pub fn lambda_bar_with(a: &HermitianMatrix, lambda_r: f64, r_fallback: bool, opts: &SolverOptions) -> SpectralBound {
    let (la, fa) = max_eig_or_bound(a, opts);
    let lambda_p = la * lambda_r;
    SpectralBound {
        lambda_p,
        lambda_bar: lambda_p + margin(lambda_p, opts),
        fallback: fa || r_fallback,
    }
}

/// One FP iteration from a precomputed evaluation; returns the new
/// waveform and its multiplier.
pub fn fp_step(problem: &KldProblem, eval: &Evaluation, opts: &SolverOptions) -> Result<(Waveform, f64)> {
    let aux = eval.aux()?;
    let a = aux.a();
    let b = aux.b(problem.l());
    let p_t = problem.power_budget();
    match opts.sylvester {
        SylvesterMethod::Spectral => {
            let (vals, vecs) = problem.r_h1_eigen();
            let r = SpectralFactor {
                values: vals.clone(),
                vectors: vecs.clone(),
            };
            solve_sylvester_spectral(&SpectralFactor::new(&a), &r, &b, p_t, opts.mu_tol)
        }
        SylvesterMethod::Dense => solve_x_sylvester_dense(&a, problem.r_h1(), &b, p_t, opts.mu_tol),
    }
}

/// One FP iteration: auxiliaries at `w`, then the exact surrogate maximizer.
pub fn fp_iterate(problem: &KldProblem, w: &Waveform, opts: &SolverOptions) -> Result<(Waveform, f64)> {
    fp_step(problem, &Evaluation::new(problem, w)?, opts)
}

/// One MM iteration from a precomputed evaluation.
pub fn mm_step(
    problem: &KldProblem,
    w: &Waveform,
    eval: &Evaluation,
    opts: &SolverOptions,
) -> Result<(Waveform, SpectralBound)> {
    let (aux, root) = eval.aux_with_root()?;
    let bound = lambda_bar_with(&reduced_a(&aux, &root), problem.r_h1_lambda_max(), false, opts);
    let x = w.x();
    // B − A X R = Ψ Γ (L^H − Ψ^H X R) without forming A.
    let inner = problem.l().adjoint() - aux.psi.adjoint() * (x * problem.r_h1().as_matrix());
    let c = &aux.psi * (aux.gamma.as_matrix() * inner) + x * Complex64::new(bound.lambda_bar, 0.0);
    let nc = c.norm();
    if nc < 1e-14 {
        return Ok((w.clone(), bound));
    }
    let scale = problem.power_budget().sqrt() / nc;
    Ok((Waveform::new(c * Complex64::new(scale, 0.0)), bound))
}

/// The MM fixed-point map `X ↦ M(X)`.
pub fn mm_map(problem: &KldProblem, w: &Waveform, opts: &SolverOptions) -> Result<Waveform> {
    Ok(mm_step(problem, w, &Evaluation::new(problem, w)?, opts)?.0)
}

pub(crate) fn check_start(problem: &KldProblem, w: &Waveform) -> Result<()> {
    problem.scenario().check_waveform(w)?;
    let p = problem.power_budget();
    if w.power() > p * (1.0 + 1e-9) {
        return Err(Error::InvalidParameter(format!(
            "initial waveform power {} exceeds the budget {p}",
            w.power()
        )));
    }
    Ok(())
}

/// FP-KLD.
pub fn fp_kld(problem: &KldProblem, x_init: &Waveform, opts: &SolverOptions) -> Result<(Waveform, SolverTrace)> {
    opts.check()?;
    check_start(problem, x_init)?;
    let clock = Instant::now();
    let mut w = x_init.clone();
    let mut eval = Evaluation::new(problem, &w)?;
    let mut trace = SolverTrace::start(eval.value, opts.seed);
    for _ in 0..opts.max_iters {
        let (next, mu) = fp_step(problem, &eval, opts)?;
        let next_eval = Evaluation::new(problem, &next)?;
        trace.mu_per_iter.push(mu);
        trace.push(next_eval.value, clock.elapsed().as_secs_f64());
        let done = has_converged(eval.value, next_eval.value, opts.epsilon);
        w = next;
        eval = next_eval;
        if done {
            trace.status = Status::Converged;
            break;
        }
    }
    trace.final_power = w.power();
    Ok((w, trace))
}

/// MM-KLD.
pub fn mm_kld(problem: &KldProblem, x_init: &Waveform, opts: &SolverOptions) -> Result<(Waveform, SolverTrace)> {
    opts.check()?;
    check_start(problem, x_init)?;
    let clock = Instant::now();
    let mut w = x_init.clone();
    let mut eval = Evaluation::new(problem, &w)?;
    let mut trace = SolverTrace::start(eval.value, opts.seed);
    for _ in 0..opts.max_iters {
        let (next, bound) = mm_step(problem, &w, &eval, opts)?;
        let next_eval = Evaluation::new(problem, &next)?;
        trace.spectral_fallbacks += usize::from(bound.fallback);
        trace.push(next_eval.value, clock.elapsed().as_secs_f64());
        let done = has_converged(eval.value, next_eval.value, opts.epsilon);
        w = next;
        eval = next_eval;
        if done {
            trace.status = Status::Converged;
            break;
        }
    }
    trace.final_power = w.power();
    Ok((w, trace))
}
