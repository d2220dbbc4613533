//! Waveform design for activity detection with several random-access
//! devices.
//!
//! Device `i` is active with prior probability `p_i`. For each focal device
//! and each activity pattern `s` of the others, the observation covariances
//! are
//!
//! ```text
//! K_{i,0}(s) = R_N + Σ_{k ≠ i, s_k = 1} X_k R_k X_k^H
//! K_{i,1}(s) = K_{i,0}(s) + X_i R_i X_i^H
//! ```
//!
//! and the design objective is the prior-weighted sum of the Gaussian
//! divergences over focal devices and patterns. Every term's quadratic
//! surrogate lower-bounds it jointly in all waveforms, so cyclic block
//! updates of one device at a time ascend the sum.

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, ComplexMatrix, HermitianMatrix, DEFAULT_PIVOT_TOL};
use crate::rng::SeededRng;
use crate::scenario::{init_waveform_dims, noise_variance, InitKind, Waveform};
use crate::solvers::{has_converged, margin, max_eig_or_bound, SolverOptions, SolverTrace, SpectralBound, Status};

/// Largest device count for exact pattern enumeration.
pub const MAX_DEVICES: usize = 12;

/// One activity pattern of the non-focal devices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatternEntry {
    /// Bit `k` is set when device `k` is active. The focal bit is clear.
    pub mask: u32,
    /// `Π_{k ≠ i} p_k^{s_k} (1 − p_k)^{1 − s_k}`.
    pub weight: f64,
}

impl PatternEntry {
    pub fn is_active(&self, device: usize) -> bool {
        self.mask >> device & 1 == 1
    }
}

fn check_priors(priors: &[f64]) -> Result<()> {
    if priors.is_empty() {
        return Err(Error::InvalidParameter("at least one device is required".into()));
    }
    if priors.len() > MAX_DEVICES {
        return Err(Error::TooManyDevices(priors.len()));
    }
    if let Some(p) = priors.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::InvalidParameter(format!("priors must lie in (0, 1), got {p}")));
    }
    Ok(())
}

/// All `2^{K−1}` patterns of the devices other than `i`, in binary counting
/// order with the lowest-indexed other device as the most significant bit.
pub fn pattern_weights(priors: &[f64], i: usize) -> Result<Vec<PatternEntry>> {
    check_priors(priors)?;
    let k = priors.len();
    if i >= k {
        return Err(Error::InvalidParameter(format!("device {i} out of range for {k} devices")));
    }
    let others: Vec<usize> = (0..k).filter(|&d| d != i).collect();
    let n = others.len();
    Ok((0..1u32 << n)
        .map(|c| {
            let mut mask = 0u32;
            let mut weight = 1.0;
            for (pos, &d) in others.iter().enumerate() {
                if c >> (n - 1 - pos) & 1 == 1 {
                    mask |= 1 << d;
                    weight *= priors[d];
                } else {
                    weight *= 1.0 - priors[d];
                }
            }
            PatternEntry { mask, weight }
        })
        .collect())
}

/// Pattern lists for every focal device.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternTable {
    pub per_device: Vec<Vec<PatternEntry>>,
}

impl PatternTable {
    pub fn new(priors: &[f64]) -> Result<Self> {
        Ok(Self {
            per_device: (0..priors.len()).map(|i| pattern_weights(priors, i)).collect::<Result<_>>()?,
        })
    }

    pub fn device(&self, i: usize) -> &[PatternEntry] {
        &self.per_device[i]
    }
}

#[derive(Clone, Debug)]
pub struct RandomAccessScenario {
    pub n_devices: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub snapshots: usize,
    /// Common per-device budget.
    pub power_budget: f64,
    /// Per-device budgets overriding `power_budget`.
    pub device_power: Option<Vec<f64>>,
    /// `R_i`, each `N_t × N_t` and positive definite.
    pub r_device: Vec<HermitianMatrix>,
    pub priors: Vec<f64>,
    pub r_noise: HermitianMatrix,
}

impl RandomAccessScenario {
    pub fn budget(&self, i: usize) -> f64 {
        self.device_power.as_ref().map_or(self.power_budget, |p| p[i])
    }
}

/// One waveform per device.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveformSet {
    pub x: Vec<Waveform>,
}

/// A validated [`RandomAccessScenario`] with cached factors and patterns.
#[derive(Clone, Debug)]
pub struct RaProblem {
    scenario: RandomAccessScenario,
    /// `L_i` with `L_i L_i^H = R_i`.
    factors: Vec<ComplexMatrix>,
    r_lambda_max: Vec<f64>,
    patterns: PatternTable,
}

impl RaProblem {
    pub fn new(scenario: RandomAccessScenario) -> Result<Self> {
        let sc = &scenario;
        let k = sc.n_devices;
        if sc.priors.len() != k || sc.r_device.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "{k} devices but {} priors and {} covariances",
                sc.priors.len(),
                sc.r_device.len()
            )));
        }
        check_priors(&sc.priors)?;
        if sc.n_tx == 0 || sc.n_rx == 0 || sc.snapshots == 0 {
            return Err(Error::InvalidParameter("dimensions must be positive".into()));
        }
        if let Some(p) = &sc.device_power {
            if p.len() != k {
                return Err(Error::ShapeMismatch(format!("{} device budgets for {k} devices", p.len())));
            }
        }
        if let Some(i) = (0..k).find(|&i| !(sc.budget(i) > 0.0 && sc.budget(i).is_finite())) {
            return Err(Error::InvalidParameter(format!("power budget of device {i} must be positive")));
        }
        if sc.r_noise.dim() != sc.snapshots {
            return Err(Error::ShapeMismatch(format!(
                "noise covariance is {0}x{0}, expected {1}x{1}",
                sc.r_noise.dim(),
                sc.snapshots
            )));
        }
        Cholesky::new(&sc.r_noise, DEFAULT_PIVOT_TOL).map_err(|_| Error::SingularNoise)?;
        let mut factors = Vec::with_capacity(k);
        let mut r_lambda_max = Vec::with_capacity(k);
        for (i, r) in sc.r_device.iter().enumerate() {
            if r.dim() != sc.n_tx {
                return Err(Error::ShapeMismatch(format!("R_{i} is {0}x{0}, expected {1}x{1}", r.dim(), sc.n_tx)));
            }
            let c = Cholesky::new(r, DEFAULT_PIVOT_TOL)
                .map_err(|e| Error::InvalidParameter(format!("covariance of device {i} is not positive definite: {e}")))?;
            factors.push(c.into_factor());
            r_lambda_max.push(r.eigen_range().1);
        }
        let patterns = PatternTable::new(&sc.priors)?;
        Ok(Self {
            scenario,
            factors,
            r_lambda_max,
            patterns,
        })
    }

    pub fn scenario(&self) -> &RandomAccessScenario {
        &self.scenario
    }

    pub fn n_devices(&self) -> usize {
        self.scenario.n_devices
    }

    pub fn factor(&self, i: usize) -> &ComplexMatrix {
        &self.factors[i]
    }

    pub fn patterns(&self) -> &PatternTable {
        &self.patterns
    }

    pub fn check_set(&self, xs: &WaveformSet) -> Result<()> {
        let sc = &self.scenario;
        if xs.x.len() != sc.n_devices {
            return Err(Error::ShapeMismatch(format!("{} waveforms for {} devices", xs.x.len(), sc.n_devices)));
        }
        for (i, w) in xs.x.iter().enumerate() {
            if w.rows() != sc.snapshots || w.cols() != sc.n_tx {
                return Err(Error::ShapeMismatch(format!(
                    "waveform {i} is {}x{}, expected {}x{}",
                    w.rows(),
                    w.cols(),
                    sc.snapshots,
                    sc.n_tx
                )));
            }
        }
        Ok(())
    }

    fn check_feasible(&self, xs: &WaveformSet) -> Result<()> {
        self.check_set(xs)?;
        for (i, w) in xs.x.iter().enumerate() {
            let p = self.scenario.budget(i);
            if w.power() > p * (1.0 + 1e-9) {
                return Err(Error::InvalidParameter(format!(
                    "waveform {i} has power {} above its budget {p}",
                    w.power()
                )));
            }
        }
        Ok(())
    }
}

/// Per-device `X_k L_k` and `X_k R_k X_k^H`.
struct DeviceTerms {
    xl: Vec<ComplexMatrix>,
    gram: Vec<HermitianMatrix>,
}

impl DeviceTerms {
    fn new(problem: &RaProblem, xs: &WaveformSet) -> Self {
        let xl: Vec<ComplexMatrix> = xs.x.iter().zip(&problem.factors).map(|(w, l)| w.x() * l).collect();
        let gram = xl.iter().map(HermitianMatrix::gram).collect();
        Self { xl, gram }
    }

    fn covs(&self, problem: &RaProblem, i: usize, mask: u32) -> (HermitianMatrix, HermitianMatrix) {
        let mut k0 = problem.scenario.r_noise.clone();
        for (k, g) in self.gram.iter().enumerate() {
            if k != i && mask >> k & 1 == 1 {
                k0 = k0.add(g);
            }
        }
        let k1 = k0.add(&self.gram[i]);
        (k0, k1)
    }
}

/// `(K_{i,0}(s), K_{i,1}(s))` for the pattern `mask`.
pub fn conditional_covs(
    problem: &RaProblem,
    xs: &WaveformSet,
    i: usize,
    mask: u32,
) -> Result<(HermitianMatrix, HermitianMatrix)> {
    problem.check_set(xs)?;
    if i >= problem.n_devices() {
        return Err(Error::InvalidParameter(format!("device {i} out of range")));
    }
    Ok(DeviceTerms::new(problem, xs).covs(problem, i, mask & !(1 << i)))
}

/// Factorizations of one `(i, s)` term.
struct TermFactors {
    chol0: Cholesky,
    chol1: Cholesky,
    /// `L1^{-1} X_i L_i`.
    w1: ComplexMatrix,
}

impl TermFactors {
    fn new(problem: &RaProblem, terms: &DeviceTerms, i: usize, mask: u32) -> Result<Self> {
        let (k0, k1) = terms.covs(problem, i, mask);
        let chol0 = Cholesky::new(&k0, DEFAULT_PIVOT_TOL)?;
        let chol1 = Cholesky::new(&k1, DEFAULT_PIVOT_TOL)?;
        let w1 = chol1.whiten(&terms.xl[i])?;
        Ok(Self { chol0, chol1, w1 })
    }

    /// `log|K1| − log|K0| − Tr((XL)^H K1^{-1} XL)`, the per-antenna
    /// divergence.
    fn value(&self) -> f64 {
        self.chol1.logdet() - self.chol0.logdet() - self.w1.norm_squared()
    }
}

/// `D_Σ = N_r Σ_i Σ_s w(s) (log|K_{i,1} K_{i,0}^{-1}| + Tr(K_{i,1}^{-1} K_{i,0}) − T)`.
pub fn sum_kld(problem: &RaProblem, xs: &WaveformSet) -> Result<f64> {
    problem.check_set(xs)?;
    let terms = DeviceTerms::new(problem, xs);
    let jobs: Vec<(usize, PatternEntry)> = (0..problem.n_devices())
        .flat_map(|i| problem.patterns.device(i).iter().map(move |e| (i, *e)))
        .collect();
    let values = jobs
        .par_iter()
        .map(|&(i, e)| Ok(e.weight * TermFactors::new(problem, &terms, i, e.mask)?.value()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(problem.scenario.n_rx as f64 * values.iter().sum::<f64>())
}

/// Quadratic surrogate of `D_Σ` in `X_j`: `2 Re⟨B_j, X_j⟩ − ⟨X_j, M_j X_j R_j⟩`.
#[derive(Clone, Debug)]
pub struct BlockSurrogate {
    pub m: HermitianMatrix,
    pub b: ComplexMatrix,
}

/// Builds `M_j` and `B_j` at the current waveforms.
pub fn block_surrogate(problem: &RaProblem, xs: &WaveformSet, j: usize) -> Result<BlockSurrogate> {
    problem.check_set(xs)?;
    let terms = DeviceTerms::new(problem, xs);
    let jobs: Vec<(usize, PatternEntry)> = (0..problem.n_devices())
        .flat_map(|i| problem.patterns.device(i).iter().map(move |e| (i, *e)))
        .filter(|(i, e)| *i == j || e.is_active(j))
        .collect();
    let parts = jobs
        .par_iter()
        .map(|&(i, e)| {
            let f = TermFactors::new(problem, &terms, i, e.mask)?;
            let gamma = HermitianMatrix::gram(&f.chol0.whiten(&terms.xl[i])?.adjoint());
            let psi = f.chol1.solve_whitened(&f.w1)?;
            let psi_gamma = &psi * gamma.as_matrix();
            let a = &psi_gamma * psi.adjoint();
            let b = (i == j).then(|| psi_gamma * problem.factors[j].adjoint());
            Ok((e.weight, a, b))
        })
        .collect::<Result<Vec<_>>>()?;
    let t = problem.scenario.snapshots;
    let scale = problem.scenario.n_rx as f64;
    let mut m = ComplexMatrix::zeros(t, t);
    let mut b = ComplexMatrix::zeros(t, problem.scenario.n_tx);
    for (w, a, bj) in parts {
        m += a * Complex64::new(scale * w, 0.0);
        if let Some(bj) = bj {
            b += bj * Complex64::new(scale * w, 0.0);
        }
    }
    Ok(BlockSurrogate {
        m: HermitianMatrix::symmetrize(m),
        b,
    })
}

/// Maximizer of `2 Re⟨c, X⟩ − λ̄ ‖X‖²` over `‖X‖² ≤ p`.
fn ball_maximizer(c: ComplexMatrix, lambda_bar: f64, p: f64) -> Waveform {
    let nc = c.norm();
    let scale = if nc <= lambda_bar * p.sqrt() { 1.0 / lambda_bar } else { p.sqrt() / nc };
    Waveform::new(c * Complex64::new(scale, 0.0))
}

/// New waveform for device `j` with the others held fixed.
///
/// The update maximizes the isotropic relaxation of the block surrogate
/// (`λ̄_j = λ_max(M_j) λ_max(R_j) + δ`) over the power ball. The ball is used
/// instead of the sphere because a device's power also feeds the
/// interference terms of the other devices.
pub fn ra_block_update(
    problem: &RaProblem,
    xs: &WaveformSet,
    j: usize,
    opts: &SolverOptions,
) -> Result<(Waveform, SpectralBound)> {
    problem.check_feasible(xs)?;
    if j >= problem.n_devices() {
        return Err(Error::InvalidParameter(format!("device {j} out of range")));
    }
    let s = block_surrogate(problem, xs, j)?;
    let (lm, fallback) = max_eig_or_bound(&s.m, opts);
    let lambda_p = lm * problem.r_lambda_max[j];
    let bound = SpectralBound {
        lambda_p,
        lambda_bar: lambda_p + margin(lambda_p, opts),
        fallback,
    };
    let x = xs.x[j].x();
    let c = s.b + x * Complex64::new(bound.lambda_bar, 0.0)
        - s.m.as_matrix() * x * problem.scenario.r_device[j].as_matrix();
    Ok((ball_maximizer(c, bound.lambda_bar, problem.scenario.budget(j)), bound))
}

/// Cyclic block updates; one trace entry per full sweep.
pub fn ra_solve(problem: &RaProblem, xs_init: &WaveformSet, opts: &SolverOptions) -> Result<(WaveformSet, SolverTrace)> {
    opts.check()?;
    problem.check_feasible(xs_init)?;
    let clock = Instant::now();
    let mut xs = xs_init.clone();
    let mut f = sum_kld(problem, &xs)?;
    let mut trace = SolverTrace::start(f, opts.seed);
    for _ in 0..opts.max_iters {
        for j in 0..problem.n_devices() {
            let (next, bound) = ra_block_update(problem, &xs, j, opts)?;
            trace.spectral_fallbacks += usize::from(bound.fallback);
            xs.x[j] = next;
        }
        let f_next = sum_kld(problem, &xs)?;
        trace.push(f_next, clock.elapsed().as_secs_f64());
        let done = has_converged(f, f_next, opts.epsilon);
        f = f_next;
        if done {
            trace.status = Status::Converged;
            break;
        }
    }
    trace.final_power = xs.x.iter().map(Waveform::power).fold(0.0, f64::max);
    Ok((xs, trace))
}

/// Independent full-power starting waveforms, one seeded stream per device.
pub fn init_waveform_set(problem: &RaProblem, seed: u64, kind: InitKind) -> WaveformSet {
    let sc = &problem.scenario;
    let root = SeededRng::new(seed);
    WaveformSet {
        x: (0..sc.n_devices)
            .map(|i| {
                let s = root.fork(0xDE00 + i as u64).seed();
                init_waveform_dims(sc.snapshots, sc.n_tx, sc.budget(i), s, kind)
            })
            .collect(),
    }
}

/// Parameters of the synthetic random-access generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RaGeneratorConfig {
    pub n_devices: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub snapshots: usize,
    pub power_budget: f64,
    pub snr_db: f64,
    /// Common activity prior.
    pub prior: f64,
    /// Range of the correlation magnitudes of the device covariances.
    pub rho_min: f64,
    pub rho_max: f64,
}

impl Default for RaGeneratorConfig {
    fn default() -> Self {
        Self {
            n_devices: 4,
            n_tx: 4,
            n_rx: 4,
            snapshots: 8,
            power_budget: 4.0,
            snr_db: 8.0,
            prior: 0.3,
            rho_min: 0.3,
            rho_max: 0.9,
        }
    }
}

impl RaGeneratorConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGenerator(m));
        if self.n_devices == 0 || self.n_devices > MAX_DEVICES {
            return bad(format!("n_devices must be in 1..={MAX_DEVICES}, got {}", self.n_devices));
        }
        if self.n_tx == 0 || self.n_rx == 0 || self.snapshots == 0 {
            return bad("dimensions must be positive".into());
        }
        if !(self.power_budget > 0.0) || !self.snr_db.is_finite() {
            return bad("power_budget must be positive and snr_db finite".into());
        }
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return bad(format!("prior must lie in (0, 1), got {}", self.prior));
        }
        if !(0.0 <= self.rho_min && self.rho_min <= self.rho_max && self.rho_max < 1.0) {
            return bad("need 0 <= rho_min <= rho_max < 1".into());
        }
        Ok(())
    }
}

/// Complex exponential correlation `R[m, n] = ρ^{|m−n|} e^{jθ(m−n)}`.
pub fn complex_exponential_correlation(n: usize, rho: f64, theta: f64) -> HermitianMatrix {
    HermitianMatrix::symmetrize(ComplexMatrix::from_fn(n, n, |i, j| {
        let d = i as f64 - j as f64;
        Complex64::from_polar(rho.powf(d.abs()), theta * d)
    }))
}

/// Device covariances with random correlation magnitude and phase, white
/// noise at the configured SNR and a common prior.
pub fn generate_ra_scenario(gen: &RaGeneratorConfig, seed: u64) -> Result<RandomAccessScenario> {
    gen.check()?;
    let mut rng = SeededRng::new(seed).fork(0x4AC0).generator();
    let r_device = (0..gen.n_devices)
        .map(|_| {
            let rho = gen.rho_min + (gen.rho_max - gen.rho_min) * rng.random::<f64>();
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            complex_exponential_correlation(gen.n_tx, rho, theta)
        })
        .collect();
    let sigma2 = noise_variance(gen.power_budget, gen.n_tx, gen.snr_db);
    Ok(RandomAccessScenario {
        n_devices: gen.n_devices,
        n_tx: gen.n_tx,
        n_rx: gen.n_rx,
        snapshots: gen.snapshots,
        power_budget: gen.power_budget,
        device_power: None,
        r_device,
        priors: vec![gen.prior; gen.n_devices],
        r_noise: HermitianMatrix::identity(gen.snapshots).scaled(sigma2),
    })
}
