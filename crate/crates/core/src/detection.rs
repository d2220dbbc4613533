//! Monte Carlo likelihood-ratio detection.
//!
//! Observations are sampled as `Y = L_K G` with `G` standard complex normal,
//! scored by the log-likelihood ratio (or, for random access, the ratio of
//! Gaussian mixtures over interferer activity), and thresholded at an
//! empirical quantile of the statistic under `H0`. Every trial draws from its
//! own substream, so results do not depend on scheduling.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, ComplexMatrix, HermitianMatrix, DEFAULT_PIVOT_TOL};
use crate::random_access::{conditional_covs, RaProblem, RandomAccessScenario, WaveformSet};
use crate::rng::{complex_normal_matrix, SeededRng};
use crate::scenario::{covariances, KldProblem, Waveform};

/// Two-sided 95% standard normal quantile.
pub const WILSON_Z: f64 = 1.959963984540054;

/// Smallest accepted expected number of calibration exceedances.
pub const MIN_EXCEEDANCES: f64 = 50.0;

/// `CN(0, K)` observations with `N_r` independent columns.
#[derive(Clone, Debug)]
pub struct GaussianModel {
    chol: Cholesky,
    logdet: f64,
}

impl GaussianModel {
    pub fn new(k: &HermitianMatrix) -> Result<Self> {
        let chol = Cholesky::new(k, DEFAULT_PIVOT_TOL)?;
        let logdet = chol.logdet();
        Ok(Self { chol, logdet })
    }

    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n_rx: usize, rng: &mut R) -> ComplexMatrix {
        self.chol.factor() * complex_normal_matrix(rng, self.dim(), n_rx)
    }

    /// `log p(Y) + T N_r log π`.
    pub fn log_density(&self, y: &ComplexMatrix) -> Result<f64> {
        Ok(-self.chol.whiten(y)?.norm_squared() - y.ncols() as f64 * self.logdet)
    }
}

pub fn sample_obs<R: Rng + ?Sized>(k: &HermitianMatrix, n_rx: usize, rng: &mut R) -> Result<ComplexMatrix> {
    Ok(GaussianModel::new(k)?.sample(n_rx, rng))
}

/// `log p(Y | K1) − log p(Y | K0)`.
pub fn llr(y: &ComplexMatrix, k0: &HermitianMatrix, k1: &HermitianMatrix) -> Result<f64> {
    Ok(GaussianModel::new(k1)?.log_density(y)? - GaussianModel::new(k0)?.log_density(y)?)
}

/// `log Σ exp(v)`, shifted by the maximum.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug)]
pub struct GaussianMixture {
    log_weights: Vec<f64>,
    models: Vec<GaussianModel>,
}

impl GaussianMixture {
    pub fn new(components: &[(f64, HermitianMatrix)]) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("mixture needs at least one component".into()));
        }
        let total: f64 = components.iter().map(|c| c.0).sum();
        if components.iter().any(|c| !(c.0 > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights must be positive and sum to 1, got sum {total}"
            )));
        }
        Ok(Self {
            log_weights: components.iter().map(|c| c.0.ln()).collect(),
            models: components.iter().map(|c| GaussianModel::new(&c.1)).collect::<Result<_>>()?,
        })
    }

    pub fn log_density(&self, y: &ComplexMatrix) -> Result<f64> {
        let terms = self
            .log_weights
            .iter()
            .zip(&self.models)
            .map(|(w, m)| Ok(w + m.log_density(y)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(log_sum_exp(&terms))
    }
}

/// `log Σ w p(Y | K1(s)) − log Σ w p(Y | K0(s))`.
pub fn mixture_llr(y: &ComplexMatrix, m0: &[(f64, HermitianMatrix)], m1: &[(f64, HermitianMatrix)]) -> Result<f64> {
    Ok(GaussianMixture::new(m1)?.log_density(y)? - GaussianMixture::new(m0)?.log_density(y)?)
}

/// Randomized Neyman–Pearson decision rule: reject `H0` when the statistic
/// exceeds `eta`, and with probability `tie_prob` when it equals `eta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub eta: f64,
    pub tie_prob: f64,
}

impl Threshold {
    pub fn rejects<R: Rng + ?Sized>(&self, stat: f64, rng: &mut R) -> bool {
        stat > self.eta || (stat == self.eta && self.tie_prob > 0.0 && rng.random::<f64>() < self.tie_prob)
    }
}

/// 1-based index `⌈(1 − α) n⌉` of the calibration order statistic.
pub fn order_statistic_index(alpha: f64, n: usize) -> usize {
    // ⌈n − αn⌉ = n − ⌊αn⌋, with αn snapped to an integer when it is one up
    // to rounding.
    let an = alpha * n as f64;
    let snapped = if (an - an.round()).abs() <= 1e-9 * an.max(1.0) { an.round() } else { an.floor() };
    (n - snapped as usize).clamp(1, n)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Runs `n` trials, trial `t` drawing from substream `t` of `rng`.
fn trials<T, F>(n: usize, rng: SeededRng, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|t| f(&mut rng.fork(t).generator()))
        .collect()
}

/// Threshold at the `(1 − α)` empirical quantile of `n_cal` draws of the
/// null statistic.
pub fn calibrate_threshold<F>(null: F, alpha: f64, n_cal: usize, rng: SeededRng) -> Result<Threshold>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
{
    check_alpha(alpha)?;
    let expected = n_cal as f64 * alpha;
    if expected < MIN_EXCEEDANCES {
        return Err(Error::InsufficientCalibration(expected));
    }
    let mut stats = trials(n_cal, rng, null)?;
    if stats.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("statistic evaluated to NaN".into()));
    }
    stats.sort_by(f64::total_cmp);
    let eta = stats[order_statistic_index(alpha, n_cal) - 1];
    let above = stats.iter().filter(|&&s| s > eta).count() as f64;
    let ties = stats.iter().filter(|&&s| s == eta).count() as f64;
    Ok(Threshold {
        eta,
        tie_prob: ((expected - above) / ties).clamp(0.0, 1.0),
    })
}

/// A probability estimate with a 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    pub fn halfwidth(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    pub fn contains(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

/// Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: usize, n: usize) -> Estimate {
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    Estimate {
        value: p,
        ci_low: (center - half).max(0.0),
        ci_high: (center + half).min(1.0),
    }
}

/// Range that a held-out false-alarm estimate over `n_holdout` draws falls
/// in with 95% probability when the threshold came from `n_cal` draws.
pub fn false_alarm_interval(alpha: f64, n_holdout: usize, n_cal: usize) -> (f64, f64) {
    let half = WILSON_Z * (alpha * (1.0 - alpha) * (1.0 / n_holdout as f64 + 1.0 / n_cal as f64)).sqrt();
    ((alpha - half).max(0.0), (alpha + half).min(1.0))
}

/// Likelihood-ratio statistic used for random-access users.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorMode {
    /// Mixture over interferer activity.
    #[default]
    Mixture,
    /// Conditioned on the true activity pattern.
    Genie,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub alpha: f64,
    pub n_cal: usize,
    /// Trials under `H1` per user.
    pub n_mc: usize,
    /// Held-out trials under `H0`; defaults to `n_mc`.
    pub n_holdout: Option<usize>,
    pub mode: DetectorMode,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            n_cal: 200_000,
            n_mc: 10_000,
            n_holdout: None,
            mode: DetectorMode::Mixture,
        }
    }
}

impl DetectionConfig {
    pub fn holdout(&self) -> usize {
        self.n_holdout.unwrap_or(self.n_mc)
    }

    pub fn check(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.n_mc == 0 || self.holdout() == 0 {
            return Err(Error::InvalidParameter("trial counts must be positive".into()));
        }
        let expected = self.n_cal as f64 * self.alpha;
        if expected < MIN_EXCEEDANCES {
            return Err(Error::InsufficientCalibration(expected));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserDetection {
    pub threshold: Threshold,
    /// Held-out false-alarm rate.
    pub p_fa: Estimate,
    pub p_d: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub alpha: f64,
    pub n_cal: usize,
    pub n_mc: usize,
    pub n_holdout: usize,
    pub mode: DetectorMode,
    pub users: Vec<UserDetection>,
    /// `(Π p_d)^{1/K}`, with bounds from the per-user interval ends.
    pub geometric_mean: Estimate,
}

impl DetectionResult {
    /// Whether every user's held-out false-alarm rate lies in
    /// [`false_alarm_interval`].
    pub fn false_alarm_valid(&self) -> bool {
        let (lo, hi) = false_alarm_interval(self.alpha, self.n_holdout, self.n_cal);
        self.users.iter().all(|u| lo <= u.p_fa.value && u.p_fa.value <= hi)
    }
}

fn geometric_mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x.ln(), n + 1));
    (sum / n as f64).exp()
}

/// Calibrates, then estimates false-alarm and detection rates for one user.
/// `draw(h1, rng)` samples an observation under the given hypothesis and
/// returns its statistic.
fn evaluate_user<F>(draw: F, cfg: &DetectionConfig, rng: SeededRng) -> Result<UserDetection>
where
    F: Fn(bool, &mut ChaCha8Rng) -> Result<f64> + Sync,
{
    let threshold = calibrate_threshold(|r| draw(false, r), cfg.alpha, cfg.n_cal, rng.fork(0))?;
    let count = |h1: bool, n: usize, label: u64| -> Result<usize> {
        let hits = trials(n, rng.fork(label), |r| {
            let s = draw(h1, r)?;
            Ok(threshold.rejects(s, r))
        })?;
        Ok(hits.into_iter().filter(|&h| h).count())
    };
    let fa = count(false, cfg.holdout(), 1)?;
    let det = count(true, cfg.n_mc, 2)?;
    Ok(UserDetection {
        threshold,
        p_fa: wilson_interval(fa, cfg.holdout()),
        p_d: wilson_interval(det, cfg.n_mc),
    })
}

fn assemble(cfg: &DetectionConfig, users: Vec<UserDetection>) -> DetectionResult {
    let geometric = Estimate {
        value: geometric_mean(users.iter().map(|u| u.p_d.value)),
        ci_low: geometric_mean(users.iter().map(|u| u.p_d.ci_low)),
        ci_high: geometric_mean(users.iter().map(|u| u.p_d.ci_high)),
    };
    DetectionResult {
        alpha: cfg.alpha,
        n_cal: cfg.n_cal,
        n_mc: cfg.n_mc,
        n_holdout: cfg.holdout(),
        mode: cfg.mode,
        users,
        geometric_mean: geometric,
    }
}

/// Per-user model: conditional covariances for every activity pattern of the
/// other devices.
struct UserModel {
    n_rx: usize,
    mode: DetectorMode,
    /// Activity priors of the other devices, and their indices.
    others: Vec<(usize, f64)>,
    /// Pattern index by activity mask.
    index: Vec<usize>,
    log_weights: Vec<f64>,
    h0: Vec<GaussianModel>,
    h1: Vec<GaussianModel>,
}

impl UserModel {
    fn new(problem: &RaProblem, xs: &WaveformSet, i: usize, mode: DetectorMode) -> Result<Self> {
        let sc = problem.scenario();
        let entries = problem.patterns().device(i);
        let mut index = vec![usize::MAX; 1 << sc.n_devices];
        let (mut h0, mut h1) = (Vec::new(), Vec::new());
        for (n, e) in entries.iter().enumerate() {
            index[e.mask as usize] = n;
            let (k0, k1) = conditional_covs(problem, xs, i, e.mask)?;
            h0.push(GaussianModel::new(&k0)?);
            h1.push(GaussianModel::new(&k1)?);
        }
        Ok(Self {
            n_rx: sc.n_rx,
            mode,
            others: (0..sc.n_devices).filter(|&d| d != i).map(|d| (d, sc.priors[d])).collect(),
            index,
            log_weights: entries.iter().map(|e| e.weight.ln()).collect(),
            h0,
            h1,
        })
    }

    fn draw(&self, h1: bool, rng: &mut ChaCha8Rng) -> Result<f64> {
        let mask = self
            .others
            .iter()
            .fold(0usize, |m, &(d, p)| if rng.random::<f64>() < p { m | 1 << d } else { m });
        let s = self.index[mask];
        let y = if h1 { &self.h1[s] } else { &self.h0[s] }.sample(self.n_rx, rng);
        match self.mode {
            DetectorMode::Genie => Ok(self.h1[s].log_density(&y)? - self.h0[s].log_density(&y)?),
            DetectorMode::Mixture => {
                let mix = |models: &[GaussianModel]| -> Result<f64> {
                    let terms = self
                        .log_weights
                        .iter()
                        .zip(models)
                        .map(|(w, m)| Ok(w + m.log_density(&y)?))
                        .collect::<Result<Vec<f64>>>()?;
                    Ok(log_sum_exp(&terms))
                };
                Ok(mix(&self.h1)? - mix(&self.h0)?)
            }
        }
    }
}

/// Per-user detection rates of the random-access LRT, each user against its
/// own calibrated threshold. User `i` draws from substream `i` of `rng`.
pub fn detection_experiment(
    problem: &RaProblem,
    xs: &WaveformSet,
    cfg: &DetectionConfig,
    rng: SeededRng,
) -> Result<DetectionResult> {
    cfg.check()?;
    problem.check_set(xs)?;
    let users = (0..problem.n_devices())
        .map(|i| {
            let model = UserModel::new(problem, xs, i, cfg.mode)?;
            evaluate_user(|h1, r| model.draw(h1, r), cfg, rng.fork(i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(cfg, users))
}

/// Detection rate of the single-user LRT for waveform `w`.
pub fn single_user_detection(
    problem: &KldProblem,
    w: &Waveform,
    cfg: &DetectionConfig,
    rng: SeededRng,
) -> Result<DetectionResult> {
    cfg.check()?;
    let (k0, k1) = covariances(problem.scenario(), w)?;
    let (m0, m1) = (GaussianModel::new(&k0)?, GaussianModel::new(&k1)?);
    let n_rx = problem.scenario().n_rx;
    let draw = |h1: bool, r: &mut ChaCha8Rng| {
        let y = if h1 { &m1 } else { &m0 }.sample(n_rx, r);
        Ok(m1.log_density(&y)? - m0.log_density(&y)?)
    };
    Ok(assemble(cfg, vec![evaluate_user(draw, cfg, rng)?]))
}

/// Columns of the unitary `T`-point DFT, `N_t` per device in order, wrapping
/// around when `K N_t > T`, scaled to each device's budget.
pub fn orthogonal_baseline(sc: &RandomAccessScenario) -> WaveformSet {
    let t = sc.snapshots;
    let norm = 1.0 / (t as f64).sqrt();
    WaveformSet {
        x: (0..sc.n_devices)
            .map(|i| {
                let scale = (sc.budget(i) / sc.n_tx as f64).sqrt() * norm;
                Waveform::new(ComplexMatrix::from_fn(t, sc.n_tx, |r, c| {
                    let col = (i * sc.n_tx + c) % t;
                    let phase = -std::f64::consts::TAU * ((r * col) % t) as f64 / t as f64;
                    Complex64::from_polar(scale, phase)
                }))
            })
            .collect(),
    }
}
