//! Sensing problem data, validation and synthetic generation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, ComplexMatrix, HermitianMatrix, DEFAULT_PIVOT_TOL};
use crate::rng::{complex_normal_matrix, SeededRng};

/// Relative eigenvalue floor for positive definiteness checks.
pub const PD_REL_TOL: f64 = 1e-10;

/// Statistics of the two hypotheses and the problem dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingScenario {
    pub n_tx: usize,
    pub n_rx: usize,
    pub snapshots: usize,
    pub power_budget: f64,
    /// `R_H`, `N_t × N_t`.
    pub r_target: HermitianMatrix,
    /// `R_0`, `N_t × N_t`.
    pub r_clutter0: HermitianMatrix,
    /// `R_1`, `N_t × N_t`.
    pub r_clutter1: HermitianMatrix,
    /// `R_N`, `T × T`.
    pub r_noise: HermitianMatrix,
}

impl SensingScenario {
    /// `R_H1 = R_H + R_1`.
    pub fn r_h1(&self) -> HermitianMatrix {
        self.r_target.add(&self.r_clutter1)
    }

    /// `R_H1 − R_0`.
    pub fn difference(&self) -> HermitianMatrix {
        self.r_h1().sub(&self.r_clutter0)
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 || self.snapshots == 0 {
            return Err(Error::InvalidParameter("all dimensions must be at least 1".into()));
        }
        if !(self.power_budget > 0.0) || !self.power_budget.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "power budget must be positive, got {}",
                self.power_budget
            )));
        }
        for (name, m, n) in [
            ("r_target", &self.r_target, self.n_tx),
            ("r_clutter0", &self.r_clutter0, self.n_tx),
            ("r_clutter1", &self.r_clutter1, self.n_tx),
            ("r_noise", &self.r_noise, self.snapshots),
        ] {
            if m.dim() != n {
                return Err(Error::ShapeMismatch(format!("{name} is {0}x{0}, expected {n}x{n}", m.dim())));
            }
        }
        Ok(())
    }

    pub fn check_waveform(&self, w: &Waveform) -> Result<()> {
        if w.rows() != self.snapshots || w.cols() != self.n_tx {
            return Err(Error::ShapeMismatch(format!(
                "waveform is {}x{}, expected {}x{}",
                w.rows(),
                w.cols(),
                self.snapshots,
                self.n_tx
            )));
        }
        Ok(())
    }
}

/// Transmit waveform `X`, `T × N_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    x: ComplexMatrix,
}

impl Waveform {
    pub fn new(x: ComplexMatrix) -> Self {
        Self { x }
    }

    pub fn zeros(snapshots: usize, n_tx: usize) -> Self {
        Self {
            x: DMatrix::zeros(snapshots, n_tx),
        }
    }

    pub fn x(&self) -> &ComplexMatrix {
        &self.x
    }

    pub fn into_inner(self) -> ComplexMatrix {
        self.x
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn cols(&self) -> usize {
        self.x.ncols()
    }

    /// `Tr(X X^H)`.
    pub fn power(&self) -> f64 {
        self.x.norm_squared()
    }

    /// Rescales to `Tr(X X^H) = power`; the zero waveform is returned as is.
    pub fn scaled_to_power(&self, power: f64) -> Self {
        let n = self.x.norm();
        if n == 0.0 {
            return self.clone();
        }
        Self {
            x: &self.x * Complex64::new(power.sqrt() / n, 0.0),
        }
    }
}

/// Lower-triangular `L` with `L L^H = R_H1 − R_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceFactor {
    pub l: ComplexMatrix,
}

fn is_psd(m: &HermitianMatrix) -> bool {
    let (lo, hi) = m.eigen_range();
    lo >= -PD_REL_TOL * hi.abs().max(f64::MIN_POSITIVE)
}

/// Checks every scenario invariant and returns the difference factor.
pub fn validate(sc: &SensingScenario) -> Result<DifferenceFactor> {
    sc.check_shapes()?;
    Cholesky::new(&sc.r_noise, DEFAULT_PIVOT_TOL).map_err(|_| Error::SingularNoise)?;
    for (name, m) in [
        ("r_target", &sc.r_target),
        ("r_clutter0", &sc.r_clutter0),
        ("r_clutter1", &sc.r_clutter1),
    ] {
        if !is_psd(m) {
            return Err(Error::InvalidParameter(format!("{name} is not positive semidefinite")));
        }
    }
    let diff = sc.difference();
    let (lo, hi) = diff.eigen_range();
    if !(hi > 0.0) || lo <= PD_REL_TOL * hi {
        return Err(Error::IllPosedDetection);
    }
    let l = Cholesky::new(&diff, DEFAULT_PIVOT_TOL)
        .map_err(|_| Error::IllPosedDetection)?
        .into_factor();
    Ok(DifferenceFactor { l })
}

/// `(K0, K1) = (X R0 X^H + R_N, X R_H1 X^H + R_N)`.
pub fn covariances(sc: &SensingScenario, w: &Waveform) -> Result<(HermitianMatrix, HermitianMatrix)> {
    sc.check_waveform(w)?;
    let x = w.x();
    let k0 = HermitianMatrix::symmetrize(x * sc.r_clutter0.as_matrix() * x.adjoint()).add(&sc.r_noise);
    let k1 = HermitianMatrix::symmetrize(x * sc.r_h1().as_matrix() * x.adjoint()).add(&sc.r_noise);
    Ok((k0, k1))
}

/// Real exponential-correlation matrix `R[m, n] = rho^{|m − n|}`.
pub fn exponential_correlation(n: usize, rho: f64) -> HermitianMatrix {
    HermitianMatrix::symmetrize(DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(rho.powi((i as i32 - j as i32).abs()), 0.0)
    }))
}

/// Noise variance for a given SNR with `Tr(R_H) = N_t`.
pub fn noise_variance(power_budget: f64, n_tx: usize, snr_db: f64) -> f64 {
    power_budget / (n_tx as f64 * 10f64.powf(snr_db / 10.0))
}

/// Parameters of the synthetic scenario generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub snapshots: usize,
    pub power_budget: f64,
    pub snr_db: f64,
    /// Target correlation coefficient `rho_c`.
    pub target_rho: f64,
    /// Clutter correlation coefficients are drawn uniformly from `[0, clutter_rho_max)`.
    pub clutter_rho_max: f64,
    /// `Tr(R_0) / Tr(R_H)`.
    pub clutter0_ratio: f64,
    /// `Tr(R_1) / Tr(R_H)`.
    pub clutter1_ratio: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_tx: 4,
            n_rx: 4,
            snapshots: 8,
            power_budget: 4.0,
            snr_db: 7.0,
            target_rho: 0.5,
            clutter_rho_max: 0.5,
            clutter0_ratio: 0.1,
            clutter1_ratio: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn with_dims(n_tx: usize, n_rx: usize, snapshots: usize) -> Self {
        Self {
            n_tx,
            n_rx,
            snapshots,
            power_budget: n_tx as f64,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGenerator(m));
        if self.n_tx == 0 || self.n_rx == 0 || self.snapshots == 0 {
            return bad("dimensions must be at least 1".into());
        }
        if !(self.power_budget > 0.0 && self.power_budget.is_finite()) {
            return bad(format!("power_budget must be positive, got {}", self.power_budget));
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite".into());
        }
        if !(0.0..1.0).contains(&self.target_rho) {
            return bad(format!("target_rho must lie in [0, 1), got {}", self.target_rho));
        }
        if !(0.0..=1.0).contains(&self.clutter_rho_max) {
            return bad(format!("clutter_rho_max must lie in [0, 1], got {}", self.clutter_rho_max));
        }
        if !(self.clutter0_ratio >= 0.0 && self.clutter1_ratio >= 0.0) {
            return bad("clutter ratios must be nonnegative".into());
        }
        Ok(())
    }
}

/// Draws a seeded scenario from the exponential-correlation model.
pub fn generate_scenario(gen: &GeneratorConfig, seed: u64) -> Result<SensingScenario> {
    use rand::Rng;

    gen.check()?;
    let mut rng = SeededRng::new(seed).fork(0x5CE1).generator();
    let rho0: f64 = gen.clutter_rho_max * rng.random::<f64>();
    let rho1: f64 = gen.clutter_rho_max * rng.random::<f64>();
    let n = gen.n_tx;
    let sigma2 = noise_variance(gen.power_budget, n, gen.snr_db);
    let sc = SensingScenario {
        n_tx: n,
        n_rx: gen.n_rx,
        snapshots: gen.snapshots,
        power_budget: gen.power_budget,
        r_target: exponential_correlation(n, gen.target_rho),
        r_clutter0: exponential_correlation(n, rho0).scaled(gen.clutter0_ratio),
        r_clutter1: exponential_correlation(n, rho1).scaled(gen.clutter1_ratio),
        r_noise: HermitianMatrix::identity(gen.snapshots).scaled(sigma2),
    };
    match validate(&sc) {
        Ok(_) => Ok(sc),
        Err(e) => Err(Error::InvalidGenerator(format!("generated scenario is invalid: {e}"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    RandomGaussian,
    ScaledIdentityBlock,
}

/// Starting waveform with `Tr(X X^H) = P_t`.
pub fn init_waveform(sc: &SensingScenario, seed: u64, kind: InitKind) -> Waveform {
    init_waveform_dims(sc.snapshots, sc.n_tx, sc.power_budget, seed, kind)
}

pub fn init_waveform_dims(snapshots: usize, n_tx: usize, power: f64, seed: u64, kind: InitKind) -> Waveform {
    let x = match kind {
        InitKind::RandomGaussian => {
            let mut rng = SeededRng::new(seed).fork(0x1417).generator();
            complex_normal_matrix(&mut rng, snapshots, n_tx)
        }
        InitKind::ScaledIdentityBlock => DMatrix::identity(snapshots, n_tx),
    };
    Waveform::new(x).scaled_to_power(power)
}

/// A validated scenario with the quantities every solver reuses.
#[derive(Clone, Debug)]
pub struct KldProblem {
    scenario: SensingScenario,
    factor: DifferenceFactor,
    r_h1: HermitianMatrix,
    r_h1_eigenvalues: DVector<f64>,
    r_h1_eigenvectors: ComplexMatrix,
    r_h1_lambda_max: f64,
}

impl KldProblem {
    pub fn new(scenario: SensingScenario) -> Result<Self> {
        let factor = validate(&scenario)?;
        let r_h1 = scenario.r_h1();
        let (vals, vecs) = r_h1.eigh();
        let r_h1_lambda_max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            scenario,
            factor,
            r_h1,
            r_h1_eigenvalues: vals,
            r_h1_eigenvectors: vecs,
            r_h1_lambda_max,
        })
    }

    pub fn scenario(&self) -> &SensingScenario {
        &self.scenario
    }

    pub fn factor(&self) -> &DifferenceFactor {
        &self.factor
    }

    pub fn l(&self) -> &ComplexMatrix {
        &self.factor.l
    }

    pub fn r_h1(&self) -> &HermitianMatrix {
        &self.r_h1
    }

    pub fn r_h1_eigen(&self) -> (&DVector<f64>, &ComplexMatrix) {
        (&self.r_h1_eigenvalues, &self.r_h1_eigenvectors)
    }

    pub fn r_h1_lambda_max(&self) -> f64 {
        self.r_h1_lambda_max
    }

    pub fn power_budget(&self) -> f64 {
        self.scenario.power_budget
    }
}
