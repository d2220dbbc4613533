//! Exact objectives, surrogates and closed-form auxiliary optimizers.
//!
//! With `L L^H = R_H1 − R_0`, the reduced objective
//!
//! ```text
//! f(X) − T = log|I + (XL)^H K0^{-1} (XL)| − Tr((XL)^H K1^{-1} (XL))
//! ```
//!
//! is minorized by `f_q(X, Γ, Ψ)`, which is tight at `Γ* = (XL)^H K0^{-1} (XL)`
//! and `Ψ* = K1^{-1} X L`. [`f_h_eval`] replaces the quadratic term of `f_q`
//! by an isotropic bound that is tight at `z = x`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{inner_re, kron_apply, logdet_pd, solve_pd, trace_re, Cholesky, ComplexMatrix, HermitianMatrix, DEFAULT_PIVOT_TOL};
use crate::scenario::{covariances, DifferenceFactor, KldProblem, SensingScenario, Waveform};

/// `N_r (log|K1| − log|K0| + Tr(K1^{-1} K0)) − N_r T`.
pub fn kld_from_cov(k0: &HermitianMatrix, k1: &HermitianMatrix, n_rx: usize, snapshots: usize) -> Result<f64> {
    if k0.dim() != snapshots || k1.dim() != snapshots {
        return Err(Error::ShapeMismatch(format!(
            "covariances are {}x{} and {}x{}, expected {snapshots}",
            k0.dim(),
            k0.dim(),
            k1.dim(),
            k1.dim()
        )));
    }
    let c1 = Cholesky::new(k1, DEFAULT_PIVOT_TOL)?;
    let ld0 = logdet_pd(k0)?;
    let tr = trace_re(&c1.solve(k0.as_matrix())?);
    let nr = n_rx as f64;
    Ok(nr * (c1.logdet() - ld0 + tr) - nr * snapshots as f64)
}

/// `f(X) = log|K0^{-1} K1| + Tr(K1^{-1} K0)`.
pub fn f_obj(sc: &SensingScenario, w: &Waveform) -> Result<f64> {
    let (k0, k1) = covariances(sc, w)?;
    Ok(kld_from_cov(&k0, &k1, 1, sc.snapshots)? + sc.snapshots as f64)
}

/// `Γ* = (XL)^H K0^{-1} (XL)`.
pub fn gamma_star(w: &Waveform, l: &DifferenceFactor, k0: &HermitianMatrix) -> Result<HermitianMatrix> {
    let xl = w.x() * &l.l;
    let c0 = Cholesky::new(k0, DEFAULT_PIVOT_TOL)?;
    Ok(HermitianMatrix::gram(&c0.whiten(&xl)?.adjoint()))
}

/// `Ψ* = K1^{-1} X L`.
pub fn psi_star(w: &Waveform, l: &DifferenceFactor, k1: &HermitianMatrix) -> Result<ComplexMatrix> {
    solve_pd(k1, &(w.x() * &l.l))
}

/// The auxiliaries `Γ` (`N_t × N_t`, PSD) and `Ψ` (`T × N_t`).
#[derive(Clone, Debug, PartialEq)]
pub struct AuxiliaryVariables {
    pub gamma: HermitianMatrix,
    pub psi: ComplexMatrix,
}

impl AuxiliaryVariables {
    /// `A = Ψ Γ Ψ^H`.
    pub fn a(&self) -> HermitianMatrix {
        HermitianMatrix::symmetrize(&self.psi * self.gamma.as_matrix() * self.psi.adjoint())
    }

    /// `B = Ψ Γ L^H`.
    pub fn b(&self, l: &ComplexMatrix) -> ComplexMatrix {
        &self.psi * self.gamma.as_matrix() * l.adjoint()
    }
}

/// Objective value at `X` together with the factorizations that produced it.
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// `f(X)`.
    pub value: f64,
    pub xl: ComplexMatrix,
    /// `L1^{-1} X L` with `K1 = L1 L1^H`.
    pub w1: ComplexMatrix,
    pub chol0: Cholesky,
    pub chol1: Cholesky,
}

impl Evaluation {
    pub fn new(problem: &KldProblem, w: &Waveform) -> Result<Self> {
        let sc = problem.scenario();
        let (k0, k1) = covariances(sc, w)?;
        let chol0 = Cholesky::new(&k0, DEFAULT_PIVOT_TOL)?;
        let chol1 = Cholesky::new(&k1, DEFAULT_PIVOT_TOL)?;
        let xl = w.x() * problem.l();
        // Tr(K1^{-1} K0) = T − Tr((XL)^H K1^{-1} XL).
        let w1 = chol1.whiten(&xl)?;
        let value = chol1.logdet() - chol0.logdet() + sc.snapshots as f64 - w1.norm_squared();
        Ok(Self {
            value,
            xl,
            w1,
            chol0,
            chol1,
        })
    }

    /// `(Γ*, Ψ*)` at the evaluated point.
    pub fn aux(&self) -> Result<AuxiliaryVariables> {
        Ok(self.aux_with_root()?.0)
    }

    /// `(Γ*, Ψ*)` and a square root `G` with `Γ* = G^H G`
    /// (`min(T, N_t) × N_t`).
    pub fn aux_with_root(&self) -> Result<(AuxiliaryVariables, ComplexMatrix)> {
        let w0 = self.chol0.whiten(&self.xl)?;
        let gamma = HermitianMatrix::gram(&w0.adjoint());
        let root = w0.qr().r();
        Ok((
            AuxiliaryVariables {
                gamma,
                psi: self.chol1.solve_whitened(&self.w1)?,
            },
            root,
        ))
    }
}

/// Optimal auxiliaries at `X`.
pub fn aux_star(problem: &KldProblem, w: &Waveform) -> Result<AuxiliaryVariables> {
    Evaluation::new(problem, w)?.aux()
}

fn log_det_i_plus(gamma: &HermitianMatrix) -> Result<f64> {
    logdet_pd(&HermitianMatrix::identity(gamma.dim()).add(gamma))
}

/// The part of `f_q` that does not depend on `X`.
fn f_q_constant(sc: &SensingScenario, aux: &AuxiliaryVariables) -> Result<f64> {
    let a = aux.a();
    Ok(log_det_i_plus(&aux.gamma)? - aux.gamma.trace() - trace_re(&(sc.r_noise.as_matrix() * a.as_matrix())))
}

/// Quadratic surrogate
/// `log|I+Γ| − Tr Γ − Tr(Ψ^H R_N Ψ Γ) + 2 Re Tr(Γ Ψ^H X L) − Tr(X R_H1 X^H Ψ Γ Ψ^H)`.
///
/// Tight against `f(X) − T` at the optimal auxiliaries.
pub fn f_q_eval(problem: &KldProblem, w: &Waveform, aux: &AuxiliaryVariables) -> Result<f64> {
    let sc = problem.scenario();
    sc.check_waveform(w)?;
    let x = w.x();
    let a = aux.a();
    let b = aux.b(problem.l());
    let quad = inner_re(x, &kron_apply(&a, problem.r_h1(), x)?);
    Ok(f_q_constant(sc, aux)? + 2.0 * inner_re(&b, x) - quad)
}

/// Nonhomogeneous surrogate of `f_q` with expansion point `z` and curvature
/// `lambda_bar`.
pub fn f_h_eval(
    problem: &KldProblem,
    w: &Waveform,
    aux: &AuxiliaryVariables,
    z: &ComplexMatrix,
    lambda_bar: f64,
) -> Result<f64> {
    let sc = problem.scenario();
    sc.check_waveform(w)?;
    if z.shape() != w.x().shape() {
        return Err(Error::ShapeMismatch("expansion point and waveform differ in shape".into()));
    }
    let x = w.x();
    let a = aux.a();
    let b = aux.b(problem.l());
    let az = kron_apply(&a, problem.r_h1(), z)?;
    let lz_minus_az = z * Complex64::new(lambda_bar, 0.0) - &az;
    Ok(f_q_constant(sc, aux)? + 2.0 * inner_re(x, &b) + 2.0 * inner_re(x, &lz_minus_az) - inner_re(z, &lz_minus_az)
        - lambda_bar * x.norm_squared())
}

fn check_channel(h_c: &ComplexMatrix, r_nc: &HermitianMatrix, w: &Waveform) -> Result<()> {
    if h_c.ncols() != w.rows() || h_c.nrows() != r_nc.dim() {
        return Err(Error::ShapeMismatch(format!(
            "channel is {}x{}, noise {}x{}, waveform has {} rows",
            h_c.nrows(),
            h_c.ncols(),
            r_nc.dim(),
            r_nc.dim(),
            w.rows()
        )));
    }
    Ok(())
}

/// `log|I + (H_c X)^H R_nc^{-1} (H_c X)|`.
pub fn mi_eval(h_c: &ComplexMatrix, r_nc: &HermitianMatrix, w: &Waveform) -> Result<f64> {
    check_channel(h_c, r_nc, w)?;
    let cr = Cholesky::new(r_nc, DEFAULT_PIVOT_TOL)?;
    let v = cr.whiten(&(h_c * w.x()))?;
    log_det_i_plus(&HermitianMatrix::gram(&v.adjoint()))
}

/// Communication auxiliaries `Γ_c` (`N_t × N_t`) and `Ψ_c` (`N_c × N_t`).
#[derive(Clone, Debug, PartialEq)]
pub struct CommAuxiliaries {
    pub gamma_c: HermitianMatrix,
    pub psi_c: ComplexMatrix,
}

impl CommAuxiliaries {
    /// `C = H_c^H Ψ_c (I + Γ_c) Ψ_c^H H_c`.
    pub fn c(&self, h_c: &ComplexMatrix) -> HermitianMatrix {
        let g = HermitianMatrix::identity(self.gamma_c.dim()).add(&self.gamma_c);
        let hp = h_c.adjoint() * &self.psi_c;
        HermitianMatrix::symmetrize(&hp * g.as_matrix() * hp.adjoint())
    }

    /// `D = H_c^H Ψ_c (I + Γ_c)`.
    pub fn d(&self, h_c: &ComplexMatrix) -> ComplexMatrix {
        let g = HermitianMatrix::identity(self.gamma_c.dim()).add(&self.gamma_c);
        h_c.adjoint() * &self.psi_c * g.as_matrix()
    }
}

/// Optimal communication auxiliaries at `X`:
/// `Γ_c = (H_c X)^H R_nc^{-1} (H_c X)` and
/// `Ψ_c = (H_c X X^H H_c^H + R_nc)^{-1} H_c X`.
pub fn comm_aux_star(h_c: &ComplexMatrix, r_nc: &HermitianMatrix, w: &Waveform) -> Result<CommAuxiliaries> {
    check_channel(h_c, r_nc, w)?;
    let m = h_c * w.x();
    let cr = Cholesky::new(r_nc, DEFAULT_PIVOT_TOL)?;
    let gamma_c = HermitianMatrix::gram(&cr.whiten(&m)?.adjoint());
    let s = HermitianMatrix::gram(&m).add(r_nc);
    let psi_c = solve_pd(&s, &m)?;
    Ok(CommAuxiliaries { gamma_c, psi_c })
}

/// Quadratic surrogate of the mutual information, tight at [`comm_aux_star`].
pub fn f_cq_eval(h_c: &ComplexMatrix, r_nc: &HermitianMatrix, w: &Waveform, aux: &CommAuxiliaries) -> Result<f64> {
    check_channel(h_c, r_nc, w)?;
    let m = h_c * w.x();
    let g = HermitianMatrix::identity(aux.gamma_c.dim()).add(&aux.gamma_c);
    let psi = &aux.psi_c;
    let s = HermitianMatrix::gram(&m).add(r_nc);
    let lin = trace_re(&(g.as_matrix() * psi.adjoint() * &m));
    let quad = trace_re(&(g.as_matrix() * psi.adjoint() * s.as_matrix() * psi));
    Ok(log_det_i_plus(&aux.gamma_c)? - aux.gamma_c.trace() + 2.0 * lin - quad)
}

/// Zero auxiliaries of the right shapes.
pub fn zero_aux(snapshots: usize, n_tx: usize) -> AuxiliaryVariables {
    AuxiliaryVariables {
        gamma: HermitianMatrix::zeros(n_tx),
        psi: DMatrix::zeros(snapshots, n_tx),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_normal_matrix, SeededRng};
    use crate::scenario::{generate_scenario, init_waveform, validate, GeneratorConfig, InitKind};
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn scalar(v: f64) -> HermitianMatrix {
        HermitianMatrix::from_real_diagonal(&[v])
    }

    fn problem(seed: u64) -> KldProblem {
        KldProblem::new(generate_scenario(&GeneratorConfig::with_dims(3, 2, 5), seed).unwrap()).unwrap()
    }

    #[test]
    fn kld_closed_forms() {
        assert_eq!(kld_from_cov(&HermitianMatrix::identity(3), &HermitianMatrix::identity(3), 4, 3).unwrap(), 0.0);
        let v = kld_from_cov(&scalar(1.0), &scalar(2.0), 1, 1).unwrap();
        assert!((v - (2f64.ln() + 0.5 - 1.0)).abs() < 1e-15);
        assert!((v - 0.19314718).abs() < 1e-8);
    }

    #[test]
    fn f_obj_cases() {
        let p = problem(1);
        let sc = p.scenario();
        let z = Waveform::zeros(sc.snapshots, sc.n_tx);
        assert!((f_obj(sc, &z).unwrap() - sc.snapshots as f64).abs() < 1e-12);

        let (a, b, s2, x) = (0.4, 2.5, 0.3, 0.9);
        let sc1 = SensingScenario {
            n_tx: 1,
            n_rx: 1,
            snapshots: 1,
            power_budget: 1.0,
            r_target: scalar(b),
            r_clutter0: scalar(a),
            r_clutter1: scalar(0.0),
            r_noise: scalar(s2),
        };
        let w = Waveform::new(DMatrix::from_element(1, 1, c(x)));
        let want = ((b * x * x + s2) / (a * x * x + s2)).ln() + (a * x * x + s2) / (b * x * x + s2);
        assert!((f_obj(&sc1, &w).unwrap() - want).abs() < 1e-14);

        let w = init_waveform(sc, 2, InitKind::RandomGaussian);
        let (k0, k1) = covariances(sc, &w).unwrap();
        let via_kld = kld_from_cov(&k0, &k1, sc.n_rx, sc.snapshots).unwrap() / sc.n_rx as f64 + sc.snapshots as f64;
        assert!((f_obj(sc, &w).unwrap() - via_kld).abs() < 1e-10);
        assert!((Evaluation::new(&p, &w).unwrap().value - via_kld).abs() < 1e-10);
    }

    #[test]
    fn auxiliary_cases() {
        let p = problem(2);
        let sc = p.scenario();
        let z = Waveform::zeros(sc.snapshots, sc.n_tx);
        let (k0, k1) = covariances(sc, &z).unwrap();
        assert_eq!(gamma_star(&z, p.factor(), &k0).unwrap(), HermitianMatrix::zeros(sc.n_tx));
        assert_eq!(psi_star(&z, p.factor(), &k1).unwrap(), DMatrix::zeros(sc.snapshots, sc.n_tx));

        let w = init_waveform(sc, 3, InitKind::RandomGaussian);
        let xl = w.x() * p.l();
        let eye = HermitianMatrix::identity(sc.snapshots);
        let g = gamma_star(&w, p.factor(), &eye).unwrap();
        assert!((g.as_matrix() - xl.adjoint() * &xl).norm() < 1e-12);
        assert!((psi_star(&w, p.factor(), &eye).unwrap() - &xl).norm() < 1e-12);

        let (k0, k1) = covariances(sc, &w).unwrap();
        let g = gamma_star(&w, p.factor(), &k0).unwrap();
        let (lo, hi) = g.eigen_range();
        assert!(lo >= -1e-10 * hi.max(1.0));
        let psi = psi_star(&w, p.factor(), &k1).unwrap();
        assert!((k1.as_matrix() * &psi - &xl).norm() <= 1e-10 * xl.norm());

        let aux = Evaluation::new(&p, &w).unwrap().aux().unwrap();
        assert!((aux.gamma.as_matrix() - g.as_matrix()).norm() < 1e-10);
        assert!((&aux.psi - &psi).norm() < 1e-10);
    }

    #[test]
    fn f_q_cases() {
        let p = problem(4);
        let sc = p.scenario();
        let mut g = SeededRng::new(7).generator();
        let w = init_waveform(sc, 5, InitKind::RandomGaussian);
        let aux = AuxiliaryVariables {
            gamma: HermitianMatrix::zeros(sc.n_tx),
            psi: complex_normal_matrix(&mut g, sc.snapshots, sc.n_tx),
        };
        assert!(f_q_eval(&p, &w, &aux).unwrap().abs() < 1e-14);

        let aux = aux_star(&p, &w).unwrap();
        let f = f_obj(sc, &w).unwrap() - sc.snapshots as f64;
        assert!((f_q_eval(&p, &w, &aux).unwrap() - f).abs() <= 1e-8 * f.abs().max(1.0));
    }

    #[test]
    fn f_h_cases() {
        let p = problem(6);
        let sc = p.scenario();
        let w = init_waveform(sc, 1, InitKind::RandomGaussian);
        let aux = aux_star(&p, &w).unwrap();
        let lb = 1.01 * aux.a().eigen_range().1 * p.r_h1_lambda_max() + 1e-6;
        let fq = f_q_eval(&p, &w, &aux).unwrap();
        let fh = f_h_eval(&p, &w, &aux, w.x(), lb).unwrap();
        assert!((fh - fq).abs() <= 1e-8 * fq.abs().max(1.0));

        let mut g = SeededRng::new(2).generator();
        let z = complex_normal_matrix(&mut g, sc.snapshots, sc.n_tx);
        assert!(f_h_eval(&p, &w, &aux, &z, lb).unwrap() <= fq + 1e-8);

        let delta = 0.37;
        let zero = zero_aux(sc.snapshots, sc.n_tx);
        let got = f_h_eval(&p, &w, &zero, &z, delta).unwrap();
        let want = -delta * (w.x() - &z).norm_squared();
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn mi_cases() {
        let mut g = SeededRng::new(3).generator();
        let (nc, t, n) = (3, 4, 2);
        let w = Waveform::new(complex_normal_matrix(&mut g, t, n));
        let h = complex_normal_matrix(&mut g, nc, t);
        let r = HermitianMatrix::gram(&complex_normal_matrix(&mut g, nc, nc)).add(&HermitianMatrix::identity(nc));
        assert_eq!(mi_eval(&h, &r, &Waveform::zeros(t, n)).unwrap(), 0.0);

        let eye = DMatrix::identity(t, t);
        let got = mi_eval(&eye, &HermitianMatrix::identity(t), &w).unwrap();
        let want = logdet_pd(&HermitianMatrix::identity(n).add(&HermitianMatrix::gram(&w.x().adjoint()))).unwrap();
        assert!((got - want).abs() < 1e-12);

        // Dual determinant: log|I_Nc + R^{-1} H X X^H H^H| via eigenvalues of the
        // non-Hermitian product, which are those of R^{-1/2} H X X^H H^H R^{-1/2}.
        let hx = &h * w.x();
        let prod = solve_pd(&r, &(&hx * hx.adjoint())).unwrap() + DMatrix::identity(nc, nc);
        let dual = prod.determinant().ln().re;
        assert!((mi_eval(&h, &r, &w).unwrap() - dual).abs() < 1e-10);
        assert!(mi_eval(&h, &r, &Waveform::zeros(t + 1, n)).is_err());
    }

    #[test]
    fn comm_aux_cases() {
        let (x, s2) = (Complex64::new(0.6, 0.8), 0.5);
        let h = DMatrix::from_element(1, 1, c(1.0));
        let r = scalar(s2);
        let w = Waveform::new(DMatrix::from_element(1, 1, x));
        let aux = comm_aux_star(&h, &r, &w).unwrap();
        assert!((aux.gamma_c[(0, 0)].re - x.norm_sqr() / s2).abs() < 1e-14);
        assert!((aux.psi_c[(0, 0)] - x / (x.norm_sqr() + s2)).norm() < 1e-14);

        let zero = comm_aux_star(&h, &r, &Waveform::zeros(1, 1)).unwrap();
        assert_eq!(zero.gamma_c, HermitianMatrix::zeros(1));
        assert_eq!(zero.psi_c, DMatrix::zeros(1, 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn kld_nonnegative_and_scale_invariant(seed in any::<u64>(), scale in 0.01..100.0f64) {
            let mut g = SeededRng::new(seed).generator();
            let k0 = HermitianMatrix::gram(&complex_normal_matrix(&mut g, 3, 4)).add(&HermitianMatrix::identity(3).scaled(0.05));
            let k1 = HermitianMatrix::gram(&complex_normal_matrix(&mut g, 3, 4)).add(&HermitianMatrix::identity(3).scaled(0.05));
            let d = kld_from_cov(&k0, &k1, 2, 3).unwrap();
            prop_assert!(d >= -1e-9);
            let ds = kld_from_cov(&k0.scaled(scale), &k1.scaled(scale), 2, 3).unwrap();
            prop_assert!((d - ds).abs() <= 1e-9 * d.abs().max(1.0));
        }

        #[test]
        fn surrogate_chain(seed in any::<u64>(), wseed in any::<u64>(), zseed in any::<u64>()) {
            let p = problem(seed);
            let sc = p.scenario();
            let reduced = |w: &Waveform| f_obj(sc, w).unwrap() - sc.snapshots as f64;
            let w0 = init_waveform(sc, wseed, InitKind::RandomGaussian);
            let aux = aux_star(&p, &w0).unwrap();
            let mut g = SeededRng::new(zseed).generator();
            let x = Waveform::new(complex_normal_matrix(&mut g, sc.snapshots, sc.n_tx)).scaled_to_power(sc.power_budget);
            let z = complex_normal_matrix(&mut g, sc.snapshots, sc.n_tx);
            let lb = aux.a().eigen_range().1 * p.r_h1_lambda_max() * (1.0 + 1e-6) + 1e-12;
            let fq = f_q_eval(&p, &x, &aux).unwrap();
            let fh = f_h_eval(&p, &x, &aux, &z, lb).unwrap();
            let f = reduced(&x);
            prop_assert!(fh <= fq + 1e-8 * fq.abs().max(1.0));
            prop_assert!(fq <= f + 1e-8 * f.abs().max(1.0));
        }

        #[test]
        fn comm_surrogate_is_tight(seed in any::<u64>()) {
            let mut g = SeededRng::new(seed).generator();
            let (nc, t, n) = (3, 5, 2);
            let w = Waveform::new(complex_normal_matrix(&mut g, t, n));
            let h = complex_normal_matrix(&mut g, nc, t);
            let r = HermitianMatrix::gram(&complex_normal_matrix(&mut g, nc, nc)).add(&HermitianMatrix::identity(nc).scaled(0.2));
            let mi = mi_eval(&h, &r, &w).unwrap();
            let aux = comm_aux_star(&h, &r, &w).unwrap();
            let fcq = f_cq_eval(&h, &r, &w, &aux).unwrap();
            prop_assert!(mi >= 0.0);
            prop_assert!((fcq - mi).abs() <= 1e-8 * mi.max(1.0));
            let w2 = Waveform::new(complex_normal_matrix(&mut g, t, n));
            prop_assert!(f_cq_eval(&h, &r, &w2, &aux).unwrap() <= mi_eval(&h, &r, &w2).unwrap() + 1e-8);
        }
    }

    #[test]
    fn validate_matches_problem_factor() {
        let p = problem(9);
        assert_eq!(&validate(p.scenario()).unwrap(), p.factor());
    }
}
