//! Dense complex Hermitian kernels.
//!
//! Every inverse in the crate goes through a Cholesky factor and triangular
//! solves; no explicit inverse is ever formed. Kronecker-structured operators
//! `(R^T ⊗ A)` are applied through [`kron_apply`] as `A·X·R` instead of being
//! materialized.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rng::{complex_normal_matrix, SeededRng};

pub type ComplexMatrix = DMatrix<Complex64>;

/// Pivot threshold used by [`solve_pd`] and [`logdet_pd`].
pub const DEFAULT_PIVOT_TOL: f64 = 1e-13;

/// A complex Hermitian matrix, stored as `(M + M^H) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(ComplexMatrix);

impl HermitianMatrix {
    /// Absolute asymmetry accepted by [`HermitianMatrix::new`], scaled by the
    /// largest entry magnitude when that exceeds one.
    pub const ASYMMETRY_TOL: f64 = 1e-12;

    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        let mut asym = 0.0_f64;
        let mut scale = 1.0_f64;
        for j in 0..n {
            for i in 0..n {
                asym = asym.max((m[(i, j)] - m[(j, i)].conj()).norm());
                scale = scale.max(m[(i, j)].norm());
            }
        }
        if !asym.is_finite() || asym > Self::ASYMMETRY_TOL * scale {
            return Err(Error::NotHermitian { asymmetry: asym });
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetrizes without checking; for matrices Hermitian by construction
    /// such as `X R X^H`.
    pub fn symmetrize(m: ComplexMatrix) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        Self(h)
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(diag[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }))
    }

    /// `B·B^H`.
    pub fn gram(b: &ComplexMatrix) -> Self {
        Self::symmetrize(b * b.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_inner(self) -> ComplexMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.0[(i, i)].re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(&self.0 * Complex64::new(c, 0.0))
    }

    pub fn add(&self, other: &HermitianMatrix) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &HermitianMatrix) -> Self {
        Self(&self.0 - &other.0)
    }

    /// Full eigendecomposition (ascending order is not guaranteed).
    pub fn eigh(&self) -> (DVector<f64>, ComplexMatrix) {
        let e = self.0.clone().symmetric_eigen();
        (e.eigenvalues, e.eigenvectors)
    }

    /// Smallest and largest eigenvalue.
    pub fn eigen_range(&self) -> (f64, f64) {
        let (vals, _) = self.eigh();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Block-diagonal stacking `diag(self, other)`.
    pub fn block_diag(&self, other: &HermitianMatrix) -> Self {
        let (n, m) = (self.dim(), other.dim());
        let mut out = DMatrix::zeros(n + m, n + m);
        out.view_mut((0, 0), (n, n)).copy_from(&self.0);
        out.view_mut((n, n), (m, m)).copy_from(&other.0);
        Self(out)
    }
}

impl Deref for HermitianMatrix {
    type Target = ComplexMatrix;

    fn deref(&self) -> &ComplexMatrix {
        &self.0
    }
}

/// Lower-triangular Cholesky factor `L` with `L·L^H = M`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: ComplexMatrix,
}

impl Cholesky {
    /// Factors `m`, failing when a pivot drops to `rel_tol` times the largest
    /// diagonal entry or below.
    pub fn new(m: &HermitianMatrix, rel_tol: f64) -> Result<Self> {
        let n = m.dim();
        let max_diag = m.max_diagonal();
        let threshold = (rel_tol * max_diag).max(0.0);
        if n == 0 || !(max_diag > 0.0) {
            return Err(Error::NotPositiveDefinite {
                index: 0,
                pivot: if n == 0 { 0.0 } else { max_diag },
                threshold,
            });
        }
        let mut l = DMatrix::<Complex64>::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > threshold) {
                return Err(Error::NotPositiveDefinite {
                    index: j,
                    pivot: d,
                    threshold,
                });
            }
            let djj = d.sqrt();
            l[(j, j)] = Complex64::new(djj, 0.0);
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &ComplexMatrix {
        &self.l
    }

    pub fn into_factor(self) -> ComplexMatrix {
        self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// `L^{-1}·B`.
    pub fn whiten(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.check_rows(b)?;
        self.l
            .solve_lower_triangular(b)
            .ok_or_else(|| Error::ShapeMismatch("singular triangular factor".into()))
    }

    /// `M^{-1}·B` via two triangular solves.
    pub fn solve(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.solve_whitened(&self.whiten(b)?)
    }

    /// `L^{-H}·Y`, which completes [`Self::solve`] for `Y = L^{-1}·B`.
    pub fn solve_whitened(&self, y: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.check_rows(y)?;
        self.l
            .ad_solve_lower_triangular(y)
            .ok_or_else(|| Error::ShapeMismatch("singular triangular factor".into()))
    }

    /// `log|M| = 2·Σ log L_ii`.
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].re.ln()).sum::<f64>()
    }

    fn check_rows(&self, b: &ComplexMatrix) -> Result<()> {
        if b.nrows() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "right-hand side has {} rows, factor has dimension {}",
                b.nrows(),
                self.dim()
            )));
        }
        Ok(())
    }
}

pub fn cholesky_pd(m: &HermitianMatrix, rel_tol: f64) -> Result<ComplexMatrix> {
    Cholesky::new(m, rel_tol).map(Cholesky::into_factor)
}

pub fn solve_pd(m: &HermitianMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    Cholesky::new(m, DEFAULT_PIVOT_TOL)?.solve(b)
}

pub fn logdet_pd(m: &HermitianMatrix) -> Result<f64> {
    Ok(Cholesky::new(m, DEFAULT_PIVOT_TOL)?.logdet())
}

/// Outcome of a power iteration run, converged or not.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerIteration {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub last_change: f64,
}

/// Power iteration from a seeded random unit vector.
///
/// Stops when the Rayleigh quotient changes by at most `tol` relative between
/// consecutive iterations, or when the current vector is an eigenvector to
/// within `tol` relative residual. Never fails; see
/// [`power_iteration_max_eig`] for the strict variant.
pub fn power_iteration(m: &HermitianMatrix, max_iters: usize, tol: f64, seed: u64) -> PowerIteration {
    let n = m.dim();
    let mut rng = SeededRng::new(seed).generator();
    let mut v = complex_normal_matrix(&mut rng, n, 1);
    let nv = v.norm();
    v /= Complex64::new(nv, 0.0);

    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut w = DMatrix::<Complex64>::zeros(n, 1);
    let mut prev: Option<f64> = None;
    let mut change = f64::INFINITY;
    let mut rho = 0.0;
    for k in 1..=max_iters.max(1) {
        w.gemm(one, m.as_matrix(), &v, zero);
        rho = v.dotc(&w).re;
        let nw = w.norm();
        if nw == 0.0 {
            return PowerIteration {
                value: 0.0,
                iterations: k,
                converged: true,
                last_change: 0.0,
            };
        }
        let residual = w.iter().zip(v.iter()).map(|(a, b)| (a - b * rho).norm_sqr()).sum::<f64>().sqrt();
        if residual <= tol * rho.abs() {
            return PowerIteration {
                value: rho,
                iterations: k,
                converged: true,
                last_change: prev.map_or(0.0, |p| (rho - p).abs()),
            };
        }
        if let Some(p) = prev {
            change = (rho - p).abs();
            if change <= tol * rho.abs() {
                return PowerIteration {
                    value: rho,
                    iterations: k,
                    converged: true,
                    last_change: change,
                };
            }
        }
        prev = Some(rho);
        let inv = 1.0 / nw;
        v.iter_mut().zip(w.iter()).for_each(|(a, b)| *a = b * inv);
    }
    PowerIteration {
        value: rho,
        iterations: max_iters,
        converged: false,
        last_change: change,
    }
}

/// Largest eigenvalue of a Hermitian PSD matrix by power iteration.
pub fn power_iteration_max_eig(m: &HermitianMatrix, max_iters: usize, tol: f64, seed: u64) -> Result<f64> {
    let run = power_iteration(m, max_iters, tol, seed);
    if run.converged {
        Ok(run.value)
    } else {
        Err(Error::DidNotConverge {
            iterations: run.iterations,
            change: run.last_change,
        })
    }
}

/// `A·X·R`, i.e. `(R^T ⊗ A)·vec(X)` reshaped.
pub fn kron_apply(a: &HermitianMatrix, r: &HermitianMatrix, x: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.dim() != x.nrows() || r.dim() != x.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "kron_apply: A is {0}x{0}, R is {1}x{1}, X is {2}x{3}",
            a.dim(),
            r.dim(),
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(a.as_matrix() * x * r.as_matrix())
}

/// `Re⟨vec(A), vec(B)⟩ = Re Σ conj(a_ij)·b_ij`.
pub fn inner_re(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn frob_norm_sq(a: &ComplexMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Largest entry modulus.
pub fn max_abs(a: &ComplexMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Real part of the trace.
pub fn trace_re(a: &ComplexMatrix) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)].re).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_pd(n: usize, seed: u64) -> HermitianMatrix {
        let mut g = SeededRng::new(seed).generator();
        let b = complex_normal_matrix(&mut g, n, n + 2);
        HermitianMatrix::gram(&b).add(&HermitianMatrix::identity(n).scaled(0.1))
    }

    /// Dense eigenvalues straight from nalgebra, bypassing the crate kernels.
    fn oracle_eigs(m: &HermitianMatrix) -> Vec<f64> {
        let mut v: Vec<f64> = m.as_matrix().clone().symmetric_eigen().eigenvalues.iter().cloned().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn hermitian_construction_symmetrizes() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 1e-14), c(2.0, 1.0), c(2.0, -1.0), c(3.0, 0.0)]);
        let h = HermitianMatrix::new(m).unwrap();
        assert_eq!(h[(0, 0)].im, 0.0);
        assert_eq!(h[(0, 1)], h[(1, 0)].conj());
    }

    #[test]
    fn hermitian_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(HermitianMatrix::new(m), Err(Error::NotHermitian { .. })));
        let m = DMatrix::from_element(2, 3, c(0.0, 0.0));
        assert!(matches!(HermitianMatrix::new(m), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn cholesky_identity_and_diagonal() {
        let l = cholesky_pd(&HermitianMatrix::identity(3), 0.0).unwrap();
        assert_eq!(l, DMatrix::identity(3, 3));
        let l = cholesky_pd(&HermitianMatrix::from_real_diagonal(&[4.0, 9.0]), 0.0).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(3.0, 0.0)]));
    }

    #[test]
    fn cholesky_complex_two_by_two() {
        let m = HermitianMatrix::new(DMatrix::from_row_slice(
            2,
            2,
            &[c(2.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(2.0, 0.0)],
        ))
        .unwrap();
        let l = cholesky_pd(&m, 1e-12).unwrap();
        assert_eq!(l[(0, 1)], c(0.0, 0.0));
        assert!(l[(0, 0)].re > 0.0 && l[(1, 1)].re > 0.0);
        assert_eq!(l[(0, 0)].im, 0.0);
        let rec = &l * l.adjoint();
        for (a, b) in rec.iter().zip(m.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite_and_small_pivots() {
        let m = HermitianMatrix::from_real_diagonal(&[1.0, -1.0]);
        assert!(matches!(cholesky_pd(&m, 0.0), Err(Error::NotPositiveDefinite { index: 1, .. })));
        let m = HermitianMatrix::from_real_diagonal(&[1.0, 1e-12]);
        assert!(cholesky_pd(&m, 1e-10).is_err());
        assert!(cholesky_pd(&m, 1e-14).is_ok());
        assert!(cholesky_pd(&HermitianMatrix::zeros(2), 0.0).is_err());
    }

    #[test]
    fn solve_cases() {
        let b = DMatrix::from_row_slice(2, 3, &[c(1.0, 2.0), c(0.5, 0.0), c(0.0, -1.0), c(3.0, 0.0), c(1.0, 1.0), c(2.0, 2.0)]);
        assert_eq!(solve_pd(&HermitianMatrix::identity(2), &b).unwrap(), b);
        let s = solve_pd(
            &HermitianMatrix::from_real_diagonal(&[2.0, 4.0]),
            &DMatrix::from_row_slice(2, 1, &[c(2.0, 0.0), c(4.0, 0.0)]),
        )
        .unwrap();
        assert!((s - DMatrix::from_element(2, 1, c(1.0, 0.0))).norm() < 1e-15);

        let m = random_pd(4, 3);
        let mut g = SeededRng::new(4).generator();
        let b = complex_normal_matrix(&mut g, 4, 2);
        let s = solve_pd(&m, &b).unwrap();
        let res = (m.as_matrix() * &s - &b).norm() / b.norm();
        assert!(res <= 1e-10, "{res}");
        assert!(matches!(solve_pd(&m, &complex_normal_matrix(&mut g, 3, 1)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn logdet_cases() {
        assert_eq!(logdet_pd(&HermitianMatrix::identity(5)).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((logdet_pd(&HermitianMatrix::from_real_diagonal(&[e, e])).unwrap() - 2.0).abs() < 1e-15);
        for seed in 0..5 {
            let m = random_pd(3, seed);
            let oracle: f64 = oracle_eigs(&m).iter().map(|v| v.ln()).sum();
            let got = logdet_pd(&m).unwrap();
            assert!((got - oracle).abs() <= 1e-10 * oracle.abs().max(1.0), "{got} vs {oracle}");
        }
    }

    #[test]
    fn power_iteration_cases() {
        let d = HermitianMatrix::from_real_diagonal(&[1.0, 2.0, 3.0]);
        let v = power_iteration_max_eig(&d, 500, 1e-14, 1).unwrap();
        assert!((v - 3.0).abs() < 1e-8, "{v}");

        let run = power_iteration(&HermitianMatrix::identity(4), 10, 1e-12, 9);
        assert!(run.converged);
        assert_eq!(run.iterations, 1);
        assert!((run.value - 1.0).abs() < 1e-15);

        for seed in 0..4 {
            let mut g = SeededRng::new(100 + seed).generator();
            let b = complex_normal_matrix(&mut g, 8, 8);
            let m = HermitianMatrix::gram(&b);
            let top = *oracle_eigs(&m).last().unwrap();
            let got = power_iteration_max_eig(&m, 5000, 1e-13, seed).unwrap();
            assert!((got - top).abs() <= 1e-6 * top, "{got} vs {top}");
        }
    }

    #[test]
    fn power_iteration_reports_nonconvergence() {
        // Near-degenerate top pair with a tiny budget.
        let m = HermitianMatrix::from_real_diagonal(&[1.0, 0.999_999, 0.5]);
        let err = power_iteration_max_eig(&m, 3, 1e-14, 0).unwrap_err();
        assert!(matches!(err, Error::DidNotConverge { iterations: 3, .. }));
    }

    #[test]
    fn kron_apply_cases() {
        let mut g = SeededRng::new(5).generator();
        let x = complex_normal_matrix(&mut g, 2, 3);
        let id2 = HermitianMatrix::identity(2);
        let id3 = HermitianMatrix::identity(3);
        assert_eq!(kron_apply(&id2, &id3, &x).unwrap(), x);
        let r = HermitianMatrix::gram(&complex_normal_matrix(&mut g, 3, 3));
        let got = kron_apply(&id2, &r, &x).unwrap();
        assert!((got - &x * r.as_matrix()).norm() < 1e-14);
        assert!(kron_apply(&id3, &r, &x).is_err());

        // Brute-force Kronecker matrix acting on vec(X).
        let a = HermitianMatrix::gram(&complex_normal_matrix(&mut g, 2, 2));
        let r = HermitianMatrix::gram(&complex_normal_matrix(&mut g, 2, 2));
        let x = complex_normal_matrix(&mut g, 2, 2);
        let big = r.as_matrix().transpose().kronecker(a.as_matrix());
        let vx = DMatrix::from_column_slice(4, 1, x.as_slice());
        let want = big * vx;
        let got = kron_apply(&a, &r, &x).unwrap();
        for (k, w) in want.iter().enumerate() {
            assert!((got.as_slice()[k] - w).norm() < 1e-12);
        }
    }

    fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = ComplexMatrix> {
        proptest::collection::vec((-2.0..2.0f64, -2.0..2.0f64), rows * cols)
            .prop_map(move |v| DMatrix::from_iterator(rows, cols, v.into_iter().map(|(a, b)| c(a, b))))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cholesky_reconstructs(b in arb_matrix(4, 6)) {
            let m = HermitianMatrix::gram(&b).add(&HermitianMatrix::identity(4).scaled(1e-3));
            let l = cholesky_pd(&m, 1e-14).unwrap();
            let err = (&l * l.adjoint() - m.as_matrix()).norm();
            prop_assert!(err <= 1e-10 * m.norm());
            for i in 0..4 {
                prop_assert!(l[(i, i)].re > 0.0 && l[(i, i)].im == 0.0);
                for j in (i + 1)..4 {
                    prop_assert_eq!(l[(i, j)], c(0.0, 0.0));
                }
            }
        }

        #[test]
        fn logdet_is_additive_over_blocks(b1 in arb_matrix(3, 4), b2 in arb_matrix(2, 3)) {
            let a = HermitianMatrix::gram(&b1).add(&HermitianMatrix::identity(3).scaled(0.1));
            let b = HermitianMatrix::gram(&b2).add(&HermitianMatrix::identity(2).scaled(0.1));
            let lhs = logdet_pd(&a).unwrap() + logdet_pd(&b).unwrap();
            let rhs = logdet_pd(&a.block_diag(&b)).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }

        #[test]
        fn kron_apply_is_linear(a in arb_matrix(3, 3), r in arb_matrix(2, 2),
                                x in arb_matrix(3, 2), z in arb_matrix(3, 2),
                                al in -2.0..2.0f64, be in -2.0..2.0f64) {
            let a = HermitianMatrix::gram(&a);
            let r = HermitianMatrix::gram(&r);
            let (al, be) = (c(al, 0.5), c(be, -0.25));
            let lhs = kron_apply(&a, &r, &(&x * al + &z * be)).unwrap();
            let rhs = kron_apply(&a, &r, &x).unwrap() * al + kron_apply(&a, &r, &z).unwrap() * be;
            prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + a.norm() * r.norm() * (x.norm() + z.norm())));
        }

        #[test]
        fn power_iteration_bounds(b in arb_matrix(5, 5), seed in 0u64..1000) {
            let m = HermitianMatrix::gram(&b);
            let tol = 1e-10;
            if let Ok(v) = power_iteration_max_eig(&m, 2000, tol, seed) {
                let top = *oracle_eigs(&m).last().unwrap();
                prop_assert!(v <= m.trace() * (1.0 + 1e-12));
                prop_assert!(v >= m.max_diagonal() - 1e-6 * top, "{} {}", v, m.max_diagonal());
            }
        }
    }
}
