//! Steffensen-type extrapolation of a monotone fixed-point map.

use std::cell::RefCell;
use std::time::Instant;

use num_complex::Complex64;

use crate::error::Result;
use crate::linalg::{frob_norm_sq, inner_re, ComplexMatrix};
use crate::objective::Evaluation;
use crate::scenario::{KldProblem, Waveform};
use crate::solvers::{check_start, has_converged, mm_step, SolverOptions, SolverTrace, Status};

/// Default bound on step-size halvings per accelerated step.
pub const DEFAULT_MAX_BACKTRACKS: usize = 50;

/// Curvature threshold relative to `⟨Δ, Δ⟩` below which no step is taken.
const DEGENERATE_CURVATURE: f64 = 1e-14;

/// A map `M` whose iterates ascend `objective`, with a projection `P` onto
/// the feasible set.
pub trait FixedPointProblem {
    fn map(&self, x: &Waveform) -> Result<Waveform>;
    fn objective(&self, x: &Waveform) -> Result<f64>;
    fn project(&self, x: &Waveform) -> Waveform;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StemOutcome {
    /// The extrapolated candidate was accepted.
    Candidate,
    /// Every candidate decreased the objective; `Θ₁` was returned.
    Fallback,
    /// `⟨Δ, W⟩` vanished; `Θ₁` was returned with `γ = −1`.
    DegenerateCurvature,
    /// Backtracking disabled; `Θ₂` was returned.
    Unaccelerated,
}

#[derive(Clone, Debug)]
pub struct StemState {
    pub theta1: Waveform,
    pub theta2: Waveform,
    /// `Δ = Θ₁ − x`.
    pub delta: ComplexMatrix,
    /// `W = Θ₂ − 2Θ₁ + x`.
    pub w_res: ComplexMatrix,
    pub gamma: f64,
    pub backtracks: usize,
    pub outcome: StemOutcome,
}

/// `x − γ Δ`.
pub fn stem_candidate(x: &Waveform, delta: &ComplexMatrix, gamma: f64) -> Waveform {
    Waveform::new(x.x() - delta * Complex64::new(gamma, 0.0))
}

/// One accelerated step from `x`, whose objective value is `f_x`.
///
/// Returns the accepted point, its objective value and the step record.
/// With `max_backtracks = 0` no candidate is tried and `Θ₂` is accepted.
pub fn stem_step_from<P: FixedPointProblem + ?Sized>(
    problem: &P,
    x: &Waveform,
    f_x: f64,
    max_backtracks: usize,
) -> Result<(Waveform, f64, StemState)> {
    let theta1 = problem.map(x)?;
    let theta2 = problem.map(&theta1)?;
    let delta = theta1.x() - x.x();
    let w_res = theta2.x() - theta1.x() * Complex64::new(2.0, 0.0) + x.x();
    let mut state = StemState {
        theta1,
        theta2,
        delta,
        w_res,
        gamma: -1.0,
        backtracks: 0,
        outcome: StemOutcome::DegenerateCurvature,
    };

    if max_backtracks == 0 {
        state.outcome = StemOutcome::Unaccelerated;
        let f = problem.objective(&state.theta2)?;
        return Ok((state.theta2.clone(), f, state));
    }

    let dd = frob_norm_sq(&state.delta);
    let dw = inner_re(&state.delta, &state.w_res);
    if dd == 0.0 || dw.abs() < DEGENERATE_CURVATURE * dd {
        let f = if dd == 0.0 { f_x } else { problem.objective(&state.theta1)? };
        return Ok((state.theta1.clone(), f, state));
    }

    let floor = f_x - 1e-12 * f_x.abs().max(1.0);
    let mut gamma = dd / dw;
    loop {
        let cand = problem.project(&stem_candidate(x, &state.delta, gamma));
        let f = problem.objective(&cand)?;
        state.gamma = gamma;
        if f.is_finite() && f >= floor {
            state.outcome = StemOutcome::Candidate;
            return Ok((cand, f, state));
        }
        if state.backtracks == max_backtracks {
            break;
        }
        gamma = (gamma - 1.0) / 2.0;
        state.backtracks += 1;
    }
    state.outcome = StemOutcome::Fallback;
    let f = problem.objective(&state.theta1)?;
    Ok((state.theta1.clone(), f, state))
}

/// [`stem_step_from`] evaluating the starting objective itself.
pub fn stem_step<P: FixedPointProblem + ?Sized>(
    problem: &P,
    x: &Waveform,
    max_backtracks: usize,
) -> Result<(Waveform, StemState)> {
    let f_x = problem.objective(x)?;
    let (next, _, state) = stem_step_from(problem, x, f_x, max_backtracks)?;
    Ok((next, state))
}

/// `√P X / ‖X‖_F`, leaving the zero waveform unchanged.
pub fn project_to_power(x: &Waveform, power: f64) -> Waveform {
    x.scaled_to_power(power)
}

/// The MM map of a KLD problem as a [`FixedPointProblem`].
pub struct MmFixedPoint<'a> {
    pub problem: &'a KldProblem,
    pub opts: &'a SolverOptions,
    /// Last evaluation, reused when the map is applied to an accepted point.
    last: RefCell<Option<(Waveform, Evaluation)>>,
}

impl<'a> MmFixedPoint<'a> {
    pub fn new(problem: &'a KldProblem, opts: &'a SolverOptions) -> Self {
        Self {
            problem,
            opts,
            last: RefCell::new(None),
        }
    }

    fn evaluate(&self, x: &Waveform) -> Result<Evaluation> {
        if let Some((w, eval)) = self.last.borrow().as_ref() {
            if w == x {
                return Ok(eval.clone());
            }
        }
        let eval = Evaluation::new(self.problem, x)?;
        *self.last.borrow_mut() = Some((x.clone(), eval.clone()));
        Ok(eval)
    }
}

impl FixedPointProblem for MmFixedPoint<'_> {
    fn map(&self, x: &Waveform) -> Result<Waveform> {
        Ok(mm_step(self.problem, x, &self.evaluate(x)?, self.opts)?.0)
    }

    fn objective(&self, x: &Waveform) -> Result<f64> {
        Ok(self.evaluate(x)?.value)
    }

    fn project(&self, x: &Waveform) -> Waveform {
        project_to_power(x, self.problem.power_budget())
    }
}

/// Drives [`stem_step_from`] to convergence; one trace entry per outer step.
pub fn accelerate<P: FixedPointProblem + ?Sized>(
    problem: &P,
    x_init: &Waveform,
    opts: &SolverOptions,
    max_backtracks: usize,
) -> Result<(Waveform, SolverTrace)> {
    opts.check()?;
    let clock = Instant::now();
    let mut w = x_init.clone();
    let mut f = problem.objective(&w)?;
    let mut trace = SolverTrace::start(f, opts.seed);
    for _ in 0..opts.max_iters {
        let (next, f_next, state) = stem_step_from(problem, &w, f, max_backtracks)?;
        trace.gamma_per_iter.push(state.gamma);
        trace.push(f_next, clock.elapsed().as_secs_f64());
        let done = has_converged(f, f_next, opts.epsilon);
        w = next;
        f = f_next;
        if done {
            trace.status = Status::Converged;
            break;
        }
    }
    trace.final_power = w.power();
    Ok((w, trace))
}

/// A-MM-KLD.
pub fn a_mm_kld(
    problem: &KldProblem,
    x_init: &Waveform,
    opts: &SolverOptions,
    max_backtracks: usize,
) -> Result<(Waveform, SolverTrace)> {
    check_start(problem, x_init)?;
    accelerate(&MmFixedPoint::new(problem, opts), x_init, opts, max_backtracks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use crate::rng::{complex_normal_matrix, SeededRng};
    use crate::scenario::{generate_scenario, init_waveform, GeneratorConfig, InitKind};
    use crate::solvers::mm_kld;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    /// `m(x) = a ⊙ x + c` with objective `−‖x − x*‖²`.
    struct Affine {
        a: ComplexMatrix,
        c: ComplexMatrix,
    }

    impl Affine {
        fn fixed_point(&self) -> ComplexMatrix {
            self.c.zip_map(&self.a, |c, a| c / (Complex64::new(1.0, 0.0) - a))
        }
    }

    impl FixedPointProblem for Affine {
        fn map(&self, x: &Waveform) -> Result<Waveform> {
            Ok(Waveform::new(x.x().component_mul(&self.a) + &self.c))
        }
        fn objective(&self, x: &Waveform) -> Result<f64> {
            Ok(-(x.x() - self.fixed_point()).norm_squared())
        }
        fn project(&self, x: &Waveform) -> Waveform {
            x.clone()
        }
    }

    /// Componentwise `m(x) = sqrt(x + 2)` on nonnegative reals, fixed point 2.
    struct Sqrt;

    impl FixedPointProblem for Sqrt {
        fn map(&self, x: &Waveform) -> Result<Waveform> {
            Ok(Waveform::new(x.x().map(|v| Complex64::new((v.re.max(-2.0) + 2.0).sqrt(), 0.0))))
        }
        fn objective(&self, x: &Waveform) -> Result<f64> {
            Ok(-x.x().iter().map(|v| (v.re - 2.0).powi(2) + v.im * v.im).sum::<f64>())
        }
        fn project(&self, x: &Waveform) -> Waveform {
            Waveform::new(x.x().map(|v| Complex64::new(v.re.max(0.0), 0.0)))
        }
    }

    fn scalar(v: f64) -> Waveform {
        Waveform::new(DMatrix::from_element(1, 1, Complex64::new(v, 0.0)))
    }

    #[test]
    fn affine_scalar_exact() {
        let p = Affine {
            a: DMatrix::from_element(1, 1, Complex64::new(0.5, 0.0)),
            c: DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)),
        };
        let (x, st) = stem_step(&p, &scalar(0.0), 50).unwrap();
        assert!((x.x()[(0, 0)].re - 2.0).abs() < 1e-12);
        assert!((st.gamma + 2.0).abs() < 1e-12);
        assert_eq!(st.outcome, StemOutcome::Candidate);
        assert_eq!(st.backtracks, 0);
    }

    #[test]
    fn gamma_minus_one_gives_theta1() {
        let mut g = SeededRng::new(1).generator();
        let x = Waveform::new(complex_normal_matrix(&mut g, 3, 2));
        let t1 = complex_normal_matrix(&mut g, 3, 2);
        let delta = &t1 - x.x();
        assert!((stem_candidate(&x, &delta, -1.0).x() - t1).norm() < 1e-14);
    }

    #[test]
    fn fixed_point_start_is_kept() {
        let p = Affine {
            a: DMatrix::from_element(1, 1, Complex64::new(0.5, 0.0)),
            c: DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)),
        };
        let (x, st) = stem_step(&p, &scalar(2.0), 50).unwrap();
        assert_eq!(x, scalar(2.0));
        assert_eq!(st.backtracks, 0);
    }

    #[test]
    fn zero_backtracks_accepts_second_image() {
        let p = Sqrt;
        let (x, st) = stem_step(&p, &scalar(0.0), 0).unwrap();
        assert_eq!(x, st.theta2);
        assert_eq!(st.outcome, StemOutcome::Unaccelerated);
    }

    #[test]
    fn fallback_equals_two_mm_steps() {
        let p = KldProblem::new(generate_scenario(&GeneratorConfig::with_dims(3, 3, 5), 2).unwrap()).unwrap();
        let x0 = init_waveform(p.scenario(), 4, InitKind::RandomGaussian);
        let opts = SolverOptions {
            max_iters: 10,
            epsilon: 1e-300,
            ..Default::default()
        };
        let (wa, _) = a_mm_kld(&p, &x0, &opts, 0).unwrap();
        let (wm, _) = mm_kld(&p, &x0, &SolverOptions { max_iters: 20, ..opts.clone() }).unwrap();
        assert!(max_abs(&(wa.x() - wm.x())) <= 1e-12);
    }

    #[test]
    fn accelerated_solver_smoke() {
        let p = KldProblem::new(generate_scenario(&GeneratorConfig::with_dims(2, 2, 3), 7).unwrap()).unwrap();
        let x0 = init_waveform(p.scenario(), 1, InitKind::RandomGaussian);
        let opts = SolverOptions::default();
        let (w, t) = a_mm_kld(&p, &x0, &opts, DEFAULT_MAX_BACKTRACKS).unwrap();
        assert_eq!(t.status, Status::Converged);
        assert!(t.is_monotone(1e-9));
        assert!((w.power() - p.power_budget()).abs() <= 1e-9 * p.power_budget());
        let (_, tm) = mm_kld(&p, &x0, &opts).unwrap();
        let (fa, fm) = (t.final_objective(), tm.final_objective());
        assert!((fa - fm).abs() <= 1e-3 * fm, "{fa} {fm}");

        let (_, t1) = a_mm_kld(&p, &x0, &SolverOptions { epsilon: f64::INFINITY, ..Default::default() }, 50).unwrap();
        assert_eq!((t1.iterations, t1.status), (1, Status::Converged));
        let (w2, t2) = a_mm_kld(&p, &x0, &opts, 50).unwrap();
        assert_eq!((w2, t2.objective_per_iter), (w, t.objective_per_iter));
    }

    fn contraction(n: usize, seed: u64) -> Affine {
        let mut g = SeededRng::new(seed).generator();
        let raw = complex_normal_matrix(&mut g, n, 1);
        Affine {
            a: raw.map(|v| Complex64::new(0.9 * (v.re.tanh()), 0.0)),
            c: complex_normal_matrix(&mut g, n, 1),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn stem_never_decreases(seed in any::<u64>(), n in 1usize..6, start in -5.0..5.0f64) {
            let p = contraction(n, seed);
            let x = Waveform::new(DMatrix::from_element(n, 1, Complex64::new(start, -start)));
            let f0 = p.objective(&x).unwrap();
            let (y, _) = stem_step(&p, &x, 50).unwrap();
            prop_assert!(p.objective(&y).unwrap() >= f0 - 1e-9 * f0.abs().max(1.0));

            let s = Sqrt;
            let x = Waveform::new(DMatrix::from_element(n, 1, Complex64::new(start.abs() * 3.0, 0.0)));
            let f0 = s.objective(&x).unwrap();
            let (y, _) = stem_step(&s, &x, 50).unwrap();
            prop_assert!(s.objective(&y).unwrap() >= f0 - 1e-9 * f0.abs().max(1.0));
        }

        #[test]
        fn affine_uniform_maps_are_solved_in_one_step(a in -0.9..0.9f64, c in -3.0..3.0f64, x0 in -3.0..3.0f64) {
            prop_assume!((x0 - c / (1.0 - a)).abs() > 1e-3);
            let p = Affine {
                a: DMatrix::from_element(2, 1, Complex64::new(a, 0.0)),
                c: DMatrix::from_element(2, 1, Complex64::new(c, 0.5 * c)),
            };
            let x = Waveform::new(DMatrix::from_element(2, 1, Complex64::new(x0, 0.0)));
            let (y, _) = stem_step(&p, &x, 50).unwrap();
            prop_assert!(max_abs(&(y.x() - p.fixed_point())) < 1e-10);
        }

        #[test]
        fn projection_is_idempotent(seed in any::<u64>(), power in 0.1..10.0f64) {
            let mut g = SeededRng::new(seed).generator();
            let x = Waveform::new(complex_normal_matrix(&mut g, 4, 3));
            let once = project_to_power(&x, power);
            let twice = project_to_power(&once, power);
            prop_assert!(max_abs(&(once.x() - twice.x())) <= 1e-9);
        }
    }
}
