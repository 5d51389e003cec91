//! Centralized Q-learning by stochastic approximation.
//!
//! The learner never sees `μ` or `σ²`: each iteration observes one
//! realization `(A(k), B(k))` and moves `G` along the sampled residual
//! `Y(G)` with a Robbins–Monro step size.

use thiserror::Error;

use crate::lq::{
    pi_map, symmetrize, Matrix, ModelError, NoiseModel, OracleSolution, QFactor, SystemModel,
    DEFAULT_PINV_TOL,
};
use crate::sampling::{draw_noise, realize, streams, Realization, RngStream};
use crate::trace::{Diverged, DivergedRun, RoundRecord, RunKind, RunTrace, SensorRecord};

/// Abort threshold on `‖G‖_F`.
pub const DIVERGENCE_CAP: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("step-size exponent must lie in (0.5, 1], got {0}")]
    Exponent(f64),
    #[error("step-size offset must be at least 1, got {0}")]
    Offset(u64),
    #[error("step-size scale must be non-negative with scale·offset^(-exponent) < 1, got {0}")]
    Scale(f64),
}

/// Power-law step sizes `α(k) = scale · (1 / (k + offset))^exponent`.
///
/// An exponent in (0.5, 1] gives `Σα = ∞` and `Σα² < ∞`. A zero scale is
/// accepted as the degenerate "no innovation" schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    exponent: f64,
    offset: u64,
    scale: f64,
}

impl Schedule {
    pub fn new(exponent: f64, offset: u64, scale: f64) -> Result<Self, ScheduleError> {
        if !(exponent > 0.5 && exponent <= 1.0) {
            return Err(ScheduleError::Exponent(exponent));
        }
        if offset < 1 {
            return Err(ScheduleError::Offset(offset));
        }
        let first = scale * (offset as f64).powf(-exponent);
        if !(scale >= 0.0 && first < 1.0) {
            return Err(ScheduleError::Scale(scale));
        }
        Ok(Self {
            exponent,
            offset,
            scale,
        })
    }

    /// `(1/(k+2))^0.6`.
    pub fn reference() -> Self {
        Self {
            exponent: 0.6,
            offset: 2,
            scale: 1.0,
        }
    }

    /// `α ≡ 0`.
    pub fn frozen() -> Self {
        Self {
            exponent: 1.0,
            offset: 1,
            scale: 0.0,
        }
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.scale * ((k as u64 + self.offset) as f64).powf(-self.exponent)
    }
}

/// Sampled residual: the one-sample Q-factor update at `P = Π(G)` minus `G`.
pub fn y_operator(g: &QFactor, real: &Realization, q: &Matrix, r: &Matrix) -> Matrix {
    let p = pi_map(g, DEFAULT_PINV_TOL);
    let (n, m) = (g.n(), g.m());
    let at_p = real.a_k.transpose() * &p;
    let bt_p = real.b_k.transpose() * &p;
    let mut out = Matrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(&(q + &at_p * &real.a_k));
    out.view_mut((0, n), (n, m)).copy_from(&(&at_p * &real.b_k));
    out.view_mut((n, 0), (m, n)).copy_from(&(&bt_p * &real.a_k));
    out.view_mut((n, n), (m, m)).copy_from(&(&bt_p * &real.b_k + r));
    symmetrize(&(out - g.matrix()))
}

/// Symmetrizes a raw update and applies the divergence cap.
pub(crate) fn commit(
    raw: &Matrix,
    n: usize,
    round: usize,
    sensor: usize,
) -> Result<QFactor, Diverged> {
    let g = QFactor::symmetrized(raw, n).expect("update preserves Q-factor shape");
    let norm = g.frobenius();
    if norm.is_nan() || norm > DIVERGENCE_CAP {
        return Err(Diverged {
            round,
            sensor,
            norm,
        });
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    g: QFactor,
    k: usize,
}

impl LearnerState {
    pub fn new(g0: QFactor) -> Self {
        Self { g: g0, k: 0 }
    }

    pub fn estimate(&self) -> &QFactor {
        &self.g
    }

    pub fn iteration(&self) -> usize {
        self.k
    }
}

/// `G ← G + α(k) Y(G)`, `k ← k + 1`.
pub fn centralized_step(
    state: &mut LearnerState,
    real: &Realization,
    sched: &Schedule,
    q: &Matrix,
    r: &Matrix,
) -> Result<f64, Diverged> {
    let alpha = sched.alpha(state.k);
    let y = y_operator(&state.g, real, q, r);
    let raw = state.g.matrix() + y * alpha;
    state.g = commit(&raw, state.g.n(), state.k + 1, 0)?;
    state.k += 1;
    Ok(alpha)
}

fn check_init(g0: &QFactor, sys: &SystemModel) -> Result<(), ModelError> {
    if g0.n() != sys.n() || g0.m() != sys.m() {
        return Err(ModelError::QFactorShape {
            rows: g0.dim(),
            cols: g0.dim(),
            n: sys.n(),
        });
    }
    Ok(())
}

/// Runs `iters` centralized steps from `g0`, drawing ω from stream
/// `streams::SHARED` of `seed`.
pub fn run_centralized(
    sys: &SystemModel,
    noise: &NoiseModel,
    sched: &Schedule,
    iters: usize,
    seed: u64,
    g0: QFactor,
    oracle: Option<&OracleSolution>,
) -> Result<RunTrace, DivergedRun> {
    check_init(&g0, sys).expect("initial estimate must match the system dimensions");
    let mut rng = RngStream::new(seed, streams::SHARED);
    let mut trace = RunTrace::new(RunKind::Centralized, seed, true, std::slice::from_ref(&g0));
    let mut state = LearnerState::new(g0);
    for _ in 0..iters {
        let omega = draw_noise(&mut rng, noise);
        let real = realize(sys, omega);
        let alpha = match centralized_step(&mut state, &real, sched, sys.q(), sys.r()) {
            Ok(alpha) => alpha,
            Err(cause) => {
                log::warn!("centralized run seed {seed}: {cause}");
                return Err(DivergedRun {
                    cause,
                    partial: trace,
                });
            }
        };
        let g = state.estimate();
        let fro_err = oracle.map(|o| g.distance(&o.g_star));
        let record = RoundRecord {
            k: state.iteration(),
            alpha,
            sensors: vec![SensorRecord {
                omega,
                norm1: g.entrywise_l1(),
                fro_err,
            }],
            consensus_diameter: None,
            mean_estimate: g.matrix().clone(),
            mean_err: fro_err,
        };
        trace.push(record, std::slice::from_ref(g));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq::{expectation_map, solve_oracle};
    use approx::assert_abs_diff_eq;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    fn reference_system() -> SystemModel {
        SystemModel::new(
            m(2, 2, &[0.2, 0., 0., 0.6]),
            m(2, 2, &[0.7, 0., 0., 0.8]),
            m(2, 1, &[0.7, 0.3]),
            m(2, 1, &[0.1, 0.7]),
            m(2, 2, &[0.4, 0., 0., 0.7]),
            m(1, 1, &[1.0]),
        )
        .unwrap()
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::new(0.5, 2, 1.0).is_err());
        assert!(Schedule::new(1.1, 2, 1.0).is_err());
        assert!(Schedule::new(0.6, 0, 1.0).is_err());
        // α(0) = 1 is outside (0, 1).
        assert!(Schedule::new(0.6, 1, 1.0).is_err());
        assert!(Schedule::new(0.6, 2, -1.0).is_err());
        assert!(Schedule::new(1.0, 1, 0.5).is_ok());
        let s = Schedule::reference();
        assert_abs_diff_eq!(s.alpha(0), 0.5f64.powf(0.6), epsilon = 1e-15);
        assert_abs_diff_eq!(s.alpha(8), 0.1f64.powf(0.6), epsilon = 1e-15);
        assert_eq!(Schedule::frozen().alpha(0), 0.0);
    }

    #[test]
    fn y_vanishes_at_deterministic_fixed_point() {
        let sys = reference_system().without_noise();
        let noise = NoiseModel::new(1.0, 0.1).unwrap();
        let sol = solve_oracle(&sys, &noise, 1e-13, 100_000).unwrap();
        for omega in [-3.0, 0.0, 1.0, 7.5] {
            let y = y_operator(&sol.g_star, &realize(&sys, omega), sys.q(), sys.r());
            assert!(y.norm() <= 1e-12, "{}", y.norm());
        }
        // Also zero against the expectation in the noisy case.
        let sys = reference_system();
        let sol = solve_oracle(&sys, &noise, 1e-13, 100_000).unwrap();
        let e = expectation_map(&sol.g_star, &sys, &noise);
        assert!((e.matrix() - sol.g_star.matrix()).norm() <= 1e-12);
    }

    #[test]
    fn y_operator_reference_fixture() {
        // G = diag(Q, R): Π(G) = Q. With ω = 1, A₁ = diag(0.9, 1.4), B₁ = [0.8; 1.0].
        let sys = reference_system();
        let g = QFactor::cost_weight(&sys);
        let y = y_operator(&g, &realize(&sys, 1.0), sys.q(), sys.r());
        // Hand-evaluated: AᵀQA = diag(0.324, 1.372); AᵀQB = [0.288; 0.98]; BᵀQB = 0.956.
        let expected = m(
            3,
            3,
            &[0.324, 0.0, 0.288, 0.0, 1.372, 0.98, 0.288, 0.98, 0.956],
        );
        assert_abs_diff_eq!(y, expected, epsilon = 1e-14);
    }

    #[test]
    fn zero_step_leaves_estimate_unchanged() {
        let sys = reference_system();
        let mut state = LearnerState::new(QFactor::cost_weight(&sys));
        let before = state.estimate().clone();
        let alpha = centralized_step(
            &mut state,
            &realize(&sys, 0.4),
            &Schedule::frozen(),
            sys.q(),
            sys.r(),
        )
        .unwrap();
        assert_eq!(alpha, 0.0);
        assert_eq!(state.estimate(), &before);
        assert_eq!(state.iteration(), 1);
    }

    #[test]
    fn sampled_fixed_point_is_stationary() {
        // For a fixed ω the sampled map is a deterministic Riccati map; its
        // fixed point is left in place by a step of any size.
        let sys = reference_system();
        let real = realize(&sys, 0.5);
        let frozen = SystemModel::new(
            real.a_k.clone(),
            Matrix::zeros(2, 2),
            real.b_k.clone(),
            Matrix::zeros(2, 1),
            sys.q().clone(),
            sys.r().clone(),
        )
        .unwrap();
        let sol = solve_oracle(&frozen, &NoiseModel::deterministic(0.0), 1e-13, 100_000).unwrap();
        let mut state = LearnerState::new(sol.g_star.clone());
        centralized_step(&mut state, &real, &Schedule::reference(), sys.q(), sys.r()).unwrap();
        assert!(state.estimate().distance(&sol.g_star) <= 1e-12);
    }

    #[test]
    fn single_iteration_trace() {
        let sys = reference_system();
        let noise = NoiseModel::new(1.0, 0.1).unwrap();
        let trace = run_centralized(
            &sys,
            &noise,
            &Schedule::reference(),
            1,
            0,
            QFactor::cost_weight(&sys),
            None,
        )
        .unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.rounds[0].k, 1);
        assert!(trace.rounds[0].sensors[0].fro_err.is_none());
    }

    #[test]
    fn divergence_cap_aborts() {
        // Unstabilizable plant: Π(G) grows geometrically.
        let sys = SystemModel::new(
            m(1, 1, &[3.0]),
            m(1, 1, &[0.0]),
            m(1, 1, &[0.0]),
            m(1, 1, &[0.0]),
            m(1, 1, &[1.0]),
            m(1, 1, &[1.0]),
        )
        .unwrap();
        let sched = Schedule::new(0.6, 2, 0.9).unwrap();
        let err = run_centralized(
            &sys,
            &NoiseModel::deterministic(0.0),
            &sched,
            10_000,
            0,
            QFactor::cost_weight(&sys),
            None,
        )
        .unwrap_err();
        assert_eq!(err.partial.len() + 1, err.cause.round);
        assert!(err.cause.norm > DIVERGENCE_CAP);
    }
}
