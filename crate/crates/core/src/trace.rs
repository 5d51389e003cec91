//! Per-round records shared by the centralized and distributed learners.

use thiserror::Error;

use crate::lq::{Matrix, QFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Centralized,
    Distributed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorRecord {
    /// ω used for this sensor's innovation in the step that produced the row.
    pub omega: f64,
    pub norm1: f64,
    pub fro_err: Option<f64>,
}

/// Row `k` holds the iterate after `k` updates (`k ≥ 1`) together with the
/// step size `α(k−1)` that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub k: usize,
    pub alpha: f64,
    pub sensors: Vec<SensorRecord>,
    /// `max_{i,j} ‖G_i − G_j‖_F`; `None` for centralized runs.
    pub consensus_diameter: Option<f64>,
    /// Average of the sensor estimates (the iterate itself when centralized).
    pub mean_estimate: Matrix,
    /// `‖Ḡ(k) − G*‖_F` when an oracle is attached.
    pub mean_err: Option<f64>,
}

impl RoundRecord {
    pub fn max_sensor_err(&self) -> Option<f64> {
        self.sensors
            .iter()
            .map(|s| s.fro_err)
            .try_fold(0.0f64, |acc, e| e.map(|e| acc.max(e)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub kind: RunKind,
    pub seed: u64,
    pub shared_noise: bool,
    pub rounds: Vec<RoundRecord>,
    pub final_estimates: Vec<QFactor>,
    /// Largest `‖G_i(k)‖_F` seen over the run, including the initial iterate.
    pub max_fro: f64,
}

impl RunTrace {
    pub(crate) fn new(kind: RunKind, seed: u64, shared_noise: bool, init: &[QFactor]) -> Self {
        Self {
            kind,
            seed,
            shared_noise,
            rounds: Vec::new(),
            final_estimates: init.to_vec(),
            max_fro: init.iter().map(QFactor::frobenius).fold(0.0, f64::max),
        }
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn sensors(&self) -> usize {
        self.final_estimates.len()
    }

    /// Record at iteration `k` (1-based).
    pub fn at(&self, k: usize) -> Option<&RoundRecord> {
        k.checked_sub(1).and_then(|i| self.rounds.get(i))
    }

    /// Average of the final estimates.
    pub fn final_mean(&self) -> Matrix {
        mean_matrix(&self.final_estimates)
    }

    pub(crate) fn push(&mut self, record: RoundRecord, estimates: &[QFactor]) {
        self.max_fro = estimates
            .iter()
            .map(QFactor::frobenius)
            .fold(self.max_fro, f64::max);
        self.final_estimates.clone_from_slice(estimates);
        self.rounds.push(record);
    }
}

pub(crate) fn mean_matrix(estimates: &[QFactor]) -> Matrix {
    let dim = estimates[0].dim();
    let sum = estimates
        .iter()
        .fold(Matrix::zeros(dim, dim), |acc, g| acc + g.matrix());
    sum / estimates.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("estimate diverged at iteration {round} (sensor {sensor}): ‖G‖_F = {norm:e}")]
pub struct Diverged {
    pub round: usize,
    pub sensor: usize,
    pub norm: f64,
}

/// A run aborted by [`Diverged`], with the trace up to the last good round.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{cause}")]
pub struct DivergedRun {
    pub cause: Diverged,
    pub partial: RunTrace,
}
