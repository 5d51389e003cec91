//! Distributed Q-learning: consensus plus innovation across a sensor network.
//!
//! Each round every sensor `i` computes, from the pre-round estimates,
//!
//! ```text
//! G_i ← G_i + w Σ_{j ∈ N(i)} (G_j − G_i) + α(k) L_i Y(G_i)
//! ```
//!
//! and all sensors commit together.

use rayon::prelude::*;
use thiserror::Error;

use crate::lq::{Matrix, NoiseModel, OracleSolution, QFactor, SystemModel};
use crate::network::{ConsensusOperator, GainAllocation};
use crate::qlearning::{commit, y_operator, Schedule};
use crate::sampling::{draw_noise, realize, streams, Realization, RngStream};
use crate::trace::{mean_matrix, Diverged, DivergedRun, RoundRecord, RunKind, RunTrace, SensorRecord};

/// Frobenius norm of the PSD jitter added by [`Initialization::Spread`].
pub const SPREAD_MAGNITUDE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Initialization {
    /// Every sensor starts at `diag(Q, R)`.
    #[default]
    Identical,
    /// `diag(Q, R)` plus a seeded symmetric PSD jitter per sensor.
    Spread,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorBank {
    estimates: Vec<QFactor>,
    k: usize,
}

impl SensorBank {
    pub fn new(estimates: Vec<QFactor>) -> Self {
        assert!(!estimates.is_empty(), "sensor bank needs at least one sensor");
        Self { estimates, k: 0 }
    }

    pub fn initialize(sys: &SystemModel, sensors: usize, init: Initialization, seed: u64) -> Self {
        let base = QFactor::cost_weight(sys);
        let estimates = (0..sensors)
            .map(|i| match init {
                Initialization::Identical => base.clone(),
                Initialization::Spread => {
                    let mut rng = RngStream::new(seed, streams::jitter(i));
                    let dim = base.dim();
                    let root = Matrix::from_fn(dim, dim, |_, _| rng.standard_normal());
                    let jitter = &root * root.transpose();
                    let jitter = jitter.scale(SPREAD_MAGNITUDE / jitter.norm());
                    QFactor::symmetrized(&(base.matrix() + jitter), base.n())
                        .expect("jitter keeps shape")
                }
            })
            .collect();
        Self::new(estimates)
    }

    pub fn estimates(&self) -> &[QFactor] {
        &self.estimates
    }

    pub fn round(&self) -> usize {
        self.k
    }

    pub fn sensors(&self) -> usize {
        self.estimates.len()
    }

    pub fn mean(&self) -> Matrix {
        mean_matrix(&self.estimates)
    }

    /// `max_{i,j} ‖G_i − G_j‖_F`.
    pub fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for (i, gi) in self.estimates.iter().enumerate() {
            for gj in &self.estimates[i + 1..] {
                d = d.max(gi.distance(gj));
            }
        }
        d
    }
}

/// Realizations feeding one round.
#[derive(Debug, Clone, Copy)]
pub enum RoundNoise<'a> {
    Shared(&'a Realization),
    PerSensor(&'a [Realization]),
}

impl RoundNoise<'_> {
    fn for_sensor(&self, i: usize) -> &Realization {
        match self {
            RoundNoise::Shared(r) => r,
            RoundNoise::PerSensor(rs) => &rs[i],
        }
    }
}

/// One synchronous round. Returns the step size used.
pub fn distributed_round(
    bank: &mut SensorBank,
    cons: &ConsensusOperator,
    alloc: &GainAllocation,
    noise: RoundNoise<'_>,
    sched: &Schedule,
    q: &Matrix,
    r: &Matrix,
) -> Result<f64, Diverged> {
    let n_sensors = bank.sensors();
    assert_eq!(cons.sensors(), n_sensors, "consensus operator size");
    assert_eq!(alloc.sensors(), n_sensors, "gain allocation size");
    assert_eq!(alloc.dim(), bank.estimates[0].dim(), "gain allocation dimension");
    if let RoundNoise::PerSensor(rs) = noise {
        assert_eq!(rs.len(), n_sensors, "one realization per sensor");
    }

    let alpha = sched.alpha(bank.k);
    let round = bank.k + 1;
    let w = cons.weight();
    let pre = &bank.estimates;
    let updated: Vec<Result<QFactor, Diverged>> = (0..n_sensors)
        .into_par_iter()
        .map(|i| {
            let gi = &pre[i];
            let mut raw = gi.matrix().clone();
            for &j in cons.neighbors(i) {
                raw += (pre[j].matrix() - gi.matrix()) * w;
            }
            let y = y_operator(gi, noise.for_sensor(i), q, r);
            raw += alloc.apply(i, &y) * alpha;
            commit(&raw, gi.n(), round, i + 1)
        })
        .collect();
    bank.estimates = updated.into_iter().collect::<Result<_, _>>()?;
    bank.k = round;
    Ok(alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistributedOptions {
    /// All sensors observe the same `ω(k)` each round.
    pub shared_noise: bool,
    pub init: Initialization,
}

impl Default for DistributedOptions {
    fn default() -> Self {
        Self {
            shared_noise: true,
            init: Initialization::Identical,
        }
    }
}

/// Runs `rounds` synchronous rounds. Shared noise is drawn from stream
/// `streams::SHARED` of `seed`, the same stream the centralized learner uses,
/// so both learners see identical realizations.
#[allow(clippy::too_many_arguments)]
pub fn run_distributed(
    sys: &SystemModel,
    noise: &NoiseModel,
    cons: &ConsensusOperator,
    alloc: &GainAllocation,
    sched: &Schedule,
    rounds: usize,
    seed: u64,
    opts: DistributedOptions,
    oracle: Option<&OracleSolution>,
) -> Result<RunTrace, DivergedRun> {
    let n_sensors = cons.sensors();
    let mut bank = SensorBank::initialize(sys, n_sensors, opts.init, seed);
    let mut trace = RunTrace::new(RunKind::Distributed, seed, opts.shared_noise, bank.estimates());
    let mut shared_rng = RngStream::new(seed, streams::SHARED);
    let mut sensor_rngs: Vec<RngStream> = (0..n_sensors)
        .map(|i| RngStream::new(seed, streams::sensor(i)))
        .collect();

    for _ in 0..rounds {
        // Draw before the parallel section so results do not depend on threads.
        let realizations: Vec<Realization> = if opts.shared_noise {
            vec![realize(sys, draw_noise(&mut shared_rng, noise))]
        } else {
            sensor_rngs
                .iter_mut()
                .map(|rng| realize(sys, draw_noise(rng, noise)))
                .collect()
        };
        let round_noise = if opts.shared_noise {
            RoundNoise::Shared(&realizations[0])
        } else {
            RoundNoise::PerSensor(&realizations)
        };
        let alpha = match distributed_round(&mut bank, cons, alloc, round_noise, sched, sys.q(), sys.r()) {
            Ok(alpha) => alpha,
            Err(cause) => {
                log::warn!("distributed run seed {seed}: {cause}");
                return Err(DivergedRun {
                    cause,
                    partial: trace,
                });
            }
        };
        let sensors = bank
            .estimates()
            .iter()
            .enumerate()
            .map(|(i, g)| SensorRecord {
                omega: round_noise.for_sensor(i).omega,
                norm1: g.entrywise_l1(),
                fro_err: oracle.map(|o| g.distance(&o.g_star)),
            })
            .collect();
        let mean_estimate = bank.mean();
        let mean_err = oracle.map(|o| (&mean_estimate - o.g_star.matrix()).norm());
        let record = RoundRecord {
            k: bank.round(),
            alpha,
            sensors,
            consensus_diameter: Some(bank.diameter()),
            mean_estimate,
            mean_err,
        };
        trace.push(record, bank.estimates());
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompareError {
    #[error("noise sequences differ at iteration {k}")]
    SeedMismatch { k: usize },
    #[error("traces have different lengths ({distributed} vs {centralized})")]
    LengthMismatch { distributed: usize, centralized: usize },
    #[error("comparison needs a distributed trace with shared noise and a centralized trace")]
    WrongKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// `Δ(k) = ‖Ḡ(k) − G(k)‖_F` for `k = 1..=len`.
    pub gaps: Vec<f64>,
    pub final_gap: f64,
    pub max_gap: f64,
}

impl Comparison {
    pub fn at(&self, k: usize) -> Option<f64> {
        k.checked_sub(1).and_then(|i| self.gaps.get(i).copied())
    }
}

/// Per-iteration gap between the averaged distributed iterate and the
/// centralized iterate driven by the same noise.
pub fn compare_centralized(distributed: &RunTrace, centralized: &RunTrace) -> Result<Comparison, CompareError> {
    if distributed.kind != RunKind::Distributed
        || centralized.kind != RunKind::Centralized
        || !distributed.shared_noise
    {
        return Err(CompareError::WrongKind);
    }
    if distributed.len() != centralized.len() {
        return Err(CompareError::LengthMismatch {
            distributed: distributed.len(),
            centralized: centralized.len(),
        });
    }
    let mut gaps = Vec::with_capacity(distributed.len());
    for (d, c) in distributed.rounds.iter().zip(&centralized.rounds) {
        if d.sensors[0].omega.to_bits() != c.sensors[0].omega.to_bits() {
            return Err(CompareError::SeedMismatch { k: d.k });
        }
        gaps.push((&d.mean_estimate - &c.mean_estimate).norm());
    }
    Ok(Comparison {
        final_gap: gaps.last().copied().unwrap_or(0.0),
        max_gap: gaps.iter().copied().fold(0.0, f64::max),
        gaps,
    })
}
