//! Seeded randomness: noise draws, realized system matrices, closed-loop
//! trajectories and Monte Carlo cost estimates.
//!
//! Every random quantity comes from a ChaCha20 stream addressed by
//! `(seed, stream_id)`; Gaussian draws use the ziggurat sampler of
//! `rand_distr`. Both are pure integer/float algorithms, so a given address
//! reproduces the same sequence on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::lq::{Gain, Matrix, NoiseModel, SystemModel, Vector};

/// Name of the generator family, recorded in configs and summaries.
pub const GENERATOR: &str = "chacha20-ziggurat";

/// States whose norm exceeds this are treated as a diverging loop.
pub const OVERFLOW_THRESHOLD: f64 = 1e12;

/// Stream identifiers, one logical stream per experiment component.
pub mod streams {
    /// Noise driving the centralized learner and shared-noise distributed runs.
    pub const SHARED: u64 = 0;

    /// Private noise of sensor `i` in independent-noise mode.
    pub const fn sensor(i: usize) -> u64 {
        1 + i as u64
    }

    /// Initial-estimate jitter of sensor `i`.
    pub const fn jitter(i: usize) -> u64 {
        (1 << 32) | i as u64
    }

    /// Monte Carlo run `run`.
    pub const fn monte_carlo(run: usize) -> u64 {
        (2 << 32) | run as u64
    }
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

/// One draw of ω ~ N(μ, σ²). With σ² = 0 this is exactly μ.
pub fn draw_noise(rng: &mut RngStream, noise: &NoiseModel) -> f64 {
    let z = rng.standard_normal();
    if noise.sigma2() == 0.0 {
        return noise.mu();
    }
    noise.mu() + noise.sigma2().sqrt() * z
}

/// System matrices for one value of ω.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub a_k: Matrix,
    pub b_k: Matrix,
    pub omega: f64,
}

pub fn realize(sys: &SystemModel, omega: f64) -> Realization {
    Realization {
        a_k: sys.a() + sys.a_bar() * omega,
        b_k: sys.b() + sys.b_bar() * omega,
        omega,
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `x(0) ..= x(len)`; one longer than `inputs`.
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub stage_costs: Vec<f64>,
    /// Step whose successor state exceeded [`OVERFLOW_THRESHOLD`].
    pub overflow_at: Option<usize>,
}

impl Trajectory {
    pub fn total_cost(&self) -> f64 {
        self.stage_costs.iter().sum()
    }
}

/// Closed-loop rollout of `u = Kx` with a fresh ω each step.
pub fn simulate_trajectory(
    sys: &SystemModel,
    noise: &NoiseModel,
    k: &Gain,
    x0: &Vector,
    horizon: usize,
    rng: &mut RngStream,
) -> Trajectory {
    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    let mut stage_costs = Vec::with_capacity(horizon);
    let mut overflow_at = None;
    let mut x = x0.clone();
    for step in 0..horizon {
        let u = k.apply(&x);
        stage_costs.push(x.dot(&(sys.q() * &x)) + u.dot(&(sys.r() * &u)));
        let real = realize(sys, draw_noise(rng, noise));
        let next = &real.a_k * &x + &real.b_k * &u;
        states.push(std::mem::replace(&mut x, next));
        inputs.push(u);
        let norm = x.norm();
        if norm.is_nan() || norm > OVERFLOW_THRESHOLD {
            overflow_at = Some(step);
            log::debug!("trajectory overflow at step {step}");
            break;
        }
    }
    states.push(x);
    Trajectory {
        states,
        inputs,
        stage_costs,
        overflow_at,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("Monte Carlo needs at least two runs, got {0}")]
    TooFewRuns(usize),
    #[error("run {run} diverged at step {step}")]
    Diverged { run: usize, step: usize },
}

/// Truncated-horizon cost averaged over independent runs. Run `i` draws from
/// stream `streams::monte_carlo(i)` of `seed`; runs execute in parallel and
/// are reduced in run order.
pub fn monte_carlo_cost(
    sys: &SystemModel,
    noise: &NoiseModel,
    k: &Gain,
    x0: &Vector,
    horizon: usize,
    n_runs: usize,
    seed: u64,
) -> Result<CostEstimate, SamplingError> {
    if n_runs < 2 {
        return Err(SamplingError::TooFewRuns(n_runs));
    }
    let costs: Vec<Result<f64, SamplingError>> = (0..n_runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = RngStream::new(seed, streams::monte_carlo(run));
            let traj = simulate_trajectory(sys, noise, k, x0, horizon, &mut rng);
            match traj.overflow_at {
                Some(step) => Err(SamplingError::Diverged { run, step }),
                None => Ok(traj.total_cost()),
            }
        })
        .collect();
    let costs = costs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n = n_runs as f64;
    // Shifted by the first run so identical costs give exactly zero spread.
    let shift = costs[0];
    let offset = costs.iter().map(|c| c - shift).sum::<f64>() / n;
    let mean = shift + offset;
    let var = costs
        .iter()
        .map(|c| (c - shift - offset).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    Ok(CostEstimate {
        mean,
        std_err: (var / n).sqrt(),
        n_runs,
    })
}
