//! Experiment configuration: a TOML file with matrices as row-major nested
//! lists. Loading validates every module precondition and reports all
//! violations together.

use std::path::{Path, PathBuf};

use dqlq_core::network::default_weight;
use dqlq_core::sampling::GENERATOR;
use dqlq_core::{
    build_graph, consensus_operator, ConsensusOperator, GainMode, Graph, Initialization, Matrix,
    NoiseModel, Schedule, SystemModel, Topology, Vector,
};
use serde::Deserialize;
use thiserror::Error;

use crate::presets;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error in {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("unknown preset {0:?} (available: {avail})", avail = presets::NAMES.join(", "))]
    UnknownPreset(String),
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub system: RawSystem,
    pub noise: RawNoise,
    #[serde(default)]
    pub schedule: RawSchedule,
    #[serde(default)]
    pub network: RawNetwork,
    #[serde(default)]
    pub run: RawRun,
    #[serde(default)]
    pub validation: RawValidation,
    #[serde(default)]
    pub oracle: RawOracle,
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSystem {
    pub a: Vec<Vec<f64>>,
    pub a_bar: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub b_bar: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNoise {
    pub mu: f64,
    pub sigma2: f64,
    #[serde(default = "default_generator")]
    pub generator: String,
}

fn default_generator() -> String {
    GENERATOR.into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawSchedule {
    pub exponent: f64,
    pub offset: u64,
    pub scale: f64,
}

impl Default for RawSchedule {
    fn default() -> Self {
        let s = Schedule::reference();
        Self {
            exponent: s.exponent(),
            offset: s.offset(),
            scale: s.scale(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawNetwork {
    pub topology: String,
    pub gain_mode: String,
    pub weight: Option<f64>,
    pub shared_noise: bool,
}

impl Default for RawNetwork {
    fn default() -> Self {
        Self {
            topology: "ring:4".into(),
            gain_mode: "uniform".into(),
            weight: None,
            shared_noise: true,
        }
    }
}

/// `seeds = 5` means seeds 0..5; `seeds = [3, 7]` lists them.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn expand(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }

    /// CLI form: a single integer is a count, a comma list is explicit.
    pub fn parse_flag(s: &str) -> Result<Self, String> {
        let parse = |v: &str| {
            v.trim()
                .parse::<u64>()
                .map_err(|_| format!("bad seed {v:?}"))
        };
        if s.contains(',') {
            s.split(',').map(parse).collect::<Result<_, _>>().map(Seeds::List)
        } else {
            parse(s).map(Seeds::Count)
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawRun {
    pub rounds: usize,
    pub seeds: Seeds,
    pub init: String,
    pub output_dir: PathBuf,
}

impl Default for RawRun {
    fn default() -> Self {
        Self {
            rounds: 200,
            seeds: Seeds::Count(1),
            init: "identical".into(),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawValidation {
    pub x0: Option<Vec<f64>>,
    pub horizon: usize,
    pub mc_runs: usize,
    pub mc_seed: u64,
}

impl Default for RawValidation {
    fn default() -> Self {
        Self {
            x0: None,
            horizon: 400,
            mc_runs: 2000,
            mc_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawOracle {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RawOracle {
    fn default() -> Self {
        Self {
            tol: dqlq_core::lq::DEFAULT_ORACLE_TOL,
            max_iter: dqlq_core::lq::DEFAULT_ORACLE_MAX_ITER,
        }
    }
}

/// Command-line overrides applied before validation.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub rounds: Option<usize>,
    pub seeds: Option<Seeds>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ValidationSettings {
    pub x0: Vector,
    pub horizon: usize,
    pub mc_runs: usize,
    pub mc_seed: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: SystemModel,
    pub noise: NoiseModel,
    pub schedule: Schedule,
    pub topology: Topology,
    pub graph: Graph,
    pub consensus: ConsensusOperator,
    pub gain_mode: GainMode,
    pub shared_noise: bool,
    pub init: Initialization,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub validation: ValidationSettings,
    pub oracle_tol: f64,
    pub oracle_max_iter: usize,
}

pub fn parse_init(s: &str) -> Result<Initialization, String> {
    match s.trim() {
        "identical" | "diag" => Ok(Initialization::Identical),
        "spread" => Ok(Initialization::Spread),
        other => Err(format!("run.init: unknown initialization {other:?} (identical | spread)")),
    }
}

pub fn init_name(init: Initialization) -> &'static str {
    match init {
        Initialization::Identical => "identical",
        Initialization::Spread => "spread",
    }
}

fn to_matrix(field: &str, rows: &[Vec<f64>], errors: &mut Vec<String>) -> Option<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        errors.push(format!("{field}: matrix must be non-empty"));
        return None;
    }
    if rows.iter().any(|r| r.len() != cols) {
        errors.push(format!("{field}: ragged rows"));
        return None;
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Some(Matrix::from_row_slice(rows.len(), cols, &flat))
}

pub fn parse_str(text: &str, origin: &str) -> Result<RawConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        origin: origin.to_string(),
        message: e.to_string(),
    })
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw = parse_str(&text, &path.display().to_string())?;
    validate(raw, overrides)
}

pub fn load_preset(name: &str, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let text = presets::get(name).ok_or_else(|| ConfigError::UnknownPreset(name.into()))?;
    validate(parse_str(text, &format!("preset {name}"))?, overrides)
}

/// Checks every invariant and collects all violations.
pub fn validate(mut raw: RawConfig, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    if let Some(rounds) = overrides.rounds {
        raw.run.rounds = rounds;
    }
    if let Some(seeds) = &overrides.seeds {
        raw.run.seeds = seeds.clone();
    }
    if let Some(dir) = &overrides.output_dir {
        raw.run.output_dir = dir.clone();
    }

    let mut errors = Vec::new();
    let s = &raw.system;
    let mats = [
        to_matrix("system.a", &s.a, &mut errors),
        to_matrix("system.a_bar", &s.a_bar, &mut errors),
        to_matrix("system.b", &s.b, &mut errors),
        to_matrix("system.b_bar", &s.b_bar, &mut errors),
        to_matrix("system.q", &s.q, &mut errors),
        to_matrix("system.r", &s.r, &mut errors),
    ];
    let system = match mats {
        [Some(a), Some(ab), Some(b), Some(bb), Some(q), Some(r)] => {
            let problems = SystemModel::diagnose(&a, &ab, &b, &bb, &q, &r);
            if problems.is_empty() {
                SystemModel::new(a, ab, b, bb, q, r).ok()
            } else {
                errors.extend(problems.iter().map(ToString::to_string));
                None
            }
        }
        _ => None,
    };

    let noise = NoiseModel::new(raw.noise.mu, raw.noise.sigma2)
        .map_err(|e| errors.push(e.to_string()))
        .ok();
    if raw.noise.generator != GENERATOR {
        errors.push(format!(
            "noise.generator: unsupported generator {:?} (only {GENERATOR:?})",
            raw.noise.generator
        ));
    }

    let schedule = Schedule::new(raw.schedule.exponent, raw.schedule.offset, raw.schedule.scale)
        .map_err(|e| errors.push(e.to_string()))
        .ok();

    let topology = raw
        .network
        .topology
        .parse::<Topology>()
        .map_err(|e| errors.push(format!("network.topology: {e}")))
        .ok();
    let graph = topology.as_ref().and_then(|t| {
        build_graph(t)
            .map_err(|e| errors.push(format!("network.topology: {e}")))
            .ok()
    });
    let consensus = graph.as_ref().and_then(|g| {
        consensus_operator(g, raw.network.weight)
            .map_err(|e| errors.push(format!("network: {e}")))
            .ok()
    });
    let gain_mode = raw
        .network
        .gain_mode
        .parse::<GainMode>()
        .map_err(|e| errors.push(format!("network.gain_mode: {e}")))
        .ok();

    let init = parse_init(&raw.run.init).map_err(|e| errors.push(e)).ok();
    if raw.run.rounds == 0 {
        errors.push("run.rounds must be at least 1".into());
    }
    let seeds = raw.run.seeds.expand();
    if seeds.is_empty() {
        errors.push("run.seeds must name at least one seed".into());
    }

    let n = system.as_ref().map(SystemModel::n);
    let x0 = match (&raw.validation.x0, n) {
        (Some(v), Some(n)) if v.len() != n => {
            errors.push(format!("validation.x0 must have {n} entries, got {}", v.len()));
            None
        }
        (Some(v), _) => Some(Vector::from_column_slice(v)),
        (None, Some(n)) => Some(Vector::from_element(n, 1.0)),
        (None, None) => None,
    };
    if raw.validation.horizon == 0 {
        errors.push("validation.horizon must be at least 1".into());
    }
    if raw.validation.mc_runs < 2 {
        errors.push("validation.mc_runs must be at least 2".into());
    }
    if raw.oracle.tol.is_nan() || raw.oracle.tol <= 0.0 || raw.oracle.max_iter == 0 {
        errors.push("oracle.tol must be positive and oracle.max_iter at least 1".into());
    }

    if !errors.is_empty() {
        return Err(ConfigError::Validation(errors));
    }
    let graph = graph.expect("validated");
    log::debug!(
        "config {}: {} sensors, weight {} (default would be {})",
        raw.name,
        graph.nodes(),
        consensus.as_ref().map_or(f64::NAN, ConsensusOperator::weight),
        default_weight(&graph)
    );
    Ok(ExperimentConfig {
        name: raw.name,
        system: system.expect("validated"),
        noise: noise.expect("validated"),
        schedule: schedule.expect("validated"),
        topology: topology.expect("validated"),
        graph,
        consensus: consensus.expect("validated"),
        gain_mode: gain_mode.expect("validated"),
        shared_noise: raw.network.shared_noise,
        init: init.expect("validated"),
        rounds: raw.run.rounds,
        seeds,
        output_dir: raw.run.output_dir,
        validation: ValidationSettings {
            x0: x0.expect("validated"),
            horizon: raw.validation.horizon,
            mc_runs: raw.validation.mc_runs,
            mc_seed: raw.validation.mc_seed,
        },
        oracle_tol: raw.oracle.tol,
        oracle_max_iter: raw.oracle.max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preset(name: &str) -> RawConfig {
        parse_str(presets::get(name).unwrap(), name).unwrap()
    }

    #[test]
    fn reference_preset_has_exact_values() {
        let cfg = load_preset("paper_sec4", &Overrides::default()).unwrap();
        let m = |r, c, d: &[f64]| Matrix::from_row_slice(r, c, d);
        assert_eq!(cfg.system.a(), &m(2, 2, &[0.2, 0., 0., 0.6]));
        assert_eq!(cfg.system.a_bar(), &m(2, 2, &[0.7, 0., 0., 0.8]));
        assert_eq!(cfg.system.b(), &m(2, 1, &[0.7, 0.3]));
        assert_eq!(cfg.system.b_bar(), &m(2, 1, &[0.1, 0.7]));
        assert_eq!(cfg.system.q(), &m(2, 2, &[0.4, 0., 0., 0.7]));
        assert_eq!(cfg.system.r(), &m(1, 1, &[1.0]));
        assert_eq!((cfg.noise.mu(), cfg.noise.sigma2()), (1.0, 0.1));
        assert_eq!(cfg.schedule, Schedule::reference());
        assert_eq!(cfg.topology, Topology::Ring(4));
        assert_eq!(cfg.rounds, 200);
        assert_eq!(cfg.validation.x0.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn every_preset_loads() {
        for name in presets::NAMES {
            load_preset(name, &Overrides::default()).unwrap();
        }
    }

    #[test]
    fn zero_r_is_rejected() {
        let mut raw = preset("paper_sec4");
        raw.system.r = vec![vec![0.0]];
        match validate(raw, &Overrides::default()) {
            Err(ConfigError::Validation(errs)) => {
                assert!(errs.iter().any(|e| e == "R must be positive definite"), "{errs:?}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn path_with_unit_weight_is_not_contractive() {
        let mut raw = preset("paper_sec4");
        raw.network.topology = "path:4".into();
        raw.network.weight = Some(1.0);
        match validate(raw, &Overrides::default()) {
            Err(ConfigError::Validation(errs)) => assert!(
                errs.iter().any(|e| e.contains("consensus operator not contractive")),
                "{errs:?}"
            ),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_violations_reported_together() {
        let mut raw = preset("paper_sec4");
        raw.system.q = vec![vec![1.0, 0.0], vec![0.0, -1.0]];
        raw.schedule.exponent = 0.4;
        raw.network.topology = "edges:1-2,3-4".into();
        raw.run.init = "random".into();
        raw.noise.generator = "mt19937".into();
        match validate(raw, &Overrides::default()) {
            Err(ConfigError::Validation(errs)) => assert_eq!(errs.len(), 5, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = parse_str("name = \"x\"\n[system]\na = [[1.0, 2.0]\n", "inline").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") || msg.contains(":3:") || msg.contains("3 |"), "{msg}");
        let err = parse_str(presets::get("paper_sec4").unwrap().replace("sigma2", "variance").as_str(), "x")
            .unwrap_err();
        assert!(err.to_string().contains("variance"));
    }

    #[test]
    fn overrides_and_seed_forms() {
        let cfg = load_preset(
            "paper_sec4",
            &Overrides {
                rounds: Some(7),
                seeds: Some(Seeds::parse_flag("3,5").unwrap()),
                output_dir: Some("elsewhere".into()),
            },
        )
        .unwrap();
        assert_eq!(cfg.rounds, 7);
        assert_eq!(cfg.seeds, vec![3, 5]);
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
        assert_eq!(Seeds::parse_flag("3").unwrap().expand(), vec![0, 1, 2]);
        assert!(Seeds::parse_flag("x").is_err());
    }
}
