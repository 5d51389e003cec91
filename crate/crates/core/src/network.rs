//! Communication graphs, Laplacian mixing, and per-sensor innovation gains.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::SymmetricEigen;
use thiserror::Error;

use crate::lq::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("bad topology: {0}")]
    BadSpec(String),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("consensus operator not contractive: w·λ_max(L) = {product} ≥ 2")]
    NotContractive { product: f64 },
    #[error("consensus weight must be positive and finite, got {0}")]
    BadWeight(f64),
}

/// Topology descriptor, e.g. `ring:4`, `path:4`, `complete:4`, `star:4`,
/// `edges:1-2,2-3,3-4`, or `single` for one isolated sensor. Vertices in
/// explicit edge lists are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Topology {
    Single,
    Path(usize),
    Ring(usize),
    Complete(usize),
    Star(usize),
    Edges(Vec<(usize, usize)>),
}

impl FromStr for Topology {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "single" {
            return Ok(Topology::Single);
        }
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| NetworkError::BadSpec(format!("expected kind:arg, got {s:?}")))?;
        let count = || {
            arg.trim()
                .parse::<usize>()
                .map_err(|_| NetworkError::BadSpec(format!("bad sensor count {arg:?}")))
        };
        match kind.trim() {
            "path" => Ok(Topology::Path(count()?)),
            "ring" => Ok(Topology::Ring(count()?)),
            "complete" => Ok(Topology::Complete(count()?)),
            "star" => Ok(Topology::Star(count()?)),
            "edges" => arg
                .split(',')
                .map(|pair| {
                    let (i, j) = pair.trim().split_once('-').ok_or_else(|| {
                        NetworkError::BadSpec(format!("bad edge {pair:?}, expected i-j"))
                    })?;
                    let parse = |v: &str| {
                        v.trim()
                            .parse::<usize>()
                            .map_err(|_| NetworkError::BadSpec(format!("bad vertex {v:?}")))
                    };
                    Ok((parse(i)?, parse(j)?))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Topology::Edges),
            other => Err(NetworkError::BadSpec(format!("unknown topology {other:?}"))),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Single => write!(f, "single"),
            Topology::Path(n) => write!(f, "path:{n}"),
            Topology::Ring(n) => write!(f, "ring:{n}"),
            Topology::Complete(n) => write!(f, "complete:{n}"),
            Topology::Star(n) => write!(f, "star:{n}"),
            Topology::Edges(edges) => {
                write!(f, "edges:")?;
                for (idx, (i, j)) in edges.iter().enumerate() {
                    if idx > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{i}-{j}")?;
                }
                Ok(())
            }
        }
    }
}

/// Connected undirected graph. Vertices are `0..nodes`, edges stored as
/// `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    nodes: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| match (a == i, b == i) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == i || b == i).count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.nodes).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn laplacian(&self) -> Matrix {
        let mut l = Matrix::zeros(self.nodes, self.nodes);
        for &(i, j) in &self.edges {
            l[(i, j)] = -1.0;
            l[(j, i)] = -1.0;
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
        }
        l
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for w in self.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

pub fn build_graph(topology: &Topology) -> Result<Graph, NetworkError> {
    let need_two = |n: usize| {
        if n < 2 {
            Err(NetworkError::BadSpec(format!("need at least 2 sensors, got {n}")))
        } else {
            Ok(n)
        }
    };
    let ordered = |a: usize, b: usize| (a.min(b), a.max(b));
    let (nodes, edges): (usize, BTreeSet<_>) = match topology {
        Topology::Single => (1, BTreeSet::new()),
        Topology::Path(n) => {
            let n = need_two(*n)?;
            (n, (1..n).map(|i| (i - 1, i)).collect())
        }
        Topology::Ring(n) => {
            let n = need_two(*n)?;
            (n, (0..n).map(|i| ordered(i, (i + 1) % n)).collect())
        }
        Topology::Complete(n) => {
            let n = need_two(*n)?;
            (
                n,
                (0..n)
                    .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                    .collect(),
            )
        }
        Topology::Star(n) => {
            let n = need_two(*n)?;
            (n, (1..n).map(|i| (0, i)).collect())
        }
        Topology::Edges(list) => {
            let mut edges = BTreeSet::new();
            let mut nodes = 0;
            for &(i, j) in list {
                if i == 0 || j == 0 {
                    return Err(NetworkError::BadSpec("vertices are 1-based".into()));
                }
                if i == j {
                    return Err(NetworkError::BadSpec(format!("self-loop at {i}")));
                }
                nodes = nodes.max(i).max(j);
                edges.insert(ordered(i - 1, j - 1));
            }
            (need_two(nodes)?, edges)
        }
    };
    let graph = Graph { nodes, edges };
    if !graph.is_connected() {
        return Err(NetworkError::Disconnected);
    }
    Ok(graph)
}

/// Laplacian mixing `I − wL` validated to contract the disagreement subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOperator {
    laplacian: Matrix,
    weight: f64,
    mixing: Matrix,
    neighbors: Vec<Vec<usize>>,
    lambda_max: f64,
    rho: f64,
}

impl ConsensusOperator {
    pub fn laplacian(&self) -> &Matrix {
        &self.laplacian
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mixing(&self) -> &Matrix {
        &self.mixing
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn sensors(&self) -> usize {
        self.neighbors.len()
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Spectral radius of `I − wL − 𝟙𝟙ᵀ/N`: the per-round contraction factor
    /// of disagreement.
    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// Default weight `1 / (d_max + 1)`.
pub fn default_weight(g: &Graph) -> f64 {
    1.0 / (g.max_degree() as f64 + 1.0)
}

pub fn consensus_operator(g: &Graph, weight: Option<f64>) -> Result<ConsensusOperator, NetworkError> {
    let w = weight.unwrap_or_else(|| default_weight(g));
    if !(w.is_finite() && w > 0.0) {
        return Err(NetworkError::BadWeight(w));
    }
    let n = g.nodes();
    let laplacian = g.laplacian();
    let lambda_max = SymmetricEigen::new(laplacian.clone())
        .eigenvalues
        .max()
        .max(0.0);
    if w * lambda_max >= 2.0 {
        return Err(NetworkError::NotContractive {
            product: w * lambda_max,
        });
    }
    let mixing = Matrix::identity(n, n) - &laplacian * w;
    let averaging = Matrix::from_element(n, n, 1.0 / n as f64);
    let rho = SymmetricEigen::new(&mixing - averaging)
        .eigenvalues
        .amax();
    // Unit-modulus disagreement modes only arise on disconnected graphs,
    // which build_graph rejects.
    debug_assert!(rho < 1.0);
    Ok(ConsensusOperator {
        neighbors: (0..n).map(|i| g.neighbors(i)).collect(),
        laplacian,
        weight: w,
        mixing,
        lambda_max,
        rho,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GainMode {
    #[default]
    Uniform,
    Masked,
}

impl FromStr for GainMode {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "uniform" => Ok(GainMode::Uniform),
            "masked" => Ok(GainMode::Masked),
            other => Err(NetworkError::BadSpec(format!("unknown gain mode {other:?}"))),
        }
    }
}

impl fmt::Display for GainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GainMode::Uniform => "uniform",
            GainMode::Masked => "masked",
        })
    }
}

/// Innovation gains `L_1..L_N` with `Σ L_i = N·I`.
///
/// Uniform: every `L_i = I`. Masked: coordinate `c` of the Q-factor belongs
/// to sensor `c mod N`, and `L_i = N·E_i` with `E_i` the diagonal selector of
/// the coordinates sensor `i` owns. With more sensors than coordinates some
/// sensors own nothing and only relay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GainAllocation {
    mode: GainMode,
    sensors: usize,
    dim: usize,
}

pub fn allocate_gains(g: &Graph, n: usize, m: usize, mode: GainMode) -> GainAllocation {
    GainAllocation {
        mode,
        sensors: g.nodes(),
        dim: n + m,
    }
}

impl GainAllocation {
    pub fn mode(&self) -> GainMode {
        self.mode
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sensor owning coordinate `c` in masked mode.
    pub fn owner(&self, c: usize) -> usize {
        c % self.sensors
    }

    /// Diagonal of `L_i` as integers.
    pub fn diagonal(&self, i: usize) -> Vec<u64> {
        (0..self.dim)
            .map(|c| match self.mode {
                GainMode::Uniform => 1,
                GainMode::Masked if self.owner(c) == i => self.sensors as u64,
                GainMode::Masked => 0,
            })
            .collect()
    }

    pub fn matrix(&self, i: usize) -> Matrix {
        let diag = self.diagonal(i);
        Matrix::from_fn(self.dim, self.dim, |r, c| {
            if r == c {
                diag[r] as f64
            } else {
                0.0
            }
        })
    }

    pub fn matrices(&self) -> Vec<Matrix> {
        (0..self.sensors).map(|i| self.matrix(i)).collect()
    }

    /// `L_i · y`.
    pub fn apply(&self, i: usize, y: &Matrix) -> Matrix {
        match self.mode {
            GainMode::Uniform => y.clone(),
            GainMode::Masked => {
                let diag = self.diagonal(i);
                let mut out = y.clone();
                for (r, mut row) in out.row_iter_mut().enumerate() {
                    row *= diag[r] as f64;
                }
                out
            }
        }
    }
}
