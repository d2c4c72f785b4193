use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{column_rank, GaussianNetwork, NodeSpec};
use crate::cone::SymMatrix;
use crate::error::{Error, Result};

const MAX_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    Ring,
    Star,
    Complete,
    Grid {
        rows: usize,
        cols: usize,
    },
    /// Erdős–Rényi with edge probability `p`, resampled until connected.
    ErdosRenyi {
        p: f64,
    },
    /// Uniform random attachment tree.
    Tree,
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidInput(format!(
                "unknown topology {s:?}; expected ring, star, complete, tree, er:<p> or grid:<rows>x<cols>"
            ))
        };
        Ok(match s {
            "ring" => Topology::Ring,
            "star" => Topology::Star,
            "complete" => Topology::Complete,
            "tree" => Topology::Tree,
            _ => {
                if let Some(p) = s.strip_prefix("er:") {
                    Topology::ErdosRenyi {
                        p: p.parse().map_err(|_| bad())?,
                    }
                } else if let Some(g) = s.strip_prefix("grid:") {
                    let (r, c) = g.split_once('x').ok_or_else(bad)?;
                    Topology::Grid {
                        rows: r.parse().map_err(|_| bad())?,
                        cols: c.parse().map_err(|_| bad())?,
                    }
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

/// Which endpoints of a communication link observe each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// Every factor observes its own variable and all neighbors.
    Full,
    /// Each link is observed by exactly one of its endpoints' factors, chosen
    /// at random. On a tree topology this yields a tree factor graph.
    Oriented,
}

impl FromStr for Coupling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Coupling::Full),
            "oriented" => Ok(Coupling::Oriented),
            _ => Err(Error::InvalidInput(format!(
                "unknown coupling {s:?}; expected full or oriented"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub nodes: usize,
    pub topology: Topology,
    pub coupling: Coupling,
    pub dim_min: usize,
    pub dim_max: usize,
    /// Coefficient entries are uniform on `[-scale, scale]`.
    pub scale: f64,
}

impl GeneratorConfig {
    pub fn new(seed: u64, nodes: usize, topology: Topology) -> Self {
        Self {
            seed,
            nodes,
            topology,
            coupling: Coupling::Full,
            dim_min: 1,
            dim_max: 1,
            scale: 1.0,
        }
    }

    pub fn dims(mut self, min: usize, max: usize) -> Self {
        self.dim_min = min;
        self.dim_max = max;
        self
    }

    pub fn coupling(mut self, c: Coupling) -> Self {
        self.coupling = c;
        self
    }

    pub fn scale(mut self, s: f64) -> Self {
        self.scale = s;
        self
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.nodes < 2 {
            return bad(format!(
                "a connected network needs at least 2 nodes, got {}",
                self.nodes
            ));
        }
        if self.dim_min == 0 || self.dim_min > self.dim_max {
            return bad(format!("invalid dimension range [{}, {}]", self.dim_min, self.dim_max));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        match self.topology {
            Topology::Grid { rows, cols } if rows * cols != self.nodes => {
                bad(format!("grid {rows}x{cols} cannot hold {} nodes", self.nodes))
            }
            Topology::ErdosRenyi { p } if !(p > 0.0 && p <= 1.0) => {
                bad(format!("edge probability must lie in (0, 1], got {p}"))
            }
            _ => Ok(()),
        }
    }
}

fn connected(m: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    let mut adj = vec![Vec::new(); m + 1];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; m + 1];
    let mut stack = vec![1];
    seen[1] = true;
    while let Some(k) = stack.pop() {
        for &j in &adj[k] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen[1..].iter().all(|&s| s)
}

fn topology_edges(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<BTreeSet<(usize, usize)>> {
    let m = cfg.nodes;
    let mut e = BTreeSet::new();
    match cfg.topology {
        Topology::Ring => {
            for k in 1..=m {
                let next = k % m + 1;
                e.insert((k.min(next), k.max(next)));
            }
        }
        Topology::Star => e.extend((2..=m).map(|k| (1, k))),
        Topology::Complete => {
            for a in 1..=m {
                e.extend((a + 1..=m).map(|b| (a, b)));
            }
        }
        Topology::Grid { rows, cols } => {
            let id = |r: usize, c: usize| r * cols + c + 1;
            for r in 0..rows {
                for c in 0..cols {
                    if c + 1 < cols {
                        e.insert((id(r, c), id(r, c + 1)));
                    }
                    if r + 1 < rows {
                        e.insert((id(r, c), id(r + 1, c)));
                    }
                }
            }
        }
        Topology::ErdosRenyi { p } => {
            for _ in 0..MAX_RESAMPLES {
                e.clear();
                for a in 1..=m {
                    for b in a + 1..=m {
                        if rng.gen_bool(p) {
                            e.insert((a, b));
                        }
                    }
                }
                if connected(m, &e) {
                    return Ok(e);
                }
            }
            return Err(Error::InvalidInput(format!(
                "no connected Erdős–Rényi graph with p={p} after {MAX_RESAMPLES} draws"
            )));
        }
        Topology::Tree => {
            for k in 2..=m {
                let parent = rng.gen_range(1..k);
                e.insert((parent, k));
            }
        }
    }
    Ok(e)
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// `Q Λ Qᵀ` with a random orthogonal `Q` and `Λ` uniform on `[0.5, 2]`.
fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
    let q = gaussian_matrix(rng, d, d).qr().q();
    let lambda = DMatrix::from_diagonal(&DVector::from_fn(d, |_, _| rng.gen_range(0.5..=2.0)));
    SymMatrix::symmetrized(&q * lambda * q.transpose())
}

fn gaussian_sample(rng: &mut ChaCha8Rng, cov: &SymMatrix) -> DVector<f64> {
    let l = cov.cholesky("sampling").expect("generator covariances are SPD").l();
    let g = DVector::from_fn(cov.dim(), |_, _| rng.sample(StandardNormal));
    l * g
}

/// Deterministic random instance for the given configuration.
pub fn generate_random(cfg: &GeneratorConfig) -> Result<GaussianNetwork> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.nodes;
    let edges = topology_edges(cfg, &mut rng)?;
    let dims: Vec<usize> = (0..m).map(|_| rng.gen_range(cfg.dim_min..=cfg.dim_max)).collect();

    let mut scopes: Vec<BTreeSet<usize>> = (1..=m).map(|n| BTreeSet::from([n])).collect();
    for &(a, b) in &edges {
        match cfg.coupling {
            Coupling::Full => {
                scopes[a - 1].insert(b);
                scopes[b - 1].insert(a);
            }
            Coupling::Oriented => {
                if rng.gen_bool(0.5) {
                    scopes[a - 1].insert(b);
                } else {
                    scopes[b - 1].insert(a);
                }
            }
        }
    }

    let priors: Vec<SymMatrix> = dims.iter().map(|&d| random_spd(&mut rng, d)).collect();
    let truth: Vec<DVector<f64>> = priors.iter().map(|w| gaussian_sample(&mut rng, w)).collect();

    let mut nodes = Vec::with_capacity(m);
    for n in 1..=m {
        let rows: usize = scopes[n - 1].iter().map(|&j| dims[j - 1]).sum();
        let noise = random_spd(&mut rng, rows);
        let mut coeff = BTreeMap::new();
        for &j in &scopes[n - 1] {
            let cols = dims[j - 1];
            let a = (0..MAX_RESAMPLES)
                .map(|_| DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-cfg.scale..=cfg.scale)))
                .find(|a| column_rank(a) == cols)
                .ok_or_else(|| Error::InvalidInput("could not draw a full column rank coefficient block".into()))?;
            coeff.insert(j, a);
        }
        let mut y = gaussian_sample(&mut rng, &noise);
        for (&j, a) in &coeff {
            y += a * &truth[j - 1];
        }
        nodes.push(NodeSpec {
            id: n,
            dim: dims[n - 1],
            prior_cov: priors[n - 1].clone(),
            noise_cov: noise,
            obs: y,
            coeff,
        });
    }
    GaussianNetwork::checked(nodes, edges)
}
