//! Estimation instances: topology, priors, noise, coefficient blocks and
//! observations.
//!
//! Node `n` observes `y_n = Σ_{j ∈ B(f_n)} A_{n,j} x_j + z_n` with
//! `x_j ~ N(0, W_j)` and `z_n ~ N(0, R_n)`. The scope `B(f_n)` of factor `n`
//! is the set of keys of its coefficient map: always `n` itself plus some or
//! all of its communication neighbors.

mod generate;
mod io;

pub use generate::{generate_random, Coupling, GeneratorConfig, Topology};
pub use io::{load, parse, save, to_json_string};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cone::{is_pd, ConeTolerance, SymMatrix};
use crate::error::{Error, Result};

/// One node: its variable `x_n` and its local observation factor `f_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: usize,
    /// `N_n`, the dimension of `x_n`.
    pub dim: usize,
    /// `W_n`.
    pub prior_cov: SymMatrix,
    /// `R_n`.
    pub noise_cov: SymMatrix,
    /// `y_n`.
    pub obs: DVector<f64>,
    /// `A_{n,j}` keyed by `j`.
    pub coeff: BTreeMap<usize, DMatrix<f64>>,
}

impl NodeSpec {
    pub fn obs_dim(&self) -> usize {
        self.obs.len()
    }
}

/// Factor `n` sending to variable `i`. Ordered by `(factor, variable)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct DirectedEdge {
    pub factor: usize,
    pub variable: usize,
}

impl DirectedEdge {
    pub fn new(factor: usize, variable: usize) -> Self {
        Self { factor, variable }
    }
}

impl fmt::Display for DirectedEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}->{}", self.factor, self.variable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    DuplicateId,
    UnknownNode,
    SelfLoop,
    DimZero,
    PriorShape,
    PriorNotPd,
    NoiseShape,
    NoiseNotPd,
    ObsShape,
    MissingOwnCoeff,
    CoeffNotNeighbor,
    CoeffShape,
    RankDeficient,
    NonFinite,
    EdgeUnused,
    Disconnected,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::DuplicateId => "duplicate-id",
            Rule::UnknownNode => "unknown-node",
            Rule::SelfLoop => "self-loop",
            Rule::DimZero => "dim-zero",
            Rule::PriorShape => "prior-shape",
            Rule::PriorNotPd => "prior-not-PD",
            Rule::NoiseShape => "noise-shape",
            Rule::NoiseNotPd => "noise-not-PD",
            Rule::ObsShape => "obs-shape",
            Rule::MissingOwnCoeff => "missing-own-coeff",
            Rule::CoeffNotNeighbor => "coeff-not-neighbor",
            Rule::CoeffShape => "coeff-shape",
            Rule::RankDeficient => "rank-deficient",
            Rule::NonFinite => "non-finite",
            Rule::EdgeUnused => "edge-unused",
            Rule::Disconnected => "disconnected",
        }
    }
}

/// A single failed model check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub node: usize,
    pub other: Option<usize>,
    pub rule: Rule,
    pub detail: String,
}

impl Violation {
    fn new(node: usize, other: Option<usize>, rule: Rule, detail: impl Into<String>) -> Self {
        Self {
            node,
            other,
            rule,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.other {
            Some(o) => write!(f, "{}@({},{})", self.rule.as_str(), self.node, o)?,
            None => write!(f, "{}@{}", self.rule.as_str(), self.node)?,
        }
        if !self.detail.is_empty() {
            write!(f, " [{}]", self.detail)?;
        }
        Ok(())
    }
}

/// A complete estimation instance. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNetwork {
    nodes: Vec<NodeSpec>,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    factor_scope: Vec<Vec<usize>>,
    variable_factors: Vec<Vec<usize>>,
    directed: Vec<DirectedEdge>,
}

impl GaussianNetwork {
    /// Assembles a network and derives its neighborhoods.
    ///
    /// Only structural problems that make the neighborhoods undefined are
    /// rejected here (ids not `1..=M` in order, unknown edge endpoints,
    /// coefficient keys outside the node's neighborhood). Numerical model
    /// checks are reported by [`GaussianNetwork::validate`].
    pub fn new(nodes: Vec<NodeSpec>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let m = nodes.len();
        let mut problems = Vec::new();
        if m == 0 {
            return Err(Error::InvalidInput("network has no nodes".into()));
        }
        for (k, node) in nodes.iter().enumerate() {
            if node.id != k + 1 {
                problems.push(Violation::new(
                    node.id,
                    None,
                    Rule::DuplicateId,
                    format!(
                        "node ids must be 1..={m} in order; position {} holds {}",
                        k + 1,
                        node.id
                    ),
                ));
            }
        }
        let mut edge_set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                problems.push(Violation::new(a, Some(b), Rule::SelfLoop, ""));
                continue;
            }
            for end in [a, b] {
                if end == 0 || end > m {
                    problems.push(Violation::new(a, Some(b), Rule::UnknownNode, format!("no node {end}")));
                }
            }
            edge_set.insert((a.min(b), a.max(b)));
        }
        if !problems.is_empty() {
            return Err(Error::InvalidNetwork(problems));
        }

        let mut neighbors = vec![Vec::new(); m];
        for &(a, b) in &edge_set {
            neighbors[a - 1].push(b);
            neighbors[b - 1].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }

        let mut factor_scope = Vec::with_capacity(m);
        for node in &nodes {
            let n = node.id;
            if !node.coeff.contains_key(&n) {
                problems.push(Violation::new(
                    n,
                    None,
                    Rule::MissingOwnCoeff,
                    "A must contain the node's own id",
                ));
            }
            for &j in node.coeff.keys() {
                if j != n && neighbors[n - 1].binary_search(&j).is_err() {
                    problems.push(Violation::new(
                        n,
                        Some(j),
                        Rule::CoeffNotNeighbor,
                        "A key is not a neighbor",
                    ));
                }
            }
            factor_scope.push(node.coeff.keys().copied().collect::<Vec<_>>());
        }
        if !problems.is_empty() {
            return Err(Error::InvalidNetwork(problems));
        }

        let mut variable_factors = vec![Vec::new(); m];
        for (k, scope) in factor_scope.iter().enumerate() {
            for &j in scope {
                variable_factors[j - 1].push(k + 1);
            }
        }
        let directed = factor_scope
            .iter()
            .enumerate()
            .flat_map(|(k, scope)| scope.iter().map(move |&i| DirectedEdge::new(k + 1, i)))
            .collect();

        Ok(Self {
            nodes,
            edges: edge_set,
            neighbors,
            factor_scope,
            variable_factors,
            directed,
        })
    }

    /// [`GaussianNetwork::new`] followed by [`GaussianNetwork::validate`].
    pub fn checked(nodes: Vec<NodeSpec>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let net = Self::new(nodes, edges)?;
        let v = net.validate();
        if v.is_empty() {
            Ok(net)
        } else {
            Err(Error::InvalidNetwork(v))
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &NodeSpec {
        &self.nodes[id - 1]
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    /// `I(n)`, ascending.
    pub fn neighbors(&self, n: usize) -> &[usize] {
        &self.neighbors[n - 1]
    }

    /// `B(f_n)`: variables touched by factor `n`, ascending.
    pub fn factor_scope(&self, n: usize) -> &[usize] {
        &self.factor_scope[n - 1]
    }

    /// `B(j)`: factors touching variable `j`, ascending.
    pub fn variable_factors(&self, j: usize) -> &[usize] {
        &self.variable_factors[j - 1]
    }

    /// All factor→variable edges ascending first on factor then on variable.
    pub fn directed_edges(&self) -> &[DirectedEdge] {
        &self.directed
    }

    pub fn edge_index(&self, e: DirectedEdge) -> Option<usize> {
        self.directed.binary_search(&e).ok()
    }

    pub fn coeff(&self, n: usize, j: usize) -> &DMatrix<f64> {
        &self.nodes[n - 1].coeff[&j]
    }

    pub fn dim(&self, i: usize) -> usize {
        self.nodes[i - 1].dim
    }

    pub fn total_dim(&self) -> usize {
        self.nodes.iter().map(|n| n.dim).sum()
    }

    /// Every model check; an empty list means the instance is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for node in &self.nodes {
            self.validate_node(node, &mut out);
        }
        for &(a, b) in &self.edges {
            let used = self.nodes[a - 1].coeff.contains_key(&b) || self.nodes[b - 1].coeff.contains_key(&a);
            if !used {
                out.push(Violation::new(
                    a,
                    Some(b),
                    Rule::EdgeUnused,
                    "neither factor observes the other endpoint",
                ));
            }
        }
        if !self.is_connected() {
            out.push(Violation::new(
                1,
                None,
                Rule::Disconnected,
                "communication graph is not connected",
            ));
        }
        out
    }

    fn validate_node(&self, node: &NodeSpec, out: &mut Vec<Violation>) {
        let n = node.id;
        if node.dim == 0 {
            out.push(Violation::new(n, None, Rule::DimZero, ""));
            return;
        }
        if node.prior_cov.dim() != node.dim {
            out.push(Violation::new(
                n,
                None,
                Rule::PriorShape,
                format!("W is {0}x{0}, dim is {1}", node.prior_cov.dim(), node.dim),
            ));
        } else if !is_pd(&node.prior_cov, &ConeTolerance::for_matrix(&node.prior_cov)) {
            out.push(Violation::new(n, None, Rule::PriorNotPd, ""));
        }
        let m = node.obs_dim();
        if node.obs.iter().any(|v| !v.is_finite()) {
            out.push(Violation::new(n, None, Rule::NonFinite, "y"));
        }
        if m == 0 {
            out.push(Violation::new(n, None, Rule::ObsShape, "y is empty"));
        }
        if node.noise_cov.dim() != m {
            out.push(Violation::new(
                n,
                None,
                Rule::NoiseShape,
                format!("R is {0}x{0}, y has length {m}", node.noise_cov.dim()),
            ));
        } else if !is_pd(&node.noise_cov, &ConeTolerance::for_matrix(&node.noise_cov)) {
            out.push(Violation::new(n, None, Rule::NoiseNotPd, ""));
        }
        for (&j, a) in &node.coeff {
            let nj = self.nodes[j - 1].dim;
            if a.nrows() != m || a.ncols() != nj {
                out.push(Violation::new(
                    n,
                    Some(j),
                    Rule::CoeffShape,
                    format!("A is {}x{}, expected {m}x{nj}", a.nrows(), a.ncols()),
                ));
                continue;
            }
            if a.iter().any(|v| !v.is_finite()) {
                out.push(Violation::new(n, Some(j), Rule::NonFinite, "A"));
                continue;
            }
            if column_rank(a) < nj {
                out.push(Violation::new(
                    n,
                    Some(j),
                    Rule::RankDeficient,
                    format!("rank {} < {nj}", column_rank(a)),
                ));
            }
        }
    }

    fn is_connected(&self) -> bool {
        let m = self.nodes.len();
        let mut seen = vec![false; m];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            for &j in &self.neighbors[k] {
                if !seen[j - 1] {
                    seen[j - 1] = true;
                    stack.push(j - 1);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Whether the bipartite factor graph (variables and factors) is acyclic.
    pub fn is_tree_factor_graph(&self) -> bool {
        let m = self.nodes.len();
        // variables 0..m, factors m..2m
        let mut parent: Vec<usize> = (0..2 * m).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.directed {
            let a = find(&mut parent, e.variable - 1);
            let b = find(&mut parent, m + e.factor - 1);
            if a == b {
                return false;
            }
            parent[a] = b;
        }
        true
    }
}

/// Numerical column rank from singular values.
pub(crate) fn column_rank(a: &DMatrix<f64>) -> usize {
    if a.ncols() == 0 || a.nrows() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0_f64, |m, v| m.max(*v));
    if smax == 0.0 {
        return 0;
    }
    let eps = smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    sv.iter().filter(|&&s| s > eps).count()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    fn scalar_node(id: usize, keys: &[usize], y: f64) -> NodeSpec {
        NodeSpec {
            id,
            dim: 1,
            prior_cov: SymMatrix::scalar(1.0),
            noise_cov: SymMatrix::scalar(1.0),
            obs: DVector::from_element(1, y),
            coeff: keys.iter().map(|&k| (k, DMatrix::from_element(1, 1, 1.0))).collect(),
        }
    }

    /// Two scalar nodes, all of A, W, R equal to one.
    pub fn golden(y1: f64, y2: f64) -> GaussianNetwork {
        GaussianNetwork::checked(vec![scalar_node(1, &[1, 2], y1), scalar_node(2, &[1, 2], y2)], [(1, 2)]).unwrap()
    }

    /// Two scalar nodes where only factor 1 couples both variables.
    pub fn tree_pair(y1: f64, y2: f64) -> GaussianNetwork {
        GaussianNetwork::checked(vec![scalar_node(1, &[1, 2], y1), scalar_node(2, &[2], y2)], [(1, 2)]).unwrap()
    }

    pub fn scalar_star(m: usize) -> GaussianNetwork {
        let mut nodes = vec![scalar_node(1, &(1..=m).collect::<Vec<_>>(), 0.0)];
        for k in 2..=m {
            nodes.push(scalar_node(k, &[1, k], 0.0));
        }
        GaussianNetwork::checked(nodes, (2..=m).map(|k| (1, k))).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn golden_is_valid() {
        let net = golden(0.3, -0.1);
        assert!(net.validate().is_empty());
        assert_eq!(net.factor_scope(1), &[1, 2]);
        assert_eq!(net.variable_factors(2), &[1, 2]);
        assert_eq!(net.directed_edges().len(), 4);
        assert!(!net.is_tree_factor_graph());
        assert!(tree_pair(0.0, 0.0).is_tree_factor_graph());
    }

    #[test]
    fn prior_not_pd_reported() {
        let mut nodes = golden(0.0, 0.0).nodes().to_vec();
        nodes[0].dim = 2;
        nodes[0].prior_cov = SymMatrix::from_diagonal(&[1.0, -1.0]);
        nodes[0].noise_cov = SymMatrix::identity(2);
        nodes[0].obs = DVector::zeros(2);
        nodes[0].coeff.insert(1, DMatrix::identity(2, 2));
        nodes[0].coeff.insert(2, DMatrix::from_element(2, 1, 1.0));
        nodes[1].coeff.remove(&1);
        let net = GaussianNetwork::new(nodes, [(1, 2)]).unwrap();
        let v = net.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].to_string(), "prior-not-PD@1");
    }

    #[test]
    fn rank_deficient_reported() {
        let mut nodes = golden(0.0, 0.0).nodes().to_vec();
        nodes[0].noise_cov = SymMatrix::identity(2);
        nodes[0].obs = DVector::zeros(2);
        nodes[0].coeff.insert(1, DMatrix::from_element(2, 1, 1.0));
        nodes[0].coeff.insert(2, DMatrix::zeros(2, 1));
        let net = GaussianNetwork::new(nodes, [(1, 2)]).unwrap();
        let v = net.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, Rule::RankDeficient);
        assert_eq!((v[0].node, v[0].other), (1, Some(2)));
        assert!(v[0].to_string().starts_with("rank-deficient@(1,2)"));
    }

    #[test]
    fn structural_errors() {
        let nodes = golden(0.0, 0.0).nodes().to_vec();
        let err = GaussianNetwork::new(nodes.clone(), [(1, 9)]).unwrap_err();
        assert!(matches!(err, Error::InvalidNetwork(ref v) if v[0].rule == Rule::UnknownNode));
        let err = GaussianNetwork::new(nodes.clone(), Vec::new()).unwrap_err();
        assert!(matches!(err, Error::InvalidNetwork(ref v) if v[0].rule == Rule::CoeffNotNeighbor));
        let mut swapped = nodes;
        swapped.swap(0, 1);
        assert!(GaussianNetwork::new(swapped, [(1, 2)]).is_err());
    }

    #[test]
    fn disconnected_and_unused_edges() {
        let mk = |id: usize, keys: &[usize]| NodeSpec {
            id,
            dim: 1,
            prior_cov: SymMatrix::scalar(1.0),
            noise_cov: SymMatrix::scalar(1.0),
            obs: DVector::zeros(1),
            coeff: keys.iter().map(|&k| (k, DMatrix::from_element(1, 1, 1.0))).collect(),
        };
        let net = GaussianNetwork::new(vec![mk(1, &[1, 2]), mk(2, &[1, 2]), mk(3, &[3])], [(1, 2)]).unwrap();
        assert!(net.validate().iter().any(|v| v.rule == Rule::Disconnected));
        let net = GaussianNetwork::new(vec![mk(1, &[1]), mk(2, &[2])], [(1, 2)]).unwrap();
        assert!(net.validate().iter().any(|v| v.rule == Rule::EdgeUnused));
    }

    #[test]
    fn star_neighborhoods() {
        let net = scalar_star(3);
        assert_eq!(net.factor_scope(1), &[1, 2, 3]);
        assert_eq!(net.factor_scope(2), &[1, 2]);
        assert_eq!(net.variable_factors(1), &[1, 2, 3]);
        assert_eq!(net.variable_factors(3), &[1, 3]);
        assert_eq!(net.directed_edges().len(), 7);
    }
}
