//! Synchronous Gaussian belief propagation on the factor graph of a
//! [`GaussianNetwork`].
//!
//! Messages are kept in information form. One sweep computes every
//! variable→factor message from the previous factor→variable messages and
//! then every factor→variable message from those; nothing computed in the
//! current sweep is read before the sweep completes. All neighbor sums run in
//! ascending node-id order, so a sweep is bit-reproducible whatever the
//! number of worker threads.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{ConvergenceTrace, TraceRecord};
use crate::cone::{is_psd, BlockDiagonal, ConeTolerance, SymMatrix};
use crate::error::{Error, Result};
use crate::network::{DirectedEdge, GaussianNetwork};

/// Message from factor `edge.factor` to variable `edge.variable`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMessage {
    pub edge: DirectedEdge,
    /// Information matrix (inverse covariance) of the message.
    pub info: SymMatrix,
    pub mean: DVector<f64>,
}

/// Variable→factor message. Recomputed every sweep, never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct VarToFactorMessage {
    pub variable: usize,
    pub factor: usize,
    pub info: SymMatrix,
    /// Inverse of `info`.
    pub cov: SymMatrix,
    pub mean: DVector<f64>,
}

/// Every factor→variable message at one iteration, in ascending edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    iteration: usize,
    messages: Vec<EdgeMessage>,
}

impl MessageState {
    /// Zero information on every edge.
    pub fn zero(net: &GaussianNetwork) -> Self {
        Self::filled(net, SymMatrix::zeros)
    }

    pub fn scaled_identity(net: &GaussianNetwork, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "identity scale must be finite and >= 0, got {gamma}"
            )));
        }
        Ok(Self::filled(net, |d| SymMatrix::identity(d).scaled(gamma)))
    }

    fn filled(net: &GaussianNetwork, info: impl Fn(usize) -> SymMatrix) -> Self {
        let messages = net
            .directed_edges()
            .iter()
            .map(|&edge| {
                let d = net.dim(edge.variable);
                EdgeMessage {
                    edge,
                    info: info(d),
                    mean: DVector::zeros(d),
                }
            })
            .collect();
        Self { iteration: 0, messages }
    }

    /// Builds a state from explicit messages. The set of edges must equal the
    /// network's directed edges and every information block must be PSD.
    pub fn from_messages(net: &GaussianNetwork, iteration: usize, mut messages: Vec<EdgeMessage>) -> Result<Self> {
        messages.sort_by_key(|m| m.edge);
        let edges: Vec<DirectedEdge> = messages.iter().map(|m| m.edge).collect();
        if edges != net.directed_edges() {
            return Err(Error::InvalidInput(format!(
                "messages must cover exactly the {} directed edges of the network, once each",
                net.directed_edges().len()
            )));
        }
        for m in &messages {
            let d = net.dim(m.edge.variable);
            if m.info.dim() != d || m.mean.len() != d {
                return Err(Error::InvalidInput(format!(
                    "message {} must have dimension {d}",
                    m.edge
                )));
            }
            let tol = ConeTolerance::for_matrix(&m.info);
            if !is_psd(&m.info, &tol) {
                return Err(Error::InvalidInput(format!(
                    "initial information of {} is not positive semidefinite (min eigenvalue {:.3e}); \
                     convergence is only guaranteed from positive semidefinite initial information",
                    m.edge,
                    m.info.min_eigenvalue()
                )));
            }
        }
        Ok(Self { iteration, messages })
    }

    /// Explicit message blocks for an initial state, as JSON.
    pub fn from_json(net: &GaussianNetwork, text: &str) -> Result<Self> {
        let file: StateFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut messages = Vec::with_capacity(file.messages.len());
        for (k, m) in file.messages.into_iter().enumerate() {
            let info = SymMatrix::from_rows(&m.info).map_err(|e| Error::Parse(format!("messages[{k}].info: {e}")))?;
            let mean = match m.mean {
                Some(v) => DVector::from_vec(v),
                None => DVector::zeros(info.dim()),
            };
            messages.push(EdgeMessage {
                edge: DirectedEdge::new(m.factor, m.variable),
                info,
                mean,
            });
        }
        Self::from_messages(net, 0, messages)
    }

    pub fn to_json(&self) -> String {
        let file = StateFile {
            messages: self
                .messages
                .iter()
                .map(|m| MessageFile {
                    factor: m.edge.factor,
                    variable: m.edge.variable,
                    info: m.info.to_rows(),
                    mean: Some(m.mean.iter().copied().collect()),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("plain data")
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn messages(&self) -> &[EdgeMessage] {
        &self.messages
    }

    pub fn message(&self, edge: DirectedEdge) -> Option<&EdgeMessage> {
        self.messages
            .binary_search_by_key(&edge, |m| m.edge)
            .ok()
            .map(|k| &self.messages[k])
    }

    fn expect(&self, factor: usize, variable: usize) -> &EdgeMessage {
        self.message(DirectedEdge::new(factor, variable))
            .expect("state is complete over the network's edges")
    }

    /// Information blocks in ascending edge order.
    pub fn blocks(&self) -> BlockDiagonal {
        BlockDiagonal::new(self.messages.iter().map(|m| m.info.clone()).collect()).expect("networks have edges")
    }

    /// The block-diagonal matrix of all edge information blocks.
    pub fn stacked(&self) -> SymMatrix {
        self.blocks().dense()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    messages: Vec<MessageFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageFile {
    factor: usize,
    variable: usize,
    info: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean: Option<Vec<f64>>,
}

/// Local posterior approximation of one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub variable: usize,
    pub cov: SymMatrix,
    pub mean: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zero,
    ScaledIdentity(f64),
    Explicit(MessageState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub max_iterations: usize,
    /// Stop once the largest Frobenius change of any information block is at most this.
    pub tol_frobenius: f64,
    pub init: Init,
    /// When set, stopping additionally requires the largest mean change to be at most this.
    pub mean_tol: Option<f64>,
    /// Keep the information blocks of every iteration in the outcome.
    pub record_history: bool,
    pub workers: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tol_frobenius: 1e-10,
            init: Init::Zero,
            mean_tol: None,
            record_history: false,
            workers: 1,
        }
    }
}

fn with_edge(e: Error, edge: DirectedEdge) -> Error {
    match e {
        Error::Numerical { context, condition } => Error::Numerical {
            context: format!("{edge}: {context}"),
            condition,
        },
        other => other,
    }
}

/// Variable `j` to factor `n`, from the previous factor→variable messages.
pub fn var_to_factor_info(
    net: &GaussianNetwork,
    state: &MessageState,
    j: usize,
    n: usize,
) -> Result<VarToFactorMessage> {
    let factors = net.variable_factors(j);
    if factors.binary_search(&n).is_err() {
        return Err(Error::InvalidInput(format!("factor {n} does not touch variable {j}")));
    }
    let mut info = net.node(j).prior_cov.inverse("prior inverse")?.into_matrix();
    let mut weighted = DVector::zeros(net.dim(j));
    for &k in factors.iter().filter(|&&k| k != n) {
        let m = state.expect(k, j);
        info += m.info.as_matrix();
        weighted += m.info.as_matrix() * &m.mean;
    }
    let info = SymMatrix::symmetrized(info);
    let context = format!("variable {j} to factor {n}");
    let chol = info.cholesky(&context)?;
    let mean = chol.solve(&weighted);
    let cov = SymMatrix::symmetrized(chol.inverse());
    Ok(VarToFactorMessage {
        variable: j,
        factor: n,
        info,
        cov,
        mean,
    })
}

/// Factor `n` to variable `i`, from the variable→factor messages of every
/// other variable in the factor's scope (keyed by variable id).
pub fn factor_to_var_info(
    net: &GaussianNetwork,
    v2f: &BTreeMap<usize, VarToFactorMessage>,
    n: usize,
    i: usize,
) -> Result<EdgeMessage> {
    let scope = net.factor_scope(n);
    if scope.binary_search(&i).is_err() {
        return Err(Error::InvalidInput(format!(
            "variable {i} is not in the scope of factor {n}"
        )));
    }
    let node = net.node(n);
    let mut s = node.noise_cov.as_matrix().clone();
    let mut residual = node.obs.clone();
    for &j in scope.iter().filter(|&&j| j != i) {
        let msg = v2f
            .get(&j)
            .ok_or_else(|| Error::InvalidInput(format!("missing message from variable {j} to factor {n}")))?;
        let a = net.coeff(n, j);
        s += a * msg.cov.as_matrix() * a.transpose();
        residual -= a * &msg.mean;
    }
    let s = SymMatrix::symmetrized(s);
    let a_i = net.coeff(n, i);
    let s_chol = s.cholesky("factor innovation covariance")?;
    let s_inv_a: DMatrix<f64> = s_chol.solve(a_i);
    let info = SymMatrix::symmetrized(a_i.transpose() * &s_inv_a);
    let rhs = s_inv_a.transpose() * residual;
    let mean = info.cholesky("outgoing factor message")?.solve(&rhs);
    Ok(EdgeMessage {
        edge: DirectedEdge::new(n, i),
        info,
        mean,
    })
}

/// All outgoing messages of factor `n`, ascending in variable.
fn update_factor(net: &GaussianNetwork, state: &MessageState, n: usize) -> Result<Vec<EdgeMessage>> {
    let scope = net.factor_scope(n);
    let mut v2f = BTreeMap::new();
    for &j in scope {
        let m = var_to_factor_info(net, state, j, n).map_err(|e| with_edge(e, DirectedEdge::new(n, j)))?;
        v2f.insert(j, m);
    }
    scope
        .iter()
        .map(|&i| factor_to_var_info(net, &v2f, n, i).map_err(|e| with_edge(e, DirectedEdge::new(n, i))))
        .collect()
}

/// One synchronous sweep: iteration ℓ → ℓ+1.
pub fn combined_update(net: &GaussianNetwork, state: &MessageState) -> Result<MessageState> {
    let per_factor: Result<Vec<_>> = (1..=net.len()).map(|n| update_factor(net, state, n)).collect();
    Ok(MessageState {
        iteration: state.iteration + 1,
        messages: per_factor?.into_iter().flatten().collect(),
    })
}

/// [`combined_update`] with factors processed on a worker pool. The result
/// is bit-identical to the sequential sweep.
pub fn combined_update_parallel(
    net: &GaussianNetwork,
    state: &MessageState,
    pool: &rayon::ThreadPool,
) -> Result<MessageState> {
    let per_factor: Result<Vec<_>> = pool.install(|| {
        (1..=net.len())
            .into_par_iter()
            .map(|n| update_factor(net, state, n))
            .collect()
    });
    Ok(MessageState {
        iteration: state.iteration + 1,
        messages: per_factor?.into_iter().flatten().collect(),
    })
}

pub fn compute_belief(net: &GaussianNetwork, state: &MessageState, i: usize) -> Result<Belief> {
    let mut info = net.node(i).prior_cov.inverse("prior inverse")?.into_matrix();
    let mut weighted = DVector::zeros(net.dim(i));
    for &n in net.variable_factors(i) {
        let m = state.expect(n, i);
        info += m.info.as_matrix();
        weighted += m.info.as_matrix() * &m.mean;
    }
    let info = SymMatrix::symmetrized(info);
    let chol = info.cholesky(&format!("belief of variable {i}"))?;
    Ok(Belief {
        variable: i,
        mean: chol.solve(&weighted),
        cov: SymMatrix::symmetrized(chol.inverse()),
    })
}

pub fn compute_beliefs(net: &GaussianNetwork, state: &MessageState) -> Result<Vec<Belief>> {
    (1..=net.len()).map(|i| compute_belief(net, state, i)).collect()
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: MessageState,
    pub beliefs: Vec<Belief>,
    pub trace: ConvergenceTrace,
    /// Information blocks met the stopping rule.
    pub converged: bool,
    /// The final mean change is within `mean_tol` (or `tol_frobenius` when unset).
    pub mean_converged: bool,
    pub iterations: usize,
    /// Information blocks per iteration; empty unless requested.
    pub history: Vec<BlockDiagonal>,
}

fn max_mean_delta(a: &MessageState, b: &MessageState) -> f64 {
    a.messages
        .iter()
        .zip(&b.messages)
        .map(|(x, y)| (&x.mean - &y.mean).amax())
        .fold(0.0, f64::max)
}

fn initial_state(net: &GaussianNetwork, init: &Init) -> Result<MessageState> {
    match init {
        Init::Zero => Ok(MessageState::zero(net)),
        Init::ScaledIdentity(g) => MessageState::scaled_identity(net, *g),
        Init::Explicit(s) => MessageState::from_messages(net, 0, s.messages.clone()),
    }
}

/// Iterates sweeps until the information blocks settle or the budget runs out.
pub fn run(net: &GaussianNetwork, cfg: &ScheduleConfig) -> Result<RunOutcome> {
    if !(cfg.tol_frobenius.is_finite() && cfg.tol_frobenius >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "tolerance must be finite and >= 0, got {}",
            cfg.tol_frobenius
        )));
    }
    if cfg.workers == 0 {
        return Err(Error::InvalidInput("workers must be >= 1".into()));
    }
    let pool = if cfg.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?,
        )
    } else {
        None
    };

    let mut state = initial_state(net, &cfg.init)?;
    let mut trace = ConvergenceTrace::default();
    trace.records.push(TraceRecord::new(0));
    let mut history = Vec::new();
    if cfg.record_history {
        history.push(state.blocks());
    }

    let mean_tol = cfg.mean_tol.unwrap_or(cfg.tol_frobenius);
    let mut converged = false;
    let mut last_mean_delta = f64::INFINITY;
    for _ in 0..cfg.max_iterations {
        let next = match &pool {
            Some(p) => combined_update_parallel(net, &state, p)?,
            None => combined_update(net, &state)?,
        };
        let delta = next.blocks().max_frobenius_block_delta(&state.blocks())?;
        last_mean_delta = max_mean_delta(&next, &state);
        let mut rec = TraceRecord::new(next.iteration);
        rec.frobenius_delta = Some(delta);
        rec.mean_delta = Some(last_mean_delta);
        trace.records.push(rec);
        state = next;
        if cfg.record_history {
            history.push(state.blocks());
        }
        log::debug!(
            "iteration {}: info delta {delta:.3e}, mean delta {last_mean_delta:.3e}",
            state.iteration
        );
        let means_ok = cfg.mean_tol.is_none_or(|t| last_mean_delta <= t);
        if delta <= cfg.tol_frobenius && means_ok {
            converged = true;
            break;
        }
    }

    let beliefs = compute_beliefs(net, &state)?;
    Ok(RunOutcome {
        iterations: state.iteration,
        converged,
        mean_converged: last_mean_delta <= mean_tol,
        state,
        beliefs,
        trace,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::{golden, scalar_star, tree_pair};
    use approx::assert_relative_eq;

    fn scalar(m: &SymMatrix) -> f64 {
        assert_eq!(m.dim(), 1);
        m.as_matrix()[(0, 0)]
    }

    const GOLDEN_ROOT: f64 = 0.618_033_988_749_894_8;

    #[test]
    fn leaf_variable_gets_prior_only() {
        // variable 2 of the tree pair is touched by factors 1 and 2; towards
        // factor 2 it only hears factor 1, which is zero at initialization.
        let net = tree_pair(1.0, 2.0);
        let s = MessageState::zero(&net);
        let m = var_to_factor_info(&net, &s, 2, 2).unwrap();
        assert_eq!(scalar(&m.info), 1.0);
        assert_eq!(m.mean[0], 0.0);
        // variable 1 is touched only by factor 1
        let m = var_to_factor_info(&net, &s, 1, 1).unwrap();
        assert_eq!(scalar(&m.info), 1.0);
        assert!(var_to_factor_info(&net, &s, 1, 2).is_err());
    }

    #[test]
    fn var_to_factor_sums_incoming() {
        let net = scalar_star(3);
        let s = MessageState::scaled_identity(&net, 1.0).unwrap();
        // B(1) = {f1, f2, f3}; excluding f1 leaves two unit messages.
        let m = var_to_factor_info(&net, &s, 1, 1).unwrap();
        assert_eq!(scalar(&m.info), 3.0);
    }

    #[test]
    fn golden_first_sweep() {
        let net = golden(0.3, -0.7);
        let s = MessageState::zero(&net);
        let m = var_to_factor_info(&net, &s, 1, 2).unwrap();
        assert_eq!(scalar(&m.info), 1.0);
        let mut v2f = BTreeMap::new();
        v2f.insert(1, var_to_factor_info(&net, &s, 1, 1).unwrap());
        let out = factor_to_var_info(&net, &v2f, 1, 2).unwrap();
        assert_relative_eq!(scalar(&out.info), 0.5, epsilon = 1e-15);
        let next = combined_update(&net, &s).unwrap();
        assert_eq!(next.iteration(), 1);
        for m in next.messages() {
            assert_relative_eq!(scalar(&m.info), 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn isolated_factor_is_local_least_squares() {
        // factor 2 of the tree pair sees only variable 2: y2 = x2 + z2.
        let net = tree_pair(0.0, 0.8);
        let out = factor_to_var_info(&net, &BTreeMap::new(), 2, 2).unwrap();
        assert_relative_eq!(scalar(&out.info), 1.0, epsilon = 1e-15);
        assert_relative_eq!(out.mean[0], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn golden_converges_to_root() {
        let net = golden(0.3, -0.7);
        let cfg = ScheduleConfig {
            tol_frobenius: 1e-12,
            ..Default::default()
        };
        let out = run(&net, &cfg).unwrap();
        assert!(out.converged);
        for m in out.state.messages() {
            assert_relative_eq!(scalar(&m.info), GOLDEN_ROOT, epsilon = 1e-11);
        }
        assert_relative_eq!(scalar(&out.beliefs[0].cov), 1.0 / 5f64.sqrt(), epsilon = 1e-10);

        // the fixed point maps to itself
        let again = combined_update(&net, &out.state).unwrap();
        assert!(again.blocks().max_frobenius_block_delta(&out.state.blocks()).unwrap() < 1e-12);
    }

    #[test]
    fn zero_budget_returns_init() {
        let net = golden(0.3, -0.7);
        let cfg = ScheduleConfig {
            max_iterations: 0,
            ..Default::default()
        };
        let out = run(&net, &cfg).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(!out.converged);
        assert_eq!(out.state, MessageState::zero(&net));
        assert_eq!(out.trace.records.len(), 1);
        assert_eq!(scalar(&out.beliefs[0].cov), 1.0);
        assert_eq!(out.beliefs[0].mean[0], 0.0);
    }

    #[test]
    fn explicit_init_must_be_psd() {
        let net = golden(0.0, 0.0);
        let mut msgs = MessageState::zero(&net).messages().to_vec();
        msgs[2].info = SymMatrix::scalar(-1.0);
        let err = MessageState::from_messages(&net, 0, msgs).unwrap_err();
        assert!(err.to_string().contains("positive semidefinite"));
        let mut msgs = MessageState::zero(&net).messages().to_vec();
        msgs.pop();
        assert!(MessageState::from_messages(&net, 0, msgs).is_err());
    }

    #[test]
    fn state_json_round_trip() {
        let net = golden(0.1, 0.2);
        let s = MessageState::scaled_identity(&net, 2.5).unwrap();
        assert_eq!(MessageState::from_json(&net, &s.to_json()).unwrap(), s);
    }

    #[test]
    fn info_ignores_observations() {
        let a = golden(0.0, 0.0);
        let b = golden(5.0, -3.0);
        let sa = combined_update(&a, &MessageState::zero(&a)).unwrap();
        let sb = combined_update(&b, &MessageState::zero(&b)).unwrap();
        assert_eq!(sa.blocks(), sb.blocks());
    }

    #[test]
    fn workers_do_not_change_results() {
        let net = scalar_star(5);
        let seq = run(&net, &ScheduleConfig::default()).unwrap();
        let par = run(
            &net,
            &ScheduleConfig {
                workers: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(seq.state, par.state);
        assert_eq!(seq.trace, par.trace);
    }
}
