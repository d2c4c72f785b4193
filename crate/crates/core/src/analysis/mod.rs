//! Convergence diagnostics for the message information matrices.
//!
//! The entry point [`analyze`] runs the engine with history, computes a
//! tight numerical fixed point `C*`, and then checks a trajectory against
//! the cone bounds, the part-metric contraction, the norm bound, the two
//! monotone bracketing sequences and randomized order-property probes.

mod properties;
mod rate;
mod stacked;
mod trace;

pub use properties::{
    bounds_ul, monotone_margin, property_harness, random_psd, sandwich_sequences, scaling_margins, CheckStats,
    ConeBounds, PropertyReport, SandwichReport, SequenceReport,
};
pub use rate::{norm_domination, rate_analysis, NormBound, NormDomination, RateReport, RATE_WINDOW_START};
pub use stacked::{DenseStacked, Selection, StackedOperator};
pub use trace::{ConvergenceTrace, TraceRecord};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cone::BlockDiagonal;
use crate::engine::{run, Init, RunOutcome, ScheduleConfig};
use crate::error::Result;
use crate::network::GaussianNetwork;

pub fn build_stacked(net: &GaussianNetwork) -> Result<StackedOperator> {
    StackedOperator::build(net)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub blocks: BlockDiagonal,
    pub converged: bool,
    pub iterations: usize,
}

impl FixedPoint {
    /// SHA-256 over the little-endian bytes of every block entry, in order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for b in self.blocks.blocks() {
            for v in b.as_matrix().iter() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Runs the engine from zero information to a tight tolerance.
pub fn fixed_point(net: &GaussianNetwork, tol: f64, max_iterations: usize) -> Result<FixedPoint> {
    let out = run(
        net,
        &ScheduleConfig {
            max_iterations,
            tol_frobenius: tol,
            init: Init::Zero,
            ..Default::default()
        },
    )?;
    Ok(FixedPoint {
        blocks: out.state.blocks(),
        converged: out.converged,
        iterations: out.iterations,
    })
}

/// `1e-8 · ‖C*‖_F`.
pub fn default_epsilon(c_star: &BlockDiagonal) -> f64 {
    1e-8 * c_star.frobenius_norm()
}

/// Fills part distances, bound checks and norm-bound checks of `trace`
/// from the per-iteration information blocks in `history`.
pub fn annotate_trace(
    trace: &mut ConvergenceTrace,
    history: &[BlockDiagonal],
    bounds: &ConeBounds,
    c_star: &BlockDiagonal,
    epsilon: f64,
    slack: f64,
) -> Result<()> {
    trace.epsilon = Some(epsilon);
    for (rec, c) in trace.records.iter_mut().zip(history) {
        rec.part_distance = if c.min_eigenvalue() > 0.0 {
            Some(c.part_metric(c_star)?)
        } else {
            None
        };
        if rec.iteration >= 1 {
            let margin = c.order_margin(&bounds.lower)?.min(bounds.upper.order_margin(c)?);
            rec.bounds_margin = Some(margin);
            rec.in_bounds = Some(margin >= -slack);
        }
        if let Some(d) = rec.part_distance {
            rec.norm_bound_ok = Some(norm_domination(c, c_star, d)?.holds(slack));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    /// Schedule of the analyzed trajectory; history recording is forced on.
    pub schedule: ScheduleConfig,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iterations: usize,
    /// Radius of the exclusion ball; defaults to `1e-8 · ‖C*‖_F`.
    pub epsilon: Option<f64>,
    /// Absolute slack for bound and norm-bound checks.
    pub slack: f64,
    pub sandwich: bool,
    pub alpha: f64,
    pub sandwich_steps: usize,
    pub sandwich_target: f64,
    pub properties: bool,
    pub trials: usize,
    pub seed: u64,
    /// Use these blocks as `C*` instead of iterating to a fixed point.
    pub fixed_point: Option<BlockDiagonal>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            fixed_point_tol: 1e-13,
            fixed_point_max_iterations: 10_000,
            epsilon: None,
            slack: 1e-9,
            sandwich: true,
            alpha: 2.0,
            sandwich_steps: 10_000,
            sandwich_target: 1e-6,
            properties: true,
            trials: 100,
            seed: 0,
            fixed_point: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointSummary {
    pub converged: bool,
    pub iterations: usize,
    pub hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub fixed_point: FixedPointSummary,
    pub phi: usize,
    pub edges: usize,
    pub run_converged: bool,
    pub run_iterations: usize,
    pub epsilon: f64,
    /// Smallest eigenvalue of any information block at iterations ≥ 1.
    pub min_info_eigenvalue: f64,
    pub all_in_bounds: bool,
    pub worst_bounds_margin: f64,
    pub norm_bound_all_ok: bool,
    pub rate: RateReport,
    pub sandwich: Option<SandwichReport>,
    pub properties: Option<PropertyReport>,
    #[serde(skip)]
    pub trace: ConvergenceTrace,
}

impl AnalysisReport {
    /// Every quantitative check that ran came out as predicted.
    pub fn passed(&self) -> bool {
        let sandwich_ok = self.sandwich.as_ref().is_none_or(|s| {
            s.from_above.monotone
                && s.from_below.monotone
                && s.from_above.reached_at.is_some()
                && s.from_below.reached_at.is_some()
        });
        let props_ok = self.properties.as_ref().is_none_or(|p| p.failures() == 0);
        self.min_info_eigenvalue > 0.0
            && self.all_in_bounds
            && self.norm_bound_all_ok
            && self.rate.strictly_decreasing
            && sandwich_ok
            && props_ok
    }
}

/// Full diagnostic pass over one instance.
pub fn analyze(net: &GaussianNetwork, cfg: &AnalysisConfig) -> Result<(AnalysisReport, RunOutcome)> {
    let op = build_stacked(net)?;
    let bounds = bounds_ul(&op)?;
    let fp = match &cfg.fixed_point {
        Some(blocks) => FixedPoint {
            blocks: blocks.clone(),
            converged: true,
            iterations: 0,
        },
        None => fixed_point(net, cfg.fixed_point_tol, cfg.fixed_point_max_iterations)?,
    };
    let epsilon = cfg.epsilon.unwrap_or_else(|| default_epsilon(&fp.blocks));

    let mut schedule = cfg.schedule.clone();
    schedule.record_history = true;
    let mut outcome = run(net, &schedule)?;
    annotate_trace(
        &mut outcome.trace,
        &outcome.history,
        &bounds,
        &fp.blocks,
        epsilon,
        cfg.slack,
    )?;

    let min_info_eigenvalue = outcome
        .history
        .iter()
        .skip(1)
        .map(BlockDiagonal::min_eigenvalue)
        .fold(f64::INFINITY, f64::min);
    let later = || outcome.trace.records.iter().skip(1);
    let worst_bounds_margin = later().filter_map(|r| r.bounds_margin).fold(f64::INFINITY, f64::min);
    let all_in_bounds = later().all(|r| r.in_bounds != Some(false));
    let norm_bound_all_ok = outcome.trace.records.iter().all(|r| r.norm_bound_ok != Some(false));
    let rate = rate_analysis(&outcome.trace.part_distances(), epsilon);

    let sandwich = if cfg.sandwich {
        Some(sandwich_sequences(
            &op,
            &fp.blocks,
            cfg.alpha,
            cfg.sandwich_steps,
            cfg.sandwich_target,
        )?)
    } else {
        None
    };
    let properties = if cfg.properties {
        Some(property_harness(&op, cfg.trials, cfg.seed)?)
    } else {
        None
    };

    let report = AnalysisReport {
        fixed_point: FixedPointSummary {
            converged: fp.converged,
            iterations: fp.iterations,
            hash: fp.hash(),
        },
        phi: op.phi(),
        edges: op.edge_order().len(),
        run_converged: outcome.converged,
        run_iterations: outcome.iterations,
        epsilon,
        min_info_eigenvalue,
        all_in_bounds,
        worst_bounds_margin,
        norm_bound_all_ok,
        rate,
        sandwich,
        properties,
        trace: outcome.trace.clone(),
    };
    Ok((report, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::{golden, scalar_star};
    use approx::assert_relative_eq;

    #[test]
    fn golden_rate_matches_derivative() {
        let (rep, _) = analyze(&golden(0.2, 0.4), &AnalysisConfig::default()).unwrap();
        assert!(rep.passed(), "{rep:?}");
        let c = rep.rate.c_estimate.unwrap();
        let root: f64 = (5f64.sqrt() - 1.0) / 2.0;
        let derivative = 1.0 / (2.0 + root).powi(2);
        assert_relative_eq!(derivative, 0.1459, epsilon = 1e-4);
        assert!((c - derivative).abs() < 0.02, "c = {c}");
        assert_eq!(rep.phi, 4);
    }

    #[test]
    fn star_analysis_passes() {
        let (rep, out) = analyze(
            &scalar_star(5),
            &AnalysisConfig {
                trials: 20,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(out.history.len(), out.trace.records.len());
    }

    #[test]
    fn hash_is_stable() {
        let a = fixed_point(&golden(0.0, 0.0), 1e-13, 1000).unwrap();
        let b = fixed_point(&golden(1.0, 0.0), 1e-13, 1000).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
