//! Centralized ground truth: the exact joint posterior of all variables.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cone::{block_diag, extract_block, SymMatrix};
use crate::engine::Belief;
use crate::error::Result;
use crate::network::GaussianNetwork;

/// The whole model stacked into one linear observation `ȳ = Ā x + z̄`.
#[derive(Debug, Clone)]
pub struct JointSystem {
    /// Rows grouped by factor ascending, columns by variable ascending.
    pub abar: DMatrix<f64>,
    pub rbar: SymMatrix,
    pub wbar: SymMatrix,
    pub ybar: DVector<f64>,
    /// Column offset of each variable (index `i − 1`).
    pub offsets: Vec<usize>,
}

impl JointSystem {
    pub fn new(net: &GaussianNetwork) -> Result<Self> {
        let mut offsets = Vec::with_capacity(net.len());
        let mut cols = 0;
        for node in net.nodes() {
            offsets.push(cols);
            cols += node.dim;
        }
        let rows: usize = net.nodes().iter().map(|n| n.obs_dim()).sum();
        let mut abar = DMatrix::zeros(rows, cols);
        let mut ybar = DVector::zeros(rows);
        let mut r0 = 0;
        for node in net.nodes() {
            let m = node.obs_dim();
            for (&j, a) in &node.coeff {
                abar.view_mut((r0, offsets[j - 1]), a.shape()).copy_from(a);
            }
            ybar.rows_mut(r0, m).copy_from(&node.obs);
            r0 += m;
        }
        let rbar = block_diag(&net.nodes().iter().map(|n| n.noise_cov.clone()).collect::<Vec<_>>())?;
        let wbar = block_diag(&net.nodes().iter().map(|n| n.prior_cov.clone()).collect::<Vec<_>>())?;
        Ok(Self {
            abar,
            rbar,
            wbar,
            ybar,
            offsets,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
    offsets: Vec<usize>,
    dims: Vec<usize>,
}

impl Posterior {
    pub fn marginal_mean(&self, i: usize) -> DVector<f64> {
        self.mean.rows(self.offsets[i - 1], self.dims[i - 1]).into_owned()
    }

    pub fn marginal_cov(&self, i: usize) -> SymMatrix {
        extract_block(&self.cov, self.offsets[i - 1], self.dims[i - 1]).expect("in range")
    }
}

/// `P = (W̄⁻¹ + Āᵀ R̄⁻¹ Ā)⁻¹`, `μ = P Āᵀ R̄⁻¹ ȳ`.
pub fn centralized_posterior(net: &GaussianNetwork) -> Result<Posterior> {
    let sys = JointSystem::new(net)?;
    let r_chol = sys.rbar.cholesky("joint noise covariance")?;
    let rinv_a = r_chol.solve(&sys.abar);
    let rinv_y = r_chol.solve(&sys.ybar);
    let info = SymMatrix::symmetrized(
        sys.wbar.inverse("joint prior covariance")?.into_matrix() + sys.abar.transpose() * &rinv_a,
    );
    let chol = info.cholesky("joint posterior information")?;
    let mean = chol.solve(&(sys.abar.transpose() * rinv_y));
    let cov = SymMatrix::symmetrized(chol.inverse());
    Ok(Posterior {
        mean,
        cov,
        offsets: sys.offsets,
        dims: net.nodes().iter().map(|n| n.dim).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableError {
    pub variable: usize,
    /// `‖μ_BP − μ‖_∞`.
    pub mean_error: f64,
    /// `‖μ_BP − μ‖_∞ / max(1, ‖μ‖_∞)`.
    pub mean_error_relative: f64,
    /// `‖P_BP − P‖_F`.
    pub cov_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceExpectation {
    /// Tree factor graph: belief covariances are exact marginals.
    Exact,
    /// Loopy factor graph: belief covariances generally differ from marginals.
    ExpectedLoopyDiscrepancy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    /// False when the run did not converge; errors are then omitted.
    pub applicable: bool,
    pub is_tree: bool,
    pub covariance_expectation: CovarianceExpectation,
    pub variables: Vec<VariableError>,
    pub max_mean_error: f64,
    pub max_mean_error_relative: f64,
    pub max_cov_error: f64,
}

/// Per-variable errors of BP beliefs against the centralized marginals.
pub fn compare(net: &GaussianNetwork, beliefs: &[Belief], converged: bool) -> Result<CompareReport> {
    let is_tree = net.is_tree_factor_graph();
    let mut report = CompareReport {
        applicable: converged,
        is_tree,
        covariance_expectation: if is_tree {
            CovarianceExpectation::Exact
        } else {
            CovarianceExpectation::ExpectedLoopyDiscrepancy
        },
        variables: Vec::new(),
        max_mean_error: 0.0,
        max_mean_error_relative: 0.0,
        max_cov_error: 0.0,
    };
    if !converged {
        return Ok(report);
    }
    let post = centralized_posterior(net)?;
    for b in beliefs {
        let mu = post.marginal_mean(b.variable);
        let mean_error = (&b.mean - &mu).amax();
        let v = VariableError {
            variable: b.variable,
            mean_error,
            mean_error_relative: mean_error / mu.amax().max(1.0),
            cov_error: b.cov.minus(&post.marginal_cov(b.variable)).frobenius_norm(),
        };
        report.max_mean_error = report.max_mean_error.max(v.mean_error);
        report.max_mean_error_relative = report.max_mean_error_relative.max(v.mean_error_relative);
        report.max_cov_error = report.max_cov_error.max(v.cov_error);
        report.variables.push(v);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::{is_pd, loewner_geq, ConeTolerance};
    use crate::engine::{run, ScheduleConfig};
    use crate::network::fixtures::{golden, tree_pair};
    use approx::assert_relative_eq;

    /// Brute-force inverse of the 2x2 posterior information [[3,2],[2,3]].
    #[test]
    fn golden_posterior_by_hand() {
        let (y1, y2) = (0.7, -0.2);
        let post = centralized_posterior(&golden(y1, y2)).unwrap();
        let (a, b, c) = (3.0, 2.0, 3.0);
        let det: f64 = a * c - b * b;
        let p11 = c / det;
        assert_relative_eq!(p11, 0.6, epsilon = 1e-15);
        let m1 = (c * (y1 + y2) - b * (y1 + y2)) / det;
        assert_relative_eq!(post.marginal_mean(1)[0], m1, epsilon = 1e-14);
        assert_relative_eq!(post.marginal_mean(1)[0], (y1 + y2) / 5.0, epsilon = 1e-14);
        assert_relative_eq!(post.marginal_cov(1).as_matrix()[(0, 0)], p11, epsilon = 1e-14);
    }

    #[test]
    fn zero_observation_zero_mean() {
        let post = centralized_posterior(&golden(0.0, 0.0)).unwrap();
        assert_eq!(post.mean.amax(), 0.0);
    }

    #[test]
    fn posterior_cov_within_prior() {
        let net = golden(0.1, 0.2);
        let post = centralized_posterior(&net).unwrap();
        let sys = JointSystem::new(&net).unwrap();
        assert!(is_pd(&post.cov, &ConeTolerance::exact()));
        assert!(loewner_geq(&sys.wbar, &post.cov, &ConeTolerance::relative(1.0)).unwrap());
    }

    #[test]
    fn golden_compare_is_loopy() {
        let net = golden(0.7, -0.2);
        let cfg = ScheduleConfig {
            tol_frobenius: 1e-13,
            mean_tol: Some(1e-13),
            ..Default::default()
        };
        let out = run(&net, &cfg).unwrap();
        let rep = compare(&net, &out.beliefs, out.converged).unwrap();
        assert!(rep.applicable && !rep.is_tree);
        assert_eq!(
            rep.covariance_expectation,
            CovarianceExpectation::ExpectedLoopyDiscrepancy
        );
        assert!(rep.max_mean_error <= 1e-8, "{rep:?}");
        assert_relative_eq!(rep.max_cov_error, 0.6 - 1.0 / 5f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn tree_pair_is_exact() {
        let net = tree_pair(0.7, -0.2);
        let out = run(&net, &ScheduleConfig::default()).unwrap();
        let rep = compare(&net, &out.beliefs, out.converged).unwrap();
        assert!(rep.is_tree);
        assert!(rep.max_mean_error <= 1e-10 && rep.max_cov_error <= 1e-10, "{rep:?}");
    }

    #[test]
    fn not_converged_is_not_applicable() {
        let net = golden(0.7, -0.2);
        let out = run(
            &net,
            &ScheduleConfig {
                max_iterations: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let rep = compare(&net, &out.beliefs, out.converged).unwrap();
        assert!(!rep.applicable);
        assert!(rep.variables.is_empty());
    }
}
