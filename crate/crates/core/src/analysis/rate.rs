use serde::Serialize;

use crate::cone::BlockDiagonal;
use crate::error::Result;

/// First iteration admitted into the rate fit. Iteration 1 is the image of
/// the initialization and is skipped as a transient.
pub const RATE_WINDOW_START: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub epsilon: f64,
    /// Inclusive iteration range of the fit.
    pub window: Option<(usize, usize)>,
    /// `exp` of the least-squares slope of `ln d_ℓ` against `ℓ`.
    pub c_estimate: Option<f64>,
    pub r_squared: Option<f64>,
    /// Every finite `d_ℓ > ε` is followed by a strictly smaller value.
    pub strictly_decreasing: bool,
    pub decrease_violations: Vec<usize>,
    /// Fewer than two usable points.
    pub degenerate: bool,
}

/// Geometric-rate fit of part distances `d_ℓ` (indexed by iteration; use
/// `f64::INFINITY` where the distance is undefined).
pub fn rate_analysis(distances: &[f64], epsilon: f64) -> RateReport {
    let mut violations = Vec::new();
    for l in 0..distances.len().saturating_sub(1) {
        let (d, next) = (distances[l], distances[l + 1]);
        if d.is_finite() && d > epsilon && next >= d {
            violations.push(l + 1);
        }
    }

    let start = distances
        .iter()
        .enumerate()
        .skip(RATE_WINDOW_START)
        .find(|(_, d)| d.is_finite())
        .map(|(l, _)| l);
    let mut points = Vec::new();
    if let Some(s) = start {
        for (l, &d) in distances.iter().enumerate().skip(s) {
            if !(d.is_finite() && d > epsilon) {
                break;
            }
            points.push((l as f64, d.ln()));
        }
    }

    let mut report = RateReport {
        epsilon,
        window: None,
        c_estimate: None,
        r_squared: None,
        strictly_decreasing: violations.is_empty(),
        decrease_violations: violations,
        degenerate: points.len() < 2,
    };
    if report.degenerate {
        return report;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - (my + slope * (p.0 - mx))).powi(2)).sum();
    report.window = Some((points[0].0 as usize, points[points.len() - 1].0 as usize));
    report.c_estimate = Some(slope.exp());
    report.r_squared = Some(if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot });
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormBound {
    /// `(2e^d − e^{−d} − 1) · min(‖C‖, ‖C*‖)`.
    pub bound: f64,
    /// `‖C − C*‖`.
    pub gap: f64,
}

impl NormBound {
    pub fn slack(&self) -> f64 {
        self.bound - self.gap
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormDomination {
    pub distance: f64,
    pub spectral: NormBound,
    pub frobenius: NormBound,
}

impl NormDomination {
    pub fn holds(&self, slack: f64) -> bool {
        self.spectral.slack() >= -slack && self.frobenius.slack() >= -slack
    }
}

/// Evaluates the bound of `‖C − C*‖` by the part distance `d` in the
/// spectral and Frobenius norms.
pub fn norm_domination(c: &BlockDiagonal, c_star: &BlockDiagonal, distance: f64) -> Result<NormDomination> {
    let factor = 2.0 * distance.exp() - (-distance).exp() - 1.0;
    let diff = c.minus(c_star)?;
    Ok(NormDomination {
        distance,
        spectral: NormBound {
            bound: factor * c.spectral_norm().min(c_star.spectral_norm()),
            gap: diff.spectral_norm(),
        },
        frobenius: NormBound {
            bound: factor * c.frobenius_norm().min(c_star.frobenius_norm()),
            gap: diff.frobenius_norm(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::SymMatrix;
    use approx::assert_relative_eq;

    #[test]
    fn exact_geometric_input() {
        let d: Vec<f64> = (0..20).map(|l| 0.5f64.powi(l)).collect();
        let r = rate_analysis(&d, 1e-12);
        assert!(!r.degenerate);
        assert_relative_eq!(r.c_estimate.unwrap(), 0.5, epsilon = 1e-9);
        assert_relative_eq!(r.r_squared.unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(r.window, Some((2, 19)));
        assert!(r.strictly_decreasing);
    }

    #[test]
    fn window_stops_at_epsilon_ball() {
        let d: Vec<f64> = (0..20).map(|l| 0.1f64.powi(l)).collect();
        // 0.1^6 rounds slightly above 1e-6, so pick a radius between powers.
        let r = rate_analysis(&d, 5e-7);
        assert_eq!(r.window, Some((2, 6)));
    }

    #[test]
    fn converged_at_first_iteration_is_degenerate() {
        let r = rate_analysis(&[f64::INFINITY, 0.0, 0.0], 1e-8);
        assert!(r.degenerate);
        assert_eq!(r.c_estimate, None);
        assert!(r.strictly_decreasing);
    }

    #[test]
    fn increase_is_flagged() {
        let r = rate_analysis(&[f64::INFINITY, 1.0, 0.5, 0.6, 0.1], 1e-8);
        assert!(!r.strictly_decreasing);
        assert_eq!(r.decrease_violations, vec![3]);
    }

    #[test]
    fn norm_bound_at_zero_distance() {
        let c = BlockDiagonal::new(vec![SymMatrix::identity(2)]).unwrap();
        let nb = norm_domination(&c, &c, 0.0).unwrap();
        assert_eq!(nb.spectral.bound, 0.0);
        assert_eq!(nb.spectral.gap, 0.0);
        assert!(nb.holds(0.0));
    }

    #[test]
    fn norm_bound_scaled_identity() {
        let c_star = BlockDiagonal::new(vec![SymMatrix::identity(2)]).unwrap();
        let c = c_star.scaled(3.0);
        let d = 3f64.ln();
        let nb = norm_domination(&c, &c_star, d).unwrap();
        // (2·3 − 1/3 − 1) · 1 ≥ 2
        assert_relative_eq!(nb.spectral.bound, 6.0 - 1.0 / 3.0 - 1.0, epsilon = 1e-12);
        assert_relative_eq!(nb.spectral.gap, 2.0, epsilon = 1e-12);
        assert!(nb.holds(0.0));
    }
}
