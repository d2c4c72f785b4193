//! Order properties of the stacked map: the cone bounds, monotonicity and
//! sub-homogeneity probes, and the two monotone sequences that bracket every
//! trajectory.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::StackedOperator;
use crate::cone::{BlockDiagonal, ConeTolerance, SymMatrix};
use crate::error::{Error, Result};

/// `U = Aᵀ Ω⁻¹ A` and `L = Aᵀ (Ω + H Ψ⁻¹ Hᵀ)⁻¹ A`, both block diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeBounds {
    pub upper: BlockDiagonal,
    pub lower: BlockDiagonal,
}

pub fn bounds_ul(op: &StackedOperator) -> Result<ConeBounds> {
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for (e, a) in op.a_blocks().iter().enumerate() {
        let omega = &op.omega_blocks[e];
        upper.push(omega.inverse("noise inverse")?.congruence(a));
        let h = &op.h_blocks[e];
        let mut inner = omega.as_matrix().clone();
        let mut col = 0;
        for p in &op.psi_blocks[e] {
            // Ψ⁻¹ is block diagonal in the priors W_j
            let w = p.inverse("prior")?;
            let hj = h.columns(col, w.dim()).into_owned();
            inner += &hj * w.as_matrix() * hj.transpose();
            col += w.dim();
        }
        lower.push(SymMatrix::symmetrized(inner).inverse("lower bound")?.congruence(a));
    }
    let b = ConeBounds {
        upper: BlockDiagonal::new(upper)?,
        lower: BlockDiagonal::new(lower)?,
    };
    let tol = ConeTolerance::relative(b.upper.max_abs_entry());
    if !b.upper.loewner_geq(&b.lower, &tol)? || b.lower.min_eigenvalue() <= 0.0 {
        return Err(Error::Invariant("bounds violate U ⪰ L ≻ 0".into()));
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckStats {
    pub trials: usize,
    pub failures: usize,
    /// Smallest observed margin (λ_min of the difference that must be ⪰ or ≻ 0).
    pub worst_margin: f64,
}

impl CheckStats {
    fn new() -> Self {
        Self {
            trials: 0,
            failures: 0,
            worst_margin: f64::INFINITY,
        }
    }

    fn record(&mut self, margin: f64, pass: bool) {
        self.trials += 1;
        if !pass {
            self.failures += 1;
        }
        self.worst_margin = self.worst_margin.min(margin);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub seed: u64,
    /// `F(C₂) ⪰ F(C₁)` whenever `C₂ ⪰ C₁ ⪰ 0`.
    pub monotone: CheckStats,
    /// `α F(C) ≻ F(α C)` for `α > 1`.
    pub scaling_up: CheckStats,
    /// `F(C / α) ≻ F(C) / α` for `α > 1`.
    pub scaling_down: CheckStats,
}

impl PropertyReport {
    pub fn failures(&self) -> usize {
        self.monotone.failures + self.scaling_up.failures + self.scaling_down.failures
    }
}

/// Random block-diagonal PSD matrix with blocks of random rank (possibly 0)
/// and magnitudes spread over two decades.
pub fn random_psd(rng: &mut ChaCha8Rng, dims: &[usize], min_eig: f64) -> BlockDiagonal {
    let blocks = dims
        .iter()
        .map(|&d| {
            let rank = rng.gen_range(0..=d);
            let mag = 10f64.powf(rng.gen_range(-1.0..1.0));
            let g = DMatrix::from_fn(d, rank, |_, _| rng.sample::<f64, _>(StandardNormal) * mag);
            SymMatrix::symmetrized(&g * g.transpose() + DMatrix::identity(d, d) * min_eig)
        })
        .collect();
    BlockDiagonal::new(blocks).expect("nonempty")
}

/// Margins `λ_min(α F(C) − F(α C))` and `λ_min(F(C/α) − F(C)/α)`.
pub fn scaling_margins(op: &StackedOperator, c: &BlockDiagonal, alpha: f64) -> Result<(f64, f64)> {
    let fc = op.apply_blocks(c)?;
    let up = fc.scaled(alpha).order_margin(&op.apply_blocks(&c.scaled(alpha))?)?;
    let down = op
        .apply_blocks(&c.scaled(1.0 / alpha))?
        .order_margin(&fc.scaled(1.0 / alpha))?;
    Ok((up, down))
}

/// `λ_min(F(C₂) − F(C₁))`.
pub fn monotone_margin(op: &StackedOperator, c1: &BlockDiagonal, c2: &BlockDiagonal) -> Result<(f64, f64)> {
    let f1 = op.apply_blocks(c1)?;
    let f2 = op.apply_blocks(c2)?;
    let scale = f1.max_abs_entry().max(f2.max_abs_entry());
    Ok((f2.order_margin(&f1)?, ConeTolerance::relative(scale).order_tol))
}

/// Randomized probes of monotonicity and strict sub-homogeneity. Trial `t`
/// draws from stream `t` of a ChaCha generator keyed by `seed`.
pub fn property_harness(op: &StackedOperator, trials: usize, seed: u64) -> Result<PropertyReport> {
    if trials == 0 {
        return Err(Error::InvalidInput("property harness needs at least one trial".into()));
    }
    let dims = op.block_dims().to_vec();
    let mut report = PropertyReport {
        seed,
        monotone: CheckStats::new(),
        scaling_up: CheckStats::new(),
        scaling_down: CheckStats::new(),
    };
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);

        let c1 = random_psd(&mut rng, &dims, 0.0);
        let c2 = c1.plus(&random_psd(&mut rng, &dims, 0.0))?;
        let (margin, tol) = monotone_margin(op, &c1, &c2)?;
        report.monotone.record(margin, margin >= -tol);

        let c = random_psd(&mut rng, &dims, 0.1);
        let alpha = 1.0 + rng.gen_range(f64::EPSILON..=9.0);
        let (up, down) = scaling_margins(op, &c, alpha)?;
        report.scaling_up.record(up, up > 0.0);
        report.scaling_down.record(down, down > 0.0);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceReport {
    pub start_distance: f64,
    /// Part distance to the fixed point after each step.
    pub distances: Vec<f64>,
    /// Every step moved in the expected Loewner direction within tolerance.
    pub monotone: bool,
    /// Smallest λ_min of the step difference, oriented so ≥ 0 is monotone.
    pub worst_margin: f64,
    pub final_distance: f64,
    /// First step at which the distance fell below the target.
    pub reached_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub alpha: f64,
    pub target: f64,
    /// `F^l(α C*)`, expected non-increasing.
    pub from_above: SequenceReport,
    /// `F^l(L)`, expected non-decreasing.
    pub from_below: SequenceReport,
}

fn monotone_sequence(
    op: &StackedOperator,
    start: BlockDiagonal,
    c_star: &BlockDiagonal,
    decreasing: bool,
    steps: usize,
    target: f64,
    tol: &ConeTolerance,
) -> Result<SequenceReport> {
    let mut x = start;
    let start_distance = x.part_metric(c_star)?;
    let mut rep = SequenceReport {
        start_distance,
        distances: Vec::new(),
        monotone: true,
        worst_margin: f64::INFINITY,
        final_distance: start_distance,
        reached_at: None,
    };
    for step in 1..=steps {
        let next = op.apply_blocks(&x)?;
        let margin = if decreasing {
            x.order_margin(&next)?
        } else {
            next.order_margin(&x)?
        };
        rep.worst_margin = rep.worst_margin.min(margin);
        rep.monotone &= margin >= -tol.order_tol;
        let d = next.part_metric(c_star)?;
        rep.distances.push(d);
        rep.final_distance = d;
        x = next;
        if d < target {
            rep.reached_at = Some(step);
            break;
        }
    }
    Ok(rep)
}

/// Iterates the map from `α C*` and from `L`, checking each step's Loewner
/// direction and the approach to `C*` in the part metric.
pub fn sandwich_sequences(
    op: &StackedOperator,
    c_star: &BlockDiagonal,
    alpha: f64,
    steps: usize,
    target: f64,
) -> Result<SandwichReport> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sandwich scale must exceed 1, got {alpha}"
        )));
    }
    let bounds = bounds_ul(op)?;
    let tol = ConeTolerance::relative(c_star.max_abs_entry() * alpha);
    Ok(SandwichReport {
        alpha,
        target,
        from_above: monotone_sequence(op, c_star.scaled(alpha), c_star, true, steps, target, &tol)?,
        from_below: monotone_sequence(op, bounds.lower, c_star, false, steps, target, &tol)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, ScheduleConfig};
    use crate::network::fixtures::{golden, scalar_star};
    use approx::assert_relative_eq;

    const ROOT: f64 = 0.618_033_988_749_894_8;

    fn golden_star() -> BlockDiagonal {
        BlockDiagonal::new(vec![SymMatrix::scalar(ROOT); 4]).unwrap()
    }

    #[test]
    fn golden_bounds() {
        let op = StackedOperator::build(&golden(0.0, 0.0)).unwrap();
        let b = bounds_ul(&op).unwrap();
        for (u, l) in b.upper.blocks().iter().zip(b.lower.blocks()) {
            assert_relative_eq!(u.as_matrix()[(0, 0)], 1.0, epsilon = 1e-15);
            assert_relative_eq!(l.as_matrix()[(0, 0)], 0.5, epsilon = 1e-15);
        }
        const { assert!(0.5 <= ROOT && ROOT <= 1.0) };
    }

    #[test]
    fn lower_bound_is_image_of_zero() {
        let net = scalar_star(4);
        let op = StackedOperator::build(&net).unwrap();
        let zero = BlockDiagonal::new(op.block_dims().iter().map(|&d| SymMatrix::zeros(d)).collect()).unwrap();
        let b = bounds_ul(&op).unwrap();
        let f0 = op.apply_blocks(&zero).unwrap();
        assert!(f0.max_frobenius_block_delta(&b.lower).unwrap() < 1e-14);
    }

    #[test]
    fn equal_pair_is_monotone_with_equality() {
        let op = StackedOperator::build(&golden(0.0, 0.0)).unwrap();
        let c = golden_star();
        let (margin, _) = monotone_margin(&op, &c, &c).unwrap();
        assert_eq!(margin, 0.0);
    }

    #[test]
    fn scaling_is_strict_near_one() {
        let op = StackedOperator::build(&golden(0.0, 0.0)).unwrap();
        let (up, down) = scaling_margins(&op, &golden_star(), 1.0 + 1e-9).unwrap();
        assert!(up > 0.0 && up < 1e-8, "{up}");
        assert!(down > 0.0 && down < 1e-8, "{down}");
    }

    #[test]
    fn harness_on_star() {
        let op = StackedOperator::build(&scalar_star(4)).unwrap();
        let r = property_harness(&op, 50, 9).unwrap();
        assert_eq!(r.failures(), 0, "{r:?}");
        assert_eq!(r.monotone.trials, 50);
        assert!(property_harness(&op, 0, 9).is_err());
    }

    /// Scalar oracle for the golden map c ↦ (1 + c) / (2 + c).
    #[test]
    fn golden_sandwich_follows_scalar_map() {
        let op = StackedOperator::build(&golden(0.0, 0.0)).unwrap();
        let rep = sandwich_sequences(&op, &golden_star(), 2.0, 200, 1e-6).unwrap();
        assert!(rep.from_above.monotone && rep.from_below.monotone);
        assert!(rep.from_above.reached_at.is_some() && rep.from_below.reached_at.is_some());
        assert_relative_eq!(rep.from_above.start_distance, 2f64.ln(), epsilon = 1e-12);

        let f = |c: f64| (1.0 + c) / (2.0 + c);
        let mut c = 2.0 * ROOT;
        for &d in &rep.from_above.distances {
            c = f(c);
            assert!(c > ROOT);
            assert_relative_eq!(d, (c / ROOT).ln(), epsilon = 1e-12);
        }
        let mut c = 0.5;
        for &d in &rep.from_below.distances {
            c = f(c);
            assert_relative_eq!(d, (ROOT / c).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn sandwich_from_engine_fixed_point() {
        let net = scalar_star(5);
        let cfg = ScheduleConfig {
            tol_frobenius: 1e-13,
            ..Default::default()
        };
        let star = run(&net, &cfg).unwrap().state.blocks();
        let op = StackedOperator::build(&net).unwrap();
        let rep = sandwich_sequences(&op, &star, 2.0, 500, 1e-6).unwrap();
        assert!(rep.from_above.monotone, "{:?}", rep.from_above);
        assert!(rep.from_below.monotone, "{:?}", rep.from_below);
        assert!(rep.from_above.final_distance < 1e-6);
        assert!(rep.from_below.final_distance < 1e-6);
        assert!(sandwich_sequences(&op, &star, 1.0, 5, 1e-6).is_err());
    }
}
