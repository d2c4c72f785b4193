use gabp::cone::{loewner_geq, part_metric, ConeTolerance};
use gabp::SymMatrix;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn spd(n: usize) -> impl Strategy<Value = SymMatrix> {
    (prop::collection::vec(-2.0f64..2.0, n * n), 0.05f64..1.0).prop_map(move |(v, shift)| {
        let g = DMatrix::from_vec(n, n, v);
        SymMatrix::new(&g * g.transpose() + DMatrix::identity(n, n) * shift).unwrap()
    })
}

fn pair(n: usize) -> impl Strategy<Value = (SymMatrix, SymMatrix)> {
    (spd(n), spd(n))
}

fn triple(n: usize) -> impl Strategy<Value = (SymMatrix, SymMatrix, SymMatrix)> {
    (spd(n), spd(n), spd(n))
}

proptest! {
    #[test]
    fn symmetric((x, y) in (1usize..4).prop_flat_map(pair)) {
        let a = part_metric(&x, &y).unwrap();
        let b = part_metric(&y, &x).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn scaling_distance(x in (1usize..4).prop_flat_map(spd), alpha in 1.0f64..50.0) {
        let d = part_metric(&x.scaled(alpha), &x).unwrap();
        prop_assert!((d - alpha.ln()).abs() <= 1e-9 * (1.0 + d));
    }

    #[test]
    fn triangle((x, y, z) in (1usize..4).prop_flat_map(triple)) {
        let xz = part_metric(&x, &z).unwrap();
        let xy = part_metric(&x, &y).unwrap();
        let yz = part_metric(&y, &z).unwrap();
        prop_assert!(xz <= xy + yz + 1e-9 * (1.0 + xz));
    }

    #[test]
    fn loewner_antisymmetric((x, y) in (1usize..4).prop_flat_map(pair)) {
        let tol = ConeTolerance::for_pair(&x, &y);
        if loewner_geq(&x, &y, &tol).unwrap() && loewner_geq(&y, &x, &tol).unwrap() {
            prop_assert!(x.minus(&y).max_abs_entry() <= 1e-6 * (1.0 + x.max_abs_entry()));
        }
    }

    /// `e^{-d} Y ⪯ X ⪯ e^{d} Y` holds at `d` and fails once `d` shrinks.
    #[test]
    fn distance_is_tight((x, y) in (1usize..4).prop_flat_map(pair)) {
        let d = part_metric(&x, &y).unwrap();
        let tol = ConeTolerance::new(1e-12, 1e-9 * (1.0 + x.spectral_norm() + y.spectral_norm())).unwrap();
        prop_assert!(loewner_geq(&y.scaled(d.exp()), &x, &tol).unwrap());
        prop_assert!(loewner_geq(&x, &y.scaled((-d).exp()), &tol).unwrap());
        prop_assume!(d > 1e-3);
        let s = d * (1.0 - 1e-6);
        let exact = ConeTolerance::exact();
        let upper = loewner_geq(&y.scaled(s.exp()), &x, &exact).unwrap();
        let lower = loewner_geq(&x, &y.scaled((-s).exp()), &exact).unwrap();
        prop_assert!(!(upper && lower));
    }
}
