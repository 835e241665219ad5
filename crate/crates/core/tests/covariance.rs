mod common;

use common::*;
use gridfit::covariance::{family, family_registry, theta_from_free, theta_to_free, FreeParams, Theta};
use gridfit::Error;
use proptest::prelude::*;

#[test]
fn cutoff_joins_smoothly_and_goes_flat() {
    let emb = embedding(16, 1.5);
    let m = model(&emb, "powexp", true);
    let theta = Theta {
        lambda: 0.1,
        shape: 1.0,
        nugget: 0.0,
    };
    let k = kernel(&emb, &m, &theta);
    let d = emb.base.diameter();
    let eps = 1e-7;
    let (lo, hi) = (k.rho(d * (1.0 - eps)), k.rho(d * (1.0 + eps)));
    assert!((lo - hi).abs() < 1e-9);
    let slope = |u: f64| (k.rho(d * (u + eps)) - k.rho(d * (u - eps))) / (2.0 * eps * d);
    assert!(scalar_rel(slope(1.0 - 10.0 * eps), slope(1.0 + 10.0 * eps)) < 1e-4);
    // Unmodified inside the diameter.
    assert_eq!(k.rho(0.5 * d), (-0.5 * d / 0.1f64).exp());
    let r = emb.normalized_radius();
    let c = k.coeffs().unwrap();
    assert!(slope(r - 1e-4).abs() < 1e-3 * c.b.abs().max(1e-12));
    assert_eq!(k.rho(d * r), c.a);
    assert_eq!(k.rho(d * (r + 1.0)), c.a);
}

#[test]
fn nugget_only_at_zero_lag() {
    let emb = embedding(8, 1.0);
    let m = model(&emb, "powexp", false);
    let theta = Theta {
        lambda: 0.2,
        shape: 1.0,
        nugget: 0.3,
    };
    let k = kernel(&emb, &m, &theta);
    assert_eq!(k.corr(0.0), 1.3);
    assert_eq!(k.corr(1e-9), k.rho(1e-9));
}

#[test]
fn matern_half_is_exponential() {
    let mat = family("matern").unwrap();
    let exp = family("powexp").unwrap();
    for h in [0.01, 0.1, 0.3, 1.0, 2.5] {
        assert!(scalar_rel(mat.phi(h, 0.4, 0.5), exp.phi(h, 0.4, 1.0)) < 1e-10, "{h}");
    }
}

#[test]
fn matern_three_halves_closed_form() {
    let mat = family("matern").unwrap();
    for h in [0.01, 0.2, 0.7, 3.0] {
        let x: f64 = h / 0.3;
        let want: f64 = (1.0 + x) * (-x).exp();
        assert!(scalar_rel(mat.phi(h, 0.3, 1.5), want) < 1e-10, "{h}");
    }
}

#[test]
fn derivative_matches_finite_difference() {
    for (name, shape) in [("powexp", 0.7), ("powexp", 1.0), ("powexp", 1.8), ("matern", 0.8), ("matern", 2.5)] {
        let f = family(name).unwrap();
        for h in [0.05, 0.3, 1.0] {
            let e = 1e-6;
            let fd = (f.phi(h + e, 0.25, shape) - f.phi(h - e, 0.25, shape)) / (2.0 * e);
            assert!(scalar_rel(f.dphi(h, 0.25, shape), fd) < 1e-6, "{name} {shape} {h}");
        }
    }
}

#[test]
fn shape_support_is_enforced() {
    let emb = embedding(8, 1.5);
    let m = model(&emb, "powexp", true);
    let bad = Theta {
        lambda: 0.1,
        shape: 2.5,
        nugget: 0.0,
    };
    assert!(matches!(m.check(&bad), Err(Error::OutOfSupport(_))));
    let edge = Theta { shape: 2.0, ..bad };
    assert!(m.check(&edge).is_ok());
    let neg = Theta { lambda: -1.0, ..edge };
    assert!(m.check(&neg).is_err());
}

#[test]
fn registry_lists_families() {
    let reg = family_registry();
    assert_eq!(reg.names(), vec!["matern", "powexp"]);
    assert!(matches!(family("spherical"), Err(Error::UnknownStrategy { .. })));
}

proptest! {
    #[test]
    fn free_coordinates_round_trip(lambda in 1e-3f64..10.0, alpha in 0.01f64..1.99, nu in 0.05f64..20.0, c in 1e-4f64..9.0) {
        let all = FreeParams::all();
        for (name, shape) in [("powexp", alpha), ("matern", nu)] {
            let f = family(name).unwrap();
            let t = Theta { lambda, shape, nugget: c };
            let z = theta_to_free(f.as_ref(), &t, all);
            let back = theta_from_free(f.as_ref(), &z, &t, all);
            prop_assert!(scalar_rel(back.lambda, lambda) < 1e-12);
            prop_assert!(scalar_rel(back.shape, shape) < 1e-10);
            prop_assert!(scalar_rel(back.nugget, c) < 1e-12);
        }
    }

    #[test]
    fn correlation_is_bounded_and_decreasing(lambda in 0.01f64..2.0, alpha in 0.1f64..2.0, h in 0.0f64..3.0) {
        let f = family("powexp").unwrap();
        let a = f.phi(h, lambda, alpha);
        let b = f.phi(h + 0.01, lambda, alpha);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a);
    }
}
