mod common;

use std::sync::Arc;

use common::*;
use gridfit::bccb::EigenSpectrum;
use gridfit::covariance::{base_vector, family, Theta};
use gridfit::lattice::{make_mask, DesignSpec, ObservationMask};
use gridfit::solver::{
    pcg_solve, periodic_cov, preconditioner, preconditioner_registry, solve_observed, ConditioningRule, PcgConfig, PrecondContext,
    VecchiaLayout, VecchiaPrecond,
};
use gridfit::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;

struct Fixture {
    emb: gridfit::lattice::EmbeddingSpec,
    mask: ObservationMask,
    base: Vec<f64>,
    spec: EigenSpectrum,
    coo: DMatrix<f64>,
}

fn fixture(n: usize, design: DesignSpec) -> Fixture {
    let emb = embedding(n, 1.5);
    let m = model(&emb, "powexp", true);
    let theta = Theta {
        lambda: 0.15,
        shape: 1.0,
        nugget: 0.01,
    };
    let base = base_vector(&emb, &m, &theta).unwrap();
    let spec = EigenSpectrum::new(&base, emb.shape()).unwrap();
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(21);
    let mask = make_mask(&emb, &design, &mut rng).unwrap();
    let dense = dense_embedded(&emb, &kernel(&emb, &m, &theta));
    let coo = submatrix(&dense, &mask.observed, &mask.observed);
    Fixture {
        emb,
        mask,
        base,
        spec,
        coo,
    }
}

fn rhs(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect()
}

#[test]
fn pcg_matches_dense_solve_for_every_preconditioner() {
    let f = fixture(10, DesignSpec::Random(0.2));
    let b = rhs(f.mask.n());
    let exact = f.coo.clone().lu().solve(&vector(&b)).unwrap();
    let cfg = PcgConfig {
        tolerance: 1e-10,
        max_iters: None,
    };
    for name in preconditioner_registry().names() {
        let ctx = PrecondContext {
            emb: &f.emb,
            mask: &f.mask,
            base: &f.base,
            spectrum: &f.spec,
            cond_size: 18,
            layout: None,
        };
        let m = preconditioner(name).unwrap().build(&ctx).unwrap();
        let out = solve_observed(&f.spec, &f.mask, m.as_ref(), &b, &cfg).unwrap();
        assert!(out.converged, "{name}");
        assert!(rel_err(&out.x, exact.as_slice()) < 1e-8, "{name}: {}", rel_err(&out.x, exact.as_slice()));
        assert_eq!(out.trace.len(), out.iterations);
    }
}

#[test]
fn vecchia_cuts_iterations() {
    let f = fixture(24, DesignSpec::Disk(0.1));
    let b = rhs(f.mask.n());
    let cfg = PcgConfig::default();
    let count = |name: &str| {
        let ctx = PrecondContext {
            emb: &f.emb,
            mask: &f.mask,
            base: &f.base,
            spectrum: &f.spec,
            cond_size: 33,
            layout: None,
        };
        let m = preconditioner(name).unwrap().build(&ctx).unwrap();
        solve_observed(&f.spec, &f.mask, m.as_ref(), &b, &cfg).unwrap().iterations
    };
    assert!(count("vecchia") < count("identity"));
}

#[test]
fn pcg_zero_rhs_and_cap() {
    let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
    let apply = |x: &[f64]| (&a * vector(x)).as_slice().to_vec();
    let id = |x: &[f64]| x.to_vec();
    let zero = pcg_solve(apply, id, &[0.0; 3], &PcgConfig::default()).unwrap();
    assert_eq!(zero.iterations, 0);
    assert!(zero.converged);
    assert_eq!(zero.x, vec![0.0; 3]);

    let capped = pcg_solve(
        apply,
        id,
        &[1.0, 2.0, 3.0],
        &PcgConfig {
            tolerance: 1e-14,
            max_iters: Some(1),
        },
    )
    .unwrap();
    assert!(!capped.converged);
    assert!(matches!(capped.into_result(), Err(Error::NotConverged { iterations: 1, .. })));

    // Three distinct eigenvalues: exact in three steps.
    let full = pcg_solve(apply, id, &[1.0, 2.0, 3.0], &PcgConfig { tolerance: 1e-12, max_iters: None }).unwrap();
    assert!(full.iterations <= 3);
    let want = a.clone().lu().solve(&vector(&[1.0, 2.0, 3.0])).unwrap();
    assert!(rel_err(&full.x, want.as_slice()) < 1e-12);
}

#[test]
fn pcg_reports_indefinite_operator() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    let apply = |x: &[f64]| (&a * vector(x)).as_slice().to_vec();
    let r = pcg_solve(apply, |x: &[f64]| x.to_vec(), &[0.0, 1.0], &PcgConfig::default());
    assert!(matches!(r, Err(Error::BreakdownZeroCurvature { .. })));
}

/// Conditioning on every earlier site makes the factorization exact.
#[test]
fn full_conditioning_vecchia_is_exact_inverse() {
    let f = fixture(6, DesignSpec::Random(0.2));
    let n = f.mask.n();
    let layout = Arc::new(VecchiaLayout::with_rule(&f.emb, &f.mask, ConditioningRule::Nearest(n)));
    let cov = periodic_cov(&f.emb, &f.base);
    let v = VecchiaPrecond::build(layout, &cov).unwrap();
    let x = rhs(n);
    let want = f.coo.clone().lu().solve(&vector(&x)).unwrap();
    assert!(rel_err(&v.apply(&x).unwrap(), want.as_slice()) < 1e-9);
    let (logdet, quad) = v.logdet_and_quad(&x).unwrap();
    let chol = f.coo.clone().cholesky().unwrap();
    let dense_logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    assert!(scalar_rel(logdet, dense_logdet) < 1e-9);
    assert!(scalar_rel(quad, vector(&x).dot(&want)) < 1e-9);
}

/// With truncated conditioning, the implied precision is still symmetric
/// positive definite and matches the dense product `L'V⁻¹L`.
#[test]
fn truncated_vecchia_is_spd() {
    let f = fixture(8, DesignSpec::Disk(0.1));
    let n = f.mask.n();
    let layout = Arc::new(VecchiaLayout::build(&f.emb, &f.mask, 18));
    let v = VecchiaPrecond::build(layout, &periodic_cov(&f.emb, &f.base)).unwrap();
    let q = DMatrix::from_fn(n, n, |i, j| {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        v.apply(&e).unwrap()[i]
    });
    assert!((&q - q.transpose()).amax() < 1e-10 * q.amax());
    assert!(q.clone().cholesky().is_some());
    // The stencil repeats away from the edges, so few distinct factors.
    assert!(v.cache_size() < 40, "{}", v.cache_size());
}

#[test]
fn stencil_sizes() {
    for (size, h) in [(18, 2), (33, 3), (52, 4)] {
        assert_eq!(ConditioningRule::for_size(size), ConditioningRule::Stencil(h));
    }
    assert_eq!(ConditioningRule::for_size(20), ConditioningRule::Nearest(20));
}

#[test]
fn unknown_preconditioner() {
    assert!(matches!(preconditioner("multigrid"), Err(Error::UnknownStrategy { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pcg_solves_random_spd(seed in 0u64..10_000, n in 2usize..12) {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let a = &g * g.transpose() + DMatrix::identity(n, n) * 0.5;
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let out = pcg_solve(|x| (&a * vector(x)).as_slice().to_vec(), |x| x.to_vec(), &b, &PcgConfig { tolerance: 1e-12, max_iters: Some(10 * n) }).unwrap();
        let want = a.clone().lu().solve(&vector(&b)).unwrap();
        prop_assert!(rel_err(&out.x, want.as_slice()) < 1e-7);
    }
}

#[test]
fn raw_cov_vecchia_uses_true_offsets() {
    // Base-lattice distances never wrap, so raw and periodized covariances
    // agree on the conditioning sets.
    let f = fixture(8, DesignSpec::Random(0.1));
    let fam = family("powexp").unwrap();
    let delta = f.emb.base.delta;
    let k = kernel(&f.emb, &model(&f.emb, "powexp", true), &Theta { lambda: 0.15, shape: 1.0, nugget: 0.01 });
    let raw = |di: i32, dj: i32| {
        let h = delta * ((di * di + dj * dj) as f64).sqrt();
        if h == 0.0 {
            1.01
        } else {
            fam.phi(h, 0.15, 1.0)
        }
    };
    let per = periodic_cov(&f.emb, &f.base);
    for di in -7..=7 {
        for dj in -7..=7 {
            let h = delta * ((di * di + dj * dj) as f64).sqrt();
            assert!((raw(di, dj) - per(di, dj)).abs() < 1e-12);
            assert!((k.corr(h) - per(di, dj)).abs() < 1e-12);
        }
    }
}
