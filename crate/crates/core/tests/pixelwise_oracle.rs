//! Primal-dual equivalence checks for the per-pixel kernel solvers. The
//! dual construction is the piece of this library most likely to hide an
//! algebra mistake, so every route is cross-checked against the primal
//! representer QP solved directly.

mod common;

use common::{primal_pixel_oracle, random_endmembers, random_simplex_point, seeded_rng};
use ndarray::Array1;
use rand::Rng;
use unmix_core::kernel::{gram, KernelSpec};
use unmix_core::pixelwise::{solve_pixel_kernel, PixelModel};

#[test]
fn duality_gap_on_random_proximal_instance() {
    let mut rng = seeded_rng(101);
    let (l, r) = (8, 3);
    let m = random_endmembers(&mut rng, l, r);
    let k = gram(KernelSpec::Polynomial, &m).unwrap();
    let reflect = Array1::from_shape_fn(l, |_| rng.gen::<f64>());
    let xi = random_simplex_point(&mut rng, r);
    let model = PixelModel::khype(0.5).unwrap();
    let zeta = 0.7;

    let dual = solve_pixel_kernel(&reflect, &m, &k, &model, zeta, Some(&xi)).unwrap();
    let (alpha_p, obj_p) =
        primal_pixel_oracle(&reflect, &m, k.matrix(), model.mu, zeta, &xi, true);

    assert!(
        (dual.objective - obj_p).abs() < 1e-8,
        "objective gap {} vs {}",
        dual.objective,
        obj_p
    );
    for (a, b) in dual.alpha.iter().zip(alpha_p.iter()) {
        assert!((a - b).abs() < 1e-6, "alpha mismatch {a} vs {b}");
    }
}

#[test]
fn zero_pixel_matches_oracle_objective() {
    let mut rng = seeded_rng(102);
    let (l, r) = (6, 3);
    let m = random_endmembers(&mut rng, l, r);
    let k = gram(KernelSpec::Polynomial, &m).unwrap();
    let reflect = Array1::zeros(l);
    let model = PixelModel::khype(0.5).unwrap();

    let dual = solve_pixel_kernel(&reflect, &m, &k, &model, 0.0, None).unwrap();
    let (_, obj_p) =
        primal_pixel_oracle(&reflect, &m, k.matrix(), model.mu, 0.0, &Array1::zeros(r), true);
    assert!(
        (dual.objective - obj_p).abs() < 1e-8,
        "objective gap {} vs {}",
        dual.objective,
        obj_p
    );
}

#[test]
fn relaxing_sum_to_one_never_increases_objective() {
    let mut rng = seeded_rng(103);
    for _ in 0..20 {
        let l = rng.gen_range(3..=9);
        let r = rng.gen_range(2..=4);
        let m = random_endmembers(&mut rng, l, r);
        let k = gram(KernelSpec::Polynomial, &m).unwrap();
        let reflect = Array1::from_shape_fn(l, |_| rng.gen::<f64>());
        let constrained = solve_pixel_kernel(
            &reflect,
            &m,
            &k,
            &PixelModel::khype(0.5).unwrap(),
            0.0,
            None,
        )
        .unwrap();
        let relaxed = solve_pixel_kernel(
            &reflect,
            &m,
            &k,
            &PixelModel::nkhype(0.5).unwrap(),
            0.0,
            None,
        )
        .unwrap();
        assert!(
            relaxed.objective <= constrained.objective + 1e-9,
            "relaxed {} > constrained {}",
            relaxed.objective,
            constrained.objective
        );
    }
}

#[test]
fn nonnegative_only_route_also_matches_oracle() {
    let mut rng = seeded_rng(104);
    for _ in 0..10 {
        let l = rng.gen_range(4..=10);
        let r = rng.gen_range(2..=4);
        let m = random_endmembers(&mut rng, l, r);
        let k = gram(KernelSpec::Polynomial, &m).unwrap();
        let reflect = Array1::from_shape_fn(l, |_| rng.gen::<f64>());
        let xi = random_simplex_point(&mut rng, r);
        let zeta = *[0.0, 0.5, 2.0].iter().nth(rng.gen_range(0..3)).unwrap();
        let model = PixelModel::nkhype(0.5).unwrap();
        let dual = solve_pixel_kernel(&reflect, &m, &k, &model, zeta, Some(&xi)).unwrap();
        let (alpha_p, obj_p) =
            primal_pixel_oracle(&reflect, &m, k.matrix(), model.mu, zeta, &xi, false);
        assert!((dual.objective - obj_p).abs() < 1e-8);
        for (a, b) in dual.alpha.iter().zip(alpha_p.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn gaussian_kernel_route_matches_oracle() {
    let mut rng = seeded_rng(105);
    let (l, r) = (7, 3);
    let m = random_endmembers(&mut rng, l, r);
    let k = gram(KernelSpec::gaussian(0.6).unwrap(), &m).unwrap();
    let reflect = Array1::from_shape_fn(l, |_| rng.gen::<f64>());
    let model = PixelModel::khype(0.5).unwrap();
    let dual = solve_pixel_kernel(&reflect, &m, &k, &model, 0.0, None).unwrap();
    let (alpha_p, obj_p) =
        primal_pixel_oracle(&reflect, &m, k.matrix(), model.mu, 0.0, &Array1::zeros(r), true);
    assert!((dual.objective - obj_p).abs() < 1e-8);
    for (a, b) in dual.alpha.iter().zip(alpha_p.iter()) {
        assert!((a - b).abs() < 1e-6);
    }
}
