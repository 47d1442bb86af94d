//! Property-based checks on random inputs.

use obstacle_ldp::config::{parse_config, DEFAULT_CONFIG};
use obstacle_ldp::ldp::wilson_interval;
use obstacle_ldp::mesh::norm_h;
use obstacle_ldp::noise::h0_norm_sq;
use obstacle_ldp::operators::{apply_operator, Operator};
use obstacle_ldp::rng::derive_seed;
use obstacle_ldp::skeleton::skeleton_map;
use obstacle_ldp::{Control, Mesh, OperatorSpec, PenaltyConfig, ProblemSpec};
use proptest::prelude::*;

fn field(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

fn problem(forcing: f64) -> ProblemSpec {
    let mut cfg = parse_config(DEFAULT_CONFIG).unwrap();
    cfg.problem.n_cells = 8;
    cfg.problem.n_steps = 10;
    cfg.forcing = obstacle_ldp::config::FieldConfig::constant(forcing);
    cfg.problem_spec(std::path::Path::new(".")).unwrap()
}

fn coarse_penalty() -> PenaltyConfig {
    let mut cfg = PenaltyConfig::for_exponent(2.0);
    cfg.eps_schedule = vec![1e-2, 1e-3, 1e-4];
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn p_laplace_is_monotone(p in 1.5..4.0f64, a in field(15), b in field(15)) {
        let mesh = Mesh::new(16).unwrap();
        let op = OperatorSpec::p_laplace(p).unwrap();
        let da = apply_operator(&op, &a, &mesh).unwrap().sub(&apply_operator(&op, &b, &mesh).unwrap());
        let w: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let pairing = mesh.inner(&da, &w);
        let scale = mesh.h() * da.iter().zip(&w).map(|(x, y)| (x * y).abs()).sum::<f64>();
        prop_assert!(pairing >= -1e-10 * scale.max(1.0));
        prop_assert!(op.constants().alpha > 0.0);
    }

    #[test]
    fn p_laplace_is_odd_and_homogeneous(p in 1.5..4.0f64, a in field(15), s in 0.5..3.0f64) {
        let mesh = Mesh::new(16).unwrap();
        let op = OperatorSpec::p_laplace(p).unwrap();
        let au = apply_operator(&op, &a, &mesh).unwrap();
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        let an = apply_operator(&op, &neg, &mesh).unwrap();
        for (x, y) in au.iter().zip(an.iter()) {
            prop_assert!((x + y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        if p >= 2.0 {
            // A(s u) = s^{p-1} A(u) exactly without regularization.
            let scaled: Vec<f64> = a.iter().map(|x| s * x).collect();
            let asu = apply_operator(&op, &scaled, &mesh).unwrap();
            for (x, y) in asu.iter().zip(au.iter()) {
                prop_assert!((x - s.powf(p - 1.0) * y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn norm_h_is_a_norm(a in field(15), b in field(15), s in -3.0..3.0f64) {
        let mesh = Mesh::new(16).unwrap();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let scaled: Vec<f64> = a.iter().map(|x| s * x).collect();
        let (na, nb) = (norm_h(&a, &mesh).unwrap(), norm_h(&b, &mesh).unwrap());
        prop_assert!(norm_h(&sum, &mesh).unwrap() <= na + nb + 1e-12);
        prop_assert!((norm_h(&scaled, &mesh).unwrap() - s.abs() * na).abs() <= 1e-12 * (1.0 + na));
    }

    #[test]
    fn control_energy_scales_quadratically(rows in prop::collection::vec(field(3), 1..20), s in -4.0..4.0f64, dt in 0.001..0.1f64) {
        let c = Control::from_rows(rows).unwrap();
        let e = h0_norm_sq(&c, dt);
        prop_assert!(e >= 0.0);
        prop_assert!((h0_norm_sq(&c.scale(s), dt) - s * s * e).abs() <= 1e-12 * (1.0 + e) * (1.0 + s * s));
        let radius = 0.5;
        if e > 0.0 {
            prop_assert!(h0_norm_sq(&c.project_to_radius(radius, dt), dt) <= radius * (1.0 + 1e-12));
        }
    }

    #[test]
    fn wilson_interval_brackets_the_frequency(n in 1usize..100_000, frac in 0.0..=1.0f64) {
        let hits = ((n as f64) * frac).round() as usize;
        let (lo, hi) = wilson_interval(hits, n);
        let p = hits as f64 / n as f64;
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        prop_assert!(lo <= p + 1e-15 && p <= hi + 1e-15);
    }

    #[test]
    fn derived_seeds_do_not_collide(master in any::<u64>(), i in any::<u64>(), j in any::<u64>()) {
        prop_assume!(i != j);
        prop_assert_ne!(derive_seed(master, i), derive_seed(master, j));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn skeleton_respects_forcing_order(f_low in -3.0..1.0f64, bump in 0.1..2.0f64, value in -1.0..1.0f64) {
        // Comparison principle: more forcing never lowers the solution.
        let low = problem(f_low);
        let high = problem(f_low + bump);
        let c = Control::constant(low.n_steps, low.modes(), 0, value);
        let cfg = coarse_penalty();
        let y_low = skeleton_map(&low, &c, &cfg).unwrap();
        let y_high = skeleton_map(&high, &c, &cfg).unwrap();
        for (a, b) in y_low.fields.iter().zip(&y_high.fields) {
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!(*y >= *x - 1e-9);
            }
        }
        // Penetration below the obstacle is O(ε).
        for (y, psi) in y_low.fields.iter().zip(&low.obstacle) {
            for (x, o) in y.iter().zip(psi.iter()) {
                prop_assert!(*x >= *o - 10.0 * 1e-4 * (1.0 + f_low.abs()));
            }
        }
    }
}
