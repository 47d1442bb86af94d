//! Monte-Carlo checks of the noise model against closed-form moments.

use obstacle_ldp::noise::{girsanov_log_density, girsanov_shift, h0_norm_sq, sample_wiener};
use obstacle_ldp::rng::derive_seed;
use obstacle_ldp::spde::run_batch;
use obstacle_ldp::{Control, Mesh, QSpec};

fn qspec() -> QSpec {
    QSpec::power_decay(&Mesh::new(16).unwrap(), 4, 6.0 / std::f64::consts::PI.powi(2), 2.0).unwrap()
}

#[test]
fn increments_have_variance_dt_per_mode() {
    let q = qspec();
    let (n_steps, dt, n_paths) = (50, 0.01, 400);
    let mut sum = [0.0; 4];
    let mut sum_sq = [0.0; 4];
    for i in 0..n_paths {
        let w = sample_wiener(&q, n_steps, dt, derive_seed(5, i)).unwrap();
        for row in &w.increments {
            for k in 0..4 {
                sum[k] += row[k];
                sum_sq[k] += row[k] * row[k];
            }
        }
    }
    let n = (n_paths as usize * n_steps) as f64;
    for k in 0..4 {
        let mean = sum[k] / n;
        let var = sum_sq[k] / n - mean * mean;
        // Sample mean ~ N(0, dt/n); sample variance has relative sd √(2/n).
        assert!(mean.abs() <= 5.0 * (dt / n).sqrt(), "mode {k} mean {mean}");
        assert!(
            (var / dt - 1.0).abs() <= 5.0 * (2.0 / n).sqrt(),
            "mode {k} variance {var}"
        );
    }
}

#[test]
fn modes_and_steps_are_uncorrelated() {
    let q = qspec();
    let n_paths = 4000;
    let mut cross_mode = 0.0;
    let mut cross_step = 0.0;
    for i in 0..n_paths {
        let w = sample_wiener(&q, 2, 1.0, derive_seed(6, i)).unwrap();
        cross_mode += w.increments[0][0] * w.increments[0][1];
        cross_step += w.increments[0][0] * w.increments[1][0];
    }
    let bound = 5.0 / (n_paths as f64).sqrt();
    assert!((cross_mode / n_paths as f64).abs() <= bound);
    assert!((cross_step / n_paths as f64).abs() <= bound);
}

#[test]
fn girsanov_density_has_unit_mean() {
    let q = qspec();
    let (n_steps, dt, delta) = (20, 0.05, 1.0);
    let c = Control::constant(n_steps, 4, 0, 0.4);
    let energy = h0_norm_sq(&c, dt);
    let n_paths = 20_000;
    let weights: Vec<f64> = (0..n_paths)
        .map(|i| {
            let w = sample_wiener(&q, n_steps, dt, derive_seed(7, i)).unwrap();
            girsanov_log_density(&w, &c, delta).unwrap().exp()
        })
        .collect();
    let mean = weights.iter().sum::<f64>() / n_paths as f64;
    // Lognormal second moment gives sd = √(e^{energy/δ²} - 1).
    let sd = ((energy / (delta * delta)).exp() - 1.0).sqrt() / (n_paths as f64).sqrt();
    assert!((mean - 1.0).abs() <= 5.0 * sd, "mean weight {mean} (sd {sd})");
}

#[test]
fn tilted_expectation_of_the_shift_matches_the_drift() {
    // Under the density, the shifted increments ΔW + aΔt/δ have mean zero,
    // so E[weight · ΔW] = -aΔt/δ.
    let q = qspec();
    let (n_steps, dt, delta) = (4, 0.25, 0.5);
    let c = Control::constant(n_steps, 4, 1, 0.3);
    let n_paths = 40_000;
    let mut acc = 0.0;
    for i in 0..n_paths {
        let w = sample_wiener(&q, n_steps, dt, derive_seed(8, i)).unwrap();
        let weight = girsanov_log_density(&w, &c, delta).unwrap().exp();
        let shifted = girsanov_shift(&w, &c, delta).unwrap();
        acc += weight * shifted.increments[0][1];
    }
    let mean = acc / n_paths as f64;
    assert!(
        mean.abs() <= 5.0 * (dt * 2.0 / n_paths as f64).sqrt(),
        "tilted mean {mean}"
    );
}

#[test]
fn batches_are_independent_of_the_thread_pool() {
    let q = qspec();
    let draw = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            run_batch(64, 11, |_, seed| {
                let w = sample_wiener(&q, 5, 0.1, seed)?;
                Ok(w.increments[4][3])
            })
            .unwrap()
            .successes()
            .copied()
            .collect::<Vec<f64>>()
        })
    };
    assert_eq!(draw(1), draw(4));
}
