//! Small-noise reflected SPDE and the Girsanov-shifted pair.
//!
//! Drift and penalty are implicit, noise and control drift explicit (they are
//! evaluated at the left end of each interval), so the scheme is adapted and
//! a control `φ` at noise level `δ` enters exactly like the shifted increment
//! `δ (ΔW + φ Δt / δ)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Trajectory};
use crate::noise::{sample_wiener, Control, WienerPath};
use crate::rng::derive_seed;
use crate::skeleton::{
    integrate, recover_reflection, solve_skeleton_penalized, PenaltyConfig, ProblemSpec, ReflectionMeasure,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub trajectory: Trajectory,
    pub reflection: ReflectionMeasure,
    pub path_seed: u64,
    pub delta: f64,
}

fn check_path(spec: &ProblemSpec, w: &WienerPath) -> Result<()> {
    w.check_shape(spec.n_steps, spec.modes())?;
    if (w.dt - spec.dt()).abs() > 1e-12 * spec.dt() {
        return Err(Error::param(format!(
            "path step {} differs from problem step {}",
            w.dt,
            spec.dt()
        )));
    }
    Ok(())
}

impl WienerPath {
    pub fn check_shape(&self, n_steps: usize, modes: usize) -> Result<()> {
        crate::error::check_len(n_steps, self.n_steps())?;
        crate::error::check_len(modes, self.modes())
    }
}

/// Path of `du + A(u) dt + k dt = f dt + δ G(u) dW` at fixed penalization `eps`.
pub fn simulate_spde(
    spec: &ProblemSpec,
    delta: f64,
    w: &WienerPath,
    eps: f64,
    cfg: &PenaltyConfig,
) -> Result<PathResult> {
    simulate_controlled(spec, delta, w, None, eps, cfg)
}

/// Noise `δ G̃ dW` plus the explicit control drift `G̃ φ dt`.
pub fn simulate_controlled(
    spec: &ProblemSpec,
    delta: f64,
    w: &WienerPath,
    control: Option<&Control>,
    eps: f64,
    cfg: &PenaltyConfig,
) -> Result<PathResult> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::param("delta must be non-negative"));
    }
    check_path(spec, w)?;
    if let Some(c) = control {
        c.check_shape(spec.n_steps, spec.modes())?;
    }
    let dt = spec.dt();
    let sol = integrate(spec, eps, cfg, |n| match control {
        Some(c) => w.increments[n]
            .iter()
            .zip(c.row(n))
            .map(|(dw, a)| delta * dw + a * dt)
            .collect(),
        None => w.increments[n].iter().map(|dw| delta * dw + 0.0 * dt).collect(),
    })?;
    let reflection = recover_reflection(&sol.trajectory, spec, eps, cfg.q_tilde)?;
    Ok(PathResult {
        trajectory: sol.trajectory,
        reflection,
        path_seed: w.seed,
        delta,
    })
}

/// `v`: noisy path with the control drift; `u`: the controlled skeleton at the same ε.
pub fn simulate_shifted_pair(
    spec: &ProblemSpec,
    delta: f64,
    w: &WienerPath,
    c: &Control,
    eps: f64,
    cfg: &PenaltyConfig,
) -> Result<(PathResult, Trajectory)> {
    let v = simulate_controlled(spec, delta, w, Some(c), eps, cfg)?;
    let u = solve_skeleton_penalized(spec, c, eps, cfg)?.trajectory;
    Ok((v, u))
}

/// `(sup_n ‖v_n - u_n‖_H, (Σ Δt ‖v_n - u_n‖^p_V)^{1/p})`.
pub fn coupling_gap(v: &Trajectory, u: &Trajectory, mesh: &Mesh, p: f64) -> Result<(f64, f64)> {
    crate::error::check_len(u.fields.len(), v.fields.len())?;
    if !(p > 1.0) {
        return Err(Error::param("p must exceed 1"));
    }
    let sup = v.sup_distance(u, mesh)?;
    let dt = v.dt();
    let integral: f64 = v.fields[1..]
        .iter()
        .zip(&u.fields[1..])
        .map(|(a, b)| dt * mesh.grad_p_energy(&a.sub(b), p))
        .sum();
    Ok((sup, integral.powf(1.0 / p)))
}

/// Outcome of a batch of independent paths, in path-index order.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub results: Vec<Option<T>>,
    pub failures: Vec<(usize, String)>,
}

impl<T> Batch<T> {
    pub fn successes(&self) -> impl Iterator<Item = &T> {
        self.results.iter().flatten()
    }
}

/// Runs `f(index, path_seed)` for every path in parallel. Failed paths are
/// recorded; more than 0.1% failures abort the batch.
pub fn run_batch<T, F>(n_paths: usize, master_seed: u64, f: F) -> Result<Batch<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    let outcomes: Vec<Result<T>> = (0..n_paths)
        .into_par_iter()
        .map(|i| f(i, derive_seed(master_seed, i as u64)))
        .collect();
    let mut results = Vec::with_capacity(n_paths);
    let mut failures = Vec::new();
    for (i, r) in outcomes.into_iter().enumerate() {
        match r {
            Ok(v) => results.push(Some(v)),
            Err(e) => {
                failures.push((i, e.to_string()));
                results.push(None);
            }
        }
    }
    if failures.len() * 1000 > n_paths {
        return Err(Error::PathFailures {
            failed: failures.len(),
            total: n_paths,
        });
    }
    Ok(Batch { results, failures })
}

/// Per-path record written to the batch CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub index: usize,
    pub seed: u64,
    /// `sup_n ‖u_n‖_H`.
    pub sup_norm: f64,
    pub terminal_value: f64,
    pub event: bool,
}

/// Simulates `n_paths` paths and summarizes each with `functional` and `event`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_batch(
    spec: &ProblemSpec,
    delta: f64,
    n_paths: usize,
    master_seed: u64,
    eps: f64,
    cfg: &PenaltyConfig,
    functional: impl Fn(&Trajectory) -> f64 + Sync,
    event: impl Fn(&Trajectory) -> bool + Sync,
) -> Result<Batch<PathSummary>> {
    run_batch(n_paths, master_seed, |index, seed| {
        let w = sample_wiener(&spec.qspec, spec.n_steps, spec.dt(), seed)?;
        let path = simulate_spde(spec, delta, &w, eps, cfg)?;
        let t = &path.trajectory;
        Ok(PathSummary {
            index,
            seed,
            sup_norm: t.fields.iter().map(|f| spec.mesh.l2(f)).fold(0.0, f64::max),
            terminal_value: functional(t),
            event: event(t),
        })
    })
}

pub fn write_path_summaries<W: Write>(rows: &Batch<PathSummary>, mut w: W) -> Result<()> {
    writeln!(w, "path,seed,sup_norm,terminal_value,event")?;
    for r in rows.successes() {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.index, r.seed, r.sup_norm, r.terminal_value, r.event as u8
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub delta: f64,
    pub n_paths: usize,
    /// Monte-Carlo mean of `sup_n ‖v - u‖²_H`.
    pub mean_sup_gap_sq: f64,
    pub stderr_sup_gap_sq: f64,
    /// Monte-Carlo mean of `Σ Δt ‖v - u‖^p_V`.
    pub mean_v_gap_p: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub rows: Vec<CouplingRow>,
    /// Log-log slope of the mean squared sup gap in `δ`.
    pub slope: f64,
    pub r_squared: f64,
    pub v_gap_slope: f64,
}

/// Monte-Carlo estimate of `E sup ‖v_δ - u_δ‖²_H` over a δ-sweep with a common control.
pub fn coupling_experiment(
    spec: &ProblemSpec,
    c: &Control,
    deltas: &[f64],
    n_paths: usize,
    master_seed: u64,
    eps: f64,
    cfg: &PenaltyConfig,
) -> Result<CouplingReport> {
    let u = solve_skeleton_penalized(spec, c, eps, cfg)?.trajectory;
    let p = spec.operator.p;
    let mut rows = Vec::new();
    for (j, &delta) in deltas.iter().enumerate() {
        let batch = run_batch(n_paths, derive_seed(master_seed, j as u64), |_, seed| {
            let w = sample_wiener(&spec.qspec, spec.n_steps, spec.dt(), seed)?;
            let v = simulate_controlled(spec, delta, &w, Some(c), eps, cfg)?;
            let (sup, vg) = coupling_gap(&v.trajectory, &u, &spec.mesh, p)?;
            Ok((sup * sup, vg.powf(p)))
        })?;
        let vals: Vec<(f64, f64)> = batch.successes().copied().collect();
        let n = vals.len() as f64;
        let mean = vals.iter().map(|v| v.0).sum::<f64>() / n;
        let var = vals.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        rows.push(CouplingRow {
            delta,
            n_paths,
            mean_sup_gap_sq: mean,
            stderr_sup_gap_sq: (var / n).sqrt(),
            mean_v_gap_p: vals.iter().map(|v| v.1).sum::<f64>() / n,
            failures: batch.failures.len(),
        });
    }
    let ds: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    let gs: Vec<f64> = rows.iter().map(|r| r.mean_sup_gap_sq).collect();
    let vs: Vec<f64> = rows.iter().map(|r| r.mean_v_gap_p).collect();
    let (slope, _, r_squared) = crate::skeleton::log_log_fit(&ds, &gs);
    let (v_gap_slope, _, _) = crate::skeleton::log_log_fit(&ds, &vs);
    Ok(CouplingReport {
        rows,
        slope,
        r_squared,
        v_gap_slope,
    })
}

pub fn write_coupling_csv<W: Write>(r: &CouplingReport, mut w: W) -> Result<()> {
    writeln!(
        w,
        "delta,n_paths,mean_sup_gap_sq,stderr_sup_gap_sq,mean_v_gap_p,failures"
    )?;
    for row in &r.rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            row.delta, row.n_paths, row.mean_sup_gap_sq, row.stderr_sup_gap_sq, row.mean_v_gap_p, row.failures
        )?;
    }
    Ok(())
}
