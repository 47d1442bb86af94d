//! Monte-Carlo event probabilities across a noise sweep, compared with the
//! rate from the optimizer through `δ² log P̂ ≈ -I`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{girsanov_log_density, sample_wiener, Control};
use crate::rate::{EventSpec, RateEstimate};
use crate::rng::derive_seed;
use crate::skeleton::{PenaltyConfig, ProblemSpec};
use crate::spde::{run_batch, simulate_controlled, simulate_spde};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Smallest batch accepted by the estimators.
pub const MIN_PATHS: usize = 100;

/// Wilson score interval at 95% for `hits` successes out of `n`.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if hits as f64 == n {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub delta: f64,
    /// Paths that completed (failed paths are excluded, never resampled).
    pub n_paths: usize,
    pub hits: usize,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub failures: usize,
}

impl ProbabilityEstimate {
    pub fn stderr(&self) -> f64 {
        (self.p_hat * (1.0 - self.p_hat) / self.n_paths as f64).sqrt()
    }
}

fn check_inputs(delta: f64, n_paths: usize) -> Result<()> {
    if n_paths < MIN_PATHS {
        return Err(Error::param(format!(
            "at least {MIN_PATHS} paths are required, got {n_paths}"
        )));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::param("delta must be non-negative"));
    }
    Ok(())
}

/// Fraction of SPDE paths at noise `delta` whose trajectory lies in `event`.
pub fn estimate_probability(
    spec: &ProblemSpec,
    delta: f64,
    event: &EventSpec,
    n_paths: usize,
    master_seed: u64,
    eps: f64,
    cfg: &PenaltyConfig,
) -> Result<ProbabilityEstimate> {
    check_inputs(delta, n_paths)?;
    let batch = run_batch(n_paths, master_seed, |_, seed| {
        let w = sample_wiener(&spec.qspec, spec.n_steps, spec.dt(), seed)?;
        let path = simulate_spde(spec, delta, &w, eps, cfg)?;
        Ok(event.contains(&path.trajectory, spec))
    })?;
    let n = batch.successes().count();
    let hits = batch.successes().filter(|h| **h).count();
    let (ci_lo, ci_hi) = wilson_interval(hits, n);
    Ok(ProbabilityEstimate {
        delta,
        n_paths: n,
        hits,
        p_hat: hits as f64 / n as f64,
        ci_lo,
        ci_hi,
        failures: batch.failures.len(),
    })
}

/// Importance-sampled estimate: paths are driven by `W + (1/δ)∫φ` and
/// reweighted by the Girsanov density, which has unit mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEstimate {
    pub delta: f64,
    pub n_paths: usize,
    /// Paths of the tilted dynamics landing in the event.
    pub hits: usize,
    pub p_hat: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Sample mean of the density over all paths (should be close to 1).
    pub mean_weight: f64,
    pub weight_stderr: f64,
    pub failures: usize,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_probability_tilted(
    spec: &ProblemSpec,
    delta: f64,
    event: &EventSpec,
    control: &Control,
    n_paths: usize,
    master_seed: u64,
    eps: f64,
    cfg: &PenaltyConfig,
) -> Result<ImportanceEstimate> {
    check_inputs(delta, n_paths)?;
    if delta == 0.0 {
        return Err(Error::param("importance sampling needs delta > 0"));
    }
    control.check_shape(spec.n_steps, spec.modes())?;
    let batch = run_batch(n_paths, master_seed, |_, seed| {
        let w = sample_wiener(&spec.qspec, spec.n_steps, spec.dt(), seed)?;
        let weight = girsanov_log_density(&w, control, delta)?.exp();
        let v = simulate_controlled(spec, delta, &w, Some(control), eps, cfg)?;
        Ok((event.contains(&v.trajectory, spec), weight))
    })?;
    let samples: Vec<(bool, f64)> = batch.successes().copied().collect();
    let weighted: Vec<f64> = samples.iter().map(|(h, w)| if *h { *w } else { 0.0 }).collect();
    let weights: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (p_hat, stderr) = mean_and_stderr(&weighted);
    let (mean_weight, weight_stderr) = mean_and_stderr(&weights);
    Ok(ImportanceEstimate {
        delta,
        n_paths: samples.len(),
        hits: samples.iter().filter(|s| s.0).count(),
        p_hat,
        stderr,
        ci_lo: (p_hat - Z95 * stderr).max(0.0),
        ci_hi: p_hat + Z95 * stderr,
        mean_weight,
        weight_stderr,
        failures: batch.failures.len(),
    })
}

/// Plain and importance-sampled estimates agree within their combined 95% interval.
pub fn estimates_agree(plain: &ProbabilityEstimate, tilted: &ImportanceEstimate) -> bool {
    let joint = (plain.stderr().powi(2) + tilted.stderr.powi(2)).sqrt();
    (plain.p_hat - tilted.p_hat).abs() <= Z95 * joint
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub estimate: ProbabilityEstimate,
    /// `δ² log p̂`, absent when no path hit the event.
    pub d2logp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tilted: Option<ImportanceEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Inconsistent,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Ordered by decreasing `δ`.
    pub rows: Vec<SweepRow>,
    /// `-I` from the rate estimate.
    pub neg_rate: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Strictly decreasing noise levels.
    pub deltas: Vec<f64>,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Also run the estimator tilted by the rate-minimizing control.
    pub importance_sampling: bool,
}

/// Trend and band verdict on `(δ, δ² log p̂)` pairs, ordered by decreasing `δ`.
///
/// Consistent when the distance to `-I` never grows as `δ` shrinks and the
/// smallest-δ value lies in `[2(-I), 0.5(-I)]`. For `I = 0` the band
/// collapses to a point; it is replaced by `p̂ ≥ 1/2`.
pub fn verdict(points: &[(f64, Option<f64>)], neg_rate: f64) -> Verdict {
    let usable: Vec<(f64, f64)> = points.iter().filter_map(|(d, v)| v.map(|v| (*d, v))).collect();
    let Some(&(delta_min, last)) = usable.last() else {
        return Verdict::Inconclusive;
    };
    let trend = usable
        .windows(2)
        .all(|w| (w[1].1 - neg_rate).abs() <= (w[0].1 - neg_rate).abs());
    let band = if neg_rate < 0.0 {
        (2.0 * neg_rate..=0.5 * neg_rate).contains(&last)
    } else {
        last >= -delta_min * delta_min * std::f64::consts::LN_2
    };
    if trend && band {
        Verdict::Consistent
    } else {
        Verdict::Inconsistent
    }
}

pub fn ldp_sweep(
    spec: &ProblemSpec,
    event: &EventSpec,
    rate: &RateEstimate,
    opts: &SweepOptions,
    eps: f64,
    cfg: &PenaltyConfig,
) -> Result<SweepResult> {
    if opts.deltas.is_empty() || opts.deltas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::param("delta list must be non-empty and strictly decreasing"));
    }
    if opts.deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::param("sweep noise levels must be positive"));
    }
    if !rate.converged || !rate.value.is_finite() {
        return Err(Error::param("the rate estimate did not converge"));
    }
    let mut rows = Vec::with_capacity(opts.deltas.len());
    for (j, &delta) in opts.deltas.iter().enumerate() {
        let j = j as u64;
        let estimate = estimate_probability(
            spec,
            delta,
            event,
            opts.n_paths,
            derive_seed(opts.master_seed, 2 * j),
            eps,
            cfg,
        )?;
        let d2logp = (estimate.hits > 0).then(|| delta * delta * estimate.p_hat.ln());
        let tilted = if opts.importance_sampling {
            let seed = derive_seed(opts.master_seed, 2 * j + 1);
            Some(estimate_probability_tilted(
                spec,
                delta,
                event,
                &rate.control,
                opts.n_paths,
                seed,
                eps,
                cfg,
            )?)
        } else {
            None
        };
        rows.push(SweepRow {
            estimate,
            d2logp,
            tilted,
        });
    }
    let neg_rate = -rate.value;
    let points: Vec<(f64, Option<f64>)> = rows.iter().map(|r| (r.estimate.delta, r.d2logp)).collect();
    Ok(SweepResult {
        verdict: verdict(&points, neg_rate),
        rows,
        neg_rate,
    })
}

/// Plot-ready table; `d2logp` is `-inf` on rows without hits.
pub fn write_sweep_csv<W: Write>(r: &SweepResult, mut w: W) -> Result<()> {
    writeln!(w, "delta,n_paths,p_hat,ci_lo,ci_hi,d2logp,neg_rate")?;
    for row in &r.rows {
        let e = &row.estimate;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            e.delta,
            e.n_paths,
            e.p_hat,
            e.ci_lo,
            e.ci_hi,
            row.d2logp.unwrap_or(f64::NEG_INFINITY),
            r.neg_rate
        )?;
    }
    Ok(())
}
