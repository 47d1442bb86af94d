//! The rate functional `I(y) = inf{½∫‖φ‖²_{H₀} : y = g⁰(∫φ)}`, its
//! minimization over a reduced control class, a brute-force grid oracle and
//! the weak-continuity probe of the control-to-state map.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mesh::{Field, Trajectory};
use crate::noise::{h0_norm_sq, Control};
use crate::skeleton::{skeleton_map, PenaltyConfig, ProblemSpec};
use crate::spde::coupling_gap;

/// A set of trajectories defined through the terminal state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventSpec {
    /// `{y : ‖y(T) - center‖_H ≤ radius}`.
    TerminalBall { center: Field, radius: f64 },
    /// `{y : ∫ y(T) dx ≥ threshold}`; `threshold = -∞` is the whole space.
    TerminalMeanAbove {
        #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
        threshold: f64,
    },
}

impl EventSpec {
    pub fn terminal_ball(center: Field, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::param("ball radius must be positive"));
        }
        Ok(EventSpec::TerminalBall { center, radius })
    }

    pub fn terminal_mean_above(threshold: f64) -> Result<Self> {
        if threshold.is_nan() || threshold == f64::INFINITY {
            return Err(Error::param("threshold must be a number or -inf"));
        }
        Ok(EventSpec::TerminalMeanAbove { threshold })
    }

    /// Distance in `C([0,T]; H)` from `traj` to the event set.
    pub fn dist(&self, traj: &Trajectory, spec: &ProblemSpec) -> f64 {
        let mesh = &spec.mesh;
        let y = traj.terminal();
        match self {
            EventSpec::TerminalBall { center, radius } => (mesh.l2(&y.sub(center)) - radius).max(0.0),
            EventSpec::TerminalMeanAbove { threshold } => {
                // The closest member shifts the terminal state by a constant.
                let one = mesh.field_from_fn(|_| 1.0);
                let deficit = threshold - terminal_mean(traj, spec);
                (deficit / mesh.l2(&one)).max(0.0)
            }
        }
    }

    pub fn contains(&self, traj: &Trajectory, spec: &ProblemSpec) -> bool {
        let y = traj.terminal();
        match self {
            EventSpec::TerminalBall { center, radius } => spec.mesh.l2(&y.sub(center)) <= *radius,
            EventSpec::TerminalMeanAbove { threshold } => terminal_mean(traj, spec) >= *threshold,
        }
    }
}

/// `∫ y(T) dx` under the lumped rule.
pub fn terminal_mean(traj: &Trajectory, spec: &ProblemSpec) -> f64 {
    spec.mesh.h() * traj.terminal().iter().sum::<f64>()
}

fn ser_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    }
}

fn de_extended<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(v) => Ok(v),
        Num::S(s) => match s.as_str() {
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(serde::de::Error::custom(format!("expected a number, got {other:?}"))),
        },
    }
}

/// One optimizer iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateIterate {
    pub mu: f64,
    pub objective: f64,
    pub value: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// `½∫‖φ‖²_{H₀}` of the returned control. An upper bound on the rate only
    /// when `converged`; otherwise the best infeasible iterate. The brute-force
    /// oracle reports `∞` when no grid control is admissible.
    #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
    pub value: f64,
    pub control: Control,
    /// Distance of `g⁰(∫φ)` to the event.
    pub constraint_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<RateIterate>,
}

/// `½ ∫‖φ‖²_{H₀}`.
pub fn rate_value(c: &Control, dt: f64) -> f64 {
    0.5 * h0_norm_sq(c, dt)
}

/// Reduced control class: piecewise constant on `blocks` equal time blocks,
/// supported on the first `modes` noise modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlBasis {
    pub blocks: usize,
    pub modes: usize,
}

impl ControlBasis {
    pub fn n_params(&self) -> usize {
        self.blocks * self.modes
    }

    fn validate(&self, spec: &ProblemSpec) -> Result<()> {
        if self.blocks == 0 || self.modes == 0 {
            return Err(Error::param("control basis needs at least one block and one mode"));
        }
        if self.blocks > spec.n_steps {
            return Err(Error::param(format!(
                "{} blocks exceed {} time steps",
                self.blocks, spec.n_steps
            )));
        }
        if self.modes > spec.modes() {
            return Err(Error::param(format!(
                "{} control modes exceed {} noise modes",
                self.modes,
                spec.modes()
            )));
        }
        Ok(())
    }

    /// Expands block coefficients `θ[b·modes + k]` into a full control.
    pub fn expand(&self, theta: &[f64], spec: &ProblemSpec) -> Control {
        let mut c = Control::zeros(spec.n_steps, spec.modes());
        for (n, row) in c.coefficients.iter_mut().enumerate() {
            let b = n * self.blocks / spec.n_steps;
            row[..self.modes].copy_from_slice(&theta[b * self.modes..(b + 1) * self.modes]);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    pub basis: ControlBasis,
    /// Penalty weights for `μ · dist²`, applied in order.
    pub mu_schedule: Vec<f64>,
    /// Relative central-difference step.
    pub fd_step: f64,
    /// Gradient-descent iterations per penalty weight.
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Largest control dilation tried when restoring feasibility.
    pub max_dilation: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions {
            basis: ControlBasis { blocks: 10, modes: 4 },
            mu_schedule: vec![10.0, 100.0, 1000.0],
            fd_step: 1e-4,
            max_iter: 60,
            grad_tol: 1e-7,
            max_dilation: 4.0,
        }
    }
}

impl RateOptions {
    pub fn validate(&self, spec: &ProblemSpec) -> Result<()> {
        self.basis.validate(spec)?;
        if self.basis.n_params() > 40 {
            return Err(Error::param("the reduced control class is limited to 40 parameters"));
        }
        if self.mu_schedule.is_empty() || self.mu_schedule.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::param("penalty weights must be positive"));
        }
        if !(self.fd_step > 0.0) || !(self.max_dilation >= 1.0) {
            return Err(Error::param("fd_step must be positive and max_dilation at least 1"));
        }
        Ok(())
    }
}

struct Objective<'a> {
    spec: &'a ProblemSpec,
    event: &'a EventSpec,
    basis: ControlBasis,
    cfg: &'a PenaltyConfig,
}

impl Objective<'_> {
    /// `(rate, dist)` of the expanded control.
    fn eval(&self, theta: &[f64]) -> Result<(f64, f64)> {
        let c = self.basis.expand(theta, self.spec);
        let y = skeleton_map(self.spec, &c, self.cfg)?;
        Ok((rate_value(&c, self.spec.dt()), self.event.dist(&y, self.spec)))
    }

    fn penalized(&self, theta: &[f64], mu: f64) -> Result<f64> {
        let (r, d) = self.eval(theta)?;
        Ok(r + mu * d * d)
    }

    fn gradient(&self, theta: &[f64], mu: f64, step: f64) -> Result<Vec<f64>> {
        let h = step * theta.iter().fold(1.0f64, |m, t| m.max(t.abs()));
        (0..theta.len())
            .into_par_iter()
            .map(|i| {
                let mut tp = theta.to_vec();
                let mut tm = theta.to_vec();
                tp[i] += h;
                tm[i] -= h;
                Ok((self.penalized(&tp, mu)? - self.penalized(&tm, mu)?) / (2.0 * h))
            })
            .collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimizes `J_μ(θ) = ½∫‖φ_θ‖²_{H₀} + μ dist(g⁰(∫φ_θ), G)²` by gradient
/// descent (Barzilai–Borwein steps with Armijo backtracking) over the reduced
/// class, continuing in `μ`. The best iterate is then dilated to the
/// smallest admissible multiple so that the returned value bounds the rate
/// from above.
pub fn minimize_rate(
    spec: &ProblemSpec,
    event: &EventSpec,
    opts: &RateOptions,
    cfg: &PenaltyConfig,
) -> Result<RateEstimate> {
    opts.validate(spec)?;
    let obj = Objective {
        spec,
        event,
        basis: opts.basis,
        cfg,
    };
    let n = opts.basis.n_params();
    let mut theta = vec![0.0; n];
    let (_, d0) = obj.eval(&theta)?;
    if d0 == 0.0 {
        return Ok(RateEstimate {
            value: 0.0,
            control: opts.basis.expand(&theta, spec),
            constraint_residual: 0.0,
            iterations: 0,
            converged: true,
            history: vec![RateIterate {
                mu: 0.0,
                objective: 0.0,
                value: 0.0,
                residual: 0.0,
            }],
        });
    }

    let mut history = Vec::new();
    let mut iterations = 0;
    for &mu in &opts.mu_schedule {
        let mut j = obj.penalized(&theta, mu)?;
        let mut g = obj.gradient(&theta, mu, opts.fd_step)?;
        let mut alpha = 1.0 / norm(&g).max(1.0);
        for _ in 0..opts.max_iter {
            let gn = norm(&g);
            if gn <= opts.grad_tol {
                break;
            }
            // Armijo backtracking along -g.
            let mut accepted = None;
            let mut a = alpha;
            for _ in 0..40 {
                let trial: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - a * gi).collect();
                let jt = obj.penalized(&trial, mu)?;
                if jt <= j - 1e-4 * a * gn * gn {
                    accepted = Some((trial, jt));
                    break;
                }
                a *= 0.5;
            }
            let Some((next, jn)) = accepted else { break };
            iterations += 1;
            let gnext = obj.gradient(&next, mu, opts.fd_step)?;
            let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = gnext.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
            alpha = if sy > 0.0 {
                s.iter().map(|x| x * x).sum::<f64>() / sy
            } else {
                2.0 * a
            };
            let (value, residual) = obj.eval(&next)?;
            history.push(RateIterate {
                mu,
                objective: jn,
                value,
                residual,
            });
            let decrease = j - jn;
            theta = next;
            g = gnext;
            j = jn;
            if decrease <= 1e-13 * j.max(1e-300) {
                break;
            }
        }
    }

    let (value, residual) = obj.eval(&theta)?;
    let (theta, value, residual) = if residual > 0.0 {
        restore_feasibility(&obj, &theta, opts.max_dilation)?.unwrap_or((theta, value, residual))
    } else {
        (theta, value, residual)
    };
    Ok(RateEstimate {
        value,
        control: opts.basis.expand(&theta, spec),
        constraint_residual: residual,
        iterations,
        converged: residual == 0.0,
        history,
    })
}

/// Smallest dilation `s ∈ [1, s_max]` (to bisection accuracy) with `sθ` admissible.
#[allow(clippy::type_complexity)]
fn restore_feasibility(obj: &Objective, theta: &[f64], s_max: f64) -> Result<Option<(Vec<f64>, f64, f64)>> {
    let dilate = |s: f64| theta.iter().map(|t| s * t).collect::<Vec<f64>>();
    let (_, d_hi) = obj.eval(&dilate(s_max))?;
    if d_hi > 0.0 {
        return Ok(None);
    }
    let (mut lo, mut hi) = (1.0, s_max);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if obj.eval(&dilate(mid))?.1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    let t = dilate(hi);
    let (v, d) = obj.eval(&t)?;
    Ok(Some((t, v, d)))
}

/// Coefficient grid for [`brute_force_rate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BruteGrid {
    pub basis: ControlBasis,
    /// Points per coefficient, spread uniformly over `[-range, range]`.
    pub points: usize,
    pub range: f64,
}

impl Default for BruteGrid {
    fn default() -> Self {
        BruteGrid {
            basis: ControlBasis { blocks: 2, modes: 2 },
            points: 9,
            range: 3.0,
        }
    }
}

/// Largest number of grid controls [`brute_force_rate`] will evaluate.
pub const BRUTE_FORCE_LIMIT: usize = 1_000_000;

impl BruteGrid {
    pub fn size(&self) -> Option<usize> {
        u32::try_from(self.basis.n_params())
            .ok()
            .and_then(|e| self.points.checked_pow(e))
    }

    fn value(&self, j: usize) -> f64 {
        if self.points == 1 {
            0.0
        } else {
            -self.range + 2.0 * self.range * j as f64 / (self.points - 1) as f64
        }
    }

    pub fn theta(&self, index: usize) -> Vec<f64> {
        let mut i = index;
        (0..self.basis.n_params())
            .map(|_| {
                let j = i % self.points;
                i /= self.points;
                self.value(j)
            })
            .collect()
    }
}

/// Exhaustive minimum of the rate over a coefficient grid; `∞` if no grid
/// control reaches the event.
pub fn brute_force_rate(
    spec: &ProblemSpec,
    event: &EventSpec,
    grid: &BruteGrid,
    cfg: &PenaltyConfig,
) -> Result<RateEstimate> {
    grid.basis.validate(spec)?;
    if grid.basis.modes > 2 {
        return Err(Error::param("the brute-force oracle uses at most 2 modes"));
    }
    if grid.points == 0 || !(grid.range >= 0.0) {
        return Err(Error::param("grid needs at least one point and a non-negative range"));
    }
    let size = grid
        .size()
        .filter(|s| *s <= BRUTE_FORCE_LIMIT)
        .ok_or_else(|| Error::param(format!("grid exceeds {BRUTE_FORCE_LIMIT} evaluations")))?;
    let obj = Objective {
        spec,
        event,
        basis: grid.basis,
        cfg,
    };
    let evals: Vec<(f64, f64)> = (0..size)
        .into_par_iter()
        .map(|i| obj.eval(&grid.theta(i)))
        .collect::<Result<_>>()?;
    // Ties resolve to the lowest index so the result is order-independent.
    let best_feasible = evals
        .iter()
        .enumerate()
        .filter(|(_, (_, d))| *d == 0.0)
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)));
    let (index, value, residual) = match best_feasible {
        Some((i, (v, _))) => (i, *v, 0.0),
        None => {
            let (i, (_, d)) = evals
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
                .expect("grid is non-empty");
            (i, f64::INFINITY, *d)
        }
    };
    Ok(RateEstimate {
        value,
        control: grid.basis.expand(&grid.theta(index), spec),
        constraint_residual: residual,
        iterations: size,
        converged: residual == 0.0,
        history: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityRow {
    pub oscillation: usize,
    /// `sup_n ‖y_n - y‖_H`.
    pub sup_gap: f64,
    /// `|y_n - y|_T = sup‖·‖_H + (∫‖·‖^p_V)^{1/p}`, when strong monotonicity holds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_gap: Option<f64>,
    /// `∫‖φ_n‖²_{H₀}` of the perturbed control.
    pub control_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub amplitude: f64,
    pub rows: Vec<ContinuityRow>,
}

fn decays(gaps: &[f64]) -> bool {
    let strictly = gaps.windows(2).all(|w| w[1] < w[0]);
    let ratio_ok = match (gaps.first(), gaps.last()) {
        (Some(a), Some(b)) => *b <= 0.1 * *a,
        _ => false,
    };
    strictly && ratio_ok
}

impl ContinuityReport {
    pub fn sup_gaps(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sup_gap).collect()
    }

    pub fn t_gaps(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.t_gap).collect()
    }

    /// Strictly decreasing gaps with last ≤ 0.1 × first, in every reported metric.
    pub fn passed(&self) -> bool {
        decays(&self.sup_gaps()) && self.t_gaps().is_none_or(|t| decays(&t))
    }
}

/// Cell average of `sin(2π n t/T)` over each time step, added to mode 0.
pub fn oscillating_control(c: &Control, spec: &ProblemSpec, n: usize, amplitude: f64) -> Result<Control> {
    c.check_shape(spec.n_steps, spec.modes())?;
    let omega = 2.0 * std::f64::consts::PI * n as f64 / spec.horizon;
    let dt = spec.dt();
    let mut out = c.clone();
    for (i, row) in out.coefficients.iter_mut().enumerate() {
        let (t0, t1) = (i as f64 * dt, (i + 1) as f64 * dt);
        row[0] += amplitude * ((omega * t0).cos() - (omega * t1).cos()) / (omega * dt);
    }
    Ok(out)
}

/// Solves the skeleton for `c` plus a fixed-amplitude temporal oscillation of
/// increasing frequency (a weakly null perturbation) and reports the state gaps.
pub fn weak_continuity_probe(
    spec: &ProblemSpec,
    c: &Control,
    n_list: &[usize],
    amplitude: f64,
    cfg: &PenaltyConfig,
) -> Result<ContinuityReport> {
    let radius = c
        .radius
        .ok_or_else(|| Error::param("the base control must carry its radius N"))?;
    if n_list.contains(&0) {
        return Err(Error::param("oscillation indices must be positive"));
    }
    if !amplitude.is_finite() {
        return Err(Error::param("amplitude must be finite"));
    }
    let dt = spec.dt();
    let base = skeleton_map(spec, c, cfg)?;
    let t_metric = spec.operator.constants.alpha_bar.is_some();
    let rows = n_list
        .par_iter()
        .map(|&n| {
            let cn = oscillating_control(c, spec, n, amplitude)?;
            let energy = h0_norm_sq(&cn, dt);
            // Every member stays in a common ball S_{N'}.
            debug_assert!(energy <= (radius.sqrt() + amplitude.abs() * spec.horizon.sqrt()).powi(2) + 1e-9);
            let y = skeleton_map(spec, &cn, cfg)?;
            let (sup_gap, v_gap) = coupling_gap(&y, &base, &spec.mesh, spec.operator.p)?;
            Ok(ContinuityRow {
                oscillation: n,
                sup_gap,
                t_gap: t_metric.then_some(sup_gap + v_gap),
                control_energy: energy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContinuityReport { amplitude, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::tests::problem;
    use std::f64::consts::PI;

    fn forced() -> ProblemSpec {
        problem(2.0, 16, 40, 0.5, |_| 0.0, 1.0, |x| 0.5 * (PI * x).sin())
    }

    #[test]
    fn rate_value_examples() {
        assert_eq!(rate_value(&Control::zeros(10, 3), 0.1), 0.0);
        let unit = Control::constant(10, 1, 0, 1.0);
        assert!((rate_value(&unit, 0.1) - 0.5).abs() < 1e-14);
        let c = Control::from_rows((0..10).map(|n| vec![n as f64 * 0.3, -0.2]).collect()).unwrap();
        assert!((rate_value(&c.scale(2.0), 0.1) - 4.0 * rate_value(&c, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn event_distances() {
        let spec = forced();
        let cfg = PenaltyConfig::for_exponent(2.0);
        let y = skeleton_map(&spec, &Control::zeros(40, 4), &cfg).unwrap();
        let m = terminal_mean(&y, &spec);
        let above = EventSpec::terminal_mean_above(m + 0.1).unwrap();
        let one = spec.mesh.field_from_fn(|_| 1.0);
        assert!((above.dist(&y, &spec) - 0.1 / spec.mesh.l2(&one)).abs() < 1e-12);
        assert!(!above.contains(&y, &spec));
        let everything = EventSpec::terminal_mean_above(f64::NEG_INFINITY).unwrap();
        assert!(everything.contains(&y, &spec) && everything.dist(&y, &spec) == 0.0);
        let ball = EventSpec::terminal_ball(y.terminal().clone(), 1e-3).unwrap();
        assert!(ball.contains(&y, &spec));
        assert!(EventSpec::terminal_ball(y.terminal().clone(), 0.0).is_err());
        let json = serde_json::to_string(&everything).unwrap();
        assert_eq!(serde_json::from_str::<EventSpec>(&json).unwrap(), everything);
    }

    #[test]
    fn zero_rate_for_events_containing_the_free_state() {
        let spec = forced();
        let cfg = PenaltyConfig::for_exponent(2.0);
        let y = skeleton_map(&spec, &Control::zeros(40, 4), &cfg).unwrap();
        let ball = EventSpec::terminal_ball(y.terminal().clone(), 0.05).unwrap();
        let est = minimize_rate(&spec, &ball, &RateOptions::default(), &cfg).unwrap();
        assert!(est.converged && est.value.abs() < 1e-8);
        assert!(est.control.coefficients.iter().flatten().all(|a| *a == 0.0));
        let grid = BruteGrid {
            basis: ControlBasis { blocks: 1, modes: 2 },
            ..BruteGrid::default()
        };
        let oracle = brute_force_rate(&spec, &ball, &grid, &cfg).unwrap();
        assert_eq!(oracle.value, 0.0);
    }

    #[test]
    fn optimizer_dominates_oracle_and_is_monotone_in_threshold() {
        let spec = forced();
        let cfg = PenaltyConfig::for_exponent(2.0);
        let free = terminal_mean(&skeleton_map(&spec, &Control::zeros(40, 4), &cfg).unwrap(), &spec);
        let opts = RateOptions {
            basis: ControlBasis { blocks: 4, modes: 2 },
            ..RateOptions::default()
        };
        let grid = BruteGrid {
            basis: ControlBasis { blocks: 1, modes: 2 },
            ..BruteGrid::default()
        };
        let mut values = Vec::new();
        for excess in [0.02, 0.01, 0.005] {
            let ev = EventSpec::terminal_mean_above(free + excess).unwrap();
            let est = minimize_rate(&spec, &ev, &opts, &cfg).unwrap();
            assert!(est.converged, "{est:?}");
            let y = skeleton_map(&spec, &est.control, &cfg).unwrap();
            assert!(ev.contains(&y, &spec));
            assert!((rate_value(&est.control, spec.dt()) - est.value).abs() < 1e-12);
            // Goodness proxy: the rate never exceeds the penalized objective.
            assert!(est.history.iter().all(|it| it.value <= it.objective + 1e-15));
            let oracle = brute_force_rate(&spec, &ev, &grid, &cfg).unwrap();
            assert!(oracle.value.is_finite());
            assert!(est.value <= oracle.value + 1e-3, "{} vs {}", est.value, oracle.value);
            values.push(est.value);
        }
        assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
    }

    fn mirror_field(f: &[f64]) -> Field {
        f.iter().rev().copied().collect()
    }

    /// `sin(kπ(1-x)) = (-1)^{k+1} sin(kπx)`.
    fn mirror_control(c: &Control) -> Control {
        let mut m = c.clone();
        for row in &mut m.coefficients {
            for (k, a) in row.iter_mut().enumerate() {
                if k % 2 == 1 {
                    *a = -*a;
                }
            }
        }
        m
    }

    #[test]
    fn mirror_symmetry_of_the_oracle() {
        let spec = forced();
        let cfg = PenaltyConfig::for_exponent(2.0);
        let y0 = skeleton_map(&spec, &Control::zeros(40, 4), &cfg).unwrap();
        let center = y0.terminal().scale(1.3);
        assert!((mirror_field(&center).sub(&center)).max_abs() < 1e-9);
        let ev = EventSpec::terminal_ball(center, 0.05).unwrap();
        let grid = BruteGrid {
            basis: ControlBasis { blocks: 1, modes: 2 },
            ..BruteGrid::default()
        };
        for i in 0..grid.size().unwrap() {
            let c = grid.basis.expand(&grid.theta(i), &spec);
            let a = skeleton_map(&spec, &c, &cfg).unwrap();
            let b = skeleton_map(&spec, &mirror_control(&c), &cfg).unwrap();
            let d = mirror_field(a.terminal()).sub(b.terminal()).max_abs();
            assert!(d < 1e-8, "grid point {i}: {d}");
            assert!((ev.dist(&a, &spec) - ev.dist(&b, &spec)).abs() < 1e-8);
        }
        let best = brute_force_rate(&spec, &ev, &grid, &cfg).unwrap();
        assert!(best.value.is_finite());
        // The mirrored optimum is optimal too, so the symmetric subgrid
        // (odd-mode coefficient zero) attains the minimum whenever the optimum is unique.
        let mirrored = mirror_control(&best.control);
        let ym = skeleton_map(&spec, &mirrored, &cfg).unwrap();
        assert!(ev.contains(&ym, &spec));
        assert_eq!(rate_value(&mirrored, spec.dt()), best.value);
        assert!(best.control.coefficients.iter().all(|r| r[1] == 0.0));
    }

    #[test]
    fn brute_force_guard() {
        let spec = forced();
        let cfg = PenaltyConfig::for_exponent(2.0);
        let ev = EventSpec::terminal_mean_above(0.0).unwrap();
        let grid = BruteGrid {
            basis: ControlBasis { blocks: 4, modes: 2 },
            points: 9,
            range: 3.0,
        };
        assert!(matches!(
            brute_force_rate(&spec, &ev, &grid, &cfg),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn weak_continuity() {
        let spec = forced();
        let cfg = PenaltyConfig::for_exponent(2.0);
        let c = Control::constant(40, 4, 0, 0.5).with_radius(1.0, spec.dt()).unwrap();
        let zero = weak_continuity_probe(&spec, &c, &[2, 8], 0.0, &cfg).unwrap();
        assert!(zero.rows.iter().all(|r| r.sup_gap == 0.0 && r.t_gap == Some(0.0)));
        let r = weak_continuity_probe(&spec, &c, &[1, 4, 16], 1.0, &cfg).unwrap();
        let g = r.sup_gaps();
        assert!(g.windows(2).all(|w| w[1] < w[0]), "{g:?}");
        let t = r.t_gaps().unwrap();
        assert!(t.windows(2).all(|w| w[1] < w[0]), "{t:?}");
        assert!(weak_continuity_probe(&spec, &Control::zeros(40, 4), &[2], 1.0, &cfg).is_err());
    }
}
