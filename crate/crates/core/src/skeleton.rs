//! Controlled skeleton equation solved by penalization.
//!
//! For fixed `ε` each backward-Euler step solves
//!
//! ```text
//! y - y_n + Δt [A(y) - (1/ε) ((y - ψ_{n+1})⁻)^{q̃-1}] = Δt f_n + G̃(y_n) Φ_n
//! ```
//!
//! by damped Newton on the assembled tridiagonal Jacobian, where `Φ_n` is the
//! H-valued drive over the interval (`φ_n Δt` for the skeleton, plus `δ ΔW_n`
//! for noisy paths) and `G̃(y) = G(max(y, ψ))`. The reflection is recovered as
//! `ρ = -(1/ε) ((y - ψ)⁻)^{q̃-1}` and ε is driven to zero along a schedule
//! until consecutive solutions agree in `C([0,T]; H)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mesh::{dual_norm_p2, Field, Mesh, Trajectory};
use crate::noise::{h0_norm_sq, modified_diffusion, Control, DiffusionSpec, QSpec};
use crate::operators::{dual_order_decomposition, DualOrderData, Operator, OperatorSpec};
use crate::report::{PropertyReport, Witness};

/// Full discrete problem data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub operator: OperatorSpec,
    pub diffusion: DiffusionSpec,
    pub qspec: QSpec,
    pub mesh: Mesh,
    pub horizon: f64,
    pub n_steps: usize,
    /// `ψ(t_n)` for `n = 0..=N_t`.
    pub obstacle: Vec<Field>,
    /// `f` on each interval, `n = 0..N_t`.
    pub forcing: Vec<Field>,
    pub initial: Field,
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        operator: OperatorSpec,
        diffusion: DiffusionSpec,
        qspec: QSpec,
        mesh: Mesh,
        horizon: f64,
        n_steps: usize,
        obstacle: Vec<Field>,
        forcing: Vec<Field>,
        initial: Field,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::param("horizon must be positive"));
        }
        if n_steps == 0 {
            return Err(Error::param("n_steps must be at least 1"));
        }
        check_len(n_steps + 1, obstacle.len())?;
        check_len(n_steps, forcing.len())?;
        for f in obstacle.iter().chain(&forcing).chain(std::iter::once(&initial)) {
            mesh.check(f)?;
            if !f.is_finite() {
                return Err(Error::Numeric("problem data must be finite".into()));
            }
        }
        check_len(qspec.eigenfields[0].len(), mesh.n_nodes())?;
        if let Some(i) = (0..initial.len()).find(|&i| initial[i] < obstacle[0][i]) {
            return Err(Error::param(format!(
                "initial datum lies below the obstacle at node {i} ({} < {})",
                initial[i], obstacle[0][i]
            )));
        }
        Ok(ProblemSpec {
            operator,
            diffusion,
            qspec,
            mesh,
            horizon,
            n_steps,
            obstacle,
            forcing,
            initial,
        })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn modes(&self) -> usize {
        self.qspec.modes()
    }

    /// Magnitude used to scale absolute tolerances.
    pub fn scale(&self) -> f64 {
        self.obstacle
            .iter()
            .chain(std::iter::once(&self.initial))
            .map(Field::max_abs)
            .fold(1.0, f64::max)
    }

    pub fn dual_order(&self) -> DualOrderData {
        dual_order_decomposition(&self.operator, &self.obstacle, &self.forcing, self.dt(), &self.mesh)
            .expect("validated at construction")
    }

    pub fn with_forcing(&self, forcing: Vec<Field>) -> Result<Self> {
        let mut s = self.clone();
        check_len(self.n_steps, forcing.len())?;
        for f in &forcing {
            self.mesh.check(f)?;
        }
        s.forcing = forcing;
        Ok(s)
    }
}

/// Penalization and continuation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub eps_schedule: Vec<f64>,
    /// Penalty exponent `q̃ = min(2, p)`.
    pub q_tilde: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub cauchy_tol: f64,
}

impl PenaltyConfig {
    /// Default schedule `1e-1 → 1e-5` with factor `1/4`.
    pub fn for_exponent(p: f64) -> Self {
        PenaltyConfig {
            eps_schedule: geometric_schedule(1e-1, 1e-5, 0.25),
            q_tilde: p.min(2.0),
            newton_tol: 1e-10,
            newton_max_iter: 50,
            cauchy_tol: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_schedule.is_empty() || self.eps_schedule.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::param("epsilon schedule must be non-empty and positive"));
        }
        if self.eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::param("epsilon schedule must be strictly decreasing"));
        }
        if !(self.q_tilde > 1.0 && self.q_tilde <= 2.0) {
            return Err(Error::param("q_tilde must lie in (1, 2]"));
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(Error::param("newton tolerance and iteration cap must be positive"));
        }
        Ok(())
    }

    /// Smallest ε of the schedule.
    pub fn final_eps(&self) -> f64 {
        *self.eps_schedule.last().expect("validated schedule")
    }
}

/// `eps_max · factor^k` while `>= eps_min`.
pub fn geometric_schedule(eps_max: f64, eps_min: f64, factor: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut e = eps_max;
    while e >= eps_min * (1.0 - 1e-12) && out.len() < 200 {
        out.push(e);
        e *= factor;
    }
    out
}

/// Nodal reflection density; row `n` belongs to the interval ending at `t_{n+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionMeasure {
    pub values: Vec<Field>,
}

impl ReflectionMeasure {
    pub fn scaled(&self, s: f64) -> Self {
        ReflectionMeasure {
            values: self.values.iter().map(|f| f.scale(s)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(Field::max_abs).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedSolution {
    pub trajectory: Trajectory,
    pub eps: f64,
    /// Newton iterations per step.
    pub newton_iterations: Vec<usize>,
    /// Steps that needed the half-step retry.
    pub retries: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub iterations: usize,
    pub retried: bool,
}

fn penalty_exponent_check(q: f64) -> Result<()> {
    if !(q > 1.0 && q <= 2.0) {
        return Err(Error::param("q_tilde must lie in (1, 2]"));
    }
    Ok(())
}

struct NewtonFailure {
    residual: f64,
    iterations: usize,
}

/// Solves `y - prev - load + dt [A(y) - P(y)] = 0` by damped Newton from `guess`.
#[allow(clippy::too_many_arguments)]
fn newton(
    op: &OperatorSpec,
    mesh: &Mesh,
    prev: &[f64],
    guess: &[f64],
    load: &[f64],
    psi: &[f64],
    dt: f64,
    eps: f64,
    cfg: &PenaltyConfig,
) -> Result<(Field, usize), NewtonFailure> {
    let q = cfg.q_tilde;
    let m = prev.len();
    let residual = |y: &[f64]| -> Field {
        let a = op.apply(y, mesh);
        (0..m)
            .map(|i| {
                let s = (psi[i] - y[i]).max(0.0);
                let pen = if s > 0.0 { s.powf(q - 1.0) / eps } else { 0.0 };
                y[i] - prev[i] - load[i] + dt * (a[i] - pen)
            })
            .collect()
    };
    let tol = cfg.newton_tol * (1.0 + mesh.l2(prev) + mesh.l2(load));
    let mut y = Field::new(guess.to_vec());
    let mut f = residual(&y);
    let mut r = mesh.l2(&f);
    for it in 0..cfg.newton_max_iter {
        if !r.is_finite() {
            break;
        }
        if r <= tol {
            return Ok((y, it));
        }
        let mut jac = op.jacobian(&y, mesh);
        for i in 0..m {
            jac.lower[i] *= dt;
            jac.upper[i] *= dt;
            jac.diag[i] *= dt;
            jac.diag[i] += 1.0;
            let s = psi[i] - y[i];
            if s > 0.0 {
                jac.diag[i] += dt * (q - 1.0) * s.max(1e-14).powf(q - 2.0) / eps;
            }
        }
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        let d = jac.solve(&neg);
        let mut alpha = 1.0;
        loop {
            let trial: Field = y.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let ft = residual(&trial);
            let rt = mesh.l2(&ft);
            if rt < (1.0 - 1e-4 * alpha) * r || (alpha < 1e-3 && rt < r) {
                y = trial;
                f = ft;
                r = rt;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                return Err(NewtonFailure {
                    residual: r,
                    iterations: it + 1,
                });
            }
        }
    }
    if r <= tol {
        return Ok((y, cfg.newton_max_iter));
    }
    Err(NewtonFailure {
        residual: r,
        iterations: cfg.newton_max_iter,
    })
}

/// Explicit part `Δt f_n + G̃(y_n) Σ_k √λ_k e_k drive_k`.
fn explicit_load(spec: &ProblemSpec, n: usize, y: &[f64], drive: &[f64]) -> Field {
    let dt = spec.dt();
    let phi = spec.qspec.h_element(drive);
    let g = modified_diffusion(&spec.diffusion, y, &spec.obstacle[n], &phi);
    spec.forcing[n].iter().zip(g.iter()).map(|(f, g)| dt * f + g).collect()
}

/// Newton from `prev`; if that stalls on a stiff penalty, the same step is
/// solved for `ε·10^k, …, ε·10, ε`, each warm-starting the next.
#[allow(clippy::too_many_arguments)]
fn solve_step(
    op: &OperatorSpec,
    mesh: &Mesh,
    prev: &[f64],
    load: &[f64],
    psi: &[f64],
    dt: f64,
    eps: f64,
    cfg: &PenaltyConfig,
) -> Result<(Field, usize), NewtonFailure> {
    let first = newton(op, mesh, prev, prev, load, psi, dt, eps, cfg);
    let Err(failure) = first else { return first };
    // Start where the penalty is mild relative to the time step.
    let levels = ((1e-2 / (eps / dt)).log10().ceil().max(1.0) as i32).min(12);
    let mut guess = Field::new(prev.to_vec());
    let mut total = failure.iterations;
    for k in (0..=levels).rev() {
        let (y, it) = newton(op, mesh, prev, &guess, load, psi, dt, eps * 10f64.powi(k), cfg)?;
        total += it;
        guess = y;
    }
    Ok((guess, total))
}

/// Advances from `y_n` over interval `n` given the mode-coordinate drive.
/// On failure the interval is retried once as two half steps.
pub(crate) fn advance(
    spec: &ProblemSpec,
    n: usize,
    y_n: &[f64],
    drive: &[f64],
    eps: f64,
    cfg: &PenaltyConfig,
) -> Result<(Field, StepOutcome)> {
    let load = explicit_load(spec, n, y_n, drive);
    let dt = spec.dt();
    let op = &spec.operator;
    let mesh = &spec.mesh;
    match solve_step(op, mesh, y_n, &load, &spec.obstacle[n + 1], dt, eps, cfg) {
        Ok((y, iterations)) => Ok((
            y,
            StepOutcome {
                iterations,
                retried: false,
            },
        )),
        Err(_) => {
            let half = load.scale(0.5);
            let mid: Field = spec.obstacle[n]
                .iter()
                .zip(spec.obstacle[n + 1].iter())
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let fail = |e: NewtonFailure| Error::Step {
                step: n,
                residual: e.residual,
                iterations: e.iterations,
            };
            let (y_mid, i1) = solve_step(op, mesh, y_n, &half, &mid, 0.5 * dt, eps, cfg).map_err(fail)?;
            let (y, i2) =
                solve_step(op, mesh, &y_mid, &half, &spec.obstacle[n + 1], 0.5 * dt, eps, cfg).map_err(fail)?;
            Ok((
                y,
                StepOutcome {
                    iterations: i1 + i2,
                    retried: true,
                },
            ))
        }
    }
}

/// One penalized backward-Euler step of the skeleton equation with control row `a[n]`.
pub fn step_penalized(
    spec: &ProblemSpec,
    n: usize,
    y_n: &[f64],
    control_row: &[f64],
    eps: f64,
    cfg: &PenaltyConfig,
) -> Result<(Field, StepOutcome)> {
    if !(eps > 0.0) {
        return Err(Error::param("eps must be positive"));
    }
    if n >= spec.n_steps {
        return Err(Error::param(format!("step index {n} out of range")));
    }
    spec.mesh.check(y_n)?;
    check_len(spec.modes(), control_row.len())?;
    let dt = spec.dt();
    let drive: Vec<f64> = control_row.iter().map(|a| a * dt).collect();
    advance(spec, n, y_n, &drive, eps, cfg)
}

/// Integrates the penalized dynamics with per-interval mode drives.
pub(crate) fn integrate(
    spec: &ProblemSpec,
    eps: f64,
    cfg: &PenaltyConfig,
    drive: impl Fn(usize) -> Vec<f64>,
) -> Result<PenalizedSolution> {
    if !(eps > 0.0) {
        return Err(Error::param("eps must be positive"));
    }
    penalty_exponent_check(cfg.q_tilde)?;
    let mut fields = Vec::with_capacity(spec.n_steps + 1);
    fields.push(spec.initial.clone());
    let mut newton_iterations = Vec::with_capacity(spec.n_steps);
    let mut retries = 0;
    for n in 0..spec.n_steps {
        let (y, out) = advance(spec, n, &fields[n], &drive(n), eps, cfg)?;
        if !y.is_finite() {
            return Err(Error::Numeric(format!("non-finite state at step {}", n + 1)));
        }
        newton_iterations.push(out.iterations);
        retries += out.retried as usize;
        fields.push(y);
    }
    Ok(PenalizedSolution {
        trajectory: Trajectory::new(spec.horizon, fields)?,
        eps,
        newton_iterations,
        retries,
    })
}

/// Full penalized trajectory at fixed `eps`.
pub fn solve_skeleton_penalized(
    spec: &ProblemSpec,
    c: &Control,
    eps: f64,
    cfg: &PenaltyConfig,
) -> Result<PenalizedSolution> {
    c.check_shape(spec.n_steps, spec.modes())?;
    let dt = spec.dt();
    integrate(spec, eps, cfg, |n| c.row(n).iter().map(|a| a * dt).collect())
}

/// The control-to-state map evaluated at the smallest ε of the schedule.
///
/// Used wherever two solutions are compared, so that both carry the same
/// penalization bias.
pub fn skeleton_map(spec: &ProblemSpec, c: &Control, cfg: &PenaltyConfig) -> Result<Trajectory> {
    cfg.validate()?;
    Ok(solve_skeleton_penalized(spec, c, cfg.final_eps(), cfg)?.trajectory)
}

/// `ρ[n] = -(1/ε) ((y_{n+1} - ψ_{n+1})⁻)^{q̃-1}`.
pub fn recover_reflection(traj: &Trajectory, spec: &ProblemSpec, eps: f64, q_tilde: f64) -> Result<ReflectionMeasure> {
    if !(eps > 0.0) {
        return Err(Error::param("eps must be positive"));
    }
    penalty_exponent_check(q_tilde)?;
    check_len(spec.n_steps + 1, traj.fields.len())?;
    let values = (1..=spec.n_steps)
        .map(|n| {
            traj.fields[n]
                .iter()
                .zip(spec.obstacle[n].iter())
                .map(|(y, psi)| {
                    let s = (psi - y).max(0.0);
                    if s > 0.0 {
                        -s.powf(q_tilde - 1.0) / eps
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(ReflectionMeasure { values })
}

/// `h Δt Σ_n Σ_i ((y_n - ψ_n)⁻)^{q̃}`.
pub fn penalty_mass(traj: &Trajectory, spec: &ProblemSpec, q_tilde: f64) -> f64 {
    let w = spec.mesh.h() * spec.dt();
    traj.fields[1..]
        .iter()
        .zip(&spec.obstacle[1..])
        .map(|(y, psi)| {
            y.iter()
                .zip(psi.iter())
                .map(|(a, b)| (b - a).max(0.0).powf(q_tilde))
                .sum::<f64>()
        })
        .sum::<f64>()
        * w
}

/// `Σ_n Δt h Σ_i ρ[n]_i (y_{n+1} - ψ_{n+1})_i`; every summand is `<= 0`.
pub fn complementarity_pairing(traj: &Trajectory, rho: &ReflectionMeasure, spec: &ProblemSpec) -> f64 {
    let w = spec.mesh.h() * spec.dt();
    rho.values
        .iter()
        .enumerate()
        .map(|(n, r)| {
            r.iter()
                .zip(traj.fields[n + 1].iter().zip(spec.obstacle[n + 1].iter()))
                .map(|(r, (y, psi))| r * (y - psi))
                .sum::<f64>()
        })
        .sum::<f64>()
        * w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonLevel {
    pub eps: f64,
    /// `sup_n ‖y^ε - y^{ε_prev}‖_H`, absent for the first level.
    pub cauchy_gap: Option<f64>,
    pub penalty_mass: f64,
    pub pairing: f64,
    pub newton_iterations: usize,
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLog {
    pub levels: Vec<EpsilonLevel>,
    pub converged: bool,
}

impl ConvergenceLog {
    pub fn gaps(&self) -> Vec<f64> {
        self.levels.iter().filter_map(|l| l.cauchy_gap).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSolution {
    pub trajectory: Trajectory,
    pub reflection: ReflectionMeasure,
    /// ε of the returned trajectory.
    pub eps: f64,
    pub log: ConvergenceLog,
}

fn continuation(
    spec: &ProblemSpec,
    c: &Control,
    cfg: &PenaltyConfig,
    stop_early: bool,
) -> Result<(PenalizedSolution, ConvergenceLog)> {
    cfg.validate()?;
    let mut levels = Vec::new();
    let mut prev: Option<PenalizedSolution> = None;
    for &eps in &cfg.eps_schedule {
        let sol = solve_skeleton_penalized(spec, c, eps, cfg)?;
        let rho = recover_reflection(&sol.trajectory, spec, eps, cfg.q_tilde)?;
        let gap = match &prev {
            Some(p) => Some(sol.trajectory.sup_distance(&p.trajectory, &spec.mesh)?),
            None => None,
        };
        levels.push(EpsilonLevel {
            eps,
            cauchy_gap: gap,
            penalty_mass: penalty_mass(&sol.trajectory, spec, cfg.q_tilde),
            pairing: complementarity_pairing(&sol.trajectory, &rho, spec),
            newton_iterations: sol.newton_iterations.iter().sum(),
            retries: sol.retries,
        });
        prev = Some(sol);
        if stop_early && gap.is_some_and(|g| g <= cfg.cauchy_tol) {
            return Ok((
                prev.unwrap(),
                ConvergenceLog {
                    levels,
                    converged: true,
                },
            ));
        }
    }
    let converged = levels
        .last()
        .and_then(|l| l.cauchy_gap)
        .is_some_and(|g| g <= cfg.cauchy_tol);
    Ok((prev.expect("non-empty schedule"), ConvergenceLog { levels, converged }))
}

/// ε-continuation until consecutive solutions are `cauchy_tol`-close in `C([0,T]; H)`.
pub fn solve_skeleton(spec: &ProblemSpec, c: &Control, cfg: &PenaltyConfig) -> Result<SkeletonSolution> {
    let (sol, log) = continuation(spec, c, cfg, true)?;
    if !log.converged {
        return Err(Error::Convergence { gaps: log.gaps() });
    }
    let reflection = recover_reflection(&sol.trajectory, spec, sol.eps, cfg.q_tilde)?;
    Ok(SkeletonSolution {
        trajectory: sol.trajectory,
        reflection,
        eps: sol.eps,
        log,
    })
}

/// Runs every ε of the schedule (no early stop) and logs gaps, penalty mass and pairing.
pub fn penalty_continuation(spec: &ProblemSpec, c: &Control, cfg: &PenaltyConfig) -> Result<SkeletonSolution> {
    let (sol, log) = continuation(spec, c, cfg, false)?;
    let reflection = recover_reflection(&sol.trajectory, spec, sol.eps, cfg.q_tilde)?;
    Ok(SkeletonSolution {
        trajectory: sol.trajectory,
        reflection,
        eps: sol.eps,
        log,
    })
}

/// Least-squares fit of `log y` against `log x`: `(slope, intercept, R²)`.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// `0 <= -ρ <= h⁻` nodally, with `ls_tol = max(1e-6, 0.02 max h⁻)` above and
/// `1e-8 · max(1, max h⁻)` below.
pub fn check_lewy_stampacchia(rho: &ReflectionMeasure, dod: &DualOrderData) -> Result<PropertyReport> {
    check_len(dod.h_minus.len(), rho.values.len())?;
    let max_h = dod.h_minus.iter().map(Field::max_abs).fold(0.0, f64::max);
    let ls_tol = 1e-6f64.max(0.02 * max_h);
    let lower_tol = 1e-8 * max_h.max(1.0);
    let mut report = PropertyReport::new("lewy_stampacchia");
    for (n, (r, hm)) in rho.values.iter().zip(&dod.h_minus).enumerate() {
        check_len(hm.len(), r.len())?;
        for i in 0..r.len() {
            let k = -r[i];
            let margin = (hm[i] - k).min(k);
            let ok = k >= -lower_tol && k <= hm[i] + ls_tol;
            report.record(margin, ok, || Witness {
                trial: None,
                location: Some((n, i)),
                margin,
                fields: Vec::new(),
            });
        }
    }
    Ok(report)
}

/// Constraint `y >= ψ - 1e-6 · scale` at every node and step, and the pairing
/// `Σ Δt h Σ ρ (y - ψ) >= -1e-5 (‖ρ‖ ‖y - ψ‖ + 1)` (space-time L² norms).
pub fn check_complementarity(traj: &Trajectory, rho: &ReflectionMeasure, spec: &ProblemSpec) -> Result<PropertyReport> {
    check_len(spec.n_steps + 1, traj.fields.len())?;
    check_len(spec.n_steps, rho.values.len())?;
    let scale = spec.scale();
    let mut report = PropertyReport::new("complementarity");
    for (n, (y, psi)) in traj.fields.iter().zip(&spec.obstacle).enumerate() {
        for i in 0..y.len() {
            let margin = y[i] - psi[i];
            report.record(margin, margin >= -1e-6 * scale, || Witness {
                trial: None,
                location: Some((n, i)),
                margin,
                fields: Vec::new(),
            });
        }
    }
    let w = spec.mesh.h() * spec.dt();
    let rho_norm = (w * rho.values.iter().flat_map(|f| f.iter()).map(|v| v * v).sum::<f64>()).sqrt();
    let gap_norm = (w * traj.fields[1..]
        .iter()
        .zip(&spec.obstacle[1..])
        .flat_map(|(y, p)| y.iter().zip(p.iter()).map(|(a, b)| (a - b) * (a - b)))
        .sum::<f64>())
    .sqrt();
    let comp_tol = 1e-5 * (rho_norm * gap_norm + 1.0);
    let pairing = complementarity_pairing(traj, rho, spec);
    report.record(pairing, pairing >= -comp_tol, || Witness {
        trial: None,
        location: None,
        margin: pairing,
        fields: Vec::new(),
    });
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `sup_n ‖y₁ - y₂‖²_H`.
    pub sup_gap_sq: f64,
    /// `∫‖φ₁ - φ₂‖²_{H₀}`.
    pub control_distance_sq: f64,
    /// `Σ Δt ‖f₁ - f₂‖²_{V'}` (p = 2 only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forcing_distance_sq: Option<f64>,
    pub ratio: f64,
    /// `Σ Δt ‖y₁ - y₂‖^p_V`, reported when strong monotonicity is certified.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_gap_p: Option<f64>,
}

fn stability_between(spec: &ProblemSpec, y1: &Trajectory, y2: &Trajectory) -> Result<(f64, Option<f64>)> {
    let sup = y1.sup_distance(y2, &spec.mesh)?;
    let v_gap = spec.operator.constants.alpha_bar.map(|_| {
        y1.fields[1..]
            .iter()
            .zip(&y2.fields[1..])
            .map(|(a, b)| spec.dt() * spec.mesh.grad_p_energy(&a.sub(b), spec.operator.p))
            .sum()
    });
    Ok((sup * sup, v_gap))
}

/// Sensitivity of the solution to the control at fixed forcing.
pub fn stability_gap(spec: &ProblemSpec, c1: &Control, c2: &Control, cfg: &PenaltyConfig) -> Result<StabilityReport> {
    let y1 = skeleton_map(spec, c1, cfg)?;
    let y2 = skeleton_map(spec, c2, cfg)?;
    let (sup_gap_sq, v_gap_p) = stability_between(spec, &y1, &y2)?;
    let control_distance_sq = h0_norm_sq(&c1.sub(c2)?, spec.dt());
    Ok(StabilityReport {
        sup_gap_sq,
        control_distance_sq,
        forcing_distance_sq: None,
        ratio: sup_gap_sq / control_distance_sq,
        v_gap_p,
    })
}

/// Sensitivity to the forcing at fixed control, measured in the discrete
/// `L²(0,T; H^{-1})` norm; only defined for `p = 2`.
pub fn forcing_stability_gap(
    spec: &ProblemSpec,
    forcing: Vec<Field>,
    c: &Control,
    cfg: &PenaltyConfig,
) -> Result<StabilityReport> {
    if spec.operator.p != 2.0 {
        return Err(Error::param("forcing stability needs the p = 2 dual norm"));
    }
    let other = spec.with_forcing(forcing)?;
    let y1 = skeleton_map(spec, c, cfg)?;
    let y2 = skeleton_map(&other, c, cfg)?;
    let (sup_gap_sq, v_gap_p) = stability_between(spec, &y1, &y2)?;
    let mut fd = 0.0;
    for (a, b) in spec.forcing.iter().zip(&other.forcing) {
        fd += spec.dt() * dual_norm_p2(&a.sub(b), &spec.mesh)?.powi(2);
    }
    Ok(StabilityReport {
        sup_gap_sq,
        control_distance_sq: 0.0,
        forcing_distance_sq: Some(fd),
        ratio: sup_gap_sq / fd,
        v_gap_p,
    })
}

/// `sup_n ‖y_n‖²_H + α Σ Δt ‖y_n‖^p_V`.
pub fn energy(traj: &Trajectory, spec: &ProblemSpec) -> f64 {
    let sup = traj.fields.iter().map(|f| spec.mesh.inner(f, f)).fold(0.0, f64::max);
    let alpha = spec.operator.constants.alpha;
    let dissipation: f64 = traj.fields[1..]
        .iter()
        .map(|f| spec.dt() * spec.mesh.grad_p_energy(f, spec.operator.p))
        .sum();
    sup + alpha * dissipation
}
