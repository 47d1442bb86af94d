//! Run configuration (TOML with `[section]` headers), validation, problem
//! assembly and content-addressed run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh::{Field, Mesh};
use crate::noise::{Control, DiffusionSpec, QSpec, DEFAULT_EIGEN_SCALE};
use crate::operators::OperatorSpec;
use crate::rate::{BruteGrid, ControlBasis, EventSpec, RateOptions};
use crate::skeleton::{geometric_schedule, PenaltyConfig, ProblemSpec};

/// Environment variable overriding `master_seed`.
pub const SEED_ENV: &str = "OBSTACLE_LDP_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub problem: ProblemConfig,
    pub obstacle: FieldConfig,
    pub forcing: FieldConfig,
    pub initial: FieldConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub task: TaskConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Exponent of the p-Laplacian.
    pub p: f64,
    /// Diffusion strength in `G(u) = γ (u - ψ)`.
    pub gamma: f64,
    /// Number of noise modes `K`.
    pub modes: usize,
    /// `λ_k = eigen_scale · k^{-eigen_decay}`.
    #[serde(default = "default_eigen_scale")]
    pub eigen_scale: f64,
    #[serde(default = "default_eigen_decay")]
    pub eigen_decay: f64,
    pub n_cells: usize,
    pub n_steps: usize,
    pub horizon: f64,
}

fn default_eigen_scale() -> f64 {
    DEFAULT_EIGEN_SCALE
}

fn default_eigen_decay() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// `value`.
    Constant,
    /// `offset + amplitude · sin(mode π x)`.
    Sine,
    /// `from + (to - from) x`.
    Ramp,
    /// Nodal values, inline (`values`) or from a whitespace-separated `file`.
    Grid,
}

/// A field from the analytic library, optionally drifting linearly in time
/// (`+ time_rate · t`; obstacle and forcing only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub kind: FieldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub time_rate: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl FieldConfig {
    pub fn constant(value: f64) -> Self {
        FieldConfig {
            kind: FieldKind::Constant,
            value: Some(value),
            amplitude: None,
            mode: None,
            offset: None,
            from: None,
            to: None,
            values: None,
            file: None,
            time_rate: 0.0,
        }
    }

    pub fn sine(amplitude: f64, mode: u32) -> Self {
        FieldConfig {
            kind: FieldKind::Sine,
            amplitude: Some(amplitude),
            mode: Some(mode),
            value: None,
            ..Self::constant(0.0)
        }
    }

    fn validate(&self, name: &str, errors: &mut Vec<String>) {
        let allowed: &[&str] = match self.kind {
            FieldKind::Constant => &["value"],
            FieldKind::Sine => &["amplitude", "mode", "offset"],
            FieldKind::Ramp => &["from", "to"],
            FieldKind::Grid => &["values", "file"],
        };
        let present = [
            ("value", self.value.is_some()),
            ("amplitude", self.amplitude.is_some()),
            ("mode", self.mode.is_some()),
            ("offset", self.offset.is_some()),
            ("from", self.from.is_some()),
            ("to", self.to.is_some()),
            ("values", self.values.is_some()),
            ("file", self.file.is_some()),
        ];
        for (key, set) in present {
            if set && !allowed.contains(&key) {
                errors.push(format!("{name}: key `{key}` does not apply to kind {:?}", self.kind));
            }
        }
        let finite = |key: &str, v: Option<f64>, errors: &mut Vec<String>| {
            if v.is_some_and(|v| !v.is_finite()) {
                errors.push(format!("{name}: {key} must be finite"));
            }
        };
        finite("value", self.value, errors);
        finite("amplitude", self.amplitude, errors);
        finite("offset", self.offset, errors);
        finite("from", self.from, errors);
        finite("to", self.to, errors);
        finite("time_rate", Some(self.time_rate), errors);
        match self.kind {
            FieldKind::Constant if self.value.is_none() => errors.push(format!("{name}: constant needs `value`")),
            FieldKind::Sine if self.amplitude.is_none() => errors.push(format!("{name}: sine needs `amplitude`")),
            FieldKind::Sine if self.mode == Some(0) => errors.push(format!("{name}: sine mode must be at least 1")),
            FieldKind::Ramp if self.from.is_none() || self.to.is_none() => {
                errors.push(format!("{name}: ramp needs `from` and `to`"))
            }
            FieldKind::Grid if self.values.is_some() == self.file.is_some() => {
                errors.push(format!("{name}: grid needs exactly one of `values` or `file`"))
            }
            _ => {}
        }
    }

    /// Nodal profile at `t = 0`; grid files resolve relative to `base`.
    pub fn profile(&self, mesh: &Mesh, base: &Path) -> Result<Field> {
        let field = match self.kind {
            FieldKind::Constant => {
                let v = self.value.unwrap_or(0.0);
                mesh.field_from_fn(|_| v)
            }
            FieldKind::Sine => {
                let (a, k, c) = (
                    self.amplitude.unwrap_or(0.0),
                    self.mode.unwrap_or(1),
                    self.offset.unwrap_or(0.0),
                );
                mesh.field_from_fn(|x| c + a * (k as f64 * std::f64::consts::PI * x).sin())
            }
            FieldKind::Ramp => {
                let (a, b) = (self.from.unwrap_or(0.0), self.to.unwrap_or(0.0));
                mesh.field_from_fn(|x| a + (b - a) * x)
            }
            FieldKind::Grid => {
                let values = match (&self.values, &self.file) {
                    (Some(v), _) => v.clone(),
                    (None, Some(f)) => read_grid_file(&base.join(f))?,
                    (None, None) => return Err(Error::ConfigInvalid(vec!["grid needs values".into()])),
                };
                mesh.check(&values)?;
                Field::new(values)
            }
        };
        if !field.is_finite() {
            return Err(Error::ConfigInvalid(vec!["field values must be finite".into()]));
        }
        Ok(field)
    }

    fn at(&self, profile: &Field, t: f64) -> Field {
        profile.iter().map(|v| v + self.time_rate * t).collect()
    }
}

fn read_grid_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::ConfigInvalid(vec![format!("{}: `{tok}` is not a number", path.display())]))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Explicit ε-schedule; when absent, `eps_max · eps_factor^k ≥ eps_min`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_schedule: Option<Vec<f64>>,
    pub eps_max: f64,
    pub eps_min: f64,
    pub eps_factor: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub cauchy_tol: f64,
    /// Fixed ε for noisy paths (defaults to the smallest scheduled ε).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path_eps: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps_schedule: None,
            eps_max: 1e-1,
            eps_min: 1e-5,
            eps_factor: 0.25,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            cauchy_tol: 1e-3,
            path_eps: None,
        }
    }
}

impl SolverConfig {
    fn schedule(&self) -> Vec<f64> {
        self.eps_schedule
            .clone()
            .unwrap_or_else(|| geometric_schedule(self.eps_max, self.eps_min, self.eps_factor))
    }

    fn validate(&self, errors: &mut Vec<String>) {
        match &self.eps_schedule {
            Some(s) => {
                if s.is_empty() {
                    errors.push("solver: eps_schedule must not be empty".into());
                }
                if s.iter().any(|e| !(*e > 0.0)) {
                    errors.push("solver: eps_schedule entries must be positive".into());
                }
                if s.windows(2).any(|w| !(w[1] < w[0])) {
                    errors.push("solver: eps_schedule must be strictly decreasing".into());
                }
            }
            None => {
                if !(self.eps_max > 0.0 && self.eps_min > 0.0 && self.eps_min <= self.eps_max) {
                    errors.push("solver: need 0 < eps_min <= eps_max".into());
                }
                if !(self.eps_factor > 0.0 && self.eps_factor < 1.0) {
                    errors.push("solver: eps_factor must lie in (0, 1)".into());
                }
            }
        }
        if !(self.newton_tol > 0.0) {
            errors.push("solver: newton_tol must be positive".into());
        }
        if self.newton_max_iter == 0 {
            errors.push("solver: newton_max_iter must be at least 1".into());
        }
        if !(self.cauchy_tol > 0.0) {
            errors.push("solver: cauchy_tol must be positive".into());
        }
        if self.path_eps.is_some_and(|e| !(e > 0.0)) {
            errors.push("solver: path_eps must be positive".into());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Terminal mean above `threshold`, or above the free terminal mean plus `excess`.
    MeanAbove,
    /// Terminal ball of `radius` around `center_scale` × the free terminal state.
    Ball,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excess: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_scale: Option<f64>,
}

impl Default for EventConfig {
    fn default() -> Self {
        EventConfig {
            kind: EventKind::MeanAbove,
            threshold: None,
            excess: Some(0.02),
            radius: None,
            center_scale: None,
        }
    }
}

impl EventConfig {
    fn validate(&self, errors: &mut Vec<String>) {
        match self.kind {
            EventKind::MeanAbove => {
                if self.threshold.is_some() == self.excess.is_some() {
                    errors.push("task.event: mean_above needs exactly one of `threshold` or `excess`".into());
                }
                if self.radius.is_some() || self.center_scale.is_some() {
                    errors.push("task.event: `radius`/`center_scale` apply to balls only".into());
                }
            }
            EventKind::Ball => {
                if !self.radius.is_some_and(|r| r > 0.0 && r.is_finite()) {
                    errors.push("task.event: ball radius must be positive".into());
                }
                if self.threshold.is_some() || self.excess.is_some() {
                    errors.push("task.event: `threshold`/`excess` apply to mean_above only".into());
                }
            }
        }
    }

    /// Resolves the event against the free (zero-control) terminal state.
    pub fn build(&self, spec: &ProblemSpec, free_terminal: &Field) -> Result<EventSpec> {
        match self.kind {
            EventKind::MeanAbove => {
                let threshold = match (self.threshold, self.excess) {
                    (Some(t), _) => t,
                    (None, Some(e)) => spec.mesh.h() * free_terminal.iter().sum::<f64>() + e,
                    (None, None) => return Err(Error::param("mean_above needs a threshold")),
                };
                EventSpec::terminal_mean_above(threshold)
            }
            EventKind::Ball => EventSpec::terminal_ball(
                free_terminal.scale(self.center_scale.unwrap_or(1.0)),
                self.radius.unwrap_or(0.0),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// Random trials per operator property.
    pub trials: usize,
    /// Noise level for `simulate`.
    pub delta: f64,
    pub n_paths: usize,
    /// Strictly decreasing noise levels for sweeps.
    pub deltas: Vec<f64>,
    /// Constant control `control_value` on mode `control_mode` (0-based).
    pub control_mode: usize,
    pub control_value: f64,
    /// Radius `N` of the control ball.
    pub control_radius: f64,
    pub oscillations: Vec<usize>,
    pub amplitude: f64,
    pub event: EventConfig,
    pub rate_blocks: usize,
    pub rate_modes: usize,
    pub rate_max_iter: usize,
    pub brute_blocks: usize,
    pub brute_modes: usize,
    pub brute_points: usize,
    pub brute_range: f64,
    pub importance_sampling: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            trials: 100,
            delta: 0.25,
            n_paths: 1000,
            deltas: vec![0.5, 0.25, 0.125],
            control_mode: 0,
            control_value: 0.5,
            control_radius: 1.0,
            oscillations: vec![2, 8, 32],
            amplitude: 1.0,
            event: EventConfig::default(),
            rate_blocks: 10,
            rate_modes: 4,
            rate_max_iter: 60,
            brute_blocks: 2,
            brute_modes: 2,
            brute_points: 9,
            brute_range: 3.0,
            importance_sampling: true,
        }
    }
}

impl TaskConfig {
    fn validate(&self, modes: usize, errors: &mut Vec<String>) {
        if self.trials == 0 {
            errors.push("task: trials must be at least 1".into());
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            errors.push("task: delta must be non-negative".into());
        }
        if self.n_paths < crate::ldp::MIN_PATHS {
            errors.push(format!("task: n_paths must be at least {}", crate::ldp::MIN_PATHS));
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|d| !(*d > 0.0)) {
            errors.push("task: deltas must be non-empty and positive".into());
        }
        if self.deltas.windows(2).any(|w| !(w[1] < w[0])) {
            errors.push("task: deltas must be strictly decreasing".into());
        }
        if self.control_mode >= modes.max(1) {
            errors.push(format!(
                "task: control_mode {} exceeds the {modes} noise modes",
                self.control_mode
            ));
        }
        if !self.control_value.is_finite() {
            errors.push("task: control_value must be finite".into());
        }
        if !(self.control_radius > 0.0) {
            errors.push("task: control_radius must be positive".into());
        }
        if self.oscillations.is_empty() || self.oscillations.contains(&0) {
            errors.push("task: oscillations must be non-empty and positive".into());
        }
        if !self.amplitude.is_finite() {
            errors.push("task: amplitude must be finite".into());
        }
        self.event.validate(errors);
        if self.rate_blocks * self.rate_modes == 0 || self.rate_blocks * self.rate_modes > 40 {
            errors.push("task: rate_blocks × rate_modes must lie in 1..=40".into());
        }
        if self.rate_modes > modes {
            errors.push("task: rate_modes exceeds the noise modes".into());
        }
        if self.brute_modes == 0 || self.brute_modes > 2.min(modes) || self.brute_blocks == 0 {
            errors.push("task: the brute-force grid needs 1..=2 modes and at least one block".into());
        }
        let size = (self.brute_points as f64).powi((self.brute_blocks * self.brute_modes) as i32);
        if self.brute_points == 0 || size > crate::rate::BRUTE_FORCE_LIMIT as f64 {
            errors.push("task: brute-force grid exceeds 10^6 evaluations".into());
        }
        if !(self.brute_range >= 0.0 && self.brute_range.is_finite()) {
            errors.push("task: brute_range must be non-negative".into());
        }
    }
}

impl RunConfig {
    /// Every semantic violation, in a stable order.
    pub fn violations(&self, base: &Path) -> Vec<String> {
        let mut e = Vec::new();
        let p = &self.problem;
        if !(p.p > 1.0 && p.p.is_finite()) {
            e.push(format!("p must exceed 1 (got {})", p.p));
        }
        if !(p.gamma >= 0.0 && p.gamma.is_finite()) {
            e.push("gamma must be non-negative".into());
        }
        if p.n_cells < 4 {
            e.push("n_cells must be at least 4".into());
        }
        if p.modes == 0 || p.modes >= p.n_cells {
            e.push("modes must lie in 1..n_cells".into());
        }
        if !(p.eigen_scale > 0.0 && p.eigen_scale.is_finite()) {
            e.push("eigen_scale must be positive".into());
        }
        if !(p.eigen_decay > 0.0 && p.eigen_decay.is_finite()) {
            e.push("eigen_decay must be positive (eigenvalues strictly decreasing)".into());
        }
        if p.n_steps == 0 {
            e.push("n_steps must be at least 1".into());
        }
        if !(p.horizon > 0.0 && p.horizon.is_finite()) {
            e.push("horizon must be positive".into());
        }
        self.obstacle.validate("obstacle", &mut e);
        self.forcing.validate("forcing", &mut e);
        self.initial.validate("initial", &mut e);
        if self.initial.time_rate != 0.0 {
            e.push("initial: time_rate does not apply".into());
        }
        self.solver.validate(&mut e);
        self.task.validate(p.modes, &mut e);
        if e.is_empty() {
            // Data checks that need the mesh.
            match Mesh::new(p.n_cells) {
                Ok(mesh) => match (self.obstacle.profile(&mesh, base), self.initial.profile(&mesh, base)) {
                    (Ok(psi), Ok(u0)) => {
                        if let Some(i) = (0..u0.len()).find(|&i| u0[i] < psi[i]) {
                            e.push(format!("initial datum lies below the obstacle at node {i}"));
                        }
                    }
                    (a, b) => e.extend([a.err(), b.err()].into_iter().flatten().map(|x| x.to_string())),
                },
                Err(err) => e.push(err.to_string()),
            }
            if let Err(err) = self
                .forcing
                .profile(&Mesh::new(p.n_cells.max(4)).expect("n_cells >= 4"), base)
            {
                e.push(format!("forcing: {err}"));
            }
        }
        e
    }

    pub fn penalty(&self) -> PenaltyConfig {
        let s = &self.solver;
        PenaltyConfig {
            eps_schedule: s.schedule(),
            q_tilde: self.problem.p.min(2.0),
            newton_tol: s.newton_tol,
            newton_max_iter: s.newton_max_iter,
            cauchy_tol: s.cauchy_tol,
        }
    }

    /// Fixed penalization for noisy paths.
    pub fn path_eps(&self) -> f64 {
        self.solver.path_eps.unwrap_or_else(|| self.penalty().final_eps())
    }

    /// Assembles the discrete problem; grid files resolve relative to `base`.
    pub fn problem_spec(&self, base: &Path) -> Result<ProblemSpec> {
        let p = &self.problem;
        let mesh = Mesh::new(p.n_cells)?;
        let q = QSpec::power_decay(&mesh, p.modes, p.eigen_scale, p.eigen_decay)?;
        let dt = p.horizon / p.n_steps as f64;
        let psi0 = self.obstacle.profile(&mesh, base)?;
        let f0 = self.forcing.profile(&mesh, base)?;
        let obstacle: Vec<Field> = (0..=p.n_steps)
            .map(|n| self.obstacle.at(&psi0, n as f64 * dt))
            .collect();
        let forcing: Vec<Field> = (0..p.n_steps).map(|n| self.forcing.at(&f0, n as f64 * dt)).collect();
        let sup_psi = obstacle.iter().map(|f| mesh.l2(f)).fold(0.0, f64::max);
        let diffusion = DiffusionSpec::new(p.gamma, &q, sup_psi)?;
        ProblemSpec::new(
            OperatorSpec::p_laplace(p.p)?,
            diffusion,
            q,
            mesh,
            p.horizon,
            p.n_steps,
            obstacle,
            forcing,
            self.initial.profile(&mesh, base)?,
        )
    }

    /// The constant task control, tagged with its radius.
    pub fn control(&self, spec: &ProblemSpec) -> Result<Control> {
        let t = &self.task;
        Control::constant(spec.n_steps, spec.modes(), t.control_mode, t.control_value)
            .with_radius(t.control_radius, spec.dt())
    }

    pub fn rate_options(&self) -> RateOptions {
        RateOptions {
            basis: ControlBasis {
                blocks: self.task.rate_blocks,
                modes: self.task.rate_modes,
            },
            max_iter: self.task.rate_max_iter,
            ..RateOptions::default()
        }
    }

    pub fn brute_grid(&self) -> BruteGrid {
        BruteGrid {
            basis: ControlBasis {
                blocks: self.task.brute_blocks,
                modes: self.task.brute_modes,
            },
            points: self.task.brute_points,
            range: self.task.brute_range,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigInvalid(vec![e.to_string()]))
    }

    /// `sha256` of the canonical serialization.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Parses and validates a configuration; grid files resolve relative to `base`.
pub fn parse_config_in(text: &str, base: &Path) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::ConfigSyntax {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let violations = cfg.violations(base);
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::ConfigInvalid(violations))
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_in(text, Path::new("."))
}

/// Reads a config file and applies the seed override from the environment.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cfg = parse_config_in(&text, base)?;
    if let Ok(s) = std::env::var(SEED_ENV) {
        cfg.master_seed = s
            .trim()
            .parse()
            .map_err(|_| Error::ConfigInvalid(vec![format!("{SEED_ENV}={s:?} is not an unsigned integer")]))?;
    }
    Ok(cfg)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Record written next to every result set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub master_seed: u64,
    /// Result file name → `sha256` of its contents.
    pub results: BTreeMap<String, String>,
    pub config: String,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Result<Self> {
        Ok(Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: cfg.digest()?,
            master_seed: cfg.master_seed,
            results: BTreeMap::new(),
            config: cfg.to_toml()?,
        })
    }
}

/// Writes `name` under `dir` and records its digest in the manifest.
pub fn write_result(dir: &Path, name: &str, bytes: &[u8], manifest: &mut Manifest) -> Result<()> {
    std::fs::write(dir.join(name), bytes)?;
    manifest.results.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

/// Writes `manifest.json` under `dir`.
pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}

/// The shipped default configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");
