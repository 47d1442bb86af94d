//! Command-line entry point: every subcommand is a pure function of the
//! configuration and seed, writes its results plus a manifest under `--out`,
//! and maps failures to exit codes (1: invalid input, 2: numerical failure).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{load_config, write_manifest, write_result, Manifest, RunConfig};
use crate::error::{Error, Result};
use crate::ldp::{ldp_sweep, write_sweep_csv, SweepOptions};
use crate::mesh::Trajectory;
use crate::noise::{check_diffusion_growth, check_diffusion_lipschitz, girsanov_shift, sample_wiener, Control};
use crate::operators::check_all;
use crate::rate::{brute_force_rate, minimize_rate, terminal_mean, weak_continuity_probe, EventSpec, RateEstimate};
use crate::report::PropertyReport;
use crate::rng::derive_seed;
use crate::skeleton::{
    check_complementarity, check_lewy_stampacchia, skeleton_map, solve_skeleton, ProblemSpec, ReflectionMeasure,
};
use crate::spde::{
    coupling_experiment, simulate_batch, simulate_controlled, simulate_spde, write_coupling_csv, write_path_summaries,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "obstacle-ldp",
    version,
    about = "Penalized obstacle-problem solvers and large-deviation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Master seed, overriding the config and the environment.
    #[arg(long)]
    seed: Option<u64>,
    /// Validate and print the resolved plan without computing.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Randomized checks of the operator and diffusion assumptions.
    CheckOperator(Common),
    /// Skeleton solve with ε-continuation and reflection certificates.
    SolveSkeleton(Common),
    /// Batch of SPDE paths at the task noise level.
    Simulate(Common),
    /// Rate of the task event: optimizer and brute-force oracle.
    Rate(Common),
    /// Monte-Carlo probability sweep compared against the rate.
    LdpSweep {
        #[command(flatten)]
        common: Common,
        /// Rate estimate (JSON from `rate`); computed when absent.
        #[arg(long)]
        rate: Option<PathBuf>,
    },
    /// Weak-continuity probe of the control-to-state map.
    ProbeWeakContinuity(Common),
    /// Coupling of the controlled SPDE and skeleton over a noise sweep.
    Couple(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::CheckOperator(c)
            | Command::SolveSkeleton(c)
            | Command::Simulate(c)
            | Command::Rate(c)
            | Command::ProbeWeakContinuity(c)
            | Command::Couple(c) => c,
            Command::LdpSweep { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::CheckOperator(_) => "check-operator",
            Command::SolveSkeleton(_) => "solve-skeleton",
            Command::Simulate(_) => "simulate",
            Command::Rate(_) => "rate",
            Command::LdpSweep { .. } => "ldp-sweep",
            Command::ProbeWeakContinuity(_) => "probe-weak-continuity",
            Command::Couple(_) => "couple",
        }
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let name = cli.command.name();
    match execute(&cli.command) {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::Failed(msg)) => {
            eprintln!("{name}: {msg}");
            write_diagnostics(&cli.command.common().out, name, &msg);
            EXIT_NUMERIC
        }
        Err(e) => {
            eprintln!("{name}: {e}");
            if e.is_numerical() {
                write_diagnostics(&cli.command.common().out, name, &e.to_string());
                EXIT_NUMERIC
            } else {
                EXIT_INVALID
            }
        }
    }
}

/// Best effort: the exit code already reports the failure.
fn write_diagnostics(out: &Path, command: &str, error: &str) {
    let diag = serde_json::json!({ "command": command, "error": error });
    if std::fs::create_dir_all(out).is_ok() {
        let _ = std::fs::write(out.join("diagnostics.json"), format!("{diag:#}\n"));
    }
}

enum Outcome {
    Done,
    /// Results were written but a certificate failed.
    Failed(String),
}

struct Context {
    cfg: RunConfig,
    spec: ProblemSpec,
    out: PathBuf,
    manifest: Manifest,
}

impl Context {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_result(&self.out, name, bytes, &mut self.manifest)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn finish(self) -> Result<()> {
        write_manifest(&self.out, &self.manifest)?;
        Ok(())
    }

    fn free_trajectory(&self) -> Result<Trajectory> {
        skeleton_map(
            &self.spec,
            &Control::zeros(self.spec.n_steps, self.spec.modes()),
            &self.cfg.penalty(),
        )
    }

    fn event(&self) -> Result<EventSpec> {
        let free = self.free_trajectory()?;
        self.cfg.task.event.build(&self.spec, free.terminal())
    }
}

fn execute(cmd: &Command) -> Result<Outcome> {
    let common = cmd.common();
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    let base = common.config.parent().unwrap_or(Path::new("."));
    let spec = cfg.problem_spec(base)?;
    if common.jobs == Some(0) {
        return Err(Error::param("--jobs must be at least 1"));
    }
    if common.dry_run {
        print!("{}", plan(cmd, &cfg, &spec, common)?);
        return Ok(Outcome::Done);
    }
    std::fs::create_dir_all(&common.out)?;
    let mut ctx = Context {
        manifest: Manifest::new(cmd.name(), &cfg)?,
        cfg,
        spec,
        out: common.out.clone(),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = common.jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| Error::param(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| dispatch(cmd, &mut ctx))?;
    ctx.finish()?;
    Ok(outcome)
}

fn plan(cmd: &Command, cfg: &RunConfig, spec: &ProblemSpec, common: &Common) -> Result<String> {
    let mut s = String::new();
    let t = &cfg.task;
    let _ = writeln!(s, "command: {}", cmd.name());
    let _ = writeln!(s, "config: {} (sha256 {})", common.config.display(), cfg.digest()?);
    let _ = writeln!(s, "master_seed: {}", cfg.master_seed);
    let _ = writeln!(
        s,
        "problem: p = {}, n_cells = {}, n_steps = {}, horizon = {}, modes = {}",
        spec.operator.p,
        spec.mesh.n_cells(),
        spec.n_steps,
        spec.horizon,
        spec.modes()
    );
    let _ = writeln!(
        s,
        "eps schedule: {:?} (paths at {})",
        cfg.penalty().eps_schedule,
        cfg.path_eps()
    );
    let work = match cmd {
        Command::CheckOperator(_) => format!("{} trials per property", t.trials),
        Command::SolveSkeleton(_) => "one skeleton continuation".into(),
        Command::Simulate(_) => format!("{} paths at delta = {}", t.n_paths, t.delta),
        Command::Rate(_) => format!(
            "optimizer over {} parameters, oracle grid of {} controls",
            t.rate_blocks * t.rate_modes,
            cfg.brute_grid().size().unwrap_or(usize::MAX)
        ),
        Command::LdpSweep { rate, .. } => format!(
            "{} paths at each delta in {:?}, rate from {}",
            t.n_paths,
            t.deltas,
            rate.as_ref()
                .map_or("the optimizer".into(), |p| p.display().to_string())
        ),
        Command::ProbeWeakContinuity(_) => format!("oscillations {:?} at amplitude {}", t.oscillations, t.amplitude),
        Command::Couple(_) => format!("{} paths at each delta in {:?}", t.n_paths, t.deltas),
    };
    let _ = writeln!(s, "work: {work}");
    let _ = writeln!(s, "output: {}", common.out.display());
    Ok(s)
}

fn trajectory_csv(traj: &Trajectory, spec: &ProblemSpec) -> String {
    let mut s = String::from("step,time,node,x,value\n");
    for (n, (t, f)) in traj.times.iter().zip(&traj.fields).enumerate() {
        for (i, v) in f.iter().enumerate() {
            let _ = writeln!(s, "{n},{t},{i},{},{v}", spec.mesh.node(i));
        }
    }
    s
}

fn reflection_csv(rho: &ReflectionMeasure, spec: &ProblemSpec) -> String {
    let mut s = String::from("step,time,node,x,rho\n");
    for (n, f) in rho.values.iter().enumerate() {
        let t = (n + 1) as f64 * spec.dt();
        for (i, v) in f.iter().enumerate() {
            let _ = writeln!(s, "{},{t},{i},{},{v}", n + 1, spec.mesh.node(i));
        }
    }
    s
}

fn failed_properties(reports: &[PropertyReport]) -> Vec<String> {
    reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} ({} failures)", r.property, r.failures))
        .collect()
}

fn dispatch(cmd: &Command, ctx: &mut Context) -> Result<Outcome> {
    let cfg = ctx.cfg.clone();
    let spec = ctx.spec.clone();
    let pcfg = cfg.penalty();
    let t = &cfg.task;
    let seed = cfg.master_seed;
    match cmd {
        Command::CheckOperator(_) => {
            let mut reports = check_all(&spec.operator, &spec.mesh, t.trials, seed)?;
            reports.push(check_diffusion_lipschitz(
                &spec.diffusion,
                &spec.qspec,
                &spec.mesh,
                t.trials,
                derive_seed(seed, 100),
            )?);
            reports.push(check_diffusion_growth(
                &spec.diffusion,
                &spec.qspec,
                &spec.mesh,
                &spec.obstacle[0],
                t.trials,
                derive_seed(seed, 101),
            )?);
            ctx.write_json("operator_report.json", &reports)?;
            let failed = failed_properties(&reports);
            Ok(if failed.is_empty() {
                Outcome::Done
            } else {
                Outcome::Failed(format!("properties failed: {}", failed.join(", ")))
            })
        }
        Command::SolveSkeleton(_) => {
            let c = cfg.control(&spec)?;
            let sol = solve_skeleton(&spec, &c, &pcfg)?;
            let ls = check_lewy_stampacchia(&sol.reflection, &spec.dual_order())?;
            let cc = check_complementarity(&sol.trajectory, &sol.reflection, &spec)?;
            ctx.write("trajectory.csv", trajectory_csv(&sol.trajectory, &spec).as_bytes())?;
            ctx.write("reflection.csv", reflection_csv(&sol.reflection, &spec).as_bytes())?;
            let summary = serde_json::json!({
                "eps": sol.eps,
                "convergence": sol.log,
                "lewy_stampacchia": ls,
                "complementarity": cc,
            });
            ctx.write_json("skeleton.json", &summary)?;
            let failed = failed_properties(&[ls, cc]);
            Ok(if failed.is_empty() {
                Outcome::Done
            } else {
                Outcome::Failed(format!("certificates failed: {}", failed.join(", ")))
            })
        }
        Command::Simulate(_) => {
            let event = ctx.event()?;
            let eps = cfg.path_eps();
            let batch = simulate_batch(
                &spec,
                t.delta,
                t.n_paths,
                seed,
                eps,
                &pcfg,
                |y| terminal_mean(y, &spec),
                |y| event.contains(y, &spec),
            )?;
            let mut csv = Vec::new();
            write_path_summaries(&batch, &mut csv)?;
            ctx.write("paths.csv", &csv)?;
            let hits = batch.successes().filter(|r| r.event).count();
            let summary = serde_json::json!({
                "delta": t.delta,
                "eps": eps,
                "n_paths": t.n_paths,
                "master_seed": seed,
                "failures": batch.failures,
                "event": event,
                "event_hits": hits,
            });
            ctx.write_json("batch.json", &summary)?;
            Ok(Outcome::Done)
        }
        Command::Rate(_) => {
            let event = ctx.event()?;
            let est = minimize_rate(&spec, &event, &cfg.rate_options(), &pcfg)?;
            let oracle = brute_force_rate(&spec, &event, &cfg.brute_grid(), &pcfg)?;
            ctx.write_json("rate.json", &est)?;
            ctx.write_json("oracle.json", &oracle)?;
            ctx.write_json("event.json", &event)?;
            println!(
                "rate {} (oracle {}), converged = {}",
                est.value, oracle.value, est.converged
            );
            Ok(if est.converged {
                Outcome::Done
            } else {
                Outcome::Failed(format!(
                    "optimizer did not reach the event (residual {})",
                    est.constraint_residual
                ))
            })
        }
        Command::LdpSweep { rate, .. } => {
            let event = ctx.event()?;
            let est: RateEstimate = match rate {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
                None => minimize_rate(&spec, &event, &cfg.rate_options(), &pcfg)?,
            };
            est.control.check_shape(spec.n_steps, spec.modes())?;
            let opts = SweepOptions {
                deltas: t.deltas.clone(),
                n_paths: t.n_paths,
                master_seed: seed,
                importance_sampling: t.importance_sampling,
            };
            let sweep = ldp_sweep(&spec, &event, &est, &opts, cfg.path_eps(), &pcfg)?;
            let mut csv = Vec::new();
            write_sweep_csv(&sweep, &mut csv)?;
            ctx.write("sweep.csv", &csv)?;
            ctx.write_json("sweep.json", &sweep)?;
            println!("verdict: {:?} (-I = {})", sweep.verdict, sweep.neg_rate);
            Ok(Outcome::Done)
        }
        Command::ProbeWeakContinuity(_) => {
            let c = cfg.control(&spec)?;
            let report = weak_continuity_probe(&spec, &c, &t.oscillations, t.amplitude, &pcfg)?;
            let mut csv = String::from("oscillation,sup_gap,t_gap,control_energy\n");
            for r in &report.rows {
                let tg = r.t_gap.map_or(String::new(), |g| g.to_string());
                let _ = writeln!(csv, "{},{},{tg},{}", r.oscillation, r.sup_gap, r.control_energy);
            }
            ctx.write("continuity.csv", csv.as_bytes())?;
            ctx.write_json("continuity.json", &report)?;
            println!("gaps decay: {}", report.passed());
            Ok(Outcome::Done)
        }
        Command::Couple(_) => {
            let c = cfg.control(&spec)?;
            let eps = cfg.path_eps();
            let report = coupling_experiment(&spec, &c, &t.deltas, t.n_paths, seed, eps, &pcfg)?;
            // Shifted-measure identity on a few paths: controlled dynamics on W
            // equal plain dynamics on the shifted path.
            let mut identity_gap: f64 = 0.0;
            for (j, &delta) in t.deltas.iter().enumerate() {
                for i in 0..4u64 {
                    let w = sample_wiener(
                        &spec.qspec,
                        spec.n_steps,
                        spec.dt(),
                        derive_seed(seed ^ 0x5eed, 4 * j as u64 + i),
                    )?;
                    let v = simulate_controlled(&spec, delta, &w, Some(&c), eps, &pcfg)?;
                    let shifted = simulate_spde(&spec, delta, &girsanov_shift(&w, &c, delta)?, eps, &pcfg)?;
                    identity_gap = identity_gap.max(v.trajectory.sup_distance(&shifted.trajectory, &spec.mesh)?);
                }
            }
            let mut csv = Vec::new();
            write_coupling_csv(&report, &mut csv)?;
            ctx.write("coupling.csv", &csv)?;
            let summary = serde_json::json!({ "report": report, "shifted_identity_max_gap": identity_gap });
            ctx.write_json("coupling.json", &summary)?;
            println!("coupling slope {} (R² {})", report.slope, report.r_squared);
            Ok(Outcome::Done)
        }
    }
}
