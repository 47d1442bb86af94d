//! Q-Wiener noise on the sine basis, the obstacle-vanishing diffusion
//! `G(u)h₀ = γ (u - ψ) h₀`, controls in Cameron–Martin coordinates and the
//! Girsanov shift.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mesh::{Field, Mesh};
use crate::report::{PropertyReport, Witness};
use crate::{operators, rng};

/// Default eigenvalue scale, `6/π²`, so that `Σ λ_k -> 1` for `λ_k = c k^{-2}`.
pub const DEFAULT_EIGEN_SCALE: f64 = 6.0 / (std::f64::consts::PI * std::f64::consts::PI);

/// Covariance `Q` with eigenpairs `(λ_k, √2 sin(kπx))`, `k = 1..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSpec {
    pub eigenvalues: Vec<f64>,
    pub eigenfields: Vec<Field>,
    pub trace: f64,
}

impl QSpec {
    pub fn new(mesh: &Mesh, eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::param("at least one noise mode is required"));
        }
        if eigenvalues.len() >= mesh.n_cells() {
            return Err(Error::param(format!(
                "{} modes cannot be resolved on {} cells",
                eigenvalues.len(),
                mesh.n_cells()
            )));
        }
        if eigenvalues.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::param("eigenvalues must be positive and finite"));
        }
        if eigenvalues.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::param("eigenvalues must be strictly decreasing"));
        }
        let eigenfields = (1..=eigenvalues.len())
            .map(|k| mesh.field_from_fn(|x| 2f64.sqrt() * (k as f64 * std::f64::consts::PI * x).sin()))
            .collect();
        let trace = eigenvalues.iter().sum();
        Ok(QSpec {
            eigenvalues,
            eigenfields,
            trace,
        })
    }

    /// `λ_k = scale · k^{-decay}`.
    pub fn power_decay(mesh: &Mesh, modes: usize, scale: f64, decay: f64) -> Result<Self> {
        if !(decay > 0.0) {
            return Err(Error::param("eigenvalue decay exponent must be positive"));
        }
        Self::new(mesh, (1..=modes).map(|k| scale * (k as f64).powf(-decay)).collect())
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Σ_k √λ_k c_k e_k`, the H-element for mode coordinates `c`.
    pub fn h_element(&self, coeffs: &[f64]) -> Field {
        let m = self.eigenfields[0].len();
        let mut out = vec![0.0; m];
        for ((e, l), c) in self.eigenfields.iter().zip(&self.eigenvalues).zip(coeffs) {
            let w = l.sqrt() * c;
            for (o, v) in out.iter_mut().zip(e.iter()) {
                *o += w * v;
            }
        }
        Field::new(out)
    }

    /// Largest deviation of the lumped Gram matrix of `{e_k}` from the identity.
    pub fn gram_error(&self, mesh: &Mesh) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, a) in self.eigenfields.iter().enumerate() {
            for (k, b) in self.eigenfields.iter().enumerate() {
                let target = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((mesh.inner(a, b) - target).abs());
            }
        }
        worst
    }
}

/// Control `φ(t_n) = Σ_k a[n][k] √λ_k e_k`: one row of `H₀`-coordinates per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub coefficients: Vec<Vec<f64>>,
    /// Radius `N` of the ball `S_N` this control was certified against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

impl Control {
    pub fn zeros(n_steps: usize, modes: usize) -> Self {
        Control {
            coefficients: vec![vec![0.0; modes]; n_steps],
            radius: None,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let modes = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || modes == 0 {
            return Err(Error::param("control needs at least one step and one mode"));
        }
        for r in &rows {
            check_len(modes, r.len())?;
        }
        Ok(Control {
            coefficients: rows,
            radius: None,
        })
    }

    /// Constant-in-time control `value` on `mode` (0-based).
    pub fn constant(n_steps: usize, modes: usize, mode: usize, value: f64) -> Self {
        let mut c = Self::zeros(n_steps, modes);
        for row in &mut c.coefficients {
            row[mode] = value;
        }
        c
    }

    pub fn n_steps(&self) -> usize {
        self.coefficients.len()
    }

    pub fn modes(&self) -> usize {
        self.coefficients.first().map_or(0, Vec::len)
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.coefficients[n]
    }

    pub fn check_shape(&self, n_steps: usize, modes: usize) -> Result<()> {
        check_len(n_steps, self.n_steps())?;
        check_len(modes, self.modes())
    }

    fn zip_with(&self, other: &Control, f: impl Fn(f64, f64) -> f64) -> Result<Control> {
        other.check_shape(self.n_steps(), self.modes())?;
        Ok(Control {
            coefficients: self
                .coefficients
                .iter()
                .zip(&other.coefficients)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
                .collect(),
            radius: None,
        })
    }

    pub fn add(&self, other: &Control) -> Result<Control> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Control) -> Result<Control> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Control {
        Control {
            coefficients: self
                .coefficients
                .iter()
                .map(|r| r.iter().map(|a| s * a).collect())
                .collect(),
            radius: None,
        }
    }

    /// Tags the control with `S_N` membership; fails if `∫‖φ‖²_{H₀} > N`.
    pub fn with_radius(mut self, radius: f64, dt: f64) -> Result<Control> {
        let norm = h0_norm_sq(&self, dt);
        if norm > radius + 1e-12 {
            return Err(Error::param(format!("control energy {norm} exceeds radius {radius}")));
        }
        self.radius = Some(radius);
        Ok(self)
    }

    /// Radial projection onto `S_N`.
    pub fn project_to_radius(&self, radius: f64, dt: f64) -> Control {
        let norm = h0_norm_sq(self, dt);
        let mut c = if norm > radius {
            self.scale((radius / norm).sqrt())
        } else {
            self.clone()
        };
        c.radius = Some(radius);
        c
    }
}

/// `∫‖φ‖²_{H₀} = Σ_n Δt Σ_k a[n][k]²`.
pub fn h0_norm_sq(c: &Control, dt: f64) -> f64 {
    c.coefficients
        .iter()
        .map(|r| dt * r.iter().map(|a| a * a).sum::<f64>())
        .sum()
}

/// Diffusion `G(u)h₀ = γ (u - ψ) h₀` with certified Lipschitz (`M`) and growth (`L`) constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub gamma: f64,
    pub lipschitz_m: f64,
    pub growth_l: f64,
}

impl DiffusionSpec {
    /// `M = 2γ² tr Q` and `L = 4γ² tr Q · max(1, sup_t ‖ψ(t)‖²_H)`, from `sup|e_k| <= √2`.
    pub fn new(gamma: f64, q: &QSpec, sup_obstacle_h: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::param("gamma must be non-negative"));
        }
        let m = 2.0 * gamma * gamma * q.trace;
        Ok(DiffusionSpec {
            gamma,
            lipschitz_m: m,
            growth_l: 2.0 * m * 1f64.max(sup_obstacle_h * sup_obstacle_h),
        })
    }
}

/// `G(u)φ = γ (u - ψ) Σ_k a_k √λ_k e_k`.
pub fn apply_diffusion_control(d: &DiffusionSpec, q: &QSpec, u: &[f64], psi: &[f64], coeffs: &[f64]) -> Result<Field> {
    check_len(u.len(), psi.len())?;
    check_len(q.modes(), coeffs.len())?;
    let phi = q.h_element(coeffs);
    Ok((0..u.len()).map(|i| d.gamma * (u[i] - psi[i]) * phi[i]).collect())
}

/// `G(max(u, ψ))φ = γ (u - ψ)⁺ φ`, the form used inside the penalized dynamics.
pub(crate) fn modified_diffusion(d: &DiffusionSpec, u: &[f64], psi: &[f64], phi: &[f64]) -> Field {
    (0..u.len())
        .map(|i| d.gamma * (u[i] - psi[i]).max(0.0) * phi[i])
        .collect()
}

/// `‖G(u)‖²_{L₂(H₀,H)} = Σ_k λ_k ‖γ (u - ψ) e_k‖²_H`.
pub fn hs_norm_sq(d: &DiffusionSpec, q: &QSpec, u: &[f64], psi: &[f64], mesh: &Mesh) -> Result<f64> {
    mesh.check(u)?;
    mesh.check(psi)?;
    let diff: Field = u.iter().zip(psi).map(|(a, b)| d.gamma * (a - b)).collect();
    Ok(hs_of(q, &diff, mesh))
}

fn hs_of(q: &QSpec, g: &[f64], mesh: &Mesh) -> f64 {
    q.eigenvalues
        .iter()
        .zip(&q.eigenfields)
        .map(|(l, e)| {
            let prod: Vec<f64> = g.iter().zip(e.iter()).map(|(a, b)| a * b).collect();
            l * mesh.inner(&prod, &prod)
        })
        .sum()
}

/// `‖G(θ) - G(σ)‖²_{L₂} <= M ‖θ - σ‖²_H` on random pairs.
pub fn check_diffusion_lipschitz(
    d: &DiffusionSpec,
    q: &QSpec,
    mesh: &Mesh,
    trials: usize,
    seed: u64,
) -> Result<PropertyReport> {
    if trials == 0 {
        return Err(Error::param("trials must be at least 1"));
    }
    let mut report = PropertyReport::new("diffusion_lipschitz");
    for t in 0..trials {
        let mut r = rng::stream(seed, t as u64);
        let a = operators::random_field(&mut r, mesh);
        let b = operators::random_field(&mut r, mesh);
        let diff: Field = a.iter().zip(b.iter()).map(|(x, y)| d.gamma * (x - y)).collect();
        let lhs = hs_of(q, &diff, mesh);
        let w = a.sub(&b);
        let rhs = d.lipschitz_m * mesh.inner(&w, &w);
        let margin = rhs - lhs;
        report.record(margin, margin >= -1e-12 * rhs.max(1.0), || Witness {
            trial: Some(t),
            location: None,
            margin,
            fields: vec![a.into_vec(), b.into_vec()],
        });
    }
    Ok(report)
}

/// `‖G(u)‖²_{L₂} <= L (1 + ‖u‖²_H)` on random `u` against obstacle `psi`.
pub fn check_diffusion_growth(
    d: &DiffusionSpec,
    q: &QSpec,
    mesh: &Mesh,
    psi: &[f64],
    trials: usize,
    seed: u64,
) -> Result<PropertyReport> {
    if trials == 0 {
        return Err(Error::param("trials must be at least 1"));
    }
    let mut report = PropertyReport::new("diffusion_growth");
    for t in 0..trials {
        let mut r = rng::stream(seed, t as u64);
        let u = operators::random_field(&mut r, mesh);
        let lhs = hs_norm_sq(d, q, &u, psi, mesh)?;
        let rhs = d.growth_l * (1.0 + mesh.inner(&u, &u));
        let margin = rhs - lhs;
        report.record(margin, margin >= -1e-12 * rhs.max(1.0), || Witness {
            trial: Some(t),
            location: None,
            margin,
            fields: vec![u.into_vec()],
        });
    }
    Ok(report)
}

/// Mode increments `ΔW[n][k] ~ N(0, Δt)`, before `√λ_k` scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WienerPath {
    pub seed: u64,
    pub dt: f64,
    pub increments: Vec<Vec<f64>>,
}

impl WienerPath {
    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn modes(&self) -> usize {
        self.increments.first().map_or(0, Vec::len)
    }

    /// H-valued increment `Σ_k √λ_k e_k ΔW[n][k]`.
    pub fn h_increment(&self, q: &QSpec, n: usize) -> Field {
        q.h_element(&self.increments[n])
    }

    pub fn zeros(n_steps: usize, modes: usize, dt: f64) -> Self {
        WienerPath {
            seed: 0,
            dt,
            increments: vec![vec![0.0; modes]; n_steps],
        }
    }

    /// CSV with a `# key=value` header carrying seed and step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# seed={}", self.seed)?;
        writeln!(w, "# dt={}", self.dt)?;
        writeln!(w, "n,k,increment")?;
        for (n, row) in self.increments.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                writeln!(w, "{n},{k},{v}")?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut seed = None;
        let mut dt = None;
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let bad = |line: usize, what: &str| Error::param(format!("wiener csv line {}: {what}", line + 1));
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if let Some(header) = line.strip_prefix('#') {
                let (k, v) = header.trim().split_once('=').ok_or_else(|| bad(ln, "bad header"))?;
                match k.trim() {
                    "seed" => seed = Some(v.trim().parse().map_err(|_| bad(ln, "bad seed"))?),
                    "dt" => dt = Some(v.trim().parse().map_err(|_| bad(ln, "bad dt"))?),
                    _ => return Err(bad(ln, "unknown header key")),
                }
                continue;
            }
            if line.is_empty() || line.starts_with("n,") {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(bad(ln, "expected n,k,increment"));
            }
            let n = parts[0].parse().map_err(|_| bad(ln, "bad n"))?;
            let k = parts[1].parse().map_err(|_| bad(ln, "bad k"))?;
            let v = parts[2].parse().map_err(|_| bad(ln, "bad increment"))?;
            entries.push((n, k, v));
        }
        let n_steps = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
        let modes = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        if n_steps * modes != entries.len() || n_steps == 0 {
            return Err(Error::param("wiener csv does not hold a full (n, k) table"));
        }
        let mut increments = vec![vec![f64::NAN; modes]; n_steps];
        for (n, k, v) in entries {
            increments[n][k] = v;
        }
        if increments.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::param("wiener csv has duplicate or missing entries"));
        }
        Ok(WienerPath {
            seed: seed.ok_or_else(|| Error::param("wiener csv lacks a seed header"))?,
            dt: dt.ok_or_else(|| Error::param("wiener csv lacks a dt header"))?,
            increments,
        })
    }
}

/// I.i.d. `N(0, Δt)` increments for every `(n, k)`, reproducible from `seed`.
pub fn sample_wiener(q: &QSpec, n_steps: usize, dt: f64, seed: u64) -> Result<WienerPath> {
    if n_steps == 0 {
        return Err(Error::param("n_steps must be at least 1"));
    }
    if !(dt > 0.0) {
        return Err(Error::param("dt must be positive"));
    }
    let mut r = rng::stream(seed, 0);
    let sd = dt.sqrt();
    let increments = (0..n_steps)
        .map(|_| {
            (0..q.modes())
                .map(|_| sd * r.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    Ok(WienerPath { seed, dt, increments })
}

/// `W^δ = W + (1/δ) ∫ φ`: `ΔW'[n][k] = ΔW[n][k] + a[n][k] Δt / δ`.
pub fn girsanov_shift(w: &WienerPath, c: &Control, delta: f64) -> Result<WienerPath> {
    if !(delta > 0.0) {
        return Err(Error::param("delta must be positive for the Girsanov shift"));
    }
    c.check_shape(w.n_steps(), w.modes())?;
    let increments = w
        .increments
        .iter()
        .zip(&c.coefficients)
        .map(|(dw, a)| dw.iter().zip(a).map(|(x, y)| x + y * w.dt / delta).collect())
        .collect();
    Ok(WienerPath {
        seed: w.seed,
        dt: w.dt,
        increments,
    })
}

/// `log dP^δ/dP = -(1/δ) Σ a ΔW - (1/2δ²) ∫‖φ‖²_{H₀}`.
pub fn girsanov_log_density(w: &WienerPath, c: &Control, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::param("delta must be positive"));
    }
    c.check_shape(w.n_steps(), w.modes())?;
    let stochastic: f64 = w
        .increments
        .iter()
        .zip(&c.coefficients)
        .map(|(dw, a)| dw.iter().zip(a).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    Ok(-stochastic / delta - h0_norm_sq(c, w.dt) / (2.0 * delta * delta))
}
