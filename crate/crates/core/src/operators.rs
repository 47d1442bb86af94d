//! The p-Laplace operator, its certified structural constants, and randomized
//! checkers for the monotonicity/coercivity/growth assumptions.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mesh::{dual_norm_p2, Field, Mesh, Tridiag};
use crate::report::{PropertyReport, Witness};
use crate::rng;

/// Regularization of the flux for `1 < p < 2`.
pub const FLUX_REGULARIZATION: f64 = 1e-8;

/// Constants an operator claims to satisfy; the checkers verify them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedConstants {
    /// Coercivity `α`.
    pub alpha: f64,
    /// Lower-order coercivity shift `λ`.
    pub lambda: f64,
    /// T-monotonicity shift `λ_T`.
    pub lambda_t: f64,
    /// Strong-monotonicity modulus `ᾱ`, when available.
    pub alpha_bar: Option<f64>,
    /// Growth constant `K̄`.
    pub growth: f64,
    pub l1_bound: f64,
    pub g_bound: f64,
}

/// Nonlinear operator `V -> V'` acting on nodal fields.
pub trait Operator: Sync {
    fn name(&self) -> String;
    fn exponent(&self) -> f64;
    fn constants(&self) -> &CertifiedConstants;
    /// Nodal load vector `(A u)_i`, scaled so that `⟨A u, v⟩ = h Σ (A u)_i v_i`.
    fn apply(&self, u: &[f64], mesh: &Mesh) -> Field;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    PLaplace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub p: f64,
    /// Flux regularization `μ` (zero for `p >= 2`).
    pub mu: f64,
    pub constants: CertifiedConstants,
}

impl OperatorSpec {
    /// `-div(|∇u|^{p-2} ∇u)` with `α = K̄ = 1`, `λ = λ_T = 0` and `ᾱ = 2^{2-p}` for `p >= 2`.
    pub fn p_laplace(p: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::param(format!("p must exceed 1, got {p}")));
        }
        Ok(OperatorSpec {
            kind: OperatorKind::PLaplace,
            p,
            mu: if p < 2.0 { FLUX_REGULARIZATION } else { 0.0 },
            constants: CertifiedConstants {
                alpha: 1.0,
                lambda: 0.0,
                lambda_t: 0.0,
                alpha_bar: (p >= 2.0).then(|| 2f64.powf(2.0 - p)),
                growth: 1.0,
                l1_bound: 0.0,
                g_bound: 0.0,
            },
        })
    }

    /// `q̃ = min(2, p)`, the exponent of the penalty.
    pub fn penalty_exponent(&self) -> f64 {
        self.p.min(2.0)
    }

    fn flux(&self, g: f64) -> f64 {
        if self.p == 2.0 {
            g
        } else if self.mu > 0.0 {
            (g * g + self.mu * self.mu).powf(0.5 * (self.p - 2.0)) * g
        } else {
            g.abs().powf(self.p - 2.0) * g
        }
    }

    fn flux_derivative(&self, g: f64) -> f64 {
        if self.p == 2.0 {
            1.0
        } else if self.mu > 0.0 {
            let s = g * g + self.mu * self.mu;
            s.powf(0.5 * (self.p - 4.0)) * ((self.p - 1.0) * g * g + self.mu * self.mu)
        } else {
            (self.p - 1.0) * g.abs().powf(self.p - 2.0)
        }
    }

    /// Jacobian of [`Operator::apply`] at `u`.
    pub fn jacobian(&self, u: &[f64], mesh: &Mesh) -> Tridiag {
        let m = u.len();
        let h2 = mesh.h() * mesh.h();
        let d: Vec<f64> = mesh.gradient(u).into_iter().map(|g| self.flux_derivative(g)).collect();
        let mut t = Tridiag::zeros(m);
        for i in 0..m {
            t.diag[i] = (d[i] + d[i + 1]) / h2;
            t.lower[i] = -d[i] / h2;
            t.upper[i] = -d[i + 1] / h2;
        }
        t
    }
}

impl Operator for OperatorSpec {
    fn name(&self) -> String {
        format!("p-laplace(p={})", self.p)
    }

    fn exponent(&self) -> f64 {
        self.p
    }

    fn constants(&self) -> &CertifiedConstants {
        &self.constants
    }

    fn apply(&self, u: &[f64], mesh: &Mesh) -> Field {
        let q: Vec<f64> = mesh.gradient(u).into_iter().map(|g| self.flux(g)).collect();
        (0..u.len()).map(|i| (q[i] - q[i + 1]) / mesh.h()).collect()
    }
}

/// Checked application of `op`; rejects non-finite input or output.
pub fn apply_operator(op: &dyn Operator, u: &[f64], mesh: &Mesh) -> Result<Field> {
    mesh.check(u)?;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("operator input is not finite".into()));
    }
    let out = op.apply(u, mesh);
    if !out.is_finite() {
        return Err(Error::Numeric("operator output is not finite".into()));
    }
    Ok(out)
}

/// Random trial field: 20% smooth low-mode sine sums, otherwise i.i.d. uniform on [-1, 1].
pub fn random_field<R: Rng>(rng: &mut R, mesh: &Mesh) -> Field {
    if rng.random_bool(0.2) {
        let coeffs: Vec<f64> = (1..=5).map(|k| rng.random_range(-1.0..1.0) / k as f64).collect();
        mesh.field_from_fn(|x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * ((k + 1) as f64 * std::f64::consts::PI * x).sin())
                .sum()
        })
    } else {
        (0..mesh.n_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}

fn positive_part(f: &[f64]) -> Field {
    f.iter().map(|v| v.max(0.0)).collect()
}

fn require_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        Err(Error::param("trials must be at least 1"))
    } else {
        Ok(())
    }
}

/// One trial: `(margin, tolerance, witness fields)`.
type Trial = (f64, f64, Vec<Vec<f64>>);

fn run_trials(
    property: &str,
    trials: usize,
    seed: u64,
    f: impl Fn(&mut rand_chacha::ChaCha8Rng) -> Trial + Sync,
) -> Result<PropertyReport> {
    require_trials(trials)?;
    let outcomes: Vec<Trial> = (0..trials)
        .into_par_iter()
        .map(|t| f(&mut rng::stream(seed, t as u64)))
        .collect();
    let mut report = PropertyReport::new(property);
    for (t, (margin, tol, fields)) in outcomes.into_iter().enumerate() {
        report.record(margin, margin >= -tol, || Witness {
            trial: Some(t),
            location: None,
            margin,
            fields,
        });
    }
    Ok(report)
}

/// `λ_T (w, w⁺)_H + ⟨A v₁ - A v₂, w⁺⟩ >= 0` with `w = v₁ - v₂`.
pub fn check_t_monotonicity(op: &dyn Operator, mesh: &Mesh, trials: usize, seed: u64) -> Result<PropertyReport> {
    let lambda_t = op.constants().lambda_t;
    run_trials("t_monotonicity", trials, seed, |rng| {
        let v1 = random_field(rng, mesh);
        let v2 = random_field(rng, mesh);
        let w = v1.sub(&v2);
        let wp = positive_part(&w);
        let da = op.apply(&v1, mesh).sub(&op.apply(&v2, mesh));
        let shift = lambda_t * mesh.inner(&w, &wp);
        let value = shift + mesh.inner(&da, &wp);
        let scale =
            1f64.max(shift.abs() + mesh.h() * da.iter().zip(wp.iter()).map(|(a, b)| (a * b).abs()).sum::<f64>());
        (value, 1e-10 * scale, vec![v1.into_vec(), v2.into_vec()])
    })
}

/// `λ_T ‖w‖² + ⟨A v₁ - A v₂, w⟩ >= 0`: plain monotonicity of `λ_T I + A`.
pub fn check_monotonicity(op: &dyn Operator, mesh: &Mesh, trials: usize, seed: u64) -> Result<PropertyReport> {
    let lambda_t = op.constants().lambda_t;
    run_trials("monotonicity", trials, seed, |rng| {
        let v1 = random_field(rng, mesh);
        let v2 = random_field(rng, mesh);
        let w = v1.sub(&v2);
        let da = op.apply(&v1, mesh).sub(&op.apply(&v2, mesh));
        let value = lambda_t * mesh.inner(&w, &w) + mesh.inner(&da, &w);
        let scale = 1f64.max(mesh.h() * da.iter().zip(w.iter()).map(|(a, b)| (a * b).abs()).sum::<f64>());
        (value, 1e-10 * scale, vec![v1.into_vec(), v2.into_vec()])
    })
}

/// `⟨A v, v⟩ + λ ‖v‖²_H + l₁ >= α ‖v‖^p_V`.
pub fn check_coercivity(op: &dyn Operator, mesh: &Mesh, trials: usize, seed: u64) -> Result<PropertyReport> {
    let c = op.constants().clone();
    let p = op.exponent();
    run_trials("coercivity", trials, seed, |rng| {
        let v = random_field(rng, mesh);
        let av = op.apply(&v, mesh);
        let lhs = mesh.inner(&av, &v) + c.lambda * mesh.inner(&v, &v) + c.l1_bound;
        let rhs = c.alpha * mesh.grad_p_energy(&v, p);
        let scale = 1f64.max(lhs.abs().max(rhs.abs()));
        (lhs - rhs, 1e-10 * scale, vec![v.into_vec()])
    })
}

/// `‖A v‖_{V'} <= K̄ ‖v‖^{p-1}_V + g`. For `p = 2` the dual norm is computed
/// exactly; otherwise `⟨A v, w⟩ <= rhs ‖w‖_V` is tested on 20 random `w`.
pub fn check_growth(op: &dyn Operator, mesh: &Mesh, trials: usize, seed: u64) -> Result<PropertyReport> {
    let c = op.constants().clone();
    let p = op.exponent();
    run_trials("growth", trials, seed, |rng| {
        let v = random_field(rng, mesh);
        let av = op.apply(&v, mesh);
        let norm_v = mesh.grad_p_energy(&v, p).powf(1.0 / p);
        let bound = c.growth * norm_v.powf(p - 1.0) + c.g_bound;
        let margin = if p == 2.0 {
            bound - dual_norm_p2(&av, mesh).expect("dimensions agree")
        } else {
            (0..20)
                .map(|_| {
                    let w = random_field(rng, mesh);
                    let wv = mesh.grad_p_energy(&w, p).powf(1.0 / p);
                    bound * wv - mesh.inner(&av, &w)
                })
                .fold(f64::INFINITY, f64::min)
        };
        (margin, 1e-10 * 1f64.max(bound), vec![v.into_vec()])
    })
}

/// `⟨A v₁ - A v₂, v₁ - v₂⟩ >= ᾱ ‖v₁ - v₂‖^p_V - λ_T ‖v₁ - v₂‖²_H`; skipped when `ᾱ` is absent.
pub fn check_strong_monotonicity(op: &dyn Operator, mesh: &Mesh, trials: usize, seed: u64) -> Result<PropertyReport> {
    require_trials(trials)?;
    let c = op.constants().clone();
    let Some(alpha_bar) = c.alpha_bar else {
        return Ok(PropertyReport::skipped(
            "strong_monotonicity",
            format!("no strong-monotonicity modulus certified for {}", op.name()),
        ));
    };
    let p = op.exponent();
    run_trials("strong_monotonicity", trials, seed, |rng| {
        let v1 = random_field(rng, mesh);
        let v2 = random_field(rng, mesh);
        let w = v1.sub(&v2);
        let da = op.apply(&v1, mesh).sub(&op.apply(&v2, mesh));
        let lhs = mesh.inner(&da, &w);
        let rhs = alpha_bar * mesh.grad_p_energy(&w, p) - c.lambda_t * mesh.inner(&w, &w);
        let scale = 1f64.max(lhs.abs());
        (lhs - rhs, 1e-10 * scale, vec![v1.into_vec(), v2.into_vec()])
    })
}

/// Continuity of `η ↦ ⟨A(v₁ + η v₂), v⟩`, probed at 10 random `η` per trial
/// with increment `1e-6` and tolerance `1e-3 · max(1, h Σ |(A u)_i v_i|)`.
pub fn check_hemicontinuity(op: &dyn Operator, mesh: &Mesh, trials: usize, seed: u64) -> Result<PropertyReport> {
    run_trials("hemicontinuity", trials, seed, |rng| {
        let v1 = random_field(rng, mesh);
        let v2 = random_field(rng, mesh);
        let v = random_field(rng, mesh);
        // Value of the pairing and the size of its terms, which sets the
        // tolerance even when the pairing itself cancels to near zero.
        let eval = |eta: f64| {
            let arg: Vec<f64> = v1.iter().zip(v2.iter()).map(|(a, b)| a + eta * b).collect();
            let av = op.apply(&arg, mesh);
            let size = mesh.h() * av.iter().zip(v.iter()).map(|(a, b)| (a * b).abs()).sum::<f64>();
            (mesh.inner(&av, &v), size)
        };
        let margin = (0..10)
            .map(|_| {
                let eta = rng.random_range(-1.0..1.0);
                let (a, size) = eval(eta);
                1e-3 * 1f64.max(size) - (eval(eta + 1e-6).0 - a).abs()
            })
            .fold(f64::INFINITY, f64::min);
        (margin, 0.0, vec![v1.into_vec(), v2.into_vec(), v.into_vec()])
    })
}

/// Runs every operator check applicable to `op`.
pub fn check_all(op: &dyn Operator, mesh: &Mesh, trials: usize, seed: u64) -> Result<Vec<PropertyReport>> {
    Ok(vec![
        check_coercivity(op, mesh, trials, seed)?,
        check_t_monotonicity(op, mesh, trials, seed.wrapping_add(1))?,
        check_monotonicity(op, mesh, trials, seed.wrapping_add(2))?,
        check_growth(op, mesh, trials, seed.wrapping_add(3))?,
        check_hemicontinuity(op, mesh, trials, seed.wrapping_add(4))?,
        check_strong_monotonicity(op, mesh, trials, seed.wrapping_add(5))?,
    ])
}

/// Nodal representative of `h = f - ∂ₜψ - A(ψ)` on each time interval, and its parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualOrderData {
    pub h: Vec<Field>,
    pub h_plus: Vec<Field>,
    pub h_minus: Vec<Field>,
}

/// `h_n = f_n - (ψ_{n+1} - ψ_n)/Δt - A(ψ_n)` for `n = 0..N_t`; `obstacle` holds
/// `N_t + 1` time levels and `forcing` holds `N_t` intervals.
pub fn dual_order_decomposition(
    op: &dyn Operator,
    obstacle: &[Field],
    forcing: &[Field],
    dt: f64,
    mesh: &Mesh,
) -> Result<DualOrderData> {
    check_len(forcing.len() + 1, obstacle.len())?;
    if !(dt > 0.0) {
        return Err(Error::param("dt must be positive"));
    }
    let mut h = Vec::with_capacity(forcing.len());
    for (n, f) in forcing.iter().enumerate() {
        mesh.check(f)?;
        mesh.check(&obstacle[n])?;
        let a = op.apply(&obstacle[n], mesh);
        h.push(
            (0..f.len())
                .map(|i| f[i] - (obstacle[n + 1][i] - obstacle[n][i]) / dt - a[i])
                .collect::<Field>(),
        );
    }
    let h_plus = h.iter().map(|f| f.iter().map(|v| v.max(0.0)).collect()).collect();
    let h_minus = h.iter().map(|f| f.iter().map(|v| (-v).max(0.0)).collect()).collect();
    Ok(DualOrderData { h, h_plus, h_minus })
}
