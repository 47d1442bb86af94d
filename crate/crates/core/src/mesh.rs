//! Uniform grid on `D = (0, 1)` with homogeneous Dirichlet data.
//!
//! Fields store values at the `n_cells - 1` interior nodes only; boundary
//! values are implicitly zero. Integrals use the lumped (trapezoid) rule with
//! zero boundary values, so a constant `c` integrates to `c * (1 - h)`, and
//! gradients are forward differences on the `n_cells` edges.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    n_cells: usize,
    h: f64,
}

impl Mesh {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < 4 {
            return Err(Error::param(format!("n_cells must be at least 4, got {n_cells}")));
        }
        Ok(Mesh {
            n_cells,
            h: 1.0 / n_cells as f64,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of interior nodes, i.e. the length of every [`Field`].
    pub fn n_nodes(&self) -> usize {
        self.n_cells - 1
    }

    /// Coordinate of interior node `i` (0-based), `x = (i + 1) h`.
    pub fn node(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.h
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(|i| self.node(i))
    }

    pub fn field_from_fn(&self, f: impl Fn(f64) -> f64) -> Field {
        Field(self.nodes().map(f).collect())
    }

    pub fn zeros(&self) -> Field {
        Field(vec![0.0; self.n_nodes()])
    }

    pub fn check(&self, f: &[f64]) -> Result<()> {
        check_len(self.n_nodes(), f.len())
    }

    /// Mass-lumped inner product `h Σ a_i b_i`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.h * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    pub(crate) fn l2(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    /// Edge gradients `(f_j - f_{j-1}) / h`, `j = 0..n_cells`, ghost zeros at both ends.
    pub fn gradient(&self, f: &[f64]) -> Vec<f64> {
        let m = f.len();
        (0..=m)
            .map(|j| {
                let right = if j < m { f[j] } else { 0.0 };
                let left = if j > 0 { f[j - 1] } else { 0.0 };
                (right - left) / self.h
            })
            .collect()
    }

    /// `h Σ_edges |∇f|^p`, the p-th power of [`norm_v`].
    pub(crate) fn grad_p_energy(&self, f: &[f64], p: f64) -> f64 {
        self.h * self.gradient(f).iter().map(|g| g.abs().powf(p)).sum::<f64>()
    }
}

/// Nodal values at the interior nodes of a [`Mesh`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Field(values)
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Field(vec![value; len])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn sub(&self, other: &[f64]) -> Field {
        Field(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &[f64]) -> Field {
        Field(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, c: f64) -> Field {
        Field(self.0.iter().map(|a| c * a).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Field(v)
    }
}

impl FromIterator<f64> for Field {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Field(iter.into_iter().collect())
    }
}

/// Fields on the uniform time grid `t_n = n T / N_t`, `n = 0..=N_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
}

impl Trajectory {
    pub fn new(horizon: f64, fields: Vec<Field>) -> Result<Self> {
        if fields.len() < 2 {
            return Err(Error::param("a trajectory needs at least two time levels"));
        }
        if !(horizon > 0.0) {
            return Err(Error::param("horizon must be positive"));
        }
        let n_steps = fields.len() - 1;
        let times = time_grid(horizon, n_steps);
        Ok(Trajectory { times, fields })
    }

    pub fn n_steps(&self) -> usize {
        self.fields.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn dt(&self) -> f64 {
        self.horizon() / self.n_steps() as f64
    }

    pub fn terminal(&self) -> &Field {
        self.fields.last().unwrap()
    }

    /// `sup_n ‖a_n - b_n‖_H`.
    pub fn sup_distance(&self, other: &Trajectory, mesh: &Mesh) -> Result<f64> {
        check_len(self.fields.len(), other.fields.len())?;
        Ok(self
            .fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| mesh.l2(&a.sub(b)))
            .fold(0.0, f64::max))
    }
}

pub(crate) fn time_grid(horizon: f64, n_steps: usize) -> Vec<f64> {
    let dt = horizon / n_steps as f64;
    let mut t: Vec<f64> = (0..=n_steps).map(|n| n as f64 * dt).collect();
    t[n_steps] = horizon;
    t
}

/// Mass-lumped `L²(D)` norm `(h Σ f_i²)^{1/2}`.
pub fn norm_h(f: &[f64], mesh: &Mesh) -> Result<f64> {
    mesh.check(f)?;
    Ok(mesh.l2(f))
}

/// Discrete `‖∇f‖_{L^p}` over edges with ghost zeros.
pub fn norm_v(f: &[f64], p: f64, mesh: &Mesh) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::param(format!("p must exceed 1, got {p}")));
    }
    mesh.check(f)?;
    Ok(mesh.grad_p_energy(f, p).powf(1.0 / p))
}

/// `(h Σ |f_i|^q)^{1/q}`.
pub fn norm_lq(f: &[f64], q: f64, mesh: &Mesh) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(Error::param(format!("q must be at least 1, got {q}")));
    }
    mesh.check(f)?;
    let s = mesh.h() * f.iter().map(|v| v.abs().powf(q)).sum::<f64>();
    Ok(s.powf(1.0 / q))
}

/// Discrete `H^{-1}` norm: `‖∇w‖_2` where `-w'' = g` with zero Dirichlet data.
pub fn dual_norm_p2(g: &[f64], mesh: &Mesh) -> Result<f64> {
    mesh.check(g)?;
    let m = mesh.n_nodes();
    let h2 = mesh.h() * mesh.h();
    let tri = Tridiag {
        lower: vec![-1.0 / h2; m],
        diag: vec![2.0 / h2; m],
        upper: vec![-1.0 / h2; m],
    };
    let w = tri.solve(g);
    Ok(mesh.grad_p_energy(&w, 2.0).sqrt())
}

/// Tridiagonal matrix; `lower[0]` and `upper[m-1]` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiag {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiag {
    pub fn zeros(m: usize) -> Self {
        Tridiag {
            lower: vec![0.0; m],
            diag: vec![0.0; m],
            upper: vec![0.0; m],
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let m = self.diag.len();
        (0..m)
            .map(|i| {
                let mut y = self.diag[i] * x[i];
                if i > 0 {
                    y += self.lower[i] * x[i - 1];
                }
                if i + 1 < m {
                    y += self.upper[i] * x[i + 1];
                }
                y
            })
            .collect()
    }

    /// Thomas algorithm; stable for the diagonally dominant systems used here.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let m = self.diag.len();
        let mut c = vec![0.0; m];
        let mut d = vec![0.0; m];
        let mut beta = self.diag[0];
        c[0] = self.upper[0] / beta;
        d[0] = rhs[0] / beta;
        for i in 1..m {
            beta = self.diag[i] - self.lower[i] * c[i - 1];
            c[i] = if i + 1 < m { self.upper[i] / beta } else { 0.0 };
            d[i] = (rhs[i] - self.lower[i] * d[i - 1]) / beta;
        }
        let mut x = vec![0.0; m];
        x[m - 1] = d[m - 1];
        for i in (0..m - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        x
    }
}
