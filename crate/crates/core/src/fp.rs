//! Fokker-Planck equation `m_t - Lap(a m) + div(b m) = 0`, discretised as
//! the exact transpose of the upwind generator
//!
//! ```text
//! (L v)_i = a_i Lap_h v_i + sum_k [ b+_ik (v_{i+e_k} - v_i) + b-_ik (v_i - v_{i-e_k}) ] / dx
//! ```
//!
//! with `a = H2_q(Lap_h u)` and `b = H1_p(D_h u)`. Step `n -> n+1` uses the
//! coefficients of level `n+1`, the level the HJB step `n+1 -> n` reads, so
//! that the dual march below is the linearisation of the HJB scheme.

use crate::control::ModelSpec;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, TimeField};
use crate::hjb::for_each_node;

/// Undershoot tolerated before a density is declared negative.
pub const NEGATIVE_TOLERANCE: f64 = 1e-14;
/// Allowed mass drift over a run.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct TransportOperator {
    grid: GridSpec,
    /// Diffusion coefficient `a = H2_q`.
    pub a: TimeField,
    /// Drift `b = H1_p`, one field per axis.
    pub b: Vec<TimeField>,
}

pub fn build_transport_operator(u: &TimeField, model: &ModelSpec) -> Result<TransportOperator> {
    let grid = u.grid();
    if let Some((level, node)) = u.first_non_finite() {
        return Err(Error::NonFinite { level, node });
    }
    if model.dim() != grid.dim() {
        return Err(Error::GridMismatch("model and grid dimensions differ".into()));
    }
    let h = &model.hamiltonians;
    let (lo, hi) = (model.bounds.eta_min(), model.bounds.eta_max());
    let mut a = TimeField::zeros(grid);
    let mut b = vec![TimeField::zeros(grid); grid.dim()];
    for n in 0..grid.levels() {
        let t = grid.time(n);
        let lvl = u.level(n);
        for i in 0..grid.nodes() {
            let x = grid.coords(i);
            let eta = h.h2(t, &x, grid.laplacian(lvl, i)).derivative;
            if !(eta >= lo * (1.0 - 1e-12) && eta <= hi * (1.0 + 1e-12)) {
                return Err(Error::Consistency(format!(
                    "H2_q = {eta} outside [{lo}, {hi}] at level {n}, node {i}"
                )));
            }
            a.set(n, i, eta);
            let alpha = h.h1(t, &x, &grid.centered_gradient(lvl, i)).derivative;
            for (k, bk) in b.iter_mut().enumerate() {
                bk.set(n, i, alpha[k]);
            }
        }
    }
    Ok(TransportOperator {
        grid: grid.clone(),
        a,
        b,
    })
}

impl TransportOperator {
    /// Operator with prescribed coefficient fields.
    pub fn from_coefficients(a: TimeField, b: Vec<TimeField>) -> Result<Self> {
        let grid = a.grid().clone();
        if b.len() != grid.dim() {
            return Err(Error::GridMismatch(format!(
                "{} drift fields for a {}-dimensional grid",
                b.len(),
                grid.dim()
            )));
        }
        for bk in &b {
            grid.ensure_same(bk.grid(), "drift field")?;
        }
        if a.values().iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("TransportOperator", "diffusion must be finite and nonnegative"));
        }
        if b.iter().any(|bk| bk.first_non_finite().is_some()) {
            return Err(Error::invalid("TransportOperator", "drift must be finite"));
        }
        Ok(Self { grid, a, b })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Largest `dt (2 sum_k a / dx^2 + sum_k |b_k| / dx)`; the explicit steps
    /// keep nonnegative weights iff this is at most 1.
    pub fn stability_number(&self) -> f64 {
        let g = &self.grid;
        let (dt, dx) = (g.dt(), g.dx());
        let d = g.dim() as f64;
        (0..g.levels() * g.nodes())
            .map(|k| {
                let drift: f64 = self.b.iter().map(|bk| bk.values()[k].abs()).sum();
                dt * (2.0 * d * self.a.values()[k] / (dx * dx) + drift / dx)
            })
            .fold(0.0, f64::max)
    }

    fn check_stability(&self) -> Result<()> {
        let s = self.stability_number();
        if s > 1.0 + 1e-12 {
            let g = &self.grid;
            let min_nt = (g.nt() as f64 * s).ceil() as usize;
            return Err(Error::Cfl {
                dt: g.dt(),
                dt_max: g.dt() / s,
                min_nt,
            });
        }
        Ok(())
    }

    /// `(L_level v)_i` at one node.
    #[inline]
    fn generator_at(&self, level: usize, v: &[f64], i: usize) -> f64 {
        let g = &self.grid;
        let mut out = self.a.get(level, i) * g.laplacian(v, i);
        for (k, bk) in self.b.iter().enumerate() {
            let b = bk.get(level, i);
            let (m, p) = g.one_sided(v, i, k);
            out += b.max(0.0) * p + b.min(0.0) * m;
        }
        out
    }

    /// `(L_level^T m)_j`, gathered from the neighbours of `j`.
    #[inline]
    fn adjoint_at(&self, level: usize, m: &[f64], j: usize) -> f64 {
        let g = &self.grid;
        let dx = g.dx();
        let dx2 = dx * dx;
        let a = |i: usize| self.a.get(level, i);
        let mut out = 0.0;
        for (k, bk) in self.b.iter().enumerate() {
            let fwd = g.neighbor(j, k, true);
            let bwd = g.neighbor(j, k, false);
            out += (a(fwd) * m[fwd] + a(bwd) * m[bwd] - 2.0 * a(j) * m[j]) / dx2;
            let bj = bk.get(level, j);
            out += (bk.get(level, bwd).max(0.0) * m[bwd]
                - bk.get(level, fwd).min(0.0) * m[fwd]
                - bj.abs() * m[j])
                / dx;
        }
        out
    }

    pub fn apply_generator(&self, level: usize, v: &[f64]) -> Vec<f64> {
        (0..self.grid.nodes()).map(|i| self.generator_at(level, v, i)).collect()
    }

    pub fn apply_adjoint(&self, level: usize, m: &[f64]) -> Vec<f64> {
        (0..self.grid.nodes()).map(|j| self.adjoint_at(level, m, j)).collect()
    }

    /// Backward dual march `phi^n = phi^{n+1} + dt (L_{n+1} phi^{n+1} + psi^{n+1})`.
    pub fn dual_march(&self, phi_t: &[f64], psi: &TimeField) -> Result<TimeField> {
        let g = &self.grid;
        g.ensure_same(psi.grid(), "dual source psi")?;
        if phi_t.len() != g.nodes() {
            return Err(Error::GridMismatch("terminal test function has wrong length".into()));
        }
        let dt = g.dt();
        let nodes = g.nodes();
        let mut phi = TimeField::zeros(g);
        phi.level_mut(g.nt()).copy_from_slice(phi_t);
        for n in (0..g.nt()).rev() {
            let (lo, hi) = phi.values_mut().split_at_mut((n + 1) * nodes);
            let next = &hi[..nodes];
            let src = psi.level(n + 1);
            for_each_node(&mut lo[n * nodes..], |i, out| {
                *out = next[i] + dt * (self.generator_at(n + 1, next, i) + src[i]);
            });
        }
        Ok(phi)
    }
}

/// A density over time with per-level masses.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityPath {
    field: TimeField,
    mass: Vec<f64>,
}

fn level_mass(grid: &GridSpec, m: &[f64]) -> f64 {
    m.iter().sum::<f64>() * grid.cell_volume()
}

impl DensityPath {
    /// Validates nonnegativity and unit mass at every level.
    pub fn new(field: TimeField) -> Result<Self> {
        let grid = field.grid().clone();
        if let Some((level, node)) = field.first_non_finite() {
            return Err(Error::NonFinite { level, node });
        }
        let mut mass = Vec::with_capacity(grid.levels());
        for n in 0..grid.levels() {
            let lvl = field.level(n);
            if let Some((node, &value)) = lvl
                .iter()
                .enumerate()
                .find(|(_, v)| **v < -NEGATIVE_TOLERANCE)
            {
                return Err(Error::NegativeDensity { level: n, node, value });
            }
            let mn = level_mass(&grid, lvl);
            if (mn - 1.0).abs() > 1e-10 {
                return Err(Error::Mass(format!("level {n} carries mass {mn}")));
            }
            mass.push(mn);
        }
        Ok(Self { field, mass })
    }

    /// The same slice at every level.
    pub fn stationary(grid: &GridSpec, slice: &[f64]) -> Result<Self> {
        Self::new(TimeField::from_slice(grid, slice)?)
    }

    pub fn field(&self) -> &TimeField {
        &self.field
    }
    pub fn grid(&self) -> &GridSpec {
        self.field.grid()
    }
    pub fn level(&self, n: usize) -> &[f64] {
        self.field.level(n)
    }
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Largest `|mass_n - mass_0|`.
    pub fn mass_drift(&self) -> f64 {
        self.mass.iter().fold(0.0f64, |a, m| a.max((m - self.mass[0]).abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.field.values().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `(1 - theta) self + theta other`, again a density path.
    pub fn blend(&self, other: &DensityPath, theta: f64) -> Result<DensityPath> {
        self.grid().ensure_same(other.grid(), "blend")?;
        let values = self
            .field
            .values()
            .iter()
            .zip(other.field.values())
            .map(|(a, b)| (1.0 - theta) * a + theta * b)
            .collect();
        DensityPath::new(TimeField::from_values(self.grid(), values)?)
    }

    /// `sup_t sum |x - mean| m dx^d` with minimal-image distances to the
    /// node holding the mean's nearest grid point.
    pub fn first_moment(&self) -> f64 {
        let g = self.grid();
        let vol = g.cell_volume();
        (0..g.levels())
            .map(|n| {
                let m = self.level(n);
                // circular mean per axis picks the centre on the torus
                let mut centre = [0usize; 2];
                for (axis, c) in centre.iter_mut().enumerate().take(g.dim()) {
                    let (mut s, mut co) = (0.0, 0.0);
                    for (i, w) in m.iter().enumerate() {
                        let ang = 2.0 * std::f64::consts::PI * g.coords(i)[axis] / g.box_length();
                        s += w * ang.sin();
                        co += w * ang.cos();
                    }
                    let ang = s.atan2(co).rem_euclid(2.0 * std::f64::consts::PI);
                    *c = ((ang / (2.0 * std::f64::consts::PI) * g.nx() as f64).round() as usize)
                        % g.nx();
                }
                let c = g.node_of(centre);
                m.iter()
                    .enumerate()
                    .map(|(i, w)| {
                        let d = g.periodic_displacement(c, i);
                        w * d.iter().map(|v| v * v).sum::<f64>().sqrt() * vol
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// `sup_t ||m(t)||_p` for `p = 1` and `p = 2`.
    pub fn lp_norms(&self) -> (f64, f64) {
        let g = self.grid();
        let vol = g.cell_volume();
        let mut l1 = 0.0f64;
        let mut l2 = 0.0f64;
        for n in 0..g.levels() {
            let m = self.level(n);
            l1 = l1.max(m.iter().map(|v| v.abs()).sum::<f64>() * vol);
            l2 = l2.max((m.iter().map(|v| v * v).sum::<f64>() * vol).sqrt());
        }
        (l1, l2)
    }
}

/// `m^{n+1} = (I + dt L_{n+1}^T) m^n` from `m0`.
pub fn solve_fp(op: &TransportOperator, m0: &[f64]) -> Result<DensityPath> {
    let g = op.grid().clone();
    if m0.len() != g.nodes() {
        return Err(Error::GridMismatch("initial density has wrong length".into()));
    }
    if let Some((node, &value)) = m0.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeDensity { level: 0, node, value });
    }
    let mass0 = level_mass(&g, m0);
    if (mass0 - 1.0).abs() > 1e-10 {
        return Err(Error::Mass(format!("initial density carries mass {mass0}")));
    }
    op.check_stability()?;
    let dt = g.dt();
    let nodes = g.nodes();
    let mut m = TimeField::zeros(&g);
    m.level_mut(0).copy_from_slice(m0);
    let mut mass = vec![mass0];
    for n in 0..g.nt() {
        let (lo, hi) = m.values_mut().split_at_mut((n + 1) * nodes);
        let prev = &lo[n * nodes..];
        let cur = &mut hi[..nodes];
        for_each_node(cur, |j, out| {
            *out = prev[j] + dt * op.adjoint_at(n + 1, prev, j);
        });
        if let Some(node) = cur.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { level: n + 1, node });
        }
        if let Some((node, &value)) = cur.iter().enumerate().find(|(_, v)| **v < -NEGATIVE_TOLERANCE) {
            return Err(Error::NegativeDensity {
                level: n + 1,
                node,
                value,
            });
        }
        let mn = level_mass(&g, cur);
        if (mn - mass0).abs() > MASS_TOLERANCE {
            return Err(Error::Mass(format!(
                "mass drifted from {mass0} to {mn} at level {}",
                n + 1
            )));
        }
        mass.push(mn);
    }
    Ok(DensityPath { field: m, mass })
}

/// `|sum phi_T m^{nt} + dt sum_{n<nt} sum psi^{n+1} m^n - sum phi^0 m^0| dx^d`
/// with `phi` from [`TransportOperator::dual_march`].
pub fn check_duality(
    m: &DensityPath,
    op: &TransportOperator,
    phi_t: &[f64],
    psi: &TimeField,
) -> Result<f64> {
    let g = op.grid();
    g.ensure_same(m.grid(), "duality: density vs operator")?;
    let phi = op.dual_march(phi_t, psi)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let terminal = dot(phi_t, m.level(g.nt()));
    let source: f64 = (0..g.nt()).map(|n| dot(psi.level(n + 1), m.level(n))).sum::<f64>() * g.dt();
    let initial = dot(phi.level(0), m.level(0));
    Ok((terminal + source - initial).abs() * g.cell_volume())
}
