//! Explicit monotone scheme for `u_t + H2(t,x,Laplace u) + H1(t,x,Du) + F = 0`
//! with terminal data `u(T) = G`, marched backward in time.
//!
//! One step reads
//!
//! ```text
//! u^n_i = u^{n+1}_i + dt [ H2(t_{n+1}, x_i, Lap_h u^{n+1}) + H1_LF(D^- u^{n+1}, D^+ u^{n+1}) + F^{n+1}_i ]
//! H1_LF(p-, p+) = H1((p- + p+)/2) + theta sum_k (p+_k - p-_k)/2
//! ```
//!
//! The viscosity term `theta (p+ - p-)/2 = theta dx Lap/2` enters with a
//! plus sign: that is the sign which makes every off-diagonal coefficient
//! nonnegative when `theta >= sup |H1_p|`.

use rayon::prelude::*;

use crate::control::{HamiltonianSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, TimeField, Vector, MAX_DIM};

/// Below this many nodes a time level is updated sequentially.
const PARALLEL_NODES: usize = 2048;

pub const DEFAULT_QUADRATURE_ORDER: usize = 16;

/// Runs `f(node, &mut out[node])` over a level, in parallel on large grids.
pub(crate) fn for_each_node<F>(out: &mut [f64], f: F)
where
    F: Fn(usize, &mut f64) + Sync + Send,
{
    if out.len() >= PARALLEL_NODES {
        out.par_iter_mut().enumerate().for_each(|(i, v)| f(i, v));
    } else {
        out.iter_mut().enumerate().for_each(|(i, v)| f(i, v));
    }
}

/// Lax-Friedrichs constant of the grid, checked against the model.
pub fn lax_friedrichs_constant(model: &ModelSpec, grid: &GridSpec) -> Result<f64> {
    let cfl = grid.cfl();
    let need = model.hamiltonians.drift_sup();
    if cfl.drift_max < need * (1.0 - 1e-12) {
        return Err(Error::invalid(
            "Lax-Friedrichs constant",
            format!(
                "theta = {} is below sup |H1_p| = {need}; the scheme would not be monotone",
                cfl.drift_max
            ),
        ));
    }
    let (_, eta_hi) = model.hamiltonians.eta_range();
    if cfl.diffusion_max < eta_hi * (1.0 - 1e-12) {
        return Err(Error::invalid(
            "GridSpec",
            format!(
                "CFL data assumes diffusion <= {}, the model reaches {eta_hi}",
                cfl.diffusion_max
            ),
        ));
    }
    if model.dim() != grid.dim() {
        return Err(Error::GridMismatch(format!(
            "model has dimension {}, grid has {}",
            model.dim(),
            grid.dim()
        )));
    }
    Ok(cfl.drift_max)
}

fn check_data(grid: &GridSpec, f_path: &TimeField, g_slice: &[f64]) -> Result<()> {
    grid.ensure_same(f_path.grid(), "running cost F")?;
    if g_slice.len() != grid.nodes() {
        return Err(Error::GridMismatch(format!(
            "terminal slice has {} values, grid has {} nodes",
            g_slice.len(),
            grid.nodes()
        )));
    }
    Ok(())
}

/// `H2(s q)/s + H1(s p)/s + theta * sum_k (p+ - p-)/2` at one node; `s = 1`
/// is the plain Hamiltonian part of the scheme.
#[inline]
fn hamiltonian_part(
    h: &HamiltonianSpec,
    grid: &GridSpec,
    theta: f64,
    t: f64,
    v: &[f64],
    node: usize,
    scale: f64,
) -> f64 {
    let x = grid.coords(node);
    let mut pbar = [0.0; MAX_DIM];
    let mut visc = 0.0;
    for (axis, slot) in pbar.iter_mut().enumerate().take(grid.dim()) {
        let (m, p) = grid.one_sided(v, node, axis);
        *slot = scale * 0.5 * (m + p);
        visc += 0.5 * (p - m);
    }
    let q = scale * grid.laplacian(v, node);
    (h.h2(t, &x, q).value + h.h1(t, &x, &pbar).value) / scale + theta * visc
}

fn first_bad(level: &[f64]) -> Option<usize> {
    level.iter().position(|v| !v.is_finite())
}

/// Backward march of the scheme. Level `nt` holds `G`.
pub fn solve_hjb(
    model: &ModelSpec,
    f_path: &TimeField,
    g_slice: &[f64],
    grid: &GridSpec,
) -> Result<TimeField> {
    march(model, f_path, g_slice, grid, 0.0)
}

/// Solves the discounted form obtained from `v = e^{-lambda (T - t)} u`:
///
/// ```text
/// v_t - lambda v + H2_l(t,x,Lap v) + H1_l(t,x,Dv) + e^{-lambda (T-t)} F = 0,
/// H_l(t,x,q) = e^{-lambda (T-t)} H(t,x, e^{lambda (T-t)} q)
/// ```
///
/// with the same stencil. Returns `v`; [`lambda_transform`] maps it back.
pub fn solve_hjb_discounted(
    model: &ModelSpec,
    f_path: &TimeField,
    g_slice: &[f64],
    grid: &GridSpec,
    lambda: f64,
) -> Result<TimeField> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("discount", "lambda must be nonnegative"));
    }
    march(model, f_path, g_slice, grid, lambda)
}

fn march(
    model: &ModelSpec,
    f_path: &TimeField,
    g_slice: &[f64],
    grid: &GridSpec,
    lambda: f64,
) -> Result<TimeField> {
    let theta = lax_friedrichs_constant(model, grid)?;
    check_data(grid, f_path, g_slice)?;
    // the grid constructor already enforced the CFL bound, but a grid built
    // for other CFL data could still slip through
    if grid.dt() > grid.dt_max() * (1.0 + 1e-12) {
        return Err(Error::Cfl {
            dt: grid.dt(),
            dt_max: grid.dt_max(),
            min_nt: GridSpec::min_nt_for(
                grid.dim(),
                grid.box_length(),
                grid.nx(),
                grid.horizon(),
                &grid.cfl(),
            ),
        });
    }
    let h = &model.hamiltonians;
    let nt = grid.nt();
    let dt = grid.dt();
    let horizon = grid.horizon();
    let mut u = TimeField::zeros(grid);
    u.level_mut(nt).copy_from_slice(g_slice);
    if let Some(node) = first_bad(g_slice) {
        return Err(Error::NonFinite { level: nt, node });
    }
    let nodes = grid.nodes();
    for n in (0..nt).rev() {
        let t = grid.time(n + 1);
        let scale = (lambda * (horizon - t)).exp();
        let (lo, hi) = u.values_mut().split_at_mut((n + 1) * nodes);
        let next = &hi[..nodes];
        let cur = &mut lo[n * nodes..];
        let f = f_path.level(n + 1);
        for_each_node(cur, |i, out| {
            let rhs = hamiltonian_part(h, grid, theta, t, next, i, scale) + f[i] / scale
                - lambda * next[i];
            *out = next[i] + dt * rhs;
        });
        if let Some(node) = first_bad(cur) {
            return Err(Error::NonFinite { level: n, node });
        }
    }
    Ok(u)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformDirection {
    /// `v = e^{-lambda (T - t)} u`
    Forward,
    /// `u = e^{lambda (T - t)} v`
    Inverse,
}

pub fn lambda_transform(u: &TimeField, lambda: f64, direction: TransformDirection) -> TimeField {
    let grid = u.grid();
    let horizon = grid.horizon();
    let sign = match direction {
        TransformDirection::Forward => -1.0,
        TransformDirection::Inverse => 1.0,
    };
    let mut out = u.clone();
    for n in 0..grid.levels() {
        let factor = (sign * lambda * (horizon - grid.time(n))).exp();
        out.level_mut(n).iter_mut().for_each(|v| *v *= factor);
    }
    out
}

/// `r^n = (u^{n+1} - u^n)/dt + H2 + H1_LF + F^{n+1}` for `n < nt`; level
/// `nt` is zero.
pub fn hjb_residual(u: &TimeField, model: &ModelSpec, f_path: &TimeField) -> Result<TimeField> {
    let grid = u.grid();
    grid.ensure_same(f_path.grid(), "residual: u vs F")?;
    let theta = lax_friedrichs_constant(model, grid)?;
    let h = &model.hamiltonians;
    let dt = grid.dt();
    let mut r = TimeField::zeros(grid);
    for n in 0..grid.nt() {
        let t = grid.time(n + 1);
        let next = u.level(n + 1);
        let cur = u.level(n);
        let f = f_path.level(n + 1);
        for_each_node(r.level_mut(n), |i, out| {
            *out = (next[i] - cur[i]) / dt
                + hamiltonian_part(h, grid, theta, t, next, i, 1.0)
                + f[i];
        });
    }
    Ok(r)
}

/// Worst scheme coefficients `d u^n_i / d u^{n+1}_j` over all steps, with
/// argmins frozen at the values the step used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonotonicityCertificate {
    pub min_off_diagonal: f64,
    pub min_diagonal: f64,
    pub max_diagonal: f64,
}

impl MonotonicityCertificate {
    pub fn holds(&self) -> bool {
        self.min_off_diagonal >= 0.0 && self.min_diagonal >= 0.0 && self.max_diagonal <= 1.0
    }
}

pub fn monotonicity_certificate(u: &TimeField, model: &ModelSpec) -> Result<MonotonicityCertificate> {
    let grid = u.grid();
    let theta = lax_friedrichs_constant(model, grid)?;
    let h = &model.hamiltonians;
    let (dt, dx) = (grid.dt(), grid.dx());
    let d = grid.dim();
    let mut cert = MonotonicityCertificate {
        min_off_diagonal: f64::INFINITY,
        min_diagonal: f64::INFINITY,
        max_diagonal: f64::NEG_INFINITY,
    };
    for n in 0..grid.nt() {
        let t = grid.time(n + 1);
        let v = u.level(n + 1);
        for i in 0..grid.nodes() {
            let x = grid.coords(i);
            let eta = h.h2(t, &x, grid.laplacian(v, i)).derivative;
            let alpha = h.h1(t, &x, &grid.centered_gradient(v, i)).derivative;
            for a in alpha.iter().take(d) {
                let base = eta / (dx * dx) + theta / (2.0 * dx);
                let lo = dt * (base - a.abs() / (2.0 * dx));
                cert.min_off_diagonal = cert.min_off_diagonal.min(lo);
            }
            let diag = 1.0 - dt * d as f64 * (2.0 * eta / (dx * dx) + theta / dx);
            cert.min_diagonal = cert.min_diagonal.min(diag);
            cert.max_diagonal = cert.max_diagonal.max(diag);
        }
    }
    Ok(cert)
}

/// `||G||_inf + T (sup|H2(.,.,0)| + sup|H1(.,.,0)| + ||F||_inf)`, the
/// barrier bound for the scheme's output.
pub fn linf_barrier(model: &ModelSpec, f_path: &TimeField, g_slice: &[f64]) -> f64 {
    let grid = f_path.grid();
    let h = &model.hamiltonians;
    let g = g_slice.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut h0 = 0.0f64;
    for n in 0..grid.levels() {
        let t = grid.time(n);
        for i in 0..grid.nodes() {
            let x = grid.coords(i);
            let v = h.h2(t, &x, 0.0).value.abs() + h.h1(t, &x, &[0.0; MAX_DIM]).value.abs();
            h0 = h0.max(v);
        }
    }
    g + grid.horizon() * (h0 + f_path.max_abs())
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order.max(1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        // Newton on P_n starting from the Chebyshev-like guess
        let mut z = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let step = pn / dp;
            z -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[k] = 0.5 * (1.0 - z);
        weights[k] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (nodes, weights)
}

/// Coefficients of the linear equation satisfied by `u`:
/// `V Lap u + Z . Du + c = H2(Lap u) + H1(Du)` with
/// `V = int_0^1 H2_q(s Lap u) ds`, `Z = int_0^1 H1_p(s Du) ds`,
/// `c = H2(0) + H1(0)`. `Du` is the centred gradient.
#[derive(Clone, Debug)]
pub struct LinearizedCoefficients {
    pub v: TimeField,
    /// One field per axis.
    pub z: Vec<TimeField>,
    pub c: TimeField,
}

impl LinearizedCoefficients {
    /// Largest `|V Lap u + Z . Du + c - H2 - H1|` over the lattice.
    pub fn identity_residual(&self, u: &TimeField, model: &ModelSpec) -> f64 {
        let grid = u.grid();
        let h = &model.hamiltonians;
        let mut worst = 0.0f64;
        for n in 0..grid.levels() {
            let t = grid.time(n);
            let lvl = u.level(n);
            for i in 0..grid.nodes() {
                let x = grid.coords(i);
                let q = grid.laplacian(lvl, i);
                let p = grid.centered_gradient(lvl, i);
                let lin = self.v.get(n, i) * q
                    + (0..grid.dim()).map(|k| self.z[k].get(n, i) * p[k]).sum::<f64>()
                    + self.c.get(n, i);
                let exact = h.h2(t, &x, q).value + h.h1(t, &x, &p).value;
                worst = worst.max((lin - exact).abs());
            }
        }
        worst
    }
}

/// Composite Gauss-Legendre over `[0, 1]` split at `breaks`.
fn ray_integral(breaks: &mut Vec<f64>, gl: &(Vec<f64>, Vec<f64>), mut f: impl FnMut(f64) -> f64) -> f64 {
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut total = 0.0;
    let mut a = 0.0;
    for b in breaks.iter().copied().chain(std::iter::once(1.0)) {
        if b > a {
            let w = b - a;
            total += w * gl.0.iter().zip(&gl.1).map(|(s, wk)| wk * f(a + w * s)).sum::<f64>();
            a = b;
        }
    }
    total
}

pub fn linearize(u: &TimeField, model: &ModelSpec, order: usize) -> Result<LinearizedCoefficients> {
    if order == 0 {
        return Err(Error::invalid("quadrature order", "must be at least 1"));
    }
    if let Some((level, node)) = u.first_non_finite() {
        return Err(Error::NonFinite { level, node });
    }
    let grid = u.grid();
    let h = &model.hamiltonians;
    let d = grid.dim();
    let gl = gauss_legendre(order);
    let mut v = TimeField::zeros(grid);
    let mut z = vec![TimeField::zeros(grid); d];
    let mut c = TimeField::zeros(grid);
    let zero: Vector = [0.0; MAX_DIM];
    for n in 0..grid.levels() {
        let t = grid.time(n);
        let lvl = u.level(n);
        for i in 0..grid.nodes() {
            let x = grid.coords(i);
            let q = grid.laplacian(lvl, i);
            let p = grid.centered_gradient(lvl, i);
            let mut br = h.h2_ray_breakpoints(t, &x, q);
            v.set(n, i, ray_integral(&mut br, &gl, |s| h.h2(t, &x, s * q).derivative));
            for (k, zk) in z.iter_mut().enumerate() {
                let mut br = h.h1_ray_breakpoints(t, &x, &p);
                let sp = |s: f64| {
                    let mut y = p;
                    y.iter_mut().for_each(|c| *c *= s);
                    y
                };
                zk.set(n, i, ray_integral(&mut br, &gl, |s| h.h1(t, &x, &sp(s)).derivative[k]));
            }
            c.set(n, i, h.h2(t, &x, 0.0).value + h.h1(t, &x, &zero).value);
        }
    }
    Ok(LinearizedCoefficients { v, z, c })
}
