//! Periodic space-time lattice and scalar fields living on it.
//!
//! Space is the torus `[0, L)^d` (d = 1 or 2) with `nx` nodes per axis; node
//! coordinates are `x_i = i * dx`. Time runs over `nt + 1` levels
//! `t_n = n * dt`, `dt = T / nt`. Flat node indices put axis 0 fastest.

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 2;

/// Point or vector in at most [`MAX_DIM`] dimensions; unused trailing
/// components stay zero.
pub type Vector = [f64; MAX_DIM];

/// Bounds entering the explicit-scheme stability condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CflData {
    /// Upper bound of the diffusion coefficient, `lambda2^2 / 2`.
    pub diffusion_max: f64,
    /// Lax-Friedrichs constant, an upper bound of every drift component.
    pub drift_max: f64,
}

impl CflData {
    /// Largest admissible time step for a grid with spacing `dx`:
    /// `dx^2 / (2 d a_max + d theta dx)`.
    pub fn dt_max(&self, dim: usize, dx: f64) -> f64 {
        let d = dim as f64;
        dx * dx / (2.0 * d * self.diffusion_max + d * self.drift_max * dx)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    dim: usize,
    box_length: f64,
    nx: usize,
    nt: usize,
    horizon: f64,
    cfl: CflData,
}

impl GridSpec {
    pub fn new(
        dim: usize,
        box_length: f64,
        nx: usize,
        nt: usize,
        horizon: f64,
        cfl: CflData,
    ) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::invalid("GridSpec", format!("dim must be 1 or 2, got {dim}")));
        }
        if !(box_length > 0.0 && box_length.is_finite()) {
            return Err(Error::invalid("GridSpec", "box length must be positive"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("GridSpec", "horizon must be positive"));
        }
        if nx < 8 {
            return Err(Error::invalid("GridSpec", format!("nx must be at least 8, got {nx}")));
        }
        if nt < 1 {
            return Err(Error::invalid("GridSpec", "nt must be at least 1"));
        }
        if !(cfl.diffusion_max > 0.0 && cfl.drift_max >= 0.0) {
            return Err(Error::invalid("GridSpec", "CFL data must be positive"));
        }
        let dx = box_length / nx as f64;
        let dt = horizon / nt as f64;
        let dt_max = cfl.dt_max(dim, dx);
        if dt > dt_max * (1.0 + 1e-12) {
            return Err(Error::Cfl {
                dt,
                dt_max,
                min_nt: Self::min_nt_for(dim, box_length, nx, horizon, &cfl),
            });
        }
        Ok(Self {
            dim,
            box_length,
            nx,
            nt,
            horizon,
            cfl,
        })
    }

    /// Smallest `nt` satisfying the CFL bound for the given spatial grid.
    pub fn min_nt_for(dim: usize, box_length: f64, nx: usize, horizon: f64, cfl: &CflData) -> usize {
        let dt_max = cfl.dt_max(dim, box_length / nx as f64);
        let mut nt = (horizon / dt_max).ceil().max(1.0) as usize;
        while horizon / (nt as f64) > dt_max * (1.0 + 1e-12) {
            nt += 1;
        }
        nt
    }

    /// Same box and horizon at another resolution.
    pub fn with_resolution(&self, nx: usize, nt: usize) -> Result<Self> {
        Self::new(self.dim, self.box_length, nx, nt, self.horizon, self.cfl)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn box_length(&self) -> f64 {
        self.box_length
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn cfl(&self) -> CflData {
        self.cfl
    }
    pub fn dx(&self) -> f64 {
        self.box_length / self.nx as f64
    }
    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }
    pub fn dt_max(&self) -> f64 {
        self.cfl.dt_max(self.dim, self.dx())
    }
    /// `dx^d`, the quadrature weight of one node.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }
    pub fn nodes(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }
    pub fn levels(&self) -> usize {
        self.nt + 1
    }
    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt()
    }

    /// Identical lattice (CFL data is not compared).
    pub fn same_lattice(&self, other: &GridSpec) -> bool {
        self.dim == other.dim
            && self.nx == other.nx
            && self.nt == other.nt
            && self.box_length == other.box_length
            && self.horizon == other.horizon
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self.same_lattice(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {}^{} x {} levels vs {}^{} x {} levels",
                self.nx,
                self.dim,
                self.levels(),
                other.nx,
                other.dim,
                other.levels()
            )))
        }
    }

    pub fn multi_index(&self, node: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        let mut rest = node;
        for slot in idx.iter_mut().take(self.dim) {
            *slot = rest % self.nx;
            rest /= self.nx;
        }
        idx
    }

    pub fn node_of(&self, idx: [usize; MAX_DIM]) -> usize {
        let mut node = 0;
        for axis in (0..self.dim).rev() {
            node = node * self.nx + idx[axis] % self.nx;
        }
        node
    }

    pub fn coords(&self, node: usize) -> Vector {
        let idx = self.multi_index(node);
        let dx = self.dx();
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = idx[axis] as f64 * dx;
        }
        x
    }

    /// Periodic neighbour of `node` one step along `axis` (`forward` or backward).
    #[inline]
    pub fn neighbor(&self, node: usize, axis: usize, forward: bool) -> usize {
        let stride = self.nx.pow(axis as u32);
        let i = (node / stride) % self.nx;
        let j = if forward {
            if i + 1 == self.nx {
                0
            } else {
                i + 1
            }
        } else if i == 0 {
            self.nx - 1
        } else {
            i - 1
        };
        node - i * stride + j * stride
    }

    /// Backward and forward differences `(D^- v, D^+ v)` along `axis`.
    #[inline]
    pub fn one_sided(&self, v: &[f64], node: usize, axis: usize) -> (f64, f64) {
        let dx = self.dx();
        let c = v[node];
        let minus = (c - v[self.neighbor(node, axis, false)]) / dx;
        let plus = (v[self.neighbor(node, axis, true)] - c) / dx;
        (minus, plus)
    }

    /// Centered 3-point Laplacian summed over axes.
    #[inline]
    pub fn laplacian(&self, v: &[f64], node: usize) -> f64 {
        let dx2 = self.dx() * self.dx();
        let c = v[node];
        (0..self.dim)
            .map(|axis| {
                (v[self.neighbor(node, axis, true)] + v[self.neighbor(node, axis, false)] - 2.0 * c)
                    / dx2
            })
            .sum()
    }

    /// Centered gradient `(D^- v + D^+ v) / 2`.
    #[inline]
    pub fn centered_gradient(&self, v: &[f64], node: usize) -> Vector {
        let mut g = [0.0; MAX_DIM];
        for (axis, slot) in g.iter_mut().enumerate().take(self.dim) {
            let (m, p) = self.one_sided(v, node, axis);
            *slot = 0.5 * (m + p);
        }
        g
    }

    /// Displacement `y - x` under the minimal-image convention.
    pub fn periodic_displacement(&self, from: usize, to: usize) -> Vector {
        let a = self.multi_index(from);
        let b = self.multi_index(to);
        let n = self.nx as i64;
        let mut d = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            let mut k = b[axis] as i64 - a[axis] as i64;
            if k > n / 2 {
                k -= n;
            } else if k < -(n / 2) {
                k += n;
            }
            d[axis] = k as f64 * self.dx();
        }
        d
    }
}

/// Real values over all `(level, node)` pairs of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl TimeField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            values: vec![0.0; grid.levels() * grid.nodes()],
            grid: grid.clone(),
        }
    }

    pub fn constant(grid: &GridSpec, value: f64) -> Self {
        Self {
            values: vec![value; grid.levels() * grid.nodes()],
            grid: grid.clone(),
        }
    }

    /// Samples `f(t, x)` at every lattice point.
    pub fn from_fn(grid: &GridSpec, f: impl Fn(f64, &Vector) -> f64) -> Self {
        let mut field = Self::zeros(grid);
        for n in 0..grid.levels() {
            let t = grid.time(n);
            let level = field.level_mut(n);
            for (i, v) in level.iter_mut().enumerate() {
                *v = f(t, &grid.coords(i));
            }
        }
        field
    }

    /// Repeats one spatial slice at every level.
    pub fn from_slice(grid: &GridSpec, slice: &[f64]) -> Result<Self> {
        if slice.len() != grid.nodes() {
            return Err(Error::GridMismatch(format!(
                "slice has {} values, grid has {} nodes",
                slice.len(),
                grid.nodes()
            )));
        }
        let mut values = Vec::with_capacity(grid.levels() * grid.nodes());
        for _ in 0..grid.levels() {
            values.extend_from_slice(slice);
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn from_values(grid: &GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.levels() * grid.nodes() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.levels() * grid.nodes(),
                values.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn level(&self, n: usize) -> &[f64] {
        let m = self.grid.nodes();
        &self.values[n * m..(n + 1) * m]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        let m = self.grid.nodes();
        &mut self.values[n * m..(n + 1) * m]
    }

    pub fn get(&self, level: usize, node: usize) -> f64 {
        self.values[level * self.grid.nodes() + node]
    }

    pub fn set(&mut self, level: usize, node: usize, value: f64) {
        let m = self.grid.nodes();
        self.values[level * m + node] = value;
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// First non-finite entry as `(level, node)`.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        let m = self.grid.nodes();
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|k| (k / m, k % m))
    }

    pub fn max_abs_diff(&self, other: &TimeField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TimeField {
        TimeField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}
