//! Nonlocal couplings `F(t,x,m) = c_F (rho * m)(x)` and
//! `G(x,m) = g0(x) + c_G (rho * m)(x)`, and the initial density.
//!
//! `rho` is a wrapped Gaussian sampled on the grid and normalised to unit
//! discrete mass. Its circulant matrix has nonnegative eigenvalues, so the
//! couplings are monotone whenever the gain is nonnegative.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Vector};

/// Per-axis weights of a separable periodic kernel on a given grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicKernel {
    dim: usize,
    nx: usize,
    /// `rho(k dx)` for `k = 0..nx`, normalised so `sum_k rho_k dx = 1`.
    weights: Vec<f64>,
    dx: f64,
}

impl PeriodicKernel {
    pub fn gaussian(grid: &GridSpec, width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::invalid("kernel", "width must be positive"));
        }
        let nx = grid.nx();
        let dx = grid.dx();
        let l = grid.box_length();
        let images = (3.0 + 6.0 * width / l).ceil() as i64;
        let mut weights: Vec<f64> = (0..nx)
            .map(|k| {
                let z = k as f64 * dx;
                (-images..=images)
                    .map(|j| {
                        let s = z - j as f64 * l;
                        (-0.5 * s * s / (width * width)).exp()
                    })
                    .sum()
            })
            .collect();
        let mass: f64 = weights.iter().sum::<f64>() * dx;
        weights.iter_mut().for_each(|w| *w /= mass);
        let kernel = Self {
            dim: grid.dim(),
            nx,
            weights,
            dx,
        };
        let min_eig = kernel.min_eigenvalue();
        if min_eig < -1e-12 {
            return Err(Error::invalid(
                "kernel",
                format!("not positive semidefinite on the grid (eigenvalue {min_eig:e})"),
            ));
        }
        Ok(kernel)
    }

    /// Smallest eigenvalue of the 1D circulant `rho_{i-j} dx`.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.nx;
        (0..n)
            .map(|k| {
                (0..n)
                    .map(|j| self.weights[j] * (2.0 * PI * (j * k) as f64 / n as f64).cos())
                    .sum::<f64>()
                    * self.dx
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(rho * m)(x_i) = sum_j rho(x_i - x_j) m_j dx^d`, applied axis by axis.
    pub fn convolve(&self, m: &[f64]) -> Vec<f64> {
        let nx = self.nx;
        let mut cur = m.to_vec();
        let mut next = vec![0.0; m.len()];
        for axis in 0..self.dim {
            let stride = nx.pow(axis as u32);
            for (node, out) in next.iter_mut().enumerate() {
                let i = (node / stride) % nx;
                let base = node - i * stride;
                let mut acc = 0.0;
                for j in 0..nx {
                    let k = (i + nx - j) % nx;
                    acc += self.weights[k] * cur[base + j * stride];
                }
                *out = acc * self.dx;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

/// `gain * (rho_width * m)`; a zero gain switches the coupling off.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelCoupling {
    pub width: f64,
    pub gain: f64,
}

impl KernelCoupling {
    pub fn none() -> Self {
        Self {
            width: 0.25,
            gain: 0.0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.gain != 0.0
    }

    /// The coupling evaluated on one density slice.
    pub fn evaluate(&self, grid: &GridSpec, m: &[f64]) -> Result<Vec<f64>> {
        if !self.is_active() {
            return Ok(vec![0.0; m.len()]);
        }
        let kernel = PeriodicKernel::gaussian(grid, self.width)?;
        Ok(self.evaluate_with(&kernel, m))
    }

    pub fn evaluate_with(&self, kernel: &PeriodicKernel, m: &[f64]) -> Vec<f64> {
        if !self.is_active() {
            return vec![0.0; m.len()];
        }
        let mut out = kernel.convolve(m);
        out.iter_mut().for_each(|v| *v *= self.gain);
        out
    }
}

/// Measure-independent part `g0` of the terminal cost.
#[derive(Clone, Debug, PartialEq)]
pub enum TerminalBase {
    Constant { value: f64 },
    /// `amplitude * sum_axes cos(2 pi k x_a / L)`
    Cosine { amplitude: f64, wavenumber: u32 },
}

impl TerminalBase {
    pub fn eval(&self, x: &Vector, dim: usize, box_length: f64) -> f64 {
        match self {
            TerminalBase::Constant { value } => *value,
            TerminalBase::Cosine {
                amplitude,
                wavenumber,
            } => {
                let k = 2.0 * PI * *wavenumber as f64 / box_length;
                amplitude * x.iter().take(dim).map(|xi| (k * xi).cos()).sum::<f64>()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerminalCost {
    pub base: TerminalBase,
    pub coupling: KernelCoupling,
}

impl TerminalCost {
    pub fn constant(value: f64) -> Self {
        Self {
            base: TerminalBase::Constant { value },
            coupling: KernelCoupling::none(),
        }
    }

    /// `G(x_i, m)` on every node.
    pub fn evaluate(&self, grid: &GridSpec, m: &[f64]) -> Result<Vec<f64>> {
        let coupled = self.coupling.evaluate(grid, m)?;
        Ok((0..grid.nodes())
            .map(|i| self.base.eval(&grid.coords(i), grid.dim(), grid.box_length()) + coupled[i])
            .collect())
    }
}

/// Initial density; every variant is discretised to unit discrete mass.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialDensity {
    Uniform,
    /// Wrapped around the torus via the minimal-image distance. `None`
    /// centres it in the box.
    Gaussian { center: Option<Vector>, std: f64 },
    /// All mass at the node nearest to `center`.
    Dirac { center: Option<Vector> },
}

impl InitialDensity {
    pub fn discretize(&self, grid: &GridSpec) -> Result<Vec<f64>> {
        let n = grid.nodes();
        let vol = grid.cell_volume();
        let half = [0.5 * grid.box_length(); 2];
        let mut m = match self {
            InitialDensity::Uniform => vec![1.0; n],
            InitialDensity::Gaussian { center, std } => {
                if !(*std > 0.0) {
                    return Err(Error::invalid("initial density", "std must be positive"));
                }
                let c = center.unwrap_or(half);
                (0..n)
                    .map(|i| {
                        let x = grid.coords(i);
                        let r2: f64 = (0..grid.dim())
                            .map(|a| {
                                let l = grid.box_length();
                                let d = (x[a] - c[a]).rem_euclid(l);
                                let d = d.min(l - d);
                                d * d
                            })
                            .sum();
                        (-0.5 * r2 / (std * std)).exp()
                    })
                    .collect()
            }
            InitialDensity::Dirac { center } => {
                let c = center.unwrap_or(half);
                let mut idx = [0; 2];
                for a in 0..grid.dim() {
                    idx[a] = ((c[a] / grid.dx()).round() as i64).rem_euclid(grid.nx() as i64)
                        as usize;
                }
                let mut m = vec![0.0; n];
                m[grid.node_of(idx)] = 1.0;
                m
            }
        };
        let mass: f64 = m.iter().sum::<f64>() * vol;
        m.iter_mut().for_each(|v| *v /= mass);
        Ok(m)
    }
}
