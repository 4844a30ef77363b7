//! The control problem: control sets, running costs, and the two
//! Hamiltonians
//!
//! ```text
//! H1(t,x,p) = inf_{alpha in U}  { <p, alpha> + L1(t,x,alpha) }
//! H2(t,x,q) = inf_{eta in S'}   { eta q + L3(t,x,eta) },   S' = [lambda1^2/2, lambda2^2/2]
//! ```
//!
//! `eta = sigma^2 / 2` is the diffusion control and `L3(t,x,eta) = L2(t,x,sqrt(2 eta))`.
//! Both Hamiltonians are infima of affine functions, hence concave in the
//! last variable, and their derivative in that variable is the argmin.

mod coupling;
mod hypotheses;
mod mollify;

use std::fmt;
use std::sync::Arc;

pub use coupling::{InitialDensity, KernelCoupling, PeriodicKernel, TerminalBase, TerminalCost};
pub use hypotheses::{
    samples_from_field, validate_hypotheses, HypothesisCheck, HypothesisReport, HypothesisSample,
};
pub use mollify::{mollify_hamiltonian, Mollified, MOLLIFIER_POINTS};

use crate::error::{Error, Result};
use crate::grid::{CflData, Vector, MAX_DIM};

/// Bounds of the control sets: `lambda1 < Gamma < lambda2` and `|b| <= M`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlBounds {
    lambda1: f64,
    lambda2: f64,
    drift_bound: f64,
}

impl ControlBounds {
    pub fn new(lambda1: f64, lambda2: f64, drift_bound: f64) -> Result<Self> {
        if !(lambda1 > 0.0 && lambda1.is_finite()) {
            return Err(Error::invalid("ControlBounds", "lambda1 must be positive"));
        }
        if !(lambda2 > lambda1 && lambda2.is_finite()) {
            return Err(Error::invalid(
                "ControlBounds",
                format!("require lambda1 < lambda2, got {lambda1} and {lambda2}"),
            ));
        }
        if !(drift_bound >= 0.0 && drift_bound.is_finite()) {
            return Err(Error::invalid("ControlBounds", "drift bound must be nonnegative"));
        }
        Ok(Self {
            lambda1,
            lambda2,
            drift_bound,
        })
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }
    pub fn drift_bound(&self) -> f64 {
        self.drift_bound
    }
    /// Lower end of `S'`, the ellipticity constant.
    pub fn eta_min(&self) -> f64 {
        0.5 * self.lambda1 * self.lambda1
    }
    pub fn eta_max(&self) -> f64 {
        0.5 * self.lambda2 * self.lambda2
    }
}

/// Value, argmin and last-variable derivative of a Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HamiltonianEval<A> {
    pub value: f64,
    pub argmin: A,
    pub derivative: A,
}

pub type DriftCostFn = dyn Fn(f64, &Vector, &Vector) -> f64 + Send + Sync;
pub type DiffusionCostFn = dyn Fn(f64, &Vector, f64) -> f64 + Send + Sync;

/// Running cost `L1(t, x, alpha)` of the drift control.
#[derive(Clone)]
pub enum DriftCost {
    Zero,
    /// `weight * |alpha|^2 / 2`
    Quadratic { weight: f64 },
    Custom(Arc<DriftCostFn>),
}

impl DriftCost {
    pub fn eval(&self, t: f64, x: &Vector, alpha: &Vector) -> f64 {
        match self {
            DriftCost::Zero => 0.0,
            DriftCost::Quadratic { weight } => {
                0.5 * weight * alpha.iter().map(|a| a * a).sum::<f64>()
            }
            DriftCost::Custom(f) => f(t, x, alpha),
        }
    }
}

impl fmt::Debug for DriftCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftCost::Zero => write!(f, "Zero"),
            DriftCost::Quadratic { weight } => write!(f, "Quadratic {{ weight: {weight} }}"),
            DriftCost::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Running cost `L3(t, x, eta)` of the diffusion control.
#[derive(Clone)]
pub enum DiffusionCost {
    Zero,
    /// `weight * (eta - center)^2`
    Quadratic { weight: f64, center: f64 },
    /// `weight * (sigma - center)^2` with `sigma = sqrt(2 eta)`, i.e. a cost
    /// given in terms of the volatility.
    SigmaQuadratic { weight: f64, center: f64 },
    Custom(Arc<DiffusionCostFn>),
}

impl DiffusionCost {
    pub fn eval(&self, t: f64, x: &Vector, eta: f64) -> f64 {
        match self {
            DiffusionCost::Zero => 0.0,
            DiffusionCost::Quadratic { weight, center } => weight * (eta - center).powi(2),
            DiffusionCost::SigmaQuadratic { weight, center } => {
                weight * ((2.0 * eta).sqrt() - center).powi(2)
            }
            DiffusionCost::Custom(f) => f(t, x, eta),
        }
    }
}

impl fmt::Debug for DiffusionCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffusionCost::Zero => write!(f, "Zero"),
            DiffusionCost::Quadratic { weight, center } => {
                write!(f, "Quadratic {{ weight: {weight}, center: {center} }}")
            }
            DiffusionCost::SigmaQuadratic { weight, center } => {
                write!(f, "SigmaQuadratic {{ weight: {weight}, center: {center} }}")
            }
            DiffusionCost::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Box drift controls with quadratic cost and interval diffusion controls
/// with quadratic cost; both Hamiltonians are clamped-linear in closed form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosedForm {
    pub dim: usize,
    /// `U = [-drift_box, drift_box]^d`
    pub drift_box: f64,
    /// `L1 = drift_weight |alpha|^2 / 2`
    pub drift_weight: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    /// `L3 = diffusion_weight (eta - eta_center)^2`
    pub eta_center: f64,
    pub diffusion_weight: f64,
}

impl ClosedForm {
    /// Reference model: d = 1, U = [-1, 1], L1 = alpha^2/2, S' = [0.5, 2],
    /// L3 = (eta - 1)^2.
    pub fn model_a() -> Self {
        Self {
            dim: 1,
            drift_box: 1.0,
            drift_weight: 1.0,
            eta_min: 0.5,
            eta_max: 2.0,
            eta_center: 1.0,
            diffusion_weight: 1.0,
        }
    }

    fn drift_argmin(&self, p: f64) -> f64 {
        (-p / self.drift_weight).clamp(-self.drift_box, self.drift_box)
    }

    fn eta_argmin(&self, q: f64) -> f64 {
        (self.eta_center - q / (2.0 * self.diffusion_weight)).clamp(self.eta_min, self.eta_max)
    }
}

/// Finite control grids searched exhaustively.
#[derive(Clone, Debug)]
pub struct Tabulated {
    pub dim: usize,
    pub drift_controls: Vec<Vector>,
    /// Strictly increasing.
    pub eta_controls: Vec<f64>,
    pub drift_cost: DriftCost,
    pub diffusion_cost: DiffusionCost,
}

#[derive(Clone, Debug)]
pub enum HamiltonianSpec {
    ClosedForm(ClosedForm),
    Tabulated(Tabulated),
    Mollified(Box<Mollified>),
}

impl HamiltonianSpec {
    pub fn model_a() -> Self {
        HamiltonianSpec::ClosedForm(ClosedForm::model_a())
    }

    pub fn closed_form(c: ClosedForm) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&c.dim) {
            return Err(Error::invalid("HamiltonianSpec", "dim must be 1 or 2"));
        }
        if !(c.drift_box >= 0.0 && c.drift_weight > 0.0 && c.diffusion_weight > 0.0) {
            return Err(Error::invalid(
                "HamiltonianSpec",
                "closed form needs drift_box >= 0 and positive cost weights",
            ));
        }
        if !(c.eta_min > 0.0 && c.eta_max > c.eta_min) {
            return Err(Error::invalid("HamiltonianSpec", "need 0 < eta_min < eta_max"));
        }
        Ok(HamiltonianSpec::ClosedForm(c))
    }

    pub fn tabulated(t: Tabulated) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&t.dim) {
            return Err(Error::invalid("HamiltonianSpec", "dim must be 1 or 2"));
        }
        if t.drift_controls.is_empty() {
            return Err(Error::invalid("HamiltonianSpec", "drift control grid is empty"));
        }
        if t.eta_controls.is_empty() {
            return Err(Error::invalid("HamiltonianSpec", "diffusion control grid is empty"));
        }
        if t.eta_controls.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "HamiltonianSpec",
                "diffusion controls must be strictly increasing",
            ));
        }
        let finite = t.eta_controls.iter().all(|e| e.is_finite())
            && t.drift_controls.iter().flatten().all(|a| a.is_finite());
        if !finite {
            return Err(Error::invalid("HamiltonianSpec", "non-finite control value"));
        }
        Ok(HamiltonianSpec::Tabulated(t))
    }

    /// Single drift control `0` with zero cost and single diffusion control
    /// `nu` with zero cost: the HJB equation becomes `u_t + nu Laplace(u) = 0`.
    pub fn single_control(dim: usize, nu: f64) -> Result<Self> {
        Self::tabulated(Tabulated {
            dim,
            drift_controls: vec![[0.0; MAX_DIM]],
            eta_controls: vec![nu],
            drift_cost: DriftCost::Zero,
            diffusion_cost: DiffusionCost::Zero,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            HamiltonianSpec::ClosedForm(c) => c.dim,
            HamiltonianSpec::Tabulated(t) => t.dim,
            HamiltonianSpec::Mollified(m) => m.base.dim(),
        }
    }

    /// Largest component of any admissible drift control; this is the
    /// Lax-Friedrichs constant `sup |H1_p|`.
    pub fn drift_sup(&self) -> f64 {
        match self {
            HamiltonianSpec::ClosedForm(c) => c.drift_box,
            HamiltonianSpec::Tabulated(t) => t
                .drift_controls
                .iter()
                .flat_map(|a| a.iter().take(t.dim))
                .fold(0.0, |acc, a| acc.max(a.abs())),
            HamiltonianSpec::Mollified(m) => m.base.drift_sup(),
        }
    }

    /// Largest Euclidean norm of an admissible drift control.
    pub fn drift_norm_sup(&self) -> f64 {
        match self {
            HamiltonianSpec::ClosedForm(c) => c.drift_box * (c.dim as f64).sqrt(),
            HamiltonianSpec::Tabulated(t) => t
                .drift_controls
                .iter()
                .map(|a| a.iter().map(|v| v * v).sum::<f64>().sqrt())
                .fold(0.0, f64::max),
            HamiltonianSpec::Mollified(m) => m.base.drift_norm_sup(),
        }
    }

    /// Smallest interval containing every possible value of `H2_q`.
    pub fn eta_range(&self) -> (f64, f64) {
        match self {
            HamiltonianSpec::ClosedForm(c) => (c.eta_min, c.eta_max),
            HamiltonianSpec::Tabulated(t) => (t.eta_controls[0], *t.eta_controls.last().unwrap()),
            HamiltonianSpec::Mollified(m) => m.base.eta_range(),
        }
    }

    /// Drift running cost `L1(t, x, alpha)`.
    pub fn drift_cost(&self, t: f64, x: &Vector, alpha: &Vector) -> f64 {
        match self {
            HamiltonianSpec::ClosedForm(c) => {
                0.5 * c.drift_weight * alpha.iter().take(c.dim).map(|a| a * a).sum::<f64>()
            }
            HamiltonianSpec::Tabulated(tab) => tab.drift_cost.eval(t, x, alpha),
            HamiltonianSpec::Mollified(m) => m.base.drift_cost(t, x, alpha),
        }
    }

    /// Diffusion running cost `L3(t, x, eta)`.
    pub fn diffusion_cost(&self, t: f64, x: &Vector, eta: f64) -> f64 {
        match self {
            HamiltonianSpec::ClosedForm(c) => c.diffusion_weight * (eta - c.eta_center).powi(2),
            HamiltonianSpec::Tabulated(tab) => tab.diffusion_cost.eval(t, x, eta),
            HamiltonianSpec::Mollified(m) => m.base.diffusion_cost(t, x, eta),
        }
    }

    /// `H1(t, x, p)` with its argmin; rejects non-finite arguments.
    pub fn eval_h1(&self, t: f64, x: &Vector, p: &Vector) -> Result<HamiltonianEval<Vector>> {
        if !(t.is_finite() && x.iter().chain(p).all(|v| v.is_finite())) {
            return Err(Error::invalid(
                "Hamiltonian argument",
                format!("non-finite input to H1: t={t}, x={x:?}, p={p:?}"),
            ));
        }
        Ok(self.h1(t, x, p))
    }

    /// `H2(t, x, q)` with its argmin; rejects non-finite arguments.
    pub fn eval_h2(&self, t: f64, x: &Vector, q: f64) -> Result<HamiltonianEval<f64>> {
        if !(t.is_finite() && q.is_finite() && x.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid(
                "Hamiltonian argument",
                format!("non-finite input to H2: t={t}, x={x:?}, q={q}"),
            ));
        }
        Ok(self.h2(t, x, q))
    }

    pub(crate) fn h1(&self, t: f64, x: &Vector, p: &Vector) -> HamiltonianEval<Vector> {
        match self {
            HamiltonianSpec::ClosedForm(c) => {
                let mut alpha = [0.0; MAX_DIM];
                let mut value = 0.0;
                for axis in 0..c.dim {
                    let a = c.drift_argmin(p[axis]);
                    alpha[axis] = a;
                    value += p[axis] * a + 0.5 * c.drift_weight * a * a;
                }
                HamiltonianEval {
                    value,
                    argmin: alpha,
                    derivative: alpha,
                }
            }
            HamiltonianSpec::Tabulated(tab) => {
                let mut best = f64::INFINITY;
                let mut best_alpha = tab.drift_controls[0];
                for alpha in &tab.drift_controls {
                    let lin: f64 = (0..tab.dim).map(|k| p[k] * alpha[k]).sum();
                    let v = lin + tab.drift_cost.eval(t, x, alpha);
                    if v < best {
                        best = v;
                        best_alpha = *alpha;
                    }
                }
                HamiltonianEval {
                    value: best,
                    argmin: best_alpha,
                    derivative: best_alpha,
                }
            }
            HamiltonianSpec::Mollified(m) => m.h1(t, x, p),
        }
    }

    pub(crate) fn h2(&self, t: f64, x: &Vector, q: f64) -> HamiltonianEval<f64> {
        match self {
            HamiltonianSpec::ClosedForm(c) => {
                let eta = c.eta_argmin(q);
                HamiltonianEval {
                    value: eta * q + c.diffusion_weight * (eta - c.eta_center).powi(2),
                    argmin: eta,
                    derivative: eta,
                }
            }
            HamiltonianSpec::Tabulated(tab) => {
                let mut best = f64::INFINITY;
                let mut best_eta = tab.eta_controls[0];
                for &eta in &tab.eta_controls {
                    let v = eta * q + tab.diffusion_cost.eval(t, x, eta);
                    if v < best {
                        best = v;
                        best_eta = eta;
                    }
                }
                HamiltonianEval {
                    value: best,
                    argmin: best_eta,
                    derivative: best_eta,
                }
            }
            HamiltonianSpec::Mollified(m) => m.h2(t, x, q),
        }
    }

    /// Points `s in (0, 1)` where `s -> H1_p(t, x, s p)` may be non-smooth.
    pub(crate) fn h1_ray_breakpoints(&self, t: f64, x: &Vector, p: &Vector) -> Vec<f64> {
        match self {
            HamiltonianSpec::ClosedForm(c) => {
                let mut out = Vec::new();
                for &pk in p.iter().take(c.dim) {
                    if pk != 0.0 {
                        // -s p / w = +-B  =>  s = B w / |p|
                        let s = c.drift_box * c.drift_weight / pk.abs();
                        if s > 0.0 && s < 1.0 {
                            out.push(s);
                        }
                    }
                }
                out
            }
            HamiltonianSpec::Tabulated(tab) => {
                let lines: Vec<(f64, f64)> = tab
                    .drift_controls
                    .iter()
                    .map(|a| {
                        let slope: f64 = (0..tab.dim).map(|k| p[k] * a[k]).sum();
                        (slope, tab.drift_cost.eval(t, x, a))
                    })
                    .collect();
                envelope_breakpoints(&lines)
            }
            HamiltonianSpec::Mollified(_) => Vec::new(),
        }
    }

    /// Points `s in (0, 1)` where `s -> H2_q(t, x, s q)` may be non-smooth.
    pub(crate) fn h2_ray_breakpoints(&self, t: f64, x: &Vector, q: f64) -> Vec<f64> {
        match self {
            HamiltonianSpec::ClosedForm(c) => {
                if q == 0.0 {
                    return Vec::new();
                }
                // eta_center - s q / (2w) hits eta_min or eta_max
                [c.eta_min, c.eta_max]
                    .iter()
                    .map(|&e| 2.0 * c.diffusion_weight * (c.eta_center - e) / q)
                    .filter(|&s| s > 0.0 && s < 1.0)
                    .collect()
            }
            HamiltonianSpec::Tabulated(tab) => {
                let lines: Vec<(f64, f64)> = tab
                    .eta_controls
                    .iter()
                    .map(|&e| (e * q, tab.diffusion_cost.eval(t, x, e)))
                    .collect();
                envelope_breakpoints(&lines)
            }
            HamiltonianSpec::Mollified(_) => Vec::new(),
        }
    }
}

/// Crossing points in `(0, 1)` of the lower envelope of lines
/// `s -> slope * s + intercept`.
fn envelope_breakpoints(lines: &[(f64, f64)]) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, &(a1, b1)) in lines.iter().enumerate() {
        for &(a2, b2) in &lines[i + 1..] {
            if a1 != a2 {
                let s = (b2 - b1) / (a1 - a2);
                if s > 0.0 && s < 1.0 {
                    out.push(s);
                }
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// The full control problem together with couplings and data.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub bounds: ControlBounds,
    pub hamiltonians: HamiltonianSpec,
    pub coupling_f: KernelCoupling,
    pub terminal_g: TerminalCost,
    pub m0: InitialDensity,
    /// Discount used by the exponential change of variable.
    pub discount_lambda: f64,
    pub horizon: f64,
    /// Declared constant `C` the hypothesis validator compares against.
    pub hypothesis_bound: f64,
}

impl ModelSpec {
    /// Checks that the Hamiltonians respect the control bounds.
    pub fn new(
        bounds: ControlBounds,
        hamiltonians: HamiltonianSpec,
        coupling_f: KernelCoupling,
        terminal_g: TerminalCost,
        m0: InitialDensity,
        horizon: f64,
    ) -> Result<Self> {
        let (lo, hi) = hamiltonians.eta_range();
        let tol = 1e-12 * bounds.eta_max();
        if lo < bounds.eta_min() - tol || hi > bounds.eta_max() + tol {
            return Err(Error::invalid(
                "HamiltonianSpec",
                format!(
                    "diffusion controls [{lo}, {hi}] leave S' = [{}, {}]",
                    bounds.eta_min(),
                    bounds.eta_max()
                ),
            ));
        }
        if hamiltonians.drift_norm_sup() > bounds.drift_bound() * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "HamiltonianSpec",
                format!(
                    "drift controls reach |alpha| = {} above the drift bound {}",
                    hamiltonians.drift_norm_sup(),
                    bounds.drift_bound()
                ),
            ));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("ModelSpec", "horizon must be positive"));
        }
        Ok(Self {
            bounds,
            hamiltonians,
            coupling_f,
            terminal_g,
            m0,
            discount_lambda: 0.0,
            horizon,
            hypothesis_bound: 10.0,
        })
    }

    /// Model A with no couplings, zero terminal cost and a centred Gaussian
    /// initial density.
    pub fn model_a(horizon: f64) -> Self {
        Self::new(
            ControlBounds::new(1.0, 2.0, 1.0).expect("static bounds"),
            HamiltonianSpec::model_a(),
            KernelCoupling::none(),
            TerminalCost::constant(0.0),
            InitialDensity::Gaussian {
                center: None,
                std: 0.25,
            },
            horizon,
        )
        .expect("model A is valid")
    }

    /// Single-control heat model `u_t + nu Laplace(u) = 0`.
    pub fn heat(dim: usize, nu: f64, bounds: ControlBounds, horizon: f64) -> Result<Self> {
        Self::new(
            bounds,
            HamiltonianSpec::single_control(dim, nu)?,
            KernelCoupling::none(),
            TerminalCost::constant(0.0),
            InitialDensity::Uniform,
            horizon,
        )
    }

    pub fn dim(&self) -> usize {
        self.hamiltonians.dim()
    }

    /// CFL data with `theta_LF = sup |H1_p|` unless overridden.
    pub fn cfl_data(&self) -> CflData {
        CflData {
            diffusion_max: self.bounds.eta_max(),
            drift_max: self.hamiltonians.drift_sup(),
        }
    }

    pub fn eval_h1(&self, t: f64, x: &Vector, p: &Vector) -> Result<HamiltonianEval<Vector>> {
        self.hamiltonians.eval_h1(t, x, p)
    }

    pub fn eval_h2(&self, t: f64, x: &Vector, q: f64) -> Result<HamiltonianEval<f64>> {
        self.hamiltonians.eval_h2(t, x, q)
    }
}
