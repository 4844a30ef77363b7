//! Monte-Carlo checks of the stochastic control problem behind the HJB
//! equation: the cost of the feedback policy read off a computed `u`, the
//! dynamic programming principle, and the `sqrt(h)` modulus of trajectories.
//!
//! Paths follow `dX = alpha ds + sqrt(2 eta) dW` on the torus with
//! Euler-Maruyama steps. On `[t_n, t_{n+1})` the feedback uses level `n+1`
//! of `D_h u` and `Lap_h u`, bilinearly interpolated in space, which mirrors
//! the explicit HJB step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::control::ModelSpec;
use crate::error::{Error, Result};
use crate::fixed_point::coupling_fields;
use crate::fp::DensityPath;
use crate::grid::{GridSpec, TimeField, Vector, MAX_DIM};
use crate::wasserstein::fit_slope;

/// Acceptance allowance for the combined PDE and Euler-Maruyama bias.
pub const SCHEME_BIAS: f64 = 0.05;

/// Euler-Maruyama steps per window in [`modulus_check`].
pub const MODULUS_STEPS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McConfig {
    pub num_paths: usize,
    pub dt_mc: f64,
    pub seed: u64,
    pub x0: Vector,
    pub antithetic: bool,
}

impl McConfig {
    fn validate(&self) -> Result<()> {
        if self.num_paths < 100 {
            return Err(Error::invalid("McConfig", format!("num_paths = {} < 100", self.num_paths)));
        }
        if !(self.dt_mc > 0.0 && self.dt_mc.is_finite()) {
            return Err(Error::invalid("McConfig", "dt_mc must be positive"));
        }
        if self.antithetic && self.num_paths % 2 != 0 {
            return Err(Error::invalid("McConfig", "antithetic sampling needs an even path count"));
        }
        Ok(())
    }

    /// Euler-Maruyama substeps per grid step.
    fn substeps(&self, grid: &GridSpec) -> Result<usize> {
        let ratio = grid.dt() / self.dt_mc;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
            return Err(Error::invalid(
                "McConfig",
                format!("dt_mc = {} must divide the grid step {}", self.dt_mc, grid.dt()),
            ));
        }
        Ok(k as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub num_paths: usize,
}

impl McEstimate {
    fn from_samples(samples: &[f64], num_paths: usize) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            std_error: (var / n).sqrt(),
            num_paths,
        }
    }

    /// `|mean - target| <= 3 SE + bias`.
    pub fn agrees_with(&self, target: f64, bias: f64) -> bool {
        (self.mean - target).abs() <= 3.0 * self.std_error + bias
    }
}

/// Fixed open-loop controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantControl {
    pub alpha: Vector,
    /// `sigma^2 / 2`.
    pub eta: f64,
}

/// Periodic bilinear interpolation of one level of nodal values.
pub fn interpolate(grid: &GridSpec, values: &[f64], x: &Vector) -> f64 {
    let nx = grid.nx();
    let dx = grid.dx();
    let mut base = [0usize; MAX_DIM];
    let mut frac = [0.0; MAX_DIM];
    for axis in 0..grid.dim() {
        let s = (x[axis] / dx).rem_euclid(nx as f64);
        let i = (s.floor() as usize).min(nx - 1);
        base[axis] = i;
        frac[axis] = s - i as f64;
    }
    let corners = 1usize << grid.dim();
    let mut out = 0.0;
    for c in 0..corners {
        let mut idx = [0usize; MAX_DIM];
        let mut w = 1.0;
        for axis in 0..grid.dim() {
            let up = (c >> axis) & 1 == 1;
            idx[axis] = (base[axis] + usize::from(up)) % nx;
            w *= if up { frac[axis] } else { 1.0 - frac[axis] };
        }
        if w != 0.0 {
            out += w * values[grid.node_of(idx)];
        }
    }
    out
}

/// Value of `u` at `(t, x)`, linear in time between levels.
pub fn field_value(u: &TimeField, t: f64, x: &Vector) -> f64 {
    let g = u.grid();
    let s = (t / g.dt()).clamp(0.0, g.nt() as f64);
    let n = (s.floor() as usize).min(g.nt());
    let w = s - n as f64;
    let a = interpolate(g, u.level(n), x);
    if w <= 1e-12 || n == g.nt() {
        a
    } else {
        (1.0 - w) * a + w * interpolate(g, u.level(n + 1), x)
    }
}

/// Per-level fields the feedback needs.
struct Fields<'a> {
    grid: &'a GridSpec,
    model: &'a ModelSpec,
    lap: Vec<f64>,
    grad: Vec<Vec<f64>>,
    f: TimeField,
    g: Vec<f64>,
}

impl<'a> Fields<'a> {
    fn new(grid: &'a GridSpec, model: &'a ModelSpec, u: Option<&TimeField>, m: &DensityPath) -> Result<Self> {
        let (f, g) = coupling_fields(model, grid, m)?;
        let total = grid.levels() * grid.nodes();
        let mut lap = vec![0.0; total];
        let mut grad = vec![vec![0.0; total]; grid.dim()];
        if let Some(u) = u {
            grid.ensure_same(u.grid(), "value function vs density")?;
            for n in 0..grid.levels() {
                let lvl = u.level(n);
                for i in 0..grid.nodes() {
                    let k = n * grid.nodes() + i;
                    lap[k] = grid.laplacian(lvl, i);
                    let p = grid.centered_gradient(lvl, i);
                    for (axis, gr) in grad.iter_mut().enumerate() {
                        gr[k] = p[axis];
                    }
                }
            }
        }
        Ok(Self {
            grid,
            model,
            lap,
            grad,
            f,
            g,
        })
    }

    fn level<'s>(&self, v: &'s [f64], n: usize) -> &'s [f64] {
        let m = self.grid.nodes();
        &v[n * m..(n + 1) * m]
    }

    /// Feedback `(alpha, eta, L1 + L3)` at level `n`.
    fn feedback(&self, n: usize, x: &Vector) -> (Vector, f64, f64) {
        let h = &self.model.hamiltonians;
        let t = self.grid.time(n);
        let q = interpolate(self.grid, self.level(&self.lap, n), x);
        let mut p = [0.0; MAX_DIM];
        for (axis, gr) in self.grad.iter().enumerate() {
            p[axis] = interpolate(self.grid, self.level(gr, n), x);
        }
        let alpha = h.h1(t, x, &p).argmin;
        let eta = h.h2(t, x, q).argmin;
        let cost = h.drift_cost(t, x, &alpha) + h.diffusion_cost(t, x, eta);
        (alpha, eta, cost)
    }
}

enum Policy {
    Feedback,
    Constant(ConstantControl),
}

enum Terminal<'a> {
    Cost,
    Value(&'a TimeField),
}

struct PathSpec<'a> {
    fields: &'a Fields<'a>,
    policy: Policy,
    terminal: Terminal<'a>,
    x0: Vector,
    dt: f64,
    steps: usize,
    substeps: usize,
    /// Increments larger than this count as sanity violations.
    jump_limit: f64,
}

impl PathSpec<'_> {
    fn run(&self, rng: &mut ChaCha8Rng, sign: f64) -> Result<f64> {
        let grid = self.fields.grid;
        let d = grid.dim();
        let l = grid.box_length();
        let h = &self.fields.model.hamiltonians;
        let mut x = self.x0;
        let mut cost = 0.0;
        let mut violations = 0;
        let sqdt = self.dt.sqrt();
        for k in 0..self.steps {
            let n = (k / self.substeps + 1).min(grid.nt());
            let (alpha, eta, running) = match self.policy {
                Policy::Feedback => self.fields.feedback(n, &x),
                Policy::Constant(c) => {
                    let t = grid.time(n);
                    (c.alpha, c.eta, h.drift_cost(t, &x, &c.alpha) + h.diffusion_cost(t, &x, c.eta))
                }
            };
            let f = interpolate(grid, self.fields.f.level(n), &x);
            cost += self.dt * (running + f);
            let sigma = (2.0 * eta).sqrt();
            let mut jump = 0.0;
            for axis in 0..d {
                let z: f64 = StandardNormal.sample(rng);
                let dxa = alpha[axis] * self.dt + sign * sigma * sqdt * z;
                jump += dxa * dxa;
                x[axis] = (x[axis] + dxa).rem_euclid(l);
            }
            if !cost.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(Error::SanityBox(format!("non-finite state at step {k}")));
            }
            if jump.sqrt() > self.jump_limit {
                violations += 1;
                if violations > 2 {
                    return Err(Error::SanityBox(format!(
                        "increment {:e} exceeds {:e} repeatedly (step {k}, x = {:?})",
                        jump.sqrt(),
                        self.jump_limit,
                        &x[..d]
                    )));
                }
            }
        }
        let t_end = self.steps as f64 * self.dt;
        let tail = match self.terminal {
            Terminal::Cost => interpolate(grid, &self.fields.g, &x),
            Terminal::Value(u) => field_value(u, t_end, &x),
        };
        Ok(cost + tail)
    }

    fn estimate(&self, cfg: &McConfig) -> Result<McEstimate> {
        let draws = if cfg.antithetic { cfg.num_paths / 2 } else { cfg.num_paths };
        let samples: Vec<Result<f64>> = (0..draws)
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(k as u64);
                if cfg.antithetic {
                    let mut twin = rng.clone();
                    let a = self.run(&mut rng, 1.0)?;
                    let b = self.run(&mut twin, -1.0)?;
                    Ok(0.5 * (a + b))
                } else {
                    self.run(&mut rng, 1.0)
                }
            })
            .collect();
        let samples: Vec<f64> = samples.into_iter().collect::<Result<_>>()?;
        Ok(McEstimate::from_samples(&samples, cfg.num_paths))
    }
}

fn jump_limit(model: &ModelSpec, dt: f64) -> f64 {
    10.0 * (model.bounds.lambda2().powi(2) * dt).sqrt() + model.bounds.drift_bound() * dt
}

fn check_start(grid: &GridSpec, x0: &Vector) -> Result<()> {
    let l = grid.box_length();
    if x0.iter().take(grid.dim()).any(|x| !(*x >= 0.0 && *x < l)) {
        return Err(Error::invalid("McConfig", format!("x0 = {x0:?} outside the box [0, {l})")));
    }
    Ok(())
}

fn steps_to(grid: &GridSpec, cfg: &McConfig, t: f64) -> Result<usize> {
    let ratio = t / cfg.dt_mc;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) || t > grid.horizon() * (1.0 + 1e-12) {
        return Err(Error::invalid(
            "Monte-Carlo horizon",
            format!("{t} must be a positive multiple of dt_mc within the horizon"),
        ));
    }
    Ok(k as usize)
}

/// Expected cost of the feedback policy from `(0, x0)`; compare with
/// `u(0, x0)`.
pub fn simulate_value(u: &TimeField, m: &DensityPath, model: &ModelSpec, cfg: &McConfig) -> Result<McEstimate> {
    cfg.validate()?;
    let grid = u.grid();
    check_start(grid, &cfg.x0)?;
    let substeps = cfg.substeps(grid)?;
    let fields = Fields::new(grid, model, Some(u), m)?;
    PathSpec {
        fields: &fields,
        policy: Policy::Feedback,
        terminal: Terminal::Cost,
        x0: cfg.x0,
        dt: cfg.dt_mc,
        steps: grid.nt() * substeps,
        substeps,
        jump_limit: jump_limit(model, cfg.dt_mc),
    }
    .estimate(cfg)
}

/// Expected cost of an open-loop constant control; never below the value
/// function up to sampling and scheme error.
pub fn simulate_constant_control(
    m: &DensityPath,
    model: &ModelSpec,
    cfg: &McConfig,
    control: ConstantControl,
) -> Result<McEstimate> {
    cfg.validate()?;
    let grid = m.grid();
    check_start(grid, &cfg.x0)?;
    let substeps = cfg.substeps(grid)?;
    let fields = Fields::new(grid, model, None, m)?;
    PathSpec {
        fields: &fields,
        policy: Policy::Constant(control),
        terminal: Terminal::Cost,
        x0: cfg.x0,
        dt: cfg.dt_mc,
        steps: grid.nt() * substeps,
        substeps,
        jump_limit: jump_limit(model, cfg.dt_mc),
    }
    .estimate(cfg)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DppResult {
    /// Running cost over `[0, h]` plus `u(h, X_h)`.
    pub estimate: McEstimate,
    /// `u(0, x0)`.
    pub target: f64,
    pub gap: f64,
}

impl DppResult {
    pub fn within(&self, bias: f64) -> bool {
        self.gap <= 3.0 * self.estimate.std_error + bias
    }
}

pub fn dpp_check(
    u: &TimeField,
    m: &DensityPath,
    model: &ModelSpec,
    cfg: &McConfig,
    h: f64,
) -> Result<DppResult> {
    cfg.validate()?;
    let grid = u.grid();
    check_start(grid, &cfg.x0)?;
    let substeps = cfg.substeps(grid)?;
    let steps = steps_to(grid, cfg, h)?;
    let fields = Fields::new(grid, model, Some(u), m)?;
    let estimate = PathSpec {
        fields: &fields,
        policy: Policy::Feedback,
        terminal: Terminal::Value(u),
        x0: cfg.x0,
        dt: cfg.dt_mc,
        steps,
        substeps,
        jump_limit: jump_limit(model, cfg.dt_mc),
    }
    .estimate(cfg)?;
    let target = field_value(u, 0.0, &cfg.x0);
    Ok(DppResult {
        estimate,
        target,
        gap: (estimate.mean - target).abs(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModulusFit {
    pub hs: Vec<f64>,
    /// Estimates of `E sup_{s <= h} |X_s - x0|`.
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub exponent: f64,
    /// `max mean / sqrt(h)`.
    pub constant: f64,
}

/// Fits `E sup_{s <= h} |X_s - x0| ~ C h^exponent` under a constant control,
/// each window resolved by [`MODULUS_STEPS`] Euler-Maruyama steps.
pub fn modulus_check(
    model: &ModelSpec,
    cfg: &McConfig,
    h_list: &[f64],
    control: ConstantControl,
) -> Result<ModulusFit> {
    cfg.validate()?;
    if h_list.len() < 4 {
        return Err(Error::invalid("modulus check", "needs at least 4 window lengths"));
    }
    if h_list.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(Error::invalid("modulus check", "window lengths must be positive"));
    }
    let (lo, hi) = (model.bounds.eta_min(), model.bounds.eta_max());
    if !(control.eta >= lo * (1.0 - 1e-12) && control.eta <= hi * (1.0 + 1e-12)) {
        return Err(Error::invalid("modulus check", "eta outside the diffusion control set"));
    }
    let speed = control.alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
    if speed > model.bounds.drift_bound() * (1.0 + 1e-12) {
        return Err(Error::invalid("modulus check", "drift exceeds the drift bound"));
    }
    let d = model.dim();
    let sigma = (2.0 * control.eta).sqrt();
    let mut means = Vec::new();
    let mut ses = Vec::new();
    for (w, &h) in h_list.iter().enumerate() {
        let dt = h / MODULUS_STEPS as f64;
        let sqdt = dt.sqrt();
        let samples: Vec<f64> = (0..cfg.num_paths)
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(w as u64));
                rng.set_stream(k as u64);
                let mut y = [0.0; MAX_DIM];
                let mut sup = 0.0f64;
                for _ in 0..MODULUS_STEPS {
                    for axis in 0..d {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        y[axis] += control.alpha[axis] * dt + sigma * sqdt * z;
                    }
                    sup = sup.max(y.iter().map(|v| v * v).sum::<f64>().sqrt());
                }
                sup
            })
            .collect();
        let est = McEstimate::from_samples(&samples, cfg.num_paths);
        means.push(est.mean);
        ses.push(est.std_error);
    }
    let lx: Vec<f64> = h_list.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let constant = h_list
        .iter()
        .zip(&means)
        .map(|(h, m)| m / h.sqrt())
        .fold(0.0, f64::max);
    Ok(ModulusFit {
        hs: h_list.to_vec(),
        means,
        std_errors: ses,
        exponent: fit_slope(&lx, &ly),
        constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{ControlBounds, TerminalBase, TerminalCost};
    use crate::hjb::solve_hjb;
    use std::f64::consts::PI;

    fn heat_setup() -> (ModelSpec, GridSpec, TimeField, DensityPath) {
        let bounds = ControlBounds::new(1.0, 1.2, 1.0).unwrap();
        let mut model = ModelSpec::heat(1, 0.5, bounds, 0.1).unwrap();
        model.terminal_g = TerminalCost {
            base: TerminalBase::Cosine {
                amplitude: 1.0,
                wavenumber: 1,
            },
            coupling: crate::control::KernelCoupling::none(),
        };
        let grid = GridSpec::new(1, 1.0, 32, 512, 0.1, model.cfl_data()).unwrap();
        let g = model.terminal_g.evaluate(&grid, &vec![1.0; 32]).unwrap();
        let u = solve_hjb(&model, &TimeField::zeros(&grid), &g, &grid).unwrap();
        let m = DensityPath::stationary(&grid, &vec![1.0; 32]).unwrap();
        (model, grid, u, m)
    }

    fn cfg(grid: &GridSpec, n: usize) -> McConfig {
        McConfig {
            num_paths: n,
            dt_mc: grid.dt(),
            seed: 7,
            x0: [0.25, 0.0],
            antithetic: false,
        }
    }

    #[test]
    fn interpolation_reproduces_nodes_and_linear_data() {
        let g = GridSpec::new(2, 1.0, 8, 100, 0.1, crate::grid::CflData { diffusion_max: 1.0, drift_max: 1.0 }).unwrap();
        let v: Vec<f64> = (0..g.nodes()).map(|i| {
            let x = g.coords(i);
            1.0 + 2.0 * x[0] + 3.0 * x[1]
        }).collect();
        assert_eq!(interpolate(&g, &v, &g.coords(13)), v[13]);
        let x = [0.3, 0.55];
        assert!((interpolate(&g, &v, &x) - (1.0 + 0.6 + 1.65)).abs() < 1e-12);
    }

    #[test]
    fn heat_value_matches_separation_of_variables() {
        let (model, grid, u, m) = heat_setup();
        let est = simulate_value(&u, &m, &model, &cfg(&grid, 4000)).unwrap();
        let exact = (-0.5 * (2.0 * PI).powi(2) * 0.1).exp() * (2.0 * PI * 0.25).cos();
        assert!(est.agrees_with(exact, SCHEME_BIAS), "{est:?} vs {exact}");
    }

    #[test]
    fn same_seed_is_bit_identical_and_error_scales() {
        let (model, grid, u, m) = heat_setup();
        let a = simulate_value(&u, &m, &model, &cfg(&grid, 500)).unwrap();
        let b = simulate_value(&u, &m, &model, &cfg(&grid, 500)).unwrap();
        assert_eq!(a, b);
        let c = simulate_value(&u, &m, &model, &cfg(&grid, 2000)).unwrap();
        let r = a.std_error / c.std_error;
        assert!((2.0 / 1.5..=2.0 * 1.5).contains(&r), "ratio {r}");
    }

    #[test]
    fn antithetic_pairs_do_not_inflate_variance() {
        let (model, grid, u, m) = heat_setup();
        let plain = simulate_value(&u, &m, &model, &cfg(&grid, 2000)).unwrap();
        let anti = simulate_value(&u, &m, &model, &McConfig { antithetic: true, ..cfg(&grid, 2000) }).unwrap();
        assert!(anti.std_error <= 1.05 * plain.std_error);
    }

    #[test]
    fn constant_fields_satisfy_dpp_exactly() {
        let model = ModelSpec::model_a(0.25);
        let cflg = model.cfl_data();
        let nt = GridSpec::min_nt_for(1, 4.0, 32, 0.25, &cflg);
        let grid = GridSpec::new(1, 4.0, 32, nt, 0.25, cflg).unwrap();
        let mut model = model;
        model.terminal_g = TerminalCost::constant(0.7);
        let u = solve_hjb(&model, &TimeField::zeros(&grid), &vec![0.7; 32], &grid).unwrap();
        let m = DensityPath::stationary(&grid, &model.m0.discretize(&grid).unwrap()).unwrap();
        let c = McConfig { x0: [2.0, 0.0], ..cfg(&grid, 200) };
        let r = dpp_check(&u, &m, &model, &c, grid.dt() * (grid.nt() / 8) as f64).unwrap();
        assert!(r.gap <= 3.0 * r.estimate.std_error + 1e-8, "{r:?}");
    }

    #[test]
    fn rejects_bad_configurations() {
        let (model, grid, u, m) = heat_setup();
        assert!(simulate_value(&u, &m, &model, &cfg(&grid, 10)).is_err());
        let odd = McConfig { dt_mc: grid.dt() * 0.7, ..cfg(&grid, 200) };
        assert!(simulate_value(&u, &m, &model, &odd).is_err());
        let outside = McConfig { x0: [1.5, 0.0], ..cfg(&grid, 200) };
        assert!(simulate_value(&u, &m, &model, &outside).is_err());
        let c = ConstantControl { alpha: [0.0; 2], eta: 0.5 };
        assert!(modulus_check(&model, &cfg(&grid, 200), &[0.01], c).is_err());
    }

    #[test]
    fn brownian_modulus_has_half_exponent() {
        let (model, grid, _, _) = heat_setup();
        let hs = [0.0125, 0.025, 0.05, 0.1, 0.2];
        let c = ConstantControl { alpha: [0.0; 2], eta: 0.5 };
        let fit = modulus_check(&model, &cfg(&grid, 2000), &hs, c).unwrap();
        assert!((0.4..=0.6).contains(&fit.exponent), "{fit:?}");
        // reflection principle: E sup_{s<=h} |B_s| = sqrt(pi h / 2) for unit variance
        let oracle = (PI * 0.1 / 2.0).sqrt();
        assert!((fit.means[3] - oracle).abs() < 0.1 * oracle);
    }
}
