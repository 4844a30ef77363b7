//! TOML run configuration. Every key is optional in the raw document so that
//! missing required keys and filled-in defaults can both be reported by
//! their dotted name.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::control::{
    ClosedForm, ControlBounds, HamiltonianSpec, InitialDensity, KernelCoupling, ModelSpec,
    TerminalBase, TerminalCost,
};
use crate::error::{Error, Result};
use crate::fixed_point::PicardOptions;
use crate::grid::{CflData, GridSpec, Vector, MAX_DIM};
use crate::hjb::DEFAULT_QUADRATURE_ORDER;
use crate::sde::McConfig;

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Option<RawModel>,
    grid: Option<RawGrid>,
    mc: Option<RawMc>,
    fixed_point: Option<RawFixedPoint>,
    solver: Option<RawSolver>,
    output: Option<RawOutput>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: Option<String>,
    horizon: Option<f64>,
    nu: Option<f64>,
    discount_lambda: Option<f64>,
    hypothesis_bound: Option<f64>,
    bounds: Option<RawBounds>,
    hamiltonian: Option<RawClosedForm>,
    coupling: Option<RawKernel>,
    terminal: Option<RawTerminal>,
    initial: Option<RawInitial>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawBounds {
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    drift_bound: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawClosedForm {
    drift_box: Option<f64>,
    drift_weight: Option<f64>,
    eta_min: Option<f64>,
    eta_max: Option<f64>,
    eta_center: Option<f64>,
    diffusion_weight: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawKernel {
    width: Option<f64>,
    gain: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTerminal {
    kind: Option<String>,
    value: Option<f64>,
    amplitude: Option<f64>,
    wavenumber: Option<u32>,
    coupling_width: Option<f64>,
    coupling_gain: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    kind: Option<String>,
    center: Option<Vec<f64>>,
    std: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    dim: Option<usize>,
    box_length: Option<f64>,
    nx: Option<usize>,
    nt: Option<usize>,
    lf_theta: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawMc {
    num_paths: Option<usize>,
    dt_mc: Option<f64>,
    seed: Option<u64>,
    x0: Option<Vec<f64>>,
    antithetic: Option<bool>,
    dpp_fraction: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawFixedPoint {
    theta: Option<f64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    quadrature_order: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    write_fields: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputOptions {
    pub dir: PathBuf,
    pub write_fields: bool,
}

/// A fully validated run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub grid: GridSpec,
    pub mc: McConfig,
    /// DPP window as a fraction of the horizon.
    pub dpp_fraction: f64,
    pub fixed_point: PicardOptions,
    pub quadrature_order: usize,
    pub output: OutputOptions,
    /// `key = value` for every default that was filled in.
    pub defaults: Vec<String>,
}

/// Tracks filled defaults while reading optional keys.
struct Filler {
    defaults: Vec<String>,
}

impl Filler {
    fn or<T: std::fmt::Debug>(&mut self, key: &str, value: Option<T>, default: T) -> T {
        value.unwrap_or_else(|| {
            self.defaults.push(format!("{key} = {default:?}"));
            default
        })
    }
}

fn required<T>(key: &str, value: Option<T>) -> Result<T> {
    value.ok_or_else(|| Error::config(key, "missing required key"))
}

/// Re-labels a component error with the key that produced it.
fn at<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Cfl { .. } | Error::Config { .. } => e,
        other => Error::config(key, other.to_string()),
    })
}

fn vector(key: &str, v: &[f64], dim: usize) -> Result<Vector> {
    if v.len() != dim {
        return Err(Error::config(key, format!("expected {dim} components, got {}", v.len())));
    }
    let mut out = [0.0; MAX_DIM];
    out[..dim].copy_from_slice(v);
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path)
}

/// Parses and validates a configuration document; `origin` only labels
/// diagnostics.
pub fn parse_config(text: &str, origin: &Path) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Format {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut fill = Filler { defaults: Vec::new() };
    let rm = raw.model.unwrap_or_default();
    let rg = raw.grid.unwrap_or_default();

    let dim = fill.or("grid.dim", rg.dim, 1);
    if !(1..=MAX_DIM).contains(&dim) {
        return Err(Error::config("grid.dim", format!("must be 1 or 2, got {dim}")));
    }
    let horizon = required("model.horizon", rm.horizon)?;
    let rb = rm.bounds.unwrap_or_default();
    let bounds = at(
        "model.bounds",
        ControlBounds::new(
            fill.or("model.bounds.lambda1", rb.lambda1, 1.0),
            fill.or("model.bounds.lambda2", rb.lambda2, 2.0),
            fill.or("model.bounds.drift_bound", rb.drift_bound, 1.0),
        ),
    )?;

    let kind = fill.or("model.kind", rm.kind, "closed_form".to_string());
    let hamiltonians = match kind.as_str() {
        "closed_form" => {
            let rh = rm.hamiltonian.unwrap_or_default();
            let a = ClosedForm::model_a();
            at(
                "model.hamiltonian",
                HamiltonianSpec::closed_form(ClosedForm {
                    dim,
                    drift_box: fill.or("model.hamiltonian.drift_box", rh.drift_box, bounds.drift_bound() / (dim as f64).sqrt()),
                    drift_weight: fill.or("model.hamiltonian.drift_weight", rh.drift_weight, a.drift_weight),
                    eta_min: fill.or("model.hamiltonian.eta_min", rh.eta_min, bounds.eta_min()),
                    eta_max: fill.or("model.hamiltonian.eta_max", rh.eta_max, bounds.eta_max()),
                    eta_center: fill.or("model.hamiltonian.eta_center", rh.eta_center, a.eta_center),
                    diffusion_weight: fill.or("model.hamiltonian.diffusion_weight", rh.diffusion_weight, a.diffusion_weight),
                }),
            )?
        }
        "heat" => {
            if rm.hamiltonian.is_some() {
                return Err(Error::config("model.hamiltonian", "not used by the heat model"));
            }
            let nu = required("model.nu", rm.nu)?;
            at("model.nu", HamiltonianSpec::single_control(dim, nu))?
        }
        other => {
            return Err(Error::config("model.kind", format!("unknown kind `{other}`")));
        }
    };
    if kind != "heat" && rm.nu.is_some() {
        return Err(Error::config("model.nu", "only used by the heat model"));
    }

    let rk = rm.coupling.unwrap_or_default();
    let coupling_f = KernelCoupling {
        width: fill.or("model.coupling.width", rk.width, 0.25),
        gain: fill.or("model.coupling.gain", rk.gain, 0.0),
    };
    let rt = rm.terminal.unwrap_or_default();
    let base = match fill.or("model.terminal.kind", rt.kind, "constant".to_string()).as_str() {
        "constant" => TerminalBase::Constant {
            value: fill.or("model.terminal.value", rt.value, 0.0),
        },
        "cosine" => TerminalBase::Cosine {
            amplitude: required("model.terminal.amplitude", rt.amplitude)?,
            wavenumber: fill.or("model.terminal.wavenumber", rt.wavenumber, 1),
        },
        other => return Err(Error::config("model.terminal.kind", format!("unknown kind `{other}`"))),
    };
    let terminal_g = TerminalCost {
        base,
        coupling: KernelCoupling {
            width: fill.or("model.terminal.coupling_width", rt.coupling_width, 0.25),
            gain: fill.or("model.terminal.coupling_gain", rt.coupling_gain, 0.0),
        },
    };
    let ri = rm.initial.unwrap_or_default();
    let center = ri.center.as_deref().map(|c| vector("model.initial.center", c, dim)).transpose()?;
    let m0 = match fill.or("model.initial.kind", ri.kind, "gaussian".to_string()).as_str() {
        "uniform" => InitialDensity::Uniform,
        "gaussian" => InitialDensity::Gaussian {
            center,
            std: fill.or("model.initial.std", ri.std, 0.25),
        },
        "dirac" => InitialDensity::Dirac { center },
        other => return Err(Error::config("model.initial.kind", format!("unknown kind `{other}`"))),
    };

    let mut model = at(
        "model",
        ModelSpec::new(bounds, hamiltonians, coupling_f, terminal_g, m0, horizon),
    )?;
    model.discount_lambda = fill.or("model.discount_lambda", rm.discount_lambda, 0.0);
    model.hypothesis_bound = fill.or("model.hypothesis_bound", rm.hypothesis_bound, 10.0);
    if !(model.discount_lambda >= 0.0 && model.discount_lambda.is_finite()) {
        return Err(Error::config("model.discount_lambda", "must be finite and nonnegative"));
    }
    if !(model.hypothesis_bound > 0.0) {
        return Err(Error::config("model.hypothesis_bound", "must be positive"));
    }

    let box_length = required("grid.box_length", rg.box_length)?;
    let nx = required("grid.nx", rg.nx)?;
    let nt = required("grid.nt", rg.nt)?;
    let mut cfl = model.cfl_data();
    if let Some(theta) = rg.lf_theta {
        if theta < cfl.drift_max * (1.0 - 1e-12) {
            return Err(Error::config(
                "grid.lf_theta",
                format!("must be at least sup |H1_p| = {}", cfl.drift_max),
            ));
        }
        cfl = CflData { drift_max: theta, ..cfl };
    } else {
        fill.defaults.push(format!("grid.lf_theta = {:?}", cfl.drift_max));
    }
    let grid = at("grid", GridSpec::new(dim, box_length, nx, nt, horizon, cfl))?;
    for (i, c) in [&model.coupling_f, &model.terminal_g.coupling].into_iter().enumerate() {
        if c.is_active() {
            let key = if i == 0 { "model.coupling" } else { "model.terminal" };
            at(key, crate::control::PeriodicKernel::gaussian(&grid, c.width))?;
        }
    }
    at("model.initial", model.m0.discretize(&grid))?;

    let rmc = raw.mc.unwrap_or_default();
    let x0 = match rmc.x0 {
        Some(v) => vector("mc.x0", &v, dim)?,
        None => {
            let c = [0.5 * box_length; MAX_DIM];
            fill.defaults.push(format!("mc.x0 = {:?}", &c[..dim]));
            let mut x = [0.0; MAX_DIM];
            x[..dim].copy_from_slice(&c[..dim]);
            x
        }
    };
    let mc = McConfig {
        num_paths: fill.or("mc.num_paths", rmc.num_paths, 10_000),
        dt_mc: fill.or("mc.dt_mc", rmc.dt_mc, grid.dt()),
        seed: fill.or("mc.seed", rmc.seed, 0),
        x0,
        antithetic: fill.or("mc.antithetic", rmc.antithetic, false),
    };
    if mc.num_paths < 100 {
        return Err(Error::config("mc.num_paths", "must be at least 100"));
    }
    if !(mc.dt_mc > 0.0 && mc.dt_mc <= grid.dt() * (1.0 + 1e-12)) {
        return Err(Error::config("mc.dt_mc", format!("must lie in (0, {}]", grid.dt())));
    }
    let dpp_fraction = fill.or("mc.dpp_fraction", rmc.dpp_fraction, 0.125);
    if !(dpp_fraction > 0.0 && dpp_fraction <= 1.0) {
        return Err(Error::config("mc.dpp_fraction", "must lie in (0, 1]"));
    }

    let rf = raw.fixed_point.unwrap_or_default();
    let d = PicardOptions::default();
    let fixed_point = PicardOptions {
        theta: fill.or("fixed_point.theta", rf.theta, d.theta),
        tol: fill.or("fixed_point.tol", rf.tol, d.tol),
        max_iter: fill.or("fixed_point.max_iter", rf.max_iter, d.max_iter),
    };
    if !(fixed_point.theta > 0.0 && fixed_point.theta <= 1.0) {
        return Err(Error::config("fixed_point.theta", "must lie in (0, 1]"));
    }
    if !(fixed_point.tol > 0.0) {
        return Err(Error::config("fixed_point.tol", "must be positive"));
    }
    if fixed_point.max_iter == 0 {
        return Err(Error::config("fixed_point.max_iter", "must be at least 1"));
    }

    let quadrature_order = fill.or(
        "solver.quadrature_order",
        raw.solver.and_then(|s| s.quadrature_order),
        DEFAULT_QUADRATURE_ORDER,
    );
    if quadrature_order == 0 {
        return Err(Error::config("solver.quadrature_order", "must be at least 1"));
    }
    let ro = raw.output.unwrap_or_default();
    let output = OutputOptions {
        dir: fill.or("output.dir", ro.dir, PathBuf::from("out")),
        write_fields: fill.or("output.write_fields", ro.write_fields, true),
    };

    for d in &fill.defaults {
        log::info!("default filled: {d}");
    }
    Ok(RunConfig {
        model,
        grid,
        mc,
        dpp_fraction,
        fixed_point,
        quadrature_order,
        output,
        defaults: fill.defaults,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
horizon = 0.5

[grid]
box_length = 4.0
nx = 32
nt = 200
"#;

    fn parse(s: &str) -> Result<RunConfig> {
        parse_config(s, Path::new("test.toml"))
    }

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.fixed_point.theta, 0.5);
        assert_eq!(c.fixed_point.tol, 1e-4);
        assert_eq!(c.quadrature_order, 16);
        assert_eq!(c.model.bounds.eta_min(), 0.5);
        assert!(c.defaults.iter().any(|d| d.starts_with("fixed_point.theta")));
        assert_eq!(c.mc.x0[0], 2.0);
    }

    #[test]
    fn inverted_bounds_name_the_invariant() {
        let s = format!("{MINIMAL}\n[model.bounds]\nlambda1 = 2.0\nlambda2 = 1.0\n");
        let msg = err_text(&s);
        assert!(msg.contains("ControlBounds"), "{msg}");
        assert!(msg.contains("model.bounds"), "{msg}");
    }

    #[test]
    fn cfl_violation_reports_the_minimal_nt() {
        let s = MINIMAL.replace("nt = 200", "nt = 10");
        let err = parse(&s).unwrap_err();
        let cfl = CflData { diffusion_max: 2.0, drift_max: 1.0 };
        let dx: f64 = 4.0 / 32.0;
        let oracle = (0.5 / (dx * dx / (2.0 * 2.0 + 1.0 * dx))).ceil() as usize;
        assert_eq!(GridSpec::min_nt_for(1, 4.0, 32, 0.5, &cfl), oracle);
        match err {
            Error::Cfl { min_nt, .. } => assert_eq!(min_nt, oracle),
            e => panic!("unexpected {e}"),
        }
        assert!(err_text(&s).contains(&format!("nt = {oracle}")));
    }

    fn err_text(s: &str) -> String {
        parse(s).unwrap_err().to_string()
    }

    #[test]
    fn unknown_and_missing_keys_are_named() {
        let s = MINIMAL.replace("nx = 32", "nx = 32\nnz = 4");
        assert!(err_text(&s).contains("nz"));
        let s = MINIMAL.replace("nx = 32\n", "");
        let e = parse(&s).unwrap_err();
        assert!(e.is_configuration());
        assert!(e.to_string().contains("grid.nx"));
        assert!(err_text("[grid]\nnx = 8").contains("model.horizon"));
    }

    #[test]
    fn heat_model_requires_nu() {
        let s = MINIMAL.replace("horizon = 0.5", "horizon = 0.5\nkind = \"heat\"");
        assert!(err_text(&s).contains("model.nu"));
        let s = s.replace("kind = \"heat\"", "kind = \"heat\"\nnu = 0.75");
        let c = parse(&s).unwrap();
        assert_eq!(c.model.hamiltonians.eta_range(), (0.75, 0.75));
    }
}
