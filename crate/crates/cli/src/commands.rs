use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mfg_core::control::{samples_from_field, validate_hypotheses};
use mfg_core::fixed_point::{coupling_fields, picard_solve};
use mfg_core::fp::{build_transport_operator, solve_fp as transport};
use mfg_core::hjb::{
    hjb_residual, lambda_transform, monotonicity_certificate, solve_hjb as hjb, solve_hjb_discounted,
    TransformDirection,
};
use mfg_core::io::{load_config, read_density, read_field, write_density, write_field};
use mfg_core::regularity::{
    class_m_check, lipschitz_constant, random_krylov_samples, random_triples, semiconcavity_constant,
    three_point_check,
};
use mfg_core::sde::{
    dpp_check, field_value, modulus_check, simulate_constant_control, simulate_value, SCHEME_BIAS,
};
use mfg_core::wasserstein::{d1_levels, sup_d1};
use mfg_core::{ConstantControl, DensityPath, Error, Result, RunConfig, TimeField, MAX_DIM};

use crate::runlog::RunLog;
use crate::Common;

pub enum Outcome {
    Success,
    ContractFailure(String),
}

/// Collects table rows and remembers any non-finite entry.
struct Table {
    text: String,
    bad: Vec<String>,
}

impl Table {
    fn new(header: &str) -> Self {
        Self {
            text: format!("{header}\n"),
            bad: Vec::new(),
        }
    }

    fn row(&mut self, label: &str, values: &[f64]) {
        self.text.push_str(label);
        for v in values {
            if !v.is_finite() {
                self.bad.push(label.to_string());
            }
            let _ = write!(self.text, ",{v:e}");
        }
        self.text.push('\n');
    }

    fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    let path = common.config.as_ref().ok_or_else(|| Error::Config {
        key: "--config".into(),
        reason: "this subcommand needs a configuration file".into(),
    })?;
    let mut cfg = load_config(path)?;
    if let Some(dir) = &common.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = common.seed {
        cfg.mc.seed = seed;
    }
    Ok(cfg)
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn start(cfg: &RunConfig, command: &str) -> Result<RunLog> {
    prepare(&cfg.output.dir)?;
    let mut log = RunLog::new(&cfg.output.dir, command);
    let g = &cfg.grid;
    log.line(format!(
        "grid: dim {} L {} nx {} nt {} T {} dt {:e} (max {:e})",
        g.dim(),
        g.box_length(),
        g.nx(),
        g.nt(),
        g.horizon(),
        g.dt(),
        g.dt_max()
    ));
    for d in &cfg.defaults {
        log.line(format!("default: {d}"));
    }
    Ok(log)
}

fn non_finite(field: &TimeField, name: &str) -> Option<String> {
    field
        .first_non_finite()
        .map(|(level, node)| format!("{name} is not finite at level {level}, node {node}"))
}

/// Writes `u` if requested; a non-finite value is a contract failure.
fn emit_field(cfg: &RunConfig, log: &mut RunLog, u: &TimeField, name: &str) -> Result<Option<String>> {
    if let Some(why) = non_finite(u, name) {
        return Ok(Some(why));
    }
    if cfg.output.write_fields {
        let sum = write_field(u, &cfg.output.dir.join(name))?;
        log.line(format!("{name}: sha256 {sum}"));
    }
    Ok(None)
}

fn emit_density(cfg: &RunConfig, log: &mut RunLog, m: &DensityPath) -> Result<()> {
    if cfg.output.write_fields {
        let sum = write_density(m, &cfg.output.dir.join("m"))?;
        log.line(format!("m: sha256 {sum}"));
    }
    Ok(())
}

fn hypotheses(cfg: &RunConfig, log: &mut RunLog, u: &TimeField) {
    let report = validate_hypotheses(&cfg.model, &samples_from_field(u, 2000));
    log.block(&report.summary());
    log.line(format!("hypotheses all passed: {}", report.all_passed()));
}

/// HJB solve with couplings frozen at the stationary initial density.
fn frozen_hjb(cfg: &RunConfig, log: &mut RunLog) -> Result<(TimeField, TimeField)> {
    let gamma = DensityPath::stationary(&cfg.grid, &cfg.model.m0.discretize(&cfg.grid)?)?;
    let (f, g) = coupling_fields(&cfg.model, &cfg.grid, &gamma)?;
    let u = hjb(&cfg.model, &f, &g, &cfg.grid)?;
    let cert = monotonicity_certificate(&u, &cfg.model)?;
    log.line(format!(
        "monotonicity: min off-diagonal {:e}, diagonal in [{:e}, {:e}], holds {}",
        cert.min_off_diagonal,
        cert.min_diagonal,
        cert.max_diagonal,
        cert.holds()
    ));
    Ok((u, f))
}

fn finish(log: &mut RunLog, failures: Vec<String>) -> Result<Outcome> {
    let outcome = if failures.is_empty() {
        log.line("status: ok");
        Outcome::Success
    } else {
        let why = failures.join("; ");
        log.line(format!("status: failed ({why})"));
        Outcome::ContractFailure(why)
    };
    log.save()?;
    Ok(outcome)
}

pub fn solve_hjb(common: &Common) -> Result<Outcome> {
    let cfg = load(common)?;
    let mut log = start(&cfg, "solve-hjb")?;
    let (u, f) = frozen_hjb(&cfg, &mut log)?;
    hypotheses(&cfg, &mut log, &u);
    let mut failures = Vec::new();
    failures.extend(emit_field(&cfg, &mut log, &u, "u")?);

    let r = hjb_residual(&u, &cfg.model, &f)?;
    let mut table = Table::new("level,time,residual");
    for n in 0..cfg.grid.levels() {
        let worst = r.level(n).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        table.row(&n.to_string(), &[cfg.grid.time(n), worst]);
    }
    log.line(format!("scheme residual sup {:e}", r.max_abs()));

    let lambda = cfg.model.discount_lambda;
    if lambda > 0.0 {
        let (_, g) = coupling_fields(
            &cfg.model,
            &cfg.grid,
            &DensityPath::stationary(&cfg.grid, &cfg.model.m0.discretize(&cfg.grid)?)?,
        )?;
        let v = solve_hjb_discounted(&cfg.model, &f, &g, &cfg.grid, lambda)?;
        let back = lambda_transform(&v, lambda, TransformDirection::Inverse);
        let rb = hjb_residual(&back, &cfg.model, &f)?.max_abs();
        log.line(format!("discounted solve (lambda {lambda}): back-transformed residual {rb:e}"));
        table.row("discounted", &[cfg.grid.horizon(), rb]);
    }
    table.save(&cfg.output.dir.join("residual.csv"))?;
    failures.extend(table.bad.iter().map(|b| format!("non-finite residual at {b}")));
    finish(&mut log, failures)
}

pub fn solve_fp(common: &Common, inject_negative: bool) -> Result<Outcome> {
    let cfg = load(common)?;
    let mut log = start(&cfg, "solve-fp")?;
    let (u, _) = frozen_hjb(&cfg, &mut log)?;
    let op = build_transport_operator(&u, &cfg.model)?;
    let mut m0 = cfg.model.m0.discretize(&cfg.grid)?;
    if inject_negative {
        let shift = m0[0] + 1e-6;
        m0[0] -= shift;
        m0[1] += shift;
        log.line("test hook: negative value planted at node 0");
    }
    let m = match transport(&op, &m0) {
        Ok(m) => m,
        Err(e) => {
            log.line(format!("error: {e}"));
            log.save()?;
            return Err(e);
        }
    };
    emit_density(&cfg, &mut log, &m)?;
    let mut table = Table::new("level,time,mass,min");
    for n in 0..cfg.grid.levels() {
        let min = m.level(n).iter().copied().fold(f64::INFINITY, f64::min);
        table.row(&n.to_string(), &[cfg.grid.time(n), m.mass()[n], min]);
    }
    table.save(&cfg.output.dir.join("mass.csv"))?;
    log.line(format!("mass drift {:e}, minimum {:e}", m.mass_drift(), m.min_value()));
    let mut failures: Vec<String> = table.bad.iter().map(|b| format!("non-finite at level {b}")).collect();
    if m.mass_drift() > 1e-12 {
        failures.push(format!("mass drift {:e}", m.mass_drift()));
    }
    finish(&mut log, failures)
}

pub fn solve_mfg(common: &Common) -> Result<Outcome> {
    let cfg = load(common)?;
    let mut log = start(&cfg, "solve-mfg")?;
    let o = cfg.fixed_point;
    log.line(format!("picard: theta {} tol {:e} max_iter {}", o.theta, o.tol, o.max_iter));
    let sol = picard_solve(&cfg.model, &cfg.grid, o)?;
    let r = &sol.report;
    hypotheses(&cfg, &mut log, &sol.u);

    let mut failures = Vec::new();
    failures.extend(emit_field(&cfg, &mut log, &sol.u, "u")?);
    emit_density(&cfg, &mut log, &sol.m)?;
    let path = cfg.output.dir.join("report.csv");
    fs::write(&path, r.to_csv()).map_err(|source| Error::Io { path, source })?;

    let max_drift = r.fp_mass_drift.iter().fold(0.0f64, |a, v| a.max(*v));
    let last_gap = *r.gap_history.last().expect("at least one iteration");
    let summary = format!(
        "converged = {}\niterations = {}\nfinal_gap = {:e}\nfinal_hjb_residual = {:e}\n\
         coupling_mismatch = {:e}\nfinal_duality_gap = {:e}\nmax_mass_drift = {:e}\n",
        r.converged, r.iterations, last_gap, r.final_hjb_residual, r.coupling_mismatch, r.final_duality_gap, max_drift
    );
    let path = cfg.output.dir.join("report.txt");
    fs::write(&path, &summary).map_err(|source| Error::Io { path, source })?;
    log.block(&summary);
    log.line(format!("converged={} after {} iterations", r.converged, r.iterations));

    let numbers = [last_gap, r.final_hjb_residual, r.coupling_mismatch, r.final_duality_gap, max_drift];
    if numbers.iter().any(|v| !v.is_finite()) {
        failures.push("non-finite entry in the fixed-point report".into());
    }
    if !r.converged {
        failures.push(format!("Picard iteration did not converge, last gap {last_gap:e}"));
    }
    if max_drift > 1e-12 {
        failures.push(format!("mass drift {max_drift:e}"));
    }
    finish(&mut log, failures)
}

fn existing_dir(dir: &Path) -> Result<PathBuf> {
    if dir.is_dir() {
        Ok(dir.to_path_buf())
    } else {
        Err(Error::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "solve output directory not found"),
        })
    }
}

pub fn verify_sde(common: &Common, from: &Path) -> Result<Outcome> {
    let from = existing_dir(from)?;
    let cfg = load(common)?;
    let u = read_field(&from.join("u"))?;
    let m = read_density(&from.join("m"))?;
    let mut log = start(&cfg, "verify-sde")?;
    log.line(format!("reading solve output from {}", from.display()));
    let model = &cfg.model;
    let grid = u.grid().clone();
    let mc = cfg.mc;
    let target = field_value(&u, 0.0, &mc.x0);
    let mut table = Table::new("check,estimate,std_error,target,passed");
    let mut failures = Vec::new();

    let est = simulate_value(&u, &m, model, &mc)?;
    let ok = est.agrees_with(target, SCHEME_BIAS);
    table.row("feedback", &[est.mean, est.std_error, target, f64::from(u8::from(ok))]);
    if !ok {
        failures.push(format!("feedback cost {} vs u(0, x0) = {target}", est.mean));
    }

    let drift = model.hamiltonians.drift_sup();
    let (lo, hi) = model.hamiltonians.eta_range();
    let controls = [(0.0, lo), (0.5 * drift, hi), (-drift, 0.5 * (lo + hi))];
    for (k, (a, eta)) in controls.into_iter().enumerate() {
        let mut alpha = [0.0; MAX_DIM];
        alpha[0] = a;
        let e = simulate_constant_control(&m, model, &mc, ConstantControl { alpha, eta })?;
        let ok = e.mean >= target - 3.0 * e.std_error - SCHEME_BIAS;
        table.row(&format!("constant{k}"), &[e.mean, e.std_error, target, f64::from(u8::from(ok))]);
        if !ok {
            failures.push(format!("constant control {k} beats the value function"));
        }
    }

    let steps = ((cfg.dpp_fraction * grid.nt() as f64).round() as usize).max(1);
    let h = steps as f64 * grid.dt();
    let dpp = dpp_check(&u, &m, model, &mc, h)?;
    let ok = dpp.within(SCHEME_BIAS);
    table.row("dpp", &[dpp.estimate.mean, dpp.estimate.std_error, dpp.target, f64::from(u8::from(ok))]);
    if !ok {
        failures.push(format!("DPP gap {:e} at h = {h}", dpp.gap));
    }

    let mut alpha = [0.0; MAX_DIM];
    alpha[0] = 0.5 * drift;
    let h_max = (0.1 * model.bounds.lambda1().powi(2) / model.bounds.drift_bound().powi(2).max(1e-12)).min(grid.horizon());
    let hs: Vec<f64> = (0..5).map(|k| h_max / f64::from(1u32 << k)).collect();
    let fit = modulus_check(model, &mc, &hs, ConstantControl { alpha, eta: lo })?;
    let ok = (0.4..=0.6).contains(&fit.exponent);
    table.row("modulus_exponent", &[fit.exponent, 0.0, 0.5, f64::from(u8::from(ok))]);
    if !ok {
        failures.push(format!("trajectory modulus exponent {}", fit.exponent));
    }
    table.save(&cfg.output.dir.join("mc.csv"))?;
    log.block(&table.text);
    failures.extend(table.bad.iter().map(|b| format!("non-finite estimate in {b}")));
    finish(&mut log, failures)
}

pub fn diagnose(common: &Common, from: Option<&Path>) -> Result<Outcome> {
    let cfg = load(common)?;
    let u = match from {
        Some(dir) => Some(read_field(&existing_dir(dir)?.join("u"))?),
        None => None,
    };
    let mut log = start(&cfg, "diagnose")?;
    let u = match u {
        Some(u) => u,
        None => frozen_hjb(&cfg, &mut log)?.0,
    };
    hypotheses(&cfg, &mut log, &u);
    let grid = u.grid();
    let mut table = Table::new("metric,value");
    table.row("lipschitz", &[lipschitz_constant(&u)]);
    table.row("semiconcavity", &[semiconcavity_constant(&u)]);
    let triples = random_triples(grid, 1000, cfg.mc.seed);
    table.row("three_point", &[three_point_check(&u, &triples, 0.1)]);
    let samples = random_krylov_samples(&cfg.model, grid, 1000, cfg.mc.seed);
    let class_m = class_m_check(&cfg.model, &samples);
    table.row("ellipticity", &[class_m.ellipticity]);
    table.save(&cfg.output.dir.join("regularity.csv"))?;
    log.block(&table.text);
    log.block(&class_m.summary());
    // the class-M audit is advisory
    log.line(format!("class M conditions all satisfied: {}", class_m.all_passed()));
    let failures = table.bad.iter().map(|b| format!("non-finite {b}")).collect();
    finish(&mut log, failures)
}

pub fn wasserstein(common: &Common, paths: &[PathBuf]) -> Result<Outcome> {
    let mut paths_ok = Vec::new();
    for p in paths {
        paths_ok.push(read_density(&existing_dir(p)?)?);
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    prepare(&out)?;
    let mut log = RunLog::new(&out, "wasserstein");
    let mut table;
    if let [single] = paths_ok.as_slice() {
        table = Table::new("level,time,d1_from_initial");
        for n in 0..single.grid().levels() {
            table.row(&n.to_string(), &[single.grid().time(n), d1_levels(single, 0, n)?]);
        }
    } else {
        table = Table::new("first,second,sup_d1");
        for i in 0..paths_ok.len() {
            for j in (i + 1)..paths_ok.len() {
                table.row(&format!("{i},{j}"), &[sup_d1(&paths_ok[i], &paths_ok[j])?]);
            }
        }
    }
    table.save(&out.join("wasserstein.csv"))?;
    let failures = table.bad.iter().map(|b| format!("non-finite distance at {b}")).collect();
    finish(&mut log, failures)
}
