//! The map `Phi(gamma) = m`: solve the HJB equation with the couplings
//! frozen at `gamma`, then transport `m0` with the resulting coefficients.
//! Equilibria are fixed points, searched for by damped Picard iteration.

use crate::control::{ModelSpec, PeriodicKernel};
use crate::error::{Error, Result};
use crate::fp::{build_transport_operator, check_duality, solve_fp, DensityPath};
use crate::grid::{GridSpec, TimeField};
use crate::hjb::{hjb_residual, solve_hjb};
use crate::wasserstein::{holder_half_diagnostic, sup_d1};

/// `F(t_n, ., gamma(t_n))` at every level and `G(., gamma(T))`.
pub fn coupling_fields(
    model: &ModelSpec,
    grid: &GridSpec,
    gamma: &DensityPath,
) -> Result<(TimeField, Vec<f64>)> {
    grid.ensure_same(gamma.grid(), "coupling input")?;
    let mut f = TimeField::zeros(grid);
    if model.coupling_f.is_active() {
        let kernel = PeriodicKernel::gaussian(grid, model.coupling_f.width)?;
        for n in 0..grid.levels() {
            let v = model.coupling_f.evaluate_with(&kernel, gamma.level(n));
            f.level_mut(n).copy_from_slice(&v);
        }
    }
    let g = model.terminal_g.evaluate(grid, gamma.level(grid.nt()))?;
    Ok((f, g))
}

/// Returns `(u, Phi(gamma))`.
pub fn phi_map(
    gamma: &DensityPath,
    model: &ModelSpec,
    grid: &GridSpec,
) -> Result<(TimeField, DensityPath)> {
    let (f, g) = coupling_fields(model, grid, gamma)?;
    let u = solve_hjb(model, &f, &g, grid)?;
    let op = build_transport_operator(&u, model)?;
    let m = solve_fp(&op, &model.m0.discretize(grid)?)?;
    Ok((u, m))
}

/// `sup_t d1(Phi(g1), Phi(g2))` against `sup_t d1(g1, g2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuityProbe {
    pub input_gap: f64,
    pub output_gap: f64,
    /// `output_gap / input_gap`, the measured local modulus `K`.
    pub ratio: f64,
}

pub fn phi_continuity(
    model: &ModelSpec,
    grid: &GridSpec,
    g1: &DensityPath,
    g2: &DensityPath,
) -> Result<ContinuityProbe> {
    let input_gap = sup_d1(g1, g2)?;
    let (_, m1) = phi_map(g1, model, grid)?;
    let (_, m2) = phi_map(g2, model, grid)?;
    let output_gap = sup_d1(&m1, &m2)?;
    Ok(ContinuityProbe {
        input_gap,
        output_gap,
        ratio: if input_gap > 0.0 { output_gap / input_gap } else { 0.0 },
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardOptions {
    /// Damping in `(0, 1]`.
    pub theta: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            theta: 0.5,
            tol: 1e-4,
            max_iter: 50,
        }
    }
}

impl PicardOptions {
    fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::invalid("Picard damping", format!("theta = {} not in (0, 1]", self.theta)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("Picard tolerance", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("Picard iterations", "max_iter must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointReport {
    pub iterations: usize,
    /// `sup_t d1(gamma^{k+1}, gamma^k)` per iteration.
    pub gap_history: Vec<f64>,
    /// Scheme residual of each HJB solve against the couplings it used.
    pub hjb_residual_sup: Vec<f64>,
    pub fp_mass_drift: Vec<f64>,
    /// `max d1 / sqrt(tau)` of each iterate.
    pub holder_ratio: Vec<f64>,
    pub converged: bool,
    pub damping: f64,
    /// Residual of the returned `u` against the couplings at the last
    /// iterate `gamma`, which produced it.
    pub final_hjb_residual: f64,
    /// Residual of the returned `u` with `F` re-evaluated at the returned
    /// `m`; of the order of the last gap.
    pub coupling_mismatch: f64,
    pub final_duality_gap: f64,
}

impl FixedPointReport {
    /// Per-iteration table as CSV text.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,gap,hjb_residual,mass_drift,holder_ratio\n");
        for k in 0..self.gap_history.len() {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                k + 1,
                self.gap_history[k],
                self.hjb_residual_sup[k],
                self.fp_mass_drift[k],
                self.holder_ratio[k]
            ));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct FixedPointSolution {
    pub u: TimeField,
    pub m: DensityPath,
    /// Last iterate fed to `Phi`.
    pub gamma: DensityPath,
    pub report: FixedPointReport,
}

/// Damped Picard iteration from the stationary path `gamma(t) = m0`.
pub fn picard_solve(model: &ModelSpec, grid: &GridSpec, opts: PicardOptions) -> Result<FixedPointSolution> {
    let init = DensityPath::stationary(grid, &model.m0.discretize(grid)?)?;
    picard_solve_from(model, grid, opts, init)
}

/// `gamma^{k+1} = (1 - theta) gamma^k + theta Phi(gamma^k)`, stopping once
/// `sup_t d1(gamma^{k+1}, gamma^k) < tol`. Returns `u` and `Phi(gamma)` for
/// the last `gamma`. Running out of iterations is reported, not an error.
pub fn picard_solve_from(
    model: &ModelSpec,
    grid: &GridSpec,
    opts: PicardOptions,
    init: DensityPath,
) -> Result<FixedPointSolution> {
    opts.validate()?;
    grid.ensure_same(init.grid(), "initial path")?;
    let mut gamma = init;
    let mut gaps = Vec::new();
    let mut residuals = Vec::new();
    let mut drifts = Vec::new();
    let mut holder = Vec::new();
    let mut converged = false;
    let mut last = None;
    for k in 0..opts.max_iter {
        let (f, g) = coupling_fields(model, grid, &gamma)?;
        let u = solve_hjb(model, &f, &g, grid)?;
        let op = build_transport_operator(&u, model)?;
        let m = solve_fp(&op, &model.m0.discretize(grid)?)?;
        residuals.push(hjb_residual(&u, model, &f)?.max_abs());
        drifts.push(m.mass_drift());
        holder.push(holder_half_diagnostic(&m).map(|h| h.max_ratio).unwrap_or(f64::NAN));
        let next = gamma.blend(&m, opts.theta)?;
        let gap = sup_d1(&next, &gamma)?;
        gaps.push(gap);
        log::debug!("picard iteration {}: gap {gap:e}", k + 1);
        let done = gap < opts.tol;
        last = Some((u, m, f, op));
        if done {
            converged = true;
            break;
        }
        gamma = next;
    }
    let (u, m, f, op) = last.expect("at least one iteration");
    let final_hjb_residual = hjb_residual(&u, model, &f)?.max_abs();
    let (f_at_m, _) = coupling_fields(model, grid, &m)?;
    let coupling_mismatch = hjb_residual(&u, model, &f_at_m)?.max_abs();
    let final_duality_gap = duality_probe(&m, &op)?;
    let report = FixedPointReport {
        iterations: gaps.len(),
        gap_history: gaps,
        hjb_residual_sup: residuals,
        fp_mass_drift: drifts,
        holder_ratio: holder,
        converged,
        damping: opts.theta,
        final_hjb_residual,
        coupling_mismatch,
        final_duality_gap,
    };
    Ok(FixedPointSolution { u, m, gamma, report })
}

/// Duality gap for a fixed smooth pair of test functions.
fn duality_probe(m: &DensityPath, op: &crate::fp::TransportOperator) -> Result<f64> {
    let g = m.grid();
    let l = g.box_length();
    let w = 2.0 * std::f64::consts::PI / l;
    let phi_t: Vec<f64> = (0..g.nodes())
        .map(|i| g.coords(i).iter().take(g.dim()).map(|x| (w * x).cos()).sum())
        .collect();
    let psi = TimeField::from_fn(g, |t, x| (w * x[0] + t).sin());
    check_duality(m, op, &phi_t, &psi)
}

/// `min_t int (F(m1) - F(m2)) (m1 - m2) dx` and the same for `G` at `T`;
/// both are nonnegative for monotone couplings.
pub fn monotonicity_gap(model: &ModelSpec, m1: &DensityPath, m2: &DensityPath) -> Result<(f64, f64)> {
    let grid = m1.grid();
    grid.ensure_same(m2.grid(), "monotonicity gap")?;
    let vol = grid.cell_volume();
    let pairing = |coupling: &crate::control::KernelCoupling, a: &[f64], b: &[f64]| -> Result<f64> {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let fd = coupling.evaluate(grid, &diff)?;
        Ok(fd.iter().zip(&diff).map(|(f, d)| f * d).sum::<f64>() * vol)
    };
    let mut gap_f = f64::INFINITY;
    for n in 0..grid.levels() {
        gap_f = gap_f.min(pairing(&model.coupling_f, m1.level(n), m2.level(n))?);
    }
    let nt = grid.nt();
    let gap_g = pairing(&model.terminal_g.coupling, m1.level(nt), m2.level(nt))?;
    Ok((gap_f, gap_g))
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniquenessReport {
    pub converged: [bool; 2],
    pub iterations: [usize; 2],
    /// `sup_t d1` between the two limits; `None` if either run failed to
    /// converge.
    pub sup_d1: Option<f64>,
    /// `dt sum_n int (F(m1) - F(m2)) (m1 - m2)` between the limits.
    pub lasry_lions: Option<f64>,
}

/// Runs the Picard iteration from two initial paths and compares the limits.
pub fn uniqueness_crosscheck(
    model: &ModelSpec,
    grid: &GridSpec,
    opts: PicardOptions,
    inits: [DensityPath; 2],
) -> Result<UniquenessReport> {
    let [a, b] = inits;
    let s1 = picard_solve_from(model, grid, opts, a)?;
    let s2 = picard_solve_from(model, grid, opts, b)?;
    let converged = [s1.report.converged, s2.report.converged];
    let iterations = [s1.report.iterations, s2.report.iterations];
    if !(converged[0] && converged[1]) {
        return Ok(UniquenessReport {
            converged,
            iterations,
            sup_d1: None,
            lasry_lions: None,
        });
    }
    let dist = sup_d1(&s1.m, &s2.m)?;
    let vol = grid.cell_volume();
    let mut ll = 0.0;
    if model.coupling_f.is_active() {
        for n in 1..grid.levels() {
            let diff: Vec<f64> = s1.m.level(n).iter().zip(s2.m.level(n)).map(|(x, y)| x - y).collect();
            let fd = model.coupling_f.evaluate(grid, &diff)?;
            ll += fd.iter().zip(&diff).map(|(f, d)| f * d).sum::<f64>() * vol;
        }
        ll *= grid.dt();
    }
    Ok(UniquenessReport {
        converged,
        iterations,
        sup_d1: Some(dist),
        lasry_lions: Some(ll),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{InitialDensity, KernelCoupling, TerminalBase, TerminalCost};

    fn setup(c_f: f64, c_g: f64) -> (ModelSpec, GridSpec) {
        let mut model = ModelSpec::model_a(0.25);
        model.coupling_f = KernelCoupling {
            width: 0.25,
            gain: c_f,
        };
        model.terminal_g = TerminalCost {
            base: TerminalBase::Cosine {
                amplitude: 0.5,
                wavenumber: 1,
            },
            coupling: KernelCoupling {
                width: 0.25,
                gain: c_g,
            },
        };
        model.m0 = InitialDensity::Gaussian {
            center: Some([2.0, 0.0]),
            std: 0.25,
        };
        let cfl = model.cfl_data();
        let nt = GridSpec::min_nt_for(1, 4.0, 32, 0.25, &cfl);
        let grid = GridSpec::new(1, 4.0, 32, nt, 0.25, cfl).unwrap();
        (model, grid)
    }

    fn bump(grid: &GridSpec, centre: f64) -> DensityPath {
        let m = InitialDensity::Gaussian {
            center: Some([centre, 0.0]),
            std: 0.3,
        }
        .discretize(grid)
        .unwrap();
        DensityPath::stationary(grid, &m).unwrap()
    }

    #[test]
    fn uncoupled_map_is_constant() {
        let (model, grid) = setup(0.0, 0.0);
        let (_, a) = phi_map(&bump(&grid, 1.0), &model, &grid).unwrap();
        let (_, b) = phi_map(&bump(&grid, 3.0), &model, &grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uncoupled_undamped_iteration_stops_at_the_second_step() {
        let (model, grid) = setup(0.0, 0.0);
        let opts = PicardOptions {
            theta: 1.0,
            ..Default::default()
        };
        let sol = picard_solve(&model, &grid, opts).unwrap();
        assert!(sol.report.converged);
        assert_eq!(sol.report.iterations, 2);
        assert_eq!(sol.report.gap_history[1], 0.0);
    }

    #[test]
    fn coupled_iteration_converges_and_is_self_consistent() {
        let (model, grid) = setup(0.5, 0.1);
        let sol = picard_solve(&model, &grid, PicardOptions::default()).unwrap();
        let r = &sol.report;
        assert!(r.converged, "{:?}", r.gap_history);
        assert!(r.final_hjb_residual <= 1e-10);
        assert!(r.final_duality_gap <= 1e-10);
        assert!(r.coupling_mismatch <= 1e-2);
        assert!(r.fp_mass_drift.iter().all(|d| *d <= 1e-12));
        assert!(r.holder_ratio.iter().all(|h| h.is_finite()));
        assert!(sol.m.min_value() >= -1e-14);
    }

    #[test]
    fn invalid_damping_is_rejected() {
        let (model, grid) = setup(0.5, 0.1);
        for theta in [0.0, 1.5, f64::NAN] {
            let opts = PicardOptions {
                theta,
                ..Default::default()
            };
            assert!(picard_solve(&model, &grid, opts).is_err());
        }
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let (model, grid) = setup(0.5, 0.1);
        let opts = PicardOptions {
            theta: 0.5,
            tol: 1e-14,
            max_iter: 2,
        };
        let sol = picard_solve(&model, &grid, opts).unwrap();
        assert!(!sol.report.converged);
        assert_eq!(sol.report.iterations, 2);
    }

    #[test]
    fn monotonicity_gap_signs() {
        let (model, grid) = setup(0.5, 0.1);
        let (a, b) = (bump(&grid, 1.5), bump(&grid, 2.5));
        assert_eq!(monotonicity_gap(&model, &a, &a).unwrap(), (0.0, 0.0));
        let (gf, gg) = monotonicity_gap(&model, &a, &b).unwrap();
        assert!(gf >= -1e-12 && gg >= -1e-12);
        let mut flipped = model.clone();
        flipped.coupling_f.gain = -0.5;
        let (gf, _) = monotonicity_gap(&flipped, &a, &b).unwrap();
        assert!(gf < 0.0);
    }

    #[test]
    fn identical_inits_give_identical_limits() {
        let (model, grid) = setup(0.5, 0.1);
        let r = uniqueness_crosscheck(
            &model,
            &grid,
            PicardOptions::default(),
            [bump(&grid, 2.0), bump(&grid, 2.0)],
        )
        .unwrap();
        assert_eq!(r.sup_d1, Some(0.0));
        assert_eq!(r.lasry_lions, Some(0.0));
    }

    #[test]
    fn continuity_probe_reports_a_finite_modulus() {
        let (model, grid) = setup(0.5, 0.1);
        let p = phi_continuity(&model, &grid, &bump(&grid, 1.9), &bump(&grid, 2.1)).unwrap();
        assert!(p.input_gap > 0.0 && p.ratio.is_finite());
    }
}
