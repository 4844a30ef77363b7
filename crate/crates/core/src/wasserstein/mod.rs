//! Wasserstein-1 distance between grid densities and the time-Hölder
//! diagnostic of density paths.
//!
//! The ground cost is the flat Euclidean distance on the unrolled box
//! `[0, L)^d`; periodic wraparound is ignored, so measures should sit away
//! from the seam.

mod transport;

pub use transport::{solve_transport, TransportPlan};

use crate::error::{Error, Result};
use crate::fp::DensityPath;
use crate::grid::{GridSpec, Vector, MAX_DIM};

/// Largest number of nodes per axis handed to the 2D transport solver.
pub const MAX_TRANSPORT_AXIS: usize = 32;

/// Probability weights on the nodes of a grid (`m dx^d` folded in).
#[derive(Clone, Debug, PartialEq)]
pub struct GridMeasure {
    grid: GridSpec,
    weights: Vec<f64>,
}

impl GridMeasure {
    pub fn from_weights(grid: &GridSpec, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.nodes() {
            return Err(Error::GridMismatch(format!(
                "{} weights for {} nodes",
                weights.len(),
                grid.nodes()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= -1e-14 && w.is_finite())) {
            return Err(Error::invalid("GridMeasure", format!("weight {w} is not a probability")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Mass(format!("measure has total mass {total}")));
        }
        Ok(Self {
            grid: grid.clone(),
            weights,
        })
    }

    /// From a density slice normalised by `sum m dx^d = 1`.
    pub fn from_density(grid: &GridSpec, density: &[f64]) -> Result<Self> {
        let vol = grid.cell_volume();
        Self::from_weights(grid, density.iter().map(|m| m * vol).collect())
    }

    /// All mass at one node.
    pub fn dirac(grid: &GridSpec, node: usize) -> Self {
        let mut weights = vec![0.0; grid.nodes()];
        weights[node] = 1.0;
        Self {
            grid: grid.clone(),
            weights,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn check_pair(m1: &GridMeasure, m2: &GridMeasure) -> Result<()> {
    let (a, b) = (&m1.grid, &m2.grid);
    if a.dim() != b.dim() || a.nx() != b.nx() || a.box_length() != b.box_length() {
        return Err(Error::GridMismatch("measures live on different grids".into()));
    }
    let (s1, s2): (f64, f64) = (m1.weights.iter().sum(), m2.weights.iter().sum());
    if (s1 - s2).abs() > 1e-10 {
        return Err(Error::Mass(format!("total masses differ: {s1} vs {s2}")));
    }
    Ok(())
}

/// Wasserstein-1 distance. Exact via the CDF formula in 1D; in 2D an exact
/// transportation problem after coarsening to at most
/// [`MAX_TRANSPORT_AXIS`] nodes per axis.
pub fn d1(m1: &GridMeasure, m2: &GridMeasure) -> Result<f64> {
    check_pair(m1, m2)?;
    if m1.grid.dim() == 1 {
        return Ok(d1_line(&m1.weights, &m2.weights, m1.grid.dx()));
    }
    let (w1, points) = coarsen(&m1.grid, &m1.weights);
    let (w2, _) = coarsen(&m1.grid, &m2.weights);
    d1_points(&w1, &w2, &points)
}

/// `sum_i |CDF1_i - CDF2_i| dx` for weights on equally spaced points.
pub fn d1_line(w1: &[f64], w2: &[f64], dx: f64) -> f64 {
    let mut cdf = 0.0;
    let mut total = 0.0;
    for (a, b) in w1.iter().zip(w2).take(w1.len().saturating_sub(1)) {
        cdf += a - b;
        total += cdf.abs();
    }
    total * dx
}

/// Exact Wasserstein-1 distance between weights on arbitrary points.
pub fn d1_points(w1: &[f64], w2: &[f64], points: &[Vector]) -> Result<f64> {
    // shared mass stays put, so only the excess has to move
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for (k, (a, b)) in w1.iter().zip(w2).enumerate() {
        let e = a - b;
        if e > 0.0 {
            src.push((k, e));
        } else if e < 0.0 {
            dst.push((k, -e));
        }
    }
    let moved: f64 = src.iter().map(|s| s.1).sum();
    if src.is_empty() || dst.is_empty() || moved <= 1e-300 {
        return Ok(0.0);
    }
    let dist = |a: &Vector, b: &Vector| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let cost: Vec<f64> = src
        .iter()
        .flat_map(|&(i, _)| dst.iter().map(move |&(j, _)| (i, j)))
        .map(|(i, j)| dist(&points[i], &points[j]))
        .collect();
    let supply: Vec<f64> = src.iter().map(|s| s.1).collect();
    let demand: Vec<f64> = dst.iter().map(|s| s.1).collect();
    Ok(solve_transport(&supply, &demand, &cost)?.cost)
}

/// Block sums on at most [`MAX_TRANSPORT_AXIS`] nodes per axis, each block
/// placed at the mean coordinate of its fine nodes.
fn coarsen(grid: &GridSpec, w: &[f64]) -> (Vec<f64>, Vec<Vector>) {
    let nx = grid.nx();
    let nc = nx.min(MAX_TRANSPORT_AXIS);
    let d = grid.dim();
    let block = |i: usize| i * nc / nx;
    let mut centre = vec![0.0; nc];
    let mut count = vec![0usize; nc];
    for i in 0..nx {
        centre[block(i)] += i as f64 * grid.dx();
        count[block(i)] += 1;
    }
    centre.iter_mut().zip(&count).for_each(|(c, k)| *c /= *k as f64);
    let coarse_nodes = nc.pow(d as u32);
    let mut out = vec![0.0; coarse_nodes];
    for (node, wk) in w.iter().enumerate() {
        let idx = grid.multi_index(node);
        let mut c = 0;
        for axis in (0..d).rev() {
            c = c * nc + block(idx[axis]);
        }
        out[c] += wk;
    }
    let points = (0..coarse_nodes)
        .map(|c| {
            let mut p = [0.0; MAX_DIM];
            let mut rest = c;
            for slot in p.iter_mut().take(d) {
                *slot = centre[rest % nc];
                rest /= nc;
            }
            p
        })
        .collect();
    (out, points)
}

/// Distance between two time levels of a density path.
pub fn d1_levels(path: &DensityPath, a: usize, b: usize) -> Result<f64> {
    let g = path.grid();
    d1(
        &GridMeasure::from_density(g, path.level(a))?,
        &GridMeasure::from_density(g, path.level(b))?,
    )
}

/// `sup_t d1(p(t), q(t))` over all levels.
pub fn sup_d1(p: &DensityPath, q: &DensityPath) -> Result<f64> {
    p.grid().ensure_same(q.grid(), "sup_t d1")?;
    let g = p.grid();
    let mut worst = 0.0f64;
    for n in 0..g.levels() {
        let a = GridMeasure::from_density(g, p.level(n))?;
        let b = GridMeasure::from_density(g, q.level(n))?;
        worst = worst.max(d1(&a, &b)?);
    }
    Ok(worst)
}

/// Fit of `d1(m(0), m(tau)) ~ C tau^exponent` over `tau = T / 2^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct HolderDiagnostic {
    pub taus: Vec<f64>,
    pub distances: Vec<f64>,
    /// Least-squares slope in log-log coordinates; `None` when some
    /// distance vanishes and the fit is undefined.
    pub exponent: Option<f64>,
    /// `max d1 / sqrt(tau)`.
    pub max_ratio: f64,
}

impl HolderDiagnostic {
    pub fn is_degenerate(&self) -> bool {
        self.exponent.is_none()
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Number of dyadic separations used by [`holder_half_diagnostic`].
pub const HOLDER_SEPARATIONS: u32 = 5;

pub fn holder_half_diagnostic(path: &DensityPath) -> Result<HolderDiagnostic> {
    let g = path.grid();
    let nt = g.nt();
    let mut taus = Vec::new();
    let mut distances = Vec::new();
    let mut last_level = usize::MAX;
    for k in 1..=HOLDER_SEPARATIONS {
        let level = nt >> k;
        if level == 0 || level == last_level {
            break;
        }
        last_level = level;
        taus.push(g.time(level));
        distances.push(d1_levels(path, 0, level)?);
    }
    if taus.len() < 4 {
        return Err(Error::invalid(
            "Hölder diagnostic",
            format!("needs at least 4 dyadic separations, nt = {nt} gives {}", taus.len()),
        ));
    }
    let max_ratio = taus
        .iter()
        .zip(&distances)
        .map(|(t, d)| d / t.sqrt())
        .fold(0.0, f64::max);
    let exponent = if distances.iter().all(|d| *d > 1e-15) {
        let lx: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
        let ly: Vec<f64> = distances.iter().map(|d| d.ln()).collect();
        Some(fit_slope(&lx, &ly))
    } else {
        None
    };
    Ok(HolderDiagnostic {
        taus,
        distances,
        exponent,
        max_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CflData;
    use proptest::prelude::*;

    fn grid(dim: usize, nx: usize) -> GridSpec {
        let cfl = CflData {
            diffusion_max: 1.0,
            drift_max: 1.0,
        };
        let nt = GridSpec::min_nt_for(dim, 1.0, nx, 0.1, &cfl);
        GridSpec::new(dim, 1.0, nx, nt, 0.1, cfl).unwrap()
    }

    /// Dense tableau simplex with Bland's rule: min c.x, A x = b, x >= 0, b >= 0.
    fn simplex_min(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> f64 {
        let (m, n) = (a.len(), c.len());
        let w = n + m + 1;
        let mut t = vec![vec![0.0; w]; m];
        for i in 0..m {
            t[i][..n].copy_from_slice(&a[i]);
            t[i][n + i] = 1.0;
            t[i][w - 1] = b[i];
        }
        let mut basis: Vec<usize> = (n..n + m).collect();
        let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, cost: &[f64], allowed: usize| loop {
            let enter = (0..allowed).find(|&j| {
                let r = cost[j] - (0..m).map(|i| cost[basis[i]] * t[i][j]).sum::<f64>();
                r < -1e-11
            });
            let Some(j) = enter else { return };
            let mut row = None;
            let mut best = f64::INFINITY;
            for i in 0..m {
                if t[i][j] > 1e-12 {
                    let ratio = t[i][w - 1] / t[i][j];
                    let better = ratio < best - 1e-14
                        || (ratio <= best + 1e-14 && row.is_some_and(|r: usize| basis[i] < basis[r]));
                    if row.is_none() || better {
                        best = ratio;
                        row = Some(i);
                    }
                }
            }
            let r = row.expect("bounded");
            let p = t[r][j];
            t[r].iter_mut().for_each(|v| *v /= p);
            for i in 0..m {
                if i != r {
                    let f = t[i][j];
                    if f != 0.0 {
                        for k in 0..w {
                            t[i][k] -= f * t[r][k];
                        }
                    }
                }
            }
            basis[r] = j;
        };
        let mut phase1 = vec![0.0; n + m];
        phase1[n..].iter_mut().for_each(|v| *v = 1.0);
        run(&mut t, &mut basis, &phase1, n + m);
        let mut phase2 = c.to_vec();
        phase2.extend(vec![0.0; m]);
        run(&mut t, &mut basis, &phase2, n);
        (0..m).map(|i| phase2[basis[i]] * t[i][w - 1]).sum()
    }

    /// Transportation LP between two weight vectors, solved densely.
    fn lp_oracle(w1: &[f64], w2: &[f64], pts: &[Vector]) -> f64 {
        let k = w1.len();
        let mut c = Vec::new();
        for i in 0..k {
            for j in 0..k {
                let d: f64 = (0..2).map(|a| (pts[i][a] - pts[j][a]).powi(2)).sum();
                c.push(d.sqrt());
            }
        }
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..k {
            let mut r = vec![0.0; k * k];
            (0..k).for_each(|j| r[i * k + j] = 1.0);
            rows.push(r);
            rhs.push(w1[i]);
        }
        for j in 0..k {
            let mut r = vec![0.0; k * k];
            (0..k).for_each(|i| r[i * k + j] = 1.0);
            rows.push(r);
            rhs.push(w2[j]);
        }
        simplex_min(&c, &rows, &rhs)
    }

    fn points(g: &GridSpec) -> Vec<Vector> {
        (0..g.nodes()).map(|i| g.coords(i)).collect()
    }

    fn block(g: &GridSpec, from: usize, len: usize) -> GridMeasure {
        let mut w = vec![0.0; g.nodes()];
        w[from..from + len].iter_mut().for_each(|v| *v = 1.0 / len as f64);
        GridMeasure::from_weights(g, w).unwrap()
    }

    #[test]
    fn identical_measures_are_at_distance_zero() {
        let g = grid(1, 16);
        let m = block(&g, 3, 5);
        assert_eq!(d1(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn diracs_are_at_their_flat_distance() {
        let g = grid(1, 32);
        let d = d1(&GridMeasure::dirac(&g, 2), &GridMeasure::dirac(&g, 30)).unwrap();
        assert!((d - 28.0 * g.dx()).abs() < 1e-15);
        let g2 = grid(2, 8);
        let (a, b) = (g2.node_of([1, 1]), g2.node_of([4, 5]));
        let d = d1(&GridMeasure::dirac(&g2, a), &GridMeasure::dirac(&g2, b)).unwrap();
        assert!((d - 5.0 * g2.dx()).abs() < 1e-14);
    }

    #[test]
    fn shifted_block_matches_lp_oracle() {
        let g = grid(1, 16);
        for s in 1..5 {
            let (m1, m2) = (block(&g, 3, 4), block(&g, 3 + s, 4));
            let exact = d1(&m1, &m2).unwrap();
            assert!((exact - s as f64 * g.dx()).abs() < 1e-14);
            let lp = lp_oracle(m1.weights(), m2.weights(), &points(&g));
            assert!((exact - lp).abs() < 1e-10, "s={s}: {exact} vs {lp}");
        }
    }

    #[test]
    fn cdf_formula_and_dual_agree_with_lp_on_random_measures() {
        let g = grid(1, 16);
        let mut seed = 12345u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..5 {
            let mut a: Vec<f64> = (0..16).map(|_| next()).collect();
            let mut b: Vec<f64> = (0..16).map(|_| next()).collect();
            let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            a.iter_mut().for_each(|v| *v /= sa);
            b.iter_mut().for_each(|v| *v /= sb);
            let exact = d1_line(&a, &b, g.dx());
            let lp = lp_oracle(&a, &b, &points(&g));
            assert!((exact - lp).abs() < 1e-10);
            // the discrete 1-Lipschitz maximiser phi' = sign(CDF difference)
            let mut phi = vec![0.0; 16];
            let mut cdf = 0.0;
            for i in 0..15 {
                cdf += a[i] - b[i];
                phi[i + 1] = phi[i] - cdf.signum() * g.dx();
            }
            let dual: f64 = phi.iter().zip(a.iter().zip(&b)).map(|(p, (x, y))| p * (x - y)).sum();
            assert!((dual - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn two_dimensional_transport_matches_lp_oracle() {
        let g = grid(2, 8);
        let pts = points(&g);
        let mut seed = 99u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..3 {
            // sparse supports keep the dense oracle small
            let mut a = vec![0.0; 64];
            let mut b = vec![0.0; 64];
            for _ in 0..4 {
                a[(next() * 64.0) as usize] += next() + 0.1;
                b[(next() * 64.0) as usize] += next() + 0.1;
            }
            let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            a.iter_mut().for_each(|v| *v /= sa);
            b.iter_mut().for_each(|v| *v /= sb);
            let support: Vec<usize> = (0..64).filter(|&i| a[i] > 0.0 || b[i] > 0.0).collect();
            let sub = |w: &[f64]| support.iter().map(|&i| w[i]).collect::<Vec<_>>();
            let sub_pts: Vec<Vector> = support.iter().map(|&i| pts[i]).collect();
            let lp = lp_oracle(&sub(&a), &sub(&b), &sub_pts);
            let fast = d1(
                &GridMeasure::from_weights(&g, a.clone()).unwrap(),
                &GridMeasure::from_weights(&g, b.clone()).unwrap(),
            )
            .unwrap();
            assert!((fast - lp).abs() < 1e-10, "{fast} vs {lp}");
        }
    }

    #[test]
    fn coarsening_keeps_mass_and_bounds_the_error() {
        let g = grid(2, 64);
        let (a, b) = (g.node_of([10, 10]), g.node_of([50, 20]));
        let d = d1(&GridMeasure::dirac(&g, a), &GridMeasure::dirac(&g, b)).unwrap();
        let exact = (40.0f64.powi(2) + 10.0f64.powi(2)).sqrt() * g.dx();
        assert!((d - exact).abs() <= 2.0 * g.dx());
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let g = grid(1, 16);
        let h = grid(1, 32);
        assert!(d1(&block(&g, 0, 4), &block(&h, 0, 4)).is_err());
        assert!(GridMeasure::from_weights(&g, vec![0.1; 16]).is_err());
    }

    #[test]
    fn stationary_path_is_degenerate() {
        let g = grid(1, 16);
        let uniform = vec![1.0; 16];
        let path = DensityPath::stationary(&g, &uniform).unwrap();
        let diag = holder_half_diagnostic(&path).unwrap();
        assert!(diag.is_degenerate());
        assert_eq!(diag.max_ratio, 0.0);
    }

    proptest! {
        #[test]
        fn metric_axioms(a in prop::collection::vec(0.0..1.0f64, 16),
                         b in prop::collection::vec(0.0..1.0f64, 16),
                         c in prop::collection::vec(0.0..1.0f64, 16)) {
            let g = grid(1, 16);
            let norm = |v: Vec<f64>| {
                let s: f64 = v.iter().sum::<f64>() + 1e-9;
                let mut w: Vec<f64> = v.iter().map(|x| (x + 1e-9 / 16.0) / s).collect();
                let t: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= t);
                GridMeasure::from_weights(&g, w).unwrap()
            };
            let (a, b, c) = (norm(a), norm(b), norm(c));
            let ab = d1(&a, &b).unwrap();
            prop_assert_eq!(ab, d1(&b, &a).unwrap());
            prop_assert!(ab <= d1(&a, &c).unwrap() + d1(&c, &b).unwrap() + 1e-10);
        }

        #[test]
        fn translation_costs_the_shift(from in 1usize..6, len in 1usize..5, s in 0usize..5) {
            let g = grid(1, 16);
            let d = d1(&block(&g, from, len), &block(&g, from + s, len)).unwrap();
            prop_assert!((d - s as f64 * g.dx()).abs() < 1e-12);
        }
    }
}
