//! Regularity audits on computed fields (Lipschitz and semiconcavity
//! constants, the three-point inequality) and a sampled check of the
//! structural conditions on `M(t, x, beta, B, p, s) = beta H2(t, x, tr B / beta)
//! + beta H1(t, x, p / beta)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::ModelSpec;
use crate::grid::{GridSpec, TimeField, Vector, MAX_DIM};

/// `max |D_h u|` over levels and nodes, per-axis forward differences.
pub fn lipschitz_constant(u: &TimeField) -> f64 {
    let g = u.grid();
    let mut worst = 0.0f64;
    for n in 0..g.levels() {
        let v = u.level(n);
        for i in 0..g.nodes() {
            for axis in 0..g.dim() {
                let (fwd, _) = g.one_sided(v, i, axis);
                worst = worst.max(fwd.abs());
            }
        }
    }
    worst
}

/// Per-node `max_axis (u(x+h) + u(x-h) - 2u(x)) / h^2` at one level.
pub fn second_difference_profile(u: &TimeField, level: usize) -> Vec<f64> {
    let g = u.grid();
    let v = u.level(level);
    let h2 = g.dx() * g.dx();
    (0..g.nodes())
        .map(|i| {
            (0..g.dim())
                .map(|axis| {
                    let up = v[g.neighbor(i, axis, true)];
                    let down = v[g.neighbor(i, axis, false)];
                    (up + down - 2.0 * v[i]) / h2
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Signed maximum of the one-step second differences over levels, nodes
/// and axes.
pub fn semiconcavity_constant(u: &TimeField) -> f64 {
    (0..u.grid().levels())
        .flat_map(|n| second_difference_profile(u, n))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Node indices `(x, y, z)`.
pub type Triple = (usize, usize, usize);

/// Worst `[u(x) + u(y) - 2u(z)] / [delta + (|x-z|^4 + |y-z|^4 + |x+y-2z|^2) / delta]`
/// over triples and levels, with periodic displacements.
pub fn three_point_check(u: &TimeField, triples: &[Triple], delta: f64) -> f64 {
    assert!(delta > 0.0, "delta must be positive");
    let g = u.grid();
    let norm2 = |v: &Vector| v.iter().take(g.dim()).map(|a| a * a).sum::<f64>();
    let denominators: Vec<f64> = triples
        .iter()
        .map(|&(x, y, z)| {
            let a = g.periodic_displacement(z, x);
            let b = g.periodic_displacement(z, y);
            let mut s = [0.0; MAX_DIM];
            for k in 0..g.dim() {
                s[k] = a[k] + b[k];
            }
            delta + (norm2(&a).powi(2) + norm2(&b).powi(2) + norm2(&s)) / delta
        })
        .collect();
    let mut worst = f64::NEG_INFINITY;
    for n in 0..g.levels() {
        let v = u.level(n);
        for (&(x, y, z), den) in triples.iter().zip(&denominators) {
            worst = worst.max((v[x] + v[y] - 2.0 * v[z]) / den);
        }
    }
    worst
}

/// Uniform random triples of nodes.
pub fn random_triples(grid: &GridSpec, count: usize, seed: u64) -> Vec<Triple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.nodes();
    (0..count)
        .map(|_| (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)))
        .collect()
}

/// One argument of `M`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovSample {
    pub t: f64,
    pub x: Vector,
    pub beta: f64,
    pub b: [[f64; MAX_DIM]; MAX_DIM],
    pub p_under: Vector,
    pub s: f64,
}

impl KrylovSample {
    fn is_valid(&self) -> bool {
        let symmetric = (0..MAX_DIM).all(|i| (0..MAX_DIM).all(|j| self.b[i][j] == self.b[j][i]));
        self.beta > 0.0 && symmetric
    }

    fn scaled(&self, l: f64) -> Self {
        let mut out = *self;
        out.beta *= l;
        out.s *= l;
        for row in out.b.iter_mut() {
            row.iter_mut().for_each(|v| *v *= l);
        }
        out.p_under.iter_mut().for_each(|v| *v *= l);
        out
    }

    fn magnitude(&self, d: usize) -> f64 {
        let mut sq = self.beta * self.beta + self.s * self.s;
        for i in 0..d {
            sq += self.p_under[i] * self.p_under[i];
            for j in 0..d {
                sq += self.b[i][j] * self.b[i][j];
            }
        }
        sq.sqrt()
    }
}

/// `M(t, x, beta, B, p, s)`; independent of `s` since the equation has no
/// zeroth-order term.
pub fn krylov_m(model: &ModelSpec, k: &KrylovSample) -> f64 {
    let h = &model.hamiltonians;
    let d = h.dim();
    let trace: f64 = (0..d).map(|i| k.b[i][i]).sum();
    let mut p = [0.0; MAX_DIM];
    for i in 0..d {
        p[i] = k.p_under[i] / k.beta;
    }
    k.beta * h.h2(k.t, &k.x, trace / k.beta).value + k.beta * h.h1(k.t, &k.x, &p).value
}

/// Random samples with `beta` in `[0.25, 4]`, symmetric `B` with entries in
/// `[-2, 2]` and `p` in `[-3, 3]^d`.
pub fn random_krylov_samples(model: &ModelSpec, grid: &GridSpec, count: usize, seed: u64) -> Vec<KrylovSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = grid.dim();
    (0..count)
        .map(|_| {
            let mut x = [0.0; MAX_DIM];
            let mut p = [0.0; MAX_DIM];
            let mut b = [[0.0; MAX_DIM]; MAX_DIM];
            for i in 0..d {
                x[i] = rng.random_range(0.0..grid.box_length());
                p[i] = rng.random_range(-3.0..3.0);
                for j in i..d {
                    let v = rng.random_range(-2.0..2.0);
                    b[i][j] = v;
                    b[j][i] = v;
                }
            }
            KrylovSample {
                t: rng.random_range(0.0..model.horizon),
                x,
                beta: rng.random_range(0.25..4.0),
                b,
                p_under: p,
                s: rng.random_range(-1.0..1.0),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionResult {
    pub name: &'static str,
    pub worst: f64,
    pub bound: f64,
    /// Worst value must stay above the bound rather than below.
    pub lower: bool,
    /// Indices of failing samples.
    pub failures: Vec<usize>,
}

impl ConditionResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Advisory: a failure marks the model as outside the classical theory but
/// does not stop the solver.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMReport {
    pub conditions: Vec<ConditionResult>,
    pub samples: usize,
    pub invalid_samples: Vec<usize>,
    /// Smallest sampled `dM / db_ii`.
    pub ellipticity: f64,
}

impl ClassMReport {
    pub fn all_passed(&self) -> bool {
        self.invalid_samples.is_empty() && self.conditions.iter().all(ConditionResult::passed)
    }

    pub fn get(&self, name: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn summary(&self) -> String {
        let mut s = format!("class M audit: {} samples\n", self.samples);
        for c in &self.conditions {
            s.push_str(&format!(
                "  {:<14} worst {:>12.6e} {} {:>10.4e}  {} failures\n",
                c.name,
                c.worst,
                if c.lower { ">=" } else { "<=" },
                c.bound,
                c.failures.len()
            ));
        }
        s
    }
}

pub const HOMOGENEITY_TOL: f64 = 1e-10;
pub const CONCAVITY_TOL: f64 = 1e-8;
const HOMOGENEITY_SCALES: [f64; 3] = [0.5, 2.0, 10.0];
const CONCAVITY_DIRECTIONS: usize = 4;

fn step(v: f64) -> f64 {
    1e-4 * (1.0 + v.abs())
}

/// Per-sample measurements, each condition stored as a single number.
struct Measured {
    homogeneity: f64,
    ellipticity: f64,
    concavity: f64,
    smoothness: f64,
    first_order: f64,
    second_order: f64,
    growth: f64,
}

fn measure(model: &ModelSpec, k: &KrylovSample, seed: u64) -> Measured {
    let d = model.dim();
    let m = |s: &KrylovSample| krylov_m(model, s);
    let m0 = m(k);

    let homogeneity = HOMOGENEITY_SCALES
        .iter()
        .map(|&l| (m(&k.scaled(l)) - l * m0).abs() / (l * m0).abs().max(1.0))
        .fold(0.0, f64::max);

    // first derivatives in every scalar slot
    let mut first_order = 0.0f64;
    let mut ellipticity = f64::INFINITY;
    let central = |bump: &dyn Fn(&mut KrylovSample, f64), h: f64| {
        let mut a = *k;
        let mut b = *k;
        bump(&mut a, h);
        bump(&mut b, -h);
        (m(&a), m(&b))
    };
    for i in 0..d {
        let h = step(k.b[i][i]);
        let (a, b) = central(&|s, e| s.b[i][i] += e, h);
        let dm = (a - b) / (2.0 * h);
        ellipticity = ellipticity.min(dm);
        first_order = first_order.max(dm.abs());
        for j in (i + 1)..d {
            let h = step(k.b[i][j]);
            let (a, b) = central(
                &|s, e| {
                    s.b[i][j] += e;
                    s.b[j][i] += e;
                },
                h,
            );
            first_order = first_order.max(((a - b) / (2.0 * h)).abs());
        }
        let h = step(k.p_under[i]);
        let (a, b) = central(&|s, e| s.p_under[i] += e, h);
        first_order = first_order.max(((a - b) / (2.0 * h)).abs());
    }
    let h = step(k.beta).min(0.5 * k.beta);
    let (a, b) = central(&|s, e| s.beta += e, h);
    first_order = first_order.max(((a - b) / (2.0 * h)).abs());

    // concavity in B along random rank-one directions, raw second differences
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut concavity = f64::NEG_INFINITY;
    for _ in 0..CONCAVITY_DIRECTIONS {
        let mut xi = [0.0; MAX_DIM];
        for v in xi.iter_mut().take(d) {
            *v = rng.random_range(-1.0..1.0);
        }
        let h = step(k.b.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())));
        let (a, b) = central(
            &|s, e| {
                for i in 0..d {
                    for j in 0..d {
                        s.b[i][j] += e * xi[i] * xi[j];
                    }
                }
            },
            h,
        );
        concavity = concavity.max(a + b - 2.0 * m0);
    }

    // second differences along a random direction in (beta, B, p)
    let mut dir = *k;
    dir.t = 0.0;
    dir.x = [0.0; MAX_DIM];
    dir.s = 0.0;
    dir.beta = rng.random_range(-1.0..1.0);
    for i in 0..d {
        dir.p_under[i] = rng.random_range(-1.0..1.0);
        for j in i..d {
            let v = rng.random_range(-1.0..1.0);
            dir.b[i][j] = v;
            dir.b[j][i] = v;
        }
    }
    let h = 1e-3 * k.beta.min(1.0);
    let shift = |e: f64| {
        let mut s = *k;
        s.beta += e * dir.beta;
        for i in 0..d {
            s.p_under[i] += e * dir.p_under[i];
            for j in 0..d {
                s.b[i][j] += e * dir.b[i][j];
            }
        }
        s
    };
    let second_order = (m(&shift(h)) + m(&shift(-h)) - 2.0 * m0).abs() / (h * h);

    // time and space growth
    let ht = 1e-4;
    let mut growth = ((m(&KrylovSample { t: k.t + ht, ..*k }) - m(&KrylovSample { t: k.t - ht, ..*k })) / (2.0 * ht)).abs();
    for i in 0..d {
        for j in 0..d {
            let at = |a: f64, b: f64| {
                let mut s = *k;
                s.x[i] += a;
                s.x[j] += b;
                m(&s)
            };
            let hx = 1e-3;
            let mixed = (at(hx, hx) - at(hx, -hx) - at(-hx, hx) + at(-hx, -hx)) / (4.0 * hx * hx);
            growth += mixed.abs();
        }
    }

    let smoothness = if [m0, first_order, second_order, growth].iter().all(|v| v.is_finite()) {
        0.0
    } else {
        f64::INFINITY
    };

    let mag = k.magnitude(d);
    Measured {
        homogeneity,
        ellipticity,
        concavity,
        smoothness,
        first_order,
        second_order: second_order / mag.max(1e-300),
        growth: growth / mag.max(1e-300),
    }
}

/// Samples each structural condition with central differences of step
/// `1e-4 (1 + |variable|)`. Growth conditions are normalised by
/// `sqrt(beta^2 + s^2 + |p|^2 + |B|^2)` and compared with the declared
/// constant `model.hypothesis_bound`.
pub fn class_m_check(model: &ModelSpec, samples: &[KrylovSample]) -> ClassMReport {
    let nu = model.bounds.eta_min();
    let c = model.hypothesis_bound;
    let invalid: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_valid())
        .map(|(i, _)| i)
        .collect();
    let measured: Vec<Option<Measured>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| s.is_valid().then(|| measure(model, s, i as u64)))
        .collect();

    let collect = |name: &'static str, bound: f64, lower: bool, pick: &dyn Fn(&Measured) -> f64| {
        let mut worst = if lower { f64::INFINITY } else { f64::NEG_INFINITY };
        let mut failures = Vec::new();
        for (i, m) in measured.iter().enumerate() {
            let Some(m) = m else { continue };
            let v = pick(m);
            let ok = if lower { v >= bound } else { v <= bound };
            if !ok {
                failures.push(i);
            }
            worst = if lower { worst.min(v) } else { worst.max(v) };
        }
        ConditionResult {
            name,
            worst,
            bound,
            lower,
            failures,
        }
    };

    let conditions = vec![
        collect("homogeneity", HOMOGENEITY_TOL, false, &|m| m.homogeneity),
        collect("smoothness", 0.0, false, &|m| m.smoothness),
        collect("ellipticity", nu * (1.0 - 1e-6), true, &|m| m.ellipticity),
        collect("concavity", CONCAVITY_TOL, false, &|m| m.concavity),
        collect("second-order", c, false, &|m| m.second_order),
        collect("first-order", c, false, &|m| m.first_order),
        collect("growth", c, false, &|m| m.growth),
    ];
    let ellipticity = conditions[2].worst;
    ClassMReport {
        conditions,
        samples: samples.len(),
        invalid_samples: invalid,
        ellipticity,
    }
}
