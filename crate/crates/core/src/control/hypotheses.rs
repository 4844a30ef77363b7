//! Sampled audit of the structural hypotheses used by the regularity
//! theory: ellipticity, bounds on the Hamiltonians at zero and on their
//! derivatives, and growth of their space/time derivatives.
//!
//! Space and time derivatives are centred finite differences with step
//! `1e-4`; derivatives in the last variable use the returned argmin.

use super::ModelSpec;
use crate::grid::{TimeField, Vector, MAX_DIM};

const FD_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HypothesisSample {
    pub t: f64,
    pub x: Vector,
    pub p: Vector,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisCheck {
    pub name: &'static str,
    /// Worst sampled constant.
    pub constant: f64,
    /// Declared bound the constant is compared with.
    pub bound: f64,
    /// `true` when the constant must stay above the bound (ellipticity and
    /// the one-sided conditions), `false` when it must stay below.
    pub lower: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
    pub samples: usize,
    pub non_finite_samples: usize,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.non_finite_samples == 0 && self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One line per hypothesis, for run logs.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "hypotheses: {} samples, {} non-finite\n",
            self.samples, self.non_finite_samples
        );
        for c in &self.checks {
            s.push_str(&format!(
                "  {:<8} constant {:>12.6e} {} {:>10.4e}  {}\n",
                c.name,
                c.constant,
                if c.lower { ">=" } else { "<=" },
                c.bound,
                if c.passed { "pass" } else { "FAIL" }
            ));
        }
        s
    }
}

struct Worst {
    name: &'static str,
    value: f64,
    bound: f64,
    lower: bool,
}

impl Worst {
    fn upper(name: &'static str, bound: f64) -> Self {
        Self {
            name,
            value: f64::NEG_INFINITY,
            bound,
            lower: false,
        }
    }
    fn lower(name: &'static str, bound: f64) -> Self {
        Self {
            name,
            value: f64::INFINITY,
            bound,
            lower: true,
        }
    }
    fn push(&mut self, v: f64) {
        if self.lower {
            self.value = self.value.min(v);
        } else {
            self.value = self.value.max(v);
        }
    }
    fn finish(self) -> HypothesisCheck {
        let tol = 1e-9 * (1.0 + self.bound.abs());
        let passed = if self.lower {
            self.value >= self.bound - tol
        } else {
            self.value <= self.bound + tol
        };
        HypothesisCheck {
            name: self.name,
            constant: self.value,
            bound: self.bound,
            lower: self.lower,
            passed,
        }
    }
}

pub fn validate_hypotheses(model: &ModelSpec, samples: &[HypothesisSample]) -> HypothesisReport {
    let h = &model.hamiltonians;
    let d = h.dim();
    let c = model.hypothesis_bound;
    let nu = model.bounds.eta_min();

    let mut hp0 = Worst::lower("hp0", nu);
    let mut hp1 = Worst::upper("hp1", c);
    let mut hp2 = Worst::upper("hp2", model.bounds.drift_bound() + model.bounds.eta_max());
    let mut hp3 = Worst::upper("hp3", c);
    let mut hp4_h1 = Worst::lower("hp4/H1", -c);
    let mut hp4_h2 = Worst::lower("hp4/H2", -c);
    let mut hp5 = Worst::upper("hp5", c);
    let mut hp6 = Worst::upper("hp6", c);
    let mut hp7 = Worst::upper("hp7", c);
    let mut hp12 = Worst::upper("hp12", c);
    let mut non_finite = 0;

    let shift = |x: &Vector, k: usize, s: f64| {
        let mut y = *x;
        y[k] += s;
        y
    };

    for s in samples {
        let finite = s.t.is_finite()
            && s.q.is_finite()
            && s.x.iter().chain(&s.p).all(|v| v.is_finite());
        if !finite {
            non_finite += 1;
            continue;
        }
        let (t, x, p, q) = (s.t, s.x, s.p, s.q);
        let e1 = h.h1(t, &x, &p);
        let e2 = h.h2(t, &x, q);
        let norm = |v: &Vector| v.iter().take(d).map(|a| a * a).sum::<f64>().sqrt();

        hp0.push(e2.derivative);
        let zero = [0.0; MAX_DIM];
        hp1.push(h.h1(t, &x, &zero).value.abs() + h.h2(t, &x, 0.0).value.abs());
        hp2.push(norm(&e1.derivative) + e2.derivative.abs());

        let p_dot: f64 = (0..d).map(|k| e1.derivative[k] * p[k]).sum();
        hp4_h1.push(p_dot - e1.value);
        hp4_h2.push(e2.derivative * q - e2.value);

        let hs = FD_STEP;
        let mut h2_x = [0.0; MAX_DIM];
        let mut h1_x = [0.0; MAX_DIM];
        let mut h2_xx = 0.0f64;
        let mut h1_xx = 0.0f64;
        let mut h2_qx = 0.0f64;
        let mut mixed1 = 0.0f64;
        let mut mixed2 = 0.0f64;
        for k in 0..d {
            let xp = shift(&x, k, hs);
            let xm = shift(&x, k, -hs);
            let (a1, b1) = (h.h1(t, &xp, &p), h.h1(t, &xm, &p));
            let (a2, b2) = (h.h2(t, &xp, q), h.h2(t, &xm, q));
            h1_x[k] = (a1.value - b1.value) / (2.0 * hs);
            h2_x[k] = (a2.value - b2.value) / (2.0 * hs);
            h1_xx = h1_xx.max((a1.value + b1.value - 2.0 * e1.value).abs() / (hs * hs));
            h2_xx = h2_xx.max((a2.value + b2.value - 2.0 * e2.value).abs() / (hs * hs));
            let dq_x = (a2.derivative - b2.derivative) / (2.0 * hs);
            h2_qx = h2_qx.max(dq_x.abs());
            let dp_x: f64 = (0..d)
                .map(|j| (a1.derivative[j] - b1.derivative[j]) / (2.0 * hs) * p[j])
                .sum();
            mixed1 = mixed1.max((dp_x - h1_x[k]).abs());
            mixed2 = mixed2.max((dq_x * q - h2_x[k]).abs());
        }
        let ht = FD_STEP;
        let h1_t = (h.h1(t + ht, &x, &p).value - h.h1(t - ht, &x, &p).value) / (2.0 * ht);
        let h2_t = (h.h2(t + ht, &x, q).value - h.h2(t - ht, &x, q).value) / (2.0 * ht);

        hp3.push(h2_qx);
        hp5.push(mixed1.max(mixed2));
        hp6.push((h1_xx + h1_t.abs()) / (1.0 + norm(&p)));
        hp7.push((h2_xx + h2_t.abs()) / (1.0 + q.abs()));
        hp12.push((norm(&h2_x) + norm(&h1_x)) / (1.0 + norm(&p)));
    }

    let checks = [hp0, hp1, hp2, hp3, hp4_h1, hp4_h2, hp5, hp6, hp7, hp12]
        .into_iter()
        .map(Worst::finish)
        .collect();
    HypothesisReport {
        checks,
        samples: samples.len(),
        non_finite_samples: non_finite,
    }
}

/// Samples `(t, x, D_h u, Laplace_h u)` from a computed field, so the audit
/// covers the arguments the solver actually fed to the Hamiltonians.
pub fn samples_from_field(u: &TimeField, max_samples: usize) -> Vec<HypothesisSample> {
    let grid = u.grid();
    let total = grid.levels() * grid.nodes();
    let stride = (total / max_samples.max(1)).max(1);
    (0..total)
        .step_by(stride)
        .map(|k| {
            let level = k / grid.nodes();
            let node = k % grid.nodes();
            let v = u.level(level);
            HypothesisSample {
                t: grid.time(level),
                x: grid.coords(node),
                p: grid.centered_gradient(v, node),
                q: grid.laplacian(v, node),
            }
        })
        .collect()
}
