use super::{HamiltonianEval, HamiltonianSpec};
use crate::error::{Error, Result};
use crate::grid::{Vector, MAX_DIM};

/// Offsets per axis of the discrete mollifier.
pub const MOLLIFIER_POINTS: usize = 9;

/// A Hamiltonian convolved with the tensor-product bump
/// `(1 - (r/delta)^2)_+` over time, space and the last variable.
///
/// The bump is sampled at `r = delta * k / 5`, `k = -4..=4`, and normalised
/// to unit mass. Evaluations cost `9^(1 + d + d)` base evaluations for `H1`
/// and `9^(2 + d)` for `H2`.
#[derive(Clone, Debug)]
pub struct Mollified {
    pub base: HamiltonianSpec,
    pub delta: f64,
    offsets: [f64; MOLLIFIER_POINTS],
    weights: [f64; MOLLIFIER_POINTS],
}

pub fn mollify_hamiltonian(spec: &HamiltonianSpec, delta: f64) -> Result<HamiltonianSpec> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(
            "mollification radius",
            format!("delta must be positive, got {delta}"),
        ));
    }
    let mut offsets = [0.0; MOLLIFIER_POINTS];
    let mut weights = [0.0; MOLLIFIER_POINTS];
    let half = (MOLLIFIER_POINTS / 2) as i32;
    let denom = (half + 1) as f64;
    for (slot, k) in (-half..=half).enumerate() {
        let r = k as f64 / denom;
        offsets[slot] = delta * r;
        weights[slot] = 1.0 - r * r;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(HamiltonianSpec::Mollified(Box::new(Mollified {
        base: spec.clone(),
        delta,
        offsets,
        weights,
    })))
}

impl Mollified {
    /// Visits every tensor-product offset over `axes` axes.
    fn for_each_offset(&self, axes: usize, mut f: impl FnMut(&[f64], f64)) {
        let mut idx = vec![0usize; axes];
        let mut shift = vec![0.0; axes];
        loop {
            let mut w = 1.0;
            for (a, &k) in idx.iter().enumerate() {
                shift[a] = self.offsets[k];
                w *= self.weights[k];
            }
            f(&shift, w);
            let mut a = 0;
            loop {
                if a == axes {
                    return;
                }
                idx[a] += 1;
                if idx[a] < MOLLIFIER_POINTS {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }

    pub(crate) fn h1(&self, t: f64, x: &Vector, p: &Vector) -> HamiltonianEval<Vector> {
        let d = self.base.dim();
        let mut value = 0.0;
        let mut deriv = [0.0; MAX_DIM];
        self.for_each_offset(1 + 2 * d, |s, w| {
            let mut xs = *x;
            let mut ps = *p;
            for k in 0..d {
                xs[k] -= s[1 + k];
                ps[k] -= s[1 + d + k];
            }
            let e = self.base.h1(t - s[0], &xs, &ps);
            value += w * e.value;
            for k in 0..d {
                deriv[k] += w * e.derivative[k];
            }
        });
        HamiltonianEval {
            value,
            argmin: deriv,
            derivative: deriv,
        }
    }

    pub(crate) fn h2(&self, t: f64, x: &Vector, q: f64) -> HamiltonianEval<f64> {
        let d = self.base.dim();
        let mut value = 0.0;
        let mut deriv = 0.0;
        self.for_each_offset(2 + d, |s, w| {
            let mut xs = *x;
            for k in 0..d {
                xs[k] -= s[1 + k];
            }
            let e = self.base.h2(t - s[0], &xs, q - s[1 + d]);
            value += w * e.value;
            deriv += w * e.derivative;
        });
        HamiltonianEval {
            value,
            argmin: deriv,
            derivative: deriv,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{DiffusionCost, DriftCost, Tabulated};

    const X: Vector = [0.7, 0.0];

    /// Two diffusion controls; `H2 = min(0.5 q + 1.5, 2 q)` has a kink at q = 1.
    fn kinked() -> HamiltonianSpec {
        HamiltonianSpec::tabulated(Tabulated {
            dim: 1,
            drift_controls: vec![[0.0; 2]],
            eta_controls: vec![0.5, 2.0],
            drift_cost: DriftCost::Zero,
            diffusion_cost: DiffusionCost::Quadratic {
                weight: 2.0 / 3.0,
                center: 2.0,
            },
        })
        .unwrap()
    }

    #[test]
    fn rejects_nonpositive_radius() {
        let h = HamiltonianSpec::model_a();
        assert!(mollify_hamiltonian(&h, 0.0).is_err());
        assert!(mollify_hamiltonian(&h, -1.0).is_err());
        assert!(mollify_hamiltonian(&h, f64::NAN).is_err());
    }

    #[test]
    fn small_radius_reproduces_smooth_model() {
        let h = HamiltonianSpec::model_a();
        let m = mollify_hamiltonian(&h, 1e-3).unwrap();
        for &q in &[-6.0, -1.3, 0.0, 0.4, 1.0, 1.9, 7.5] {
            let a = h.h2(0.2, &X, q).value;
            let b = m.h2(0.2, &X, q).value;
            assert!((a - b).abs() < 1e-6, "q={q}: {a} vs {b}");
        }
        for &p in &[-3.0, -0.5, 0.0, 0.8, 2.0] {
            let a = h.h1(0.2, &X, &[p, 0.0]).value;
            let b = m.h1(0.2, &X, &[p, 0.0]).value;
            assert!((a - b).abs() < 1e-6, "p={p}: {a} vs {b}");
        }
    }

    #[test]
    fn constant_hamiltonian_is_unchanged() {
        // one control of each kind with constant cost -> H1 = 0.3, H2 = q + 0.2
        let h = HamiltonianSpec::tabulated(Tabulated {
            dim: 1,
            drift_controls: vec![[0.0; 2]],
            eta_controls: vec![1.0],
            drift_cost: DriftCost::Custom(std::sync::Arc::new(|_, _, _| 0.3)),
            diffusion_cost: DiffusionCost::Custom(std::sync::Arc::new(|_, _, _| 0.2)),
        })
        .unwrap();
        let m = mollify_hamiltonian(&h, 0.5).unwrap();
        assert!((m.h1(0.1, &X, &[1.0, 0.0]).value - 0.3).abs() < 1e-14);
        // linear in q: the symmetric kernel reproduces it
        assert!((m.h2(0.1, &X, 0.4).value - 0.6).abs() < 1e-14);
    }

    #[test]
    fn kink_is_smoothed_between_one_sided_slopes() {
        let delta = 0.1;
        let h = kinked();
        assert!((h.h2(0.0, &X, 1.0 - 1e-9).derivative - 2.0).abs() < 1e-12);
        assert!((h.h2(0.0, &X, 1.0 + 1e-9).derivative - 0.5).abs() < 1e-12);

        let m = mollify_hamiltonian(&h, delta).unwrap();
        // the full radius sits on one side of the kink
        assert!((m.h2(0.0, &X, 1.0 - delta).derivative - 2.0).abs() < 1e-12);
        assert!((m.h2(0.0, &X, 1.0 + delta).derivative - 0.5).abs() < 1e-12);

        let at_kink = m.h2(0.0, &X, 1.0).derivative;
        assert!(at_kink > 0.5 && at_kink < 2.0);

        // derivative is nonincreasing across the kink and its largest jump is
        // a single kernel weight times the original jump
        let Mollified { weights, .. } = match &m {
            HamiltonianSpec::Mollified(b) => (**b).clone(),
            _ => unreachable!(),
        };
        let max_w = weights.iter().cloned().fold(0.0, f64::max);
        let mut prev = m.h2(0.0, &X, 1.0 - delta).derivative;
        let steps = 2000;
        let mut max_jump: f64 = 0.0;
        for k in 1..=steps {
            let q = 1.0 - delta + 2.0 * delta * k as f64 / steps as f64;
            let d = m.h2(0.0, &X, q).derivative;
            assert!(d <= prev + 1e-12);
            max_jump = max_jump.max(prev - d);
            prev = d;
        }
        assert!(max_jump <= max_w * 1.5 + 1e-12);
        assert!(max_jump < 1.5 * 0.5);

        // values stay between the two one-sided affine pieces' envelope
        for &q in &[0.95, 1.0, 1.05] {
            let v = m.h2(0.0, &X, q).value;
            let upper = (0.5 * q + 1.5).min(2.0 * q);
            assert!(v <= upper + 1e-12);
            assert!(v >= upper - 2.0 * delta);
        }
    }
}
