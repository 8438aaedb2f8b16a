use crate::error::Result;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Finite-difference verification of reverse-mode gradients, always in f64.
///
/// A builder closure maps leaf `Var`s to a scalar root; the checker compares
/// the tape's gradients against central differences and reports the worst
/// relative error. Leaf magnitudes are sampled in `[min_magnitude, 1)` so
/// random points never sit within `step` of an activation kink.
pub struct GradCheck {
    pub step: f64,
    pub denom_floor: f64,
    pub min_magnitude: f64,
    pub signed: bool,
    pub seed: u64,
}

impl GradCheck {
    pub fn new(seed: u64) -> Self {
        GradCheck {
            step: 1e-5,
            denom_floor: 1e-3,
            min_magnitude: 0.3,
            signed: true,
            seed,
        }
    }

    /// Positive-only leaf values (for `ln` and friends).
    pub fn positive(mut self) -> Self {
        self.signed = false;
        self
    }

    /// Sample leaves, then compare gradients. Returns the max relative error.
    pub fn run<F>(&self, shapes: &[&[usize]], build: F) -> Result<f64>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let base: Vec<Tensor<f64>> = shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let data = (0..n)
                    .map(|_| {
                        let mag = rng.gen_range(self.min_magnitude..1.0);
                        if self.signed && rng.gen_bool(0.5) {
                            -mag
                        } else {
                            mag
                        }
                    })
                    .collect();
                Tensor::from_vec(s.to_vec(), data).unwrap()
            })
            .collect();
        self.run_at(&base, build)
    }

    /// Compare gradients at a caller-chosen point.
    pub fn run_at<F>(&self, base: &[Tensor<f64>], build: F) -> Result<f64>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        // analytic pass
        let mut g = Graph::new();
        let vars: Vec<Var> = base.iter().map(|t| g.param(t.clone())).collect();
        let root = build(&mut g, &vars)?;
        g.backward(root)?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .zip(base)
            .map(|(&v, t)| {
                g.grad(v)
                    .map(|s| s.to_vec())
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect();

        let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
            let mut g = Graph::new();
            let vars: Vec<Var> = tensors.iter().map(|t| g.param(t.clone())).collect();
            let root = build(&mut g, &vars)?;
            Ok(g.value(root).item())
        };

        let mut worst = 0.0f64;
        let mut point = base.to_vec();
        for (li, grads) in analytic.iter().enumerate() {
            for ei in 0..grads.len() {
                let orig = point[li].as_slice()[ei];
                point[li].as_mut_slice()[ei] = orig + self.step;
                let fp = eval(&point)?;
                point[li].as_mut_slice()[ei] = orig - self.step;
                let fm = eval(&point)?;
                point[li].as_mut_slice()[ei] = orig;
                let numeric = (fp - fm) / (2.0 * self.step);
                worst = worst.max(rel_err(grads[ei], numeric, self.denom_floor));
            }
        }
        Ok(worst)
    }
}

/// `|a - b| / max(|a|, |b|, floor)`: relative where the gradients are
/// significant, absolute (scaled by `1/floor`) where both are tiny.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst pairwise error across two gradient slices.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n, floor))
        .fold(0.0, f64::max)
}
