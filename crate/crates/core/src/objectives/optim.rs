//! AdamW with decoupled weight decay, plus gradient pooling across items.
//!
//! Gradients are pooled in f64 regardless of the model scalar type: per-item
//! backward passes accumulate into a [`GradBuffer`], the optimizer consumes
//! the mean. Frozen parameters take no moments and are never touched.

use crate::error::{Error, Result};
use crate::numerics::graph::Graph;
use crate::params::{ParamStore, ParamVars};
use crate::numerics::scalar::Scalar;

/// Step-decay schedule: the base rate divided by 3 once per `period` epochs.
pub fn lr_at(base: f64, epoch: usize, period: usize) -> f64 {
    let period = period.max(1);
    base / 3f64.powi((epoch / period) as i32)
}

/// Gradient sums aligned with a store's parameter list (frozen entries
/// stay empty). `accumulate` adds one item's gradients; the optimizer
/// divides by the item count.
pub struct GradBuffer {
    sums: Vec<Vec<f64>>,
    count: u64,
}

impl GradBuffer {
    pub fn new<T: Scalar>(store: &ParamStore<T>) -> Self {
        let sums = store
            .defs()
            .iter()
            .map(|d| {
                if d.trainable {
                    vec![0.0; d.numel()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        GradBuffer { sums, count: 0 }
    }

    pub fn zero(&mut self) {
        for s in &mut self.sums {
            s.fill(0.0);
        }
        self.count = 0;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Add one backward pass's gradients. A trainable parameter absent from
    /// the graph's reachable set (e.g. the video branch on an audio-only
    /// item) contributes zero. Non-finite gradients are an error.
    pub fn accumulate<T: Scalar>(
        &mut self,
        store: &ParamStore<T>,
        vars: &ParamVars,
        g: &Graph<T>,
    ) -> Result<()> {
        for (def, sum) in store.defs().iter().zip(&mut self.sums) {
            if !def.trainable {
                continue;
            }
            if let Some(grad) = g.grad(vars.var(&def.name)) {
                for (s, &gv) in sum.iter_mut().zip(grad) {
                    let gv = gv.to_f64v();
                    if !gv.is_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite gradient in {}",
                            def.name
                        )));
                    }
                    *s += gv;
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    /// L2 norm of the mean gradient across all trainable parameters.
    pub fn mean_global_norm(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let scale = 1.0 / self.count as f64;
        let sq: f64 = self
            .sums
            .iter()
            .flat_map(|s| s.iter())
            .map(|&v| (v * scale) * (v * scale))
            .sum();
        sq.sqrt()
    }

    /// Rescale so the mean gradient's global norm is at most `max`.
    /// Returns the norm before clipping.
    pub fn clip_mean_norm(&mut self, max: f64) -> f64 {
        let norm = self.mean_global_norm();
        if norm > max {
            let factor = max / norm;
            for s in &mut self.sums {
                for v in s.iter_mut() {
                    *v *= factor;
                }
            }
        }
        norm
    }
}

/// AdamW: Adam moments on the mean gradient, weight decay applied
/// directly to the weights (decoupled from the adaptive step).
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Scalar>(store: &ParamStore<T>, lr: f64, weight_decay: f64) -> Self {
        let moments = |_| {
            store
                .defs()
                .iter()
                .map(|d| {
                    if d.trainable {
                        vec![0.0; d.numel()]
                    } else {
                        Vec::new()
                    }
                })
                .collect::<Vec<_>>()
        };
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: moments(0),
            v: moments(1),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update from the buffer's mean gradient.
    pub fn step<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &GradBuffer,
    ) -> Result<()> {
        if grads.count == 0 {
            return Err(Error::InvalidArgument(
                "optimizer step with no accumulated gradients".into(),
            ));
        }
        if grads.sums.len() != self.m.len() {
            return Err(Error::InvalidArgument(
                "gradient buffer does not match the optimizer's parameter list".into(),
            ));
        }
        self.step += 1;
        let mean_scale = 1.0 / grads.count as f64;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let defs: Vec<_> = store.defs().to_vec();
        for (i, def) in defs.iter().enumerate() {
            if !def.trainable {
                continue;
            }
            let w = store.get_mut(&def.name).as_mut_slice();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let sums = &grads.sums[i];
            for j in 0..w.len() {
                let g = sums[j] * mean_scale;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let w0 = w[j].to_f64v();
                let w1 = w0
                    - self.lr * m_hat / (v_hat.sqrt() + self.eps)
                    - self.lr * self.weight_decay * w0;
                w[j] = T::from_f64(w1);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;
    use crate::params::{Init, ParamDef};

    fn one_param_store(w0: f64) -> ParamStore<f64> {
        ParamStore::from_values(
            vec![ParamDef::new("w", vec![1], Init::Constant(0.0))],
            vec![Tensor::from_vec(vec![1], vec![w0]).unwrap()],
        )
        .unwrap()
    }

    fn buffer_with(store: &ParamStore<f64>, grad: f64) -> GradBuffer {
        let mut g = Graph::<f64>::new();
        let vars = store.load_into(&mut g);
        let w = vars.var("w");
        let c = g.constant(Tensor::from_vec(vec![1], vec![grad]).unwrap());
        let loss = g.mul(w, c).unwrap();
        let loss = g.sum(loss);
        g.backward(loss).unwrap();
        let mut buf = GradBuffer::new(store);
        buf.accumulate(store, &vars, &g).unwrap();
        buf
    }

    // First step by hand: m = 0.05, v = 2.5e-4, bias-corrected back to
    // (0.5, 0.25), so the update is lr * 0.5/(0.5 + 1e-8) ~= lr.
    #[test]
    fn first_step_matches_hand_computation() {
        let mut store = one_param_store(1.0);
        let buf = buffer_with(&store, 0.5);
        let mut opt = AdamW::new(&store, 0.1, 0.0);
        opt.step(&mut store, &buf).unwrap();
        let w = store.get("w").as_slice()[0];
        let expect = 1.0 - 0.1 * (0.5 / (0.25f64.sqrt() + 1e-8));
        assert!((w - expect).abs() < 1e-15, "w {w} expect {expect}");

        // decoupled decay subtracts lr*wd*w0 on top
        let mut store = one_param_store(1.0);
        let buf = buffer_with(&store, 0.5);
        let mut opt = AdamW::new(&store, 0.1, 0.01);
        opt.step(&mut store, &buf).unwrap();
        let w = store.get("w").as_slice()[0];
        assert!((w - (expect - 0.1 * 0.01 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn mean_over_accumulations() {
        let store = one_param_store(1.0);
        let mut buf = GradBuffer::new(&store);
        for grad in [1.0, 3.0] {
            let mut g = Graph::<f64>::new();
            let vars = store.load_into(&mut g);
            let w = vars.var("w");
            let c = g.constant(Tensor::from_vec(vec![1], vec![grad]).unwrap());
            let loss = g.mul(w, c).unwrap();
            let loss = g.sum(loss);
            g.backward(loss).unwrap();
            buf.accumulate(&store, &vars, &g).unwrap();
        }
        assert_eq!(buf.count(), 2);
        // mean grad = 2.0
        assert!((buf.mean_global_norm() - 2.0).abs() < 1e-12);
        let pre = buf.clip_mean_norm(0.5);
        assert!((pre - 2.0).abs() < 1e-12);
        assert!((buf.mean_global_norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut store = one_param_store(-2.0);
        let mut opt = AdamW::new(&store, 0.1, 0.0);
        for _ in 0..300 {
            let mut g = Graph::<f64>::new();
            let vars = store.load_into(&mut g);
            let w = vars.var("w");
            let three = g.constant(Tensor::from_vec(vec![1], vec![3.0]).unwrap());
            let d = g.sub(w, three).unwrap();
            let sq = g.mul(d, d).unwrap();
            let loss = g.sum(sq);
            g.backward(loss).unwrap();
            let mut buf = GradBuffer::new(&store);
            buf.accumulate(&store, &vars, &g).unwrap();
            opt.step(&mut store, &buf).unwrap();
        }
        let w = store.get("w").as_slice()[0];
        assert!((w - 3.0).abs() < 1e-2, "w {w}");
    }

    #[test]
    fn frozen_parameters_never_move() {
        let mut store = ParamStore::<f64>::from_values(
            vec![
                ParamDef::new("w", vec![1], Init::Constant(0.0)),
                ParamDef::new("fixed", vec![2], Init::Constant(0.0)).frozen(),
            ],
            vec![
                Tensor::from_vec(vec![1], vec![1.0]).unwrap(),
                Tensor::from_vec(vec![2], vec![5.0, -5.0]).unwrap(),
            ],
        )
        .unwrap();
        let mut g = Graph::<f64>::new();
        let vars = store.load_into(&mut g);
        let w = vars.var("w");
        let f = vars.var("fixed");
        let wf = g.mul(w, f).unwrap();
        let loss = g.sum(wf);
        g.backward(loss).unwrap();
        let mut buf = GradBuffer::new(&store);
        buf.accumulate(&store, &vars, &g).unwrap();
        let mut opt = AdamW::new(&store, 0.1, 0.1);
        opt.step(&mut store, &buf).unwrap();
        assert_eq!(store.get("fixed").as_slice(), &[5.0, -5.0]);
        assert!(store.get("w").as_slice()[0] != 1.0);
    }

    #[test]
    fn schedule_divides_by_three() {
        assert_eq!(lr_at(9e-3, 0, 8), 9e-3);
        assert_eq!(lr_at(9e-3, 7, 8), 9e-3);
        assert!((lr_at(9e-3, 8, 8) - 3e-3).abs() < 1e-18);
        assert!((lr_at(9e-3, 16, 8) - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        let store = one_param_store(1.0);
        let mut g = Graph::<f64>::new();
        let vars = store.load_into(&mut g);
        let w = vars.var("w");
        let c = g.constant(Tensor::from_vec(vec![1], vec![f64::INFINITY]).unwrap());
        let loss = g.mul(w, c).unwrap();
        let loss = g.sum(loss);
        g.backward(loss).unwrap();
        let mut buf = GradBuffer::new(&store);
        assert!(buf.accumulate(&store, &vars, &g).is_err());
    }
}
