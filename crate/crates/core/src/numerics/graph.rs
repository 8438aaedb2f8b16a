use crate::error::{Error, Result};
use crate::numerics::kernels as k;
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

/// Handle to a node in a [`Graph`]. Indices are tape positions, so a `Var`
/// is only meaningful for the graph that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, T),
    Sum(Var),
    Ln(Var),
    Clamp(Var, T, T),
    LeakyRelu(Var, T),
    PRelu {
        x: Var,
        slope: Var,
    },
    ChannelNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        // saved forward intermediates: normalized rows and 1/std per channel
        normalized: Tensor<T>,
        inv_std: Vec<T>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    },
    NearestInterp1d(Var),
    ConcatChannels(Vec<Var>),
    SliceChannels {
        x: Var,
        start: usize,
        len: usize,
    },
    FitTime(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "Leaf",
            Op::Add(..) => "Add",
            Op::Sub(..) => "Sub",
            Op::Mul(..) => "Mul",
            Op::Div(..) => "Div",
            Op::Neg(..) => "Neg",
            Op::Scale(..) => "Scale",
            Op::Sum(..) => "Sum",
            Op::Ln(..) => "Ln",
            Op::Clamp(..) => "Clamp",
            Op::LeakyRelu(..) => "LeakyRelu",
            Op::PRelu { .. } => "PRelu",
            Op::ChannelNorm { .. } => "ChannelNorm",
            Op::Conv1d { .. } => "Conv1d",
            Op::ConvTranspose1d { .. } => "ConvTranspose1d",
            Op::Conv2d { .. } => "Conv2d",
            Op::ConvTranspose2d { .. } => "ConvTranspose2d",
            Op::NearestInterp1d(..) => "NearestInterp1d",
            Op::ConcatChannels(..) => "ConcatChannels",
            Op::SliceChannels { .. } => "SliceChannels",
            Op::FitTime(..) => "FitTime",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so
/// the tape itself is a topological order and `backward` is a single
/// reverse sweep. Graphs are built per training example and dropped.
///
/// Persistent gradients live only on leaves: calling [`Graph::backward`]
/// repeatedly accumulates into them (the basis of mini-batch accumulation
/// and of weight sharing, where one leaf feeds many ops).
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf (model parameters, checked inputs).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable leaf (inputs, targets, frozen weights).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- elementwise / reduction ops ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = k::binary_map(self.value(a), self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = k::binary_map(self.value(a), self.value(b), "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Sub(a, b), v, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = k::binary_map(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Mul(a, b), v, rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = k::binary_map(self.value(a), self.value(b), "div", |x, y| x / y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Div(a, b), v, rg))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        let rg = self.rg(&[a]);
        self.push(Op::Neg(a), v, rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(Op::Scale(a, c), v, rg)
    }

    /// Full reduction to a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = T::zero();
        for &x in self.value(a).as_slice() {
            acc += x;
        }
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), Tensor::scalar(acc), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.ln());
        let rg = self.rg(&[a]);
        self.push(Op::Ln(a), v, rg)
    }

    /// Clamp to `[lo, hi]`. Gradient is zero wherever the output saturates,
    /// boundary values included.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let v = self.value(a).map(|x| x.max(lo).min(hi));
        let rg = self.rg(&[a]);
        self.push(Op::Clamp(a, lo, hi), v, rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let v = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { x * slope });
        let rg = self.rg(&[a]);
        self.push(Op::LeakyRelu(a, slope), v, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, T::zero())
    }

    /// Parametric ReLU with a single learned slope (shape `[1]`).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.value(slope).numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "prelu slope",
                expected: vec![1],
                got: self.value(slope).shape().to_vec(),
            });
        }
        let a = self.value(slope).item();
        let v = self
            .value(x)
            .map(|z| if z > T::zero() { z } else { z * a });
        let rg = self.rg(&[x, slope]);
        Ok(self.push(Op::PRelu { x, slope }, v, rg))
    }

    // ---- structured ops ----

    pub fn channel_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (v, normalized, inv_std) =
            k::channel_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            v,
            rg,
        ))
    }

    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let bt = b.map(|bv| self.value(bv).clone());
        let v = k::conv1d(
            self.value(x),
            self.value(w),
            bt.as_ref(),
            stride,
            padding,
            groups,
        )?;
        let mut ins = vec![x, w];
        ins.extend(b);
        let rg = self.rg(&ins);
        Ok(self.push(
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
                groups,
            },
            v,
            rg,
        ))
    }

    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let bt = b.map(|bv| self.value(bv).clone());
        let v = k::conv_transpose1d(self.value(x), self.value(w), bt.as_ref(), stride, padding)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        let rg = self.rg(&ins);
        Ok(self.push(
            Op::ConvTranspose1d {
                x,
                w,
                b,
                stride,
                padding,
            },
            v,
            rg,
        ))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let bt = b.map(|bv| self.value(bv).clone());
        let v = k::conv2d(self.value(x), self.value(w), bt.as_ref(), stride)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        let rg = self.rg(&ins);
        Ok(self.push(Op::Conv2d { x, w, b, stride }, v, rg))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        let bt = b.map(|bv| self.value(bv).clone());
        let v = k::conv_transpose2d(self.value(x), self.value(w), bt.as_ref(), stride)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        let rg = self.rg(&ins);
        Ok(self.push(Op::ConvTranspose2d { x, w, b, stride }, v, rg))
    }

    pub fn nearest_interp1d(&mut self, x: Var, target_len: usize) -> Result<Var> {
        let v = k::nearest_interp1d(self.value(x), target_len)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::NearestInterp1d(x), v, rg))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = k::concat_channels(&tensors)?;
        let rg = self.rg(parts);
        Ok(self.push(Op::ConcatChannels(parts.to_vec()), v, rg))
    }

    /// Rows `[start, start+len)` of a `[C, T]` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || start + len > xv.shape()[0] || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "slice_channels: rows [{start}, {start}+{len}) out of bounds for {:?}",
                xv.shape()
            )));
        }
        let t = xv.shape()[1];
        let data = xv.as_slice()[start * t..(start + len) * t].to_vec();
        let v = Tensor::from_vec(vec![len, t], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::SliceChannels { x, start, len }, v, rg))
    }

    pub fn fit_time(&mut self, x: Var, target: usize) -> Result<Var> {
        let v = k::fit_time(self.value(x), target)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::FitTime(x), v, rg))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar root. Contributions are collected in
    /// per-call buffers and added into leaf `grad`s at the end, so repeated
    /// calls accumulate exactly (mini-batch accumulation), and a leaf used
    /// in several places (weight sharing) receives the sum of all paths.
    ///
    /// Setting `AVLIT_BACKWARD_TIMING` in the environment prints a per-op
    /// wall-time breakdown to stderr after each sweep (performance triage).
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::Numeric(format!(
                "backward root must be a scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Err(Error::Numeric(
                "backward root does not depend on any differentiable leaf".into(),
            ));
        }
        let mut pending: Vec<Option<Vec<T>>> = Vec::with_capacity(root.0 + 1);
        pending.resize_with(root.0 + 1, || None);
        pending[root.0] = Some(vec![T::one()]);

        let timing = std::env::var_os("AVLIT_BACKWARD_TIMING").is_some();
        let mut per_op: std::collections::BTreeMap<&'static str, (f64, u64)> =
            std::collections::BTreeMap::new();
        for i in (0..=root.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let t0 = timing.then(std::time::Instant::now);
            self.propagate(i, &g, &mut pending)?;
            if let Some(t0) = t0 {
                let e = per_op.entry(self.nodes[i].op.name()).or_insert((0.0, 0));
                e.0 += t0.elapsed().as_secs_f64();
                e.1 += 1;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                let numel = node.value.numel();
                let slot = node.grad.get_or_insert_with(|| vec![T::zero(); numel]);
                for (s, gv) in slot.iter_mut().zip(&g) {
                    *s += *gv;
                }
            }
        }
        if timing {
            for (name, (secs, count)) in per_op {
                eprintln!("backward {name:<18} {count:>5} calls {:>9.1} ms", secs * 1e3);
            }
        }
        Ok(())
    }

    fn want(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn send(&self, pending: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
        debug_assert_eq!(contribution.len(), self.nodes[v.0].value.numel());
        match &mut pending[v.0] {
            Some(buf) => {
                for (b, c) in buf.iter_mut().zip(&contribution) {
                    *b += *c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, i: usize, g: &[T], pending: &mut [Option<Vec<T>>]) -> Result<()> {
        let out_shape = self.nodes[i].value.shape().to_vec();
        match &self.nodes[i].op {
            Op::Leaf => {}

            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                if self.want(a) {
                    let r = k::reduce_to_shape(g, &out_shape, self.value(a).shape());
                    self.send(pending, a, r);
                }
                if self.want(b) {
                    let r = k::reduce_to_shape(g, &out_shape, self.value(b).shape());
                    self.send(pending, b, r);
                }
            }

            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                if self.want(a) {
                    let r = k::reduce_to_shape(g, &out_shape, self.value(a).shape());
                    self.send(pending, a, r);
                }
                if self.want(b) {
                    let mut r = k::reduce_to_shape(g, &out_shape, self.value(b).shape());
                    for v in &mut r {
                        *v = -*v;
                    }
                    self.send(pending, b, r);
                }
            }

            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.want(a) {
                    let full = self.expand_mul(g, &out_shape, b);
                    let r = k::reduce_to_shape(&full, &out_shape, self.value(a).shape());
                    self.send(pending, a, r);
                }
                if self.want(b) {
                    let full = self.expand_mul(g, &out_shape, a);
                    let r = k::reduce_to_shape(&full, &out_shape, self.value(b).shape());
                    self.send(pending, b, r);
                }
            }

            Op::Div(a, b) => {
                let (a, b) = (*a, *b);
                // y = a/b: da = g/b ; db = -g*a/b^2, both broadcast-aware.
                if self.want(a) {
                    let binv = self.broadcast_read(b, &out_shape);
                    let full: Vec<T> = g.iter().zip(&binv).map(|(&gv, &bv)| gv / bv).collect();
                    let r = k::reduce_to_shape(&full, &out_shape, self.value(a).shape());
                    self.send(pending, a, r);
                }
                if self.want(b) {
                    let av = self.broadcast_read(a, &out_shape);
                    let bv = self.broadcast_read(b, &out_shape);
                    let full: Vec<T> = g
                        .iter()
                        .zip(av.iter().zip(&bv))
                        .map(|(&gv, (&a_, &b_))| -gv * a_ / (b_ * b_))
                        .collect();
                    let r = k::reduce_to_shape(&full, &out_shape, self.value(b).shape());
                    self.send(pending, b, r);
                }
            }

            Op::Neg(a) => {
                let a = *a;
                if self.want(a) {
                    self.send(pending, a, g.iter().map(|&v| -v).collect());
                }
            }

            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                if self.want(a) {
                    self.send(pending, a, g.iter().map(|&v| v * c).collect());
                }
            }

            Op::Sum(a) => {
                let a = *a;
                if self.want(a) {
                    let n = self.value(a).numel();
                    self.send(pending, a, vec![g[0]; n]);
                }
            }

            Op::Ln(a) => {
                let a = *a;
                if self.want(a) {
                    let x = self.value(a).as_slice();
                    self.send(
                        pending,
                        a,
                        g.iter().zip(x).map(|(&gv, &xv)| gv / xv).collect(),
                    );
                }
            }

            Op::Clamp(a, lo, hi) => {
                let (a, lo, hi) = (*a, *lo, *hi);
                if self.want(a) {
                    let x = self.value(a).as_slice();
                    let dx = g
                        .iter()
                        .zip(x)
                        .map(|(&gv, &xv)| {
                            if xv > lo && xv < hi {
                                gv
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    self.send(pending, a, dx);
                }
            }

            Op::LeakyRelu(a, slope) => {
                let (a, slope) = (*a, *slope);
                if self.want(a) {
                    let x = self.value(a).as_slice();
                    let dx = g
                        .iter()
                        .zip(x)
                        .map(|(&gv, &xv)| if xv > T::zero() { gv } else { gv * slope })
                        .collect();
                    self.send(pending, a, dx);
                }
            }

            Op::PRelu { x, slope } => {
                let (x, slope) = (*x, *slope);
                let a = self.value(slope).item();
                let xv = self.value(x).as_slice();
                if self.want(x) {
                    let dx = g
                        .iter()
                        .zip(xv)
                        .map(|(&gv, &z)| if z > T::zero() { gv } else { gv * a })
                        .collect();
                    self.send(pending, x, dx);
                }
                if self.want(slope) {
                    let mut da = T::zero();
                    for (&gv, &z) in g.iter().zip(xv) {
                        if z <= T::zero() {
                            da += gv * z;
                        }
                    }
                    self.send(pending, slope, vec![da]);
                }
            }

            Op::ChannelNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let (c, t) = (out_shape[0], out_shape[1]);
                let tn = T::from_f64(t as f64);
                let gam = self.value(gamma).as_slice();
                if self.want(x) {
                    let mut dx = vec![T::zero(); c * t];
                    for ci in 0..c {
                        let nrow = normalized.row(ci);
                        let grow = &g[ci * t..(ci + 1) * t];
                        let gc = gam[ci];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for (gv, nv) in grow.iter().zip(nrow) {
                            let dyg = *gv * gc;
                            m1 += dyg;
                            m2 += dyg * *nv;
                        }
                        m1 = m1 / tn;
                        m2 = m2 / tn;
                        let istd = inv_std[ci];
                        let drow = &mut dx[ci * t..(ci + 1) * t];
                        for ((d, gv), nv) in drow.iter_mut().zip(grow).zip(nrow) {
                            *d = istd * (*gv * gc - m1 - *nv * m2);
                        }
                    }
                    self.send(pending, x, dx);
                }
                if self.want(gamma) {
                    let mut dg = vec![T::zero(); c];
                    for ci in 0..c {
                        let nrow = normalized.row(ci);
                        let grow = &g[ci * t..(ci + 1) * t];
                        for (gv, nv) in grow.iter().zip(nrow) {
                            dg[ci] += *gv * *nv;
                        }
                    }
                    self.send(pending, gamma, dg);
                }
                if self.want(beta) {
                    let mut db = vec![T::zero(); c];
                    for ci in 0..c {
                        for gv in &g[ci * t..(ci + 1) * t] {
                            db[ci] += *gv;
                        }
                    }
                    self.send(pending, beta, db);
                }
            }

            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
                groups,
            } => {
                let (x, w, b) = (*x, *w, *b);
                let (stride, padding, groups) = (*stride, *padding, *groups);
                let xv = self.value(x);
                let wv = self.value(w);
                let (cin, t) = (xv.shape()[0], xv.shape()[1]);
                let (cout, cin_g, kk) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                let t_out = out_shape[1];
                let t_pad = t + 2 * padding;
                let cout_g = cout / groups;
                let xp = k::pad_time(xv.as_slice(), cin, t, padding);

                if self.want(x) {
                    let mut dxp = vec![T::zero(); cin * t_pad];
                    for gi in 0..groups {
                        for co in gi * cout_g..(gi + 1) * cout_g {
                            let grow = &g[co * t_out..(co + 1) * t_out];
                            for ci_rel in 0..cin_g {
                                let ci = gi * cin_g + ci_rel;
                                let wrow = &wv.as_slice()[(co * cin_g + ci_rel) * kk..][..kk];
                                let drow = &mut dxp[ci * t_pad..(ci + 1) * t_pad];
                                if stride == 1 {
                                    // one elementwise axpy per tap
                                    for (kx, &wvv) in wrow.iter().enumerate() {
                                        for (d, &gv) in
                                            drow[kx..kx + t_out].iter_mut().zip(grow)
                                        {
                                            *d += gv * wvv;
                                        }
                                    }
                                } else {
                                    for (to, &gv) in grow.iter().enumerate() {
                                        let base = to * stride;
                                        for (kx, &wvv) in wrow.iter().enumerate() {
                                            drow[base + kx] += gv * wvv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let mut dx = vec![T::zero(); cin * t];
                    for ci in 0..cin {
                        dx[ci * t..(ci + 1) * t]
                            .copy_from_slice(&dxp[ci * t_pad + padding..ci * t_pad + padding + t]);
                    }
                    self.send(pending, x, dx);
                }
                if self.want(w) {
                    let mut dw = vec![T::zero(); cout * cin_g * kk];
                    for gi in 0..groups {
                        for co in gi * cout_g..(gi + 1) * cout_g {
                            let grow = &g[co * t_out..(co + 1) * t_out];
                            for ci_rel in 0..cin_g {
                                let ci = gi * cin_g + ci_rel;
                                let xrow = &xp[ci * t_pad..(ci + 1) * t_pad];
                                let dwrow = &mut dw[(co * cin_g + ci_rel) * kk..][..kk];
                                if stride == 1 {
                                    // one windowed dot per tap
                                    for (kx, dwv) in dwrow.iter_mut().enumerate() {
                                        *dwv += k::dot_ilp(grow, &xrow[kx..kx + t_out]);
                                    }
                                } else {
                                    for (kx, dwv) in dwrow.iter_mut().enumerate() {
                                        let mut acc = T::zero();
                                        for (to, &gv) in grow.iter().enumerate() {
                                            acc += gv * xrow[to * stride + kx];
                                        }
                                        *dwv += acc;
                                    }
                                }
                            }
                        }
                    }
                    self.send(pending, w, dw);
                }
                if let Some(b) = b {
                    if self.want(b) {
                        let mut db = vec![T::zero(); cout];
                        for co in 0..cout {
                            for gv in &g[co * t_out..(co + 1) * t_out] {
                                db[co] += *gv;
                            }
                        }
                        self.send(pending, b, db);
                    }
                }
            }

            Op::ConvTranspose1d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (x, w, b) = (*x, *w, *b);
                let (stride, padding) = (*stride, *padding);
                let xv = self.value(x);
                let wv = self.value(w);
                let (cin, t) = (xv.shape()[0], xv.shape()[1]);
                let (cout, kk) = (wv.shape()[1], wv.shape()[2]);
                let t_out = out_shape[1];
                let t_full = (t - 1) * stride + kk;
                // re-embed the output gradient into the unpadded frame
                let mut gfull = vec![T::zero(); cout * t_full];
                for co in 0..cout {
                    gfull[co * t_full + padding..co * t_full + padding + t_out]
                        .copy_from_slice(&g[co * t_out..(co + 1) * t_out]);
                }

                if self.want(x) {
                    let mut dx = vec![T::zero(); cin * t];
                    for ci in 0..cin {
                        for co in 0..cout {
                            let wrow = &wv.as_slice()[(ci * cout + co) * kk..][..kk];
                            let grow = &gfull[co * t_full..(co + 1) * t_full];
                            let drow = &mut dx[ci * t..(ci + 1) * t];
                            for (ti, dv) in drow.iter_mut().enumerate() {
                                let base = ti * stride;
                                let mut acc = T::zero();
                                for (kx, &wvv) in wrow.iter().enumerate() {
                                    acc += grow[base + kx] * wvv;
                                }
                                *dv += acc;
                            }
                        }
                    }
                    self.send(pending, x, dx);
                }
                if self.want(w) {
                    let mut dw = vec![T::zero(); cin * cout * kk];
                    for ci in 0..cin {
                        let xrow = xv.row(ci);
                        for co in 0..cout {
                            let grow = &gfull[co * t_full..(co + 1) * t_full];
                            let dwrow = &mut dw[(ci * cout + co) * kk..][..kk];
                            for (ti, &xvv) in xrow.iter().enumerate() {
                                let base = ti * stride;
                                for (kx, dwv) in dwrow.iter_mut().enumerate() {
                                    *dwv += xvv * grow[base + kx];
                                }
                            }
                        }
                    }
                    self.send(pending, w, dw);
                }
                if let Some(b) = b {
                    if self.want(b) {
                        let mut db = vec![T::zero(); cout];
                        for co in 0..cout {
                            for gv in &g[co * t_out..(co + 1) * t_out] {
                                db[co] += *gv;
                            }
                        }
                        self.send(pending, b, db);
                    }
                }
            }

            Op::Conv2d { x, w, b, stride } => {
                let (x, w, b, stride) = (*x, *w, *b, *stride);
                let xv = self.value(x);
                let wv = self.value(w);
                let (cin, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (cout, kk) = (wv.shape()[0], wv.shape()[2]);
                let (ho, wo) = (out_shape[1], out_shape[2]);

                if self.want(x) {
                    let mut dx = vec![T::zero(); cin * h * wd];
                    for co in 0..cout {
                        for ci in 0..cin {
                            let wbase = (co * cin + ci) * kk * kk;
                            for oy in 0..ho {
                                for ox in 0..wo {
                                    let gv = g[(co * ho + oy) * wo + ox];
                                    for ky in 0..kk {
                                        let drow = ci * h * wd + (oy * stride + ky) * wd + ox * stride;
                                        for kx in 0..kk {
                                            dx[drow + kx] += gv * wv.as_slice()[wbase + ky * kk + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.send(pending, x, dx);
                }
                if self.want(w) {
                    let mut dw = vec![T::zero(); cout * cin * kk * kk];
                    for co in 0..cout {
                        for ci in 0..cin {
                            let wbase = (co * cin + ci) * kk * kk;
                            for oy in 0..ho {
                                for ox in 0..wo {
                                    let gv = g[(co * ho + oy) * wo + ox];
                                    for ky in 0..kk {
                                        let xrow = ci * h * wd + (oy * stride + ky) * wd + ox * stride;
                                        for kx in 0..kk {
                                            dw[wbase + ky * kk + kx] += gv * xv.as_slice()[xrow + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.send(pending, w, dw);
                }
                if let Some(b) = b {
                    if self.want(b) {
                        let mut db = vec![T::zero(); cout];
                        for co in 0..cout {
                            for gv in &g[co * ho * wo..(co + 1) * ho * wo] {
                                db[co] += *gv;
                            }
                        }
                        self.send(pending, b, db);
                    }
                }
            }

            Op::ConvTranspose2d { x, w, b, stride } => {
                let (x, w, b, stride) = (*x, *w, *b, *stride);
                let xv = self.value(x);
                let wv = self.value(w);
                let (cin, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (cout, kk) = (wv.shape()[1], wv.shape()[2]);
                let (ho, wo) = (out_shape[1], out_shape[2]);

                if self.want(x) {
                    let mut dx = vec![T::zero(); cin * h * wd];
                    for ci in 0..cin {
                        for co in 0..cout {
                            let wbase = (ci * cout + co) * kk * kk;
                            for iy in 0..h {
                                for ix in 0..wd {
                                    let mut acc = T::zero();
                                    for ky in 0..kk {
                                        let grow = (co * ho + iy * stride + ky) * wo + ix * stride;
                                        for kx in 0..kk {
                                            acc += g[grow + kx] * wv.as_slice()[wbase + ky * kk + kx];
                                        }
                                    }
                                    dx[(ci * h + iy) * wd + ix] += acc;
                                }
                            }
                        }
                    }
                    self.send(pending, x, dx);
                }
                if self.want(w) {
                    let mut dw = vec![T::zero(); cin * cout * kk * kk];
                    for ci in 0..cin {
                        for co in 0..cout {
                            let wbase = (ci * cout + co) * kk * kk;
                            for iy in 0..h {
                                for ix in 0..wd {
                                    let xvv = xv.as_slice()[(ci * h + iy) * wd + ix];
                                    for ky in 0..kk {
                                        let grow = (co * ho + iy * stride + ky) * wo + ix * stride;
                                        for kx in 0..kk {
                                            dw[wbase + ky * kk + kx] += xvv * g[grow + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.send(pending, w, dw);
                }
                if let Some(b) = b {
                    if self.want(b) {
                        let mut db = vec![T::zero(); cout];
                        for co in 0..cout {
                            for gv in &g[co * ho * wo..(co + 1) * ho * wo] {
                                db[co] += *gv;
                            }
                        }
                        self.send(pending, b, db);
                    }
                }
            }

            Op::NearestInterp1d(x) => {
                let x = *x;
                if self.want(x) {
                    let xv = self.value(x);
                    let (c, t) = (xv.shape()[0], xv.shape()[1]);
                    let target = out_shape[1];
                    let mut dx = vec![T::zero(); c * t];
                    for ci in 0..c {
                        let grow = &g[ci * target..(ci + 1) * target];
                        let drow = &mut dx[ci * t..(ci + 1) * t];
                        for (j, &gv) in grow.iter().enumerate() {
                            drow[k::source_index(j, t, target)] += gv;
                        }
                    }
                    self.send(pending, x, dx);
                }
            }

            Op::ConcatChannels(parts) => {
                let parts = parts.clone();
                let t = out_shape[1];
                let mut offset = 0;
                for p in parts {
                    let c = self.value(p).shape()[0];
                    if self.want(p) {
                        self.send(pending, p, g[offset * t..(offset + c) * t].to_vec());
                    }
                    offset += c;
                }
            }

            Op::SliceChannels { x, start, len } => {
                let (x, start, len) = (*x, *start, *len);
                if self.want(x) {
                    let xv = self.value(x);
                    let (c, t) = (xv.shape()[0], xv.shape()[1]);
                    let mut dx = vec![T::zero(); c * t];
                    dx[start * t..(start + len) * t].copy_from_slice(g);
                    self.send(pending, x, dx);
                }
            }

            Op::FitTime(x) => {
                let x = *x;
                if self.want(x) {
                    let xv = self.value(x);
                    let (c, t) = (xv.shape()[0], xv.shape()[1]);
                    let target = out_shape[1];
                    let keep = t.min(target);
                    let mut dx = vec![T::zero(); c * t];
                    for ci in 0..c {
                        dx[ci * t..ci * t + keep]
                            .copy_from_slice(&g[ci * target..ci * target + keep]);
                    }
                    self.send(pending, x, dx);
                }
            }
        }
        Ok(())
    }

    /// `g * value(other)` with `other` broadcast-read at `out_shape`.
    fn expand_mul(&self, g: &[T], out_shape: &[usize], other: Var) -> Vec<T> {
        let vals = self.broadcast_read(other, out_shape);
        g.iter().zip(&vals).map(|(&gv, &ov)| gv * ov).collect()
    }

    /// Values of `v` expanded (by broadcasting) to `out_shape`.
    fn broadcast_read(&self, v: Var, out_shape: &[usize]) -> Vec<T> {
        let t = self.value(v);
        if t.shape() == out_shape {
            return t.as_slice().to_vec();
        }
        let strides = k::broadcast_strides(t.shape(), out_shape);
        let numel: usize = out_shape.iter().product();
        let mut out = Vec::with_capacity(numel);
        let mut coords = vec![0usize; out_shape.len()];
        for _ in 0..numel {
            let idx: usize = coords.iter().zip(&strides).map(|(c, s)| c * s).sum();
            out.push(t.as_slice()[idx]);
            for d in (0..out_shape.len()).rev() {
                coords[d] += 1;
                if coords[d] < out_shape[d] {
                    break;
                }
                coords[d] = 0;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(vec![data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn product_rule_by_hand() {
        // f = sum(a * b), df/da = b, df/db = a
        let mut g = Graph::new();
        let a = g.param(t1(&[1.0, 2.0, 3.0]));
        let b = g.param(t1(&[4.0, 5.0, 6.0]));
        let p = g.mul(a, b).unwrap();
        let s = g.sum(p);
        assert_eq!(g.value(s).item(), 32.0);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[4.0, 5.0, 6.0]);
        assert_eq!(g.grad(b).unwrap(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn square_via_self_multiplication() {
        // f = sum(x*x): both factor slots feed the same leaf, df/dx = 2x.
        let mut g = Graph::new();
        let x = g.param(t1(&[3.0, -2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0, -4.0]);
    }

    #[test]
    fn repeated_backward_accumulates_exactly() {
        let mut g = Graph::new();
        let x = g.param(t1(&[1.0, 1.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[3.0, 3.0]);
        g.zero_grads();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(t1(&[2.0]));
        let c = g.constant(t1(&[5.0]));
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[5.0]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn broadcast_gradient_reduces() {
        // f = sum(m * s) with s scalar: df/ds = sum(m)
        let mut g = Graph::new();
        let m = g.param(Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let s = g.param(Tensor::scalar(2.0));
        let p = g.mul(m, s).unwrap();
        let out = g.sum(p);
        g.backward(out).unwrap();
        assert_eq!(g.grad(s).unwrap(), &[21.0]);
        assert_eq!(g.grad(m).unwrap(), &[2.0; 6]);
    }

    #[test]
    fn clamp_boundary_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(t1(&[-2.0, -1.0, 0.0, 0.5, 1.0, 2.0]));
        let c = g.clamp(x, -1.0, 1.0);
        let s = g.sum(c);
        g.backward(s).unwrap();
        // gradient passes only strictly inside (-1, 1)
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn shared_weight_receives_sum_of_path_gradients() {
        // Apply the same 1x1 conv twice (y = w*(w*x)): dy/dw = 2*w*sum(x... )
        // checked against the closed form d(w^2 * sx)/dw = 2*w*sx.
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1, 3], vec![1.0, 2.0, 4.0]).unwrap());
        let w = g.param(Tensor::from_vec(vec![1, 1, 1], vec![3.0]).unwrap());
        let h1 = g.conv1d(x, w, None, 1, 0, 1).unwrap();
        let h2 = g.conv1d(h1, w, None, 1, 0, 1).unwrap();
        let s = g.sum(h2);
        g.backward(s).unwrap();
        let sx = 7.0;
        assert_eq!(g.grad(w).unwrap(), &[2.0 * 3.0 * sx]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::new();
        let x = g.param(t1(&[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }
}
