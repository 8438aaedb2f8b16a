//! The recurrent separator block: an asymmetric multi-scale
//! fully-recurrent convolutional unit. One block owns one set of weights
//! and is applied repeatedly; everything here is shape-preserving
//! (`[io, T]` in, `[io, T]` out) so iterations compose.
//!
//! Structure per application:
//!   entry:  1x1 conv io->B, 1x1 conv B->C, norm, PReLU          -> X_0
//!   pyramid: S-1 times depthwise conv (k=5, stride 2, pad 2),
//!            norm, PReLU                                        -> X_1..X_{S-1}
//!   adjacent fusion at scale s: concat[ down(X_{s-1}), X_s, up(X_{s+1}) ]
//!            -> 1x1 conv (2C or 3C)->C, norm, PReLU             -> Y_s
//!   global fusion: upsample all Y_s to L_0, concat -> 1x1 conv S*C->C,
//!            norm, PReLU; then 1x1 conv C->B, PReLU; 1x1 conv B->io
//!   residual: output added to the block input.
//!
//! Downsampling halves lengths with ceil rounding; upsampling is nearest
//! neighbour. Concatenation order (coarser-from-below, same-scale,
//! finer-from-above) is fixed and is part of the weight layout.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::scalar::Scalar;
use crate::params::{Init, ParamDef, ParamVars};
use crate::profiler::CostRow;

/// Kernel width of the strided depthwise downsampling convs.
pub const DOWN_KERNEL: usize = 5;
/// Epsilon inside every normalization in the network.
pub const NORM_EPS: f64 = 1e-8;
/// Initial slope of every learned PReLU.
pub const PRELU_INIT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockConfig {
    /// Channels at the block boundary (input and output).
    pub io: usize,
    /// Bottleneck width used on entry and exit.
    pub bottleneck: usize,
    /// Working width of the pyramid.
    pub channels: usize,
    /// Number of scales (1 = no pyramid).
    pub stages: usize,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.io == 0 || self.bottleneck == 0 || self.channels == 0 || self.stages == 0 {
            return Err(Error::Config(format!(
                "block dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Time length at every scale for an input of length `t0`
    /// (strided conv with k=5, stride 2, pad 2 maps L to ceil(L/2)).
    pub fn scale_lengths(&self, t0: usize) -> Vec<usize> {
        let mut lens = Vec::with_capacity(self.stages);
        let mut l = t0;
        for _ in 0..self.stages {
            lens.push(l);
            l = l.div_ceil(2);
        }
        lens
    }

    /// Number of concatenated C-wide inputs to the fusion conv at scale `s`.
    fn fuse_multiplicity(&self, s: usize) -> usize {
        let mut k = 1; // own scale
        if s > 0 {
            k += 1; // downsampled neighbour from above
        }
        if s + 1 < self.stages {
            k += 1; // upsampled neighbour from below
        }
        k
    }

    /// Parameter declarations, in canonical order, under `prefix`.
    pub fn param_defs(&self, prefix: &str) -> Vec<ParamDef> {
        let (io, b, c, s_n) = (self.io, self.bottleneck, self.channels, self.stages);
        fn conv(defs: &mut Vec<ParamDef>, name: String, cout: usize, cin: usize, k: usize) {
            defs.push(ParamDef::new(
                format!("{name}.w"),
                vec![cout, cin, k],
                Init::UniformFanIn(cin * k),
            ));
            defs.push(ParamDef::new(
                format!("{name}.b"),
                vec![cout],
                Init::UniformFanIn(cin * k),
            ));
        }
        let mut defs = Vec::new();
        conv(&mut defs, format!("{prefix}entry_in"), b, io, 1);
        conv(&mut defs, format!("{prefix}entry_mid"), c, b, 1);
        push_norm_act(&mut defs, &format!("{prefix}entry"), c);
        for s in 1..s_n {
            conv(&mut defs, format!("{prefix}down{s}"), c, 1, DOWN_KERNEL); // depthwise
            push_norm_act(&mut defs, &format!("{prefix}down{s}"), c);
        }
        for s in 1..s_n {
            conv(&mut defs, format!("{prefix}fuse{s}.down"), c, 1, DOWN_KERNEL); // depthwise
        }
        for s in 0..s_n {
            conv(
                &mut defs,
                format!("{prefix}fuse{s}.proj"),
                c,
                self.fuse_multiplicity(s) * c,
                1,
            );
            push_norm_act(&mut defs, &format!("{prefix}fuse{s}"), c);
        }
        conv(&mut defs, format!("{prefix}global.proj"), c, s_n * c, 1);
        push_norm_act(&mut defs, &format!("{prefix}global"), c);
        conv(&mut defs, format!("{prefix}out_mid"), b, c, 1);
        defs.push(ParamDef::new(
            format!("{prefix}out_mid.act"),
            vec![1],
            Init::Constant(PRELU_INIT),
        ));
        conv(&mut defs, format!("{prefix}out"), io, b, 1);
        defs
    }

    /// Closed-form parameter count; must equal the sum over `param_defs`.
    pub fn param_count(&self) -> u64 {
        let (io, b, c, s_n) = (
            self.io as u64,
            self.bottleneck as u64,
            self.channels as u64,
            self.stages as u64,
        );
        let kd = DOWN_KERNEL as u64;
        let norm_act = 2 * c + 1;
        let entry = io * b + b + b * c + c + norm_act;
        let downs = (s_n - 1) * (kd * c + c + norm_act);
        let fusedown = (s_n - 1) * (kd * c + c);
        let fuse: u64 = (0..self.stages)
            .map(|s| self.fuse_multiplicity(s) as u64 * c * c + c + norm_act)
            .sum();
        let global = s_n * c * c + c + norm_act;
        let out_mid = c * b + b + 1;
        let out = b * io + io;
        entry + downs + fusedown + fuse + global + out_mid + out
    }

    /// Analytic per-layer costs of one block application on input length
    /// `t0`. MACs follow the kernel accounting: K*(Cin/groups)*Cout*T_out
    /// for convs, 2*numel for norms, nothing for activations/adds/interps.
    pub fn cost_rows(&self, prefix: &str, t0: usize) -> Vec<CostRow> {
        let (io, b, c) = (self.io as u64, self.bottleneck as u64, self.channels as u64);
        let kd = DOWN_KERNEL as u64;
        let lens: Vec<u64> = self.scale_lengths(t0).iter().map(|&l| l as u64).collect();
        let l0 = lens[0];
        let mut rows = Vec::new();
        rows.push(CostRow::new(
            format!("{prefix}entry"),
            io * b * l0 + b * c * l0 + 2 * c * l0,
            (io * b + b) + (b * c + c) + 2 * c + 1,
            (b + 3 * c) * l0,
        ));
        for s in 1..self.stages {
            let l = lens[s];
            rows.push(CostRow::new(
                format!("{prefix}down{s}"),
                kd * c * l + 2 * c * l,
                kd * c + c + 2 * c + 1,
                3 * c * l,
            ));
        }
        for s in 0..self.stages {
            let l = lens[s];
            let m = self.fuse_multiplicity(s) as u64;
            let down_macs = if s > 0 { kd * c * l } else { 0 };
            let down_params = if s > 0 { kd * c + c } else { 0 };
            rows.push(CostRow::new(
                format!("{prefix}fuse{s}"),
                down_macs + m * c * c * l + 2 * c * l,
                down_params + m * c * c + c + 2 * c + 1,
                (m + 3) * c * l,
            ));
        }
        rows.push(CostRow::new(
            format!("{prefix}global"),
            self.stages as u64 * c * c * l0 + 2 * c * l0,
            self.stages as u64 * c * c + c + 2 * c + 1,
            (self.stages as u64 + 3) * c * l0,
        ));
        rows.push(CostRow::new(
            format!("{prefix}out"),
            c * b * l0 + b * io * l0,
            (c * b + b + 1) + (b * io + io),
            (2 * b + 2 * io) * l0,
        ));
        rows
    }
}

fn push_norm_act(defs: &mut Vec<ParamDef>, name: &str, c: usize) {
    defs.push(ParamDef::new(
        format!("{name}.norm.g"),
        vec![c],
        Init::Constant(1.0),
    ));
    defs.push(ParamDef::new(
        format!("{name}.norm.b"),
        vec![c],
        Init::Constant(0.0),
    ));
    defs.push(ParamDef::new(
        format!("{name}.act"),
        vec![1],
        Init::Constant(PRELU_INIT),
    ));
}

struct ConvNormAct {
    w: Var,
    b: Var,
    ng: Var,
    nb: Var,
    act: Var,
}

/// Graph handles for one block's weights, resolved once per graph build.
pub struct BlockVars {
    entry_in: (Var, Var),
    entry_mid: (Var, Var),
    entry_norm: (Var, Var, Var),
    downs: Vec<ConvNormAct>,
    fuse_down: Vec<(Var, Var)>,
    fuse: Vec<ConvNormAct>,
    global: ConvNormAct,
    out_mid: (Var, Var, Var),
    out: (Var, Var),
}

impl BlockVars {
    pub fn resolve(vars: &ParamVars, prefix: &str, cfg: &BlockConfig) -> BlockVars {
        let v = |n: String| vars.var(&n);
        let cna = |name: String| ConvNormAct {
            w: v(format!("{name}.proj.w")),
            b: v(format!("{name}.proj.b")),
            ng: v(format!("{name}.norm.g")),
            nb: v(format!("{name}.norm.b")),
            act: v(format!("{name}.act")),
        };
        BlockVars {
            entry_in: (
                v(format!("{prefix}entry_in.w")),
                v(format!("{prefix}entry_in.b")),
            ),
            entry_mid: (
                v(format!("{prefix}entry_mid.w")),
                v(format!("{prefix}entry_mid.b")),
            ),
            entry_norm: (
                v(format!("{prefix}entry.norm.g")),
                v(format!("{prefix}entry.norm.b")),
                v(format!("{prefix}entry.act")),
            ),
            downs: (1..cfg.stages)
                .map(|s| ConvNormAct {
                    w: v(format!("{prefix}down{s}.w")),
                    b: v(format!("{prefix}down{s}.b")),
                    ng: v(format!("{prefix}down{s}.norm.g")),
                    nb: v(format!("{prefix}down{s}.norm.b")),
                    act: v(format!("{prefix}down{s}.act")),
                })
                .collect(),
            fuse_down: (1..cfg.stages)
                .map(|s| {
                    (
                        v(format!("{prefix}fuse{s}.down.w")),
                        v(format!("{prefix}fuse{s}.down.b")),
                    )
                })
                .collect(),
            fuse: (0..cfg.stages)
                .map(|s| cna(format!("{prefix}fuse{s}")))
                .collect(),
            global: cna(format!("{prefix}global")),
            out_mid: (
                v(format!("{prefix}out_mid.w")),
                v(format!("{prefix}out_mid.b")),
                v(format!("{prefix}out_mid.act")),
            ),
            out: (v(format!("{prefix}out.w")), v(format!("{prefix}out.b"))),
        }
    }
}

/// One application of the block: `[io, T] -> [io, T]`.
pub fn block_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    bv: &BlockVars,
    cfg: &BlockConfig,
) -> Result<Var> {
    cfg.validate()?;
    let t0 = g.value(x).shape()[1];
    let lens = cfg.scale_lengths(t0);
    let s_n = cfg.stages;
    let channels = g.value(x).shape()[0];
    if channels != cfg.io {
        return Err(Error::ShapeMismatch {
            op: "block_forward",
            expected: vec![cfg.io, t0],
            got: g.value(x).shape().to_vec(),
        });
    }

    let norm_act = |g: &mut Graph<T>, h: Var, ng: Var, nb: Var, act: Var| -> Result<Var> {
        let n = g.channel_norm(h, ng, nb, NORM_EPS)?;
        g.prelu(n, act)
    };

    // entry
    let h = g.conv1d(x, bv.entry_in.0, Some(bv.entry_in.1), 1, 0, 1)?;
    let h = g.conv1d(h, bv.entry_mid.0, Some(bv.entry_mid.1), 1, 0, 1)?;
    let x0 = norm_act(g, h, bv.entry_norm.0, bv.entry_norm.1, bv.entry_norm.2)?;

    // pyramid
    let mut xs = vec![x0];
    for d in &bv.downs {
        let prev = *xs.last().unwrap();
        let h = g.conv1d(prev, d.w, Some(d.b), 2, 2, cfg.channels)?;
        xs.push(norm_act(g, h, d.ng, d.nb, d.act)?);
    }

    // adjacent fusion
    let mut fused = Vec::with_capacity(s_n);
    for s in 0..s_n {
        let mut parts = Vec::new();
        if s > 0 {
            let (w, b) = bv.fuse_down[s - 1];
            parts.push(g.conv1d(xs[s - 1], w, Some(b), 2, 2, cfg.channels)?);
        }
        parts.push(xs[s]);
        if s + 1 < s_n {
            parts.push(g.nearest_interp1d(xs[s + 1], lens[s])?);
        }
        let cat = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_channels(&parts)?
        };
        let f = &bv.fuse[s];
        let h = g.conv1d(cat, f.w, Some(f.b), 1, 0, 1)?;
        fused.push(norm_act(g, h, f.ng, f.nb, f.act)?);
    }

    // global fusion at full resolution
    let mut ups = Vec::with_capacity(s_n);
    for (s, &f) in fused.iter().enumerate() {
        ups.push(if lens[s] == lens[0] {
            f
        } else {
            g.nearest_interp1d(f, lens[0])?
        });
    }
    let cat = if ups.len() == 1 {
        ups[0]
    } else {
        g.concat_channels(&ups)?
    };
    let h = g.conv1d(cat, bv.global.w, Some(bv.global.b), 1, 0, 1)?;
    let h = norm_act(g, h, bv.global.ng, bv.global.nb, bv.global.act)?;
    let h = g.conv1d(h, bv.out_mid.0, Some(bv.out_mid.1), 1, 0, 1)?;
    let h = g.prelu(h, bv.out_mid.2)?;
    let h = g.conv1d(h, bv.out.0, Some(bv.out.1), 1, 0, 1)?;

    g.add(x, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;
    use crate::params::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_input(c: usize, t: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(vec![c, t], (0..c * t).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn run_block(cfg: &BlockConfig, x: &Tensor<f64>, seed: u64) -> Tensor<f64> {
        let store = ParamStore::<f64>::init(cfg.param_defs("blk."), seed).unwrap();
        let mut g = Graph::new();
        let vars = store.load_into(&mut g);
        let bv = BlockVars::resolve(&vars, "blk.", cfg);
        let xv = g.constant(x.clone());
        let y = block_forward(&mut g, xv, &bv, cfg).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn scale_lengths_halve_with_ceil() {
        let cfg = BlockConfig {
            io: 8,
            bottleneck: 4,
            channels: 8,
            stages: 4,
        };
        assert_eq!(cfg.scale_lengths(13), vec![13, 7, 4, 2]);
        assert_eq!(cfg.scale_lengths(16), vec![16, 8, 4, 2]);
        assert_eq!(cfg.scale_lengths(1), vec![1, 1, 1, 1]);
    }

    #[test]
    fn closed_form_count_matches_enumerated_defs() {
        let configs = [
            BlockConfig { io: 512, bottleneck: 128, channels: 512, stages: 5 },
            BlockConfig { io: 128, bottleneck: 128, channels: 128, stages: 5 },
            BlockConfig { io: 8, bottleneck: 4, channels: 8, stages: 3 },
            BlockConfig { io: 6, bottleneck: 3, channels: 10, stages: 1 },
            BlockConfig { io: 7, bottleneck: 5, channels: 9, stages: 2 },
        ];
        for cfg in configs {
            let by_defs: u64 = cfg
                .param_defs("p.")
                .iter()
                .map(|d| d.numel() as u64)
                .sum();
            assert_eq!(cfg.param_count(), by_defs, "{cfg:?}");
            let store = ParamStore::<f32>::init(cfg.param_defs("p."), 0).unwrap();
            assert_eq!(store.total_elements(), cfg.param_count());
        }
    }

    #[test]
    fn reference_widths_land_on_expected_budgets() {
        // Values computed once from the closed form and frozen; the
        // separator block at width 512 and the video block at width 128.
        let audio = BlockConfig { io: 512, bottleneck: 128, channels: 512, stages: 5 };
        assert_eq!(audio.param_count(), 5_020_940);
        let video = BlockConfig { io: 128, bottleneck: 128, channels: 128, stages: 5 };
        assert_eq!(video.param_count(), 370_700);
    }

    #[test]
    fn cost_rows_params_sum_to_param_count() {
        for cfg in [
            BlockConfig { io: 512, bottleneck: 128, channels: 512, stages: 5 },
            BlockConfig { io: 8, bottleneck: 4, channels: 8, stages: 3 },
            BlockConfig { io: 6, bottleneck: 3, channels: 10, stages: 1 },
        ] {
            let rows = cfg.cost_rows("p.", 100);
            let total: u64 = rows.iter().map(|r| r.params).sum();
            assert_eq!(total, cfg.param_count(), "{cfg:?}");
        }
    }

    #[test]
    fn block_preserves_shape() {
        for (cfg, t) in [
            (BlockConfig { io: 8, bottleneck: 4, channels: 8, stages: 3 }, 16),
            (BlockConfig { io: 8, bottleneck: 4, channels: 8, stages: 3 }, 17),
            (BlockConfig { io: 6, bottleneck: 3, channels: 10, stages: 4 }, 11),
            (BlockConfig { io: 4, bottleneck: 2, channels: 4, stages: 1 }, 5),
            (BlockConfig { io: 4, bottleneck: 2, channels: 4, stages: 3 }, 3),
        ] {
            let x = rand_input(cfg.io, t, 9);
            let y = run_block(&cfg, &x, 1);
            assert_eq!(y.shape(), &[cfg.io, t], "{cfg:?} t={t}");
            assert!(y.all_finite());
        }
    }

    #[test]
    fn zeroed_exit_conv_makes_the_block_an_identity() {
        // With the last conv zeroed the residual path is all that remains.
        let cfg = BlockConfig { io: 8, bottleneck: 4, channels: 8, stages: 3 };
        let mut store = ParamStore::<f64>::init(cfg.param_defs("blk."), 5).unwrap();
        store.get_mut("blk.out.w").as_mut_slice().fill(0.0);
        store.get_mut("blk.out.b").as_mut_slice().fill(0.0);
        let x = rand_input(8, 13, 2);
        let mut g = Graph::new();
        let vars = store.load_into(&mut g);
        let bv = BlockVars::resolve(&vars, "blk.", &cfg);
        let xv = g.constant(x.clone());
        let y = block_forward(&mut g, xv, &bv, &cfg).unwrap();
        assert_eq!(g.value(y).as_slice(), x.as_slice());
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = BlockConfig { io: 8, bottleneck: 4, channels: 8, stages: 3 };
        let x = rand_input(8, 29, 3);
        let a = run_block(&cfg, &x, 11);
        let b = run_block(&cfg, &x, 11);
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn shared_weights_accumulate_sum_of_per_use_gradients() {
        // Two applications of one block (shared leaves) must produce, for
        // every weight, exactly the sum of the gradients obtained when each
        // application owns a private copy of the weights. Addition order
        // differs only by commutation, so equality is bitwise.
        let cfg = BlockConfig { io: 6, bottleneck: 3, channels: 6, stages: 2 };
        let x = rand_input(6, 9, 17);
        let store = ParamStore::<f64>::init(cfg.param_defs("blk."), 23).unwrap();

        // shared: one leaf set, applied twice
        let mut g1 = Graph::new();
        let vars = store.load_into(&mut g1);
        let bv = BlockVars::resolve(&vars, "blk.", &cfg);
        let xv = g1.constant(x.clone());
        let h = block_forward(&mut g1, xv, &bv, &cfg).unwrap();
        let h = block_forward(&mut g1, h, &bv, &cfg).unwrap();
        let sq = g1.mul(h, h).unwrap();
        let loss = g1.sum(sq);
        g1.backward(loss).unwrap();

        // private: two leaf sets with identical values
        let mut g2 = Graph::new();
        let vars_a = store.load_into(&mut g2);
        let vars_b = store.load_into(&mut g2);
        let bva = BlockVars::resolve(&vars_a, "blk.", &cfg);
        let bvb = BlockVars::resolve(&vars_b, "blk.", &cfg);
        let xv2 = g2.constant(x.clone());
        let h2 = block_forward(&mut g2, xv2, &bva, &cfg).unwrap();
        let h2 = block_forward(&mut g2, h2, &bvb, &cfg).unwrap();
        let sq2 = g2.mul(h2, h2).unwrap();
        let loss2 = g2.sum(sq2);
        g2.backward(loss2).unwrap();

        for def in store.defs() {
            let shared = g1.grad(vars.var(&def.name)).unwrap();
            let ga = g2.grad(vars_a.var(&def.name)).unwrap();
            let gb = g2.grad(vars_b.var(&def.name)).unwrap();
            for i in 0..shared.len() {
                assert_eq!(
                    shared[i],
                    ga[i] + gb[i],
                    "{} element {i}: shared {} vs split {} + {}",
                    def.name,
                    shared[i],
                    ga[i],
                    gb[i]
                );
            }
        }
    }
}
