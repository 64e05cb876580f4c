//! Wavelet-guided channel attention (WGCAM) and learnable weighted GAP.
//!
//! For a skip feature `x` of shape `(n, C, H, W)`:
//!
//! ```text
//! wav  = sc_wav(ct(dwt_haar(x)))            (n, C, H, W)
//! A    = sigmoid(sc_fuse(sc_inp(x) + wav))  spatial attention map
//! F_c  = sigmoid(dense2(relu(dense1(alpha * gap(x)))))
//! out  = F_c (per channel) * (A * x)
//! ```
//!
//! `ct` is a kernel-2 stride-2 transposed convolution that restores the
//! `H x W` resolution of the `4C` subbands. Separable convolutions use a
//! 3x3 depthwise stage and a 1x1 pointwise stage.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Dense, SeparableConv, TransposedConv};
use crate::nn::{Graph, Init, ParamId, ParameterStore, Real, Shape, Var};
use crate::wavelet;

pub const SEPARABLE_KERNEL: usize = 3;

/// How per-channel spatial means are weighted before the dense stack.
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelWeights {
    /// Plain global average pooling (alpha fixed at one, not learnable).
    Fixed,
    /// Learnable alpha vector, initialised to ones.
    Learnable(ParamId),
}

/// Learnable weighted global average pooling followed by two dense layers.
#[derive(Clone, Debug)]
pub struct LwGap {
    pub channels: usize,
    pub alpha: ChannelWeights,
    pub dense1: Dense,
    pub dense2: Dense,
}

impl LwGap {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        prefix: &str,
        channels: usize,
        reduction: usize,
        learnable_alpha: bool,
    ) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::config(
                "wgcam_reduction",
                format!("reduction {reduction} does not divide {channels} channels"),
            ));
        }
        let hidden = channels / reduction;
        let alpha = if learnable_alpha {
            ChannelWeights::Learnable(store.init(
                format!("{prefix}.alpha"),
                Shape::new(1, channels, 1, 1),
                Init::Ones,
                rng,
            )?)
        } else {
            ChannelWeights::Fixed
        };
        Ok(LwGap {
            channels,
            alpha,
            dense1: Dense::new(store, rng, &format!("{prefix}.dense1"), channels, hidden)?,
            dense2: Dense::new(store, rng, &format!("{prefix}.dense2"), hidden, channels)?,
        })
    }

    /// Channel attention `F_c`, shape `(n, C, 1, 1)`, every entry in `(0, 1)`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let alpha = match &self.alpha {
            ChannelWeights::Fixed => None,
            ChannelWeights::Learnable(id) => Some(id.var(p)),
        };
        lw_gap(g, x, alpha, (&self.dense1, &self.dense2), p)
    }
}

/// `sigmoid(dense2(relu(dense1(alpha * mean_hw(x)))))`; `alpha = None` is plain GAP.
pub fn lw_gap<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    alpha: Option<Var>,
    dense: (&Dense, &Dense),
    p: &[Var],
) -> Result<Var> {
    let c = g.value(x).shape().c;
    let mut pooled = g.global_avg_pool(x);
    if let Some(a) = alpha {
        if g.value(a).numel() != c {
            return Err(Error::shape(
                "lw_gap",
                format!("alpha of length {} for {c} channels", g.value(a).numel()),
            ));
        }
        pooled = g.mul_per_channel(pooled, a)?;
    }
    let hidden = dense.0.forward(g, p, pooled)?;
    let hidden = g.relu(hidden);
    let logits = dense.1.forward(g, p, hidden)?;
    Ok(g.sigmoid(logits))
}

/// Intermediate values of one WGCAM pass, kept for feature dumps.
#[derive(Clone, Copy, Debug)]
pub struct WgcamTaps {
    pub dwt: Var,
    pub wavelet_branch: Var,
    pub spatial_attention: Var,
    pub channel_attention: Var,
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct Wgcam {
    pub channels: usize,
    pub ct: TransposedConv,
    pub sc_wav: SeparableConv,
    pub sc_inp: SeparableConv,
    pub sc_fuse: SeparableConv,
    pub gap: LwGap,
}

impl Wgcam {
    /// Registers parameters under `prefix` (e.g. `wgcam.1`).
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        prefix: &str,
        channels: usize,
        reduction: usize,
        learnable_alpha: bool,
    ) -> Result<Self> {
        let c4 = 4 * channels;
        let k = SEPARABLE_KERNEL;
        Ok(Wgcam {
            channels,
            ct: TransposedConv::new(store, rng, &format!("{prefix}.ct"), c4, c4, 2, 2)?,
            sc_wav: SeparableConv::new(store, rng, &format!("{prefix}.sc_wav"), c4, channels, k)?,
            sc_inp: SeparableConv::new(store, rng, &format!("{prefix}.sc_inp"), channels, channels, k)?,
            sc_fuse: SeparableConv::new(store, rng, &format!("{prefix}.sc_fuse"), channels, channels, k)?,
            gap: LwGap::new(store, rng, prefix, channels, reduction, learnable_alpha)?,
        })
    }

    fn check_input<T: Real>(&self, g: &Graph<T>, x: Var) -> Result<()> {
        let s = g.value(x).shape();
        if s.c != self.channels {
            return Err(Error::shape(
                "wgcam",
                format!("module built for {} channels, input is {s}", self.channels),
            ));
        }
        Ok(())
    }

    /// Haar DWT -> transposed conv back to `H x W` -> separable conv `4C -> C`.
    /// Returns `(dwt, branch_output)`.
    pub fn wavelet_branch<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<(Var, Var)> {
        self.check_input(g, x)?;
        let dwt = wavelet::dwt_haar(g, x)?;
        let up = self.ct.forward(g, p, dwt)?;
        let out = self.sc_wav.forward(g, p, up)?;
        Ok((dwt, out))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        Ok(self.forward_with_taps(g, p, x)?.output)
    }

    pub fn forward_with_taps<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<WgcamTaps> {
        let (dwt, wav) = self.wavelet_branch(g, p, x)?;
        let inp = self.sc_inp.forward(g, p, x)?;
        let fused = g.add(inp, wav)?;
        let fused = self.sc_fuse.forward(g, p, fused)?;
        let spatial = g.sigmoid(fused);
        let gated = g.mul(spatial, x)?;
        let channel = self.gap.forward(g, p, x)?;
        let output = g.mul_per_channel(gated, channel)?;
        Ok(WgcamTaps {
            dwt,
            wavelet_branch: wav,
            spatial_attention: spatial,
            channel_attention: channel,
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::gradcheck::{random_tensor, GradCheck};
    use crate::nn::Tensor;

    fn build(channels: usize, reduction: usize, learnable: bool) -> (ParameterStore<f64>, Wgcam) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParameterStore::new();
        let m = Wgcam::new(&mut store, &mut rng, "wgcam.1", channels, reduction, learnable).unwrap();
        (store, m)
    }

    fn set(store: &mut ParameterStore<f64>, id: ParamId, f: impl Fn(usize, usize, usize, usize) -> f64) {
        let e = store.get_mut(id);
        let s = e.tensor.shape();
        e.tensor = Tensor::from_fn(s, f);
    }

    #[test]
    fn shape_is_preserved() {
        let (store, m) = build(8, 8, true);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.input(random_tensor(Shape::new(2, 8, 6, 4), 2));
        let y = m.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(y).shape(), Shape::new(2, 8, 6, 4));
        let (_, wav) = m.wavelet_branch(&mut g, &p, x).unwrap();
        assert_eq!(g.value(wav).shape(), Shape::new(2, 8, 6, 4));
    }

    #[test]
    fn reduction_must_divide_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParameterStore::<f32>::new();
        assert!(matches!(
            Wgcam::new(&mut store, &mut rng, "w", 12, 8, true),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn ll_only_branch_on_constant_input() {
        let c = 2;
        let (mut store, m) = build(c, 2, true);
        let gain = 0.75;
        // ct: identity from each LL channel onto itself, zero elsewhere
        set(&mut store, m.ct.weight, |i, o, _, _| if i == o && i < c { 1.0 } else { 0.0 });
        set(&mut store, m.ct.bias, |_, _, _, _| 0.0);
        // depthwise: centre tap only
        set(&mut store, m.sc_wav.depthwise, |_, _, y, x| if y == 1 && x == 1 { 1.0 } else { 0.0 });
        set(&mut store, m.sc_wav.pointwise, |o, i, _, _| if i == o { gain } else { 0.0 });
        set(&mut store, m.sc_wav.bias, |_, _, _, _| 0.0);

        let v = 1.5;
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.input(Tensor::full(Shape::new(1, c, 4, 4), v));
        let (_, wav) = m.wavelet_branch(&mut g, &p, x).unwrap();
        for &o in g.value(wav).data() {
            assert!((o - 2.0 * v * gain).abs() < 1e-12, "{o}");
        }
    }

    #[test]
    fn zero_alpha_gives_half_attention() {
        let (mut store, m) = build(8, 4, true);
        let ChannelWeights::Learnable(alpha) = m.gap.alpha else { panic!() };
        set(&mut store, alpha, |_, _, _, _| 0.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.input(random_tensor(Shape::new(2, 8, 4, 4), 9));
        let fc = m.gap.forward(&mut g, &p, x).unwrap();
        assert!(g.value(fc).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn symmetric_dense_stack_gives_equal_weights() {
        // C == r: one hidden unit averaging all channels, fanned back out by ones
        let c = 4;
        let (mut store, m) = build(c, c, true);
        set(&mut store, m.gap.dense1.weight, |_, _, _, _| 1.0 / c as f64);
        set(&mut store, m.gap.dense2.weight, |_, _, _, _| 1.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.input(Tensor::full(Shape::new(1, c, 4, 4), 1.0));
        let fc = m.gap.forward(&mut g, &p, x).unwrap();
        let vals = g.value(fc).data();
        assert!(vals.iter().all(|&v| v == vals[0]));
        assert!((vals[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn half_attention_halves_input() {
        let (mut store, m) = build(8, 8, true);
        // A = sigmoid(0) = 0.5 everywhere
        set(&mut store, m.sc_fuse.pointwise, |_, _, _, _| 0.0);
        set(&mut store, m.sc_fuse.bias, |_, _, _, _| 0.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let xt = random_tensor(Shape::new(1, 8, 4, 4), 5);
        let x = g.input(xt.clone());
        let taps = m.forward_with_taps(&mut g, &p, x).unwrap();
        // force F_c to ones by undoing it
        let fc: Vec<f64> = g.value(taps.channel_attention).data().to_vec();
        let out = g.value(taps.output);
        for ch in 0..8 {
            for (o, i) in out.plane(0, ch).iter().zip(xt.plane(0, ch)) {
                assert!((o / fc[ch] - 0.5 * i).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn saturated_attention_is_identity() {
        let (mut store, m) = build(8, 8, true);
        set(&mut store, m.sc_fuse.pointwise, |_, _, _, _| 0.0);
        set(&mut store, m.sc_fuse.bias, |_, _, _, _| 60.0);
        set(&mut store, m.gap.dense2.weight, |_, _, _, _| 0.0);
        set(&mut store, m.gap.dense2.bias, |_, _, _, _| 60.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let xt = random_tensor(Shape::new(1, 8, 4, 4), 6);
        let x = g.input(xt.clone());
        let y = m.forward(&mut g, &p, x).unwrap();
        for (o, i) in g.value(y).data().iter().zip(xt.data()) {
            assert!((o - i).abs() < 1e-12);
        }
    }

    #[test]
    fn output_never_exceeds_input_magnitude() {
        let (store, m) = build(8, 8, true);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let xt = random_tensor(Shape::new(2, 8, 8, 8), 7);
        let x = g.input(xt.clone());
        let taps = m.forward_with_taps(&mut g, &p, x).unwrap();
        let a = g.value(taps.spatial_attention).data();
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
        for (o, i) in g.value(taps.output).data().iter().zip(xt.data()) {
            assert!(o.abs() <= i.abs());
        }
    }

    #[test]
    fn branch_gradient_check() {
        let (store, m) = build(4, 2, true);
        let mut inputs = vec![random_tensor(Shape::new(1, 4, 4, 4), 3)];
        inputs.extend(store.entries().iter().map(|e| e.tensor.clone()));
        let report = GradCheck::default()
            .run(&inputs, |g, v| Ok(m.wavelet_branch(g, &v[1..], v[0])?.1))
            .unwrap();
        assert!(report.passes(1e-3), "{report:?}");
    }

    #[test]
    fn lw_gap_gradient_check_includes_alpha() {
        let (mut store, m) = build(8, 4, true);
        // move alpha away from ones so its gradient is not trivially tied to GAP
        let ChannelWeights::Learnable(alpha) = m.gap.alpha else { panic!() };
        set(&mut store, alpha, |_, c, _, _| 0.5 + 0.1 * c as f64);
        let mut inputs = vec![random_tensor(Shape::new(2, 8, 4, 4), 8)];
        inputs.extend(store.entries().iter().map(|e| e.tensor.clone()));
        let report = GradCheck::default()
            .run(&inputs, |g, v| m.gap.forward(g, &v[1..], v[0]))
            .unwrap();
        assert!(report.passes(1e-3), "{report:?}");
    }
}
