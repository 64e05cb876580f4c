//! DenseNet-style encoder with instance normalisation.

use rand::Rng;

use crate::error::Result;
use crate::layers::{Conv2d, InstanceNorm};
use crate::nn::{Graph, ParameterStore, Real, Var};

/// Bottleneck width multiplier of a dense layer (`4 * growth` channels).
const BN_SIZE: usize = 4;

/// norm -> relu -> conv1x1 -> norm -> relu -> conv3x3, concatenated onto the input.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    norm1: InstanceNorm,
    conv1: Conv2d,
    norm2: InstanceNorm,
    conv2: Conv2d,
}

impl DenseLayer {
    fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        prefix: &str,
        c_in: usize,
        growth: usize,
    ) -> Result<Self> {
        let mid = BN_SIZE * growth;
        Ok(DenseLayer {
            norm1: InstanceNorm::new(store, rng, &format!("{prefix}.norm1"), c_in)?,
            conv1: Conv2d::new(store, rng, &format!("{prefix}.conv1"), c_in, mid, 1, 1, false)?,
            norm2: InstanceNorm::new(store, rng, &format!("{prefix}.norm2"), mid)?,
            conv2: Conv2d::new(store, rng, &format!("{prefix}.conv2"), mid, growth, 3, 1, false)?,
        })
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = self.norm1.forward(g, p, x)?;
        let y = g.relu(y);
        let y = self.conv1.forward(g, p, y)?;
        let y = self.norm2.forward(g, p, y)?;
        let y = g.relu(y);
        let y = self.conv2.forward(g, p, y)?;
        g.concat_channels(&[x, y])
    }
}

#[derive(Clone, Debug)]
pub struct DenseBlock {
    layers: Vec<DenseLayer>,
    pub out_channels: usize,
}

impl DenseBlock {
    fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        prefix: &str,
        c_in: usize,
        n_layers: usize,
        growth: usize,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(n_layers);
        let mut c = c_in;
        for l in 0..n_layers {
            layers.push(DenseLayer::new(store, rng, &format!("{prefix}.layer{}", l + 1), c, growth)?);
            c += growth;
        }
        Ok(DenseBlock {
            layers,
            out_channels: c,
        })
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(g, p, x)?;
        }
        Ok(x)
    }
}

/// norm -> relu -> conv1x1 (halving channels) -> 2x2 average pool.
#[derive(Clone, Debug)]
pub struct Transition {
    norm: InstanceNorm,
    conv: Conv2d,
    pub out_channels: usize,
}

impl Transition {
    fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        prefix: &str,
        c_in: usize,
    ) -> Result<Self> {
        let out = (c_in / 2).max(1);
        Ok(Transition {
            norm: InstanceNorm::new(store, rng, &format!("{prefix}.norm"), c_in)?,
            conv: Conv2d::new(store, rng, &format!("{prefix}.conv"), c_in, out, 1, 1, false)?,
            out_channels: out,
        })
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = self.norm.forward(g, p, x)?;
        let y = g.relu(y);
        let y = self.conv.forward(g, p, y)?;
        g.avg_pool2d(y, 2, 2)
    }
}

/// Skip taps (stem at 1/2 resolution, blocks 1-3 at 1/4, 1/8, 1/16) and the
/// normalised output of block 4 at 1/32.
#[derive(Clone, Copy, Debug)]
pub struct EncoderFeatures {
    pub skips: [Var; 4],
    pub last: Var,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    stem_conv: Conv2d,
    stem_norm: InstanceNorm,
    blocks: Vec<DenseBlock>,
    transitions: Vec<Transition>,
    final_norm: InstanceNorm,
    /// Channels of the four skip taps, shallowest first.
    pub skip_channels: [usize; 4],
    pub out_channels: usize,
}

impl Encoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        input_channels: usize,
        growth: usize,
        block_layers: &[usize],
    ) -> Result<Self> {
        let stem_c = 2 * growth;
        let stem_conv = Conv2d::new(store, rng, "encoder.stem.conv", input_channels, stem_c, 7, 2, false)?;
        let stem_norm = InstanceNorm::new(store, rng, "encoder.stem.norm", stem_c)?;
        let mut skip_channels = [stem_c, 0, 0, 0];
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        let mut c = stem_c;
        for (b, &n) in block_layers.iter().enumerate() {
            let block = DenseBlock::new(store, rng, &format!("encoder.block{}", b + 1), c, n, growth)?;
            c = block.out_channels;
            blocks.push(block);
            if b < 3 {
                skip_channels[b + 1] = c;
                let t = Transition::new(store, rng, &format!("encoder.transition{}", b + 1), c)?;
                c = t.out_channels;
                transitions.push(t);
            }
        }
        let final_norm = InstanceNorm::new(store, rng, "encoder.final_norm", c)?;
        Ok(Encoder {
            stem_conv,
            stem_norm,
            blocks,
            transitions,
            final_norm,
            skip_channels,
            out_channels: c,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<EncoderFeatures> {
        let y = self.stem_conv.forward(g, p, x)?;
        let y = self.stem_norm.forward(g, p, y)?;
        let stem = g.relu(y);
        let mut skips = [stem; 4];
        let mut y = g.max_pool2d(stem, 2, 2)?;
        for (b, block) in self.blocks.iter().enumerate() {
            y = block.forward(g, p, y)?;
            if b < 3 {
                skips[b + 1] = y;
                y = self.transitions[b].forward(g, p, y)?;
            }
        }
        let y = self.final_norm.forward(g, p, y)?;
        let last = g.relu(y);
        Ok(EncoderFeatures { skips, last })
    }
}
