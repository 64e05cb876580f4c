//! The segmentation network: encoder, optional WGCAM on skips, bottleneck,
//! decoder and a sigmoid head.

mod checkpoint;
mod config;
mod encoder;
mod intermediates;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, Variant, DOWNSAMPLE};
pub use encoder::{Encoder, EncoderFeatures};
pub use intermediates::{dump_intermediates, feature_map_image, subband_mosaic_image};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::Wgcam;
use crate::decoder::{ConvBlock, FixedFilterBank, UpsampleBlock};
use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvNormRelu, TransposedConv};
use crate::nn::{Graph, ParameterStore, Real, Tensor, Var};

/// Number of skips carrying a WGCAM (the three deepest).
pub const WGCAM_SCALES: usize = 3;

#[derive(Clone, Debug)]
enum DecoderStage {
    /// Transposed conv, concat skip, two 3x3 conv-IN-ReLU.
    Plain {
        up: TransposedConv,
        conv1: ConvNormRelu,
        conv2: ConvNormRelu,
    },
    /// Anti-aliased upsample block, concat skip, multi-kernel conv block.
    AntiAliased { up: UpsampleBlock, block: ConvBlock },
}

impl DecoderStage {
    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var, skip: Option<Var>) -> Result<Var> {
        let up = match self {
            DecoderStage::Plain { up, .. } => up.forward(g, p, x)?,
            DecoderStage::AntiAliased { up, .. } => up.forward(g, p, x)?,
        };
        let y = match skip {
            Some(s) => g.concat_channels(&[up, s])?,
            None => up,
        };
        match self {
            DecoderStage::Plain { conv1, conv2, .. } => {
                let y = conv1.forward(g, p, y)?;
                conv2.forward(g, p, y)
            }
            DecoderStage::AntiAliased { block, .. } => block.forward(g, p, y),
        }
    }
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardPass {
    /// Foreground probability, `(n, 1, H, W)`.
    pub prob: Var,
    /// Encoder last stage, before the bottleneck.
    pub els: Var,
    /// Bottleneck output.
    pub bot: Var,
    /// Decoder last stage, before the head.
    pub dls: Var,
    /// Haar decompositions inside the WGCAMs, shallowest first. `None` for variant (i).
    pub dwt: [Option<Var>; WGCAM_SCALES],
}

/// Network structure; parameters live in a separate [`ParameterStore`].
#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    encoder: Encoder,
    wgcams: Vec<Wgcam>,
    bottleneck: ConvBlock,
    stages: Vec<DecoderStage>,
    head: Conv2d,
}

/// Builds the network and its freshly initialised parameters. Initial values
/// depend only on `config` (including `config.seed`).
pub fn build_model<T: Real>(config: &ModelConfig) -> Result<(Network, ParameterStore<T>)> {
    config.validate()?;
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rng = &mut rng;
    let s = &mut store;

    let encoder = Encoder::new(s, rng, config.input_channels, config.growth_rate, &config.block_layers)?;

    let mut wgcams = Vec::new();
    if config.variant.has_wgcam() {
        for k in 0..WGCAM_SCALES {
            let c = encoder.skip_channels[k + 1];
            if c % config.wgcam_reduction != 0 {
                return Err(Error::config(
                    "wgcam_reduction",
                    format!("reduction {} does not divide {c} skip channels", config.wgcam_reduction),
                ));
            }
            wgcams.push(Wgcam::new(
                s,
                rng,
                &format!("wgcam.{}", k + 1),
                c,
                config.wgcam_reduction,
                config.variant.learnable_alpha(),
            )?);
        }
    }

    let bottleneck = ConvBlock::new(s, rng, "bottleneck", encoder.out_channels, config.bottleneck_width)?;

    let filters = FixedFilterBank::new(config.gaussian_sigma)?;
    let mut stages = Vec::new();
    let mut c = config.bottleneck_width;
    for (i, &w) in config.decoder_widths.iter().enumerate() {
        let prefix = format!("decoder.stage{}", i + 1);
        let skip_c = skip_for_stage(i).map_or(0, |k| encoder.skip_channels[k]);
        let stage = if config.variant.full_decoder() {
            let up = UpsampleBlock::new(
                s,
                rng,
                &format!("{prefix}.up"),
                c,
                w / 2,
                w / 2,
                filters.clone(),
                config.upsample_fusion,
            )?;
            let block = ConvBlock::new(s, rng, &format!("{prefix}.block"), w + skip_c, w)?;
            DecoderStage::AntiAliased { up, block }
        } else {
            DecoderStage::Plain {
                up: TransposedConv::new(s, rng, &format!("{prefix}.up"), c, w, 2, 2)?,
                conv1: ConvNormRelu::new(s, rng, &format!("{prefix}.conv1"), w + skip_c, w, 3)?,
                conv2: ConvNormRelu::new(s, rng, &format!("{prefix}.conv2"), w, w, 3)?,
            }
        };
        stages.push(stage);
        c = w;
    }
    let head = Conv2d::new(s, rng, "head", c, 1, 1, 1, true)?;

    let network = Network {
        config: config.clone(),
        encoder,
        wgcams,
        bottleneck,
        stages,
        head,
    };
    Ok((network, store))
}

/// Encoder skip feeding decoder stage `i` (deepest stage first); the last
/// stage runs at full resolution and has none.
fn skip_for_stage(i: usize) -> Option<usize> {
    (i < 4).then(|| 3 - i)
}

impl Network {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    fn check_input<T: Real>(&self, g: &Graph<T>, x: Var) -> Result<()> {
        let s = g.value(x).shape();
        let (h, w) = self.config.input_size;
        if s.c != self.config.input_channels || s.h != h || s.w != w || s.n == 0 {
            return Err(Error::shape(
                "model",
                format!(
                    "expected (n, {}, {h}, {w}), got {s}",
                    self.config.input_channels
                ),
            ));
        }
        Ok(())
    }

    /// Records the forward pass of a batch `(n, c, H, W)` on `g`. `p` are the
    /// parameters bound in store order.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<ForwardPass> {
        self.check_input(g, x)?;
        let feats = self.encoder.forward(g, p, x)?;
        let mut skips = feats.skips;
        let mut dwt = [None; WGCAM_SCALES];
        for (k, wgcam) in self.wgcams.iter().enumerate() {
            let taps = wgcam.forward_with_taps(g, p, skips[k + 1])?;
            dwt[k] = Some(taps.dwt);
            skips[k + 1] = taps.output;
        }
        let bot = self.bottleneck.forward(g, p, feats.last)?;
        let mut y = bot;
        for (i, stage) in self.stages.iter().enumerate() {
            y = stage.forward(g, p, y, skip_for_stage(i).map(|k| skips[k]))?;
        }
        let dls = y;
        let logits = self.head.forward(g, p, dls)?;
        let prob = g.sigmoid(logits);
        Ok(ForwardPass {
            prob,
            els: feats.last,
            bot,
            dls,
            dwt,
        })
    }

    /// Foreground probabilities for a batch, without recording gradients.
    pub fn predict<T: Real>(&self, store: &ParameterStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = store.bind_constants(&mut g);
        let xv = g.input(x.clone());
        let out = self.forward(&mut g, &p, xv)?;
        Ok(g.value(out.prob).clone())
    }
}
