//! Anti-aliased decoder: fixed Gaussian/Lanczos upsampling fused with a
//! learned transposed convolution, then a multi-receptive-field conv block.
//!
//! Fixed upsampling is nearest-neighbour 2x expansion followed by a 5x5
//! unit-sum filter evaluated on the upsampled grid. Borders replicate the
//! edge pixel so a constant map upsamples to exactly the same constant.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvNormRelu, TransposedConv};
use crate::nn::{Graph, ParameterStore, Real, Shape, Tensor, Var};

pub const FILTER_SIZE: usize = 5;
const RADIUS: isize = 2;

pub type Kernel5 = [[f64; FILTER_SIZE]; FILTER_SIZE];

fn outer_normalised(taps: [f64; FILTER_SIZE]) -> Kernel5 {
    let mut k = [[0.0; FILTER_SIZE]; FILTER_SIZE];
    let mut total = 0.0;
    for (y, row) in k.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = taps[y] * taps[x];
            total += *v;
        }
    }
    k.iter_mut().flatten().for_each(|v| *v /= total);
    k
}

/// 5x5 Gaussian with standard deviation `sigma` (in upsampled pixels).
pub fn gaussian5(sigma: f64) -> Kernel5 {
    let taps = std::array::from_fn(|i| {
        let d = i as f64 - RADIUS as f64;
        (-d * d / (2.0 * sigma * sigma)).exp()
    });
    outer_normalised(taps)
}

fn sinc(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        let x = std::f64::consts::PI * t;
        x.sin() / x
    }
}

/// Lanczos window with `a = 2`: `sinc(t) * sinc(t / 2)` for `|t| < 2`.
pub fn lanczos2(t: f64) -> f64 {
    if t.abs() >= 2.0 {
        0.0
    } else {
        sinc(t) * sinc(t / 2.0)
    }
}

/// 5x5 Lanczos-2 kernel on the 2x upsampled grid: tap `d` sits `d / 2`
/// source pixels from the centre.
pub fn lanczos5() -> Kernel5 {
    outer_normalised(std::array::from_fn(|i| lanczos2((i as f64 - RADIUS as f64) / 2.0)))
}

/// The two constant upsampling kernels. Not learnable.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedFilterBank {
    pub sigma: f64,
    pub gaussian: Kernel5,
    pub lanczos: Kernel5,
}

impl FixedFilterBank {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::config("gaussian_sigma", format!("must be positive, got {sigma}")));
        }
        Ok(FixedFilterBank {
            sigma,
            gaussian: gaussian5(sigma),
            lanczos: lanczos5(),
        })
    }
}

/// Source pixel of upsampled coordinate `o + d` (edge-replicated) in a map
/// of `len` source pixels.
#[inline]
fn source_index(o: usize, d: isize, len: usize) -> usize {
    let up = (o as isize + d).clamp(0, 2 * len as isize - 1) as usize;
    up / 2
}

/// Nearest-neighbour 2x expansion followed by `kernel`, `(n,c,h,w) -> (n,c,2h,2w)`.
pub fn upsample_fixed<T: Real>(g: &mut Graph<T>, x: Var, kernel: &Kernel5) -> Var {
    let s = g.value(x).shape();
    let os = Shape::new(s.n, s.c, 2 * s.h, 2 * s.w);
    let k: Vec<T> = kernel.iter().flatten().map(|&v| T::from_f64(v)).collect();
    let rows: Vec<[usize; FILTER_SIZE]> = (0..os.h)
        .map(|oy| std::array::from_fn(|i| source_index(oy, i as isize - RADIUS, s.h)))
        .collect();
    let cols: Vec<[usize; FILTER_SIZE]> = (0..os.w)
        .map(|ox| std::array::from_fn(|i| source_index(ox, i as isize - RADIUS, s.w)))
        .collect();

    let xd = g.value(x).data();
    let mut out = vec![T::zero(); os.numel()];
    for p in 0..s.n * s.c {
        let src = &xd[p * s.plane()..(p + 1) * s.plane()];
        let dst = &mut out[p * os.plane()..(p + 1) * os.plane()];
        for (oy, ry) in rows.iter().enumerate() {
            for (ox, cx) in cols.iter().enumerate() {
                let mut acc = T::zero();
                for (ky, &sy) in ry.iter().enumerate() {
                    for (kx, &sx) in cx.iter().enumerate() {
                        acc += k[ky * FILTER_SIZE + kx] * src[sy * s.w + sx];
                    }
                }
                dst[oy * os.w + ox] = acc;
            }
        }
    }
    let value = Tensor::new(os, out).expect("upsampled shape");
    g.push_op(
        "upsample_fixed",
        &[x],
        value,
        Box::new(move |ctx| {
            let mut dx = vec![T::zero(); s.numel()];
            for p in 0..s.n * s.c {
                let gp = &ctx.grad[p * os.plane()..(p + 1) * os.plane()];
                let dst = &mut dx[p * s.plane()..(p + 1) * s.plane()];
                for (oy, ry) in rows.iter().enumerate() {
                    for (ox, cx) in cols.iter().enumerate() {
                        let gv = gp[oy * os.w + ox];
                        for (ky, &sy) in ry.iter().enumerate() {
                            for (kx, &sx) in cx.iter().enumerate() {
                                dst[sy * s.w + sx] += k[ky * FILTER_SIZE + kx] * gv;
                            }
                        }
                    }
                }
            }
            vec![Some(dx)]
        }),
    )
}

/// How the Gaussian and Lanczos paths are combined into `F_up`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UpsampleFusion {
    /// Element-wise mean, `c` channels.
    #[default]
    Mean,
    /// Channel concatenation, `2c` channels.
    Concat,
}

/// `concat(conv1x1(F_up), tconv(x))`, doubling the spatial size.
#[derive(Clone, Debug)]
pub struct UpsampleBlock {
    pub filters: FixedFilterBank,
    pub fusion: UpsampleFusion,
    pub fuse: Conv2d,
    pub ct: TransposedConv,
    pub out_channels: usize,
}

impl UpsampleBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        prefix: &str,
        c_in: usize,
        c_fuse: usize,
        c_ct: usize,
        filters: FixedFilterBank,
        fusion: UpsampleFusion,
    ) -> Result<Self> {
        let up_channels = match fusion {
            UpsampleFusion::Mean => c_in,
            UpsampleFusion::Concat => 2 * c_in,
        };
        Ok(UpsampleBlock {
            filters,
            fusion,
            fuse: Conv2d::new(store, rng, &format!("{prefix}.fuse"), up_channels, c_fuse, 1, 1, true)?,
            ct: TransposedConv::new(store, rng, &format!("{prefix}.ct"), c_in, c_ct, 2, 2)?,
            out_channels: c_fuse + c_ct,
        })
    }

    /// `F_up`: the fixed anti-aliased upsampling of `x`.
    pub fn fixed_path<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let gauss = upsample_fixed(g, x, &self.filters.gaussian);
        let lanczos = upsample_fixed(g, x, &self.filters.lanczos);
        match self.fusion {
            UpsampleFusion::Mean => {
                let sum = g.add(gauss, lanczos)?;
                Ok(g.scale(sum, 0.5))
            }
            UpsampleFusion::Concat => g.concat_channels(&[gauss, lanczos]),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let up = self.fixed_path(g, x)?;
        let fused = self.fuse.forward(g, p, up)?;
        let ct = self.ct.forward(g, p, x)?;
        g.concat_channels(&[fused, ct])
    }
}

/// Parallel 5x5 / 3x3 / 1x1 conv-IN-ReLU branches, concatenated and fused by
/// a 3x3 conv-IN-ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub branch5: ConvNormRelu,
    pub branch3: ConvNormRelu,
    pub branch1: ConvNormRelu,
    pub fuse: ConvNormRelu,
    pub out_channels: usize,
}

impl ConvBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        prefix: &str,
        c_in: usize,
        c_out: usize,
    ) -> Result<Self> {
        if c_out < 2 || !c_out.is_multiple_of(2) {
            return Err(Error::config(
                "decoder_widths",
                format!("conv block width {c_out} must be even and at least 2"),
            ));
        }
        let half = c_out / 2;
        Ok(ConvBlock {
            branch5: ConvNormRelu::new(store, rng, &format!("{prefix}.b5"), c_in, half, 5)?,
            branch3: ConvNormRelu::new(store, rng, &format!("{prefix}.b3"), c_in, half, 3)?,
            branch1: ConvNormRelu::new(store, rng, &format!("{prefix}.b1"), c_in, half, 1)?,
            fuse: ConvNormRelu::new(store, rng, &format!("{prefix}.fuse"), 3 * half, c_out, 3)?,
            out_channels: c_out,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let f5 = self.branch5.forward(g, p, x)?;
        let f3 = self.branch3.forward(g, p, x)?;
        let f1 = self.branch1.forward(g, p, x)?;
        let cat = g.concat_channels(&[f5, f3, f1])?;
        self.fuse.forward(g, p, cat)
    }
}
