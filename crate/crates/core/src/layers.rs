//! Parameterised building blocks shared by the encoder, attention and
//! decoder modules. Each layer only holds [`ParamId`]s; the values live in a
//! [`ParameterStore`] and are bound to a tape per forward pass.

use rand::Rng;

use crate::error::Result;
use crate::nn::{Graph, Init, Padding, ParamId, ParameterStore, Real, Shape, Var};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.init(
            format!("{name}.weight"),
            Shape::new(c_out, c_in, k, k),
            Init::HeNormal { fan_in: c_in * k * k },
            rng,
        )?;
        let bias = if bias {
            Some(store.init(format!("{name}.bias"), Shape::new(1, c_out, 1, 1), Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding: Padding::Same,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        g.conv2d(
            x,
            self.weight.var(p),
            self.bias.map(|b| b.var(p)),
            self.stride,
            self.padding,
        )
    }
}

/// Depthwise `k x k` then pointwise `1 x 1`, with a bias on the pointwise stage.
#[derive(Clone, Debug)]
pub struct SeparableConv {
    pub depthwise: ParamId,
    pub pointwise: ParamId,
    pub bias: ParamId,
}

impl SeparableConv {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Result<Self> {
        Ok(SeparableConv {
            depthwise: store.init(
                format!("{name}.depthwise"),
                Shape::new(c_in, 1, k, k),
                Init::HeNormal { fan_in: k * k },
                rng,
            )?,
            pointwise: store.init(
                format!("{name}.pointwise"),
                Shape::new(c_out, c_in, 1, 1),
                Init::HeNormal { fan_in: c_in },
                rng,
            )?,
            bias: store.init(format!("{name}.bias"), Shape::new(1, c_out, 1, 1), Init::Zeros, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        g.separable_conv2d(x, self.depthwise.var(p), self.pointwise.var(p), Some(self.bias.var(p)))
    }
}

#[derive(Clone, Debug)]
pub struct TransposedConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl TransposedConv {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
    ) -> Result<Self> {
        // each output pixel of a k=stride transposed conv sees c_in inputs
        let fan_in = c_in * (k / stride).max(1) * (k / stride).max(1);
        Ok(TransposedConv {
            weight: store.init(
                format!("{name}.weight"),
                Shape::new(c_in, c_out, k, k),
                Init::HeNormal { fan_in },
                rng,
            )?,
            bias: store.init(format!("{name}.bias"), Shape::new(1, c_out, 1, 1), Init::Zeros, rng)?,
            stride,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        g.transposed_conv2d(x, self.weight.var(p), Some(self.bias.var(p)), self.stride)
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Result<Self> {
        Ok(Dense {
            weight: store.init(
                format!("{name}.weight"),
                Shape::new(d_out, d_in, 1, 1),
                Init::HeNormal { fan_in: d_in },
                rng,
            )?,
            bias: store.init(format!("{name}.bias"), Shape::new(1, d_out, 1, 1), Init::Zeros, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        g.dense(x, self.weight.var(p), Some(self.bias.var(p)))
    }
}

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct InstanceNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl InstanceNorm {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
    ) -> Result<Self> {
        Ok(InstanceNorm {
            gamma: store.init(format!("{name}.gamma"), Shape::new(1, channels, 1, 1), Init::Ones, rng)?,
            beta: store.init(format!("{name}.beta"), Shape::new(1, channels, 1, 1), Init::Zeros, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        g.instance_norm(x, self.gamma.var(p), self.beta.var(p), NORM_EPS)
    }
}

/// Convolution (no bias) -> instance norm -> ReLU.
#[derive(Clone, Debug)]
pub struct ConvNormRelu {
    pub conv: Conv2d,
    pub norm: InstanceNorm,
}

impl ConvNormRelu {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Result<Self> {
        Ok(ConvNormRelu {
            conv: Conv2d::new(store, rng, &format!("{name}.conv"), c_in, c_out, k, 1, false)?,
            norm: InstanceNorm::new(store, rng, &format!("{name}.norm"), c_out)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = self.conv.forward(g, p, x)?;
        let y = self.norm.forward(g, p, y)?;
        Ok(g.relu(y))
    }
}
