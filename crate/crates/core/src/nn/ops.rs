use super::kernels::{self, ConvGeom, TConvGeom};
use super::{Graph, Real, Shape, Tensor, Var};
use crate::error::{Error, Result};

/// Spatial padding for stride-`s` convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2` on every side.
    Same,
    /// No padding.
    Valid,
}

impl Padding {
    fn amount(self, k: usize) -> usize {
        match self {
            Padding::Same => (k - 1) / 2,
            Padding::Valid => 0,
        }
    }
}

fn elementwise<T: Real>(grad: &[T], f: impl Fn(usize, T) -> T) -> Vec<T> {
    grad.iter().enumerate().map(|(i, &g)| f(i, g)).collect()
}

impl<T: Real> Graph<T> {
    fn shape_of(&self, v: Var) -> Shape {
        self.value(v).shape()
    }

    fn grouped_conv(
        &mut self,
        op: &'static str,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
        groups: usize,
    ) -> Result<Var> {
        let xs = self.shape_of(x);
        let ws = self.shape_of(weight);
        if stride == 0 {
            return Err(Error::invalid(op, "stride must be positive"));
        }
        if ws.h != ws.w || ws.h == 0 {
            return Err(Error::shape(op, format!("kernel must be square, got weight {ws}")));
        }
        if !xs.c.is_multiple_of(groups) || !ws.n.is_multiple_of(groups) {
            return Err(Error::shape(
                op,
                format!("{groups} groups do not divide input {xs} / weight {ws}"),
            ));
        }
        if ws.c != xs.c / groups {
            return Err(Error::shape(
                op,
                format!("weight {ws} expects {} input channels per group, input is {xs}", ws.c),
            ));
        }
        let k = ws.h;
        let pad = padding.amount(k);
        if xs.h + 2 * pad < k || xs.w + 2 * pad < k {
            return Err(Error::shape(op, format!("kernel {k} larger than padded input {xs}")));
        }
        if let Some(b) = bias {
            let n = self.value(b).numel();
            if n != ws.n {
                return Err(Error::shape(op, format!("bias of length {n} for {} outputs", ws.n)));
            }
        }
        let geom = ConvGeom {
            n: xs.n,
            c_in: xs.c,
            h: xs.h,
            w: xs.w,
            c_out: ws.n,
            k,
            stride,
            pad,
            groups,
            h_out: (xs.h + 2 * pad - k) / stride + 1,
            w_out: (xs.w + 2 * pad - k) / stride + 1,
        };
        let out = kernels::conv_forward(
            &geom,
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(Shape::new(geom.n, geom.c_out, geom.h_out, geom.w_out), out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push_op(
            op,
            &inputs,
            value,
            Box::new(move |ctx| {
                let dx = ctx.needs[0]
                    .then(|| kernels::conv_backward_input(&geom, ctx.grad, ctx.inputs[1].data()));
                let dw = ctx.needs[1]
                    .then(|| kernels::conv_backward_weight(&geom, ctx.grad, ctx.inputs[0].data()));
                let mut grads = vec![dx, dw];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs[2].then(|| {
                        kernels::channel_sums(ctx.grad, geom.n, geom.c_out, geom.h_out * geom.w_out)
                    }));
                }
                grads
            }),
        ))
    }

    /// 2-D convolution; weight `(c_out, c_in, k, k)`, bias of length `c_out`.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        self.grouped_conv("conv2d", x, weight, bias, stride, padding, 1)
    }

    /// Per-channel convolution; weight `(c, 1, k, k)`, stride 1.
    pub fn depthwise_conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        padding: Padding,
    ) -> Result<Var> {
        let c = self.shape_of(x).c;
        let ws = self.shape_of(weight);
        if ws.n != c || ws.c != 1 {
            return Err(Error::shape(
                "depthwise_conv2d",
                format!("weight {ws} for {c} input channels, expected ({c}, 1, k, k)"),
            ));
        }
        self.grouped_conv("depthwise_conv2d", x, weight, bias, 1, padding, c)
    }

    /// Depthwise `k x k` (same padding) followed by a pointwise `1 x 1` conv.
    pub fn separable_conv2d(
        &mut self,
        x: Var,
        depthwise: Var,
        pointwise: Var,
        bias: Option<Var>,
    ) -> Result<Var> {
        let ds = self.shape_of(depthwise);
        let ps = self.shape_of(pointwise);
        if ps.c != ds.n || ps.h != 1 || ps.w != 1 {
            return Err(Error::shape(
                "separable_conv2d",
                format!("pointwise weight {ps} does not follow depthwise weight {ds}"),
            ));
        }
        let mid = self.depthwise_conv2d(x, depthwise, None, Padding::Same)?;
        self.conv2d(mid, pointwise, bias, 1, Padding::Valid)
    }

    /// Transposed convolution without padding; weight `(c_in, c_out, k, k)`.
    pub fn transposed_conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        const OP: &str = "transposed_conv2d";
        if stride != 1 && stride != 2 {
            return Err(Error::invalid(OP, format!("unsupported stride {stride}, expected 1 or 2")));
        }
        let xs = self.shape_of(x);
        let ws = self.shape_of(weight);
        if ws.n != xs.c || ws.h != ws.w || ws.h == 0 {
            return Err(Error::shape(OP, format!("weight {ws} for input {xs}")));
        }
        if xs.h == 0 || xs.w == 0 {
            return Err(Error::shape(OP, format!("empty input {xs}")));
        }
        if let Some(b) = bias {
            let n = self.value(b).numel();
            if n != ws.c {
                return Err(Error::shape(OP, format!("bias of length {n} for {} outputs", ws.c)));
            }
        }
        let geom = TConvGeom {
            n: xs.n,
            c_in: xs.c,
            h: xs.h,
            w: xs.w,
            c_out: ws.c,
            k: ws.h,
            stride,
        };
        let out = kernels::tconv_forward(
            &geom,
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(Shape::new(xs.n, ws.c, geom.h_out(), geom.w_out()), out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push_op(
            OP,
            &inputs,
            value,
            Box::new(move |ctx| {
                let dx = ctx.needs[0]
                    .then(|| kernels::tconv_backward_input(&geom, ctx.grad, ctx.inputs[1].data()));
                let dw = ctx.needs[1]
                    .then(|| kernels::tconv_backward_weight(&geom, ctx.grad, ctx.inputs[0].data()));
                let mut grads = vec![dx, dw];
                if ctx.inputs.len() == 3 {
                    let plane = geom.h_out() * geom.w_out();
                    grads.push(
                        ctx.needs[2]
                            .then(|| kernels::channel_sums(ctx.grad, geom.n, geom.c_out, plane)),
                    );
                }
                grads
            }),
        ))
    }

    /// Affine map of each flattened batch item; weight `(d_out, d_in, 1, 1)`.
    /// Output shape is `(n, d_out, 1, 1)`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        const OP: &str = "dense";
        let xs = self.shape_of(x);
        let ws = self.shape_of(weight);
        let d_in = xs.c * xs.h * xs.w;
        if ws.c * ws.h * ws.w != d_in {
            return Err(Error::shape(
                OP,
                format!("weight {ws} expects {} inputs, got {d_in}", ws.c * ws.h * ws.w),
            ));
        }
        let d_out = ws.n;
        if let Some(b) = bias {
            let n = self.value(b).numel();
            if n != d_out {
                return Err(Error::shape(OP, format!("bias of length {n} for {d_out} outputs")));
            }
        }
        let xd = self.value(x).data();
        let wd = self.value(weight).data();
        let bd = bias.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); xs.n * d_out];
        for b in 0..xs.n {
            let row = &xd[b * d_in..(b + 1) * d_in];
            for o in 0..d_out {
                let acc: T = wd[o * d_in..(o + 1) * d_in]
                    .iter()
                    .zip(row)
                    .map(|(&w, &v)| w * v)
                    .sum();
                out[b * d_out + o] = acc + bd.map_or(T::zero(), |bd| bd[o]);
            }
        }
        let value = Tensor::new(Shape::new(xs.n, d_out, 1, 1), out)?;
        let n = xs.n;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push_op(
            OP,
            &inputs,
            value,
            Box::new(move |ctx| {
                let xd = ctx.inputs[0].data();
                let wd = ctx.inputs[1].data();
                let g = ctx.grad;
                let dx = ctx.needs[0].then(|| {
                    let mut dx = vec![T::zero(); n * d_in];
                    for b in 0..n {
                        for o in 0..d_out {
                            let go = g[b * d_out + o];
                            for (d, &w) in dx[b * d_in..(b + 1) * d_in]
                                .iter_mut()
                                .zip(&wd[o * d_in..(o + 1) * d_in])
                            {
                                *d += go * w;
                            }
                        }
                    }
                    dx
                });
                let dw = ctx.needs[1].then(|| {
                    let mut dw = vec![T::zero(); d_out * d_in];
                    for b in 0..n {
                        for o in 0..d_out {
                            let go = g[b * d_out + o];
                            for (d, &v) in dw[o * d_in..(o + 1) * d_in]
                                .iter_mut()
                                .zip(&xd[b * d_in..(b + 1) * d_in])
                            {
                                *d += go * v;
                            }
                        }
                    }
                    dw
                });
                let mut grads = vec![dx, dw];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs[2].then(|| kernels::channel_sums(g, n, d_out, 1)));
                }
                grads
            }),
        ))
    }

    /// Per-sample, per-channel normalisation followed by a per-channel affine.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        const OP: &str = "instance_norm";
        let xs = self.shape_of(x);
        if self.value(gamma).numel() != xs.c || self.value(beta).numel() != xs.c {
            return Err(Error::shape(
                OP,
                format!(
                    "gamma/beta of length {}/{} for input {xs}",
                    self.value(gamma).numel(),
                    self.value(beta).numel()
                ),
            ));
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::invalid(OP, "eps must be positive"));
        }
        let plane = xs.plane();
        let inv_len = T::from_f64(1.0 / plane as f64);
        let eps_t = T::from_f64(eps);
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        // normalised values and per-plane inverse std are reused in backward
        let mut xhat = vec![T::zero(); xs.numel()];
        let mut inv_std = vec![T::zero(); xs.n * xs.c];
        let mut out = vec![T::zero(); xs.numel()];
        for p in 0..xs.n * xs.c {
            let src = &xd[p * plane..(p + 1) * plane];
            let mean = src.iter().copied().sum::<T>() * inv_len;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_len;
            let is = T::one() / (var + eps_t).sqrt();
            inv_std[p] = is;
            let ch = p % xs.c;
            for j in 0..plane {
                let h = (src[j] - mean) * is;
                xhat[p * plane + j] = h;
                out[p * plane + j] = gd[ch] * h + bd[ch];
            }
        }
        let value = Tensor::new(xs, out)?;
        Ok(self.push_op(
            OP,
            &[x, gamma, beta],
            value,
            Box::new(move |ctx| {
                let g = ctx.grad;
                let gd = ctx.inputs[1].data();
                let c = xs.c;
                let dx = ctx.needs[0].then(|| {
                    let mut dx = vec![T::zero(); xs.numel()];
                    for p in 0..xs.n * c {
                        let gp = &g[p * plane..(p + 1) * plane];
                        let hp = &xhat[p * plane..(p + 1) * plane];
                        let mean_g = gp.iter().copied().sum::<T>() * inv_len;
                        let mean_gh =
                            gp.iter().zip(hp).map(|(&a, &b)| a * b).sum::<T>() * inv_len;
                        let scale = gd[p % c] * inv_std[p];
                        for j in 0..plane {
                            dx[p * plane + j] = scale * (gp[j] - mean_g - hp[j] * mean_gh);
                        }
                    }
                    dx
                });
                let dgamma = ctx.needs[1].then(|| {
                    let mut d = vec![T::zero(); c];
                    for p in 0..xs.n * c {
                        d[p % c] += g[p * plane..(p + 1) * plane]
                            .iter()
                            .zip(&xhat[p * plane..(p + 1) * plane])
                            .map(|(&a, &b)| a * b)
                            .sum::<T>();
                    }
                    d
                });
                let dbeta = ctx.needs[2].then(|| kernels::channel_sums(g, xs.n, c, plane));
                vec![dx, dgamma, dbeta]
            }),
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(T::zero())).collect();
        let value = Tensor::new(v.shape(), data).expect("same shape");
        self.push_op(
            "relu",
            &[x],
            value,
            Box::new(|ctx| {
                let xd = ctx.inputs[0].data();
                vec![Some(elementwise(ctx.grad, |i, g| {
                    if xd[i] > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                }))]
            }),
        )
    }

    /// Logistic sigmoid; outputs are kept strictly inside `(0, 1)`.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let lo = T::min_positive_value();
        let hi = T::one() - T::epsilon() / T::from_f64(2.0);
        let data = v
            .data()
            .iter()
            .map(|&a| {
                let s = if a >= T::zero() {
                    T::one() / (T::one() + (-a).exp())
                } else {
                    let e = a.exp();
                    e / (T::one() + e)
                };
                s.max(lo).min(hi)
            })
            .collect();
        let value = Tensor::new(v.shape(), data).expect("same shape");
        self.push_op(
            "sigmoid",
            &[x],
            value,
            Box::new(|ctx| {
                let y = ctx.output.data();
                vec![Some(elementwise(ctx.grad, |i, g| g * y[i] * (T::one() - y[i])))]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(Error::shape("add", format!("{sa} vs {sb}")));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(sa, data)?;
        Ok(self.push_op(
            "add",
            &[a, b],
            value,
            Box::new(|ctx| {
                vec![
                    ctx.needs[0].then(|| ctx.grad.to_vec()),
                    ctx.needs[1].then(|| ctx.grad.to_vec()),
                ]
            }),
        ))
    }

    /// Element-wise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(Error::shape("mul", format!("{sa} vs {sb}")));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(sa, data)?;
        Ok(self.push_op(
            "mul",
            &[a, b],
            value,
            Box::new(|ctx| {
                let (ad, bd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                vec![
                    ctx.needs[0].then(|| elementwise(ctx.grad, |i, g| g * bd[i])),
                    ctx.needs[1].then(|| elementwise(ctx.grad, |i, g| g * ad[i])),
                ]
            }),
        ))
    }

    /// Scales channel `c` of `x` by `w[c]`; `w` is `(1, c, 1, 1)` or `(n, c, 1, 1)`.
    pub fn mul_per_channel(&mut self, x: Var, w: Var) -> Result<Var> {
        const OP: &str = "mul_per_channel";
        let xs = self.shape_of(x);
        let ws = self.shape_of(w);
        if ws.c != xs.c || ws.h != 1 || ws.w != 1 || !(ws.n == 1 || ws.n == xs.n) {
            return Err(Error::shape(OP, format!("weights {ws} for input {xs}")));
        }
        let per_item = ws.n != 1;
        let widx = move |p: usize| if per_item { p } else { p % xs.c };
        let plane = xs.plane();
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![T::zero(); xs.numel()];
        for p in 0..xs.n * xs.c {
            let wv = wd[widx(p)];
            for j in p * plane..(p + 1) * plane {
                out[j] = xd[j] * wv;
            }
        }
        let value = Tensor::new(xs, out)?;
        Ok(self.push_op(
            OP,
            &[x, w],
            value,
            Box::new(move |ctx| {
                let (xd, wd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let g = ctx.grad;
                let dx = ctx.needs[0].then(|| elementwise(g, |j, gv| gv * wd[widx(j / plane)]));
                let dw = ctx.needs[1].then(|| {
                    let mut dw = vec![T::zero(); wd.len()];
                    for p in 0..xs.n * xs.c {
                        dw[widx(p)] += g[p * plane..(p + 1) * plane]
                            .iter()
                            .zip(&xd[p * plane..(p + 1) * plane])
                            .map(|(&a, &b)| a * b)
                            .sum::<T>();
                    }
                    dw
                });
                vec![dx, dw]
            }),
        ))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::from_f64(factor);
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a * f).collect();
        let value = Tensor::new(v.shape(), data).expect("same shape");
        self.push_op(
            "scale",
            &[x],
            value,
            Box::new(move |ctx| vec![Some(ctx.grad.iter().map(|&g| g * f).collect())]),
        )
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let first = self.shape_of(
            *xs.first()
                .ok_or_else(|| Error::invalid(OP, "nothing to concatenate"))?,
        );
        let mut channels = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.shape_of(v);
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(Error::shape(OP, format!("{s} vs {first}")));
            }
            channels.push(s.c);
        }
        let total: usize = channels.iter().sum();
        let plane = first.plane();
        let shape = Shape::new(first.n, total, first.h, first.w);
        let mut out = Vec::with_capacity(shape.numel());
        for b in 0..first.n {
            for (&v, &c) in xs.iter().zip(&channels) {
                out.extend_from_slice(&self.value(v).data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(
            OP,
            xs,
            value,
            Box::new(move |ctx| {
                let mut offset = 0;
                channels
                    .iter()
                    .enumerate()
                    .map(|(idx, &c)| {
                        let start = offset;
                        offset += c;
                        ctx.needs[idx].then(|| {
                            let mut g = Vec::with_capacity(first.n * c * plane);
                            for b in 0..first.n {
                                let base = (b * total + start) * plane;
                                g.extend_from_slice(&ctx.grad[base..base + c * plane]);
                            }
                            g
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Channels `start..start + len` of `x`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape_of(x);
        if start + len > xs.c || len == 0 {
            return Err(Error::shape(
                "slice_channels",
                format!("channels {start}..{} of {xs}", start + len),
            ));
        }
        let plane = xs.plane();
        let mut out = Vec::with_capacity(xs.n * len * plane);
        for b in 0..xs.n {
            let base = (b * xs.c + start) * plane;
            out.extend_from_slice(&self.value(x).data()[base..base + len * plane]);
        }
        let value = Tensor::new(Shape::new(xs.n, len, xs.h, xs.w), out)?;
        Ok(self.push_op(
            "slice_channels",
            &[x],
            value,
            Box::new(move |ctx| {
                let mut dx = vec![T::zero(); xs.numel()];
                for b in 0..xs.n {
                    let base = (b * xs.c + start) * plane;
                    dx[base..base + len * plane]
                        .copy_from_slice(&ctx.grad[b * len * plane..(b + 1) * len * plane]);
                }
                vec![Some(dx)]
            }),
        ))
    }

    fn pool_geometry(&self, op: &'static str, x: Var, k: usize, stride: usize) -> Result<(Shape, Shape)> {
        let xs = self.shape_of(x);
        if k == 0 || stride == 0 {
            return Err(Error::invalid(op, "kernel and stride must be positive"));
        }
        if xs.h < k || xs.w < k {
            return Err(Error::shape(op, format!("window {k} larger than input {xs}")));
        }
        let os = Shape::new(xs.n, xs.c, (xs.h - k) / stride + 1, (xs.w - k) / stride + 1);
        Ok((xs, os))
    }

    pub fn avg_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (xs, os) = self.pool_geometry("avg_pool2d", x, k, stride)?;
        let inv = T::from_f64(1.0 / (k * k) as f64);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); os.numel()];
        for p in 0..xs.n * xs.c {
            let src = &xd[p * xs.plane()..(p + 1) * xs.plane()];
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut acc = T::zero();
                    for ky in 0..k {
                        for kx in 0..k {
                            acc += src[(oy * stride + ky) * xs.w + ox * stride + kx];
                        }
                    }
                    out[p * os.plane() + oy * os.w + ox] = acc * inv;
                }
            }
        }
        let value = Tensor::new(os, out)?;
        Ok(self.push_op(
            "avg_pool2d",
            &[x],
            value,
            Box::new(move |ctx| {
                let mut dx = vec![T::zero(); xs.numel()];
                for p in 0..xs.n * xs.c {
                    for oy in 0..os.h {
                        for ox in 0..os.w {
                            let g = ctx.grad[p * os.plane() + oy * os.w + ox] * inv;
                            for ky in 0..k {
                                for kx in 0..k {
                                    dx[p * xs.plane() + (oy * stride + ky) * xs.w + ox * stride + kx] += g;
                                }
                            }
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Max pooling; ties resolve to the first element in scan order.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (xs, os) = self.pool_geometry("max_pool2d", x, k, stride)?;
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); os.numel()];
        let mut argmax = vec![0usize; os.numel()];
        for p in 0..xs.n * xs.c {
            let base = p * xs.plane();
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut best = base + oy * stride * xs.w + ox * stride;
                    for ky in 0..k {
                        for kx in 0..k {
                            let j = base + (oy * stride + ky) * xs.w + ox * stride + kx;
                            if xd[j] > xd[best] {
                                best = j;
                            }
                        }
                    }
                    let o = p * os.plane() + oy * os.w + ox;
                    out[o] = xd[best];
                    argmax[o] = best;
                }
            }
        }
        let value = Tensor::new(os, out)?;
        Ok(self.push_op(
            "max_pool2d",
            &[x],
            value,
            Box::new(move |ctx| {
                let mut dx = vec![T::zero(); xs.numel()];
                for (&j, &g) in argmax.iter().zip(ctx.grad) {
                    dx[j] += g;
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Spatial mean per channel, `(n, c, h, w) -> (n, c, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xs = self.shape_of(x);
        let plane = xs.plane();
        let inv = T::from_f64(1.0 / plane as f64);
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(Shape::new(xs.n, xs.c, 1, 1), data).expect("pooled shape");
        self.push_op(
            "global_avg_pool",
            &[x],
            value,
            Box::new(move |ctx| {
                let mut dx = Vec::with_capacity(xs.numel());
                for &g in ctx.grad {
                    dx.extend(std::iter::repeat_n(g * inv, plane));
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Sum of all elements as a `(1, 1, 1, 1)` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<T>();
        let numel = self.value(x).numel();
        self.push_op(
            "sum",
            &[x],
            Tensor::scalar(total),
            Box::new(move |ctx| vec![Some(vec![ctx.grad[0]; numel])]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let numel = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, 1.0 / numel as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_same_of_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(Shape::new(1, 1, 4, 4), 1.0));
        let w = g.input(Tensor::full(Shape::new(1, 1, 3, 3), 1.0));
        let b = g.input(Tensor::vector(vec![0.0]));
        let y = g.conv2d(x, w, Some(b), 1, Padding::Same).unwrap();
        let v = g.value(y);
        assert_eq!(v.shape(), Shape::new(1, 1, 4, 4));
        assert_eq!(v.at(0, 0, 1, 1), 9.0);
        assert_eq!(v.at(0, 0, 2, 2), 9.0);
        assert_eq!(v.at(0, 0, 0, 0), 4.0);
        assert_eq!(v.at(0, 0, 3, 3), 4.0);
        assert_eq!(v.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..18).map(|v| v as f64 * 0.5 - 3.0).collect();
        let x = g.input(t(Shape::new(2, 1, 3, 3), &data));
        let w = g.input(Tensor::full(Shape::new(1, 1, 1, 1), 1.0));
        let y = g.conv2d(x, w, None, 1, Padding::Same).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn conv_channel_mismatch_is_reported() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(Shape::new(1, 2, 4, 4)));
        let w = g.input(Tensor::zeros(Shape::new(1, 3, 3, 3)));
        let err = g.conv2d(x, w, None, 1, Padding::Same).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "conv2d", .. }), "{err}");
    }

    #[test]
    fn strided_conv_halves() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(Shape::new(1, 3, 64, 64)));
        let w = g.input(Tensor::zeros(Shape::new(4, 3, 7, 7)));
        let y = g.conv2d(x, w, None, 2, Padding::Same).unwrap();
        assert_eq!(g.value(y).shape(), Shape::new(1, 4, 32, 32));
        let y = g.conv2d(x, w, None, 1, Padding::Valid).unwrap();
        assert_eq!(g.value(y).shape(), Shape::new(1, 4, 58, 58));
    }

    #[test]
    fn separable_identity_and_mean() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..32).map(|v| (v as f64).sin()).collect();
        let x = g.input(t(Shape::new(1, 2, 4, 4), &data));
        let dw = g.input(Tensor::full(Shape::new(2, 1, 1, 1), 1.0));
        let eye = g.input(t(Shape::new(2, 2, 1, 1), &[1.0, 0.0, 0.0, 1.0]));
        let y = g.separable_conv2d(x, dw, eye, None).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);

        let half = g.input(t(Shape::new(1, 2, 1, 1), &[0.5, 0.5]));
        let y = g.separable_conv2d(x, dw, half, None).unwrap();
        for (j, &v) in g.value(y).data().iter().enumerate() {
            assert!((v - 0.5 * (data[j] + data[16 + j])).abs() < 1e-15);
        }

        let bad = g.input(Tensor::zeros(Shape::new(1, 3, 1, 1)));
        assert!(g.separable_conv2d(x, dw, bad, None).is_err());
    }

    #[test]
    fn transposed_conv_doubles() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(Shape::new(1, 1, 2, 2), 1.0));
        let w = g.input(Tensor::full(Shape::new(1, 1, 2, 2), 0.25));
        let y = g.transposed_conv2d(x, w, None, 2).unwrap();
        let v = g.value(y);
        assert_eq!(v.shape(), Shape::new(1, 1, 4, 4));
        assert!(v.data().iter().all(|&a| a == 0.25));

        let w1 = g.input(Tensor::full(Shape::new(1, 1, 1, 1), 1.0));
        let y = g.transposed_conv2d(x, w1, None, 1).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());

        assert!(matches!(
            g.transposed_conv2d(x, w, None, 3),
            Err(Error::InvalidArgument { .. })
        ));
    }

    #[test]
    fn dense_hand_values() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(Shape::new(1, 2, 1, 1), &[1.0, 2.0]));
        let w = g.input(t(Shape::new(1, 2, 1, 1), &[1.0, 1.0]));
        let b = g.input(Tensor::vector(vec![0.5]));
        let y = g.dense(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[3.5]);

        let eye = g.input(t(Shape::new(2, 2, 1, 1), &[1.0, 0.0, 0.0, 1.0]));
        let y = g.dense(x, eye, None).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);

        let wrong = g.input(Tensor::zeros(Shape::new(1, 3, 1, 1)));
        assert!(g.dense(x, wrong, None).is_err());
    }

    #[test]
    fn instance_norm_hand_values() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(Shape::new(1, 1, 1, 2), &[1.0, 3.0]));
        let gamma = g.input(Tensor::vector(vec![1.0]));
        let beta = g.input(Tensor::vector(vec![0.0]));
        let y = g.instance_norm(x, gamma, beta, 1e-12).unwrap();
        let v = g.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);

        let c = g.input(Tensor::full(Shape::new(1, 1, 3, 3), 7.0));
        let beta = g.input(Tensor::vector(vec![0.25]));
        let y = g.instance_norm(c, gamma, beta, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn activations() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::new(Shape::new(1, 1, 1, 4), vec![-1.0, 2.0, 0.0, 100.0]).unwrap());
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 2.0, 0.0, 100.0]);
        let s = g.sigmoid(x);
        let sv = g.value(s).data();
        assert_eq!(sv[2], 0.5);
        assert!(sv.iter().all(|&v| v > 0.0 && v < 1.0));
        let neg = g.input(Tensor::full(Shape::new(1, 1, 1, 1), -200.0));
        let s = g.sigmoid(neg);
        assert!(g.value(s).data()[0] > 0.0);
    }

    #[test]
    fn concat_and_slice_recover_parts() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::from_fn(Shape::new(2, 2, 3, 3), |n, c, h, w| {
            (n * 100 + c * 10 + h * 3 + w) as f64
        }));
        let b = g.input(Tensor::from_fn(Shape::new(2, 3, 3, 3), |n, c, h, w| {
            -((n * 100 + c * 10 + h * 3 + w) as f64)
        }));
        let cat = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(cat).shape(), Shape::new(2, 5, 3, 3));
        let a2 = g.slice_channels(cat, 0, 2).unwrap();
        let b2 = g.slice_channels(cat, 2, 3).unwrap();
        assert_eq!(g.value(a2), g.value(a));
        assert_eq!(g.value(b2), g.value(b));

        let odd = g.input(Tensor::zeros(Shape::new(2, 1, 4, 3)));
        assert!(g.concat_channels(&[a, odd]).is_err());
    }

    #[test]
    fn per_channel_ones_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(Shape::new(2, 3, 2, 2), |n, c, h, w| {
            (n + 2 * c + 3 * h + 5 * w) as f64
        }));
        let w = g.input(Tensor::vector(vec![1.0; 3]));
        let y = g.mul_per_channel(x, w).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
        let bad = g.input(Tensor::vector(vec![1.0; 2]));
        assert!(g.mul_per_channel(x, bad).is_err());
    }

    #[test]
    fn pooling_shapes_and_values() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, h, w| (h * 4 + w) as f64));
        let a = g.avg_pool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(a).data(), &[2.5, 4.5, 10.5, 12.5]);
        let m = g.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(m).data(), &[5.0, 7.0, 13.0, 15.0]);
        let p = g.global_avg_pool(x);
        assert_eq!(g.value(p).data(), &[7.5]);
    }
}
