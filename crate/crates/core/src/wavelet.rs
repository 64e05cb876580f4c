//! Single-level 2-D Haar discrete wavelet transform.
//!
//! A `(n, c, h, w)` input becomes `(n, 4c, h/2, w/2)` with the subbands
//! stacked along channels in the fixed order `LL, LH, HL, HH`: channels
//! `0..c` hold LL, `c..2c` LH, `2c..3c` HL and `3c..4c` HH. For each 2x2
//! block `[[a, b], [c, d]]` the orthonormal convention gives
//!
//! ```text
//! LL = (a + b + c + d) / 2    LH = (a - b + c - d) / 2
//! HL = (a + b - c - d) / 2    HH = (a - b - c + d) / 2
//! ```
//!
//! so the transform is its own adjoint-inverse and preserves energy.

use crate::error::{Error, Result};
use crate::nn::{Graph, Real, Shape, Tensor, Var};

/// Normalisation of the Haar filters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HaarNorm {
    /// Coefficients `1/2`; energy preserving.
    #[default]
    Orthonormal,
    /// Coefficients `1/4`; LL is the block mean.
    Average,
}

impl HaarNorm {
    fn scale(self) -> f64 {
        match self {
            HaarNorm::Orthonormal => 0.5,
            HaarNorm::Average => 0.25,
        }
    }
}

/// Stacked subbands produced by [`dwt_haar_forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletDecomposition<T: Real = f32> {
    pub tensor: Tensor<T>,
    pub norm: HaarNorm,
}

impl<T: Real> WaveletDecomposition<T> {
    /// Channels of the input that was decomposed.
    pub fn input_channels(&self) -> usize {
        self.tensor.shape().c / 4
    }

    /// Subband `band` (0 = LL, 1 = LH, 2 = HL, 3 = HH) as its own tensor.
    pub fn subband(&self, band: usize) -> Result<Tensor<T>> {
        if band > 3 {
            return Err(Error::invalid("subband", format!("no subband {band}")));
        }
        let s = self.tensor.shape();
        let c = s.c / 4;
        let plane = s.plane();
        let mut out = Vec::with_capacity(s.n * c * plane);
        for b in 0..s.n {
            let base = (b * s.c + band * c) * plane;
            out.extend_from_slice(&self.tensor.data()[base..base + c * plane]);
        }
        Tensor::new(Shape::new(s.n, c, s.h, s.w), out)
    }
}

fn check_even(s: Shape) -> Result<()> {
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) || s.h == 0 || s.w == 0 {
        return Err(Error::OddDimension { h: s.h, w: s.w });
    }
    Ok(())
}

fn analysis<T: Real>(x: &[T], s: Shape, scale: T) -> Vec<T> {
    let (h2, w2) = (s.h / 2, s.w / 2);
    let sub = h2 * w2;
    let mut out = vec![T::zero(); s.numel()];
    for b in 0..s.n {
        for ch in 0..s.c {
            let src = &x[(b * s.c + ch) * s.plane()..][..s.plane()];
            let band = |k: usize| (b * 4 * s.c + k * s.c + ch) * sub;
            let (ll, lh, hl, hh) = (band(0), band(1), band(2), band(3));
            for y in 0..h2 {
                for xx in 0..w2 {
                    let a = src[2 * y * s.w + 2 * xx];
                    let bb = src[2 * y * s.w + 2 * xx + 1];
                    let c = src[(2 * y + 1) * s.w + 2 * xx];
                    let d = src[(2 * y + 1) * s.w + 2 * xx + 1];
                    let o = y * w2 + xx;
                    out[ll + o] = scale * (a + bb + c + d);
                    out[lh + o] = scale * (a - bb + c - d);
                    out[hl + o] = scale * (a + bb - c - d);
                    out[hh + o] = scale * (a - bb - c + d);
                }
            }
        }
    }
    out
}

/// Transpose of [`analysis`]: maps stacked subbands back onto 2x2 blocks,
/// weighting every coefficient by `scale`.
fn synthesis<T: Real>(coeffs: &[T], s: Shape, scale: T) -> Vec<T> {
    let (h2, w2) = (s.h / 2, s.w / 2);
    let sub = h2 * w2;
    let mut out = vec![T::zero(); s.numel()];
    for b in 0..s.n {
        for ch in 0..s.c {
            let dst = &mut out[(b * s.c + ch) * s.plane()..][..s.plane()];
            let band = |k: usize| (b * 4 * s.c + k * s.c + ch) * sub;
            let (ll, lh, hl, hh) = (band(0), band(1), band(2), band(3));
            for y in 0..h2 {
                for xx in 0..w2 {
                    let o = y * w2 + xx;
                    let (p, q, r, t) = (coeffs[ll + o], coeffs[lh + o], coeffs[hl + o], coeffs[hh + o]);
                    dst[2 * y * s.w + 2 * xx] = scale * (p + q + r + t);
                    dst[2 * y * s.w + 2 * xx + 1] = scale * (p - q + r - t);
                    dst[(2 * y + 1) * s.w + 2 * xx] = scale * (p + q - r - t);
                    dst[(2 * y + 1) * s.w + 2 * xx + 1] = scale * (p - q - r + t);
                }
            }
        }
    }
    out
}

fn band_shape(s: Shape) -> Shape {
    Shape::new(s.n, 4 * s.c, s.h / 2, s.w / 2)
}

/// Orthonormal Haar analysis of a plain tensor.
pub fn dwt_haar_forward<T: Real>(x: &Tensor<T>) -> Result<WaveletDecomposition<T>> {
    dwt_haar_forward_with(x, HaarNorm::Orthonormal)
}

pub fn dwt_haar_forward_with<T: Real>(x: &Tensor<T>, norm: HaarNorm) -> Result<WaveletDecomposition<T>> {
    let s = x.shape();
    check_even(s)?;
    let data = analysis(x.data(), s, T::from_f64(norm.scale()));
    Ok(WaveletDecomposition {
        tensor: Tensor::new(band_shape(s), data)?,
        norm,
    })
}

/// Exact inverse of [`dwt_haar_forward_with`].
pub fn dwt_haar_inverse<T: Real>(d: &WaveletDecomposition<T>) -> Result<Tensor<T>> {
    let bs = d.tensor.shape();
    if !bs.c.is_multiple_of(4) {
        return Err(Error::shape(
            "dwt_haar_inverse",
            format!("{} channels is not a multiple of 4", bs.c),
        ));
    }
    let s = Shape::new(bs.n, bs.c / 4, bs.h * 2, bs.w * 2);
    // orthonormal: inverse == transpose; average: a = (LL + LH + HL + HH)
    let scale = match d.norm {
        HaarNorm::Orthonormal => 0.5,
        HaarNorm::Average => 1.0,
    };
    Tensor::new(s, synthesis(d.tensor.data(), s, T::from_f64(scale)))
}

/// Differentiable orthonormal Haar DWT on the tape.
pub fn dwt_haar<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.value(x).shape();
    check_even(s)?;
    let scale = T::from_f64(HaarNorm::Orthonormal.scale());
    let value = Tensor::new(band_shape(s), analysis(g.value(x).data(), s, scale))?;
    Ok(g.push_op(
        "dwt_haar",
        &[x],
        value,
        Box::new(move |ctx| vec![Some(synthesis(ctx.grad, s, scale))]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{random_tensor, GradCheck};

    #[test]
    fn hand_block() {
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let d = dwt_haar_forward(&x).unwrap();
        assert_eq!(d.tensor.shape(), Shape::new(1, 4, 1, 1));
        assert_eq!(d.tensor.data(), &[5.0, -1.0, -2.0, 0.0]);
    }

    #[test]
    fn constant_block_has_no_detail() {
        let x = Tensor::full(Shape::new(1, 1, 2, 2), 1.0f64);
        let d = dwt_haar_forward(&x).unwrap();
        assert_eq!(d.tensor.data(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 4));
        assert!(matches!(
            dwt_haar_forward(&x),
            Err(Error::OddDimension { h: 3, w: 4 })
        ));
        let mut g = Graph::<f32>::new();
        let v = g.input(x);
        assert!(dwt_haar(&mut g, v).is_err());
    }

    #[test]
    fn inverse_edge_cases() {
        let zero = WaveletDecomposition {
            tensor: Tensor::<f64>::zeros(Shape::new(1, 8, 3, 3)),
            norm: HaarNorm::Orthonormal,
        };
        let img = dwt_haar_inverse(&zero).unwrap();
        assert_eq!(img.shape(), Shape::new(1, 2, 6, 6));
        assert!(img.data().iter().all(|&v| v == 0.0));

        // LL-only decomposition of a constant 3.0 image
        let mut ll = Tensor::<f64>::zeros(Shape::new(1, 4, 2, 2));
        ll.data_mut()[..4].fill(6.0);
        let img = dwt_haar_inverse(&WaveletDecomposition {
            tensor: ll,
            norm: HaarNorm::Orthonormal,
        })
        .unwrap();
        assert!(img.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn average_convention_round_trips() {
        let x = random_tensor(Shape::new(2, 3, 4, 6), 11);
        let d = dwt_haar_forward_with(&x, HaarNorm::Average).unwrap();
        let back = dwt_haar_inverse(&d).unwrap();
        for (a, b) in x.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let ll = d.subband(0).unwrap();
        assert!((ll.data()[0] - 0.25 * (x.at(0, 0, 0, 0) + x.at(0, 0, 0, 1) + x.at(0, 0, 1, 0) + x.at(0, 0, 1, 1))).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = random_tensor(Shape::new(2, 3, 8, 8), 4);
        let report = GradCheck::default()
            .run(&[x], |g, v| dwt_haar(g, v[0]))
            .unwrap();
        assert!(report.passes(1e-6), "{report:?}");
    }
}
