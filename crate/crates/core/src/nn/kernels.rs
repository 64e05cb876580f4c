//! Plain-slice kernels behind the differentiable ops.
//!
//! Work is always partitioned by output plane (or by weight block) with a
//! fixed inner summation order, so serial and parallel runs agree bit for bit.

use rayon::prelude::*;

use super::{parallel_enabled, Real};

pub(crate) fn for_each_chunk<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    if parallel_enabled() {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    } else {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Output positions `o` with `0 <= o * stride + offset - pad < in_len`.
#[inline]
fn valid_range(offset: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if offset >= pad {
        0
    } else {
        (pad - offset).div_ceil(stride)
    };
    if in_len + pad <= offset {
        return (0, 0);
    }
    let hi = ((in_len - 1 + pad - offset) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// Geometry of a (possibly grouped) 2-D convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    fn cin_per_group(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_per_group(&self) -> usize {
        self.c_out / self.groups
    }

    pub fn out_len(&self) -> usize {
        self.n * self.c_out * self.h_out * self.w_out
    }
}

pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let g = *g;
    let (cipg, copg) = (g.cin_per_group(), g.cout_per_group());
    let plane_in = g.h * g.w;
    let plane_out = g.h_out * g.w_out;
    let kk = g.k * g.k;
    let mut out = vec![T::zero(); g.out_len()];
    for_each_chunk(&mut out, plane_out, |idx, dst| {
        let (b, o) = (idx / g.c_out, idx % g.c_out);
        let group = o / copg;
        if let Some(bias) = bias {
            dst.fill(bias[o]);
        }
        for ci in 0..cipg {
            let i = group * cipg + ci;
            let src = &x[(b * g.c_in + i) * plane_in..][..plane_in];
            let wk = &w[(o * cipg + ci) * kk..][..kk];
            for ky in 0..g.k {
                let (oy_lo, oy_hi) = valid_range(ky, g.pad, g.stride, g.h, g.h_out);
                for kx in 0..g.k {
                    let wv = wk[ky * g.k + kx];
                    let (ox_lo, ox_hi) = valid_range(kx, g.pad, g.stride, g.w, g.w_out);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let row = &src[iy * g.w..(iy + 1) * g.w];
                        let drow = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                        if g.stride == 1 {
                            let off = ox_lo + kx - g.pad;
                            let len = ox_hi - ox_lo;
                            for (d, &s) in drow[ox_lo..ox_hi].iter_mut().zip(&row[off..off + len]) {
                                *d += wv * s;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                drow[ox] += wv * row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn conv_backward_input<T: Real>(g: &ConvGeom, grad: &[T], w: &[T]) -> Vec<T> {
    let g = *g;
    let (cipg, copg) = (g.cin_per_group(), g.cout_per_group());
    let plane_in = g.h * g.w;
    let plane_out = g.h_out * g.w_out;
    let kk = g.k * g.k;
    let mut dx = vec![T::zero(); g.n * g.c_in * plane_in];
    for_each_chunk(&mut dx, plane_in, |idx, dst| {
        let (b, i) = (idx / g.c_in, idx % g.c_in);
        let group = i / cipg;
        let ci = i % cipg;
        for o in group * copg..(group + 1) * copg {
            let gp = &grad[(b * g.c_out + o) * plane_out..][..plane_out];
            let wk = &w[(o * cipg + ci) * kk..][..kk];
            for ky in 0..g.k {
                let (oy_lo, oy_hi) = valid_range(ky, g.pad, g.stride, g.h, g.h_out);
                for kx in 0..g.k {
                    let wv = wk[ky * g.k + kx];
                    let (ox_lo, ox_hi) = valid_range(kx, g.pad, g.stride, g.w, g.w_out);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &gp[oy * g.w_out..(oy + 1) * g.w_out];
                        let drow = &mut dst[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let off = ox_lo + kx - g.pad;
                            let len = ox_hi - ox_lo;
                            for (d, &s) in drow[off..off + len].iter_mut().zip(&grow[ox_lo..ox_hi]) {
                                *d += wv * s;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                drow[ox * g.stride + kx - g.pad] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

pub(crate) fn conv_backward_weight<T: Real>(g: &ConvGeom, grad: &[T], x: &[T]) -> Vec<T> {
    let g = *g;
    let (cipg, copg) = (g.cin_per_group(), g.cout_per_group());
    let plane_in = g.h * g.w;
    let plane_out = g.h_out * g.w_out;
    let kk = g.k * g.k;
    let mut dw = vec![T::zero(); g.c_out * cipg * kk];
    for_each_chunk(&mut dw, cipg * kk, |o, dst| {
        let group = o / copg;
        for b in 0..g.n {
            let gp = &grad[(b * g.c_out + o) * plane_out..][..plane_out];
            for ci in 0..cipg {
                let i = group * cipg + ci;
                let src = &x[(b * g.c_in + i) * plane_in..][..plane_in];
                for ky in 0..g.k {
                    let (oy_lo, oy_hi) = valid_range(ky, g.pad, g.stride, g.h, g.h_out);
                    for kx in 0..g.k {
                        let (ox_lo, ox_hi) = valid_range(kx, g.pad, g.stride, g.w, g.w_out);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let mut acc = T::zero();
                        for oy in oy_lo..oy_hi {
                            let iy = oy * g.stride + ky - g.pad;
                            let row = &src[iy * g.w..(iy + 1) * g.w];
                            let grow = &gp[oy * g.w_out..(oy + 1) * g.w_out];
                            if g.stride == 1 {
                                let off = ox_lo + kx - g.pad;
                                let len = ox_hi - ox_lo;
                                acc += dot(&grow[ox_lo..ox_hi], &row[off..off + len]);
                            } else {
                                for ox in ox_lo..ox_hi {
                                    acc += grow[ox] * row[ox * g.stride + kx - g.pad];
                                }
                            }
                        }
                        dst[ci * kk + ky * g.k + kx] += acc;
                    }
                }
            }
        }
    });
    dw
}

/// Sum over batch and space, one entry per channel.
pub(crate) fn channel_sums<T: Real>(grad: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for b in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += grad[(b * c + ch) * plane..][..plane].iter().copied().sum::<T>();
        }
    }
    out
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // four partial sums let the compiler vectorise without reordering per call site
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for j in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * j + l] * b[4 * j + l];
        }
    }
    let mut tail = T::zero();
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Geometry of an unpadded transposed convolution, weight `(c_in, c_out, k, k)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct TConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl TConvGeom {
    pub fn h_out(&self) -> usize {
        (self.h - 1) * self.stride + self.k
    }

    pub fn w_out(&self) -> usize {
        (self.w - 1) * self.stride + self.k
    }
}

pub(crate) fn tconv_forward<T: Real>(g: &TConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let g = *g;
    let (ho, wo) = (g.h_out(), g.w_out());
    let plane_in = g.h * g.w;
    let kk = g.k * g.k;
    let mut out = vec![T::zero(); g.n * g.c_out * ho * wo];
    for_each_chunk(&mut out, ho * wo, |idx, dst| {
        let (b, o) = (idx / g.c_out, idx % g.c_out);
        if let Some(bias) = bias {
            dst.fill(bias[o]);
        }
        for i in 0..g.c_in {
            let src = &x[(b * g.c_in + i) * plane_in..][..plane_in];
            let wk = &w[(i * g.c_out + o) * kk..][..kk];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = wk[ky * g.k + kx];
                    for iy in 0..g.h {
                        let drow = &mut dst[(iy * g.stride + ky) * wo..][..wo];
                        let row = &src[iy * g.w..(iy + 1) * g.w];
                        for (ix, &s) in row.iter().enumerate() {
                            drow[ix * g.stride + kx] += wv * s;
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn tconv_backward_input<T: Real>(g: &TConvGeom, grad: &[T], w: &[T]) -> Vec<T> {
    let g = *g;
    let (ho, wo) = (g.h_out(), g.w_out());
    let plane_in = g.h * g.w;
    let kk = g.k * g.k;
    let mut dx = vec![T::zero(); g.n * g.c_in * plane_in];
    for_each_chunk(&mut dx, plane_in, |idx, dst| {
        let (b, i) = (idx / g.c_in, idx % g.c_in);
        for o in 0..g.c_out {
            let gp = &grad[(b * g.c_out + o) * ho * wo..][..ho * wo];
            let wk = &w[(i * g.c_out + o) * kk..][..kk];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = wk[ky * g.k + kx];
                    for iy in 0..g.h {
                        let grow = &gp[(iy * g.stride + ky) * wo..][..wo];
                        let drow = &mut dst[iy * g.w..(iy + 1) * g.w];
                        for (ix, d) in drow.iter_mut().enumerate() {
                            *d += wv * grow[ix * g.stride + kx];
                        }
                    }
                }
            }
        }
    });
    dx
}

pub(crate) fn tconv_backward_weight<T: Real>(g: &TConvGeom, grad: &[T], x: &[T]) -> Vec<T> {
    let g = *g;
    let (ho, wo) = (g.h_out(), g.w_out());
    let plane_in = g.h * g.w;
    let kk = g.k * g.k;
    let mut dw = vec![T::zero(); g.c_in * g.c_out * kk];
    for_each_chunk(&mut dw, g.c_out * kk, |i, dst| {
        for b in 0..g.n {
            let src = &x[(b * g.c_in + i) * plane_in..][..plane_in];
            for o in 0..g.c_out {
                let gp = &grad[(b * g.c_out + o) * ho * wo..][..ho * wo];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let mut acc = T::zero();
                        for iy in 0..g.h {
                            let grow = &gp[(iy * g.stride + ky) * wo..][..wo];
                            let row = &src[iy * g.w..(iy + 1) * g.w];
                            for (ix, &s) in row.iter().enumerate() {
                                acc += s * grow[ix * g.stride + kx];
                            }
                        }
                        dst[o * kk + ky * g.k + kx] += acc;
                    }
                }
            }
        }
    });
    dw
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_covers_padding() {
        // k=3, pad=1, stride 1, len 4: offset 0 skips the first output
        assert_eq!(valid_range(0, 1, 1, 4, 4), (1, 4));
        assert_eq!(valid_range(1, 1, 1, 4, 4), (0, 4));
        assert_eq!(valid_range(2, 1, 1, 4, 4), (0, 3));
        // stride 2, k=7, pad=3, len 8 -> 4 outputs
        assert_eq!(valid_range(0, 3, 2, 8, 4), (2, 4));
        assert_eq!(valid_range(6, 3, 2, 8, 4), (0, 3));
    }
}
