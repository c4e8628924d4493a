use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Stride, zero padding, dilation and group count of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Conv2dParams {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
            groups: 1,
        }
    }
}

impl Conv2dParams {
    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    /// Output extent along one axis, `None` when the kernel does not fit.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
        let span = dilation * (kernel - 1) + 1;
        let padded = input + 2 * pad;
        if padded < span || stride == 0 {
            return None;
        }
        Some((padded - span) / stride + 1)
    }

    /// Validates `input` NCHW against `weight` (O, I/g, Kh, Kw) and returns the
    /// output shape.
    pub fn output_shape(&self, input: &[usize], weight: &[usize]) -> Result<[usize; 4]> {
        let (n, c, h, w) = match *input {
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::shape(format!("conv2d input must be NCHW, got {input:?}"))),
        };
        let (o, ig, kh, kw) = match *weight {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => return Err(Error::shape(format!("conv2d weight must be 4-D, got {weight:?}"))),
        };
        let g = self.groups;
        if g == 0 {
            return Err(Error::config("conv2d groups must be >= 1"));
        }
        if c % g != 0 {
            return Err(Error::Indivisible {
                what: "conv2d input channels",
                value: c,
                divisor: g,
            });
        }
        if o % g != 0 {
            return Err(Error::Indivisible {
                what: "conv2d output channels",
                value: o,
                divisor: g,
            });
        }
        if c / g != ig {
            return Err(Error::shape(format!(
                "conv2d weight {weight:?} expects {} input channels per group, input has {c} channels in {g} groups",
                ig
            )));
        }
        let ho = Self::out_extent(h, kh, self.stride.0, self.padding.0, self.dilation.0);
        let wo = Self::out_extent(w, kw, self.stride.1, self.padding.1, self.dilation.1);
        match (ho, wo) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok([n, o, ho, wo]),
            _ => Err(Error::EmptyOutput(format!(
                "conv2d of {input:?} with kernel {kh}x{kw} and {self:?}"
            ))),
        }
    }
}

/// Range `[lo, hi)` of output positions `o` with `0 <= o*stride + offset < len`.
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let room = in_len as isize - offset;
    let hi = if room <= 0 { 0 } else { (room + s - 1) / s };
    let lo = (lo as usize).min(out_len);
    let hi = (hi as usize).min(out_len);
    (lo, hi.max(lo))
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    cin_g: usize,
    cout_g: usize,
}

impl Geometry {
    fn new(input: &[usize], weight: &[usize], p: &Conv2dParams) -> Result<Self> {
        let [n, o, ho, wo] = p.output_shape(input, weight)?;
        Ok(Self {
            n,
            c: input[1],
            h: input[2],
            w: input[3],
            o,
            kh: weight[2],
            kw: weight[3],
            ho,
            wo,
            cin_g: weight[1],
            cout_g: o / p.groups,
        })
    }
}

/// Output channels computed together so each column row is loaded once.
const ROW_BLOCK: usize = 4;
/// Output positions per pass, so the accumulator rows stay in cache.
const TILE: usize = 512;

/// `(cin_g * kh * kw, ho * wo)` patch matrix of one group; padded taps are 0.
fn im2col(src: &[f64], g: &Geometry, p: &Conv2dParams, cols: &mut Vec<f64>) {
    let plane = g.ho * g.wo;
    cols.clear();
    cols.resize(g.cin_g * g.kh * g.kw * plane, 0.0);
    for cl in 0..g.cin_g {
        let xin = &src[cl * g.h * g.w..][..g.h * g.w];
        for ki in 0..g.kh {
            let off_h = (ki * p.dilation.0) as isize - p.padding.0 as isize;
            let (oh_lo, oh_hi) = valid_range(g.ho, g.h, p.stride.0, off_h);
            for kj in 0..g.kw {
                let off_w = (kj * p.dilation.1) as isize - p.padding.1 as isize;
                let (ow_lo, ow_hi) = valid_range(g.wo, g.w, p.stride.1, off_w);
                let row = &mut cols[((cl * g.kh + ki) * g.kw + kj) * plane..][..plane];
                for oh in oh_lo..oh_hi {
                    let ih = ((oh * p.stride.0) as isize + off_h) as usize;
                    let xrow = &xin[ih * g.w..][..g.w];
                    let dst = &mut row[oh * g.wo..][..g.wo];
                    for ow in ow_lo..ow_hi {
                        dst[ow] = xrow[((ow * p.stride.1) as isize + off_w) as usize];
                    }
                }
            }
        }
    }
}

/// `acc[r] += sum_k w[r, k] * cols[k]` for up to [`ROW_BLOCK`] rows, adding
/// the `k` terms in ascending order.
fn gemm_rows(acc: &mut [f64], w: &[f64], cols: &[f64], k_len: usize, plane: usize) {
    let rows = acc.len() / plane;
    for j0 in (0..plane).step_by(TILE) {
        let j1 = (j0 + TILE).min(plane);
        if rows == ROW_BLOCK {
            let (a0, rest) = acc.split_at_mut(plane);
            let (a1, rest) = rest.split_at_mut(plane);
            let (a2, a3) = rest.split_at_mut(plane);
            let (a0, a1, a2, a3) = (&mut a0[j0..j1], &mut a1[j0..j1], &mut a2[j0..j1], &mut a3[j0..j1]);
            for k in 0..k_len {
                let (w0, w1, w2, w3) = (w[k], w[k_len + k], w[2 * k_len + k], w[3 * k_len + k]);
                let c = &cols[k * plane + j0..k * plane + j1];
                for (j, &cv) in c.iter().enumerate() {
                    a0[j] += w0 * cv;
                    a1[j] += w1 * cv;
                    a2[j] += w2 * cv;
                    a3[j] += w3 * cv;
                }
            }
        } else {
            for (r, a) in acc.chunks_mut(plane).enumerate() {
                for k in 0..k_len {
                    let wv = w[r * k_len + k];
                    for (o, &cv) in a[j0..j1].iter_mut().zip(&cols[k * plane + j0..k * plane + j1]) {
                        *o += wv * cv;
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation over NCHW input with zero padding.
///
/// Every output element accumulates over (input channel, kernel row, kernel
/// column) in ascending order, independent of how work is split across threads.
/// Taps that fall in the padding contribute an exact zero.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, p: &Conv2dParams) -> Result<Tensor> {
    let g = Geometry::new(input.shape(), weight.shape(), p)?;
    if let Some(b) = bias {
        if b.shape() != [g.o] {
            return Err(Error::shape(format!("conv2d bias must have shape [{}], got {:?}", g.o, b.shape())));
        }
    }
    let x = input.data();
    let wt = weight.data();
    let plane = g.ho * g.wo;
    let k_len = g.cin_g * g.kh * g.kw;
    let pointwise = g.kh == 1 && g.kw == 1 && p.stride == (1, 1) && p.padding == (0, 0);
    let mut out = vec![0.0; g.n * g.o * plane];
    let mut cols = Vec::new();
    for ni in 0..g.n {
        for group in 0..p.groups {
            let c0 = group * g.cin_g;
            let src = &x[(ni * g.c + c0) * g.h * g.w..][..g.cin_g * g.h * g.w];
            let cols: &[f64] = if pointwise {
                src
            } else {
                im2col(src, &g, p, &mut cols);
                &cols
            };
            let o0 = group * g.cout_g;
            let rows = &mut out[(ni * g.o + o0) * plane..][..g.cout_g * plane];
            let wg = &wt[o0 * k_len..][..g.cout_g * k_len];
            rows.par_chunks_mut(ROW_BLOCK * plane)
                .zip(wg.par_chunks(ROW_BLOCK * k_len))
                .for_each(|(acc, w)| gemm_rows(acc, w, cols, k_len, plane));
        }
    }
    if let Some(b) = bias {
        out.par_chunks_mut(plane).enumerate().for_each(|(idx, acc)| {
            let bv = b.data()[idx % g.o];
            acc.iter_mut().for_each(|v| *v += bv);
        });
    }
    Ok(Tensor::from_parts(vec![g.n, g.o, g.ho, g.wo], out))
}

/// Vector-Jacobian products of [`conv2d`]: gradients with respect to the
/// input, the weight and the (possibly absent) bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    p: &Conv2dParams,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = Geometry::new(input.shape(), weight.shape(), p)?;
    if grad_out.shape() != [g.n, g.o, g.ho, g.wo] {
        return Err(Error::shape(format!(
            "conv2d gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.n, g.o, g.ho, g.wo]
        )));
    }
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let plane_out = g.ho * g.wo;
    let plane_in = g.h * g.w;

    let mut grad_in = vec![0.0; g.n * g.c * plane_in];
    grad_in.par_chunks_mut(plane_in).enumerate().for_each(|(idx, gin)| {
        let (ni, ci) = (idx / g.c, idx % g.c);
        let group = ci / g.cin_g;
        let cl = ci % g.cin_g;
        for oi in group * g.cout_g..(group + 1) * g.cout_g {
            let gout = &go[(ni * g.o + oi) * plane_out..][..plane_out];
            for ki in 0..g.kh {
                let off_h = (ki * p.dilation.0) as isize - p.padding.0 as isize;
                let (oh_lo, oh_hi) = valid_range(g.ho, g.h, p.stride.0, off_h);
                for kj in 0..g.kw {
                    let wv = wt[((oi * g.cin_g + cl) * g.kh + ki) * g.kw + kj];
                    let off_w = (kj * p.dilation.1) as isize - p.padding.1 as isize;
                    let (ow_lo, ow_hi) = valid_range(g.wo, g.w, p.stride.1, off_w);
                    for oh in oh_lo..oh_hi {
                        let ih = ((oh * p.stride.0) as isize + off_h) as usize;
                        for ow in ow_lo..ow_hi {
                            let iw = ((ow * p.stride.1) as isize + off_w) as usize;
                            gin[ih * g.w + iw] += wv * gout[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    });

    let ksize = g.cin_g * g.kh * g.kw;
    let mut grad_w = vec![0.0; g.o * ksize];
    grad_w.par_chunks_mut(ksize).enumerate().for_each(|(oi, gw)| {
        let group = oi / g.cout_g;
        for ni in 0..g.n {
            let gout = &go[(ni * g.o + oi) * plane_out..][..plane_out];
            for cl in 0..g.cin_g {
                let ci = group * g.cin_g + cl;
                let xin = &x[(ni * g.c + ci) * plane_in..][..plane_in];
                for ki in 0..g.kh {
                    let off_h = (ki * p.dilation.0) as isize - p.padding.0 as isize;
                    let (oh_lo, oh_hi) = valid_range(g.ho, g.h, p.stride.0, off_h);
                    for kj in 0..g.kw {
                        let off_w = (kj * p.dilation.1) as isize - p.padding.1 as isize;
                        let (ow_lo, ow_hi) = valid_range(g.wo, g.w, p.stride.1, off_w);
                        let mut acc = 0.0;
                        for oh in oh_lo..oh_hi {
                            let ih = ((oh * p.stride.0) as isize + off_h) as usize;
                            for ow in ow_lo..ow_hi {
                                let iw = ((ow * p.stride.1) as isize + off_w) as usize;
                                acc += gout[oh * g.wo + ow] * xin[ih * g.w + iw];
                            }
                        }
                        gw[(cl * g.kh + ki) * g.kw + kj] += acc;
                    }
                }
            }
        }
    });

    let mut grad_b = vec![0.0; g.o];
    for ni in 0..g.n {
        for (oi, b) in grad_b.iter_mut().enumerate() {
            *b += go[(ni * g.o + oi) * plane_out..][..plane_out].iter().sum::<f64>();
        }
    }

    Ok((
        Tensor::from_parts(input.shape().to_vec(), grad_in),
        Tensor::from_parts(weight.shape().to_vec(), grad_w),
        Tensor::from_parts(vec![g.o], grad_b),
    ))
}
