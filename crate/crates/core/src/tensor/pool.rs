use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Window geometry of a 2-D pooling operation.
///
/// Padded positions never contribute: they act as `-inf` for max pooling and
/// are excluded from the divisor of average pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Pool2d {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    #[serde(default)]
    pub ceil_mode: bool,
}

impl Pool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
            ceil_mode: false,
        }
    }

    pub fn ceil_mode(mut self, on: bool) -> Self {
        self.ceil_mode = on;
        self
    }

    fn extent(&self, input: usize, axis: usize) -> Option<usize> {
        let (k, s, p) = match axis {
            0 => (self.kernel.0, self.stride.0, self.padding.0),
            _ => (self.kernel.1, self.stride.1, self.padding.1),
        };
        if k == 0 || s == 0 || input + 2 * p < k {
            return None;
        }
        let span = input + 2 * p - k;
        let mut out = if self.ceil_mode { span.div_ceil(s) } else { span / s } + 1;
        // the last window has to start inside the input or the leading padding
        if self.ceil_mode && (out - 1) * s >= input + p {
            out -= 1;
        }
        Some(out)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (self.extent(h, 0), self.extent(w, 1)) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(Error::EmptyOutput(format!("pooling {h}x{w} input with {self:?}"))),
        }
    }

    /// Valid input rows and columns covered by output position `(oh, ow)`.
    fn window(&self, oh: usize, ow: usize, h: usize, w: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let clip = |o: usize, k: usize, s: usize, p: usize, len: usize| {
            let start = (o * s) as isize - p as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + k as isize).max(0) as usize).min(len);
            lo..hi.max(lo)
        };
        (
            clip(oh, self.kernel.0, self.stride.0, self.padding.0, h),
            clip(ow, self.kernel.1, self.stride.1, self.padding.1, w),
        )
    }
}

fn windows<F>(t: &Tensor, p: &Pool2d, mut reduce: F) -> Result<Tensor>
where
    F: FnMut(usize, std::ops::Range<usize>, std::ops::Range<usize>) -> f64,
{
    let (n, c, h, w) = t.dims4()?;
    let (ho, wo) = p.output_hw(h, w)?;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        for oh in 0..ho {
            for ow in 0..wo {
                let (rows, cols) = p.window(oh, ow, h, w);
                if rows.is_empty() || cols.is_empty() {
                    return Err(Error::EmptyOutput(format!(
                        "pooling window at ({oh}, {ow}) lies entirely in padding"
                    )));
                }
                out.push(reduce(plane * h * w, rows, cols));
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, ho, wo], out))
}

/// Max pooling that also returns, per output element, the flat input index of
/// the first maximum in row-major scan order.
pub fn max_pool2d_with_indices(t: &Tensor, p: &Pool2d) -> Result<(Tensor, Vec<usize>)> {
    let (_, _, _, w) = t.dims4()?;
    let x = t.data();
    let mut indices = Vec::new();
    let out = windows(t, p, |base, rows, cols| {
        let mut best = f64::NEG_INFINITY;
        let mut arg = usize::MAX;
        for r in rows {
            for c in cols.clone() {
                let k = base + r * w + c;
                if arg == usize::MAX || x[k] > best {
                    best = x[k];
                    arg = k;
                }
            }
        }
        indices.push(arg);
        best
    })?;
    Ok((out, indices))
}

pub fn max_pool2d(t: &Tensor, p: &Pool2d) -> Result<Tensor> {
    max_pool2d_with_indices(t, p).map(|(out, _)| out)
}

pub fn avg_pool2d(t: &Tensor, p: &Pool2d) -> Result<Tensor> {
    let (_, _, _, w) = t.dims4()?;
    let x = t.data();
    windows(t, p, |base, rows, cols| {
        let count = rows.len() * cols.len();
        let mut acc = 0.0;
        for r in rows {
            for c in cols.clone() {
                acc += x[base + r * w + c];
            }
        }
        acc / count as f64
    })
}

pub fn avg_pool2d_backward(input_shape: &[usize], p: &Pool2d, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::shape("avg pool backward needs an NCHW input shape")),
    };
    let (ho, wo) = p.output_hw(h, w)?;
    if grad_out.shape() != [n, c, ho, wo] {
        return Err(Error::shape("avg pool gradient shape mismatch"));
    }
    let go = grad_out.data();
    let mut gi = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        for oh in 0..ho {
            for ow in 0..wo {
                let (rows, cols) = p.window(oh, ow, h, w);
                let share = go[(plane * ho + oh) * wo + ow] / (rows.len() * cols.len()) as f64;
                for r in rows {
                    for cc in cols.clone() {
                        gi[plane * h * w + r * w + cc] += share;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), gi))
}

/// Mean over all spatial positions, `(N, C, H, W) -> (N, C, 1, 1)`.
pub fn global_avg_pool(t: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    let hw = h * w;
    let data = t.data().chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
    Ok(Tensor::from_parts(vec![n, c, 1, 1], data))
}

/// Max over all spatial positions, `(N, C, H, W) -> (N, C, 1, 1)`, with the
/// flat input index of the first maximum per plane.
pub fn global_max_pool(t: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = t.dims4()?;
    let hw = h * w;
    let mut indices = Vec::with_capacity(n * c);
    let mut data = Vec::with_capacity(n * c);
    for (pi, plane) in t.data().chunks(hw).enumerate() {
        let mut arg = 0;
        for (k, &v) in plane.iter().enumerate() {
            if v > plane[arg] {
                arg = k;
            }
        }
        indices.push(pi * hw + arg);
        data.push(plane[arg]);
    }
    Ok((Tensor::from_parts(vec![n, c, 1, 1], data), indices))
}

/// Mean over channels, `(N, C, H, W) -> (N, 1, H, W)`.
pub fn channel_mean(t: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    let hw = h * w;
    let x = t.data();
    let mut out = vec![0.0; n * hw];
    for ni in 0..n {
        let dst = &mut out[ni * hw..][..hw];
        for ci in 0..c {
            for (d, &v) in dst.iter_mut().zip(&x[(ni * c + ci) * hw..][..hw]) {
                *d += v;
            }
        }
        dst.iter_mut().for_each(|d| *d /= c as f64);
    }
    Ok(Tensor::from_parts(vec![n, 1, h, w], out))
}

/// Max over channels, `(N, C, H, W) -> (N, 1, H, W)`, with the flat input index
/// of the first (lowest channel) maximum.
pub fn channel_max(t: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = t.dims4()?;
    let hw = h * w;
    let x = t.data();
    let mut out = Vec::with_capacity(n * hw);
    let mut indices = Vec::with_capacity(n * hw);
    for ni in 0..n {
        for pos in 0..hw {
            let mut arg = ni * c * hw + pos;
            for ci in 1..c {
                let k = (ni * c + ci) * hw + pos;
                if x[k] > x[arg] {
                    arg = k;
                }
            }
            indices.push(arg);
            out.push(x[arg]);
        }
    }
    Ok((Tensor::from_parts(vec![n, 1, h, w], out), indices))
}
