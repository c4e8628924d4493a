//! Naive loop oracles shared by the integration tests. Each one is written
//! from the definition of the operation, without sharing code with the crate.

#![allow(dead_code)]

use attnforge_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

/// Direct convolution over an explicitly zero-padded input.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: ConvGeom) -> Tensor {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, ig, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(ig * g.groups, c);
    let (hp, wp) = (h + 2 * g.padding, wd + 2 * g.padding);
    let mut padded = vec![0.0; n * c * hp * wp];
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..wd {
                    padded[((ni * c + ci) * hp + i + g.padding) * wp + j + g.padding] = x.at(&[ni, ci, i, j]);
                }
            }
        }
    }
    let ho = (hp - g.dilation * (kh - 1) - 1) / g.stride + 1;
    let wo = (wp - g.dilation * (kw - 1) - 1) / g.stride + 1;
    let og = o / g.groups;
    let mut out = vec![0.0; n * o * ho * wo];
    for ni in 0..n {
        for oc in 0..o {
            let grp = oc / og;
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut acc = b.map(|b| b.data()[oc]).unwrap_or(0.0);
                    for icg in 0..ig {
                        let ci = grp * ig + icg;
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let r = oi * g.stride + ki * g.dilation;
                                let s = oj * g.stride + kj * g.dilation;
                                acc += padded[((ni * c + ci) * hp + r) * wp + s] * w.at(&[oc, icg, ki, kj]);
                            }
                        }
                    }
                    out[((ni * o + oc) * ho + oi) * wo + oj] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, o, ho, wo], out).unwrap()
}

/// Dense weight equivalent to a grouped one: zero outside the diagonal blocks.
pub fn masked_dense_weight(w: &Tensor, groups: usize) -> Tensor {
    let (o, ig, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let c = ig * groups;
    let og = o / groups;
    let mut dense = vec![0.0; o * c * kh * kw];
    for oc in 0..o {
        let grp = oc / og;
        for icg in 0..ig {
            for ki in 0..kh {
                for kj in 0..kw {
                    dense[((oc * c + grp * ig + icg) * kh + ki) * kw + kj] = w.at(&[oc, icg, ki, kj]);
                }
            }
        }
    }
    Tensor::new(vec![o, c, kh, kw], dense).unwrap()
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.at(&[i, p]) * b.at(&[p, j]);
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

#[derive(Clone, Copy, Debug)]
pub struct PoolGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub ceil: bool,
}

impl PoolGeom {
    pub fn out(&self, len: usize) -> usize {
        let span = (len + 2 * self.padding - self.kernel) as f64 / self.stride as f64;
        let mut n = if self.ceil { span.ceil() } else { span.floor() } as usize + 1;
        if self.ceil && (n - 1) * self.stride >= len + self.padding {
            n -= 1;
        }
        n
    }
}

/// Pooling over every window position; padded cells are skipped, so they
/// neither win a max nor count towards an average.
pub fn pool2d(x: &Tensor, p: PoolGeom, max: bool) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (p.out(h), p.out(w));
    let mut out = Vec::new();
    for ni in 0..n {
        for ci in 0..c {
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    for ki in 0..p.kernel {
                        for kj in 0..p.kernel {
                            let r = (oi * p.stride + ki) as isize - p.padding as isize;
                            let s = (oj * p.stride + kj) as isize - p.padding as isize;
                            if r < 0 || s < 0 || r >= h as isize || s >= w as isize {
                                continue;
                            }
                            let v = x.at(&[ni, ci, r as usize, s as usize]);
                            best = best.max(v);
                            sum += v;
                            count += 1;
                        }
                    }
                    out.push(if max { best } else { sum / count as f64 });
                }
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out).unwrap()
}

pub fn batch_norm(x: &Tensor, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = Vec::with_capacity(x.len());
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let v = x.at(&[ni, ci, i, j]);
                    out.push(gamma[ci] * (v - mean[ci]) / (var[ci] + eps).sqrt() + beta[ci]);
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

/// Input channel `a * (C/g) + b` moves to output channel `b * g + a`.
pub fn shuffle(x: &Tensor, groups: usize) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let per = c / groups;
    let mut out = vec![0.0; x.len()];
    for ni in 0..n {
        for a in 0..groups {
            for b in 0..per {
                let (src, dst) = (a * per + b, b * groups + a);
                for i in 0..h {
                    for j in 0..w {
                        out[((ni * c + dst) * h + i) * w + j] = x.at(&[ni, src, i, j]);
                    }
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

pub mod props;
pub mod suites;
