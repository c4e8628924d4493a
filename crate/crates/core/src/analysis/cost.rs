use crate::autodiff::Ops;
use crate::error::{Error, Result};
use crate::params::{BnParams, ParamSource, ParamSpec};
use crate::tensor::{broadcast_shape, Conv2dParams, Pool2d, Tensor};

/// Shape-only evaluation that counts multiply-accumulates.
///
/// Convolutions and matrix products count one per MAC. Inference batch norm
/// counts two per output element (scale and shift); everything else is free.
#[derive(Clone, Debug, Default)]
pub struct CostOps {
    pub flops: u64,
}

impl CostOps {
    pub fn new() -> Self {
        Self::default()
    }
}

fn numel(shape: &[usize]) -> u64 {
    shape.iter().map(|&d| d as u64).product()
}

fn expect_rank(shape: &[usize], rank: usize, op: &str) -> Result<()> {
    if shape.len() == rank {
        Ok(())
    } else {
        Err(Error::shape(format!("{op} expects rank {rank}, got {shape:?}")))
    }
}

impl Ops for CostOps {
    type Value = Vec<usize>;

    fn leaf(&mut self, t: Tensor) -> Vec<usize> {
        t.shape().to_vec()
    }

    fn shape_of(&self, v: &Vec<usize>) -> Vec<usize> {
        v.clone()
    }

    fn permute(&mut self, x: &Vec<usize>, axes: &[usize]) -> Result<Vec<usize>> {
        let mut seen = vec![false; x.len()];
        if axes.len() != x.len() || axes.iter().any(|&a| a >= x.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidPermutation {
                axes: axes.to_vec(),
                rank: x.len(),
            });
        }
        Ok(axes.iter().map(|&a| x[a]).collect())
    }

    fn reshape(&mut self, x: &Vec<usize>, shape: &[usize]) -> Result<Vec<usize>> {
        if numel(x) != numel(shape) {
            return Err(Error::shape(format!("cannot reshape {x:?} to {shape:?}")));
        }
        Ok(shape.to_vec())
    }

    fn conv2d(&mut self, x: &Vec<usize>, w: &Vec<usize>, b: Option<&Vec<usize>>, p: &Conv2dParams) -> Result<Vec<usize>> {
        let out = p.output_shape(x, w)?;
        if let Some(b) = b {
            if b.as_slice() != [w[0]] {
                return Err(Error::shape(format!("conv2d bias {b:?} for {} output channels", w[0])));
            }
        }
        self.flops += numel(&out) * numel(&w[1..]);
        Ok(out.to_vec())
    }

    fn matmul(&mut self, a: &Vec<usize>, b: &Vec<usize>) -> Result<Vec<usize>> {
        if a.is_empty() || b.len() != 2 || a[a.len() - 1] != b[0] {
            return Err(Error::shape(format!("matmul of {a:?} and {b:?}")));
        }
        let mut out = a.clone();
        *out.last_mut().expect("non-empty") = b[1];
        self.flops += numel(a) * b[1] as u64;
        Ok(out)
    }

    fn add(&mut self, a: &Vec<usize>, b: &Vec<usize>) -> Result<Vec<usize>> {
        broadcast_shape(a, b)
    }

    fn mul(&mut self, a: &Vec<usize>, b: &Vec<usize>) -> Result<Vec<usize>> {
        broadcast_shape(a, b)
    }

    fn sigmoid(&mut self, x: &Vec<usize>) -> Result<Vec<usize>> {
        Ok(x.clone())
    }

    fn relu(&mut self, x: &Vec<usize>) -> Result<Vec<usize>> {
        Ok(x.clone())
    }

    fn relu6(&mut self, x: &Vec<usize>) -> Result<Vec<usize>> {
        Ok(x.clone())
    }

    fn batch_norm(&mut self, x: &Vec<usize>, bn: &BnParams<Vec<usize>>) -> Result<Vec<usize>> {
        if x.len() < 2 {
            return Err(Error::shape(format!("batch norm needs a channel axis, got {x:?}")));
        }
        for p in [&bn.gamma, &bn.beta, &bn.mean, &bn.var] {
            if p.as_slice() != [x[1]] {
                return Err(Error::shape(format!("batch norm parameter {p:?} for {} channels", x[1])));
            }
        }
        self.flops += 2 * numel(x);
        Ok(x.clone())
    }

    fn max_pool2d(&mut self, x: &Vec<usize>, p: &Pool2d) -> Result<Vec<usize>> {
        expect_rank(x, 4, "max_pool2d")?;
        let (h, w) = p.output_hw(x[2], x[3])?;
        Ok(vec![x[0], x[1], h, w])
    }

    fn avg_pool2d(&mut self, x: &Vec<usize>, p: &Pool2d) -> Result<Vec<usize>> {
        self.max_pool2d(x, p)
    }

    fn global_avg_pool(&mut self, x: &Vec<usize>) -> Result<Vec<usize>> {
        expect_rank(x, 4, "global pooling")?;
        Ok(vec![x[0], x[1], 1, 1])
    }

    fn global_max_pool(&mut self, x: &Vec<usize>) -> Result<Vec<usize>> {
        self.global_avg_pool(x)
    }

    fn channel_mean(&mut self, x: &Vec<usize>) -> Result<Vec<usize>> {
        expect_rank(x, 4, "channel pooling")?;
        Ok(vec![x[0], 1, x[2], x[3]])
    }

    fn channel_max(&mut self, x: &Vec<usize>) -> Result<Vec<usize>> {
        self.channel_mean(x)
    }

    fn concat(&mut self, parts: &[&Vec<usize>], axis: usize) -> Result<Vec<usize>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of no tensors"))?;
        if axis >= first.len() {
            return Err(Error::shape(format!("concat axis {axis} for rank {}", first.len())));
        }
        let mut out = (*first).clone();
        out[axis] = 0;
        for p in parts {
            let same = p.len() == first.len() && p.iter().zip(first.iter()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(Error::shape(format!("concat of {first:?} and {p:?} along {axis}")));
            }
            out[axis] += p[axis];
        }
        Ok(out)
    }

    fn channel_shuffle(&mut self, x: &Vec<usize>, groups: usize) -> Result<Vec<usize>> {
        expect_rank(x, 4, "channel_shuffle")?;
        if groups == 0 || !x[1].is_multiple_of(groups) {
            return Err(Error::Indivisible {
                what: "channel shuffle channels",
                value: x[1],
                divisor: groups,
            });
        }
        Ok(x.clone())
    }

    fn upsample_nearest(&mut self, x: &Vec<usize>, out_h: usize, out_w: usize) -> Result<Vec<usize>> {
        expect_rank(x, 4, "upsample_nearest")?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::EmptyOutput(format!("upsample to {out_h}x{out_w}")));
        }
        Ok(vec![x[0], x[1], out_h, out_w])
    }
}

/// Hands out parameter shapes without allocating, tallying learnable scalars.
#[derive(Clone, Debug, Default)]
pub struct ShapeSource {
    pub learnable: u64,
    pub buffers: u64,
}

impl ShapeSource {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ParamSource<CostOps> for ShapeSource {
    fn param(&mut self, _ops: &mut CostOps, spec: &ParamSpec<'_>) -> Result<Vec<usize>> {
        let n = spec.numel() as u64;
        if spec.role.learnable() {
            self.learnable += n;
        } else {
            self.buffers += n;
        }
        Ok(spec.shape.to_vec())
    }
}
