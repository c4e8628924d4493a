//! Reverse-mode differentiation.
//!
//! Model code is written once against [`Ops`]. Running it with [`Eager`]
//! evaluates tensors directly; running it with a [`Tape`] evaluates the same
//! kernels while recording the graph for [`Tape::backward`].

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, InputCheck};
pub use tape::{record, Gradients, Recording, Tape, TapeNode, TapeOp, Var};

use crate::error::Result;
use crate::params::BnParams;
use crate::tensor::{self, Conv2dParams, Pool2d, Tensor};

/// The operation set shared by eager evaluation, the recording tape and the
/// shape-only cost walker.
pub trait Ops {
    type Value: Clone;

    /// Introduces an input or parameter.
    fn leaf(&mut self, t: Tensor) -> Self::Value;
    fn shape_of(&self, v: &Self::Value) -> Vec<usize>;
    fn is_finite(&self, _v: &Self::Value) -> bool {
        true
    }

    fn permute(&mut self, x: &Self::Value, axes: &[usize]) -> Result<Self::Value>;
    fn reshape(&mut self, x: &Self::Value, shape: &[usize]) -> Result<Self::Value>;
    fn conv2d(
        &mut self,
        x: &Self::Value,
        weight: &Self::Value,
        bias: Option<&Self::Value>,
        p: &Conv2dParams,
    ) -> Result<Self::Value>;
    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn relu6(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn batch_norm(&mut self, x: &Self::Value, bn: &BnParams<Self::Value>) -> Result<Self::Value>;
    fn max_pool2d(&mut self, x: &Self::Value, p: &Pool2d) -> Result<Self::Value>;
    fn avg_pool2d(&mut self, x: &Self::Value, p: &Pool2d) -> Result<Self::Value>;
    fn global_avg_pool(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn global_max_pool(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn channel_mean(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn channel_max(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn concat(&mut self, parts: &[&Self::Value], axis: usize) -> Result<Self::Value>;
    fn channel_shuffle(&mut self, x: &Self::Value, groups: usize) -> Result<Self::Value>;
    fn upsample_nearest(&mut self, x: &Self::Value, out_h: usize, out_w: usize) -> Result<Self::Value>;

    /// `x @ weight (+ bias)` over the trailing axis.
    fn linear(&mut self, x: &Self::Value, weight: &Self::Value, bias: Option<&Self::Value>) -> Result<Self::Value> {
        let y = self.matmul(x, weight)?;
        match bias {
            Some(b) => self.add(&y, b),
            None => Ok(y),
        }
    }
}

/// Direct evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Ops for Eager {
    type Value = Tensor;

    fn leaf(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn shape_of(&self, v: &Tensor) -> Vec<usize> {
        v.shape().to_vec()
    }

    fn is_finite(&self, v: &Tensor) -> bool {
        v.is_finite()
    }

    fn permute(&mut self, x: &Tensor, axes: &[usize]) -> Result<Tensor> {
        x.permute(axes)
    }

    fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        x.reshape(shape.to_vec())
    }

    fn conv2d(&mut self, x: &Tensor, w: &Tensor, b: Option<&Tensor>, p: &Conv2dParams) -> Result<Tensor> {
        tensor::conv2d(x, w, b, p)
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.matmul(b)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.mul(b)
    }

    fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(x.sigmoid())
    }

    fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(x.relu())
    }

    fn relu6(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(x.relu6())
    }

    fn batch_norm(&mut self, x: &Tensor, bn: &BnParams<Tensor>) -> Result<Tensor> {
        tensor::batchnorm2d_infer(x, &bn.gamma, &bn.beta, &bn.mean, &bn.var, bn.eps)
    }

    fn max_pool2d(&mut self, x: &Tensor, p: &Pool2d) -> Result<Tensor> {
        tensor::max_pool2d(x, p)
    }

    fn avg_pool2d(&mut self, x: &Tensor, p: &Pool2d) -> Result<Tensor> {
        tensor::avg_pool2d(x, p)
    }

    fn global_avg_pool(&mut self, x: &Tensor) -> Result<Tensor> {
        tensor::global_avg_pool(x)
    }

    fn global_max_pool(&mut self, x: &Tensor) -> Result<Tensor> {
        tensor::global_max_pool(x).map(|(t, _)| t)
    }

    fn channel_mean(&mut self, x: &Tensor) -> Result<Tensor> {
        tensor::channel_mean(x)
    }

    fn channel_max(&mut self, x: &Tensor) -> Result<Tensor> {
        tensor::channel_max(x).map(|(t, _)| t)
    }

    fn concat(&mut self, parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        tensor::concat(parts, axis)
    }

    fn channel_shuffle(&mut self, x: &Tensor, groups: usize) -> Result<Tensor> {
        tensor::channel_shuffle(x, groups)
    }

    fn upsample_nearest(&mut self, x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
        tensor::upsample_nearest(x, out_h, out_w)
    }
}

/// A scalar-reducible function of tensors that can be evaluated on any [`Ops`]
/// backend. Gradient checking and tape recording operate on this.
pub trait Differentiable {
    fn name(&self) -> String;
    fn eval<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<O::Value>;
}
