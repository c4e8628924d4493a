use std::hash::{DefaultHasher, Hash, Hasher};

use super::{Differentiable, Ops};
use crate::error::{Error, Result};
use crate::params::BnParams;
use crate::tensor::{self, Conv2dParams, Pool2d, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum TapeOp {
    Leaf,
    Permute(Vec<usize>),
    Reshape,
    Conv2d(Conv2dParams),
    MatMul,
    Add,
    Mul,
    Sigmoid,
    Relu,
    BatchNorm { eps: f64 },
    MaxPool2d { pool: Pool2d, argmax: Vec<usize> },
    AvgPool2d(Pool2d),
    GlobalAvgPool,
    GlobalMaxPool { argmax: Vec<usize> },
    ChannelMean,
    ChannelMax { argmax: Vec<usize> },
    Concat { axis: usize },
    ChannelShuffle { groups: usize },
    UpsampleNearest,
}

impl TapeOp {
    pub fn name(&self) -> &'static str {
        match self {
            TapeOp::Leaf => "leaf",
            TapeOp::Permute(_) => "permute",
            TapeOp::Reshape => "reshape",
            TapeOp::Conv2d(_) => "conv2d",
            TapeOp::MatMul => "matmul",
            TapeOp::Add => "add",
            TapeOp::Mul => "mul",
            TapeOp::Sigmoid => "sigmoid",
            TapeOp::Relu => "relu",
            TapeOp::BatchNorm { .. } => "batch_norm",
            TapeOp::MaxPool2d { .. } => "max_pool2d",
            TapeOp::AvgPool2d(_) => "avg_pool2d",
            TapeOp::GlobalAvgPool => "global_avg_pool",
            TapeOp::GlobalMaxPool { .. } => "global_max_pool",
            TapeOp::ChannelMean => "channel_mean",
            TapeOp::ChannelMax { .. } => "channel_max",
            TapeOp::Concat { .. } => "concat",
            TapeOp::ChannelShuffle { .. } => "channel_shuffle",
            TapeOp::UpsampleNearest => "upsample_nearest",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TapeNode {
    pub op: TapeOp,
    pub inputs: Vec<Var>,
    pub value: Tensor,
}

/// Append-only record of evaluated operations. Node ids are a topological
/// order: every input id is smaller than the id of the node that consumes it.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[TapeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: TapeOp, inputs: Vec<Var>, value: Tensor) -> Var {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        self.nodes.push(TapeNode { op, inputs, value });
        Var(self.nodes.len() - 1)
    }

    /// Digest of every piecewise decision taken in the forward pass: ReLU
    /// activation patterns and the argmax of every max reduction. Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                TapeOp::Relu => {
                    i.hash(&mut h);
                    for &x in self.nodes[node.inputs[0].0].value.data() {
                        (x > 0.0).hash(&mut h);
                    }
                }
                TapeOp::MaxPool2d { argmax, .. }
                | TapeOp::GlobalMaxPool { argmax }
                | TapeOp::ChannelMax { argmax } => {
                    i.hash(&mut h);
                    argmax.hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Vector-Jacobian product of `output` with `seed` for every recorded node.
    pub fn backward(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        let out_shape = self.value(output).shape();
        if seed.shape() != out_shape {
            return Err(Error::shape(format!(
                "seed shape {:?} does not match output shape {out_shape:?}",
                seed.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.clone());
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let contributions = self.node_vjp(node, &g)?;
            grads[id] = Some(g);
            for (input, contrib) in node.inputs.iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                let slot = &mut grads[input.0];
                *slot = Some(match slot.take() {
                    Some(acc) => acc.add(&contrib)?,
                    None => contrib,
                });
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn node_vjp(&self, node: &TapeNode, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let input = |k: usize| &self.nodes[node.inputs[k].0].value;
        let one = |t: Tensor| Ok(vec![Some(t)]);
        match &node.op {
            TapeOp::Leaf => Ok(Vec::new()),
            TapeOp::Permute(axes) => one(g.permute(&tensor::inverse_permutation(axes))?),
            TapeOp::Reshape => one(g.reshape(input(0).shape().to_vec())?),
            TapeOp::Conv2d(p) => {
                let (gx, gw, gb) = tensor::conv2d_backward(input(0), input(1), g, p)?;
                let mut out = vec![Some(gx), Some(gw)];
                if node.inputs.len() == 3 {
                    out.push(Some(gb));
                }
                Ok(out)
            }
            TapeOp::MatMul => {
                let (a, b) = (input(0), input(1));
                let k = b.shape()[0];
                let n = b.shape()[1];
                let ga = g.matmul(&b.t()?)?;
                let rows = a.len() / k;
                let a2 = a.reshape(vec![rows, k])?;
                let g2 = g.reshape(vec![rows, n])?;
                let gb = a2.t()?.matmul(&g2)?;
                Ok(vec![Some(ga), Some(gb)])
            }
            TapeOp::Add => Ok(vec![
                Some(g.sum_to_shape(input(0).shape())?),
                Some(g.sum_to_shape(input(1).shape())?),
            ]),
            TapeOp::Mul => {
                let (a, b) = (input(0), input(1));
                Ok(vec![
                    Some(g.mul(b)?.sum_to_shape(a.shape())?),
                    Some(g.mul(a)?.sum_to_shape(b.shape())?),
                ])
            }
            TapeOp::Sigmoid => one(g.broadcast_zip(&node.value, |d, y| d * y * (1.0 - y))?),
            TapeOp::Relu => one(g.broadcast_zip(input(0), |d, x| if x > 0.0 { d } else { 0.0 })?),
            TapeOp::BatchNorm { eps } => {
                let grads = tensor::batchnorm2d_backward(input(0), input(1), input(3), input(4), *eps, g)?;
                Ok(vec![
                    Some(grads.input),
                    Some(grads.gamma),
                    Some(grads.beta),
                    Some(grads.mean),
                    Some(grads.var),
                ])
            }
            TapeOp::MaxPool2d { argmax, .. }
            | TapeOp::GlobalMaxPool { argmax }
            | TapeOp::ChannelMax { argmax } => {
                let x = input(0);
                let mut gi = vec![0.0; x.len()];
                for (&k, &d) in argmax.iter().zip(g.data()) {
                    gi[k] += d;
                }
                one(Tensor::from_parts(x.shape().to_vec(), gi))
            }
            TapeOp::AvgPool2d(p) => one(tensor::avg_pool2d_backward(input(0).shape(), p, g)?),
            TapeOp::GlobalAvgPool => {
                let x = input(0);
                let (_, _, h, w) = x.dims4()?;
                let scale = 1.0 / (h * w) as f64;
                one(Tensor::zeros(x.shape().to_vec())?.broadcast_zip(g, |_, d| d * scale)?)
            }
            TapeOp::ChannelMean => {
                let x = input(0);
                let c = x.shape()[1] as f64;
                one(Tensor::zeros(x.shape().to_vec())?.broadcast_zip(g, |_, d| d / c)?)
            }
            TapeOp::Concat { axis } => {
                let sizes: Vec<usize> = node.inputs.iter().map(|v| self.value(*v).shape()[*axis]).collect();
                Ok(tensor::split(g, *axis, &sizes)?.into_iter().map(Some).collect())
            }
            TapeOp::ChannelShuffle { groups } => {
                let c = g.shape()[1];
                one(tensor::channel_shuffle(g, c / groups)?)
            }
            TapeOp::UpsampleNearest => one(tensor::upsample_nearest_backward(input(0).shape(), g)?),
        }
    }
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::from_parts(self.shapes[v.0].clone(), vec![0.0; self.shapes[v.0].iter().product()]))
    }
}

impl Ops for Tape {
    type Value = Var;

    fn leaf(&mut self, t: Tensor) -> Var {
        self.push(TapeOp::Leaf, Vec::new(), t)
    }

    fn shape_of(&self, v: &Var) -> Vec<usize> {
        self.value(*v).shape().to_vec()
    }

    fn is_finite(&self, v: &Var) -> bool {
        self.value(*v).is_finite()
    }

    fn permute(&mut self, x: &Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(*x).permute(axes)?;
        Ok(self.push(TapeOp::Permute(axes.to_vec()), vec![*x], out))
    }

    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(*x).reshape(shape.to_vec())?;
        Ok(self.push(TapeOp::Reshape, vec![*x], out))
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, p: &Conv2dParams) -> Result<Var> {
        let out = tensor::conv2d(self.value(*x), self.value(*w), b.map(|b| self.value(*b)), p)?;
        let mut inputs = vec![*x, *w];
        inputs.extend(b.copied());
        Ok(self.push(TapeOp::Conv2d(*p), inputs, out))
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = self.value(*a).matmul(self.value(*b))?;
        Ok(self.push(TapeOp::MatMul, vec![*a, *b], out))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = self.value(*a).add(self.value(*b))?;
        Ok(self.push(TapeOp::Add, vec![*a, *b], out))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = self.value(*a).mul(self.value(*b))?;
        Ok(self.push(TapeOp::Mul, vec![*a, *b], out))
    }

    fn sigmoid(&mut self, x: &Var) -> Result<Var> {
        let out = self.value(*x).sigmoid();
        Ok(self.push(TapeOp::Sigmoid, vec![*x], out))
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        let out = self.value(*x).relu();
        Ok(self.push(TapeOp::Relu, vec![*x], out))
    }

    fn relu6(&mut self, _x: &Var) -> Result<Var> {
        Err(Error::UnsupportedOp("relu6"))
    }

    fn batch_norm(&mut self, x: &Var, bn: &BnParams<Var>) -> Result<Var> {
        let out = tensor::batchnorm2d_infer(
            self.value(*x),
            self.value(bn.gamma),
            self.value(bn.beta),
            self.value(bn.mean),
            self.value(bn.var),
            bn.eps,
        )?;
        Ok(self.push(
            TapeOp::BatchNorm { eps: bn.eps },
            vec![*x, bn.gamma, bn.beta, bn.mean, bn.var],
            out,
        ))
    }

    fn max_pool2d(&mut self, x: &Var, p: &Pool2d) -> Result<Var> {
        let (out, argmax) = tensor::max_pool2d_with_indices(self.value(*x), p)?;
        Ok(self.push(TapeOp::MaxPool2d { pool: *p, argmax }, vec![*x], out))
    }

    fn avg_pool2d(&mut self, x: &Var, p: &Pool2d) -> Result<Var> {
        let out = tensor::avg_pool2d(self.value(*x), p)?;
        Ok(self.push(TapeOp::AvgPool2d(*p), vec![*x], out))
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        let out = tensor::global_avg_pool(self.value(*x))?;
        Ok(self.push(TapeOp::GlobalAvgPool, vec![*x], out))
    }

    fn global_max_pool(&mut self, x: &Var) -> Result<Var> {
        let (out, argmax) = tensor::global_max_pool(self.value(*x))?;
        Ok(self.push(TapeOp::GlobalMaxPool { argmax }, vec![*x], out))
    }

    fn channel_mean(&mut self, x: &Var) -> Result<Var> {
        let out = tensor::channel_mean(self.value(*x))?;
        Ok(self.push(TapeOp::ChannelMean, vec![*x], out))
    }

    fn channel_max(&mut self, x: &Var) -> Result<Var> {
        let (out, argmax) = tensor::channel_max(self.value(*x))?;
        Ok(self.push(TapeOp::ChannelMax { argmax }, vec![*x], out))
    }

    fn concat(&mut self, parts: &[&Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|v| self.value(**v)).collect();
        let out = tensor::concat(&values, axis)?;
        Ok(self.push(TapeOp::Concat { axis }, parts.iter().map(|v| **v).collect(), out))
    }

    fn channel_shuffle(&mut self, x: &Var, groups: usize) -> Result<Var> {
        let out = tensor::channel_shuffle(self.value(*x), groups)?;
        Ok(self.push(TapeOp::ChannelShuffle { groups }, vec![*x], out))
    }

    fn upsample_nearest(&mut self, x: &Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = tensor::upsample_nearest(self.value(*x), out_h, out_w)?;
        Ok(self.push(TapeOp::UpsampleNearest, vec![*x], out))
    }
}

/// A function evaluated on a fresh tape.
#[derive(Debug)]
pub struct Recording {
    pub tape: Tape,
    pub inputs: Vec<Var>,
    pub output: Var,
}

impl Recording {
    pub fn output_value(&self) -> &Tensor {
        self.tape.value(self.output)
    }

    /// Gradients of `sum(seed * output)` with respect to each input.
    pub fn input_grads(&self, seed: &Tensor) -> Result<Vec<Tensor>> {
        let grads = self.tape.backward(self.output, seed)?;
        Ok(self.inputs.iter().map(|&v| grads.wrt(v)).collect())
    }
}

pub fn record<F: Differentiable + ?Sized>(f: &F, inputs: &[Tensor]) -> Result<Recording> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let output = f.eval(&mut tape, &vars)?;
    Ok(Recording {
        tape,
        inputs: vars,
        output,
    })
}
