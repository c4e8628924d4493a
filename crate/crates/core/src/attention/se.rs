//! Squeeze-and-excitation: global average pooling, a bias-free
//! `C -> C/r -> C` bottleneck and a per-channel sigmoid gate.

use super::AttentionConfig;
use crate::autodiff::Ops;
use crate::error::Result;
use crate::params::{declare, ParamRole, ParamSource};

#[derive(Clone, Debug)]
pub struct SeWeights<T> {
    pub fc1: T,
    pub fc2: T,
}

impl<T> SeWeights<T> {
    pub fn declare<O, S>(ops: &mut O, src: &mut S, prefix: &str, channels: usize, cfg: &AttentionConfig) -> Result<SeWeights<O::Value>>
    where
        O: Ops<Value = T> + ?Sized,
        S: ParamSource<O> + ?Sized,
    {
        let hidden = cfg.reduced(channels);
        Ok(SeWeights {
            fc1: declare(ops, src, &format!("{prefix}.fc1"), &[channels, hidden], ParamRole::Weight, channels)?,
            fc2: declare(ops, src, &format!("{prefix}.fc2"), &[hidden, channels], ParamRole::Weight, hidden)?,
        })
    }
}

/// Per-channel gate of shape `(N, C, 1, 1)`.
pub fn gate<O: Ops>(ops: &mut O, x: &O::Value, w: &SeWeights<O::Value>) -> Result<O::Value> {
    let shape = ops.shape_of(x);
    let (n, c) = (shape[0], shape[1]);
    let squeezed = ops.global_avg_pool(x)?;
    let squeezed = ops.reshape(&squeezed, &[n, c])?;
    let hidden = ops.matmul(&squeezed, &w.fc1)?;
    let hidden = ops.relu(&hidden)?;
    let excited = ops.matmul(&hidden, &w.fc2)?;
    let excited = ops.sigmoid(&excited)?;
    ops.reshape(&excited, &[n, c, 1, 1])
}

pub fn forward<O: Ops>(ops: &mut O, x: &O::Value, w: &SeWeights<O::Value>) -> Result<O::Value> {
    let g = gate(ops, x, w)?;
    ops.mul(x, &g)
}
