//! Convolutional block attention module: a channel gate from pooled
//! descriptors through a shared MLP, followed by a spatial gate from
//! channel-pooled maps through one 7x7 convolution.
//!
//! With `max_pool` off only the average-pooled descriptor and the channel
//! mean map are used.

use super::AttentionConfig;
use crate::autodiff::Ops;
use crate::error::{Error, Result};
use crate::params::{declare, BnParams, ParamRole, ParamSource};
use crate::tensor::Conv2dParams;

#[derive(Clone, Debug)]
pub struct CbamWeights<T> {
    /// Shared MLP: `w1` is `(C, C/r)`, `w2` is `(C/r, C)`.
    pub mlp: Option<[T; 4]>,
    /// `(1, 2, k, k)` convolution over `[max, mean]` maps (`(1, 1, k, k)` over
    /// the mean map without max pooling), then a one-channel batch norm.
    pub spatial: Option<(T, BnParams<T>)>,
}

impl<T> CbamWeights<T> {
    pub fn declare<O, S>(ops: &mut O, src: &mut S, prefix: &str, channels: usize, cfg: &AttentionConfig) -> Result<CbamWeights<O::Value>>
    where
        O: Ops<Value = T> + ?Sized,
        S: ParamSource<O> + ?Sized,
    {
        let hidden = cfg.reduced(channels);
        let mlp = if cfg.channel {
            Some([
                declare(ops, src, &format!("{prefix}.mlp.w1"), &[channels, hidden], ParamRole::Weight, channels)?,
                declare(ops, src, &format!("{prefix}.mlp.b1"), &[hidden], ParamRole::Bias, 0)?,
                declare(ops, src, &format!("{prefix}.mlp.w2"), &[hidden, channels], ParamRole::Weight, hidden)?,
                declare(ops, src, &format!("{prefix}.mlp.b2"), &[channels], ParamRole::Bias, 0)?,
            ])
        } else {
            None
        };
        let spatial = if cfg.spatial {
            let maps = if cfg.max_pool { 2 } else { 1 };
            let k = cfg.spatial_kernel;
            let conv = declare(ops, src, &format!("{prefix}.spatial.conv"), &[1, maps, k, k], ParamRole::Weight, maps * k * k)?;
            let bn = BnParams::declare(ops, src, &format!("{prefix}.spatial.bn"), 1)?;
            Some((conv, bn))
        } else {
            None
        };
        Ok(CbamWeights { mlp, spatial })
    }
}

/// Channel gate of shape `(N, C, 1, 1)`.
pub fn channel_gate<O: Ops>(ops: &mut O, x: &O::Value, mlp: &[O::Value; 4], cfg: &AttentionConfig) -> Result<O::Value> {
    let shape = ops.shape_of(x);
    let (n, c) = (shape[0], shape[1]);
    let mut descriptors = vec![ops.global_avg_pool(x)?];
    if cfg.max_pool {
        descriptors.push(ops.global_max_pool(x)?);
    }
    let mut sum: Option<O::Value> = None;
    for d in &descriptors {
        let d = ops.reshape(d, &[n, c])?;
        let h = ops.linear(&d, &mlp[0], Some(&mlp[1]))?;
        let h = ops.relu(&h)?;
        let o = ops.linear(&h, &mlp[2], Some(&mlp[3]))?;
        sum = Some(match sum {
            Some(acc) => ops.add(&acc, &o)?,
            None => o,
        });
    }
    let logits = ops.reshape(&sum.expect("at least one descriptor"), &[n, c, 1, 1])?;
    ops.sigmoid(&logits)
}

/// Spatial gate of shape `(N, 1, H, W)`.
pub fn spatial_gate<O: Ops>(
    ops: &mut O,
    x: &O::Value,
    conv: &O::Value,
    bn: &BnParams<O::Value>,
    cfg: &AttentionConfig,
) -> Result<O::Value> {
    let mean = ops.channel_mean(x)?;
    let maps = if cfg.max_pool {
        let max = ops.channel_max(x)?;
        ops.concat(&[&max, &mean], 1)?
    } else {
        mean
    };
    let y = ops.conv2d(&maps, conv, None, &Conv2dParams::default().padding(cfg.spatial_kernel / 2))?;
    let y = ops.batch_norm(&y, bn)?;
    ops.sigmoid(&y)
}

pub fn forward<O: Ops>(ops: &mut O, x: &O::Value, w: &CbamWeights<O::Value>, cfg: &AttentionConfig) -> Result<O::Value> {
    let mut y = x.clone();
    match (&w.mlp, cfg.channel) {
        (Some(mlp), true) => {
            let g = channel_gate(ops, &y, mlp, cfg)?;
            y = ops.mul(&y, &g)?;
        }
        (None, false) => {}
        _ => return Err(Error::config("CBAM channel weights do not match the channel switch")),
    }
    match (&w.spatial, cfg.spatial) {
        (Some((conv, bn)), true) => {
            let g = spatial_gate(ops, &y, conv, bn, cfg)?;
            y = ops.mul(&y, &g)?;
        }
        (None, false) => {}
        _ => return Err(Error::config("CBAM spatial weights do not match the spatial switch")),
    }
    Ok(y)
}
