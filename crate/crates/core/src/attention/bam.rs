//! Bottleneck attention module: channel and spatial branches computed in
//! parallel, summed under one sigmoid and applied as `F * (1 + gate)`.

use super::AttentionConfig;
use crate::autodiff::Ops;
use crate::error::{Error, Result};
use crate::params::{declare, BnParams, ParamRole, ParamSource};
use crate::tensor::Conv2dParams;

#[derive(Clone, Debug)]
pub struct BamChannel<T> {
    pub w1: T,
    pub b1: T,
    pub bn: BnParams<T>,
    pub w2: T,
    pub b2: T,
}

/// One convolution (with bias) of the spatial branch and its batch norm.
#[derive(Clone, Debug)]
pub struct BamConv<T> {
    pub weight: T,
    pub bias: T,
    pub bn: Option<BnParams<T>>,
}

#[derive(Clone, Debug)]
pub struct BamWeights<T> {
    pub channel: Option<BamChannel<T>>,
    /// 1x1 reduce, two dilated 3x3, 1x1 to a single map (no norm on the last).
    pub spatial: Option<Vec<BamConv<T>>>,
}

impl<T> BamWeights<T> {
    pub fn declare<O, S>(ops: &mut O, src: &mut S, prefix: &str, channels: usize, cfg: &AttentionConfig) -> Result<BamWeights<O::Value>>
    where
        O: Ops<Value = T> + ?Sized,
        S: ParamSource<O> + ?Sized,
    {
        let hidden = cfg.reduced(channels);
        let channel = if cfg.channel {
            let p = format!("{prefix}.channel");
            Some(BamChannel {
                w1: declare(ops, src, &format!("{p}.w1"), &[channels, hidden], ParamRole::Weight, channels)?,
                b1: declare(ops, src, &format!("{p}.b1"), &[hidden], ParamRole::Bias, 0)?,
                bn: BnParams::declare(ops, src, &format!("{p}.bn"), hidden)?,
                w2: declare(ops, src, &format!("{p}.w2"), &[hidden, channels], ParamRole::Weight, hidden)?,
                b2: declare(ops, src, &format!("{p}.b2"), &[channels], ParamRole::Bias, 0)?,
            })
        } else {
            None
        };
        let spatial = if cfg.spatial {
            let k = cfg.spatial_kernel;
            let layers = [(channels, hidden, 1, true), (hidden, hidden, k, true), (hidden, hidden, k, true), (hidden, 1, 1, false)];
            let mut convs = Vec::with_capacity(layers.len());
            for (i, (cin, cout, ks, norm)) in layers.into_iter().enumerate() {
                let p = format!("{prefix}.spatial.{i}");
                convs.push(BamConv {
                    weight: declare(ops, src, &format!("{p}.weight"), &[cout, cin, ks, ks], ParamRole::Weight, cin * ks * ks)?,
                    bias: declare(ops, src, &format!("{p}.bias"), &[cout], ParamRole::Bias, 0)?,
                    bn: if norm {
                        Some(BnParams::declare(ops, src, &format!("{p}.bn"), cout)?)
                    } else {
                        None
                    },
                });
            }
            Some(convs)
        } else {
            None
        };
        Ok(BamWeights { channel, spatial })
    }
}

/// Channel branch logits, `(N, C, 1, 1)`.
pub fn channel_branch<O: Ops>(ops: &mut O, x: &O::Value, w: &BamChannel<O::Value>) -> Result<O::Value> {
    let shape = ops.shape_of(x);
    let (n, c) = (shape[0], shape[1]);
    let hidden = ops.shape_of(&w.b1)[0];
    let d = ops.global_avg_pool(x)?;
    let d = ops.reshape(&d, &[n, c])?;
    let h = ops.linear(&d, &w.w1, Some(&w.b1))?;
    let h = ops.reshape(&h, &[n, hidden, 1, 1])?;
    let h = ops.batch_norm(&h, &w.bn)?;
    let h = ops.relu(&h)?;
    let h = ops.reshape(&h, &[n, hidden])?;
    let o = ops.linear(&h, &w.w2, Some(&w.b2))?;
    ops.reshape(&o, &[n, c, 1, 1])
}

/// Spatial branch logits, `(N, 1, H, W)`.
pub fn spatial_branch<O: Ops>(ops: &mut O, x: &O::Value, convs: &[BamConv<O::Value>], cfg: &AttentionConfig) -> Result<O::Value> {
    let mut y = x.clone();
    for conv in convs {
        let ks = ops.shape_of(&conv.weight)[2];
        let p = if ks == 1 {
            Conv2dParams::default()
        } else {
            Conv2dParams::default().dilation(cfg.dilation).padding(cfg.dilation * (ks / 2))
        };
        y = ops.conv2d(&y, &conv.weight, Some(&conv.bias), &p)?;
        if let Some(bn) = &conv.bn {
            y = ops.batch_norm(&y, bn)?;
            y = ops.relu(&y)?;
        }
    }
    Ok(y)
}

/// `sigmoid(channel + spatial)` broadcast to the input shape.
pub fn gate<O: Ops>(ops: &mut O, x: &O::Value, w: &BamWeights<O::Value>, cfg: &AttentionConfig) -> Result<O::Value> {
    let ch = match (&w.channel, cfg.channel) {
        (Some(cw), true) => Some(channel_branch(ops, x, cw)?),
        (None, false) => None,
        _ => return Err(Error::config("BAM channel weights do not match the channel switch")),
    };
    let sp = match (&w.spatial, cfg.spatial) {
        (Some(sw), true) => Some(spatial_branch(ops, x, sw, cfg)?),
        (None, false) => None,
        _ => return Err(Error::config("BAM spatial weights do not match the spatial switch")),
    };
    let logits = match (ch, sp) {
        (Some(c), Some(s)) => ops.add(&c, &s)?,
        (Some(c), None) => c,
        (None, Some(s)) => s,
        (None, None) => return Err(Error::config("BAM with both branches disabled")),
    };
    ops.sigmoid(&logits)
}

pub fn forward<O: Ops>(ops: &mut O, x: &O::Value, w: &BamWeights<O::Value>, cfg: &AttentionConfig) -> Result<O::Value> {
    let g = gate(ops, x, w, cfg)?;
    let scaled = ops.mul(x, &g)?;
    ops.add(x, &scaled)
}
