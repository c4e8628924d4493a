//! Global attention mechanism.
//!
//! The channel submodule moves channels last, runs a two-layer MLP
//! `C -> C/r -> C` independently at every spatial position and moves channels
//! back, so its gate `Mc` varies over all three dimensions. The spatial
//! submodule fuses information with two unpooled 7x7 convolutions
//! `C -> C/r -> C`, optionally grouped with a channel shuffle in between.
//!
//! ```text
//! F2 = Mc(F1) * F1
//! F3 = Ms(F2) * F2
//! ```

use super::AttentionConfig;
use crate::autodiff::Ops;
use crate::error::{Error, Result};
use crate::params::{declare, BnParams, ParamRole, ParamSource};
use crate::tensor::{Conv2dParams, Pool2d};

const NCHW_TO_NHWC: [usize; 4] = [0, 2, 3, 1];
const NHWC_TO_NCHW: [usize; 4] = [0, 3, 1, 2];

/// Positionwise MLP: `w1` is `(C, C/r)`, `w2` is `(C/r, C)`.
#[derive(Clone, Debug)]
pub struct GamChannelWeights<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

/// Two bias-free grouped convolutions, each followed by batch norm.
#[derive(Clone, Debug)]
pub struct GamSpatialWeights<T> {
    pub conv1: T,
    pub bn1: BnParams<T>,
    pub conv2: T,
    pub bn2: BnParams<T>,
}

#[derive(Clone, Debug)]
pub struct GamWeights<T> {
    pub channel: Option<GamChannelWeights<T>>,
    pub spatial: Option<GamSpatialWeights<T>>,
}

impl<T> GamChannelWeights<T> {
    pub fn declare<O, S>(ops: &mut O, src: &mut S, prefix: &str, channels: usize, reduction: usize) -> Result<GamChannelWeights<O::Value>>
    where
        O: Ops<Value = T> + ?Sized,
        S: ParamSource<O> + ?Sized,
    {
        let hidden = channels / reduction;
        Ok(GamChannelWeights {
            w1: declare(ops, src, &format!("{prefix}.w1"), &[channels, hidden], ParamRole::Weight, channels)?,
            b1: declare(ops, src, &format!("{prefix}.b1"), &[hidden], ParamRole::Bias, 0)?,
            w2: declare(ops, src, &format!("{prefix}.w2"), &[hidden, channels], ParamRole::Weight, hidden)?,
            b2: declare(ops, src, &format!("{prefix}.b2"), &[channels], ParamRole::Bias, 0)?,
        })
    }
}

impl<T> GamSpatialWeights<T> {
    pub fn declare<O, S>(ops: &mut O, src: &mut S, prefix: &str, channels: usize, cfg: &AttentionConfig) -> Result<GamSpatialWeights<O::Value>>
    where
        O: Ops<Value = T> + ?Sized,
        S: ParamSource<O> + ?Sized,
    {
        let hidden = channels / cfg.reduction;
        let g = cfg.groups;
        let k = cfg.spatial_kernel;
        Ok(GamSpatialWeights {
            conv1: declare(
                ops,
                src,
                &format!("{prefix}.conv1"),
                &[hidden, channels / g, k, k],
                ParamRole::Weight,
                channels / g * k * k,
            )?,
            bn1: BnParams::declare(ops, src, &format!("{prefix}.bn1"), hidden)?,
            conv2: declare(
                ops,
                src,
                &format!("{prefix}.conv2"),
                &[channels, hidden / g, k, k],
                ParamRole::Weight,
                hidden / g * k * k,
            )?,
            bn2: BnParams::declare(ops, src, &format!("{prefix}.bn2"), channels)?,
        })
    }
}

impl<T> GamWeights<T> {
    pub fn declare<O, S>(ops: &mut O, src: &mut S, prefix: &str, channels: usize, cfg: &AttentionConfig) -> Result<GamWeights<O::Value>>
    where
        O: Ops<Value = T> + ?Sized,
        S: ParamSource<O> + ?Sized,
    {
        let channel = if cfg.channel {
            Some(GamChannelWeights::declare(ops, src, &format!("{prefix}.channel"), channels, cfg.reduction)?)
        } else {
            None
        };
        let spatial = if cfg.spatial {
            Some(GamSpatialWeights::declare(ops, src, &format!("{prefix}.spatial"), channels, cfg)?)
        } else {
            None
        };
        Ok(GamWeights { channel, spatial })
    }
}

/// Channel attention map `Mc(F1)`, same shape as `F1`.
pub fn channel_gate<O: Ops>(ops: &mut O, f1: &O::Value, w: &GamChannelWeights<O::Value>) -> Result<O::Value> {
    let channels = ops.shape_of(&w.w1)[0];
    let shape = ops.shape_of(f1);
    if shape.len() != 4 || shape[1] != channels {
        return Err(Error::shape(format!(
            "GAM channel submodule expects (N, {channels}, H, W), got {shape:?}"
        )));
    }
    let nhwc = ops.permute(f1, &NCHW_TO_NHWC)?;
    let hidden = ops.linear(&nhwc, &w.w1, Some(&w.b1))?;
    let hidden = ops.relu(&hidden)?;
    let out = ops.linear(&hidden, &w.w2, Some(&w.b2))?;
    let nchw = ops.permute(&out, &NHWC_TO_NCHW)?;
    ops.sigmoid(&nchw)
}

/// Returns `(Mc, F2)` with `F2 = Mc * F1`.
pub fn channel_forward<O: Ops>(ops: &mut O, f1: &O::Value, w: &GamChannelWeights<O::Value>) -> Result<(O::Value, O::Value)> {
    let mc = channel_gate(ops, f1, w)?;
    let f2 = ops.mul(&mc, f1)?;
    Ok((mc, f2))
}

/// Spatial attention map `Ms(F2)`, same shape as `F2`.
pub fn spatial_gate<O: Ops>(
    ops: &mut O,
    f2: &O::Value,
    w: &GamSpatialWeights<O::Value>,
    cfg: &AttentionConfig,
) -> Result<O::Value> {
    let shape = ops.shape_of(f2);
    let (h, wd) = match *shape.as_slice() {
        [_, _, h, w] => (h, w),
        _ => return Err(Error::shape(format!("GAM spatial submodule expects NCHW, got {shape:?}"))),
    };
    let conv = Conv2dParams::default()
        .padding(cfg.spatial_kernel / 2)
        .groups(cfg.groups);
    let mut x = f2.clone();
    if cfg.max_pool {
        if h < 2 || wd < 2 {
            return Err(Error::EmptyOutput(format!(
                "max-pool variant needs spatial extents >= 2, got {h}x{wd}"
            )));
        }
        x = ops.max_pool2d(&x, &Pool2d::new(2, 2, 0).ceil_mode(true))?;
    }
    let y = ops.conv2d(&x, &w.conv1, None, &conv)?;
    let y = ops.batch_norm(&y, &w.bn1)?;
    let mut y = ops.relu(&y)?;
    if cfg.groups > 1 {
        y = ops.channel_shuffle(&y, cfg.groups)?;
    }
    let y = ops.conv2d(&y, &w.conv2, None, &conv)?;
    let mut y = ops.batch_norm(&y, &w.bn2)?;
    if cfg.max_pool {
        y = ops.upsample_nearest(&y, h, wd)?;
    }
    ops.sigmoid(&y)
}

/// `F3 = Ms(F2) * F2`.
pub fn spatial_forward<O: Ops>(
    ops: &mut O,
    f2: &O::Value,
    w: &GamSpatialWeights<O::Value>,
    cfg: &AttentionConfig,
) -> Result<O::Value> {
    let ms = spatial_gate(ops, f2, w, cfg)?;
    ops.mul(&ms, f2)
}

/// Channel then spatial attention, honouring the ablation switches.
pub fn forward<O: Ops>(ops: &mut O, f1: &O::Value, w: &GamWeights<O::Value>, cfg: &AttentionConfig) -> Result<O::Value> {
    let f2 = match (&w.channel, cfg.channel) {
        (Some(cw), true) => channel_forward(ops, f1, cw)?.1,
        (None, false) => f1.clone(),
        _ => return Err(Error::config("GAM channel weights do not match the channel switch")),
    };
    match (&w.spatial, cfg.spatial) {
        (Some(sw), true) => spatial_forward(ops, &f2, sw, cfg),
        (None, false) if cfg.channel => Ok(f2),
        (None, false) => Err(Error::config("GAM with both submodules disabled")),
        _ => Err(Error::config("GAM spatial weights do not match the spatial switch")),
    }
}
