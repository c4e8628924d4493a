//! Attention modules: the global attention mechanism (GAM) with its channel
//! and spatial submodules, and the SE, CBAM and BAM baselines.
//!
//! Every module is written against [`Ops`], so the same definition runs
//! eagerly, on a recording tape, or through the cost walker.

pub mod bam;
pub mod cbam;
pub mod gam;
pub mod se;
pub mod suite;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Differentiable, Ops};
use crate::error::{Error, Result};
use crate::params::{ParamSource, ParamSpec};

pub use bam::BamWeights;
pub use cbam::CbamWeights;
pub use gam::{GamChannelWeights, GamSpatialWeights, GamWeights};
pub use se::SeWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Gam,
    Se,
    Bam,
    Cbam,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Gam => "gam",
            Mechanism::Se => "se",
            Mechanism::Bam => "bam",
            Mechanism::Cbam => "cbam",
        })
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gam" => Ok(Mechanism::Gam),
            "se" => Ok(Mechanism::Se),
            "bam" => Ok(Mechanism::Bam),
            "cbam" => Ok(Mechanism::Cbam),
            other => Err(Error::Unknown {
                kind: "attention mechanism",
                name: other.to_string(),
            }),
        }
    }
}

fn default_groups() -> usize {
    1
}

/// Settings of one attention module.
///
/// `max_pool` means different things per mechanism: for GAM it wraps the
/// spatial convolution stack in a 2x2 max-pool / nearest-upsample pair (off by
/// default); for CBAM it enables the max-pooled descriptors next to the
/// average-pooled ones (on by default). Turning it off is the "without max
/// pooling" ablation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
pub struct AttentionConfig {
    pub mechanism: Mechanism,
    pub reduction: usize,
    #[serde(default = "default_groups")]
    pub groups: usize,
    pub channel: bool,
    pub spatial: bool,
    pub max_pool: bool,
    pub spatial_kernel: usize,
    /// Dilation of BAM's 3x3 spatial convolutions.
    pub dilation: usize,
    /// Forces every gate to the identity (the module returns its input).
    #[serde(default)]
    pub identity_gate: bool,
}

impl AttentionConfig {
    pub fn gam(reduction: usize) -> Self {
        Self {
            mechanism: Mechanism::Gam,
            reduction,
            groups: 1,
            channel: true,
            spatial: true,
            max_pool: false,
            spatial_kernel: 7,
            dilation: 1,
            identity_gate: false,
        }
    }

    pub fn se(reduction: usize) -> Self {
        Self {
            mechanism: Mechanism::Se,
            spatial: false,
            spatial_kernel: 1,
            ..Self::gam(reduction)
        }
    }

    pub fn cbam(reduction: usize) -> Self {
        Self {
            mechanism: Mechanism::Cbam,
            max_pool: true,
            ..Self::gam(reduction)
        }
    }

    pub fn bam(reduction: usize) -> Self {
        Self {
            mechanism: Mechanism::Bam,
            spatial_kernel: 3,
            dilation: 4,
            ..Self::gam(reduction)
        }
    }

    /// Default settings of `mechanism` with reduction ratio `r`.
    pub fn for_mechanism(mechanism: Mechanism, reduction: usize) -> Self {
        match mechanism {
            Mechanism::Gam => Self::gam(reduction),
            Mechanism::Se => Self::se(reduction),
            Mechanism::Bam => Self::bam(reduction),
            Mechanism::Cbam => Self::cbam(reduction),
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_max_pool(mut self, on: bool) -> Self {
        self.max_pool = on;
        self
    }

    pub fn channel_only(mut self) -> Self {
        self.channel = true;
        self.spatial = false;
        self
    }

    pub fn spatial_only(mut self) -> Self {
        self.channel = false;
        self.spatial = true;
        self
    }

    pub fn with_identity_gate(mut self, on: bool) -> Self {
        self.identity_gate = on;
        self
    }

    pub fn reduced(&self, channels: usize) -> usize {
        channels / self.reduction
    }

    /// Checks the configuration against the channel count of its attachment site.
    pub fn validate(&self, channels: usize) -> Result<()> {
        if !self.channel && !self.spatial {
            return Err(Error::config("attention with both channel and spatial submodules disabled"));
        }
        if self.reduction == 0 || self.groups == 0 {
            return Err(Error::config("reduction ratio and group count must be positive"));
        }
        if !channels.is_multiple_of(self.reduction) {
            return Err(Error::Indivisible {
                what: "attention channels",
                value: channels,
                divisor: self.reduction,
            });
        }
        if self.spatial && self.spatial_kernel.is_multiple_of(2) {
            return Err(Error::config(format!(
                "spatial kernel {} must be odd to preserve extents",
                self.spatial_kernel
            )));
        }
        match self.mechanism {
            Mechanism::Gam if self.spatial => {
                let reduced = self.reduced(channels);
                for (what, value) in [("GAM channels", channels), ("GAM reduced channels", reduced)] {
                    if value % self.groups != 0 {
                        return Err(Error::Indivisible {
                            what,
                            value,
                            divisor: self.groups,
                        });
                    }
                }
            }
            Mechanism::Se if self.spatial => {
                return Err(Error::config("SE has no spatial submodule"));
            }
            Mechanism::Se | Mechanism::Bam | Mechanism::Cbam if self.groups != 1 => {
                return Err(Error::config(format!("group convolution is only defined for GAM, got {}", self.mechanism)));
            }
            _ => {}
        }
        Ok(())
    }

    /// Short label such as `gam(r=8,g=4,sp)`.
    pub fn label(&self) -> String {
        let mut s = format!("{}(r={}", self.mechanism, self.reduction);
        if self.groups > 1 {
            s += &format!(",g={}", self.groups);
        }
        match (self.channel, self.spatial) {
            (true, false) if self.mechanism != Mechanism::Se => s += ",ch",
            (false, true) => s += ",sp",
            _ => {}
        }
        let default_pool = matches!(self.mechanism, Mechanism::Cbam);
        if self.max_pool != default_pool {
            s += if self.max_pool { ",maxpool" } else { ",wmp" };
        }
        if self.identity_gate {
            s += ",identity";
        }
        s + ")"
    }
}

/// Weights of any attention module.
#[derive(Clone, Debug)]
pub enum AttentionWeights<T> {
    Gam(GamWeights<T>),
    Se(SeWeights<T>),
    Bam(BamWeights<T>),
    Cbam(CbamWeights<T>),
}

/// Declares the parameters of the module described by `cfg` at a site with
/// `channels` channels.
pub fn declare<O, S>(
    ops: &mut O,
    src: &mut S,
    prefix: &str,
    channels: usize,
    cfg: &AttentionConfig,
) -> Result<AttentionWeights<O::Value>>
where
    O: Ops + ?Sized,
    S: ParamSource<O> + ?Sized,
{
    cfg.validate(channels)?;
    Ok(match cfg.mechanism {
        Mechanism::Gam => AttentionWeights::Gam(GamWeights::declare(ops, src, prefix, channels, cfg)?),
        Mechanism::Se => AttentionWeights::Se(SeWeights::declare(ops, src, prefix, channels, cfg)?),
        Mechanism::Bam => AttentionWeights::Bam(BamWeights::declare(ops, src, prefix, channels, cfg)?),
        Mechanism::Cbam => AttentionWeights::Cbam(CbamWeights::declare(ops, src, prefix, channels, cfg)?),
    })
}

/// Applies the module to an NCHW feature map.
pub fn forward<O: Ops>(ops: &mut O, x: &O::Value, w: &AttentionWeights<O::Value>, cfg: &AttentionConfig) -> Result<O::Value> {
    let channels = ops.shape_of(x).get(1).copied().unwrap_or(0);
    cfg.validate(channels)?;
    if cfg.identity_gate {
        return Ok(x.clone());
    }
    match w {
        AttentionWeights::Gam(w) => gam::forward(ops, x, w, cfg),
        AttentionWeights::Se(w) => se::forward(ops, x, w),
        AttentionWeights::Bam(w) => bam::forward(ops, x, w, cfg),
        AttentionWeights::Cbam(w) => cbam::forward(ops, x, w, cfg),
    }
}

/// Hands out a fixed list of values in declaration order, checking names.
struct OrderedSource<'a, V> {
    names: &'a [String],
    values: &'a [V],
    next: usize,
}

impl<O: Ops + ?Sized> ParamSource<O> for OrderedSource<'_, O::Value> {
    fn param(&mut self, _ops: &mut O, spec: &ParamSpec<'_>) -> Result<O::Value> {
        let k = self.next;
        match (self.names.get(k), self.values.get(k)) {
            (Some(name), Some(v)) if name == spec.name => {
                self.next += 1;
                Ok(v.clone())
            }
            _ => Err(Error::config(format!("unexpected parameter `{}` at position {k}", spec.name))),
        }
    }
}

/// An attention module viewed as a function of `[input, params...]`, so that
/// gradients with respect to every parameter can be recorded and checked.
#[derive(Clone, Debug)]
pub struct AttentionFn {
    pub cfg: AttentionConfig,
    pub channels: usize,
    /// Parameter names in declaration order.
    pub param_names: Vec<String>,
    pub prefix: String,
}

impl AttentionFn {
    pub fn new(cfg: AttentionConfig, channels: usize, store: &crate::params::WeightStore, prefix: &str) -> Self {
        Self {
            cfg,
            channels,
            param_names: store.iter().map(|(n, _)| n.to_string()).collect(),
            prefix: prefix.to_string(),
        }
    }
}

impl Differentiable for AttentionFn {
    fn name(&self) -> String {
        self.cfg.label()
    }

    fn eval<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<O::Value> {
        let (x, params) = inputs
            .split_first()
            .ok_or_else(|| Error::config("attention function needs an input tensor"))?;
        let mut src = OrderedSource {
            names: &self.param_names,
            values: params,
            next: 0,
        };
        let w = declare(ops, &mut src, &self.prefix, self.channels, &self.cfg)?;
        if src.next != params.len() {
            return Err(Error::config(format!(
                "{} parameters supplied, module declares {}",
                params.len(),
                src.next
            )));
        }
        forward(ops, x, &w, &self.cfg)
    }
}
