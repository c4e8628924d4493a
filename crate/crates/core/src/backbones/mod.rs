//! Backbone networks as layer graphs, with attention insertion.

mod builder;
mod exec;
mod mobilenet;
mod resnet;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, Mechanism};
use crate::error::{Error, Result};

pub use exec::{declare_node_params, execute, forward, infer_shapes, init_weights, weight_manifest, Network, NodeParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    /// Network input; `shape` is `(C, H, W)`.
    Input { shape: [usize; 3] },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        #[serde(default = "one")]
        dilation: usize,
        #[serde(default = "one")]
        groups: usize,
        bias: bool,
    },
    Bn { channels: usize },
    Relu,
    Relu6,
    MaxPool { kernel: usize, stride: usize, padding: usize },
    /// Global average pooling to `(N, C, 1, 1)`.
    AvgPool,
    Flatten,
    Linear { in_features: usize, out_features: usize, bias: bool },
    ResidualAdd,
    Attention { channels: usize, config: AttentionConfig },
}

fn one() -> usize {
    1
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::Bn { .. } => "bn",
            LayerKind::Relu => "relu",
            LayerKind::Relu6 => "relu6",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::AvgPool => "avgpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Linear { .. } => "linear",
            LayerKind::ResidualAdd => "residual_add",
            LayerKind::Attention { .. } => "attention",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct LayerNode {
    pub id: usize,
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
}

/// Where attention may be attached.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    /// Residual branch of a block, before the skip addition.
    Block,
    /// Output of a resolution stage; `last` marks the final stage.
    StageEnd { last: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SiteSelector {
    /// Every stage output.
    StageEnds,
    /// Stage outputs that feed another stage.
    BetweenStages,
    /// Every block's residual branch.
    PerBlock,
    None,
}

impl SiteSelector {
    pub const SEARCHABLE: [SiteSelector; 3] = [SiteSelector::StageEnds, SiteSelector::BetweenStages, SiteSelector::PerBlock];

    pub fn selects(self, kind: SiteKind) -> bool {
        match (self, kind) {
            (SiteSelector::StageEnds, SiteKind::StageEnd { .. }) => true,
            (SiteSelector::BetweenStages, SiteKind::StageEnd { last }) => !last,
            (SiteSelector::PerBlock, SiteKind::Block) => true,
            _ => false,
        }
    }

    /// Conventional placement of each mechanism; see
    /// [`Preset::default_selector`] for per-backbone exceptions.
    pub fn default_for(mechanism: Mechanism) -> Self {
        match mechanism {
            Mechanism::Gam => SiteSelector::StageEnds,
            Mechanism::Se | Mechanism::Cbam => SiteSelector::PerBlock,
            Mechanism::Bam => SiteSelector::BetweenStages,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SiteSelector::StageEnds => "stage_ends",
            SiteSelector::BetweenStages => "between_stages",
            SiteSelector::PerBlock => "per_block",
            SiteSelector::None => "none",
        }
    }
}

impl fmt::Display for SiteSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SiteSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stage_ends" => Ok(SiteSelector::StageEnds),
            "between_stages" => Ok(SiteSelector::BetweenStages),
            "per_block" => Ok(SiteSelector::PerBlock),
            "none" => Ok(SiteSelector::None),
            other => Err(Error::Unknown {
                kind: "site selector",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct InsertionPolicy {
    pub selector: SiteSelector,
    /// Per-site replacements of the attention configuration, keyed by site name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, AttentionConfig>,
}

impl InsertionPolicy {
    pub fn new(selector: SiteSelector) -> Self {
        Self {
            selector,
            overrides: BTreeMap::new(),
        }
    }

    pub fn none() -> Self {
        Self::new(SiteSelector::None)
    }
}

/// A candidate attachment point and what, if anything, was attached there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct SiteRecord {
    pub name: String,
    pub kind: SiteKind,
    pub channels: usize,
    /// Spatial extents at the default input size.
    pub extent: (usize, usize),
    pub attention_node: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Resnet18Imagenet,
    Resnet50Imagenet,
    Resnet50Cifar,
    MobilenetV2Imagenet,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Resnet18Imagenet,
        Preset::Resnet50Imagenet,
        Preset::Resnet50Cifar,
        Preset::MobilenetV2Imagenet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Resnet18Imagenet => "resnet18_imagenet",
            Preset::Resnet50Imagenet => "resnet50_imagenet",
            Preset::Resnet50Cifar => "resnet50_cifar",
            Preset::MobilenetV2Imagenet => "mobilenet_v2_imagenet",
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Preset::Resnet50Cifar => 100,
            _ => 1000,
        }
    }

    pub fn default_input_hw(self) -> (usize, usize) {
        match self {
            Preset::Resnet50Cifar => (32, 32),
            _ => (224, 224),
        }
    }

    /// Default GAM reduction ratio for this backbone, as found by the
    /// placement calibration.
    pub fn default_gam_reduction(self) -> usize {
        match self {
            Preset::Resnet18Imagenet | Preset::MobilenetV2Imagenet => 8,
            Preset::Resnet50Imagenet | Preset::Resnet50Cifar => 16,
        }
    }

    pub fn default_reduction(self, mechanism: Mechanism) -> usize {
        match mechanism {
            Mechanism::Gam => self.default_gam_reduction(),
            _ if self == Preset::MobilenetV2Imagenet => 8,
            _ => 16,
        }
    }

    /// Default attachment sites of `mechanism` on this backbone.
    pub fn default_selector(self, mechanism: Mechanism) -> SiteSelector {
        match (mechanism, self) {
            (Mechanism::Gam, Preset::Resnet50Imagenet | Preset::Resnet50Cifar) => SiteSelector::PerBlock,
            _ => SiteSelector::default_for(mechanism),
        }
    }

    /// Default configuration and placement of `mechanism` on this backbone.
    pub fn default_attention(self, mechanism: Mechanism) -> (AttentionConfig, InsertionPolicy) {
        (
            AttentionConfig::for_mechanism(mechanism, self.default_reduction(mechanism)),
            InsertionPolicy::new(self.default_selector(mechanism)),
        )
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "resnet18_imagenet" | "resnet18" => Ok(Preset::Resnet18Imagenet),
            "resnet50_imagenet" | "resnet50" => Ok(Preset::Resnet50Imagenet),
            "resnet50_cifar" => Ok(Preset::Resnet50Cifar),
            "mobilenet_v2_imagenet" | "mobilenet_v2" | "mobilenetv2" => Ok(Preset::MobilenetV2Imagenet),
            _ => Err(Error::Unknown {
                kind: "preset",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct BuildOptions {
    /// Overrides the preset's input extents `(H, W)`.
    pub input_hw: Option<(usize, usize)>,
    /// Gives the first block of the first stage stride 2 (ResNets only).
    pub first_block_stride2: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct NetworkSpec {
    pub name: String,
    pub preset: Option<Preset>,
    /// Expected input `(C, H, W)`; the batch extent is free.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub attention: Option<AttentionConfig>,
    pub policy: InsertionPolicy,
    pub nodes: Vec<LayerNode>,
    pub sites: Vec<SiteRecord>,
}

impl NetworkSpec {
    pub fn output(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn attention_nodes(&self) -> impl Iterator<Item = &LayerNode> {
        self.nodes.iter().filter(|n| matches!(n.kind, LayerKind::Attention { .. }))
    }

    /// Structural checks: ids are positions, inputs precede their consumers.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::config("network has no nodes"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::config(format!("node `{}` has id {} at position {i}", node.name, node.id)));
            }
            if node.inputs.iter().any(|&j| j >= i) {
                return Err(Error::config(format!("node `{}` consumes a later node", node.name)));
            }
            let arity = match node.kind {
                LayerKind::Input { .. } => 0,
                LayerKind::ResidualAdd => 2,
                _ => 1,
            };
            if node.inputs.len() != arity {
                return Err(Error::config(format!(
                    "node `{}` ({}) has {} inputs, expected {arity}",
                    node.name,
                    node.kind.name(),
                    node.inputs.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Builds a preset backbone, attaching `att` at the sites chosen by `policy`.
pub fn build_preset(preset: Preset, att: Option<&AttentionConfig>, policy: &InsertionPolicy) -> Result<NetworkSpec> {
    build_preset_with(preset, att, policy, &BuildOptions::default())
}

pub fn build_preset_with(
    preset: Preset,
    att: Option<&AttentionConfig>,
    policy: &InsertionPolicy,
    opts: &BuildOptions,
) -> Result<NetworkSpec> {
    if att.is_none() && (policy.selector != SiteSelector::None || !policy.overrides.is_empty()) {
        return Err(Error::config("an insertion policy was given without an attention configuration"));
    }
    let spec = match preset {
        Preset::Resnet18Imagenet => resnet::build(preset, resnet::Depth::Basic18, att, policy, opts)?,
        Preset::Resnet50Imagenet | Preset::Resnet50Cifar => resnet::build(preset, resnet::Depth::Bottleneck50, att, policy, opts)?,
        Preset::MobilenetV2Imagenet => mobilenet::build(preset, att, policy, opts)?,
    };
    for name in policy.overrides.keys() {
        if !spec.sites.iter().any(|s| &s.name == name) {
            return Err(Error::Unknown {
                kind: "insertion site",
                name: name.clone(),
            });
        }
    }
    spec.validate()?;
    infer_shapes(&spec, &[1, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]])?;
    Ok(spec)
}
