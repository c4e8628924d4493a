use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use attnforge_core::backbones::{BuildOptions, InsertionPolicy, NetworkSpec, Preset, SiteSelector};
use attnforge_core::{build_preset, AttentionConfig, Mechanism};
use clap::{Args, ValueEnum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AttKind {
    None,
    Gam,
    Se,
    Bam,
    Cbam,
}

impl AttKind {
    pub fn mechanism(self) -> Option<Mechanism> {
        match self {
            AttKind::None => None,
            AttKind::Gam => Some(Mechanism::Gam),
            AttKind::Se => Some(Mechanism::Se),
            AttKind::Bam => Some(Mechanism::Bam),
            AttKind::Cbam => Some(Mechanism::Cbam),
        }
    }
}

/// Attention knobs shared by every command that builds a module.
#[derive(Args, Clone, Debug, Default)]
pub struct AttentionArgs {
    /// Reduction ratio r (defaults per backbone and mechanism).
    #[arg(long)]
    pub r: Option<usize>,
    /// Group count of GAM's spatial convolutions.
    #[arg(long)]
    pub g: Option<usize>,
    /// Channel submodule only.
    #[arg(long, conflicts_with = "sp_only")]
    pub ch_only: bool,
    /// Spatial submodule only.
    #[arg(long)]
    pub sp_only: bool,
    /// Without max pooling.
    #[arg(long, conflicts_with = "max_pool")]
    pub wmp: bool,
    /// With max pooling (GAM: pool/upsample around the spatial stack).
    #[arg(long)]
    pub max_pool: bool,
    /// Spatial kernel size.
    #[arg(long)]
    pub kernel: Option<usize>,
    /// Replace every gate by the identity.
    #[arg(long)]
    pub identity_gate: bool,
}

impl AttentionArgs {
    pub fn apply(&self, mut cfg: AttentionConfig) -> AttentionConfig {
        if let Some(r) = self.r {
            cfg.reduction = r;
        }
        if let Some(g) = self.g {
            cfg.groups = g;
        }
        if self.ch_only {
            cfg = cfg.channel_only();
        }
        if self.sp_only {
            cfg = cfg.spatial_only();
        }
        if self.wmp {
            cfg.max_pool = false;
        }
        if self.max_pool {
            cfg.max_pool = true;
        }
        if let Some(k) = self.kernel {
            cfg.spatial_kernel = k;
        }
        cfg.identity_gate = self.identity_gate;
        cfg
    }

    fn any_set(&self) -> bool {
        self.r.is_some()
            || self.g.is_some()
            || self.ch_only
            || self.sp_only
            || self.wmp
            || self.max_pool
            || self.kernel.is_some()
            || self.identity_gate
    }
}

#[derive(Args, Clone, Debug)]
pub struct NetArgs {
    /// Backbone preset.
    #[arg(long, default_value = "resnet18")]
    pub arch: String,
    /// Attention mechanism.
    #[arg(long, value_enum, default_value = "none")]
    pub att: AttKind,
    #[command(flatten)]
    pub knobs: AttentionArgs,
    /// Insertion sites (defaults per backbone and mechanism).
    #[arg(long, value_parser = parse_selector)]
    pub placement: Option<SiteSelector>,
    /// Stride 2 in the first block of the first stage.
    #[arg(long)]
    pub first_block_stride2: bool,
    /// Input shape NxCxHxW (defaults to 1x3 and the preset's extents).
    #[arg(long, value_parser = parse_shape)]
    pub input: Option<ShapeArg>,
}

impl NetArgs {
    pub fn preset(&self) -> Result<Preset> {
        Ok(self.arch.parse::<Preset>()?)
    }

    pub fn attention(&self) -> Result<Option<(AttentionConfig, InsertionPolicy)>> {
        let preset = self.preset()?;
        match self.att.mechanism() {
            None => {
                if self.knobs.any_set() || self.placement.is_some() {
                    bail!("attention knobs given with --att none");
                }
                Ok(None)
            }
            Some(m) => {
                let (cfg, mut policy) = preset.default_attention(m);
                let cfg = self.knobs.apply(cfg);
                if let Some(sel) = self.placement {
                    policy = InsertionPolicy::new(sel);
                }
                Ok(Some((cfg, policy)))
            }
        }
    }

    /// Input shape, checked to be NCHW with three channels.
    pub fn input_shape(&self) -> Result<Vec<usize>> {
        let preset = self.preset()?;
        let shape = match &self.input {
            Some(s) => s.0.clone(),
            None => {
                let (h, w) = preset.default_input_hw();
                vec![1, 3, h, w]
            }
        };
        if shape.len() != 4 || shape[1] != 3 {
            bail!("input must be Nx3xHxW, got {}", shape_arg(&shape));
        }
        Ok(shape)
    }

    pub fn build(&self) -> Result<NetworkSpec> {
        let preset = self.preset()?;
        let input = self.input_shape()?;
        let opts = BuildOptions {
            input_hw: Some((input[2], input[3])),
            first_block_stride2: self.first_block_stride2,
        };
        let spec = match self.attention()? {
            Some((cfg, policy)) => attnforge_core::backbones::build_preset_with(preset, Some(&cfg), &policy, &opts)?,
            None => attnforge_core::backbones::build_preset_with(preset, None, &InsertionPolicy::none(), &opts)?,
        };
        Ok(spec)
    }

    /// The same network at the preset's own input size.
    pub fn build_default_input(&self) -> Result<NetworkSpec> {
        let preset = self.preset()?;
        let spec = match self.attention()? {
            Some((cfg, policy)) => build_preset(preset, Some(&cfg), &policy)?,
            None => build_preset(preset, None, &InsertionPolicy::none())?,
        };
        Ok(spec)
    }
}

#[derive(Args, Clone, Debug)]
pub struct OutArgs {
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl OutArgs {
    pub fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

/// A shape flag such as `1x3x224x224`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeArg(pub Vec<usize>);

pub fn parse_shape(s: &str) -> Result<ShapeArg, String> {
    let dims: Result<Vec<usize>, _> = s.split(['x', 'X']).map(|d| d.trim().parse::<usize>()).collect();
    match dims {
        Ok(d) if !d.is_empty() && d.iter().all(|&v| v > 0) => Ok(ShapeArg(d)),
        _ => Err(format!("`{s}` is not a shape like 1x3x224x224")),
    }
}

pub fn parse_selector(s: &str) -> Result<SiteSelector, String> {
    s.replace('-', "_").parse::<SiteSelector>().map_err(|e| e.to_string())
}

pub fn shape_arg(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}
