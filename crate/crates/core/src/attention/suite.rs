//! Gradient-check cases for every attention variant.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{declare, AttentionConfig, AttentionFn};
use crate::autodiff::{grad_check, Eager, GradCheckConfig, GradCheckReport, Ops};
use crate::error::{Error, Result};
use crate::params::{ParamRole, ParamSource, ParamSpec, WeightStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Gam,
    /// Grouped spatial convolutions with channel shuffle.
    GamGc,
    /// Max-pool / upsample around the spatial stack.
    GamMaxPool,
    /// Explicitly without max pooling.
    GamWmp,
    ChannelOnly,
    SpatialOnly,
    Se,
    Bam,
    Cbam,
    CbamWmp,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Gam,
        Variant::GamGc,
        Variant::GamMaxPool,
        Variant::GamWmp,
        Variant::ChannelOnly,
        Variant::SpatialOnly,
        Variant::Se,
        Variant::Bam,
        Variant::Cbam,
        Variant::CbamWmp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gam => "gam",
            Variant::GamGc => "gam-gc",
            Variant::GamMaxPool => "gam-maxpool",
            Variant::GamWmp => "gam-wmp",
            Variant::ChannelOnly => "gam-ch",
            Variant::SpatialOnly => "gam-sp",
            Variant::Se => "se",
            Variant::Bam => "bam",
            Variant::Cbam => "cbam",
            Variant::CbamWmp => "cbam-wmp",
        }
    }

    /// Configuration of this variant for reduction `r` and (grouped variant
    /// only) group count `g`.
    pub fn config(self, r: usize, g: usize) -> AttentionConfig {
        match self {
            Variant::Gam => AttentionConfig::gam(r),
            Variant::GamGc => AttentionConfig::gam(r).with_groups(g),
            Variant::GamMaxPool => AttentionConfig::gam(r).with_max_pool(true),
            Variant::GamWmp => AttentionConfig::gam(r).with_max_pool(false),
            Variant::ChannelOnly => AttentionConfig::gam(r).channel_only(),
            Variant::SpatialOnly => AttentionConfig::gam(r).spatial_only(),
            Variant::Se => AttentionConfig::se(r),
            Variant::Bam => AttentionConfig::bam(r),
            Variant::Cbam => AttentionConfig::cbam(r),
            Variant::CbamWmp => AttentionConfig::cbam(r).with_max_pool(false),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "attention variant",
                name: s.to_string(),
            })
    }
}

/// Shapes every variant is checked on; all satisfy `r = 2`, `g = 2`.
pub const CHECK_SHAPES: [[usize; 4]; 3] = [[2, 8, 5, 5], [1, 8, 6, 6], [1, 4, 4, 3]];

/// Parameters drawn so that gates stay away from saturation and batch norm
/// statistics are non-trivial.
struct RandomParams {
    rng: ChaCha8Rng,
    store: WeightStore,
}

impl<O: Ops + ?Sized> ParamSource<O> for RandomParams {
    fn param(&mut self, ops: &mut O, spec: &ParamSpec<'_>) -> Result<O::Value> {
        let (lo, hi) = match spec.role {
            ParamRole::Weight => {
                let a = (3.0 / spec.fan_in.max(1) as f64).sqrt();
                (-a, a)
            }
            ParamRole::Bias | ParamRole::BnBeta | ParamRole::BnMean => (-0.2, 0.2),
            ParamRole::BnGamma | ParamRole::BnVar => (0.5, 1.5),
        };
        let t = Tensor::rand_uniform(spec.shape.to_vec(), lo, hi, &mut self.rng)?;
        self.store.insert(spec.name, t.clone(), spec.role)?;
        Ok(ops.leaf(t))
    }
}

/// A module under test together with its inputs `[x, params...]`.
#[derive(Clone, Debug)]
pub struct Case {
    pub func: AttentionFn,
    pub inputs: Vec<Tensor>,
    pub store: WeightStore,
}

/// Builds a seeded module and input of `shape` (NCHW). Inputs lie in
/// `[-1.5, 1.5]`.
pub fn build_case(cfg: &AttentionConfig, shape: [usize; 4], seed: u64) -> Result<Case> {
    let channels = shape[1];
    let mut src = RandomParams {
        rng: ChaCha8Rng::seed_from_u64(seed),
        store: WeightStore::new(),
    };
    declare(&mut Eager, &mut src, "m", channels, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let x = Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.5..1.5))?;
    let store = src.store;
    let func = AttentionFn::new(cfg.clone(), channels, &store, "m");
    let mut inputs = vec![x];
    inputs.extend(store.iter().map(|(_, p)| p.tensor.clone()));
    Ok(Case { func, inputs, store })
}

pub fn check_case(cfg: &AttentionConfig, shape: [usize; 4], seed: u64, gc: &GradCheckConfig) -> Result<GradCheckReport> {
    let case = build_case(cfg, shape, seed)?;
    grad_check(&case.func, &case.inputs, gc)
}
