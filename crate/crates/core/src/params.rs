//! Named parameters: how modules declare their weights, and the sources that
//! satisfy those declarations (random initialization, a loaded weight store,
//! a tape, or a shape-only cost walker).

use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Ops;
use crate::error::{Error, Result};
use crate::tensor::{read_gtf1_file, write_gtf1_file, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
    BnMean,
    BnVar,
}

impl ParamRole {
    /// Running statistics are buffers, not learnable parameters.
    pub fn learnable(self) -> bool {
        !matches!(self, ParamRole::BnMean | ParamRole::BnVar)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ParamSpec<'a> {
    pub name: &'a str,
    pub shape: &'a [usize],
    pub role: ParamRole,
    /// Fan-in used by Kaiming initialization (weights only).
    pub fan_in: usize,
}

impl ParamSpec<'_> {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Supplies a value for each declared parameter.
pub trait ParamSource<O: Ops + ?Sized> {
    fn param(&mut self, ops: &mut O, spec: &ParamSpec<'_>) -> Result<O::Value>;
}

pub(crate) fn declare<O: Ops + ?Sized, S: ParamSource<O> + ?Sized>(
    ops: &mut O,
    src: &mut S,
    name: &str,
    shape: &[usize],
    role: ParamRole,
    fan_in: usize,
) -> Result<O::Value> {
    src.param(
        ops,
        &ParamSpec {
            name,
            shape,
            role,
            fan_in,
        },
    )
}

/// Inference-mode batch-norm parameters.
#[derive(Clone, Debug)]
pub struct BnParams<T> {
    pub gamma: T,
    pub beta: T,
    pub mean: T,
    pub var: T,
    pub eps: f64,
}

pub const BN_EPS: f64 = 1e-5;

impl<T> BnParams<T> {
    pub fn declare<O, S>(ops: &mut O, src: &mut S, prefix: &str, channels: usize) -> Result<BnParams<O::Value>>
    where
        O: Ops<Value = T> + ?Sized,
        S: ParamSource<O> + ?Sized,
    {
        let shape = [channels];
        Ok(BnParams {
            gamma: declare(ops, src, &format!("{prefix}.gamma"), &shape, ParamRole::BnGamma, 0)?,
            beta: declare(ops, src, &format!("{prefix}.beta"), &shape, ParamRole::BnBeta, 0)?,
            mean: declare(ops, src, &format!("{prefix}.mean"), &shape, ParamRole::BnMean, 0)?,
            var: declare(ops, src, &format!("{prefix}.var"), &shape, ParamRole::BnVar, 0)?,
            eps: BN_EPS,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `N(0, 2 / fan_in)` weights.
    KaimingNormal,
    /// `U(-0.1, 0.1)` weights.
    UniformSmall,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kaiming_normal" | "kaiming" => Ok(InitScheme::KaimingNormal),
            "uniform_small" | "uniform" => Ok(InitScheme::UniformSmall),
            other => Err(Error::Unknown {
                kind: "init scheme",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StoredParam {
    pub tensor: Tensor,
    pub role: ParamRole,
}

/// Ordered name -> tensor map holding every parameter and buffer of a model.
#[derive(Clone, Debug, Default)]
pub struct WeightStore {
    entries: IndexMap<String, StoredParam>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, role: ParamRole) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name.to_string(), StoredParam { tensor, role });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&StoredParam> {
        self.entries.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(|p| &p.tensor).ok_or_else(|| Error::Unknown {
            kind: "parameter",
            name: name.to_string(),
        })
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let entry = self.entries.get_mut(name).ok_or_else(|| Error::Unknown {
            kind: "parameter",
            name: name.to_string(),
        })?;
        if entry.tensor.shape() != tensor.shape() {
            return Err(Error::shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                entry.tensor.shape(),
                tensor.shape()
            )));
        }
        entry.tensor = tensor;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StoredParam)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn learnable_scalars(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.role.learnable())
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Writes every tensor as a GTF1 file plus `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, mut manifest: Manifest) -> Result<Manifest> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        manifest.tensors.clear();
        for (i, (name, p)) in self.entries.iter().enumerate() {
            let file = tensor_file_name(i, name);
            write_gtf1_file(&p.tensor, dir.join(&file))?;
            manifest.tensors.push(ManifestEntry {
                name: name.clone(),
                file,
                shape: p.tensor.shape().to_vec(),
                role: p.role,
                learnable: p.role.learnable(),
            });
        }
        let json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, Manifest)> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("unexpected manifest format `{}`", manifest.format)));
        }
        let mut store = WeightStore::new();
        for entry in &manifest.tensors {
            let t = read_gtf1_file(dir.join(&entry.file))?;
            if t.shape() != entry.shape.as_slice() {
                return Err(Error::Format(format!(
                    "`{}` has shape {:?} on disk but {:?} in the manifest",
                    entry.name,
                    t.shape(),
                    entry.shape
                )));
            }
            store.insert(&entry.name, t, entry.role)?;
        }
        Ok((store, manifest))
    }
}

pub(crate) fn tensor_file_name(index: usize, name: &str) -> String {
    format!("{index:05}_{}.gtf", sanitize(name))
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "attnforge-weights/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    pub learnable: bool,
}

/// Index of a weight bundle directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Manifest {
    pub format: String,
    /// Network preset name, when the bundle holds a whole network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<String>,
    /// Attention settings, when the bundle holds a single module.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<crate::attention::AttentionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tensors: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new() -> Self {
        Self {
            format: MANIFEST_FORMAT.to_string(),
            architecture: None,
            attention: None,
            channels: None,
            seed: None,
            tensors: Vec::new(),
        }
    }

    pub fn learnable_scalars(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.learnable)
            .map(|t| t.shape.iter().product::<usize>())
            .sum()
    }
}

impl Default for Manifest {
    fn default() -> Self {
        Self::new()
    }
}

/// Creates parameters from a seeded RNG and records them in a [`WeightStore`].
pub struct InitSource {
    rng: ChaCha8Rng,
    scheme: InitScheme,
    store: WeightStore,
}

impl InitSource {
    pub fn new(seed: u64, scheme: InitScheme) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            scheme,
            store: WeightStore::new(),
        }
    }

    pub fn into_store(self) -> WeightStore {
        self.store
    }

    pub fn init_tensor(&mut self, spec: &ParamSpec<'_>) -> Result<Tensor> {
        let shape = spec.shape.to_vec();
        match spec.role {
            ParamRole::Weight => match self.scheme {
                InitScheme::KaimingNormal => {
                    let std = (2.0 / spec.fan_in.max(1) as f64).sqrt();
                    Tensor::randn(shape, std, &mut self.rng)
                }
                InitScheme::UniformSmall => Tensor::rand_uniform(shape, -0.1, 0.1, &mut self.rng),
            },
            ParamRole::Bias | ParamRole::BnBeta | ParamRole::BnMean => Tensor::zeros(shape),
            ParamRole::BnGamma | ParamRole::BnVar => Tensor::ones(shape),
        }
    }
}

impl<O: Ops + ?Sized> ParamSource<O> for InitSource {
    fn param(&mut self, ops: &mut O, spec: &ParamSpec<'_>) -> Result<O::Value> {
        let t = self.init_tensor(spec)?;
        self.store.insert(spec.name, t.clone(), spec.role)?;
        Ok(ops.leaf(t))
    }
}

/// Reads parameters from an existing store, checking shapes.
pub struct StoreSource<'a> {
    store: &'a WeightStore,
}

impl<'a> StoreSource<'a> {
    pub fn new(store: &'a WeightStore) -> Self {
        Self { store }
    }
}

impl<O: Ops + ?Sized> ParamSource<O> for StoreSource<'_> {
    fn param(&mut self, ops: &mut O, spec: &ParamSpec<'_>) -> Result<O::Value> {
        let t = self.store.tensor(spec.name)?;
        if t.shape() != spec.shape {
            return Err(Error::shape(format!(
                "parameter `{}` has shape {:?}, module expects {:?}",
                spec.name,
                t.shape(),
                spec.shape
            )));
        }
        Ok(ops.leaf(t.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Eager;

    #[test]
    fn kaiming_uses_fan_in() {
        let mut src = InitSource::new(0, InitScheme::KaimingNormal);
        let spec = ParamSpec {
            name: "w",
            shape: &[64, 3, 7, 7],
            role: ParamRole::Weight,
            fan_in: 3 * 7 * 7,
        };
        let t = src.init_tensor(&spec).unwrap();
        let var = t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
        let expected = 2.0 / 147.0;
        assert!((var - expected).abs() / expected < 0.05, "var {var} vs {expected}");
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut src = InitSource::new(0, InitScheme::UniformSmall);
        let mut ops = Eager;
        declare(&mut ops, &mut src, "a", &[2], ParamRole::Bias, 0).unwrap();
        assert!(declare(&mut ops, &mut src, "a", &[2], ParamRole::Bias, 0).is_err());
    }

    #[test]
    fn bn_defaults() {
        let mut src = InitSource::new(1, InitScheme::KaimingNormal);
        let bn = BnParams::declare(&mut Eager, &mut src, "bn", 3).unwrap();
        assert_eq!(bn.gamma.data(), &[1.0; 3]);
        assert_eq!(bn.beta.data(), &[0.0; 3]);
        assert_eq!(bn.mean.data(), &[0.0; 3]);
        assert_eq!(bn.var.data(), &[1.0; 3]);
        let store = src.into_store();
        assert_eq!(store.len(), 4);
        assert_eq!(store.learnable_scalars(), 6);
    }
}
