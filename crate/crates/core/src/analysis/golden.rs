use serde::{Deserialize, Serialize};

use super::stats::{stats, StatReport};
use crate::attention::{AttentionConfig, Mechanism};
use crate::backbones::{build_preset, InsertionPolicy, NetworkSpec, Preset, SiteSelector};
use crate::error::{Error, Result};

/// The shipped transcription of the published parameter and FLOP columns.
pub const GOLDEN_JSON: &str = include_str!("../../data/golden.json");
pub const GOLDEN_FORMAT: &str = "attnforge-golden/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum GoldenStatus {
    /// Must match within tolerance.
    Asserted,
    /// Evaluated and reported; a mismatch is expected and not a failure.
    CalibrationPending,
    /// Outside what this crate builds; skipped.
    NotModeled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Tolerance {
    pub params: f64,
    pub flops: f64,
}

/// Attention description in a golden row; unset knobs take the mechanism's
/// and preset's defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct GoldenAttention {
    pub mechanism: Mechanism,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_pool: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<SiteSelector>,
}

impl GoldenAttention {
    pub fn resolve(&self, preset: Preset) -> (AttentionConfig, InsertionPolicy) {
        let r = self.reduction.unwrap_or(preset.default_reduction(self.mechanism));
        let mut cfg = AttentionConfig::for_mechanism(self.mechanism, r);
        if let Some(g) = self.groups {
            cfg.groups = g;
        }
        if let Some(on) = self.channel {
            cfg.channel = on;
        }
        if let Some(on) = self.spatial {
            cfg.spatial = on;
        }
        if let Some(on) = self.max_pool {
            cfg.max_pool = on;
        }
        let selector = self.policy.unwrap_or(preset.default_selector(self.mechanism));
        (cfg, InsertionPolicy::new(selector))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct GoldenTarget {
    pub id: String,
    pub table: u32,
    pub architecture: Preset,
    pub label: String,
    pub attention: Option<GoldenAttention>,
    pub params_m: f64,
    pub flops_g: f64,
    pub status: GoldenStatus,
    /// Overrides the file-wide tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<Tolerance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl GoldenTarget {
    pub fn build(&self) -> Result<NetworkSpec> {
        match &self.attention {
            Some(a) => {
                let (cfg, policy) = a.resolve(self.architecture);
                build_preset(self.architecture, Some(&cfg), &policy)
            }
            None => build_preset(self.architecture, None, &InsertionPolicy::none()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct GoldenFile {
    pub format: String,
    pub tolerance: Tolerance,
    pub targets: Vec<GoldenTarget>,
}

impl GoldenFile {
    pub fn shipped() -> Result<Self> {
        Self::from_json(GOLDEN_JSON)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: GoldenFile = serde_json::from_str(s)?;
        if file.format != GOLDEN_FORMAT {
            return Err(Error::Format(format!("golden file format `{}`, expected `{GOLDEN_FORMAT}`", file.format)));
        }
        for t in &file.targets {
            let tol = file.tolerance_of(t);
            if !(tol.params > 0.0 && tol.flops > 0.0) {
                return Err(Error::config(format!("golden target `{}` has a non-positive tolerance", t.id)));
            }
        }
        Ok(file)
    }

    pub fn tolerance_of(&self, t: &GoldenTarget) -> Tolerance {
        t.tolerance.unwrap_or(self.tolerance)
    }

    pub fn target(&self, id: &str) -> Result<&GoldenTarget> {
        self.targets.iter().find(|t| t.id == id).ok_or_else(|| Error::Unknown {
            kind: "golden target",
            name: id.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct GoldenComparison {
    pub id: String,
    pub label: String,
    pub status: GoldenStatus,
    pub ours_params_m: f64,
    pub published_params_m: f64,
    pub params_deviation: f64,
    pub ours_flops_g: f64,
    pub published_flops_g: f64,
    pub flops_deviation: f64,
    /// Both deviations within tolerance.
    pub within_tolerance: bool,
}

impl GoldenComparison {
    /// Only asserted rows can fail.
    pub fn failed(&self) -> bool {
        self.status == GoldenStatus::Asserted && !self.within_tolerance
    }

    pub fn verdict(&self) -> &'static str {
        match (self.status, self.within_tolerance) {
            (GoldenStatus::Asserted, true) => "pass",
            (GoldenStatus::Asserted, false) => "FAIL",
            (GoldenStatus::CalibrationPending, true) => "calibration pending (within tolerance)",
            (GoldenStatus::CalibrationPending, false) => "calibration pending (deviates)",
            (GoldenStatus::NotModeled, _) => "not modeled",
        }
    }
}

pub fn deviation(ours: f64, published: f64) -> f64 {
    (ours - published).abs() / published
}

/// Compares `report` with the target `id`.
pub fn compare_to_golden(report: &StatReport, file: &GoldenFile, id: &str) -> Result<GoldenComparison> {
    let t = file.target(id)?;
    let tol = file.tolerance_of(t);
    let (p, f) = (report.params_m(), report.flops_g());
    let (dp, df) = (deviation(p, t.params_m), deviation(f, t.flops_g));
    Ok(GoldenComparison {
        id: t.id.clone(),
        label: t.label.clone(),
        status: t.status,
        ours_params_m: p,
        published_params_m: t.params_m,
        params_deviation: dp,
        ours_flops_g: f,
        published_flops_g: t.flops_g,
        flops_deviation: df,
        within_tolerance: dp <= tol.params && df <= tol.flops,
    })
}

/// Builds and compares every modeled target, in file order.
pub fn evaluate_golden(file: &GoldenFile) -> Result<Vec<GoldenComparison>> {
    use rayon::prelude::*;
    file.targets
        .par_iter()
        .filter(|t| t.status != GoldenStatus::NotModeled)
        .map(|t| {
            let report = stats(&t.build()?)?;
            compare_to_golden(&report, file, &t.id)
        })
        .collect()
}

/// Aligned-column rendering of comparisons.
pub fn golden_table(rows: &[GoldenComparison]) -> String {
    use std::fmt::Write as _;
    let id_w = rows.iter().map(|r| r.id.len()).max().unwrap_or(2).max(2);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<id_w$}  {:>9}  {:>9}  {:>7}  {:>8}  {:>9}  {:>7}  verdict",
        "id", "params M", "published", "dev", "FLOPs G", "published", "dev"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<id_w$}  {:>9.2}  {:>9.2}  {:>6.2}%  {:>8.3}  {:>9.2}  {:>6.2}%  {}",
            r.id,
            r.ours_params_m,
            r.published_params_m,
            100.0 * r.params_deviation,
            r.ours_flops_g,
            r.published_flops_g,
            100.0 * r.flops_deviation,
            r.verdict()
        );
    }
    s
}
