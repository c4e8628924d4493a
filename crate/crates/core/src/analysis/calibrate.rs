//! Exhaustive search over GAM reduction ratio, group count and placement
//! against published totals.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::golden::{deviation, GoldenFile, GoldenStatus};
use super::stats::stats;
use crate::attention::{AttentionConfig, Mechanism};
use crate::backbones::{build_preset, InsertionPolicy, Preset, SiteSelector};
use crate::error::{Error, Result};

/// Which GAM variant a target row describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum GamVariant {
    Full,
    SpatialOnly,
    ChannelOnly,
    /// Grouped spatial convolutions; the only variant that uses the
    /// candidate's group count.
    Grouped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct CalibrationTarget {
    pub id: String,
    pub variant: GamVariant,
    pub params_m: Option<f64>,
    pub flops_g: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct SearchSpace {
    pub reductions: Vec<usize>,
    pub groups: Vec<usize>,
    pub selectors: Vec<SiteSelector>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            reductions: vec![2, 4, 8, 16],
            groups: vec![1, 4],
            selectors: SiteSelector::SEARCHABLE.to_vec(),
        }
    }
}

impl SearchSpace {
    pub fn candidates(&self) -> Vec<Candidate> {
        let mut out = Vec::new();
        for &reduction in &self.reductions {
            for &groups in &self.groups {
                for &selector in &self.selectors {
                    out.push(Candidate {
                        reduction,
                        groups,
                        selector,
                    });
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

/// One point of the search space. Orders lexicographically by
/// `(reduction, groups, selector)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Candidate {
    pub reduction: usize,
    pub groups: usize,
    pub selector: SiteSelector,
}

impl Candidate {
    pub fn config(&self, variant: GamVariant) -> AttentionConfig {
        let base = AttentionConfig::gam(self.reduction);
        match variant {
            GamVariant::Full => base,
            GamVariant::SpatialOnly => base.spatial_only(),
            GamVariant::ChannelOnly => base.channel_only(),
            GamVariant::Grouped => base.with_groups(self.groups),
        }
    }

    pub fn label(&self) -> String {
        format!("r={}, g={}, {}", self.reduction, self.groups, self.selector)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct TargetEval {
    pub id: String,
    pub params_m: f64,
    pub flops_g: f64,
    pub params_deviation: Option<f64>,
    pub flops_deviation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct CandidateResult {
    pub candidate: Candidate,
    pub evaluations: Vec<TargetEval>,
    /// Largest relative deviation over all targets and metrics; `None` when
    /// the candidate cannot be built.
    pub max_deviation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Calibration {
    pub architecture: Preset,
    pub targets: Vec<CalibrationTarget>,
    /// Best first.
    pub ranked: Vec<CandidateResult>,
}

impl Calibration {
    pub fn best(&self) -> &CandidateResult {
        &self.ranked[0]
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# GAM placement calibration: {}\n", self.architecture);
        let _ = writeln!(s, "Targets:\n");
        for t in &self.targets {
            let fmt = |v: Option<f64>, unit: &str| v.map(|v| format!("{v}{unit}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "- `{}` ({:?}): {} params, {} FLOPs",
                t.id,
                t.variant,
                fmt(t.params_m, "M"),
                fmt(t.flops_g, "G")
            );
        }
        let best = self.best();
        let _ = writeln!(
            s,
            "\nBest: **{}** with max deviation {}.\n",
            best.candidate.label(),
            pct(best.max_deviation)
        );
        let _ = writeln!(s, "| rank | r | g | placement | max deviation | per target |");
        let _ = writeln!(s, "|---:|---:|---:|---|---:|---|");
        for (i, c) in self.ranked.iter().enumerate() {
            let detail = match &c.error {
                Some(e) => format!("invalid: {e}"),
                None => c
                    .evaluations
                    .iter()
                    .map(|e| format!("{} {:.2}M/{:.2}G", e.id, e.params_m, e.flops_g))
                    .collect::<Vec<_>>()
                    .join("; "),
            };
            let dev = pct(c.max_deviation);
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                i + 1,
                c.candidate.reduction,
                c.candidate.groups,
                c.candidate.selector,
                dev,
                detail
            );
        }
        s
    }
}

/// GAM rows of the golden file for `preset` from the benchmark tables,
/// excluding the pooling ablation.
pub fn golden_calibration_targets(file: &GoldenFile, preset: Preset) -> Vec<CalibrationTarget> {
    file.targets
        .iter()
        .filter(|t| t.architecture == preset && t.table <= 3 && t.status != GoldenStatus::NotModeled)
        .filter_map(|t| {
            let a = t.attention.as_ref()?;
            if a.mechanism != Mechanism::Gam {
                return None;
            }
            let variant = match (a.channel, a.spatial, a.groups) {
                (_, _, Some(g)) if g > 1 => GamVariant::Grouped,
                (Some(false), _, _) => GamVariant::SpatialOnly,
                (_, Some(false), _) => GamVariant::ChannelOnly,
                _ => GamVariant::Full,
            };
            Some(CalibrationTarget {
                id: t.id.clone(),
                variant,
                params_m: Some(t.params_m),
                flops_g: Some(t.flops_g),
            })
        })
        .fold(Vec::new(), |mut acc, t| {
            // later tables repeat earlier rows
            if !acc.iter().any(|a: &CalibrationTarget| a.variant == t.variant && a.params_m == t.params_m) {
                acc.push(t);
            }
            acc
        })
}

fn pct(v: Option<f64>) -> String {
    v.map(|d| format!("{:.2}%", 100.0 * d)).unwrap_or_else(|| "n/a".to_string())
}

fn evaluate(preset: Preset, c: Candidate, targets: &[CalibrationTarget]) -> CandidateResult {
    let mut evaluations = Vec::with_capacity(targets.len());
    let mut worst = 0.0f64;
    for t in targets {
        let cfg = c.config(t.variant);
        let report = build_preset(preset, Some(&cfg), &InsertionPolicy::new(c.selector)).and_then(|spec| stats(&spec));
        let report = match report {
            Ok(r) => r,
            Err(e) => {
                return CandidateResult {
                    candidate: c,
                    evaluations,
                    max_deviation: None,
                    error: Some(format!("{}: {e}", t.id)),
                }
            }
        };
        let (p, f) = (report.params_m(), report.flops_g());
        let dp = t.params_m.map(|v| deviation(p, v));
        let df = t.flops_g.map(|v| deviation(f, v));
        worst = worst.max(dp.unwrap_or(0.0)).max(df.unwrap_or(0.0));
        evaluations.push(TargetEval {
            id: t.id.clone(),
            params_m: p,
            flops_g: f,
            params_deviation: dp,
            flops_deviation: df,
        });
    }
    CandidateResult {
        candidate: c,
        evaluations,
        max_deviation: Some(worst),
        error: None,
    }
}

/// Evaluates every candidate against every target and ranks by maximum
/// relative deviation, ties broken by candidate order.
pub fn calibrate_placement(preset: Preset, targets: &[CalibrationTarget], space: &SearchSpace) -> Result<Calibration> {
    let candidates = space.candidates();
    if candidates.is_empty() {
        return Err(Error::config("empty calibration search space"));
    }
    if targets.is_empty() {
        return Err(Error::config("no calibration targets"));
    }
    let mut ranked: Vec<CandidateResult> = candidates.par_iter().map(|&c| evaluate(preset, c, targets)).collect();
    ranked.sort_by(|a, b| {
        let key = |c: &CandidateResult| c.max_deviation.unwrap_or(f64::INFINITY);
        key(a)
            .partial_cmp(&key(b))
            .unwrap_or(Ordering::Equal)
            .then(a.candidate.cmp(&b.candidate))
    });
    Ok(Calibration {
        architecture: preset,
        targets: targets.to_vec(),
        ranked,
    })
}
