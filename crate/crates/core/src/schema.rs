//! JSON schemas of every document the crate reads or writes, keyed by the
//! file stem they are published under in `schemas/`.

use schemars::{schema_for, Schema};

use crate::analysis::{Calibration, GoldenComparison, GoldenFile, StatReport};
use crate::backbones::NetworkSpec;
use crate::params::Manifest;
use crate::GradCheckReport;

pub fn document_schemas() -> Vec<(&'static str, Schema)> {
    vec![
        ("stat_report", schema_for!(StatReport)),
        ("gradcheck_reports", schema_for!(Vec<GradCheckReport>)),
        ("network_spec", schema_for!(NetworkSpec)),
        ("golden_comparisons", schema_for!(Vec<GoldenComparison>)),
        ("golden_file", schema_for!(GoldenFile)),
        ("calibration", schema_for!(Calibration)),
        ("weight_manifest", schema_for!(Manifest)),
    ]
}
