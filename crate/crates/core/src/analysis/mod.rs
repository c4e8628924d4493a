//! Parameter and FLOP accounting, comparison with published totals, and the
//! placement calibration search.

mod calibrate;
mod cost;
mod golden;
mod stats;

pub use calibrate::{
    calibrate_placement, golden_calibration_targets, Calibration, CalibrationTarget, Candidate, CandidateResult, GamVariant,
    SearchSpace, TargetEval,
};
pub use cost::{CostOps, ShapeSource};
pub use golden::{
    compare_to_golden, deviation, evaluate_golden, golden_table, GoldenAttention, GoldenComparison, GoldenFile, GoldenStatus,
    GoldenTarget, Tolerance, GOLDEN_FORMAT, GOLDEN_JSON,
};
pub use stats::{count_flops, count_params, shape_str, stats, StatReport, StatRow, CONVENTION};
