use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::record;
use super::Differentiable;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Coordinates sampled per input (all of them when the input is smaller).
    pub samples: usize,
    /// Relative errors are taken against `max(|analytic|, |numeric|, rel_floor)`.
    pub rel_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-6,
            tol: 1e-5,
            samples: 50,
            rel_floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct InputCheck {
    pub index: usize,
    pub shape: Vec<usize>,
    pub checked: usize,
    /// Coordinates whose +-h probe crossed a ReLU or max-selection kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct GradCheckReport {
    pub op: String,
    pub shapes: Vec<Vec<usize>>,
    pub h: f64,
    pub tol: f64,
    pub rel_floor: f64,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub pass: bool,
    pub inputs: Vec<InputCheck>,
}

/// Compares reverse-mode gradients of `sum(f(inputs))` against central
/// differences on a deterministic sample of coordinates of every input.
pub fn grad_check<F: Differentiable + ?Sized>(
    f: &F,
    inputs: &[Tensor],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if cfg.h.is_nan() || cfg.h <= 0.0 {
        return Err(Error::config(format!("finite-difference step must be positive, got {}", cfg.h)));
    }
    let base = record(f, inputs)?;
    let out = base.output_value();
    if !out.is_finite() {
        return Err(Error::NonFiniteValue(format!("{}: forward output", f.name())));
    }
    let seed = Tensor::ones(out.shape().to_vec())?;
    let analytic = base.input_grads(&seed)?;
    let base_sig = base.tape.kink_signature();

    let mut checks = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = if input.len() <= cfg.samples {
            (0..input.len()).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
            let mut c = sample(&mut rng, input.len(), cfg.samples).into_vec();
            c.sort_unstable();
            c
        };
        let mut check = InputCheck {
            index: k,
            shape: input.shape().to_vec(),
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for &i in &coords {
            let probe = |delta: f64| -> Result<(Tensor, u64)> {
                let mut data = input.to_vec();
                data[i] += delta;
                let mut shifted = inputs.to_vec();
                shifted[k] = Tensor::new(input.shape().to_vec(), data)?;
                let rec = record(f, &shifted)?;
                Ok((rec.output_value().clone(), rec.tape.kink_signature()))
            };
            let (plus, sig_plus) = probe(cfg.h)?;
            let (minus, sig_minus) = probe(-cfg.h)?;
            if sig_plus != base_sig || sig_minus != base_sig {
                check.skipped += 1;
                continue;
            }
            // difference elementwise before reducing, to avoid cancellation in the sums
            let diff: f64 = plus.data().iter().zip(minus.data()).map(|(p, m)| p - m).sum();
            let numeric = diff / (2.0 * cfg.h);
            let exact = analytic[k].data()[i];
            if !numeric.is_finite() || !exact.is_finite() {
                return Err(Error::NonFiniteValue(format!(
                    "{}: gradient at input {k} coordinate {i} (analytic {exact}, numeric {numeric})",
                    f.name()
                )));
            }
            let abs = (exact - numeric).abs();
            let rel = abs / exact.abs().max(numeric.abs()).max(cfg.rel_floor);
            check.checked += 1;
            check.max_abs_err = check.max_abs_err.max(abs);
            check.max_rel_err = check.max_rel_err.max(rel);
        }
        checks.push(check);
    }
    let max_rel_err = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    let max_abs_err = checks.iter().map(|c| c.max_abs_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        op: f.name(),
        shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
        h: cfg.h,
        tol: cfg.tol,
        rel_floor: cfg.rel_floor,
        max_rel_err,
        max_abs_err,
        pass: max_rel_err <= cfg.tol,
        inputs: checks,
    })
}
