use super::Tensor;
use crate::error::{Error, Result};

fn check(t: &Tensor, params: [&Tensor; 4], eps: f64) -> Result<(usize, usize, usize)> {
    if t.rank() < 2 {
        return Err(Error::shape(format!("batch norm needs (N, C, ..), got {:?}", t.shape())));
    }
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::config(format!("batch norm eps must be non-negative, got {eps}")));
    }
    let c = t.shape()[1];
    for (name, p) in ["gamma", "beta", "mean", "var"].iter().zip(params) {
        if p.shape() != [c] {
            return Err(Error::shape(format!(
                "batch norm {name} must have shape [{c}], got {:?}",
                p.shape()
            )));
        }
    }
    let n = t.shape()[0];
    let inner = t.len() / (n * c);
    Ok((n, c, inner))
}

/// Inference-mode batch normalization over axis 1 with fixed statistics:
/// `(t - mean) / sqrt(var + eps) * gamma + beta`.
pub fn batchnorm2d_infer(
    t: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let (n, c, inner) = check(t, [gamma, beta, mean, var], eps)?;
    let x = t.data();
    let mut out = Vec::with_capacity(t.len());
    for ni in 0..n {
        for ci in 0..c {
            let inv = 1.0 / (var.data()[ci] + eps).sqrt();
            let (g, b, m) = (gamma.data()[ci], beta.data()[ci], mean.data()[ci]);
            let base = (ni * c + ci) * inner;
            out.extend(x[base..base + inner].iter().map(|&v| (v - m) * inv * g + b));
        }
    }
    Ok(Tensor::from_parts(t.shape().to_vec(), out))
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub mean: Tensor,
    pub var: Tensor,
}

pub fn batchnorm2d_backward(
    t: &Tensor,
    gamma: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    eps: f64,
    grad_out: &Tensor,
) -> Result<BnGrads> {
    let (n, c, inner) = check(t, [gamma, gamma, mean, var], eps)?;
    if grad_out.shape() != t.shape() {
        return Err(Error::shape("batch norm gradient shape mismatch"));
    }
    let x = t.data();
    let go = grad_out.data();
    let mut gi = vec![0.0; t.len()];
    let mut gg = vec![0.0; c];
    let mut gb = vec![0.0; c];
    let mut gm = vec![0.0; c];
    let mut gv = vec![0.0; c];
    for ni in 0..n {
        for ci in 0..c {
            let denom = var.data()[ci] + eps;
            let inv = 1.0 / denom.sqrt();
            let (g, m) = (gamma.data()[ci], mean.data()[ci]);
            let base = (ni * c + ci) * inner;
            let (mut s_g, mut s_gx) = (0.0, 0.0);
            for k in base..base + inner {
                let d = go[k];
                gi[k] = d * g * inv;
                s_g += d;
                s_gx += d * (x[k] - m);
            }
            gb[ci] += s_g;
            gg[ci] += s_gx * inv;
            gm[ci] -= s_g * g * inv;
            gv[ci] -= 0.5 * s_gx * g * inv / denom;
        }
    }
    Ok(BnGrads {
        input: Tensor::from_parts(t.shape().to_vec(), gi),
        gamma: Tensor::from_parts(vec![c], gg),
        beta: Tensor::from_parts(vec![c], gb),
        mean: Tensor::from_parts(vec![c], gm),
        var: Tensor::from_parts(vec![c], gv),
    })
}
