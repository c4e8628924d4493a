//! Structural properties of the attention modules. Each check returns a
//! description of the first violation.

use attnforge_core::attention::suite::build_case;
use attnforge_core::attention::{self, cbam, gam, se, AttentionWeights};
use attnforge_core::params::StoreSource;
use attnforge_core::tensor::{self, Conv2dParams};
use attnforge_core::{AttentionConfig, Eager, Tensor};
use rand::seq::SliceRandom;

use super::*;

pub type Check = std::result::Result<(), String>;

/// Seeded module weights and input for `cfg` at `shape`.
pub fn module(cfg: &AttentionConfig, shape: [usize; 4], seed: u64) -> (Tensor, AttentionWeights<Tensor>) {
    let case = build_case(cfg, shape, seed).unwrap();
    let w = attention::declare(&mut Eager, &mut StoreSource::new(&case.store), "m", shape[1], cfg).unwrap();
    (case.inputs[0].clone(), w)
}

/// `|out| <= bound * |in|` elementwise.
pub fn gating_bound(cfg: &AttentionConfig, shape: [usize; 4], seed: u64, bound: f64) -> Check {
    let (x, w) = module(cfg, shape, seed);
    let y = attention::forward(&mut Eager, &x, &w, cfg).map_err(|e| e.to_string())?;
    for (i, (a, b)) in x.data().iter().zip(y.data()).enumerate() {
        if b.abs() > bound * a.abs() {
            return Err(format!("{}: |out[{i}]| = {} exceeds {bound} * {}", cfg.label(), b.abs(), a.abs()));
        }
    }
    Ok(())
}

/// Reorders the H*W positions of every (n, c) plane by `perm`.
pub fn permute_positions(x: &Tensor, perm: &[usize]) -> Tensor {
    let hw = perm.len();
    let data: Vec<f64> = x
        .data()
        .chunks(hw)
        .flat_map(|plane| perm.iter().map(move |&p| plane[p]))
        .collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

/// The channel submodule acts position by position, so it commutes with
/// any reordering of spatial positions, bit for bit.
pub fn gam_channel_equivariance(shape: [usize; 4], reduction: usize, seed: u64) -> Check {
    let cfg = AttentionConfig::gam(reduction);
    let (x, w) = module(&cfg, shape, seed);
    let AttentionWeights::Gam(w) = w else { unreachable!() };
    let cw = w.channel.expect("channel submodule");
    let mut perm: Vec<usize> = (0..shape[2] * shape[3]).collect();
    perm.shuffle(&mut rng(seed ^ 0xabc));
    let (_, direct) = gam::channel_forward(&mut Eager, &permute_positions(&x, &perm), &cw).unwrap();
    let (_, reference) = gam::channel_forward(&mut Eager, &x, &cw).unwrap();
    let moved = permute_positions(&reference, &perm);
    if direct.data() == moved.data() {
        Ok(())
    } else {
        Err(format!("max difference {}", max_abs(direct.data(), moved.data())))
    }
}

/// Largest per-(n, c) spread of `t` over H and W.
fn spatial_spread(t: &Tensor) -> f64 {
    let (_, _, h, w) = t.dims4().unwrap();
    t.data()
        .chunks(h * w)
        .map(|p| {
            let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// Largest per-(n, h, w) spread of `t` over channels.
fn channel_spread(t: &Tensor) -> f64 {
    let (n, c, h, w) = t.dims4().unwrap();
    let mut worst = 0.0f64;
    for ni in 0..n {
        for i in 0..h {
            for j in 0..w {
                let vals: Vec<f64> = (0..c).map(|ci| t.at(&[ni, ci, i, j])).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                worst = worst.max(hi - lo);
            }
        }
    }
    worst
}

/// SE gates one value per channel: broadcast over the feature map it has
/// zero spread across positions, and the module output is exactly `x * gate`.
pub fn se_gate_spatially_constant(shape: [usize; 4], reduction: usize, seed: u64) -> Check {
    let cfg = AttentionConfig::se(reduction);
    let (x, w) = module(&cfg, shape, seed);
    let AttentionWeights::Se(w) = w else { unreachable!() };
    let g = se::gate(&mut Eager, &x, &w).unwrap();
    let full = Tensor::ones(shape.to_vec()).unwrap().mul(&g).unwrap();
    let spread = spatial_spread(&full);
    if spread != 0.0 {
        return Err(format!("gate varies by {spread} over positions"));
    }
    let y = se::forward(&mut Eager, &x, &w).unwrap();
    if y.data() != x.mul(&full).unwrap().data() {
        return Err("output differs from x * gate".into());
    }
    Ok(())
}

/// CBAM's spatial gate is one map shared by all channels.
pub fn cbam_gate_channel_constant(shape: [usize; 4], reduction: usize, max_pool: bool, seed: u64) -> Check {
    let cfg = AttentionConfig::cbam(reduction).with_max_pool(max_pool);
    let (x, w) = module(&cfg, shape, seed);
    let AttentionWeights::Cbam(w) = w else { unreachable!() };
    let (conv, bn) = w.spatial.as_ref().expect("spatial submodule");
    let g = cbam::spatial_gate(&mut Eager, &x, conv, bn, &cfg).unwrap();
    if g.shape() != [shape[0], 1, shape[2], shape[3]] {
        return Err(format!("gate shape {:?}", g.shape()));
    }
    let full = Tensor::ones(shape.to_vec()).unwrap().mul(&g).unwrap();
    let spread = channel_spread(&full);
    if spread != 0.0 {
        return Err(format!("gate varies by {spread} over channels"));
    }
    Ok(())
}

/// Shuffling permutes values, matches the loop oracle, and shuffling by
/// `C/g` undoes shuffling by `g`.
pub fn shuffle_bijective(shape: [usize; 4], groups: usize, seed: u64) -> Check {
    let x = random(&shape, &mut rng(seed));
    let y = tensor::channel_shuffle(&x, groups).map_err(|e| e.to_string())?;
    let sorted = |t: &Tensor| {
        let mut v = t.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    if sorted(&x) != sorted(&y) {
        return Err("not a permutation of the input".into());
    }
    if y.data() != shuffle(&x, groups).data() {
        return Err("disagrees with the loop oracle".into());
    }
    let back = tensor::channel_shuffle(&y, shape[1] / groups).unwrap();
    if back.data() != x.data() {
        return Err("inverse shuffle does not restore the input".into());
    }
    Ok(())
}

/// Grouped convolution against a dense convolution with a block-diagonal
/// weight; returns the largest difference.
pub fn group_conv_vs_masked_dense(shape: [usize; 4], out_per_group: usize, groups: usize, kernel: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random(&shape, &mut r);
    let w = random(&[out_per_group * groups, shape[1] / groups, kernel, kernel], &mut r);
    let p = Conv2dParams::default().padding(kernel / 2);
    let grouped = tensor::conv2d(&x, &w, None, &p.groups(groups)).unwrap();
    let dense = tensor::conv2d(&x, &masked_dense_weight(&w, groups), None, &p).unwrap();
    max_abs(grouped.data(), dense.data())
}
