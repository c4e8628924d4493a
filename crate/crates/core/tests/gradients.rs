mod common;

use attnforge_core::autodiff::Ops;
use attnforge_core::tensor::{Conv2dParams, Pool2d};
use attnforge_core::{grad_check, Differentiable, GradCheckConfig, Tensor};
use common::suites::gradient_suite;

#[test]
fn every_attention_variant_passes_on_three_shapes() {
    let reports = gradient_suite();
    assert_eq!(reports.len(), 30);
    for (v, r) in &reports {
        assert!(r.pass, "{v} on {:?}: max rel err {:e}", r.shapes[0], r.max_rel_err);
        assert!(r.max_rel_err <= 1e-5);
    }
}

/// Single operations composed with a fixed nonlinearity, so every input
/// gradient is non-trivial.
enum Probe {
    Conv(Conv2dParams),
    MaxPool(Pool2d),
    AvgPool(Pool2d),
    Shuffle(usize),
    Upsample(usize, usize),
    ChannelStats,
    Matmul,
}

impl Differentiable for Probe {
    fn name(&self) -> String {
        match self {
            Probe::Conv(_) => "conv".into(),
            Probe::MaxPool(_) => "max_pool".into(),
            Probe::AvgPool(_) => "avg_pool".into(),
            Probe::Shuffle(_) => "shuffle".into(),
            Probe::Upsample(..) => "upsample".into(),
            Probe::ChannelStats => "channel_stats".into(),
            Probe::Matmul => "matmul".into(),
        }
    }

    fn eval<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> attnforge_core::Result<O::Value> {
        let x = &inputs[0];
        let y = match self {
            Probe::Conv(p) => ops.conv2d(x, &inputs[1], Some(&inputs[2]), p)?,
            Probe::MaxPool(p) => ops.max_pool2d(x, p)?,
            Probe::AvgPool(p) => ops.avg_pool2d(x, p)?,
            Probe::Shuffle(g) => ops.channel_shuffle(x, *g)?,
            Probe::Upsample(h, w) => ops.upsample_nearest(x, *h, *w)?,
            Probe::ChannelStats => {
                let mean = ops.channel_mean(x)?;
                let max = ops.channel_max(x)?;
                ops.concat(&[&max, &mean], 1)?
            }
            Probe::Matmul => ops.matmul(x, &inputs[1])?,
        };
        let s = ops.sigmoid(&y)?;
        ops.mul(&s, &y)
    }
}

fn check(probe: Probe, inputs: Vec<Tensor>) {
    let r = grad_check(&probe, &inputs, &GradCheckConfig::default()).unwrap();
    assert!(r.pass, "{}: max rel err {:e}", r.op, r.max_rel_err);
}

#[test]
fn convolution_gradients_with_stride_dilation_and_groups() {
    let mut r = common::rng(1);
    let p = Conv2dParams::default().stride(2).padding(1).dilation(2).groups(2);
    check(
        Probe::Conv(p),
        vec![
            common::random(&[2, 4, 7, 6], &mut r),
            common::random(&[6, 2, 3, 3], &mut r),
            common::random(&[6], &mut r),
        ],
    );
}

#[test]
fn pooling_and_reshaping_gradients() {
    let mut r = common::rng(2);
    check(Probe::MaxPool(Pool2d::new(2, 2, 0).ceil_mode(true)), vec![common::random(&[1, 3, 5, 5], &mut r)]);
    check(Probe::AvgPool(Pool2d::new(3, 2, 1)), vec![common::random(&[2, 2, 6, 5], &mut r)]);
    check(Probe::Shuffle(3), vec![common::random(&[1, 6, 3, 2], &mut r)]);
    check(Probe::Upsample(5, 7), vec![common::random(&[1, 2, 3, 4], &mut r)]);
    check(Probe::ChannelStats, vec![common::random(&[2, 5, 3, 3], &mut r)]);
    check(Probe::Matmul, vec![common::random(&[3, 4, 5], &mut r), common::random(&[5, 2], &mut r)]);
}
