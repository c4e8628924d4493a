//! Seeded suites shared by the ordinary tests and the acceptance harness.

use attnforge_core::attention::suite::{check_case, Variant, CHECK_SHAPES};
use attnforge_core::tensor::{self, Conv2dParams, Pool2d};
use attnforge_core::{GradCheckConfig, GradCheckReport, Tensor};
use rand::Rng;

use super::*;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub kernel: &'static str,
    pub cases: usize,
    pub max_err: f64,
}

fn pick(rng: &mut rand_chacha::ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

pub fn conv_cases(cases: usize, seed: u64) -> OracleResult {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let groups = pick(&mut r, 1, 3);
        let cin = groups * pick(&mut r, 1, 3);
        let cout = groups * pick(&mut r, 1, 3);
        let k = pick(&mut r, 1, 3);
        let dilation = pick(&mut r, 1, 2);
        let stride = pick(&mut r, 1, 3);
        let padding = pick(&mut r, 0, 2);
        let span = dilation * (k - 1) + 1;
        let min_extent = span.saturating_sub(2 * padding).max(1);
        let h = pick(&mut r, min_extent.min(9), 9);
        let w = pick(&mut r, min_extent.min(9), 9);
        let n = pick(&mut r, 1, 2);
        let x = random(&[n, cin, h, w], &mut r);
        let wt = random(&[cout, cin / groups, k, k], &mut r);
        let bias = r.random_bool(0.5).then(|| random(&[cout], &mut r));
        let p = Conv2dParams::default()
            .stride(stride)
            .padding(padding)
            .dilation(dilation)
            .groups(groups);
        let ours = tensor::conv2d(&x, &wt, bias.as_ref(), &p).unwrap();
        let oracle = conv2d(
            &x,
            &wt,
            bias.as_ref(),
            ConvGeom {
                stride,
                padding,
                dilation,
                groups,
            },
        );
        assert_eq!(ours.shape(), oracle.shape());
        worst = worst.max(max_abs(ours.data(), oracle.data()));
    }
    OracleResult {
        kernel: "conv2d",
        cases,
        max_err: worst,
    }
}

pub fn matmul_cases(cases: usize, seed: u64) -> OracleResult {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (m, k, n) = (pick(&mut r, 1, 9), pick(&mut r, 1, 9), pick(&mut r, 1, 9));
        let a = random(&[m, k], &mut r);
        let b = random(&[k, n], &mut r);
        let ours = a.matmul(&b).unwrap();
        worst = worst.max(max_abs(ours.data(), matmul(&a, &b).data()));
    }
    OracleResult {
        kernel: "matmul",
        cases,
        max_err: worst,
    }
}

pub fn pool_cases(cases: usize, seed: u64, max: bool) -> OracleResult {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let kernel = pick(&mut r, 1, 4);
        let stride = pick(&mut r, 1, 3);
        let padding = pick(&mut r, 0, kernel / 2);
        let ceil = r.random_bool(0.5);
        let h = pick(&mut r, kernel, 9);
        let w = pick(&mut r, kernel, 9);
        let x = random(&[pick(&mut r, 1, 2), pick(&mut r, 1, 3), h, w], &mut r);
        let p = Pool2d::new(kernel, stride, padding).ceil_mode(ceil);
        let ours = if max {
            tensor::max_pool2d(&x, &p).unwrap()
        } else {
            tensor::avg_pool2d(&x, &p).unwrap()
        };
        let oracle = pool2d(
            &x,
            PoolGeom {
                kernel,
                stride,
                padding,
                ceil,
            },
            max,
        );
        assert_eq!(ours.shape(), oracle.shape(), "k{kernel} s{stride} p{padding} ceil {ceil} on {h}x{w}");
        worst = worst.max(max_abs(ours.data(), oracle.data()));
    }
    OracleResult {
        kernel: if max { "max_pool2d" } else { "avg_pool2d" },
        cases,
        max_err: worst,
    }
}

pub fn bn_cases(cases: usize, seed: u64) -> OracleResult {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let c = pick(&mut r, 1, 9);
        let x = random(&[pick(&mut r, 1, 3), c, pick(&mut r, 1, 9), pick(&mut r, 1, 9)], &mut r);
        let gamma: Vec<f64> = (0..c).map(|_| r.random_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
        let mean: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
        let var: Vec<f64> = (0..c).map(|_| r.random_range(0.1..2.0)).collect();
        let eps = 1e-5;
        let t = |v: &Vec<f64>| Tensor::new(vec![c], v.clone()).unwrap();
        let ours = tensor::batchnorm2d_infer(&x, &t(&gamma), &t(&beta), &t(&mean), &t(&var), eps).unwrap();
        worst = worst.max(max_abs(ours.data(), batch_norm(&x, &gamma, &beta, &mean, &var, eps).data()));
    }
    OracleResult {
        kernel: "batch_norm",
        cases,
        max_err: worst,
    }
}

pub fn shuffle_cases(cases: usize, seed: u64) -> OracleResult {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let groups = pick(&mut r, 1, 4);
        let c = groups * pick(&mut r, 1, 4);
        let x = random(&[pick(&mut r, 1, 2), c, pick(&mut r, 1, 9), pick(&mut r, 1, 9)], &mut r);
        let ours = tensor::channel_shuffle(&x, groups).unwrap();
        worst = worst.max(max_abs(ours.data(), shuffle(&x, groups).data()));
    }
    OracleResult {
        kernel: "channel_shuffle",
        cases,
        max_err: worst,
    }
}

pub fn kernel_oracle_suite(cases: usize) -> Vec<OracleResult> {
    vec![
        conv_cases(cases, 1),
        matmul_cases(cases, 2),
        pool_cases(cases, 3, true),
        pool_cases(cases, 4, false),
        bn_cases(cases, 5),
        shuffle_cases(cases, 6),
    ]
}

/// Every attention variant on every check shape with the default checker
/// settings (h = 1e-6, tol = 1e-5).
pub fn gradient_suite() -> Vec<(Variant, GradCheckReport)> {
    let gc = GradCheckConfig::default();
    let mut out = Vec::new();
    for v in Variant::ALL {
        let cfg = v.config(2, 2);
        for (i, shape) in CHECK_SHAPES.iter().enumerate() {
            let report = check_case(&cfg, *shape, 100 + i as u64, &gc).unwrap();
            out.push((v, report));
        }
    }
    out
}
