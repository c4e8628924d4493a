use std::path::Path;

use anyhow::{bail, Context, Result};
use attnforge_core::analysis::{
    calibrate_placement, compare_to_golden, count_flops, evaluate_golden, golden_calibration_targets, golden_table,
    GoldenComparison, GoldenFile, GoldenStatus, SearchSpace,
};
use attnforge_core::attention::suite::{build_case, Variant, CHECK_SHAPES};
use attnforge_core::backbones::{forward as net_forward, init_weights, Preset, SiteSelector};
use attnforge_core::params::Manifest;
use attnforge_core::tensor::write_gtf1_file;
use attnforge_core::{grad_check, AttentionConfig, GradCheckConfig, GradCheckReport, InitScheme, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::{shape_arg, AttKind, AttentionArgs, Format, NetArgs, OutArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_ASSERT: u8 = 3;

/// Largest input (or parameter) tensor accepted by the gradient checker.
pub const GRADCHECK_MAX_ELEMENTS: usize = 10_000;

/// Honours `ATTNFORGE_THREADS`.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ATTNFORGE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("ATTNFORGE_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

pub fn build(net: &NetArgs, out: Option<&Path>, weights: Option<&Path>, seed: u64, init: &str) -> Result<u8> {
    let scheme: InitScheme = init.parse()?;
    let spec = net.build()?;
    let json = spec.to_json()?;
    match out {
        Some(p) => std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    if let Some(dir) = weights {
        let network = init_weights(&spec, seed, scheme)?;
        let mut manifest = Manifest::new();
        manifest.architecture = Some(spec.name.clone());
        manifest.seed = Some(seed);
        let manifest = network.weights.save(dir, manifest)?;
        eprintln!(
            "wrote {} tensors ({} learnable scalars) to {}",
            manifest.tensors.len(),
            manifest.learnable_scalars(),
            dir.display()
        );
    }
    Ok(EXIT_OK)
}

pub fn stats(net: &NetArgs, out: &OutArgs, all_rows: bool, assert_golden: Option<&str>) -> Result<u8> {
    let spec = net.build()?;
    let input = net.input_shape()?;
    let report = count_flops(&spec, &input)?;
    let text = match out.format {
        Format::Json => report.to_json()? + "\n",
        Format::Csv => report.to_csv(),
        Format::Text => report.to_text(all_rows),
    };
    out.emit(&text)?;
    let Some(id) = assert_golden else {
        return Ok(EXIT_OK);
    };
    let file = GoldenFile::shipped()?;
    let id = if id.is_empty() {
        let reference = net.build_default_input()?;
        file.targets
            .iter()
            .filter(|t| t.status != GoldenStatus::NotModeled)
            .find(|t| t.build().map(|s| s.nodes == reference.nodes).unwrap_or(false))
            .map(|t| t.id.clone())
            .context("no golden row describes this network; pass a row id to --assert-golden")?
    } else {
        id.to_string()
    };
    let cmp = compare_to_golden(&report, &file, &id)?;
    eprint!("{}", golden_table(std::slice::from_ref(&cmp)));
    Ok(if cmp.within_tolerance { EXIT_OK } else { EXIT_ASSERT })
}

pub fn golden(path: Option<&Path>, table: Option<u32>, out: &OutArgs) -> Result<u8> {
    let mut file = match path {
        Some(p) => GoldenFile::from_json(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => GoldenFile::shipped()?,
    };
    if let Some(t) = table {
        file.targets.retain(|row| row.table == t);
        if file.targets.is_empty() {
            bail!("no golden rows for table {t}");
        }
    }
    let rows = evaluate_golden(&file)?;
    let skipped: Vec<&str> = file
        .targets
        .iter()
        .filter(|t| t.status == GoldenStatus::NotModeled)
        .map(|t| t.id.as_str())
        .collect();
    let text = match out.format {
        Format::Json => serde_json::to_string_pretty(&rows)? + "\n",
        Format::Csv => golden_csv(&rows),
        Format::Text => {
            let mut s = golden_table(&rows);
            if !skipped.is_empty() {
                s += &format!("not modeled: {}\n", skipped.join(", "));
            }
            s
        }
    };
    out.emit(&text)?;
    let failed = rows.iter().filter(|r| r.failed()).count();
    if failed > 0 {
        eprintln!("{failed} asserted golden row(s) outside tolerance");
        return Ok(EXIT_ASSERT);
    }
    Ok(EXIT_OK)
}

fn golden_csv(rows: &[GoldenComparison]) -> String {
    let mut s = String::from("id,status,ours_params_m,published_params_m,params_deviation,ours_flops_g,published_flops_g,flops_deviation,verdict\n");
    for r in rows {
        s += &format!(
            "{},{:?},{},{},{},{},{},{},{}\n",
            r.id,
            r.status,
            r.ours_params_m,
            r.published_params_m,
            r.params_deviation,
            r.ours_flops_g,
            r.published_flops_g,
            r.flops_deviation,
            r.verdict()
        );
    }
    s
}

pub fn calibrate(
    arch: &str,
    r: Vec<usize>,
    g: Vec<usize>,
    placement: Vec<SiteSelector>,
    out: Option<&Path>,
    json: Option<&Path>,
) -> Result<u8> {
    let preset: Preset = arch.parse()?;
    let file = GoldenFile::shipped()?;
    let targets = golden_calibration_targets(&file, preset);
    let space = SearchSpace {
        reductions: r,
        groups: g,
        selectors: if placement.is_empty() {
            SiteSelector::SEARCHABLE.to_vec()
        } else {
            placement
        },
    };
    let cal = calibrate_placement(preset, &targets, &space)?;
    let md = cal.to_markdown();
    match out {
        Some(p) => std::fs::write(p, &md).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{md}"),
    }
    if let Some(p) = json {
        std::fs::write(p, serde_json::to_string_pretty(&cal)? + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
pub fn gradcheck(
    module: AttKind,
    all: bool,
    shape: Option<Vec<usize>>,
    knobs: &AttentionArgs,
    seed: u64,
    h: f64,
    tol: f64,
    samples: usize,
    out: &OutArgs,
) -> Result<u8> {
    let shapes: Vec<[usize; 4]> = match shape {
        Some(s) => {
            let arr: [usize; 4] = s
                .as_slice()
                .try_into()
                .map_err(|_| anyhow::anyhow!("gradcheck shape must be NxCxHxW, got {}", shape_arg(&s)))?;
            vec![arr]
        }
        None => CHECK_SHAPES.to_vec(),
    };
    for s in &shapes {
        let n: usize = s.iter().product();
        if n > GRADCHECK_MAX_ELEMENTS {
            bail!(
                "shape {} has {n} elements; finite differences are limited to {GRADCHECK_MAX_ELEMENTS} per input",
                shape_arg(s)
            );
        }
    }
    let configs: Vec<AttentionConfig> = if all {
        let r = knobs.r.unwrap_or(2);
        let g = knobs.g.unwrap_or(2);
        Variant::ALL.iter().map(|v| v.config(r, g)).collect()
    } else {
        let m = module.mechanism().context("--module none has nothing to check")?;
        vec![knobs.apply(AttentionConfig::for_mechanism(m, knobs.r.unwrap_or(2)))]
    };
    let gc = GradCheckConfig {
        h,
        tol,
        samples,
        seed,
        ..GradCheckConfig::default()
    };
    let mut reports: Vec<GradCheckReport> = Vec::new();
    for cfg in &configs {
        for (i, s) in shapes.iter().enumerate() {
            cfg.validate(s[1])?;
            let case = build_case(cfg, *s, seed.wrapping_add(i as u64))?;
            if let Some(big) = case.inputs.iter().find(|t| t.len() > GRADCHECK_MAX_ELEMENTS) {
                bail!(
                    "a parameter of {} has shape {}; finite differences are limited to {GRADCHECK_MAX_ELEMENTS} elements per input",
                    cfg.label(),
                    shape_arg(big.shape())
                );
            }
            reports.push(grad_check(&case.func, &case.inputs, &gc)?);
        }
    }
    let text = match out.format {
        Format::Json => serde_json::to_string_pretty(&reports)? + "\n",
        Format::Csv => {
            let mut s = String::from("op,shape,max_rel_err,max_abs_err,checked,skipped,pass\n");
            for r in &reports {
                s += &format!(
                    "{},{},{:e},{:e},{},{},{}\n",
                    r.op,
                    shape_arg(&r.shapes[0]),
                    r.max_rel_err,
                    r.max_abs_err,
                    r.inputs.iter().map(|i| i.checked).sum::<usize>(),
                    r.inputs.iter().map(|i| i.skipped).sum::<usize>(),
                    r.pass
                );
            }
            s
        }
        Format::Text => {
            let mut s = String::new();
            for r in &reports {
                s += &format!(
                    "{:<5} {:<22} {:<10} max_rel_err {:.3e}  max_abs_err {:.3e}  checked {:>4}  skipped {}\n",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.op,
                    shape_arg(&r.shapes[0]),
                    r.max_rel_err,
                    r.max_abs_err,
                    r.inputs.iter().map(|i| i.checked).sum::<usize>(),
                    r.inputs.iter().map(|i| i.skipped).sum::<usize>()
                );
            }
            s
        }
    };
    out.emit(&text)?;
    Ok(if reports.iter().all(|r| r.pass) { EXIT_OK } else { EXIT_ASSERT })
}

/// Seed offset separating the input stream from the weight stream.
const INPUT_STREAM: u64 = 0x5eed_0000_0000_0001;

pub fn forward(net: &NetArgs, seed: u64, init: &str, out: Option<&Path>) -> Result<u8> {
    let spec = net.build()?;
    let input_shape = net.input_shape()?;
    let scheme: InitScheme = init.parse()?;
    let network = init_weights(&spec, seed, scheme)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INPUT_STREAM);
    let x = Tensor::randn(input_shape, 1.0, &mut rng)?;
    let y = net_forward(&network, &x)?;
    if let Some(p) = out {
        write_gtf1_file(&y, p)?;
    }
    println!("output {}", shape_arg(y.shape()));
    println!("sum {}", sig12(y.sum()));
    println!("l2 {}", sig12(y.norm_l2()));
    Ok(EXIT_OK)
}

/// Decimal rendering with 12 significant digits.
pub fn sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..12).contains(&exp) {
        format!("{:.*}", (11 - exp).max(0) as usize, x)
    } else {
        format!("{x:.11e}")
    }
}
