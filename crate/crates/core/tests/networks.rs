mod common;

use attnforge_core::analysis::count_params;
use attnforge_core::backbones::{
    build_preset_with, execute, forward, infer_shapes, init_weights, weight_manifest, BuildOptions, LayerKind,
    Network, SiteKind,
};
use attnforge_core::params::{StoreSource, WeightStore};
use attnforge_core::{
    build_preset, AttentionConfig, Eager, Error, InitScheme, InsertionPolicy, Mechanism, NetworkSpec, Preset,
    SiteSelector, Tensor,
};

fn plain(p: Preset) -> NetworkSpec {
    build_preset(p, None, &InsertionPolicy::none()).unwrap()
}

fn at(p: Preset, att: Option<&AttentionConfig>, policy: &InsertionPolicy, hw: usize) -> NetworkSpec {
    let opts = BuildOptions {
        input_hw: Some((hw, hw)),
        first_block_stride2: false,
    };
    build_preset_with(p, att, policy, &opts).unwrap()
}

fn input(spec: &NetworkSpec, n: usize, seed: u64) -> Tensor {
    let [c, h, w] = spec.input_shape;
    common::random(&[n, c, h, w], &mut common::rng(seed))
}

#[test]
fn stage_widths_and_bottleneck_expansion() {
    let out_channels = |spec: &NetworkSpec, stage: usize| {
        spec.sites
            .iter()
            .filter(|s| s.name.starts_with(&format!("layer{stage}.")))
            .map(|s| s.channels)
            .collect::<Vec<_>>()
    };
    let r18 = plain(Preset::Resnet18Imagenet);
    let r50 = plain(Preset::Resnet50Imagenet);
    for (i, (w18, w50)) in [(64, 256), (128, 512), (256, 1024), (512, 2048)].into_iter().enumerate() {
        assert!(out_channels(&r18, i + 1).iter().all(|&c| c == w18));
        assert!(out_channels(&r50, i + 1).iter().all(|&c| c == w50));
    }
    let blocks = |spec: &NetworkSpec| spec.sites.iter().filter(|s| s.kind == SiteKind::Block).count();
    assert_eq!(blocks(&r18), 8);
    assert_eq!(blocks(&r50), 16);
    // a bottleneck's inner width is a quarter of its output
    let conv_out = |name: &str| match &r50.nodes.iter().find(|n| n.name == name).unwrap().kind {
        LayerKind::Conv { out_channels, .. } => *out_channels,
        k => panic!("{name} is {}", k.name()),
    };
    assert_eq!(conv_out("layer3.2.conv2") * 4, conv_out("layer3.2.conv3"));
}

#[test]
fn class_counts_and_input_extents() {
    for p in Preset::ALL {
        let spec = plain(p);
        assert!(spec.num_classes == 100 || spec.num_classes == 1000);
        let (h, w) = p.default_input_hw();
        assert_eq!(spec.input_shape, [3, h, w]);
    }
    assert_eq!(plain(Preset::Resnet50Cifar).num_classes, 100);
}

#[test]
fn shape_inference_agrees_with_forward_at_every_node() {
    for p in Preset::ALL {
        for att in [None, Some(Mechanism::Gam), Some(Mechanism::Cbam)] {
            // GAM at stage ends keeps the ResNet50 weights small; CBAM covers
            // per-block sites
            let (cfg, policy) = match att {
                Some(Mechanism::Gam) => (Some(AttentionConfig::gam(8)), InsertionPolicy::new(SiteSelector::StageEnds)),
                Some(m) => {
                    let (c, pol) = p.default_attention(m);
                    (Some(c), pol)
                }
                None => (None, InsertionPolicy::none()),
            };
            let spec = at(p, cfg.as_ref(), &policy, 32);
            let net = init_weights(&spec, 1, InitScheme::KaimingNormal).unwrap();
            let x = input(&spec, 1, 2);
            let inferred = infer_shapes(&spec, x.shape()).unwrap();
            let mut src = StoreSource::new(&net.weights);
            let mut seen = 0;
            execute(&spec, &mut Eager, &mut src, x, |id, _, v| {
                assert_eq!(v.shape(), inferred[id].as_slice(), "{} node {id}", spec.name);
                seen += 1;
                Ok(())
            })
            .unwrap();
            assert_eq!(seen, spec.nodes.len());
        }
    }
}

#[test]
fn attention_never_changes_the_output_shape() {
    for p in Preset::ALL {
        let base = infer_shapes(&at(p, None, &InsertionPolicy::none(), 64), &[2, 3, 64, 64]).unwrap();
        for m in [Mechanism::Gam, Mechanism::Se, Mechanism::Bam, Mechanism::Cbam] {
            for sel in SiteSelector::SEARCHABLE {
                let cfg = AttentionConfig::for_mechanism(m, 8);
                let spec = at(p, Some(&cfg), &InsertionPolicy::new(sel), 64);
                assert!(spec.attention_nodes().count() > 0, "{p} {m:?} {sel}");
                let shapes = infer_shapes(&spec, &[2, 3, 64, 64]).unwrap();
                assert_eq!(shapes.last(), base.last());
            }
        }
    }
}

#[test]
fn forward_batch_of_two_at_full_resolution() {
    let spec = plain(Preset::Resnet18Imagenet);
    let net = init_weights(&spec, 0, InitScheme::KaimingNormal).unwrap();
    let y = forward(&net, &input(&spec, 2, 3)).unwrap();
    assert_eq!(y.shape(), &[2, 1000]);
    assert!(y.is_finite());
}

#[test]
fn same_seed_gives_identical_weights_and_logits() {
    let (cfg, policy) = Preset::Resnet18Imagenet.default_attention(Mechanism::Gam);
    let spec = at(Preset::Resnet18Imagenet, Some(&cfg), &policy, 64);
    let a = init_weights(&spec, 42, InitScheme::KaimingNormal).unwrap();
    let b = init_weights(&spec, 42, InitScheme::KaimingNormal).unwrap();
    for ((na, pa), (nb, pb)) in a.weights.iter().zip(b.weights.iter()) {
        assert_eq!(na, nb);
        assert_eq!(pa.tensor.data(), pb.tensor.data());
    }
    let x = input(&spec, 1, 5);
    assert_eq!(forward(&a, &x).unwrap().data(), forward(&b, &x).unwrap().data());
    let c = init_weights(&spec, 43, InitScheme::KaimingNormal).unwrap();
    assert_ne!(forward(&a, &x).unwrap().data(), forward(&c, &x).unwrap().data());
}

#[test]
fn kaiming_std_follows_fan_in() {
    let net = init_weights(&plain(Preset::Resnet18Imagenet), 7, InitScheme::KaimingNormal).unwrap();
    let w = net.weights.tensor("conv1.weight").unwrap();
    assert_eq!(w.shape(), &[64, 3, 7, 7]);
    let n = w.len() as f64;
    let mean = w.sum() / n;
    let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let expected = (2.0f64 / 147.0).sqrt();
    assert!((std / expected - 1.0).abs() < 0.03, "std {std} vs {expected}");
    for (name, p) in net.weights.iter() {
        let want = if name.ends_with(".gamma") || name.ends_with(".var") {
            Some(1.0)
        } else if name.ends_with(".beta") || name.ends_with(".mean") || name.ends_with(".bias") {
            Some(0.0)
        } else {
            None
        };
        if let Some(v) = want {
            assert!(p.tensor.data().iter().all(|&x| x == v), "{name}");
        }
    }
}

#[test]
fn zero_weights_give_zero_logits() {
    let (cfg, policy) = Preset::Resnet18Imagenet.default_attention(Mechanism::Gam);
    let spec = at(Preset::Resnet18Imagenet, Some(&cfg), &policy, 64);
    let mut net = init_weights(&spec, 1, InitScheme::KaimingNormal).unwrap();
    let names: Vec<String> = net
        .weights
        .iter()
        .filter(|(n, _)| n.ends_with(".weight") || n.ends_with(".w1") || n.ends_with(".w2") || n.ends_with("gamma"))
        .map(|(n, _)| n.to_string())
        .collect();
    for n in names {
        let shape = net.weights.tensor(&n).unwrap().shape().to_vec();
        net.weights.set(&n, Tensor::zeros(shape).unwrap()).unwrap();
    }
    let y = forward(&net, &input(&spec, 2, 1)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

/// Walks the graph independently of the declaration code: every conv has a
/// weight (and maybe a bias), every BN four tensors, every linear two.
fn walked_tensor_count(spec: &NetworkSpec) -> usize {
    spec.nodes
        .iter()
        .map(|n| match &n.kind {
            LayerKind::Conv { bias, .. } => 1 + usize::from(*bias),
            LayerKind::Bn { .. } => 4,
            LayerKind::Linear { bias, .. } => 1 + usize::from(*bias),
            LayerKind::Attention { .. } => panic!("plain backbones only"),
            _ => 0,
        })
        .sum()
}

#[test]
fn weight_tensor_count_matches_graph_walk() {
    for p in Preset::ALL {
        let spec = plain(p);
        assert_eq!(weight_manifest(&spec).unwrap().tensors.len(), walked_tensor_count(&spec), "{p}");
    }
    let spec = plain(Preset::Resnet18Imagenet);
    assert_eq!(init_weights(&spec, 0, InitScheme::KaimingNormal).unwrap().weights.len(), walked_tensor_count(&spec));
}

#[test]
fn counted_params_equal_manifest_scalars_for_every_combination() {
    for p in Preset::ALL {
        for m in [None, Some(Mechanism::Gam), Some(Mechanism::Se), Some(Mechanism::Bam), Some(Mechanism::Cbam)] {
            let spec = match m {
                Some(m) => {
                    let (cfg, policy) = p.default_attention(m);
                    build_preset(p, Some(&cfg), &policy).unwrap()
                }
                None => plain(p),
            };
            let counted = count_params(&spec).unwrap().total_params;
            assert_eq!(counted as usize, weight_manifest(&spec).unwrap().learnable_scalars(), "{p} {m:?}");
        }
    }
}

#[test]
fn saved_bundle_round_trips_and_matches_the_listed_manifest() {
    let (cfg, policy) = Preset::MobilenetV2Imagenet.default_attention(Mechanism::Se);
    let spec = at(Preset::MobilenetV2Imagenet, Some(&cfg), &policy, 64);
    let net = init_weights(&spec, 3, InitScheme::UniformSmall).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut header = attnforge_core::params::Manifest::new();
    header.architecture = Some(spec.name.clone());
    let written = net.weights.save(dir.path(), header).unwrap();
    assert_eq!(written, weight_manifest(&spec).unwrap());
    assert_eq!(written.learnable_scalars() as u64, count_params(&spec).unwrap().total_params);
    let (loaded, _) = WeightStore::load(dir.path()).unwrap();
    let x = input(&spec, 1, 9);
    let again = Network {
        spec: spec.clone(),
        weights: loaded,
    };
    assert_eq!(forward(&net, &x).unwrap().data(), forward(&again, &x).unwrap().data());
}

#[test]
fn identity_gates_reduce_to_the_plain_network() {
    for p in [Preset::Resnet18Imagenet, Preset::MobilenetV2Imagenet] {
        for m in [Mechanism::Gam, Mechanism::Bam, Mechanism::Cbam] {
            let (cfg, policy) = p.default_attention(m);
            let cfg = cfg.with_identity_gate(true);
            let attended = at(p, Some(&cfg), &policy, 64);
            let base = at(p, None, &InsertionPolicy::none(), 64);
            let net = init_weights(&attended, 11, InitScheme::KaimingNormal).unwrap();
            let plain_net = Network {
                spec: base,
                weights: net.weights.clone(),
            };
            let x = input(&attended, 1, 4);
            let diff = forward(&net, &x).unwrap().max_abs_diff(&forward(&plain_net, &x).unwrap()).unwrap();
            assert!(diff <= 1e-9, "{p} {m:?}: {diff}");
        }
    }
}

#[test]
fn spec_json_round_trip() {
    let (cfg, mut policy) = Preset::Resnet50Cifar.default_attention(Mechanism::Gam);
    policy.overrides.insert("layer2.1".into(), AttentionConfig::gam(4).with_groups(4));
    let spec = build_preset(Preset::Resnet50Cifar, Some(&cfg), &policy).unwrap();
    let back = NetworkSpec::from_json(&spec.to_json().unwrap()).unwrap();
    assert_eq!(back, spec);
    let site = spec.sites.iter().find(|s| s.name == "layer2.1").unwrap();
    let node = &spec.nodes[site.attention_node.unwrap()];
    match &node.kind {
        LayerKind::Attention { config, channels } => {
            assert_eq!(config.groups, 4);
            assert_eq!(*channels, 512);
        }
        k => panic!("site points at {}", k.name()),
    }
}

#[test]
fn invalid_requests_are_rejected() {
    let p = Preset::Resnet18Imagenet;
    assert!(matches!("vgg16".parse::<Preset>(), Err(Error::Unknown { .. })));
    assert!(build_preset(p, None, &InsertionPolicy::new(SiteSelector::PerBlock)).is_err());
    assert!(build_preset(p, Some(&AttentionConfig::gam(7)), &InsertionPolicy::new(SiteSelector::StageEnds)).is_err());
    let mut policy = InsertionPolicy::new(SiteSelector::StageEnds);
    policy.overrides.insert("layer9".into(), AttentionConfig::gam(8));
    assert!(matches!(build_preset(p, Some(&AttentionConfig::gam(8)), &policy), Err(Error::Unknown { .. })));
    let spec = plain(p);
    let net = init_weights(&spec, 0, InitScheme::KaimingNormal).unwrap();
    let wrong = Tensor::zeros(vec![1, 1, 224, 224]).unwrap();
    assert!(forward(&net, &wrong).is_err());
}

#[test]
fn non_finite_activations_name_the_node() {
    let spec = at(Preset::Resnet18Imagenet, None, &InsertionPolicy::none(), 64);
    let mut net = init_weights(&spec, 0, InitScheme::KaimingNormal).unwrap();
    net.weights.set("layer2.0.bn1.var", Tensor::full(vec![128], -1.0).unwrap()).unwrap();
    match forward(&net, &input(&spec, 1, 0)) {
        Err(Error::NonFinite { name, node }) => {
            assert_eq!(name, "layer2.0.bn1");
            assert_eq!(spec.nodes[node].name, name);
        }
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn first_block_stride_flag_halves_every_later_extent() {
    let spec = |flag| {
        build_preset_with(
            Preset::Resnet18Imagenet,
            None,
            &InsertionPolicy::none(),
            &BuildOptions {
                input_hw: None,
                first_block_stride2: flag,
            },
        )
        .unwrap()
    };
    let (a, b) = (spec(false), spec(true));
    assert_eq!(a.sites[0].extent, (56, 56));
    assert_eq!(b.sites[0].extent, (28, 28));
    assert_eq!(b.sites.last().unwrap().extent, (4, 4));
}
