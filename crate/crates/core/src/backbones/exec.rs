use super::{LayerKind, NetworkSpec};
use crate::analysis::{CostOps, ShapeSource};
use crate::attention::{self, AttentionWeights};
use crate::autodiff::{Eager, Ops};
use crate::error::{Error, Result};
use crate::params::{
    declare, tensor_file_name, BnParams, InitScheme, InitSource, Manifest, ManifestEntry, ParamRole, ParamSource, ParamSpec,
    StoreSource, WeightStore,
};
use crate::tensor::{Conv2dParams, Pool2d, Tensor};

/// Parameters owned by one node.
#[derive(Clone, Debug)]
pub enum NodeParams<T> {
    None,
    Conv { weight: T, bias: Option<T> },
    Bn(BnParams<T>),
    /// `weight` is `(in, out)`.
    Linear { weight: T, bias: Option<T> },
    Attention(Box<AttentionWeights<T>>),
}

/// Declares the parameters of `spec.nodes[id]`, named `{node}.weight`,
/// `{node}.bias`, `{node}.gamma` and so on.
pub fn declare_node_params<O, S>(ops: &mut O, src: &mut S, spec: &NetworkSpec, id: usize) -> Result<NodeParams<O::Value>>
where
    O: Ops + ?Sized,
    S: ParamSource<O> + ?Sized,
{
    let node = &spec.nodes[id];
    let n = &node.name;
    Ok(match &node.kind {
        LayerKind::Conv {
            in_channels,
            out_channels,
            kernel,
            groups,
            bias,
            ..
        } => {
            if *groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
                return Err(Error::Indivisible {
                    what: "conv channels",
                    value: *in_channels,
                    divisor: *groups,
                });
            }
            let per_group = in_channels / groups;
            let fan_in = per_group * kernel * kernel;
            let weight = declare(ops, src, &format!("{n}.weight"), &[*out_channels, per_group, *kernel, *kernel], ParamRole::Weight, fan_in)?;
            let bias = if *bias {
                Some(declare(ops, src, &format!("{n}.bias"), &[*out_channels], ParamRole::Bias, 0)?)
            } else {
                None
            };
            NodeParams::Conv { weight, bias }
        }
        LayerKind::Bn { channels } => NodeParams::Bn(BnParams::declare(ops, src, n, *channels)?),
        LayerKind::Linear {
            in_features,
            out_features,
            bias,
        } => {
            let weight = declare(ops, src, &format!("{n}.weight"), &[*in_features, *out_features], ParamRole::Weight, *in_features)?;
            let bias = if *bias {
                Some(declare(ops, src, &format!("{n}.bias"), &[*out_features], ParamRole::Bias, 0)?)
            } else {
                None
            };
            NodeParams::Linear { weight, bias }
        }
        LayerKind::Attention { channels, config } => {
            NodeParams::Attention(Box::new(attention::declare(ops, src, n, *channels, config)?))
        }
        _ => NodeParams::None,
    })
}

fn apply<O: Ops>(ops: &mut O, kind: &LayerKind, params: &NodeParams<O::Value>, inputs: &[&O::Value]) -> Result<O::Value> {
    let x = inputs[0];
    match (kind, params) {
        (
            LayerKind::Conv {
                stride,
                padding,
                dilation,
                groups,
                ..
            },
            NodeParams::Conv { weight, bias },
        ) => {
            let p = Conv2dParams::default()
                .stride(*stride)
                .padding(*padding)
                .dilation(*dilation)
                .groups(*groups);
            ops.conv2d(x, weight, bias.as_ref(), &p)
        }
        (LayerKind::Bn { .. }, NodeParams::Bn(bn)) => ops.batch_norm(x, bn),
        (LayerKind::Relu, _) => ops.relu(x),
        (LayerKind::Relu6, _) => ops.relu6(x),
        (LayerKind::MaxPool { kernel, stride, padding }, _) => ops.max_pool2d(x, &Pool2d::new(*kernel, *stride, *padding)),
        (LayerKind::AvgPool, _) => ops.global_avg_pool(x),
        (LayerKind::Flatten, _) => {
            let s = ops.shape_of(x);
            let rest = s[1..].iter().product();
            ops.reshape(x, &[s[0], rest])
        }
        (LayerKind::Linear { .. }, NodeParams::Linear { weight, bias }) => ops.linear(x, weight, bias.as_ref()),
        (LayerKind::ResidualAdd, _) => {
            let (a, b) = (ops.shape_of(inputs[0]), ops.shape_of(inputs[1]));
            if a != b {
                return Err(Error::shape(format!("residual addition of {a:?} and {b:?}")));
            }
            ops.add(inputs[0], inputs[1])
        }
        (LayerKind::Attention { config, .. }, NodeParams::Attention(w)) => attention::forward(ops, x, w, config),
        (kind, _) => Err(Error::config(format!("node kind `{}` with mismatched parameters", kind.name()))),
    }
}

/// Runs `spec` on `input`, calling `on_node(id, ops, value)` after every
/// node. Intermediate values are released after their last consumer.
pub fn execute<O, S, F>(spec: &NetworkSpec, ops: &mut O, src: &mut S, input: O::Value, mut on_node: F) -> Result<O::Value>
where
    O: Ops,
    S: ParamSource<O> + ?Sized,
    F: FnMut(usize, &O, &O::Value) -> Result<()>,
{
    spec.validate()?;
    let shape = ops.shape_of(&input);
    let expected = match spec.nodes[0].kind {
        LayerKind::Input { shape } => shape,
        _ => return Err(Error::config("first node must be the input")),
    };
    if shape.len() != 4 || shape[1..] != expected {
        return Err(Error::shape(format!(
            "network `{}` expects input (N, {}, {}, {}), got {shape:?}",
            spec.name, expected[0], expected[1], expected[2]
        )));
    }
    let mut last_use = vec![0usize; spec.nodes.len()];
    for node in &spec.nodes {
        for &i in &node.inputs {
            last_use[i] = node.id;
        }
    }
    let out = spec.output();
    let mut values: Vec<Option<O::Value>> = vec![None; spec.nodes.len()];
    on_node(0, ops, &input)?;
    values[0] = Some(input);
    for node in &spec.nodes[1..] {
        let params = declare_node_params(ops, src, spec, node.id)?;
        let inputs: Vec<&O::Value> = node
            .inputs
            .iter()
            .map(|&i| values[i].as_ref().expect("inputs are computed before use"))
            .collect();
        let y = apply(ops, &node.kind, &params, &inputs).map_err(|e| match e {
            Error::Shape(m) => Error::Shape(format!("node {} ({}): {m}", node.id, node.name)),
            other => other,
        })?;
        on_node(node.id, ops, &y)?;
        values[node.id] = Some(y);
        for &i in &node.inputs {
            if last_use[i] == node.id && i != out {
                values[i] = None;
            }
        }
    }
    Ok(values[out].take().expect("output node is computed"))
}

/// Output shape of every node for an NCHW input.
pub fn infer_shapes(spec: &NetworkSpec, input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut ops = CostOps::new();
    let mut src = ShapeSource::new();
    let mut shapes = vec![Vec::new(); spec.nodes.len()];
    execute(spec, &mut ops, &mut src, input.to_vec(), |id, _, v| {
        shapes[id] = v.clone();
        Ok(())
    })?;
    Ok(shapes)
}

/// A network definition with concrete weights.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: NetworkSpec,
    pub weights: WeightStore,
}

/// Deterministically initializes every parameter of `spec` from `seed`.
pub fn init_weights(spec: &NetworkSpec, seed: u64, scheme: InitScheme) -> Result<Network> {
    spec.validate()?;
    let mut src = InitSource::new(seed, scheme);
    for id in 0..spec.nodes.len() {
        declare_node_params(&mut Eager, &mut src, spec, id)?;
    }
    Ok(Network {
        spec: spec.clone(),
        weights: src.into_store(),
    })
}

/// Lists what [`WeightStore::save`] would write for `spec`, without
/// allocating any weights.
pub fn weight_manifest(spec: &NetworkSpec) -> Result<Manifest> {
    struct Lister(Vec<ManifestEntry>);
    impl ParamSource<CostOps> for Lister {
        fn param(&mut self, _ops: &mut CostOps, p: &ParamSpec<'_>) -> Result<Vec<usize>> {
            self.0.push(ManifestEntry {
                name: p.name.to_string(),
                file: tensor_file_name(self.0.len(), p.name),
                shape: p.shape.to_vec(),
                role: p.role,
                learnable: p.role.learnable(),
            });
            Ok(p.shape.to_vec())
        }
    }
    spec.validate()?;
    let mut lister = Lister(Vec::new());
    for id in 0..spec.nodes.len() {
        declare_node_params(&mut CostOps::new(), &mut lister, spec, id)?;
    }
    let mut manifest = Manifest::new();
    manifest.architecture = Some(spec.name.clone());
    manifest.tensors = lister.0;
    Ok(manifest)
}

/// Inference forward pass. Fails with the id of the first node whose output
/// is not finite.
pub fn forward(net: &Network, input: &Tensor) -> Result<Tensor> {
    let mut src = StoreSource::new(&net.weights);
    execute(&net.spec, &mut Eager, &mut src, input.clone(), |id, ops, v| {
        if ops.is_finite(v) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                node: id,
                name: net.spec.nodes[id].name.clone(),
            })
        }
    })
}
