use super::{InsertionPolicy, LayerKind, LayerNode, NetworkSpec, Preset, SiteKind, SiteRecord};
use crate::attention::AttentionConfig;
use crate::error::{Error, Result};
use crate::tensor::{Conv2dParams, Pool2d};

/// Appends nodes while tracking `(C, H, W)` of every node.
pub(super) struct GraphBuilder<'a> {
    nodes: Vec<LayerNode>,
    shapes: Vec<[usize; 3]>,
    sites: Vec<SiteRecord>,
    att: Option<&'a AttentionConfig>,
    policy: &'a InsertionPolicy,
}

impl<'a> GraphBuilder<'a> {
    pub fn new(input: [usize; 3], att: Option<&'a AttentionConfig>, policy: &'a InsertionPolicy) -> Self {
        let mut b = Self {
            nodes: Vec::new(),
            shapes: Vec::new(),
            sites: Vec::new(),
            att,
            policy,
        };
        b.push("input", LayerKind::Input { shape: input }, vec![], input);
        b
    }

    fn push(&mut self, name: &str, kind: LayerKind, inputs: Vec<usize>, shape: [usize; 3]) -> usize {
        let id = self.nodes.len();
        self.nodes.push(LayerNode {
            id,
            name: name.to_string(),
            kind,
            inputs,
        });
        self.shapes.push(shape);
        id
    }

    pub fn shape(&self, id: usize) -> [usize; 3] {
        self.shapes[id]
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(&mut self, name: &str, from: usize, out: usize, kernel: usize, stride: usize, padding: usize, groups: usize) -> Result<usize> {
        let [c, h, w] = self.shapes[from];
        let oh = Conv2dParams::out_extent(h, kernel, stride, padding, 1).ok_or_else(|| Error::EmptyOutput(format!("conv `{name}` on height {h}")))?;
        let ow = Conv2dParams::out_extent(w, kernel, stride, padding, 1).ok_or_else(|| Error::EmptyOutput(format!("conv `{name}` on width {w}")))?;
        let kind = LayerKind::Conv {
            in_channels: c,
            out_channels: out,
            kernel,
            stride,
            padding,
            dilation: 1,
            groups,
            bias: false,
        };
        Ok(self.push(name, kind, vec![from], [out, oh, ow]))
    }

    pub fn bn(&mut self, name: &str, from: usize) -> usize {
        let s = self.shapes[from];
        self.push(name, LayerKind::Bn { channels: s[0] }, vec![from], s)
    }

    pub fn relu(&mut self, name: &str, from: usize) -> usize {
        let s = self.shapes[from];
        self.push(name, LayerKind::Relu, vec![from], s)
    }

    pub fn relu6(&mut self, name: &str, from: usize) -> usize {
        let s = self.shapes[from];
        self.push(name, LayerKind::Relu6, vec![from], s)
    }

    /// Convolution followed by batch norm, padded to keep extents at stride 1.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_bn(
        &mut self,
        prefix: &str,
        conv_name: &str,
        bn_name: &str,
        from: usize,
        out: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
    ) -> Result<usize> {
        let c = self.conv(&format!("{prefix}{conv_name}"), from, out, kernel, stride, kernel / 2, groups)?;
        Ok(self.bn(&format!("{prefix}{bn_name}"), c))
    }

    pub fn max_pool(&mut self, name: &str, from: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
        let [c, h, w] = self.shapes[from];
        let (oh, ow) = Pool2d::new(kernel, stride, padding).output_hw(h, w)?;
        Ok(self.push(name, LayerKind::MaxPool { kernel, stride, padding }, vec![from], [c, oh, ow]))
    }

    pub fn add(&mut self, name: &str, a: usize, b: usize) -> Result<usize> {
        if self.shapes[a] != self.shapes[b] {
            return Err(Error::shape(format!(
                "residual `{name}` joins {:?} and {:?}",
                self.shapes[a], self.shapes[b]
            )));
        }
        let s = self.shapes[a];
        Ok(self.push(name, LayerKind::ResidualAdd, vec![a, b], s))
    }

    /// Global pooling, flatten and the classifier.
    pub fn head(&mut self, from: usize, classes: usize) -> usize {
        let c = self.shapes[from][0];
        let p = self.push("avgpool", LayerKind::AvgPool, vec![from], [c, 1, 1]);
        let f = self.push("flatten", LayerKind::Flatten, vec![p], [c, 1, 1]);
        self.push(
            "fc",
            LayerKind::Linear {
                in_features: c,
                out_features: classes,
                bias: true,
            },
            vec![f],
            [classes, 1, 1],
        )
    }

    /// Offers `from` as an insertion site; returns the node downstream code
    /// should consume.
    pub fn site(&mut self, name: &str, kind: SiteKind, from: usize) -> Result<usize> {
        let [c, h, w] = self.shapes[from];
        let chosen = match self.policy.overrides.get(name) {
            Some(cfg) => Some(cfg),
            None if self.policy.selector.selects(kind) => self.att,
            None => None,
        };
        let attention_node = match chosen {
            Some(cfg) => {
                cfg.validate(c).map_err(|e| Error::config(format!("attention at site `{name}`: {e}")))?;
                let kind = LayerKind::Attention {
                    channels: c,
                    config: cfg.clone(),
                };
                Some(self.push(&format!("{name}.att"), kind, vec![from], [c, h, w]))
            }
            None => None,
        };
        self.sites.push(SiteRecord {
            name: name.to_string(),
            kind,
            channels: c,
            extent: (h, w),
            attention_node,
        });
        Ok(attention_node.unwrap_or(from))
    }

    pub fn finish(self, name: String, preset: Preset, input: [usize; 3], classes: usize) -> NetworkSpec {
        NetworkSpec {
            name,
            preset: Some(preset),
            input_shape: input,
            num_classes: classes,
            attention: self.att.cloned(),
            policy: self.policy.clone(),
            nodes: self.nodes,
            sites: self.sites,
        }
    }
}
