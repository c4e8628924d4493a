use super::builder::GraphBuilder;
use super::{BuildOptions, InsertionPolicy, NetworkSpec, Preset, SiteKind};
use crate::attention::AttentionConfig;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum Depth {
    Basic18,
    Bottleneck50,
}

impl Depth {
    fn blocks(self) -> [usize; 4] {
        match self {
            Depth::Basic18 => [2, 2, 2, 2],
            Depth::Bottleneck50 => [3, 4, 6, 3],
        }
    }

    fn expansion(self) -> usize {
        match self {
            Depth::Basic18 => 1,
            Depth::Bottleneck50 => 4,
        }
    }
}

pub(super) fn build(
    preset: Preset,
    depth: Depth,
    att: Option<&AttentionConfig>,
    policy: &InsertionPolicy,
    opts: &BuildOptions,
) -> Result<NetworkSpec> {
    let (h, w) = opts.input_hw.unwrap_or(preset.default_input_hw());
    let input = [3, h, w];
    let classes = preset.num_classes();
    let mut b = GraphBuilder::new(input, att, policy);

    let mut x = if preset == Preset::Resnet50Cifar {
        let y = b.conv_bn("", "conv1", "bn1", 0, 64, 3, 1, 1)?;
        b.relu("relu", y)
    } else {
        let y = b.conv("conv1", 0, 64, 7, 2, 3, 1)?;
        let y = b.bn("bn1", y);
        let y = b.relu("relu", y);
        b.max_pool("maxpool", y, 3, 2, 1)?
    };

    let widths = [64, 128, 256, 512];
    let blocks = depth.blocks();
    for stage in 0..4 {
        for i in 0..blocks[stage] {
            let stride = match (stage, i) {
                (0, 0) if opts.first_block_stride2 => 2,
                (s, 0) if s > 0 => 2,
                _ => 1,
            };
            let name = format!("layer{}.{i}", stage + 1);
            x = block(&mut b, depth, &name, x, widths[stage], stride)?;
        }
        let kind = SiteKind::StageEnd { last: stage == 3 };
        x = b.site(&format!("layer{}", stage + 1), kind, x)?;
    }
    b.head(x, classes);

    let mut name = match depth {
        Depth::Basic18 => "resnet18".to_string(),
        Depth::Bottleneck50 => "resnet50".to_string(),
    };
    if preset == Preset::Resnet50Cifar {
        name += "_cifar";
    }
    Ok(b.finish(name, preset, input, classes))
}

fn block(b: &mut GraphBuilder<'_>, depth: Depth, name: &str, x: usize, width: usize, stride: usize) -> Result<usize> {
    let p = format!("{name}.");
    let out = width * depth.expansion();
    let branch = match depth {
        Depth::Basic18 => {
            let y = b.conv_bn(&p, "conv1", "bn1", x, width, 3, stride, 1)?;
            let y = b.relu(&format!("{p}relu1"), y);
            b.conv_bn(&p, "conv2", "bn2", y, width, 3, 1, 1)?
        }
        Depth::Bottleneck50 => {
            let y = b.conv_bn(&p, "conv1", "bn1", x, width, 1, 1, 1)?;
            let y = b.relu(&format!("{p}relu1"), y);
            let y = b.conv_bn(&p, "conv2", "bn2", y, width, 3, stride, 1)?;
            let y = b.relu(&format!("{p}relu2"), y);
            b.conv_bn(&p, "conv3", "bn3", y, out, 1, 1, 1)?
        }
    };
    let branch = b.site(name, SiteKind::Block, branch)?;
    let skip = if stride != 1 || b.shape(x)[0] != out {
        b.conv_bn(&p, "downsample.0", "downsample.1", x, out, 1, stride, 1)?
    } else {
        x
    };
    let y = b.add(&format!("{p}add"), branch, skip)?;
    Ok(b.relu(&format!("{p}relu"), y))
}
