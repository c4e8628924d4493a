use super::builder::GraphBuilder;
use super::{BuildOptions, InsertionPolicy, NetworkSpec, Preset, SiteKind};
use crate::attention::AttentionConfig;
use crate::error::Result;

/// `(expansion, out channels, repeats, first stride)` per stage.
const STAGES: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

pub(super) fn build(preset: Preset, att: Option<&AttentionConfig>, policy: &InsertionPolicy, opts: &BuildOptions) -> Result<NetworkSpec> {
    let (h, w) = opts.input_hw.unwrap_or(preset.default_input_hw());
    let input = [3, h, w];
    let classes = preset.num_classes();
    let mut b = GraphBuilder::new(input, att, policy);

    let y = b.conv_bn("features.0.", "conv", "bn", 0, 32, 3, 2, 1)?;
    let mut x = b.relu6("features.0.relu6", y);
    let mut index = 1;
    for (stage, &(t, c, n, s)) in STAGES.iter().enumerate() {
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            x = inverted_residual(&mut b, &format!("features.{index}"), x, t, c, stride)?;
            index += 1;
        }
        let kind = SiteKind::StageEnd { last: stage == STAGES.len() - 1 };
        x = b.site(&format!("stage{}", stage + 1), kind, x)?;
    }
    let p = format!("features.{index}.");
    let y = b.conv_bn(&p, "conv", "bn", x, 1280, 1, 1, 1)?;
    let x = b.relu6(&format!("{p}relu6"), y);
    b.head(x, classes);
    Ok(b.finish("mobilenet_v2".to_string(), preset, input, classes))
}

fn inverted_residual(b: &mut GraphBuilder<'_>, name: &str, x: usize, t: usize, out: usize, stride: usize) -> Result<usize> {
    let p = format!("{name}.");
    let cin = b.shape(x)[0];
    let hidden = cin * t;
    let mut y = x;
    if t != 1 {
        y = b.conv_bn(&p, "expand", "expand_bn", y, hidden, 1, 1, 1)?;
        y = b.relu6(&format!("{p}expand_relu6"), y);
    }
    y = b.conv_bn(&p, "dw", "dw_bn", y, hidden, 3, stride, hidden)?;
    y = b.relu6(&format!("{p}dw_relu6"), y);
    y = b.conv_bn(&p, "project", "project_bn", y, out, 1, 1, 1)?;
    y = b.site(name, SiteKind::Block, y)?;
    if stride == 1 && cin == out {
        y = b.add(&format!("{p}add"), y, x)?;
    }
    Ok(y)
}
