use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::cost::{CostOps, ShapeSource};
use crate::backbones::{declare_node_params, execute, NetworkSpec};
use crate::error::{Error, Result};

/// Printed at the top of every text and CSV report.
pub const CONVENTION: &str =
    "1 FLOP = 1 multiply-accumulate; batch norm counts 2 per output element; activations, pooling and gates count 0";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct StatRow {
    pub id: usize,
    pub name: String,
    pub kind: String,
    pub output_shape: Vec<usize>,
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct StatReport {
    pub network: String,
    /// `None` for a parameter-only report.
    pub input_shape: Option<Vec<usize>>,
    pub convention: String,
    pub rows: Vec<StatRow>,
    pub total_params: u64,
    pub total_flops: u64,
}

impl StatReport {
    fn from_rows(network: &str, input_shape: Option<Vec<usize>>, rows: Vec<StatRow>) -> Self {
        Self {
            network: network.to_string(),
            input_shape,
            convention: CONVENTION.to_string(),
            total_params: rows.iter().map(|r| r.params).sum(),
            total_flops: rows.iter().map(|r| r.flops).sum(),
            rows,
        }
    }

    pub fn params_m(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    pub fn flops_g(&self) -> f64 {
        self.total_flops as f64 / 1e9
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# {}\nid,name,kind,output_shape,params,flops\n", self.convention);
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.id, r.name, r.kind, shape_str(&r.output_shape), r.params, r.flops);
        }
        let _ = writeln!(s, ",total,,,{},{}", self.total_params, self.total_flops);
        s
    }

    /// Aligned columns, skipping rows with neither parameters nor FLOPs unless
    /// `all` is set.
    pub fn to_text(&self, all: bool) -> String {
        let rows: Vec<&StatRow> = self.rows.iter().filter(|r| all || r.params > 0 || r.flops > 0).collect();
        let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        let shape_w = rows.iter().map(|r| shape_str(&r.output_shape).len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "network: {}", self.network);
        if let Some(input) = &self.input_shape {
            let _ = writeln!(s, "input:   {}", shape_str(input));
        }
        let _ = writeln!(s, "counting: {}", self.convention);
        let _ = writeln!(s, "{:>4}  {:<name_w$}  {:<12}  {:<shape_w$}  {:>12}  {:>14}", "id", "name", "kind", "shape", "params", "flops");
        for r in rows {
            let _ = writeln!(
                s,
                "{:>4}  {:<name_w$}  {:<12}  {:<shape_w$}  {:>12}  {:>14}",
                r.id,
                r.name,
                r.kind,
                shape_str(&r.output_shape),
                r.params,
                r.flops
            );
        }
        let _ = writeln!(
            s,
            "total params {} ({:.2}M), flops {} ({:.2}G)",
            self.total_params,
            self.params_m(),
            self.total_flops,
            self.flops_g()
        );
        s
    }
}

pub fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Learnable scalars of every node. Running statistics are excluded.
pub fn count_params(spec: &NetworkSpec) -> Result<StatReport> {
    if spec.nodes.is_empty() {
        return Ok(StatReport::from_rows(&spec.name, None, Vec::new()));
    }
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.nodes.len());
    for node in &spec.nodes {
        let mut src = ShapeSource::new();
        declare_node_params(&mut CostOps::new(), &mut src, spec, node.id)?;
        rows.push(StatRow {
            id: node.id,
            name: node.name.clone(),
            kind: node.kind.name().to_string(),
            output_shape: Vec::new(),
            params: src.learnable,
            flops: 0,
        });
    }
    Ok(StatReport::from_rows(&spec.name, None, rows))
}

/// Parameters, output shapes and FLOPs of every node for an NCHW input.
pub fn count_flops(spec: &NetworkSpec, input_shape: &[usize]) -> Result<StatReport> {
    let mut report = count_params(spec)?;
    let mut ops = CostOps::new();
    let mut src = ShapeSource::new();
    let mut before = 0u64;
    let rows = &mut report.rows;
    execute(spec, &mut ops, &mut src, input_shape.to_vec(), |id, ops, shape| {
        let row = rows.get_mut(id).ok_or_else(|| Error::config("node id out of range"))?;
        row.output_shape = shape.clone();
        row.flops = ops.flops - before;
        before = ops.flops;
        Ok(())
    })?;
    Ok(StatReport::from_rows(&spec.name, Some(input_shape.to_vec()), report.rows))
}

/// Both counts at the spec's own input size with batch 1.
pub fn stats(spec: &NetworkSpec) -> Result<StatReport> {
    let [c, h, w] = spec.input_shape;
    count_flops(spec, &[1, c, h, w])
}
