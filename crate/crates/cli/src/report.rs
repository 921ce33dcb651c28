// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

//! Serializable reports and their text rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use flowopt::analysis::{Bound, PropertySets, UdfAnalysis};
use flowopt::plan::{Annotation, NodeKind, PlanGraph};
use flowopt::reorder::{ConflictReport, SwapOutcome};
use flowopt::udf_ir::{FieldId, InputId, UdfBody};
use serde::{Deserialize, Serialize};

/// ANSI styling, disabled when stdout is not a terminal or `FLOWOPT_COLOR`
/// is `0`, `never`, `off` or `false`.
#[derive(Debug, Clone, Copy)]
pub struct Style {
    pub color: bool,
}

impl Style {
    pub fn detect() -> Self {
        use std::io::IsTerminal;
        let color = match std::env::var("FLOWOPT_COLOR").as_deref() {
            Ok("0" | "never" | "off" | "false") => false,
            Ok("always" | "1") => true,
            _ => std::io::stdout().is_terminal(),
        };
        Style { color }
    }

    fn paint(&self, code: &str, text: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{text}\x1b[0m")
        } else {
            text.to_string()
        }
    }

    pub fn bold(&self, text: &str) -> String {
        self.paint("1", text)
    }

    pub fn good(&self, text: &str) -> String {
        self.paint("32", text)
    }

    pub fn bad(&self, text: &str) -> String {
        self.paint("31", text)
    }

    pub fn warn(&self, text: &str) -> String {
        self.paint("33", text)
    }
}

pub fn fields(set: &BTreeSet<FieldId>) -> String {
    let items: Vec<String> = set.iter().map(|f| f.to_string()).collect();
    format!("{{{}}}", items.join(","))
}

fn inputs(set: &BTreeSet<InputId>) -> String {
    let items: Vec<String> = set.iter().map(|i| i.to_string()).collect();
    format!("{{{}}}", items.join(","))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UdfReport {
    pub udf: String,
    #[serde(flatten)]
    pub sets: PropertySets,
    /// Write set for the input fields in `input_fields`.
    #[serde(rename = "W")]
    pub write_set: BTreeSet<FieldId>,
    pub input_fields: BTreeMap<InputId, BTreeSet<FieldId>>,
    pub ec_lower: u32,
    pub ec_upper: Bound,
    pub warnings: Vec<String>,
}

impl UdfReport {
    pub fn new(
        udf: &UdfBody,
        analysis: &UdfAnalysis,
        write_set: BTreeSet<FieldId>,
        input_fields: BTreeMap<InputId, BTreeSet<FieldId>>,
    ) -> Self {
        UdfReport {
            udf: udf.name().to_string(),
            sets: analysis.sets.clone(),
            write_set,
            input_fields,
            ec_lower: analysis.ec.lower,
            ec_upper: analysis.ec.upper,
            warnings: analysis.warnings.clone(),
        }
    }

    pub fn render(&self, style: Style) -> String {
        let mut out = String::new();
        let s = &self.sets;
        writeln!(out, "{}", style.bold(&format!("udf {}", self.udf))).unwrap();
        writeln!(out, "  R  = {}", fields(&s.read)).unwrap();
        writeln!(out, "  O  = {}", inputs(&s.origins)).unwrap();
        writeln!(out, "  E  = {}", fields(&s.explicit)).unwrap();
        writeln!(out, "  C  = {}", fields(&s.copied)).unwrap();
        writeln!(out, "  P  = {}", fields(&s.projected)).unwrap();
        let position: Vec<String> = self.input_fields.iter().map(|(i, f)| format!("input {i} {}", fields(f))).collect();
        writeln!(out, "  W  = {}  (for {})", fields(&self.write_set), position.join(", ")).unwrap();
        writeln!(out, "  EC = [{}, {}]", self.ec_lower, self.ec_upper).unwrap();
        for w in &self.warnings {
            writeln!(out, "  {}", style.warn(&format!("warning: {w}"))).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaReport {
    pub guaranteed: BTreeSet<FieldId>,
    pub possible: BTreeSet<FieldId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorReport {
    #[serde(flatten)]
    pub udf: UdfReport,
    /// UDF read set plus key fields.
    pub read_set: BTreeSet<FieldId>,
    pub required: BTreeMap<InputId, BTreeSet<FieldId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeReport {
    pub name: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sof: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub keys: Vec<Vec<FieldId>>,
    pub inputs: Vec<String>,
    /// Schema of the records the node produces; absent for sinks.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub schema: Option<SchemaReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub consumes: Option<BTreeSet<FieldId>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub analysis: Option<OperatorReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanReport {
    pub plan: String,
    pub nodes: Vec<NodeReport>,
    pub warnings: Vec<String>,
}

impl PlanReport {
    pub fn new(path: &str, plan: &PlanGraph, annotation: &Annotation) -> Self {
        let mut nodes = Vec::new();
        for id in plan.topological_order() {
            let node = plan.node(id);
            let names = node.inputs.iter().map(|&i| plan.node(i).name.clone()).collect();
            let schema = (!matches!(node.kind, NodeKind::Sink { .. })).then(|| {
                let s = annotation.schemas.output(id);
                SchemaReport { guaranteed: s.guaranteed.clone(), possible: s.possible.clone() }
            });
            let mut report = NodeReport {
                name: node.name.clone(),
                kind: String::new(),
                sof: None,
                keys: Vec::new(),
                inputs: names,
                schema,
                consumes: None,
                analysis: None,
            };
            match &node.kind {
                NodeKind::Source { .. } => report.kind = "source".into(),
                NodeKind::Sink { consumes } => {
                    report.kind = "sink".into();
                    report.consumes = Some(consumes.clone());
                }
                NodeKind::Operator { sof, keys, udf } => {
                    let op = annotation.operator(id);
                    report.kind = "operator".into();
                    report.sof = Some(sof.to_string());
                    report.keys = keys.clone();
                    let input_fields = (0..node.inputs.len())
                        .map(|slot| {
                            let input = InputId(slot as u8 + 1);
                            (input, annotation.schemas.input(plan, id, input).possible.clone())
                        })
                        .collect();
                    let udf_report = UdfReport {
                        udf: udf.clone(),
                        sets: op.sets.clone(),
                        write_set: op.write_set.clone(),
                        input_fields,
                        ec_lower: op.ec.lower,
                        ec_upper: op.ec.upper,
                        warnings: op.warnings.clone(),
                    };
                    report.analysis = Some(OperatorReport {
                        udf: udf_report,
                        read_set: op.read_set.clone(),
                        required: op.required.clone(),
                    });
                }
            }
            nodes.push(report);
        }
        let warnings = annotation.warnings().map(str::to_string).collect();
        PlanReport { plan: path.to_string(), nodes, warnings }
    }

    pub fn render(&self, style: Style) -> String {
        let mut out = String::new();
        writeln!(out, "{}", style.bold(&format!("plan {}", self.plan))).unwrap();
        for n in &self.nodes {
            match n.kind.as_str() {
                "source" => {
                    let schema = n.schema.as_ref().expect("source schema");
                    writeln!(out, "source {} -> {}", n.name, fields(&schema.guaranteed)).unwrap();
                }
                "sink" => {
                    let consumes = n.consumes.as_ref().expect("sink fields");
                    writeln!(out, "sink {} <- {} consumes {}", n.name, n.inputs[0], fields(consumes)).unwrap();
                }
                _ => {
                    let a = n.analysis.as_ref().expect("operator analysis");
                    let schema = n.schema.as_ref().expect("operator schema");
                    writeln!(
                        out,
                        "op {} = {}({}) <- {}",
                        n.name,
                        n.sof.as_deref().unwrap_or(""),
                        a.udf.udf,
                        n.inputs.join(", ")
                    )
                    .unwrap();
                    writeln!(
                        out,
                        "    R={} W={} O={} E={} C={} P={} EC=[{}, {}]",
                        fields(&a.read_set),
                        fields(&a.udf.write_set),
                        inputs(&a.udf.sets.origins),
                        fields(&a.udf.sets.explicit),
                        fields(&a.udf.sets.copied),
                        fields(&a.udf.sets.projected),
                        a.udf.ec_lower,
                        a.udf.ec_upper
                    )
                    .unwrap();
                    let extra: BTreeSet<FieldId> = schema.possible.difference(&schema.guaranteed).copied().collect();
                    if extra.is_empty() {
                        writeln!(out, "    out {}", fields(&schema.guaranteed)).unwrap();
                    } else {
                        writeln!(out, "    out {} (maybe also {})", fields(&schema.guaranteed), fields(&extra))
                            .unwrap();
                    }
                }
            }
        }
        for w in &self.warnings {
            writeln!(out, "{}", style.warn(&format!("warning: {w}"))).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapReport {
    pub upper: String,
    pub lower: String,
    pub description: String,
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub conflicts: Option<ConflictReportData>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub unsupported: Option<String>,
}

/// Mirror of [`ConflictReport`] that also deserializes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictReportData {
    pub read_read: BTreeSet<FieldId>,
    pub read_write: BTreeSet<FieldId>,
    pub write_write: BTreeSet<FieldId>,
    pub schema_loss: BTreeSet<FieldId>,
    pub cardinality_block: bool,
    pub cardinality_reason: Option<String>,
}

impl From<&ConflictReport> for ConflictReportData {
    fn from(r: &ConflictReport) -> Self {
        ConflictReportData {
            read_read: r.read_read.clone(),
            read_write: r.read_write.clone(),
            write_write: r.write_write.clone(),
            schema_loss: r.schema_loss.clone(),
            cardinality_block: r.cardinality_block,
            cardinality_reason: r.cardinality_reason.clone(),
        }
    }
}

impl SwapReport {
    pub fn from_outcome(plan: &PlanGraph, o: &SwapOutcome) -> Self {
        SwapReport {
            upper: plan.node(o.swap.upper).name.clone(),
            lower: plan.node(o.swap.lower).name.clone(),
            description: o.swap.describe(plan),
            valid: o.valid,
            conflicts: Some((&o.report).into()),
            unsupported: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorderReport {
    pub plan: String,
    pub depth: usize,
    /// Swaps of adjacent operators in the original plan.
    pub swaps: Vec<SwapReport>,
    /// Valid alternative plans, excluding the original.
    pub alternatives: Vec<String>,
    pub warnings: Vec<String>,
}

impl ReorderReport {
    pub fn render(&self, style: Style) -> String {
        let mut out = String::new();
        let n = self.alternatives.len();
        let noun = if n == 1 { "alternative" } else { "alternatives" };
        writeln!(out, "{}", style.bold(&format!("plan {}: {n} {noun} within depth {}", self.plan, self.depth)))
            .unwrap();
        for s in &self.swaps {
            let verdict = if s.valid { style.good("valid") } else { style.bad("rejected") };
            write!(out, "swap {}/{} ({}): {verdict}", s.upper, s.lower, s.description).unwrap();
            if let Some(c) = &s.conflicts {
                for (name, set) in [
                    ("read_read", &c.read_read),
                    ("read_write", &c.read_write),
                    ("write_write", &c.write_write),
                    ("schema_loss", &c.schema_loss),
                ] {
                    if !set.is_empty() {
                        write!(out, " {name}={}", fields(set)).unwrap();
                    }
                }
                if let Some(reason) = &c.cardinality_reason {
                    write!(out, " cardinality: {reason}").unwrap();
                }
            }
            if let Some(reason) = &s.unsupported {
                write!(out, " ({reason})").unwrap();
            }
            writeln!(out).unwrap();
        }
        for (i, alt) in self.alternatives.iter().enumerate() {
            writeln!(out, "{}", style.bold(&format!("alternative {}:", i + 1))).unwrap();
            for line in alt.lines().take_while(|l| !l.starts_with("udf ")).filter(|l| !l.is_empty()) {
                writeln!(out, "  {line}").unwrap();
            }
        }
        for w in &self.warnings {
            writeln!(out, "{}", style.warn(&format!("warning: {w}"))).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    /// Plan text of the disagreeing plan.
    pub plan: String,
    /// Records file content of the witness dataset.
    pub dataset: String,
    pub sink: String,
    pub expected: Vec<String>,
    pub actual: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub plan: String,
    pub seed: u64,
    pub runs: u64,
    pub datasets: usize,
    pub plans_compared: usize,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mismatch: Option<Mismatch>,
}

impl CheckReport {
    pub fn render(&self, style: Style) -> String {
        let mut out = String::new();
        let verdict = if self.passed { style.good("PASS") } else { style.bad("FAIL") };
        writeln!(
            out,
            "check {}: {verdict} ({} plans x {} datasets, seed {}, {} random runs)",
            self.plan, self.plans_compared, self.datasets, self.seed, self.runs
        )
        .unwrap();
        if let Some(m) = &self.mismatch {
            writeln!(out, "sink {} differs", m.sink).unwrap();
            writeln!(out, "  expected: [{}]", m.expected.join(", ")).unwrap();
            writeln!(out, "  actual:   [{}]", m.actual.join(", ")).unwrap();
            writeln!(out, "plan:").unwrap();
            for line in m.plan.lines().take_while(|l| !l.starts_with("udf ")).filter(|l| !l.is_empty()) {
                writeln!(out, "  {line}").unwrap();
            }
            writeln!(out, "witness dataset:").unwrap();
            for line in m.dataset.lines() {
                writeln!(out, "  {line}").unwrap();
            }
        }
        out
    }
}
