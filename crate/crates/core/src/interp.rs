// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

//! Reference interpreter for UDFs and plans over in-memory records.
//!
//! Field values are integers; arithmetic wraps. A conditional jump is taken
//! when its condition is non-zero. Running off the end of a UDF returns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::plan::{NodeId, NodeKind, PlanGraph, Sof};
use crate::udf_ir::{Expr, FieldId, Line, SetValue, StmtKind, UdfBody, Var};

/// A record: present fields and their values.
pub type Record = BTreeMap<FieldId, i64>;

/// Records per named source.
pub type Dataset = BTreeMap<String, Vec<Record>>;

/// Sorted records per sink; equal multisets compare equal.
pub type SinkOutput = BTreeMap<String, Vec<Record>>;

pub const DEFAULT_STEP_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("UDF `{udf}` takes {expected} input records, got {got}")]
    Arity { udf: String, expected: usize, got: usize },
    #[error("line {line}: field {field} is not present in {record}")]
    MissingField { line: Line, field: FieldId, record: Var },
    #[error("line {line}: {record} is used before create or copy")]
    UncreatedRecord { line: Line, record: Var },
    #[error("line {line}: {var} has no value")]
    UnsetVariable { line: Line, var: Var },
    #[error("no termination within {limit} steps")]
    StepLimit { limit: usize },
}

/// One UDF invocation: the emitted records and the executed lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub emitted: Vec<Record>,
    pub path: Vec<Line>,
}

/// Runs `udf` on `inputs` and returns the emitted records in order.
pub fn exec_udf(udf: &UdfBody, inputs: &[&Record]) -> Result<Vec<Record>, ExecError> {
    exec_udf_traced(udf, inputs, DEFAULT_STEP_LIMIT).map(|e| e.emitted)
}

/// Runs `udf`, recording the executed lines, with at most `limit` steps.
pub fn exec_udf_traced(udf: &UdfBody, inputs: &[&Record], limit: usize) -> Result<Execution, ExecError> {
    if inputs.len() != udf.arity() {
        return Err(ExecError::Arity { udf: udf.name().to_string(), expected: udf.arity(), got: inputs.len() });
    }
    let params: BTreeMap<&Var, &Record> = udf.params().iter().zip(inputs.iter().copied()).collect();
    let mut scalars: BTreeMap<&Var, i64> = BTreeMap::new();
    let mut records: BTreeMap<&Var, Record> = BTreeMap::new();
    let mut out = Execution { emitted: Vec::new(), path: Vec::new() };
    let stmts = udf.stmts();
    let mut pc = 0;
    while pc < stmts.len() {
        if out.path.len() == limit {
            return Err(ExecError::StepLimit { limit });
        }
        let stmt = &stmts[pc];
        let line = stmt.line;
        out.path.push(line);
        pc += 1;
        let param =
            |v: &Var| params.get(v).copied().ok_or_else(|| ExecError::UncreatedRecord { line, record: v.clone() });
        match &stmt.kind {
            StmtKind::GetField { target, record, field } => {
                let value = *param(record)?.get(field).ok_or_else(|| ExecError::MissingField {
                    line,
                    field: *field,
                    record: record.clone(),
                })?;
                scalars.insert(target, value);
            }
            StmtKind::SetField { record, field, value } => {
                let value = match value {
                    SetValue::Var(v) => {
                        Some(*scalars.get(v).ok_or_else(|| ExecError::UnsetVariable { line, var: v.clone() })?)
                    }
                    SetValue::Null => None,
                };
                let rec = records
                    .get_mut(record)
                    .ok_or_else(|| ExecError::UncreatedRecord { line, record: record.clone() })?;
                match value {
                    Some(v) => rec.insert(*field, v),
                    None => rec.remove(field),
                };
            }
            StmtKind::Create { record } => {
                records.insert(record, Record::new());
            }
            StmtKind::Copy { record, source } => {
                records.insert(record, param(source)?.clone());
            }
            StmtKind::Union { record, source } => {
                let src = param(source)?;
                let rec = records
                    .get_mut(record)
                    .ok_or_else(|| ExecError::UncreatedRecord { line, record: record.clone() })?;
                for (f, v) in src {
                    rec.entry(*f).or_insert(*v);
                }
            }
            StmtKind::Emit { record } => {
                let rec =
                    records.get(record).ok_or_else(|| ExecError::UncreatedRecord { line, record: record.clone() })?;
                out.emitted.push(rec.clone());
            }
            StmtKind::Assign { target, expr } => {
                let value = eval(expr, &scalars, line)?;
                scalars.insert(target, value);
            }
            StmtKind::CondJump { cond, target } => {
                let c = *scalars.get(cond).ok_or_else(|| ExecError::UnsetVariable { line, var: cond.clone() })?;
                if c != 0 {
                    pc = udf.index_of(*target).expect("validated jump target");
                }
            }
            StmtKind::Jump { target } => pc = udf.index_of(*target).expect("validated jump target"),
            StmtKind::Return => break,
        }
    }
    Ok(out)
}

fn eval(expr: &Expr, scalars: &BTreeMap<&Var, i64>, line: Line) -> Result<i64, ExecError> {
    Ok(match expr {
        Expr::Var(v) => *scalars.get(v).ok_or_else(|| ExecError::UnsetVariable { line, var: v.clone() })?,
        Expr::Const(c) => *c,
        Expr::Neg(inner) => eval(inner, scalars, line)?.wrapping_neg(),
        Expr::Binary(op, l, r) => op.apply(eval(l, scalars, line)?, eval(r, scalars, line)?),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanExecError {
    #[error("no data for source `{0}`")]
    MissingSource(String),
    #[error("data given for unknown source `{0}`")]
    UnknownSource(String),
    #[error("record {index} of source `{source_name}` has fields {found:?}, expected {expected:?}")]
    SourceSchema { source_name: String, index: usize, found: Vec<FieldId>, expected: Vec<FieldId> },
    #[error("operator `{node}` failed on {}: {source}", show_inputs(.inputs))]
    Udf { node: String, inputs: Vec<Record>, source: ExecError },
    #[error("operator `{node}`: key field {field} missing from {}", format_record(.record))]
    MissingKey { node: String, field: FieldId, record: Record },
}

fn show_inputs(inputs: &[Record]) -> String {
    inputs.iter().map(format_record).collect::<Vec<_>>().join(" and ")
}

fn key_of(node: &str, keys: &[FieldId], record: &Record) -> Result<Vec<i64>, PlanExecError> {
    keys.iter()
        .map(|k| {
            record.get(k).copied().ok_or_else(|| PlanExecError::MissingKey {
                node: node.to_string(),
                field: *k,
                record: record.clone(),
            })
        })
        .collect()
}

fn group<'r>(
    node: &str,
    keys: &[FieldId],
    records: &'r [Record],
) -> Result<BTreeMap<Vec<i64>, &'r Record>, PlanExecError> {
    let mut groups: BTreeMap<Vec<i64>, &Record> = BTreeMap::new();
    for r in records {
        let k = key_of(node, keys, r)?;
        groups.entry(k).and_modify(|rep| *rep = (*rep).min(r)).or_insert(r);
    }
    Ok(groups)
}

/// Runs every operator of `plan` on `data` and collects each sink's records.
///
/// Map calls its UDF once per record, Match once per pair of records with
/// equal keys, Cross once per pair. Reduce calls it once per key group and
/// CoGroup once per key present on both inputs, each with the group's
/// smallest record.
pub fn exec_plan(plan: &PlanGraph, data: &Dataset) -> Result<SinkOutput, PlanExecError> {
    exec_plan_edges(plan, data).map(|edges| {
        plan.sinks()
            .map(|s| {
                let mut records = edges[&plan.node(s).inputs[0]].clone();
                records.sort();
                (plan.node(s).name.clone(), records)
            })
            .collect()
    })
}

/// Records leaving every source and operator.
pub fn exec_plan_edges(plan: &PlanGraph, data: &Dataset) -> Result<BTreeMap<NodeId, Vec<Record>>, PlanExecError> {
    for name in data.keys() {
        let known = plan.find(name).is_some_and(|id| matches!(plan.node(id).kind, NodeKind::Source { .. }));
        if !known {
            return Err(PlanExecError::UnknownSource(name.clone()));
        }
    }
    let mut edges: BTreeMap<NodeId, Vec<Record>> = BTreeMap::new();
    for id in plan.topological_order() {
        let node = plan.node(id);
        let produced = match &node.kind {
            NodeKind::Source { fields } => {
                let records = data.get(&node.name).ok_or_else(|| PlanExecError::MissingSource(node.name.clone()))?;
                for (index, r) in records.iter().enumerate() {
                    if !r.keys().copied().eq(fields.iter().copied()) {
                        return Err(PlanExecError::SourceSchema {
                            source_name: node.name.clone(),
                            index,
                            found: r.keys().copied().collect(),
                            expected: fields.iter().copied().collect(),
                        });
                    }
                }
                records.clone()
            }
            NodeKind::Sink { .. } => continue,
            NodeKind::Operator { sof, keys, udf } => {
                let body = plan.udf(udf).expect("validated udf");
                let ins: Vec<&[Record]> = node.inputs.iter().map(|i| edges[i].as_slice()).collect();
                let mut out = Vec::new();
                let mut call = |args: &[&Record]| -> Result<(), PlanExecError> {
                    let emitted = exec_udf(body, args).map_err(|source| PlanExecError::Udf {
                        node: node.name.clone(),
                        inputs: args.iter().map(|r| (*r).clone()).collect(),
                        source,
                    })?;
                    out.extend(emitted);
                    Ok(())
                };
                match sof {
                    Sof::Map => {
                        for r in ins[0] {
                            call(&[r])?;
                        }
                    }
                    Sof::Cross => {
                        for l in ins[0] {
                            for r in ins[1] {
                                call(&[l, r])?;
                            }
                        }
                    }
                    Sof::Match => {
                        let mut right: BTreeMap<Vec<i64>, Vec<&Record>> = BTreeMap::new();
                        for r in ins[1] {
                            right.entry(key_of(&node.name, &keys[1], r)?).or_default().push(r);
                        }
                        for l in ins[0] {
                            let k = key_of(&node.name, &keys[0], l)?;
                            for r in right.get(&k).into_iter().flatten() {
                                call(&[l, r])?;
                            }
                        }
                    }
                    Sof::Reduce => {
                        for rep in group(&node.name, &keys[0], ins[0])?.values() {
                            call(&[rep])?;
                        }
                    }
                    Sof::CoGroup => {
                        let left = group(&node.name, &keys[0], ins[0])?;
                        let right = group(&node.name, &keys[1], ins[1])?;
                        for (k, l) in &left {
                            if let Some(r) = right.get(k) {
                                call(&[l, r])?;
                            }
                        }
                    }
                }
                out
            }
        };
        edges.insert(id, produced);
    }
    Ok(edges)
}

/// `{0:1, 1:2}`
pub fn format_record(record: &Record) -> String {
    let items: Vec<String> = record.iter().map(|(f, v)| format!("{f}:{v}")).collect();
    format!("{{{}}}", items.join(", "))
}

/// One `Name: {field:value, ...}` line per record, sources in name order.
pub fn format_dataset(data: &Dataset) -> String {
    let mut out = String::new();
    for (name, records) in data {
        for r in records {
            out.push_str(&format!("{name}: {}\n", format_record(r)));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct RecordsError {
    pub line: usize,
    pub message: String,
}

/// Parses a records file: `Name: {field:value, ...}` per line, `#` comments.
pub fn parse_records(text: &str) -> Result<Dataset, RecordsError> {
    let mut data = Dataset::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: &str| RecordsError { line, message: message.to_string() };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (name, rest) = content.split_once(':').ok_or_else(|| err("expected `Name: {...}`"))?;
        let name = name.trim();
        if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Err(err("invalid source name"));
        }
        let body = rest
            .trim()
            .strip_prefix('{')
            .and_then(|b| b.strip_suffix('}'))
            .ok_or_else(|| err("expected a record in braces"))?;
        let mut record = Record::new();
        for item in body.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (f, v) = item.split_once(':').ok_or_else(|| err("expected `field:value`"))?;
            let f: FieldId = f.trim().parse().map_err(|_| err(&format!("invalid field id `{}`", f.trim())))?;
            let v: i64 = v.trim().parse().map_err(|_| err(&format!("invalid value `{}`", v.trim())))?;
            if record.insert(f, v).is_some() {
                return Err(err(&format!("field {f} given twice")));
            }
        }
        data.entry(name.to_string()).or_default().push(record);
    }
    Ok(data)
}

/// Random records for every source of `plan`, values uniform in `[0, 9]`,
/// between 0 and `max_records` records per source.
pub fn random_dataset<R: Rng>(plan: &PlanGraph, rng: &mut R, max_records: usize) -> Dataset {
    let mut data = Dataset::new();
    for id in plan.sources() {
        let node = plan.node(id);
        let NodeKind::Source { fields } = &node.kind else { unreachable!() };
        let n = rng.gen_range(0..=max_records);
        let records = (0..n).map(|_| fields.iter().map(|&f| (f, rng.gen_range(0..=9))).collect()).collect();
        data.insert(node.name.clone(), records);
    }
    data
}

/// [`random_dataset`] driven by a ChaCha8 generator seeded with `seed`.
pub fn seeded_dataset(plan: &PlanGraph, seed: u64, max_records: usize) -> Dataset {
    random_dataset(plan, &mut ChaCha8Rng::seed_from_u64(seed), max_records)
}

/// Fields present on every record of `records`, and on some record.
pub fn observed_fields(records: &[Record]) -> (BTreeSet<FieldId>, BTreeSet<FieldId>) {
    let mut some = BTreeSet::new();
    let mut every: Option<BTreeSet<FieldId>> = None;
    for r in records {
        let keys: BTreeSet<FieldId> = r.keys().copied().collect();
        some.extend(keys.iter().copied());
        every = Some(match every {
            None => keys,
            Some(e) => e.intersection(&keys).copied().collect(),
        });
    }
    (every.unwrap_or_default(), some)
}

/// First sink whose records differ between two runs.
pub fn first_difference<'a>(a: &'a SinkOutput, b: &'a SinkOutput) -> Option<SinkDiff<'a>> {
    let names: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    names.into_iter().find_map(|name| {
        let left = a.get(name).map(Vec::as_slice).unwrap_or_default();
        let right = b.get(name).map(Vec::as_slice).unwrap_or_default();
        (left != right).then_some(SinkDiff { sink: name, left, right })
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SinkDiff<'a> {
    pub sink: &'a str,
    pub left: &'a [Record],
    pub right: &'a [Record],
}

impl fmt::Display for SinkDiff<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |rs: &[Record]| format!("[{}]", rs.iter().map(format_record).collect::<Vec<_>>().join(", "));
        write!(f, "sink {}: {} vs {}", self.sink, show(self.left), show(self.right))
    }
}
