// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

//! Read sets, write sets and emit-cardinality bounds of a single UDF.
//!
//! The write-set approximation walks backwards from every `emit($or)` along
//! true predecessors and collects, for the emitted record:
//!
//! * `O` origin set: inputs copied wholesale (`copy`, `union`) on every path,
//! * `E` explicit modifications: fields set to a computed value on some path,
//! * `C` copy set: fields set to the same field of an input,
//! * `P` projection set: fields set to `null` on some path,
//! * `D` fields set to a non-null value on every path.
//!
//! Paths are merged conservatively (`O`, `C`, `D` shrink; `E`, `P` grow) and
//! the result of every `(statement, record)` pair is memoised, so each pair is
//! expanded at most once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cfg::{build_cfg, compute_chains, Cfg, CfgError, Chains, StmtIdx};
use crate::udf_ir::{FieldId, InputId, Line, SetValue, StmtKind, UdfBody, Var};

/// Which input each field read by a UDF belongs to.
pub type FieldInputs = BTreeMap<FieldId, InputId>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error("emit of undefined output record {var}: no create/copy on the path through lines {path:?}")]
    UndefinedOutputRecord { var: Var, path: Vec<Line> },
    #[error("line {line}: field {field} is read from input {second} but also from input {first}")]
    AmbiguousFieldInput { line: Line, field: FieldId, first: InputId, second: InputId },
    #[error("UDF `{0}` has no reachable emit statement")]
    NoReachableEmit(String),
}

/// The `(O, E, C, P)` tuple of the backward walk, plus the must-defined set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowSets {
    pub origins: BTreeSet<InputId>,
    pub explicit: BTreeSet<FieldId>,
    pub copied: BTreeSet<FieldId>,
    pub projected: BTreeSet<FieldId>,
    pub defined: BTreeSet<FieldId>,
}

/// Position-independent properties of a UDF.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertySets {
    #[serde(rename = "R")]
    pub read: BTreeSet<FieldId>,
    #[serde(rename = "O")]
    pub origins: BTreeSet<InputId>,
    #[serde(rename = "E")]
    pub explicit: BTreeSet<FieldId>,
    #[serde(rename = "C")]
    pub copied: BTreeSet<FieldId>,
    #[serde(rename = "P")]
    pub projected: BTreeSet<FieldId>,
    /// Fields guaranteed to be set on every emitted record.
    #[serde(rename = "D")]
    pub defined: BTreeSet<FieldId>,
}

impl PropertySets {
    fn from_flow(read: BTreeSet<FieldId>, flow: FlowSets) -> Self {
        PropertySets {
            read,
            origins: flow.origins,
            explicit: flow.explicit,
            copied: flow.copied,
            projected: flow.projected,
            defined: flow.defined,
        }
    }
}

/// Emit-cardinality bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bound {
    Finite(u32),
    Infinite,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Finite(n) => write!(f, "{n}"),
            Bound::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Bound::Finite(n) => serializer.serialize_u32(*n),
            Bound::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(n) => Ok(Bound::Finite(n)),
            Raw::Str(s) if s == "inf" => Ok(Bound::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid bound `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EcBounds {
    pub lower: u32,
    pub upper: Bound,
}

impl EcBounds {
    pub const EXACTLY_ONE: EcBounds = EcBounds { lower: 1, upper: Bound::Finite(1) };

    pub fn contains(&self, count: usize) -> bool {
        let above = count as u64 >= u64::from(self.lower);
        let below = match self.upper {
            Bound::Finite(n) => count as u64 <= u64::from(n),
            Bound::Infinite => true,
        };
        above && below
    }
}

impl fmt::Display for EcBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lower, self.upper)
    }
}

/// Memoised results of the backward walk, keyed by statement and record.
#[derive(Debug, Default)]
pub struct MemoTable {
    visited: BTreeSet<(StmtIdx, Var)>,
    sets: BTreeMap<(StmtIdx, Var), FlowSets>,
}

impl MemoTable {
    pub fn is_visited(&self, s: StmtIdx, var: &Var) -> bool {
        self.visited.contains(&(s, var.clone()))
    }

    pub fn get(&self, s: StmtIdx, var: &Var) -> Option<&FlowSets> {
        self.sets.get(&(s, var.clone()))
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Instrumentation of one analysis run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitStats {
    /// Number of `(statement, record)` pairs expanded.
    pub expansions: usize,
    /// Number of lookups answered from the memo table.
    pub memo_hits: usize,
}

/// Fields read through `getField` on reachable statements, with their input.
pub fn field_inputs(udf: &UdfBody, cfg: &Cfg) -> Result<FieldInputs, AnalysisError> {
    let mut out = FieldInputs::new();
    for (i, s) in udf.stmts().iter().enumerate() {
        if !cfg.is_reachable(i) {
            continue;
        }
        if let StmtKind::GetField { record, field, .. } = &s.kind {
            let id = udf.input_id(record).expect("validated input record");
            match out.insert(*field, id) {
                Some(prev) if prev != id => {
                    return Err(AnalysisError::AmbiguousFieldInput {
                        line: s.line,
                        field: *field,
                        first: prev,
                        second: id,
                    })
                }
                _ => {}
            }
        }
    }
    Ok(out)
}

/// Fields whose `getField` result is used somewhere.
pub fn compute_read_set(udf: &UdfBody, cfg: &Cfg, chains: &Chains) -> BTreeSet<FieldId> {
    udf.stmts()
        .iter()
        .enumerate()
        .filter(|(i, _)| cfg.is_reachable(*i))
        .filter_map(|(i, s)| match &s.kind {
            StmtKind::GetField { target, field, .. } if !chains.def_use(i, target).is_empty() => Some(*field),
            _ => None,
        })
        .collect()
}

/// Combines the sets of two paths.
pub fn merge(a: &FlowSets, b: &FlowSets, inputs: &FieldInputs) -> FlowSets {
    let from_origin = |x: &FieldId, origins: &BTreeSet<InputId>| inputs.get(x).is_some_and(|id| origins.contains(id));
    let mut copied: BTreeSet<FieldId> = a.copied.intersection(&b.copied).copied().collect();
    copied.extend(a.copied.iter().filter(|x| from_origin(x, &b.origins)));
    copied.extend(b.copied.iter().filter(|x| from_origin(x, &a.origins)));
    FlowSets {
        origins: a.origins.intersection(&b.origins).copied().collect(),
        explicit: a.explicit.union(&b.explicit).copied().collect(),
        copied,
        projected: a.projected.union(&b.projected).copied().collect(),
        defined: a.defined.intersection(&b.defined).copied().collect(),
    }
}

/// `W = E ∪ P ∪ ⋃ { input_fields(i) \ C : i ∉ O }`.
pub fn compute_write_set(
    sets: &PropertySets,
    input_fields: &BTreeMap<InputId, BTreeSet<FieldId>>,
) -> BTreeSet<FieldId> {
    let mut w: BTreeSet<FieldId> = sets.explicit.union(&sets.projected).copied().collect();
    for (id, fields) in input_fields {
        if !sets.origins.contains(id) {
            w.extend(fields.difference(&sets.copied).copied());
        }
    }
    w
}

/// Backward walk state for one UDF.
pub struct Visitor<'a> {
    udf: &'a UdfBody,
    cfg: &'a Cfg,
    chains: &'a Chains,
    inputs: &'a FieldInputs,
    memo: MemoTable,
    stats: VisitStats,
    path: Vec<Line>,
}

impl<'a> Visitor<'a> {
    pub fn new(udf: &'a UdfBody, cfg: &'a Cfg, chains: &'a Chains, inputs: &'a FieldInputs) -> Self {
        Visitor { udf, cfg, chains, inputs, memo: MemoTable::default(), stats: VisitStats::default(), path: Vec::new() }
    }

    pub fn stats(&self) -> VisitStats {
        self.stats
    }

    pub fn memo(&self) -> &MemoTable {
        &self.memo
    }

    /// Sets describing `record` right after statement `s` executes.
    pub fn visit_stmt(&mut self, s: StmtIdx, record: &Var) -> Result<FlowSets, AnalysisError> {
        if self.memo.is_visited(s, record) {
            self.stats.memo_hits += 1;
            // True predecessors are acyclic, so a visited pair is finished.
            return Ok(self.memo.get(s, record).cloned().expect("visited pair has memo entry"));
        }
        self.memo.visited.insert((s, record.clone()));
        self.stats.expansions += 1;
        self.path.push(self.cfg.line(s));
        let result = self.expand(s, record);
        self.path.pop();
        let sets = result?;
        self.memo.sets.insert((s, record.clone()), sets.clone());
        Ok(sets)
    }

    fn expand(&mut self, s: StmtIdx, record: &Var) -> Result<FlowSets, AnalysisError> {
        let udf = self.udf;
        match &udf.stmts()[s].kind {
            StmtKind::Create { record: r } if r == record => return Ok(FlowSets::default()),
            StmtKind::Copy { record: r, source } if r == record => {
                let id = udf.input_id(source).expect("validated input record");
                return Ok(FlowSets { origins: BTreeSet::from([id]), ..FlowSets::default() });
            }
            _ => {}
        }

        let preds = self.cfg.true_preds(s);
        let Some((&first, rest)) = preds.split_first() else {
            let mut path = self.path.clone();
            path.reverse();
            return Err(AnalysisError::UndefinedOutputRecord { var: record.clone(), path });
        };
        let mut acc = self.visit_stmt(first, record)?;
        for &p in rest {
            let other = self.visit_stmt(p, record)?;
            acc = merge(&acc, &other, self.inputs);
        }
        if !self.cfg.back_preds(s).is_empty() {
            let carried = self.loop_carried(s, record, &acc)?;
            acc = merge(&acc, &carried, self.inputs);
        }

        match &udf.stmts()[s].kind {
            StmtKind::Union { record: r, source } if r == record => {
                acc.origins.insert(udf.input_id(source).expect("validated input record"));
            }
            StmtKind::SetField { record: r, field, value: SetValue::Var(v) } if r == record => {
                let defs = self.chains.use_def(s, v);
                let copies_same_field = !defs.is_empty()
                    && defs
                        .iter()
                        .all(|&d| matches!(&udf.stmts()[d].kind, StmtKind::GetField { field: n, .. } if n == field));
                if copies_same_field {
                    acc.copied.insert(*field);
                } else {
                    acc.explicit.insert(*field);
                }
                acc.defined.insert(*field);
            }
            StmtKind::SetField { record: r, field, value: SetValue::Null } if r == record => {
                acc.projected.insert(*field);
                acc.defined.remove(field);
            }
            _ => {}
        }
        Ok(acc)
    }

    /// Over-approximates the sets arriving at loop header `s` over its back
    /// edges, by summarising every statement of the header's loop.
    fn loop_carried(&mut self, s: StmtIdx, record: &Var, acc: &FlowSets) -> Result<FlowSets, AnalysisError> {
        let members = self.cfg.component(s);
        let mut base = acc.clone();
        // Side entries of an irreducible loop bring their own sets.
        for &b in members.iter().filter(|&&b| b != s) {
            for p in self.cfg.true_preds(b) {
                if !members.contains(&p) {
                    let side = self.visit_stmt(p, record)?;
                    base = merge(&base, &side, self.inputs);
                }
            }
        }

        let mut recreated = false;
        let mut set = BTreeSet::new();
        let mut nulled = BTreeSet::new();
        for &m in &members {
            match &self.udf.stmts()[m].kind {
                StmtKind::Create { record: r } | StmtKind::Copy { record: r, .. } if r == record => recreated = true,
                StmtKind::SetField { record: r, field, value } if r == record => {
                    if *value == SetValue::Null {
                        nulled.insert(*field);
                    } else {
                        set.insert(*field);
                    }
                }
                _ => {}
            }
        }

        let mut carried = base;
        carried.explicit.extend(set.iter().copied());
        carried.projected.extend(nulled.iter().copied());
        if recreated {
            carried.origins.clear();
            carried.copied.clear();
            carried.defined.clear();
        } else {
            carried.copied.retain(|x| !set.contains(x) && !nulled.contains(x));
            carried.defined.retain(|x| !nulled.contains(x));
        }
        Ok(carried)
    }
}

/// Runs the backward walk from every reachable emit (ascending line order)
/// and merges the per-emit sets.
pub fn visit_udf(udf: &UdfBody, cfg: &Cfg, chains: &Chains) -> Result<(PropertySets, VisitStats), AnalysisError> {
    let inputs = field_inputs(udf, cfg)?;
    let read = compute_read_set(udf, cfg, chains);
    let mut visitor = Visitor::new(udf, cfg, chains, &inputs);
    let mut merged: Option<FlowSets> = None;
    for e in udf.emit_indices().into_iter().filter(|&e| cfg.is_reachable(e)) {
        let StmtKind::Emit { record } = &udf.stmts()[e].kind else { unreachable!() };
        let sets = visitor.visit_stmt(e, record)?;
        merged = Some(match merged {
            None => sets,
            Some(acc) => merge(&acc, &sets, &inputs),
        });
    }
    let flow = merged.ok_or_else(|| AnalysisError::NoReachableEmit(udf.name().to_string()))?;
    Ok((PropertySets::from_flow(read, flow), visitor.stats()))
}

/// Per-UDF emit-cardinality bounds plus warnings about emits that can run in
/// the same invocation (the max-combination undercounts those).
pub fn ec_bounds(udf: &UdfBody, cfg: &Cfg) -> (EcBounds, Vec<String>) {
    let stmts = udf.stmts();
    let live: Vec<StmtIdx> = (0..stmts.len()).filter(|&i| cfg.is_reachable(i)).collect();
    let target = |i: StmtIdx| stmts[i].kind.jump_target().and_then(|t| udf.index_of(t));
    let emits: Vec<StmtIdx> = udf.emit_indices().into_iter().filter(|&e| cfg.is_reachable(e)).collect();

    let mut lower = 0;
    let mut upper = Bound::Finite(0);
    for &e in &emits {
        let skippable = live
            .iter()
            .filter(|&&j| j < e)
            .any(|&j| matches!(stmts[j].kind, StmtKind::Return) || target(j).is_some_and(|t| t > e));
        let repeatable = live.iter().filter(|&&j| j > e).any(|&j| target(j).is_some_and(|t| t <= e));
        lower = lower.max(if skippable { 0 } else { 1 });
        upper = upper.max(if repeatable { Bound::Infinite } else { Bound::Finite(1) });
    }

    let mut warnings = Vec::new();
    for &a in &emits {
        for &b in &emits {
            if a < b && (cfg.reaches(a, b) || cfg.reaches(b, a)) {
                warnings.push(format!(
                    "emits at lines {} and {} can both run in one invocation; the upper bound may be too low",
                    stmts[a].line, stmts[b].line
                ));
            }
        }
    }
    (EcBounds { lower, upper }, warnings)
}

/// Everything known about one UDF independent of its plan position.
#[derive(Debug, Clone)]
pub struct UdfAnalysis {
    pub sets: PropertySets,
    pub ec: EcBounds,
    /// No two emit statements can run in the same invocation, so `ec` is a
    /// sound bound.
    pub ec_exact: bool,
    /// Every field read with `getField`, whether or not the value is used.
    pub accessed: FieldInputs,
    pub warnings: Vec<String>,
    pub stats: VisitStats,
}

impl UdfAnalysis {
    /// Input fields as seen by the UDF itself, used when no plan context exists.
    pub fn accessed_by_input(&self, arity: usize) -> BTreeMap<InputId, BTreeSet<FieldId>> {
        let mut out: BTreeMap<InputId, BTreeSet<FieldId>> =
            (1..=arity as u8).map(|i| (InputId(i), BTreeSet::new())).collect();
        for (field, id) in &self.accessed {
            out.entry(*id).or_default().insert(*field);
        }
        out
    }
}

pub fn analyze_udf(udf: &UdfBody) -> Result<UdfAnalysis, AnalysisError> {
    let cfg = build_cfg(udf);
    let chains = compute_chains(udf, &cfg)?;
    let accessed = field_inputs(udf, &cfg)?;
    let (sets, stats) = visit_udf(udf, &cfg, &chains)?;
    let (ec, mut warnings) = ec_bounds(udf, &cfg);
    let ec_exact = warnings.is_empty();
    let dead = cfg.unreachable_lines();
    if !dead.is_empty() {
        warnings.insert(0, format!("unreachable statements ignored: lines {dead:?}"));
    }
    Ok(UdfAnalysis { sets, ec, ec_exact, accessed, warnings, stats })
}
