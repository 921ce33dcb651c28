// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

//! Swapping adjacent operators.
//!
//! Three swap shapes are considered, always between a producer (`upper`) and
//! its only consumer (`lower`):
//!
//! * two Maps exchange places,
//! * a Map feeding a Match or Cross moves after it ([`SwapKind::PullUp`]),
//! * a Map consuming a Match or Cross moves onto one of its inputs
//!   ([`SwapKind::PushDown`]).
//!
//! A swap is valid when the operators have no read-write or write-write
//! conflict, the records leaving the pair keep their schema, the moved Map
//! has suitable emit cardinality and the swapped plan annotates cleanly.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;

use serde::Serialize;

use crate::analysis::{compute_write_set, Bound, EcBounds};
use crate::plan::{
    analyze_udfs, annotate_with, propagate_collecting, Annotation, NodeId, PlanError, PlanGraph, Sof, UdfCache,
};
use crate::udf_ir::{FieldId, InputId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReorderError {
    #[error("`{upper}` is not a direct producer of `{lower}`")]
    NotAdjacent { upper: String, lower: String },
    #[error("`{0}` is not an operator")]
    NotOperator(String),
    #[error("cannot swap `{upper}` and `{lower}`: {reason}")]
    Unsupported { upper: String, lower: String, reason: String },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Conflicts between two adjacent operators. A field is listed under its
/// most severe conflict only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConflictReport {
    pub read_read: BTreeSet<FieldId>,
    pub read_write: BTreeSet<FieldId>,
    pub write_write: BTreeSet<FieldId>,
    /// Fields whose presence changes, or that some consumer needs and no
    /// longer gets, after the swap.
    pub schema_loss: BTreeSet<FieldId>,
    pub cardinality_block: bool,
    pub cardinality_reason: Option<String>,
}

impl ConflictReport {
    /// Read-read conflicts never block a swap.
    pub fn blocks(&self) -> bool {
        !self.read_write.is_empty()
            || !self.write_write.is_empty()
            || !self.schema_loss.is_empty()
            || self.cardinality_block
    }

    fn block(&mut self, reason: String) {
        self.cardinality_block = true;
        self.cardinality_reason = Some(reason);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapKind {
    /// Two unary operators.
    Unary,
    /// A Map moves from an input of a binary operator to its output.
    PullUp,
    /// A Map moves from the output of a binary operator onto the given input.
    PushDown(InputId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Swap {
    pub upper: NodeId,
    pub lower: NodeId,
    pub kind: SwapKind,
}

impl Swap {
    /// The plan with `lower` moved before `upper`.
    pub fn apply(&self, plan: &PlanGraph) -> Result<PlanGraph, PlanError> {
        let a = plan.node(self.upper);
        let b = plan.node(self.lower);
        let mut rewired: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for (c, slot) in plan.consumers(self.lower) {
            let mut inputs = rewired.remove(&c).unwrap_or_else(|| plan.node(c).inputs.clone());
            inputs[usize::from(slot.0) - 1] = self.upper;
            rewired.insert(c, inputs);
        }
        match self.kind {
            SwapKind::Unary => {
                rewired.insert(self.lower, a.inputs.clone());
                rewired.insert(self.upper, vec![self.lower]);
            }
            SwapKind::PullUp => {
                let mut inputs = b.inputs.clone();
                let slot = inputs.iter().position(|&i| i == self.upper).expect("adjacent");
                inputs[slot] = a.inputs[0];
                rewired.insert(self.lower, inputs);
                rewired.insert(self.upper, vec![self.lower]);
            }
            SwapKind::PushDown(side) => {
                let slot = usize::from(side.0) - 1;
                rewired.insert(self.lower, vec![a.inputs[slot]]);
                let mut inputs = a.inputs.clone();
                inputs[slot] = self.lower;
                rewired.insert(self.upper, inputs);
            }
        }
        plan.with_inputs(&rewired)
    }

    pub fn describe(&self, plan: &PlanGraph) -> String {
        let a = &plan.node(self.upper).name;
        let b = &plan.node(self.lower).name;
        match self.kind {
            SwapKind::Unary | SwapKind::PullUp => format!("move {a} after {b}"),
            SwapKind::PushDown(side) => format!("move {b} onto input {side} of {a}"),
        }
    }
}

/// Outcome of one candidate swap.
#[derive(Debug, Clone)]
pub struct SwapOutcome {
    pub swap: Swap,
    pub valid: bool,
    pub report: ConflictReport,
    /// The plan after the swap, whether or not the swap is valid.
    pub swapped: PlanGraph,
}

fn operator_name(plan: &PlanGraph, id: NodeId) -> Result<(&str, Sof), ReorderError> {
    let node = plan.node(id);
    node.sof().map(|s| (node.name.as_str(), s)).ok_or_else(|| ReorderError::NotOperator(node.name.clone()))
}

/// Every way of swapping `upper` with its consumer `lower`.
pub fn swap_candidates(plan: &PlanGraph, upper: NodeId, lower: NodeId) -> Result<Vec<Swap>, ReorderError> {
    let (a_name, a_sof) = operator_name(plan, upper)?;
    let (b_name, b_sof) = operator_name(plan, lower)?;
    if !plan.node(lower).inputs.contains(&upper) {
        return Err(ReorderError::NotAdjacent { upper: a_name.into(), lower: b_name.into() });
    }
    let unsupported =
        |reason: &str| ReorderError::Unsupported { upper: a_name.into(), lower: b_name.into(), reason: reason.into() };
    if plan.consumers(upper).len() != 1 {
        return Err(unsupported("the producer has more than one consumer"));
    }
    let swaps = match (a_sof.arity(), b_sof.arity()) {
        (1, 1) => vec![Swap { upper, lower, kind: SwapKind::Unary }],
        (1, 2) => vec![Swap { upper, lower, kind: SwapKind::PullUp }],
        (2, 1) => (1..=2).map(|i| Swap { upper, lower, kind: SwapKind::PushDown(InputId(i)) }).collect(),
        _ => return Err(unsupported("two binary operators are not reordered")),
    };
    Ok(swaps)
}

/// Producer/consumer operator pairs the producer feeds exclusively.
pub fn adjacent_pairs(plan: &PlanGraph) -> Vec<(NodeId, NodeId)> {
    let mut out = Vec::new();
    for upper in plan.operators() {
        let consumers = plan.consumers(upper);
        if let [(lower, _)] = consumers.as_slice() {
            if plan.node(*lower).is_operator() {
                out.push((upper, *lower));
            }
        }
    }
    out
}

fn cardinality_check(plan: &PlanGraph, swap: &Swap, cache: &UdfCache, report: &mut ConflictReport) {
    let a = plan.node(swap.upper);
    let b = plan.node(swap.lower);
    for node in [a, b] {
        let sof = node.sof().expect("operator");
        if sof.forms_groups() {
            report.block(format!("{} is a {sof}; operators that form groups are not reordered", node.name));
            return;
        }
    }
    let (moved, allowed): (&crate::plan::Node, &[EcBounds]) = match swap.kind {
        SwapKind::Unary => return,
        SwapKind::PullUp => (a, &[EcBounds::EXACTLY_ONE]),
        SwapKind::PushDown(_) => (b, &[EcBounds::EXACTLY_ONE, EcBounds { lower: 0, upper: Bound::Finite(1) }]),
    };
    let analysis = &cache[moved.udf_name().expect("operator")];
    let ec = analysis.ec;
    if !analysis.ec_exact {
        let across = if moved.name == a.name { &b.name } else { &a.name };
        report.block(format!("{} may emit several records per call and cannot cross {across}", moved.name));
    } else if !allowed.contains(&ec) {
        let across = if moved.name == a.name { &b.name } else { &a.name };
        report.block(format!("{} has emit cardinality {ec} and cannot cross {across}", moved.name));
    }
}

/// Conflicts of `swap` given the annotation of the original plan and the
/// swapped plan. Write sets are taken at both positions.
pub fn conflicts(
    plan: &PlanGraph,
    annotation: &Annotation,
    swap: &Swap,
    swapped: &PlanGraph,
    cache: &UdfCache,
) -> ConflictReport {
    let (post, issues) = propagate_collecting(swapped, cache, true);
    let write_set = |id: NodeId| -> BTreeSet<FieldId> {
        let node = swapped.node(id);
        let sets = &cache[node.udf_name().expect("operator")].sets;
        let fields: BTreeMap<InputId, BTreeSet<FieldId>> = (0..node.inputs.len())
            .map(|slot| {
                let input = InputId(slot as u8 + 1);
                (input, post.input(swapped, id, input).possible.clone())
            })
            .collect();
        let mut w = compute_write_set(sets, &fields);
        w.extend(annotation.operator(id).write_set.iter().copied());
        w
    };
    let (r1, w1) = (&annotation.operator(swap.upper).read_set, write_set(swap.upper));
    let (r2, w2) = (&annotation.operator(swap.lower).read_set, write_set(swap.lower));

    let mut report = ConflictReport::default();
    report.write_write = w1.intersection(&w2).copied().collect();
    report.read_write =
        r1.intersection(&w2).chain(w1.intersection(r2)).filter(|f| !report.write_write.contains(f)).copied().collect();
    report.read_read = r1
        .intersection(r2)
        .filter(|f| !report.write_write.contains(f) && !report.read_write.contains(f))
        .copied()
        .collect();

    let before = annotation.schemas.output(swap.lower);
    let after = post.output(swap.upper);
    report.schema_loss.extend(before.guaranteed.symmetric_difference(&after.guaranteed).copied());
    report.schema_loss.extend(before.possible.symmetric_difference(&after.possible).copied());
    for issue in issues {
        match issue {
            PlanError::KeyOutsideSchema { field, .. }
            | PlanError::MissingInputField { field, .. }
            | PlanError::FieldLoss { field, .. } => {
                report.schema_loss.insert(field);
            }
            PlanError::FieldCollision { fields, .. } => report.schema_loss.extend(fields),
            _ => {}
        }
    }
    cardinality_check(plan, swap, cache, &mut report);
    report
}

/// Evaluates one candidate swap of an annotated plan.
pub fn evaluate_swap(
    plan: &PlanGraph,
    annotation: &Annotation,
    swap: Swap,
    cache: &mut UdfCache,
) -> Result<SwapOutcome, ReorderError> {
    let swapped = swap.apply(plan)?;
    let report = conflicts(plan, annotation, &swap, &swapped, cache);
    let valid = !report.blocks() && annotate_with(&swapped, cache).is_ok();
    Ok(SwapOutcome { swap, valid, report, swapped })
}

/// Whether `upper` and its consumer `lower` can be swapped. When several
/// swaps exist (a Map pushed onto either input), the first valid one is
/// returned, otherwise the first candidate.
pub fn swap_valid(plan: &PlanGraph, upper: NodeId, lower: NodeId) -> Result<SwapOutcome, ReorderError> {
    let candidates = swap_candidates(plan, upper, lower)?;
    let mut cache = UdfCache::new();
    let annotation = annotate_with(plan, &mut cache)?;
    let mut first = None;
    for swap in candidates {
        let outcome = evaluate_swap(plan, &annotation, swap, &mut cache)?;
        if outcome.valid {
            return Ok(outcome);
        }
        first.get_or_insert(outcome);
    }
    Ok(first.expect("at least one candidate"))
}

/// Every valid swap of `plan`, in producer order.
pub fn valid_swaps(plan: &PlanGraph, cache: &mut UdfCache) -> Result<Vec<SwapOutcome>, ReorderError> {
    let annotation = annotate_with(plan, cache)?;
    let mut out = Vec::new();
    for (upper, lower) in adjacent_pairs(plan) {
        let Ok(candidates) = swap_candidates(plan, upper, lower) else { continue };
        for swap in candidates {
            let outcome = evaluate_swap(plan, &annotation, swap, cache)?;
            if outcome.valid {
                out.push(outcome);
            }
        }
    }
    Ok(out)
}

/// Plans reachable from `plan` by at most `max_depth` valid swaps, the
/// original first, in breadth-first order without duplicates.
pub fn enumerate_plans(plan: &PlanGraph, max_depth: usize) -> Result<Vec<PlanGraph>, ReorderError> {
    let mut cache = UdfCache::new();
    analyze_udfs(plan, &mut cache)?;
    annotate_with(plan, &mut cache)?;
    let mut seen: HashSet<String> = HashSet::from([plan.canonical_form()]);
    let mut out = vec![plan.clone()];
    let mut queue = VecDeque::from([(0usize, 0usize)]);
    while let Some((index, depth)) = queue.pop_front() {
        if depth == max_depth {
            continue;
        }
        let current = out[index].clone();
        for outcome in valid_swaps(&current, &mut cache)? {
            if seen.insert(outcome.swapped.canonical_form()) {
                out.push(outcome.swapped);
                queue.push_back((out.len() - 1, depth + 1));
            }
        }
    }
    Ok(out)
}

impl fmt::Display for ConflictReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |s: &BTreeSet<FieldId>| format!("{s:?}");
        write!(
            f,
            "read_read={} read_write={} write_write={} schema_loss={}",
            list(&self.read_read),
            list(&self.read_write),
            list(&self.write_write),
            list(&self.schema_loss)
        )?;
        if let Some(reason) = &self.cardinality_reason {
            write!(f, " cardinality_block=({reason})")?;
        }
        Ok(())
    }
}
