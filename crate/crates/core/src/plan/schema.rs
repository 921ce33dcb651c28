// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

//! Schema propagation and per-operator annotation.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::{NodeId, NodeKind, PlanError, PlanGraph};
use crate::analysis::{analyze_udf, compute_write_set, EcBounds, PropertySets, UdfAnalysis};
use crate::udf_ir::{FieldId, InputId, StmtKind, UdfBody};

/// Fields on the records crossing one channel.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schema {
    /// Present on every record.
    pub guaranteed: BTreeSet<FieldId>,
    /// Present on some record; a superset of `guaranteed`.
    pub possible: BTreeSet<FieldId>,
}

/// Output schema of every source and operator. All out-edges of a node carry
/// the same records, so edges are identified by their producer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schemas {
    outputs: BTreeMap<NodeId, Schema>,
}

impl Schemas {
    pub fn output(&self, producer: NodeId) -> &Schema {
        &self.outputs[&producer]
    }

    /// Schema arriving at input `id` of `node`.
    pub fn input(&self, plan: &PlanGraph, node: NodeId, id: InputId) -> &Schema {
        self.output(plan.node(node).inputs[usize::from(id.0) - 1])
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Schema)> {
        self.outputs.iter().map(|(k, v)| (*k, v))
    }
}

/// Analyses of UDFs by name; positions share one analysis per UDF.
pub type UdfCache = BTreeMap<String, Arc<UdfAnalysis>>;

#[derive(Debug, Clone)]
pub struct OperatorAnnotation {
    pub udf: String,
    pub sets: PropertySets,
    /// Write set at this operator's position.
    pub write_set: BTreeSet<FieldId>,
    pub ec: EcBounds,
    /// UDF read set plus every key field.
    pub read_set: BTreeSet<FieldId>,
    /// Fields each input must carry: every `getField` field and the keys.
    pub required: BTreeMap<InputId, BTreeSet<FieldId>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Annotation {
    pub schemas: Schemas,
    pub operators: BTreeMap<NodeId, OperatorAnnotation>,
}

impl Annotation {
    pub fn operator(&self, id: NodeId) -> &OperatorAnnotation {
        &self.operators[&id]
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.operators.values().flat_map(|a| a.warnings.iter().map(String::as_str))
    }
}

fn analyze_all(plan: &PlanGraph, cache: &mut UdfCache) -> Result<(), PlanError> {
    for id in plan.operators() {
        let name = plan.node(id).udf_name().expect("operator");
        if !cache.contains_key(name) {
            let udf = plan.udf(name).expect("validated udf");
            let analysis = analyze_udf(udf).map_err(|source| PlanError::Analysis { name: name.to_string(), source })?;
            cache.insert(name.to_string(), Arc::new(analysis));
        }
    }
    Ok(())
}

/// Inputs that some `copy` or `union` of the UDF may bring into the output.
fn may_origins(udf: &UdfBody) -> BTreeSet<InputId> {
    udf.stmts()
        .iter()
        .filter_map(|s| match &s.kind {
            StmtKind::Copy { source, .. } | StmtKind::Union { source, .. } => udf.input_id(source),
            _ => None,
        })
        .collect()
}

fn required_fields(plan: &PlanGraph, node: NodeId, analysis: &UdfAnalysis) -> BTreeMap<InputId, BTreeSet<FieldId>> {
    let n = plan.node(node);
    let mut out: BTreeMap<InputId, BTreeSet<FieldId>> = BTreeMap::new();
    for slot in 0..n.inputs.len() {
        let id = InputId(slot as u8 + 1);
        out.insert(id, n.keys(id).iter().copied().collect());
    }
    for (field, id) in &analysis.accessed {
        out.entry(*id).or_default().insert(*field);
    }
    out
}

fn propagate(plan: &PlanGraph, udfs: &UdfCache, check_sinks: bool) -> Result<Schemas, PlanError> {
    let (schemas, mut issues) = propagate_collecting(plan, udfs, check_sinks);
    if issues.is_empty() {
        Ok(schemas)
    } else {
        Err(issues.swap_remove(0))
    }
}

/// Schemas of every channel together with every schema problem found, in
/// topological order. Problems do not stop propagation.
pub fn propagate_collecting(plan: &PlanGraph, udfs: &UdfCache, check_sinks: bool) -> (Schemas, Vec<PlanError>) {
    let mut issues = Vec::new();
    let mut outputs: BTreeMap<NodeId, Schema> = BTreeMap::new();
    for id in plan.topological_order() {
        let node = plan.node(id);
        match &node.kind {
            NodeKind::Source { fields } => {
                outputs.insert(id, Schema { guaranteed: fields.clone(), possible: fields.clone() });
            }
            NodeKind::Operator { udf, .. } => {
                let analysis = &udfs[udf];
                let body = plan.udf(udf).expect("validated udf");
                let ins: Vec<&Schema> = node.inputs.iter().map(|i| &outputs[i]).collect();

                if ins.len() == 2 {
                    let shared: Vec<FieldId> = ins[0].possible.intersection(&ins[1].possible).copied().collect();
                    if !shared.is_empty() {
                        issues.push(PlanError::FieldCollision { node: node.name.clone(), fields: shared });
                    }
                }
                for (slot, schema) in ins.iter().enumerate() {
                    let input = InputId(slot as u8 + 1);
                    for &field in node.keys(input).iter().filter(|k| !schema.guaranteed.contains(k)) {
                        issues.push(PlanError::KeyOutsideSchema { node: node.name.clone(), field, input });
                    }
                }
                for (&field, &input) in &analysis.accessed {
                    if !ins[usize::from(input.0) - 1].guaranteed.contains(&field) {
                        issues.push(PlanError::MissingInputField { node: node.name.clone(), field, input });
                    }
                }

                let sets = &analysis.sets;
                let mut guaranteed = BTreeSet::new();
                for origin in &sets.origins {
                    guaranteed.extend(ins[usize::from(origin.0) - 1].guaranteed.iter().copied());
                }
                guaranteed.retain(|f| !sets.projected.contains(f));
                guaranteed.extend(sets.defined.iter().copied());

                let mut possible = BTreeSet::new();
                for origin in may_origins(body) {
                    possible.extend(ins[usize::from(origin.0) - 1].possible.iter().copied());
                }
                possible.extend(sets.explicit.iter().copied());
                possible.extend(sets.copied.iter().copied());
                possible.extend(guaranteed.iter().copied());
                outputs.insert(id, Schema { guaranteed, possible });
            }
            NodeKind::Sink { consumes } => {
                if !check_sinks {
                    continue;
                }
                let incoming = &outputs[&node.inputs[0]];
                for &field in consumes.iter().filter(|f| !incoming.guaranteed.contains(f)) {
                    let responsible = responsible_for_loss(plan, &outputs, node.inputs[0], field);
                    issues.push(PlanError::FieldLoss { sink: node.name.clone(), field, responsible });
                }
            }
        }
    }
    (Schemas { outputs }, issues)
}

/// Closest operator upstream of `from` whose input guarantees `field` but
/// whose output does not.
fn responsible_for_loss(
    plan: &PlanGraph,
    outputs: &BTreeMap<NodeId, Schema>,
    from: NodeId,
    field: FieldId,
) -> Option<String> {
    let mut cur = from;
    loop {
        let node = plan.node(cur);
        if node.inputs.is_empty() {
            return None;
        }
        if node.inputs.iter().any(|i| outputs[i].guaranteed.contains(&field)) {
            return Some(node.name.clone());
        }
        cur = *node.inputs.iter().find(|i| outputs[*i].possible.contains(&field)).unwrap_or(&node.inputs[0]);
    }
}

/// Schemas of every channel, source to sink. Errors if a sink needs a field
/// that is not guaranteed on its input.
pub fn propagate_schemas(plan: &PlanGraph, udfs: &UdfCache) -> Result<Schemas, PlanError> {
    propagate(plan, udfs, true)
}

/// Analyses of every UDF the plan's operators use, added to `cache`.
pub fn analyze_udfs(plan: &PlanGraph, cache: &mut UdfCache) -> Result<(), PlanError> {
    analyze_all(plan, cache)
}

/// Checks UDF analyses, keys, field collisions and operator inputs, leaving
/// sink requirements to [`propagate_schemas`].
pub(crate) fn check_plan(plan: &PlanGraph) -> Result<(), PlanError> {
    let mut cache = UdfCache::new();
    analyze_all(plan, &mut cache)?;
    propagate(plan, &cache, false).map(|_| ())
}

pub fn annotate(plan: &PlanGraph) -> Result<Annotation, PlanError> {
    annotate_with(plan, &mut UdfCache::new())
}

/// Like [`annotate`], reusing and extending `cache`.
pub fn annotate_with(plan: &PlanGraph, cache: &mut UdfCache) -> Result<Annotation, PlanError> {
    analyze_all(plan, cache)?;
    let schemas = propagate_schemas(plan, cache)?;
    let mut operators = BTreeMap::new();
    for id in plan.operators() {
        let node = plan.node(id);
        let udf = node.udf_name().expect("operator").to_string();
        let analysis = &cache[&udf];
        let input_fields: BTreeMap<InputId, BTreeSet<FieldId>> = (0..node.inputs.len())
            .map(|slot| {
                let input = InputId(slot as u8 + 1);
                (input, schemas.input(plan, id, input).possible.clone())
            })
            .collect();
        let mut read_set = analysis.sets.read.clone();
        if let NodeKind::Operator { keys, .. } = &node.kind {
            read_set.extend(keys.iter().flatten().copied());
        }
        operators.insert(
            id,
            OperatorAnnotation {
                udf,
                sets: analysis.sets.clone(),
                write_set: compute_write_set(&analysis.sets, &input_fields),
                ec: analysis.ec,
                read_set,
                required: required_fields(plan, id, analysis),
                warnings: analysis.warnings.clone(),
            },
        );
    }
    Ok(Annotation { schemas, operators })
}
