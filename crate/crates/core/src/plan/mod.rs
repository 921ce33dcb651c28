// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

//! Dataflow plans: sources, SOF operators hosting UDFs, and sinks.

mod dsl;
mod schema;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::AnalysisError;
use crate::udf_ir::{FieldId, InputId, UdfBody, UdfError};

pub use dsl::{parse_plan, parse_plan_file, parse_plan_with};
pub use schema::{
    analyze_udfs, annotate, annotate_with, propagate_collecting, propagate_schemas, Annotation, OperatorAnnotation,
    Schema, Schemas, UdfCache,
};

pub type NodeId = usize;

/// Second-order function of an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sof {
    Map,
    Reduce,
    Match,
    Cross,
    CoGroup,
}

impl Sof {
    pub fn arity(self) -> usize {
        match self {
            Sof::Map | Sof::Reduce => 1,
            Sof::Match | Sof::Cross | Sof::CoGroup => 2,
        }
    }

    pub fn takes_keys(self) -> bool {
        matches!(self, Sof::Reduce | Sof::Match | Sof::CoGroup)
    }

    /// Invokes its UDF once per key group rather than per record or pair.
    pub fn forms_groups(self) -> bool {
        matches!(self, Sof::Reduce | Sof::CoGroup)
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Sof::Map => "map",
            Sof::Reduce => "reduce",
            Sof::Match => "match",
            Sof::Cross => "cross",
            Sof::CoGroup => "cogroup",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Sof> {
        Some(match word {
            "map" => Sof::Map,
            "reduce" => Sof::Reduce,
            "match" => Sof::Match,
            "cross" => Sof::Cross,
            "cogroup" => Sof::CoGroup,
            _ => return None,
        })
    }
}

impl fmt::Display for Sof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Source { fields: BTreeSet<FieldId> },
    Operator { sof: Sof, keys: Vec<Vec<FieldId>>, udf: String },
    Sink { consumes: BTreeSet<FieldId> },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    /// Producers feeding this node, in input-id order.
    pub inputs: Vec<NodeId>,
}

impl Node {
    pub fn is_operator(&self) -> bool {
        matches!(self.kind, NodeKind::Operator { .. })
    }

    pub fn sof(&self) -> Option<Sof> {
        match &self.kind {
            NodeKind::Operator { sof, .. } => Some(*sof),
            _ => None,
        }
    }

    pub fn udf_name(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::Operator { udf, .. } => Some(udf),
            _ => None,
        }
    }

    /// Key fields of input `id`, empty for key-less operators.
    pub fn keys(&self, id: InputId) -> &[FieldId] {
        match &self.kind {
            NodeKind::Operator { keys, .. } => keys.get(usize::from(id.0) - 1).map_or(&[], |k| k),
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("cannot read include `{path}`: {message}")]
    Include { path: String, message: String },
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("`{node}` refers to unknown node `{input}`")]
    UnknownNode { node: String, input: String },
    #[error("`{node}` cannot take `{input}` as input")]
    BadInput { node: String, input: String },
    #[error("`{node}` ({what}) needs {expected} input(s), got {got}")]
    Arity { node: String, what: String, expected: usize, got: usize },
    #[error("field {field} is produced by both sources `{first}` and `{second}`")]
    DuplicateSourceField { field: FieldId, first: String, second: String },
    #[error("`{node}`: {message}")]
    Keys { node: String, message: String },
    #[error("cycle through `{0}`")]
    Cycle(String),
    #[error("unknown UDF `{udf}` used by `{node}`")]
    UnknownUdf { node: String, udf: String },
    #[error("UDF `{udf}` takes {udf_arity} input(s) but `{node}` is a {sof} operator")]
    UdfArity { node: String, udf: String, udf_arity: usize, sof: Sof },
    #[error("duplicate definition of UDF `{0}`")]
    DuplicateUdf(String),
    #[error("UDF `{name}`: {source}")]
    Udf { name: String, source: UdfError },
    #[error("UDF `{name}`: {source}")]
    Analysis { name: String, source: AnalysisError },
    #[error("`{node}`: key field {field} is not guaranteed on input {input}")]
    KeyOutsideSchema { node: String, field: FieldId, input: InputId },
    #[error("`{node}`: field {field} read from input {input} is not guaranteed there")]
    MissingInputField { node: String, field: FieldId, input: InputId },
    #[error("`{node}`: both inputs may carry fields {fields:?}")]
    FieldCollision { node: String, fields: Vec<FieldId> },
    #[error("field loss: sink `{sink}` needs field {field}, {}", responsible.as_ref().map_or("which no upstream node guarantees".to_string(), |op| format!("dropped by `{op}`")))]
    FieldLoss { sink: String, field: FieldId, responsible: Option<String> },
}

/// A validated plan DAG. UDF bodies are shared between copies of a plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanGraph {
    nodes: Vec<Node>,
    udfs: BTreeMap<String, Arc<UdfBody>>,
}

impl PlanGraph {
    /// Checks the structural invariants: names, arities, key shapes, UDF
    /// arity, unique source fields and acyclicity.
    pub fn new(nodes: Vec<Node>, udfs: BTreeMap<String, Arc<UdfBody>>) -> Result<Self, PlanError> {
        let mut names = BTreeSet::new();
        for n in &nodes {
            if !names.insert(n.name.as_str()) {
                return Err(PlanError::DuplicateName(n.name.clone()));
            }
        }
        let mut source_of: BTreeMap<FieldId, &str> = BTreeMap::new();
        for n in &nodes {
            for &i in &n.inputs {
                let Some(input) = nodes.get(i) else {
                    return Err(PlanError::UnknownNode { node: n.name.clone(), input: format!("#{i}") });
                };
                if matches!(input.kind, NodeKind::Sink { .. }) {
                    return Err(PlanError::BadInput { node: n.name.clone(), input: input.name.clone() });
                }
            }
            let (what, expected) = match &n.kind {
                NodeKind::Source { fields } => {
                    for &f in fields {
                        if let Some(prev) = source_of.insert(f, &n.name) {
                            return Err(PlanError::DuplicateSourceField {
                                field: f,
                                first: prev.to_string(),
                                second: n.name.clone(),
                            });
                        }
                    }
                    ("source".to_string(), 0)
                }
                NodeKind::Sink { .. } => ("sink".to_string(), 1),
                NodeKind::Operator { sof, keys, udf } => {
                    if sof.takes_keys() {
                        if keys.len() != sof.arity() || keys.iter().any(|k| k.is_empty()) {
                            return Err(PlanError::Keys {
                                node: n.name.clone(),
                                message: format!("{sof} needs a non-empty key list per input"),
                            });
                        }
                        if keys.iter().any(|k| k.len() != keys[0].len()) {
                            return Err(PlanError::Keys {
                                node: n.name.clone(),
                                message: "key lists differ in length".into(),
                            });
                        }
                    } else if !keys.is_empty() {
                        return Err(PlanError::Keys { node: n.name.clone(), message: format!("{sof} takes no keys") });
                    }
                    let body = udfs
                        .get(udf)
                        .ok_or_else(|| PlanError::UnknownUdf { node: n.name.clone(), udf: udf.clone() })?;
                    if body.arity() != sof.arity() {
                        return Err(PlanError::UdfArity {
                            node: n.name.clone(),
                            udf: udf.clone(),
                            udf_arity: body.arity(),
                            sof: *sof,
                        });
                    }
                    (sof.to_string(), sof.arity())
                }
            };
            if n.inputs.len() != expected {
                return Err(PlanError::Arity { node: n.name.clone(), what, expected, got: n.inputs.len() });
            }
        }
        let plan = PlanGraph { nodes, udfs };
        plan.try_topological_order()?;
        Ok(plan)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn udfs(&self) -> &BTreeMap<String, Arc<UdfBody>> {
        &self.udfs
    }

    pub fn udf(&self, name: &str) -> Option<&Arc<UdfBody>> {
        self.udfs.get(name)
    }

    pub fn operators(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_operator())
    }

    pub fn sources(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&i| matches!(self.nodes[i].kind, NodeKind::Source { .. }))
    }

    pub fn sinks(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&i| matches!(self.nodes[i].kind, NodeKind::Sink { .. }))
    }

    /// Nodes reading the output of `id`, with the input slot they use.
    pub fn consumers(&self, id: NodeId) -> Vec<(NodeId, InputId)> {
        let mut out = Vec::new();
        for (c, n) in self.nodes.iter().enumerate() {
            for (slot, &i) in n.inputs.iter().enumerate() {
                if i == id {
                    out.push((c, InputId(slot as u8 + 1)));
                }
            }
        }
        out
    }

    /// Kahn order, smallest node id first among ready nodes.
    pub fn topological_order(&self) -> Vec<NodeId> {
        self.try_topological_order().expect("validated plan is acyclic")
    }

    fn try_topological_order(&self) -> Result<Vec<NodeId>, PlanError> {
        let n = self.nodes.len();
        let mut indegree: Vec<usize> = self.nodes.iter().map(|x| x.inputs.len()).collect();
        let mut consumers = vec![Vec::new(); n];
        for (c, node) in self.nodes.iter().enumerate() {
            for &i in &node.inputs {
                consumers[i].push(c);
            }
        }
        let mut ready: BTreeSet<NodeId> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(next) = ready.pop_first() {
            order.push(next);
            for &c in &consumers[next] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|i| !order.contains(i)).expect("some node is on a cycle");
            return Err(PlanError::Cycle(self.nodes[stuck].name.clone()));
        }
        Ok(order)
    }

    /// Structural description independent of node names and node order:
    /// kinds, SOFs, keys, UDF names and ordered inputs, traversed from the
    /// sinks in name order.
    pub fn canonical_form(&self) -> String {
        fn walk(plan: &PlanGraph, id: NodeId, out: &mut String) {
            let node = plan.node(id);
            match &node.kind {
                NodeKind::Source { fields } => {
                    out.push_str(&format!("src:{}{:?}", node.name, fields));
                }
                NodeKind::Operator { sof, keys, udf } => {
                    out.push_str(&format!("{sof}({udf},{keys:?})"));
                }
                NodeKind::Sink { consumes } => {
                    out.push_str(&format!("sink:{}{:?}", node.name, consumes));
                }
            }
            if !node.inputs.is_empty() {
                out.push('<');
                for (k, &i) in node.inputs.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    walk(plan, i, out);
                }
                out.push('>');
            }
        }
        let mut sinks: Vec<NodeId> = self.sinks().collect();
        sinks.sort_by(|a, b| self.nodes[*a].name.cmp(&self.nodes[*b].name));
        let mut out = String::new();
        for s in sinks {
            walk(self, s, &mut out);
            out.push(';');
        }
        out
    }

    pub fn canonical_hash(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.canonical_form().hash(&mut h);
        h.finish()
    }

    /// Builds a plan with rewired inputs, keeping everything else.
    pub fn with_inputs(&self, rewired: &BTreeMap<NodeId, Vec<NodeId>>) -> Result<PlanGraph, PlanError> {
        let mut nodes = self.nodes.clone();
        for (&id, inputs) in rewired {
            nodes[id].inputs = inputs.clone();
        }
        PlanGraph::new(nodes, self.udfs.clone())
    }
}

fn fmt_fields(fields: &BTreeSet<FieldId>) -> String {
    let items: Vec<String> = fields.iter().map(|f| f.to_string()).collect();
    format!("[{}]", items.join(","))
}

/// The node declarations of a plan without its UDF blocks.
pub struct GraphListing<'a>(&'a PlanGraph);

impl PlanGraph {
    pub fn graph_listing(&self) -> GraphListing<'_> {
        GraphListing(self)
    }
}

impl fmt::Display for GraphListing<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let plan = self.0;
        let order = plan.topological_order();
        let name = |i: NodeId| plan.nodes[i].name.as_str();
        for &id in &order {
            let node = &plan.nodes[id];
            match &node.kind {
                NodeKind::Source { fields } => writeln!(f, "source {} fields {}", node.name, fmt_fields(fields))?,
                NodeKind::Operator { sof, keys, udf } => {
                    write!(f, "op {} = {sof}({udf}", node.name)?;
                    if !keys.is_empty() {
                        let lists: Vec<String> = keys
                            .iter()
                            .map(|k| format!("[{}]", k.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")))
                            .collect();
                        write!(f, ", keys {}", lists.join(","))?;
                    }
                    let inputs: Vec<&str> = node.inputs.iter().map(|&i| name(i)).collect();
                    writeln!(f, ") from {}", inputs.join(", "))?;
                }
                NodeKind::Sink { .. } => {}
            }
        }
        for &id in &order {
            let node = &plan.nodes[id];
            if let NodeKind::Sink { consumes } = &node.kind {
                writeln!(f, "sink {} consumes {} from {}", node.name, fmt_fields(consumes), name(node.inputs[0]))?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for PlanGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.graph_listing())?;
        for (udf_name, body) in &self.udfs {
            writeln!(f)?;
            writeln!(f, "udf {udf_name} {{")?;
            for line in body.to_string().lines() {
                writeln!(f, "  {line}")?;
            }
            writeln!(f, "}}")?;
        }
        Ok(())
    }
}
