// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

//! Statement-level control-flow graph and def-use chains.
//!
//! Every statement is one node. A predecessor `p` of `s` is a *true*
//! predecessor unless `p -> s` is a back edge of the depth-first spanning
//! tree rooted at the entry, i.e. unless `p` is a tree descendant of `s`.
//! Walking true predecessors backwards therefore leaves every loop after
//! visiting its header once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::udf_ir::{Line, StmtKind, UdfBody, Var};

/// Index of a statement in [`UdfBody::stmts`].
pub type StmtIdx = usize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CfgError {
    #[error("line {line}: {var} may be used before it is assigned")]
    UninitializedUse { line: Line, var: Var },
}

#[derive(Debug, Clone)]
pub struct Cfg {
    lines: Vec<Line>,
    succs: Vec<Vec<StmtIdx>>,
    preds: Vec<Vec<StmtIdx>>,
    reachable: Vec<bool>,
    back_edges: BTreeSet<(StmtIdx, StmtIdx)>,
    // descendants[s][t]: t is reachable from s through at least one edge.
    descendants: Vec<Vec<bool>>,
    scc: Vec<usize>,
}

pub fn build_cfg(udf: &UdfBody) -> Cfg {
    let n = udf.len();
    let lines: Vec<Line> = udf.stmts().iter().map(|s| s.line).collect();

    let mut all_succs = vec![Vec::new(); n];
    for (i, s) in udf.stmts().iter().enumerate() {
        let mut out = Vec::new();
        match &s.kind {
            StmtKind::Return => {}
            StmtKind::Jump { target } => out.push(udf.index_of(*target).expect("validated target")),
            StmtKind::CondJump { target, .. } => {
                out.push(i + 1);
                out.push(udf.index_of(*target).expect("validated target"));
            }
            _ if i + 1 < n => out.push(i + 1),
            _ => {}
        }
        out.sort_unstable();
        out.dedup();
        all_succs[i] = out;
    }

    let mut reachable = vec![false; n];
    let mut back_edges = BTreeSet::new();
    if n > 0 {
        // Iterative DFS; an edge to a node still on the stack is a back edge.
        let mut on_stack = vec![false; n];
        let mut stack: Vec<(StmtIdx, usize)> = vec![(0, 0)];
        reachable[0] = true;
        on_stack[0] = true;
        while let Some((node, next)) = stack.last_mut() {
            let node = *node;
            if let Some(&succ) = all_succs[node].get(*next) {
                *next += 1;
                if on_stack[succ] {
                    back_edges.insert((node, succ));
                } else if !reachable[succ] {
                    reachable[succ] = true;
                    on_stack[succ] = true;
                    stack.push((succ, 0));
                }
            } else {
                on_stack[node] = false;
                stack.pop();
            }
        }
    }

    let mut succs = vec![Vec::new(); n];
    let mut preds = vec![Vec::new(); n];
    for i in (0..n).filter(|&i| reachable[i]) {
        for &t in &all_succs[i] {
            succs[i].push(t);
            preds[t].push(i);
        }
    }
    for p in &mut preds {
        p.sort_unstable();
    }

    let descendants = (0..n)
        .map(|s| {
            let mut seen = vec![false; n];
            let mut work: Vec<StmtIdx> = succs[s].clone();
            while let Some(t) = work.pop() {
                if !seen[t] {
                    seen[t] = true;
                    work.extend(succs[t].iter().copied());
                }
            }
            seen
        })
        .collect::<Vec<_>>();

    // Two reachable nodes share a component iff each reaches the other;
    // singletons without a self loop get their own id.
    let mut scc = vec![usize::MAX; n];
    let mut next_id = 0;
    for s in 0..n {
        if scc[s] != usize::MAX {
            continue;
        }
        scc[s] = next_id;
        for t in s + 1..n {
            if descendants[s][t] && descendants[t][s] {
                scc[t] = next_id;
            }
        }
        next_id += 1;
    }

    Cfg { lines, succs, preds, reachable, back_edges, descendants, scc }
}

impl Cfg {
    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn entry(&self) -> StmtIdx {
        0
    }

    pub fn line(&self, s: StmtIdx) -> Line {
        self.lines[s]
    }

    pub fn successors(&self, s: StmtIdx) -> &[StmtIdx] {
        &self.succs[s]
    }

    /// Reachable predecessors of `s`, ascending.
    pub fn predecessors(&self, s: StmtIdx) -> &[StmtIdx] {
        &self.preds[s]
    }

    pub fn is_reachable(&self, s: StmtIdx) -> bool {
        self.reachable[s]
    }

    /// Labels of statements that can never execute.
    pub fn unreachable_lines(&self) -> Vec<Line> {
        (0..self.len()).filter(|&s| !self.reachable[s]).map(|s| self.lines[s]).collect()
    }

    pub fn is_back_edge(&self, from: StmtIdx, to: StmtIdx) -> bool {
        self.back_edges.contains(&(from, to))
    }

    pub fn back_edges(&self) -> impl Iterator<Item = (StmtIdx, StmtIdx)> + '_ {
        self.back_edges.iter().copied()
    }

    /// Predecessors of `s` that are not its descendants in the DFS tree.
    pub fn true_preds(&self, s: StmtIdx) -> Vec<StmtIdx> {
        self.preds[s].iter().copied().filter(|&p| !self.is_back_edge(p, s)).collect()
    }

    /// Sources of back edges into `s`.
    pub fn back_preds(&self, s: StmtIdx) -> Vec<StmtIdx> {
        self.preds[s].iter().copied().filter(|&p| self.is_back_edge(p, s)).collect()
    }

    /// `to` can be reached from `from` through at least one edge.
    pub fn reaches(&self, from: StmtIdx, to: StmtIdx) -> bool {
        self.descendants[from][to]
    }

    /// Members of the strongly connected component containing `s`,
    /// ascending. A statement on no cycle forms a singleton.
    pub fn component(&self, s: StmtIdx) -> Vec<StmtIdx> {
        let id = self.scc[s];
        (0..self.len()).filter(|&t| self.scc[t] == id).collect()
    }

    pub fn on_cycle(&self, s: StmtIdx) -> bool {
        self.descendants[s][s]
    }

    pub fn to_dot(&self, udf: &UdfBody) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{}\" {{", udf.name());
        let _ = writeln!(out, "  node [shape=box, fontname=monospace];");
        for (i, s) in udf.stmts().iter().enumerate() {
            let label = s.to_string().replace('\\', "\\\\").replace('"', "\\\"");
            let style = if self.reachable[i] { "" } else { ", style=dashed" };
            let _ = writeln!(out, "  n{} [label=\"{label}\"{style}];", s.line);
        }
        for (i, succ) in self.succs.iter().enumerate() {
            for &t in succ {
                let style = if self.is_back_edge(i, t) { " [style=dashed]" } else { "" };
                let _ = writeln!(out, "  n{} -> n{}{style};", self.lines[i], self.lines[t]);
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Def-use and use-def chains for scalar variables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Chains {
    def_use: BTreeMap<(StmtIdx, Var), BTreeSet<StmtIdx>>,
    use_def: BTreeMap<(StmtIdx, Var), BTreeSet<StmtIdx>>,
}

impl Chains {
    /// Statements using the value `var` defined at `def`.
    pub fn def_use(&self, def: StmtIdx, var: &Var) -> BTreeSet<StmtIdx> {
        self.def_use.get(&(def, var.clone())).cloned().unwrap_or_default()
    }

    /// Definitions of `var` reaching the use at `use_site`.
    pub fn use_def(&self, use_site: StmtIdx, var: &Var) -> BTreeSet<StmtIdx> {
        self.use_def.get(&(use_site, var.clone())).cloned().unwrap_or_default()
    }

    pub fn def_use_entries(&self) -> impl Iterator<Item = (&(StmtIdx, Var), &BTreeSet<StmtIdx>)> {
        self.def_use.iter()
    }

    pub fn use_def_entries(&self) -> impl Iterator<Item = (&(StmtIdx, Var), &BTreeSet<StmtIdx>)> {
        self.use_def.iter()
    }
}

/// Reaching definitions over the full edge set of the reachable graph.
pub fn compute_chains(udf: &UdfBody, cfg: &Cfg) -> Result<Chains, CfgError> {
    let n = udf.len();
    let stmts = udf.stmts();
    let vars: Vec<&Var> = udf.scalar_vars();
    let var_index: BTreeMap<&Var, usize> = vars.iter().enumerate().map(|(i, v)| (*v, i)).collect();

    // Definition ids: 0..n are statements, n + k is "uninitialised var k".
    let defines = |d: usize| -> usize {
        if d >= n {
            d - n
        } else {
            var_index[stmts[d].kind.scalar_def().expect("definition site")]
        }
    };

    let mut ins: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut outs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let entry_in: BTreeSet<usize> = (0..vars.len()).map(|k| n + k).collect();

    let mut changed = true;
    while changed {
        changed = false;
        for s in (0..n).filter(|&s| cfg.is_reachable(s)) {
            let mut input = if s == cfg.entry() { entry_in.clone() } else { BTreeSet::new() };
            for &p in cfg.predecessors(s) {
                input.extend(outs[p].iter().copied());
            }
            let mut output = input.clone();
            if let Some(v) = stmts[s].kind.scalar_def() {
                let k = var_index[v];
                output.retain(|&d| defines(d) != k);
                output.insert(s);
            }
            if input != ins[s] || output != outs[s] {
                ins[s] = input;
                outs[s] = output;
                changed = true;
            }
        }
    }

    let mut chains = Chains::default();
    for s in (0..n).filter(|&s| cfg.is_reachable(s)) {
        if let Some(v) = stmts[s].kind.scalar_def() {
            chains.def_use.entry((s, v.clone())).or_default();
        }
    }
    for s in (0..n).filter(|&s| cfg.is_reachable(s)) {
        for v in stmts[s].kind.scalar_uses() {
            let k = var_index[v];
            let reaching: BTreeSet<usize> = ins[s].iter().copied().filter(|&d| defines(d) == k).collect();
            if reaching.iter().any(|&d| d >= n) {
                return Err(CfgError::UninitializedUse { line: stmts[s].line, var: v.clone() });
            }
            for &d in &reaching {
                chains.def_use.entry((d, v.clone())).or_default().insert(s);
            }
            chains.use_def.entry((s, v.clone())).or_default().extend(reaching);
        }
    }
    Ok(chains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::udf_ir::parse_udf;

    const F1: &str = "10: f1(InRec $ir)
11: $a:=getField($ir,0)
12: $b:=getField($ir,1)
13: $c:=$a + $b
14: $or:=copy($ir)
15: setField($or,2,$c)
16: emit($or)";

    // 12 is the loop header; 15 jumps back to it.
    const LOOP: &str = "g(InRec $ir)
10: $or:=copy($ir)
11: $i:=getField($ir,0)
12: $d:=$i > 5
13: if $d goto 16
14: $i:=$i + 1
15: goto 12
16: emit($or)";

    fn idx(udf: &UdfBody, line: Line) -> StmtIdx {
        udf.index_of(line).unwrap()
    }

    #[test]
    fn straight_line_is_a_path() {
        let udf = parse_udf(F1).unwrap();
        let cfg = build_cfg(&udf);
        for s in 0..5 {
            assert_eq!(cfg.successors(s), &[s + 1]);
        }
        assert!(cfg.successors(5).is_empty());
        assert_eq!(cfg.back_edges().count(), 0);
        assert_eq!(cfg.true_preds(idx(&udf, 16)), vec![idx(&udf, 15)]);
        assert!(cfg.true_preds(cfg.entry()).is_empty());
    }

    #[test]
    fn branch_forms_a_diamond() {
        let udf = parse_udf(
            "g(InRec $ir)
1: $a:=getField($ir,0)
2: $or:=copy($ir)
3: if $a goto 5
4: emit($or)
5: return",
        )
        .unwrap();
        let cfg = build_cfg(&udf);
        assert_eq!(cfg.successors(2), &[3, 4]);
        assert_eq!(cfg.predecessors(4), &[2, 3]);
        assert_eq!(cfg.back_edges().count(), 0);
    }

    #[test]
    fn loop_header_excludes_back_edge() {
        let udf = parse_udf(LOOP).unwrap();
        let cfg = build_cfg(&udf);
        let header = idx(&udf, 12);
        let tail = idx(&udf, 15);
        assert_eq!(cfg.predecessors(header), &[idx(&udf, 11), tail]);
        assert_eq!(cfg.true_preds(header), vec![idx(&udf, 11)]);
        assert_eq!(cfg.back_preds(header), vec![tail]);
        assert!(cfg.reaches(header, tail) && cfg.reaches(tail, header));
        // Body statements keep their in-loop predecessor.
        assert_eq!(cfg.true_preds(idx(&udf, 14)), vec![idx(&udf, 13)]);
        assert_eq!(cfg.component(header), vec![2, 3, 4, 5]);
        assert!(cfg.on_cycle(header));
        assert!(!cfg.on_cycle(idx(&udf, 16)));
    }

    #[test]
    fn unreachable_statements_are_pruned() {
        let udf = parse_udf(
            "g(InRec $ir)
1: $or:=copy($ir)
2: goto 4
3: setField($or,0,null)
4: emit($or)",
        )
        .unwrap();
        let cfg = build_cfg(&udf);
        assert_eq!(cfg.unreachable_lines(), vec![3]);
        assert_eq!(cfg.predecessors(3), &[1]);
        assert!(cfg.to_dot(&udf).contains("style=dashed"));
    }

    #[test]
    fn f1_chains() {
        let udf = parse_udf(F1).unwrap();
        let cfg = build_cfg(&udf);
        let chains = compute_chains(&udf, &cfg).unwrap();
        let a = Var::new("a");
        assert_eq!(chains.def_use(idx(&udf, 11), &a), BTreeSet::from([idx(&udf, 13)]));
        assert_eq!(chains.use_def(idx(&udf, 15), &Var::new("c")), BTreeSet::from([idx(&udf, 13)]));
    }

    #[test]
    fn dead_read_has_empty_chain() {
        let udf = parse_udf("g(InRec $ir)\n1: $t:=getField($ir,7)\n2: $or:=copy($ir)\n3: emit($or)").unwrap();
        let cfg = build_cfg(&udf);
        let chains = compute_chains(&udf, &cfg).unwrap();
        assert!(chains.def_use(0, &Var::new("t")).is_empty());
    }

    #[test]
    fn two_branch_definitions_reach_a_use() {
        // Reaching definitions by hand: line 4 and line 6 both reach line 7.
        let udf = parse_udf(
            "g(InRec $ir)
1: $a:=getField($ir,0)
2: $or:=create()
3: if $a goto 6
4: $t:=getField($ir,0)
5: goto 7
6: $t:=$a * 2
7: setField($or,0,$t)
8: emit($or)",
        )
        .unwrap();
        let cfg = build_cfg(&udf);
        let chains = compute_chains(&udf, &cfg).unwrap();
        let uses = chains.use_def(idx(&udf, 7), &Var::new("t"));
        assert_eq!(uses, BTreeSet::from([idx(&udf, 4), idx(&udf, 6)]));
    }

    #[test]
    fn loop_carried_definition_reaches_header() {
        let udf = parse_udf(LOOP).unwrap();
        let cfg = build_cfg(&udf);
        let chains = compute_chains(&udf, &cfg).unwrap();
        let i = Var::new("i");
        assert_eq!(chains.use_def(idx(&udf, 12), &i), BTreeSet::from([idx(&udf, 11), idx(&udf, 14)]));
    }

    #[test]
    fn uninitialized_use_is_reported() {
        let udf = parse_udf(
            "g(InRec $ir)
1: $a:=getField($ir,0)
2: if $a goto 4
3: $t:=1
4: $or:=copy($ir)
5: setField($or,0,$t)
6: emit($or)",
        )
        .unwrap();
        let cfg = build_cfg(&udf);
        assert_eq!(compute_chains(&udf, &cfg), Err(CfgError::UninitializedUse { line: 5, var: Var::new("t") }));
    }
}
