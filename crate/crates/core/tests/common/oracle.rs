// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

//! Brute-force checks of analysis results against the interpreter.

use std::collections::{BTreeMap, BTreeSet};

use flowopt::analysis::{analyze_udf, compute_write_set};
use flowopt::interp::{
    exec_plan, exec_plan_edges, exec_udf_traced, first_difference, format_record, Dataset, Record, DEFAULT_STEP_LIMIT,
};
use flowopt::plan::{annotate, PlanGraph};
use flowopt::udf_ir::{parse_udf, InputId};
use rand::Rng;

use super::{GenUdf, FIELD_UNIVERSE};

fn merged(inputs: &[Record]) -> Record {
    inputs.iter().flat_map(|r| r.iter().map(|(f, v)| (*f, *v))).collect()
}

fn without(records: &[Record], field: u32) -> Vec<Record> {
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.remove(&field);
            r
        })
        .collect()
}

/// Violations of read-set and write-set soundness on `tuples` random inputs.
///
/// Write set: every field outside W keeps the input's value and presence.
/// Read set: changing a field outside R leaves the executed path and every
/// other output field unchanged.
pub fn read_write_violations<R: Rng>(g: &GenUdf, rng: &mut R, tuples: usize) -> Vec<String> {
    let udf = parse_udf(&g.text).expect("generated UDF parses");
    let analysis = analyze_udf(&udf).expect("generated UDF analyses");
    let input_fields: BTreeMap<InputId, BTreeSet<u32>> =
        g.schemas.iter().enumerate().map(|(i, s)| (InputId(i as u8 + 1), s.clone())).collect();
    let write_set = compute_write_set(&analysis.sets, &input_fields);
    let read_set = &analysis.sets.read;
    let mut out = Vec::new();
    for _ in 0..tuples {
        let inputs = g.random_inputs(rng);
        let refs: Vec<&Record> = inputs.iter().collect();
        let base = match exec_udf_traced(&udf, &refs, DEFAULT_STEP_LIMIT) {
            Ok(b) => b,
            Err(e) => {
                out.push(format!("runtime error {e}"));
                continue;
            }
        };
        let all = merged(&inputs);
        for rec in &base.emitted {
            for n in (0..FIELD_UNIVERSE).filter(|n| !write_set.contains(n)) {
                if rec.get(&n) != all.get(&n) {
                    out.push(format!(
                        "W={write_set:?}: field {n} changed, input {} output {}",
                        format_record(&all),
                        format_record(rec)
                    ));
                }
            }
        }
        for (i, schema) in g.schemas.iter().enumerate() {
            for &n in schema.iter().filter(|n| !read_set.contains(n)) {
                let mut perturbed = inputs.clone();
                let old = perturbed[i][&n];
                perturbed[i].insert(n, (old + rng.gen_range(1..10)) % 10);
                let refs: Vec<&Record> = perturbed.iter().collect();
                let Ok(other) = exec_udf_traced(&udf, &refs, DEFAULT_STEP_LIMIT) else {
                    out.push(format!("R={read_set:?}: perturbing field {n} causes a runtime error"));
                    continue;
                };
                if other.path != base.path {
                    out.push(format!("R={read_set:?}: perturbing field {n} changes the path"));
                } else if without(&other.emitted, n) != without(&base.emitted, n)
                    || other.emitted.iter().zip(&base.emitted).any(|(a, b)| a.contains_key(&n) != b.contains_key(&n))
                {
                    out.push(format!("R={read_set:?}: perturbing field {n} changes other output fields"));
                }
            }
        }
    }
    out
}

/// Emitted counts outside the computed bounds on `tuples` random inputs.
pub fn ec_violations<R: Rng>(g: &GenUdf, rng: &mut R, tuples: usize) -> Vec<String> {
    let udf = parse_udf(&g.text).expect("generated UDF parses");
    let ec = analyze_udf(&udf).expect("generated UDF analyses").ec;
    let mut out = Vec::new();
    for _ in 0..tuples {
        let inputs = g.random_inputs(rng);
        let refs: Vec<&Record> = inputs.iter().collect();
        match exec_udf_traced(&udf, &refs, DEFAULT_STEP_LIMIT) {
            Ok(run) if ec.contains(run.emitted.len()) => {}
            Ok(run) => out.push(format!("emitted {} records, bounds {ec}", run.emitted.len())),
            Err(e) => out.push(format!("runtime error {e}")),
        }
    }
    out
}

/// Records crossing an edge without a guaranteed field, or with a field
/// outside the possible schema.
pub fn schema_violations(plan: &PlanGraph, data: &Dataset) -> Vec<String> {
    let annotation = annotate(plan).expect("valid plan annotates");
    let edges = match exec_plan_edges(plan, data) {
        Ok(e) => e,
        Err(e) => return vec![format!("runtime error {e}")],
    };
    let mut out = Vec::new();
    for (node, records) in &edges {
        let schema = annotation.schemas.output(*node);
        for r in records {
            let keys: BTreeSet<u32> = r.keys().copied().collect();
            if !schema.guaranteed.is_subset(&keys) || !keys.is_subset(&schema.possible) {
                out.push(format!(
                    "{}: record {} vs guaranteed {:?} possible {:?}",
                    plan.node(*node).name,
                    format_record(r),
                    schema.guaranteed,
                    schema.possible
                ));
            }
        }
    }
    out
}

/// Datasets on which `alternative` and `original` disagree.
pub fn reorder_mismatches(original: &PlanGraph, alternative: &PlanGraph, datasets: &[Dataset]) -> Vec<String> {
    let mut out = Vec::new();
    for data in datasets {
        let left = exec_plan(original, data);
        let right = exec_plan(alternative, data);
        match (&left, &right) {
            (Ok(l), Ok(r)) => {
                if let Some(diff) = first_difference(l, r) {
                    out.push(format!("{diff}"));
                }
            }
            _ => out.push(format!("execution failed: {left:?} / {right:?}")),
        }
    }
    out
}
