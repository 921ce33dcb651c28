// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

//! `flowopt`: analyse UDFs, annotate plans, enumerate safe reorderings and
//! check them against the reference interpreter.
//!
//! Exit codes: 0 success, 1 input error, 2 analysis warnings, 3 oracle
//! mismatch.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use flowopt::analysis::{analyze_udf, compute_write_set};
use flowopt::cfg::build_cfg;
use flowopt::interp::{
    exec_plan, first_difference, format_dataset, format_record, parse_records, seeded_dataset, Dataset,
};
use flowopt::plan::{annotate, parse_plan_file, PlanGraph};
use flowopt::reorder::{adjacent_pairs, enumerate_plans, swap_candidates, swap_valid, ReorderError};
use flowopt::udf_ir::{parse_udf, FieldId, InputId};
use serde::Serialize;

use report::{CheckReport, Mismatch, PlanReport, ReorderReport, Style, SwapReport, UdfReport};

const EXIT_OK: u8 = 0;
const EXIT_INPUT: u8 = 1;
const EXIT_WARNINGS: u8 = 2;
const EXIT_MISMATCH: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "flowopt", version, about = "Read/write-set analysis and safe operator reordering for dataflow plans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analyse a single UDF file.
    Analyze {
        udf: PathBuf,
        /// Fields of one input record, comma separated; repeat once per
        /// input. Defaults to the fields the UDF reads.
        #[arg(long = "inputs", value_name = "FIELDS")]
        inputs: Vec<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Print the control-flow graph in Graphviz DOT format instead.
        #[arg(long)]
        dot: bool,
    },
    /// Annotate every operator of a plan with its properties and schemas.
    Annotate {
        plan: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// List the valid reorderings of a plan.
    Reorder {
        plan: PathBuf,
        /// Maximum number of successive swaps.
        #[arg(long, default_value_t = 1)]
        depth: usize,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Run a plan and its reorderings on data and compare sink outputs.
    Check {
        plan: PathBuf,
        /// Records file (`Source: {field:value, ...}` per line).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Seed of the first random dataset.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random datasets.
        #[arg(long, default_value_t = 20)]
        runs: u64,
        /// Maximum number of successive swaps when enumerating plans.
        #[arg(long, default_value_t = 3)]
        depth: usize,
        /// Compare against this plan instead of the enumerated reorderings.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Maximum records per source in random datasets.
        #[arg(long, default_value_t = 5)]
        max_records: usize,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn emit<T: Serialize>(format: Format, value: &T, text: impl FnOnce(Style) -> String) -> Result<()> {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(value)?),
        Format::Text => print!("{}", text(Style::detect())),
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_plan(path: &Path) -> Result<PlanGraph> {
    parse_plan_file(path).with_context(|| format!("invalid plan {}", path.display()))
}

fn parse_fields(text: &str) -> Result<BTreeSet<FieldId>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().with_context(|| format!("invalid field id `{s}`")))
        .collect()
}

fn cmd_analyze(path: &Path, inputs: &[String], format: Format, dot: bool) -> Result<u8> {
    let udf = parse_udf(&read(path)?).with_context(|| format!("invalid UDF {}", path.display()))?;
    if dot {
        print!("{}", build_cfg(&udf).to_dot(&udf));
        return Ok(EXIT_OK);
    }
    let analysis = analyze_udf(&udf).with_context(|| format!("cannot analyse {}", udf.name()))?;
    let input_fields: BTreeMap<InputId, BTreeSet<FieldId>> = if inputs.is_empty() {
        analysis.accessed_by_input(udf.arity())
    } else {
        if inputs.len() != udf.arity() {
            bail!("--inputs given {} times but {} takes {} input records", inputs.len(), udf.name(), udf.arity());
        }
        inputs.iter().enumerate().map(|(i, s)| Ok((InputId(i as u8 + 1), parse_fields(s)?))).collect::<Result<_>>()?
    };
    let write_set = compute_write_set(&analysis.sets, &input_fields);
    let report = UdfReport::new(&udf, &analysis, write_set, input_fields);
    emit(format, &report, |s| report.render(s))?;
    Ok(if report.warnings.is_empty() { EXIT_OK } else { EXIT_WARNINGS })
}

fn cmd_annotate(path: &Path, format: Format) -> Result<u8> {
    let plan = load_plan(path)?;
    let annotation = annotate(&plan).with_context(|| format!("cannot annotate {}", path.display()))?;
    let report = PlanReport::new(&path.display().to_string(), &plan, &annotation);
    emit(format, &report, |s| report.render(s))?;
    Ok(if report.warnings.is_empty() { EXIT_OK } else { EXIT_WARNINGS })
}

fn swap_reports(plan: &PlanGraph) -> Result<Vec<SwapReport>> {
    let mut out = Vec::new();
    for (upper, lower) in adjacent_pairs(plan) {
        match swap_candidates(plan, upper, lower) {
            Ok(_) => {
                let outcome = swap_valid(plan, upper, lower)?;
                out.push(SwapReport::from_outcome(plan, &outcome));
            }
            Err(ReorderError::Unsupported { reason, .. }) => out.push(SwapReport {
                upper: plan.node(upper).name.clone(),
                lower: plan.node(lower).name.clone(),
                description: format!("swap {} and {}", plan.node(upper).name, plan.node(lower).name),
                valid: false,
                conflicts: None,
                unsupported: Some(reason),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

fn cmd_reorder(path: &Path, depth: usize, format: Format) -> Result<u8> {
    let plan = load_plan(path)?;
    let annotation = annotate(&plan).with_context(|| format!("cannot annotate {}", path.display()))?;
    let plans = enumerate_plans(&plan, depth)?;
    let report = ReorderReport {
        plan: path.display().to_string(),
        depth,
        swaps: swap_reports(&plan)?,
        alternatives: plans[1..].iter().map(|p| p.to_string()).collect(),
        warnings: annotation.warnings().map(str::to_string).collect(),
    };
    emit(format, &report, |s| report.render(s))?;
    Ok(if report.warnings.is_empty() { EXIT_OK } else { EXIT_WARNINGS })
}

/// Adds an empty record list for every source the data does not mention.
fn complete(plan: &PlanGraph, mut data: Dataset) -> Dataset {
    for id in plan.sources() {
        data.entry(plan.node(id).name.clone()).or_default();
    }
    data
}

struct CheckArgs<'a> {
    path: &'a Path,
    data: Option<&'a Path>,
    seed: u64,
    runs: u64,
    depth: usize,
    compare: Option<&'a Path>,
    max_records: usize,
    format: Format,
}

fn cmd_check(args: CheckArgs<'_>) -> Result<u8> {
    let plan = load_plan(args.path)?;
    annotate(&plan).with_context(|| format!("cannot annotate {}", args.path.display()))?;
    let others: Vec<PlanGraph> = match args.compare {
        Some(other) => vec![load_plan(other)?],
        None => enumerate_plans(&plan, args.depth)?.split_off(1),
    };
    for other in &others {
        let mine: BTreeSet<&str> = plan.sources().map(|s| plan.node(s).name.as_str()).collect();
        let theirs: BTreeSet<&str> = other.sources().map(|s| other.node(s).name.as_str()).collect();
        if mine != theirs {
            bail!("compared plans read different sources: {mine:?} vs {theirs:?}");
        }
    }
    let mut datasets = Vec::new();
    if let Some(path) = args.data {
        let data = parse_records(&read(path)?).with_context(|| format!("invalid records file {}", path.display()))?;
        datasets.push(complete(&plan, data));
    }
    for k in 0..args.runs {
        datasets.push(seeded_dataset(&plan, args.seed.wrapping_add(k), args.max_records));
    }

    let mut report = CheckReport {
        plan: args.path.display().to_string(),
        seed: args.seed,
        runs: args.runs,
        datasets: datasets.len(),
        plans_compared: others.len() + 1,
        passed: true,
        mismatch: None,
    };
    'outer: for data in &datasets {
        let expected = exec_plan(&plan, data).with_context(|| format!("{} failed", args.path.display()))?;
        for other in &others {
            let actual = match exec_plan(other, data) {
                Ok(a) => a,
                Err(e) => {
                    report.passed = false;
                    report.mismatch = Some(Mismatch {
                        plan: other.to_string(),
                        dataset: format_dataset(data),
                        sink: String::new(),
                        expected: Vec::new(),
                        actual: vec![format!("error: {e}")],
                    });
                    break 'outer;
                }
            };
            if let Some(diff) = first_difference(&expected, &actual) {
                report.passed = false;
                report.mismatch = Some(Mismatch {
                    plan: other.to_string(),
                    dataset: format_dataset(data),
                    sink: diff.sink.to_string(),
                    expected: diff.left.iter().map(format_record).collect(),
                    actual: diff.right.iter().map(format_record).collect(),
                });
                break 'outer;
            }
        }
    }
    emit(args.format, &report, |s| report.render(s))?;
    Ok(if report.passed { EXIT_OK } else { EXIT_MISMATCH })
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Analyze { udf, inputs, format, dot } => cmd_analyze(&udf, &inputs, format, dot),
        Command::Annotate { plan, format } => cmd_annotate(&plan, format),
        Command::Reorder { plan, depth, format } => cmd_reorder(&plan, depth, format),
        Command::Check { plan, data, seed, runs, depth, compare, max_records, format } => cmd_check(CheckArgs {
            path: &plan,
            data: data.as_deref(),
            seed,
            runs,
            depth,
            compare: compare.as_deref(),
            max_records,
            format,
        }),
    }
}

/// Joins the error chain, skipping causes whose text the previous message
/// already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut message = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if message.ends_with(&text) {
            continue;
        }
        if !message.is_empty() {
            message.push_str(": ");
        }
        message.push_str(&text);
    }
    message
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(EXIT_INPUT)
        }
    }
}
