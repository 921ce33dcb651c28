// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

//! Random UDF and plan generators shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use flowopt::interp::Record;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FIELD_UNIVERSE: u32 = 12;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub fn set(xs: &[u32]) -> BTreeSet<u32> {
    xs.iter().copied().collect()
}

// ---------------------------------------------------------------------------
// Single UDFs with arbitrary structured control flow.

/// A generated UDF with the schemas of its inputs.
#[derive(Debug, Clone)]
pub struct GenUdf {
    pub text: String,
    pub schemas: Vec<BTreeSet<u32>>,
}

impl GenUdf {
    /// A random input tuple carrying exactly the input schemas.
    pub fn random_inputs<R: Rng>(&self, rng: &mut R) -> Vec<Record> {
        self.schemas.iter().map(|s| s.iter().map(|&f| (f, rng.gen_range(0..=9))).collect()).collect()
    }
}

enum Block {
    Stmt(String),
    If(String, Vec<Block>),
    IfElse(String, Vec<Block>, Vec<Block>),
    Loop(String, Vec<Block>),
    ReturnIf(String),
}

const POOL: [&str; 4] = ["$v0", "$v1", "$v2", "$v3"];

struct UdfGen<'r, R: Rng> {
    rng: &'r mut R,
    schemas: Vec<BTreeSet<u32>>,
    emits: bool,
}

impl<R: Rng> UdfGen<'_, R> {
    fn input(&mut self) -> usize {
        self.rng.gen_range(0..self.schemas.len())
    }

    fn param(i: usize) -> String {
        format!("$ir{}", i + 1)
    }

    fn var(&mut self) -> &'static str {
        POOL.choose(self.rng).unwrap()
    }

    fn cond(&mut self) -> String {
        let op = ["<", ">", "==", "!=", "<=", ">="].choose(self.rng).unwrap();
        let v = self.var();
        format!("{v} {op} {}", self.rng.gen_range(0..10))
    }

    fn stmt(&mut self) -> String {
        let universe_field = if self.rng.gen_bool(0.5) {
            let i = self.input();
            *self.schemas[i].iter().collect::<Vec<_>>().choose(self.rng).copied().unwrap()
        } else {
            self.rng.gen_range(0..FIELD_UNIVERSE)
        };
        if self.rng.gen_bool(0.1) {
            let i = self.input();
            let f = *self.schemas[i].iter().collect::<Vec<_>>().choose(self.rng).copied().unwrap();
            let v = self.var();
            return format!("{v}:=getField({},{f})\nsetField($or,{f},{v})", Self::param(i));
        }
        match self.rng.gen_range(0..100) {
            0..=24 => {
                let i = self.input();
                let fields: Vec<u32> = self.schemas[i].iter().copied().collect();
                let f = *fields.choose(self.rng).unwrap();
                format!("{}:=getField({},{f})", self.var(), Self::param(i))
            }
            25..=44 => {
                let (t, a) = (self.var(), self.var());
                let op = ["+", "-", "*", "<"].choose(self.rng).unwrap();
                if self.rng.gen_bool(0.5) {
                    format!("{t}:={a} {op} {}", self.var())
                } else {
                    format!("{t}:={a} {op} {}", self.rng.gen_range(0..5))
                }
            }
            45..=64 => format!("setField($or,{universe_field},{})", self.var()),
            65..=71 => format!("setField($or,{universe_field},null)"),
            72..=78 => format!("union($or,{})", Self::param(self.input())),
            79..=82 => {
                if self.rng.gen_bool(0.5) {
                    "$or:=create()".to_string()
                } else {
                    format!("$or:=copy({})", Self::param(self.input()))
                }
            }
            _ if self.emits => "emit($or)".to_string(),
            _ => format!("setField($or,{universe_field},{})", self.var()),
        }
    }

    fn block(&mut self, depth: usize, len: usize) -> Vec<Block> {
        let mut out = Vec::new();
        for _ in 0..len {
            let roll = self.rng.gen_range(0..100);
            let item = if depth < 2 && roll < 12 {
                let n = self.rng.gen_range(1..4);
                Block::If(self.cond(), self.block(depth + 1, n))
            } else if depth < 2 && roll < 20 {
                let (n, m) = (self.rng.gen_range(1..4), self.rng.gen_range(1..4));
                Block::IfElse(self.cond(), self.block(depth + 1, n), self.block(depth + 1, m))
            } else if depth < 2 && roll < 28 {
                let count =
                    if self.rng.gen_bool(0.5) { self.rng.gen_range(0..4).to_string() } else { self.var().to_string() };
                let n = self.rng.gen_range(1..4);
                Block::Loop(count, self.block(depth + 1, n))
            } else if roll < 33 {
                Block::ReturnIf(self.cond())
            } else {
                Block::Stmt(self.stmt())
            };
            out.push(item);
        }
        out
    }
}

/// Counts the places where a statement could be inserted.
fn slots(blocks: &[Block]) -> usize {
    blocks.len()
        + 1
        + blocks
            .iter()
            .map(|b| match b {
                Block::If(_, body) | Block::Loop(_, body) => slots(body),
                Block::IfElse(_, a, b) => slots(a) + slots(b),
                _ => 0,
            })
            .sum::<usize>()
}

/// Inserts `stmt` at slot `k` (in [`slots`] numbering). Returns the slots
/// left over when `k` lies beyond `blocks`.
fn insert_at(blocks: &mut Vec<Block>, k: usize, stmt: &str) -> Option<usize> {
    let mut k = k;
    let mut i = 0;
    loop {
        if k == 0 {
            blocks.insert(i, Block::Stmt(stmt.to_string()));
            return None;
        }
        k -= 1;
        if i == blocks.len() {
            return Some(k);
        }
        match &mut blocks[i] {
            Block::If(_, body) | Block::Loop(_, body) => k = insert_at(body, k, stmt)?,
            Block::IfElse(_, a, b) => {
                let rest = insert_at(a, k, stmt)?;
                k = insert_at(b, rest, stmt)?;
            }
            _ => {}
        }
        i += 1;
    }
}

struct Flat {
    lines: Vec<String>,
    temps: usize,
}

impl Flat {
    fn label(&self) -> usize {
        self.lines.len() + 1
    }

    fn push(&mut self, s: String) -> usize {
        self.lines.push(s);
        self.lines.len() - 1
    }

    fn temp(&mut self, prefix: &str) -> String {
        self.temps += 1;
        format!("${prefix}{}", self.temps)
    }

    fn blocks(&mut self, blocks: &[Block]) {
        for b in blocks {
            match b {
                Block::Stmt(s) => {
                    for line in s.lines() {
                        self.push(line.to_string());
                    }
                }
                Block::If(cond, body) => {
                    let t = self.temp("t");
                    self.push(format!("{t}:={cond}"));
                    let jump = self.push(String::new());
                    self.blocks(body);
                    self.lines[jump] = format!("if {t} goto {}", self.label());
                }
                Block::IfElse(cond, then, other) => {
                    let t = self.temp("t");
                    self.push(format!("{t}:={cond}"));
                    let jump = self.push(String::new());
                    self.blocks(then);
                    let skip = self.push(String::new());
                    self.lines[jump] = format!("if {t} goto {}", self.label());
                    self.blocks(other);
                    self.lines[skip] = format!("goto {}", self.label());
                }
                Block::Loop(count, body) => {
                    let c = self.temp("c");
                    let t = self.temp("t");
                    self.push(format!("{c}:={count}"));
                    let head = self.label();
                    self.push(format!("{t}:={c} > 0"));
                    self.push(format!("if {t} goto {}", self.label() + 2));
                    let exit = self.push(String::new());
                    self.blocks(body);
                    self.push(format!("{c}:={c} - 1"));
                    self.push(format!("goto {head}"));
                    self.lines[exit] = format!("goto {}", self.label());
                }
                Block::ReturnIf(cond) => {
                    let t = self.temp("t");
                    self.push(format!("{t}:={cond}"));
                    self.push(format!("if {t} goto {}", self.label() + 2));
                    self.push("return".to_string());
                }
            }
        }
    }
}

fn random_schemas<R: Rng>(rng: &mut R) -> Vec<BTreeSet<u32>> {
    let arity = rng.gen_range(1..=2);
    let mut fields: Vec<u32> = (0..FIELD_UNIVERSE).collect();
    fields.shuffle(rng);
    let mut schemas = Vec::new();
    let mut taken = 0;
    for _ in 0..arity {
        let n = rng.gen_range(1..=4);
        schemas.push(fields[taken..taken + n].iter().copied().collect());
        taken += n;
    }
    schemas
}

fn render_udf<R: Rng>(rng: &mut R, name: &str, schemas: &[BTreeSet<u32>], body: &[Block]) -> String {
    let mut flat = Flat { lines: Vec::new(), temps: 0 };
    for v in POOL {
        let value = rng.gen_range(0..10);
        flat.push(format!("{v}:={value}"));
    }
    if rng.gen_bool(0.5) {
        flat.push("$or:=create()".into());
    } else {
        flat.push(format!("$or:=copy($ir{})", rng.gen_range(1..=schemas.len())));
    }
    flat.blocks(body);
    flat.push("return".into());
    let params: Vec<String> = (1..=schemas.len()).map(|i| format!("InRec $ir{i}")).collect();
    let mut text = format!("{name}({})\n", params.join(", "));
    for (i, l) in flat.lines.iter().enumerate() {
        writeln!(text, "{}: {l}", i + 1).unwrap();
    }
    text
}

/// A UDF with loops, branches, early returns, unions, projections and
/// several emits.
pub fn random_udf<R: Rng>(rng: &mut R) -> GenUdf {
    let schemas = random_schemas(rng);
    let mut g = UdfGen { rng, schemas: schemas.clone(), emits: true };
    let n = g.rng.gen_range(2..9);
    let mut body = g.block(0, n);
    body.push(Block::Stmt("emit($or)".into()));
    let text = render_udf(g.rng, "g", &schemas, &body);
    GenUdf { text, schemas }
}

/// A UDF with exactly one emit statement, placed anywhere, possibly inside
/// a branch or loop.
pub fn random_single_emit_udf<R: Rng>(rng: &mut R) -> GenUdf {
    let schemas = random_schemas(rng);
    let mut g = UdfGen { rng, schemas: schemas.clone(), emits: false };
    let n = g.rng.gen_range(1..8);
    let mut body = g.block(0, n);
    let k = g.rng.gen_range(0..slots(&body));
    assert!(insert_at(&mut body, k, "emit($or)").is_none());
    let text = render_udf(g.rng, "g", &schemas, &body);
    GenUdf { text, schemas }
}

// ---------------------------------------------------------------------------
// Random plans.

/// Fields of a stream as the generator models them.
#[derive(Debug, Clone, Default)]
struct Model {
    guaranteed: BTreeSet<u32>,
}

struct Stream {
    node: String,
    model: Model,
}

struct PlanGen<'r, R: Rng> {
    rng: &'r mut R,
    next_field: u32,
    ops: Vec<String>,
    sinks: Vec<String>,
    udfs: Vec<String>,
    counter: usize,
}

impl<R: Rng> PlanGen<'_, R> {
    fn fresh(&mut self) -> Option<u32> {
        (self.next_field < FIELD_UNIVERSE).then(|| {
            self.next_field += 1;
            self.next_field - 1
        })
    }

    fn pick(&mut self, fields: &BTreeSet<u32>) -> u32 {
        *fields.iter().collect::<Vec<_>>().choose(self.rng).copied().unwrap()
    }

    fn name(&mut self, prefix: &str) -> String {
        self.counter += 1;
        format!("{prefix}{}", self.counter)
    }

    fn sink(&mut self, s: &Stream) {
        let name = self.name("K");
        let consumes: Vec<String> =
            s.model.guaranteed.iter().filter(|_| self.rng.gen_bool(0.7)).map(|f| f.to_string()).collect();
        self.sinks.push(format!("sink {name} consumes [{}] from {}", consumes.join(","), s.node));
    }

    /// A unary UDF body over `$ir`; returns the lines and output model.
    fn unary_body(&mut self, input: &Model, allow_cardinality: bool) -> (Vec<String>, Model) {
        let mut lines = Vec::new();
        let a = self.pick(&input.guaranteed);
        let b = self.pick(&input.guaranteed);
        lines.push(format!("$a:=getField($ir,{a})"));
        lines.push(format!("$b:=getField($ir,{b})"));
        let mut out = Model::default();
        if self.rng.gen_bool(0.75) {
            lines.push("$or:=copy($ir)".into());
            out.guaranteed = input.guaranteed.clone();
        } else {
            lines.push("$or:=create()".into());
            for (k, &f) in input.guaranteed.iter().enumerate() {
                if self.rng.gen_bool(0.6) {
                    lines.push(format!("$k{k}:=getField($ir,{f})"));
                    lines.push(format!("setField($or,{f},$k{k})"));
                    out.guaranteed.insert(f);
                }
            }
        }
        let writes = self.rng.gen_range(0..=2);
        for w in 0..writes {
            let target = if self.rng.gen_bool(0.6) { self.fresh() } else { None };
            let target = target.unwrap_or_else(|| self.pick(&input.guaranteed));
            let op = ["+", "*", "-"].choose(self.rng).unwrap();
            lines.push(format!("$w{w}:=$a {op} $b"));
            lines.push(format!("setField($or,{target},$w{w})"));
            out.guaranteed.insert(target);
        }
        if out.guaranteed.len() > 1 && self.rng.gen_bool(0.15) {
            let f = self.pick(&out.guaranteed.clone());
            lines.push(format!("setField($or,{f},null)"));
            out.guaranteed.remove(&f);
        }
        if out.guaranteed.is_empty() {
            let f = self.pick(&input.guaranteed);
            lines.push(format!("setField($or,{f},$a)"));
            out.guaranteed.insert(f);
        }
        let roll = self.rng.gen_range(0..100);
        if allow_cardinality && roll < 25 {
            let c = self.rng.gen_range(0..10);
            lines.push(format!("$t:=$a < {c}"));
            let here = lines.len() + 1;
            lines.push(format!("if $t goto {}", here + 2));
            lines.push("return".into());
            lines.push("emit($or)".into());
        } else if allow_cardinality && roll < 32 {
            lines.push("emit($or)".into());
            lines.push("emit($or)".into());
        } else {
            lines.push("emit($or)".into());
        }
        (lines, out)
    }

    fn binary_body(&mut self, l: &Model, r: &Model) -> (Vec<String>, Model) {
        let mut lines = Vec::new();
        let mut out = Model::default();
        match self.rng.gen_range(0..100) {
            0..=59 => {
                lines.push("$or:=copy($ir1)".into());
                lines.push("union($or,$ir2)".into());
                out.guaranteed = l.guaranteed.union(&r.guaranteed).copied().collect();
            }
            60..=74 => {
                lines.push("$or:=copy($ir2)".into());
                lines.push("union($or,$ir1)".into());
                out.guaranteed = l.guaranteed.union(&r.guaranteed).copied().collect();
            }
            75..=84 => {
                lines.push("$or:=copy($ir1)".into());
                out.guaranteed = l.guaranteed.clone();
            }
            _ => {
                lines.push("$or:=create()".into());
                for (side, model) in [(1, l), (2, r)] {
                    for (k, &f) in model.guaranteed.iter().enumerate() {
                        if self.rng.gen_bool(0.6) {
                            lines.push(format!("$s{side}k{k}:=getField($ir{side},{f})"));
                            lines.push(format!("setField($or,{f},$s{side}k{k})"));
                            out.guaranteed.insert(f);
                        }
                    }
                }
            }
        }
        if self.rng.gen_bool(0.3) {
            if let Some(f) = self.fresh() {
                let (x, y) = (self.pick(&l.guaranteed), self.pick(&r.guaranteed));
                lines.push(format!("$x:=getField($ir1,{x})"));
                lines.push(format!("$y:=getField($ir2,{y})"));
                lines.push("$z:=$x + $y".into());
                lines.push(format!("setField($or,{f},$z)"));
                out.guaranteed.insert(f);
            }
        }
        if out.guaranteed.is_empty() {
            let f = self.pick(&l.guaranteed);
            lines.push(format!("$e:=getField($ir1,{f})"));
            lines.push(format!("setField($or,{f},$e)"));
            out.guaranteed.insert(f);
        }
        lines.push("emit($or)".into());
        (lines, out)
    }

    fn udf(&mut self, params: &str, lines: Vec<String>) -> String {
        let name = self.name("u");
        let mut text = format!("udf {name} {{\n  {name}({params})\n");
        for (i, l) in lines.iter().enumerate() {
            writeln!(text, "  {}: {l}", i + 1).unwrap();
        }
        text.push_str("}\n");
        self.udfs.push(text);
        name
    }

    fn maybe_tap(&mut self, s: &Stream) {
        if self.rng.gen_bool(0.1) {
            self.sink(s);
        }
    }

    fn unary(&mut self, s: Stream, sof: &str) -> Stream {
        self.maybe_tap(&s);
        let (lines, model) = self.unary_body(&s.model, sof == "map");
        let udf = self.udf("InRec $ir", lines);
        let name = self.name("M");
        let keys = if sof == "reduce" { format!(", keys [{}]", self.pick(&s.model.guaranteed)) } else { String::new() };
        self.ops.push(format!("op {name} = {sof}({udf}{keys}) from {}", s.node));
        Stream { node: name, model }
    }

    fn binary(&mut self, l: Stream, r: Stream, sof: &str) -> Stream {
        self.maybe_tap(&l);
        self.maybe_tap(&r);
        let (lines, model) = self.binary_body(&l.model, &r.model);
        let udf = self.udf("InRec $ir1, InRec $ir2", lines);
        let name = self.name("J");
        let keys = if sof == "cross" {
            String::new()
        } else {
            format!(", keys [{}],[{}]", self.pick(&l.model.guaranteed), self.pick(&r.model.guaranteed))
        };
        self.ops.push(format!("op {name} = {sof}({udf}{keys}) from {}, {}", l.node, r.node));
        Stream { node: name, model }
    }
}

/// A random plan in the text format: 1 to 3 sources, 2 to 5 operators of
/// every kind, field ids below [`FIELD_UNIVERSE`].
pub fn random_plan_text<R: Rng>(rng: &mut R) -> String {
    let mut g = PlanGen { rng, next_field: 0, ops: Vec::new(), sinks: Vec::new(), udfs: Vec::new(), counter: 0 };
    let n_sources = g.rng.gen_range(1..=3);
    let mut sources = Vec::new();
    let mut streams = Vec::new();
    for i in 0..n_sources {
        let width = g.rng.gen_range(1..=3);
        let fields: BTreeSet<u32> = (0..width).map(|_| g.fresh().unwrap()).collect();
        let list: Vec<String> = fields.iter().map(|f| f.to_string()).collect();
        sources.push(format!("source S{i} fields [{}]", list.join(",")));
        streams.push(Stream { node: format!("S{i}"), model: Model { guaranteed: fields } });
    }
    let n_ops = g.rng.gen_range(2..=5);
    for _ in 0..n_ops {
        let roll = g.rng.gen_range(0..100);
        if streams.len() >= 2 && roll < 40 {
            let i = g.rng.gen_range(0..streams.len());
            let l = streams.swap_remove(i);
            let j = g.rng.gen_range(0..streams.len());
            let r = streams.swap_remove(j);
            let sof = match g.rng.gen_range(0..10) {
                0..=5 => "match",
                6..=8 => "cross",
                _ => "cogroup",
            };
            let s = g.binary(l, r, sof);
            streams.push(s);
        } else {
            let i = g.rng.gen_range(0..streams.len());
            let s = streams.swap_remove(i);
            let sof = if g.rng.gen_bool(0.1) { "reduce" } else { "map" };
            let s = g.unary(s, sof);
            streams.push(s);
        }
    }
    for s in &streams {
        g.sink(s);
    }
    let mut text = String::new();
    for l in sources.iter().chain(&g.ops).chain(&g.sinks) {
        writeln!(text, "{l}").unwrap();
    }
    for u in &g.udfs {
        text.push_str(u);
    }
    text
}

pub mod oracle;
