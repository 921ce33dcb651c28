// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

//! Plan text format.
//!
//! ```text
//! source Src1 fields [0,1]
//! op M1 = map(f1) from Src1
//! op J = match(f3, keys [0],[3]) from M1, M2
//! sink Snk1 consumes [0,1,2,3,4,5] from J
//! include "f2.udf"
//! udf f1 {
//!   10: f1(InRec $ir)
//!   ...
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use super::{Node, NodeKind, PlanError, PlanGraph, Sof};
use crate::udf_ir::{parse_udf, FieldId, UdfBody};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Int(u64),
    Str(String),
    Punct(char),
}

fn lex(text: &str, line: usize) -> Result<Vec<Tok>, PlanError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let digits: String = chars[start..i].iter().collect();
            let value = digits
                .parse()
                .map_err(|_| PlanError::Syntax { line, message: format!("number `{digits}` out of range") })?;
            out.push(Tok::Int(value));
        } else if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Word(chars[start..i].iter().collect()));
        } else if c == '"' {
            let start = i + 1;
            i = start;
            while i < chars.len() && chars[i] != '"' {
                i += 1;
            }
            if i == chars.len() {
                return Err(PlanError::Syntax { line, message: "unterminated string".into() });
            }
            out.push(Tok::Str(chars[start..i].iter().collect()));
            i += 1;
        } else if "[](),={}".contains(c) {
            out.push(Tok::Punct(c));
            i += 1;
        } else {
            return Err(PlanError::Syntax { line, message: format!("unexpected character `{c}`") });
        }
    }
    Ok(out)
}

struct Cursor {
    toks: Vec<Tok>,
    pos: usize,
    line: usize,
}

impl Cursor {
    fn err(&self, message: impl Into<String>) -> PlanError {
        PlanError::Syntax { line: self.line, message: message.into() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn word(&mut self, what: &str) -> Result<String, PlanError> {
        match self.toks.get(self.pos) {
            Some(Tok::Word(w)) => {
                self.pos += 1;
                Ok(w.clone())
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), PlanError> {
        match self.toks.get(self.pos) {
            Some(Tok::Word(w)) if w == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected `{kw}`"))),
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn punct(&mut self, c: char) -> Result<(), PlanError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn field_list(&mut self) -> Result<Vec<FieldId>, PlanError> {
        self.punct('[')?;
        let mut out = Vec::new();
        if self.eat(']') {
            return Ok(out);
        }
        loop {
            match self.toks.get(self.pos) {
                Some(Tok::Int(v)) => {
                    let v = FieldId::try_from(*v).map_err(|_| self.err(format!("field id {v} out of range")))?;
                    out.push(v);
                    self.pos += 1;
                }
                _ => return Err(self.err("expected a field id")),
            }
            if self.eat(']') {
                return Ok(out);
            }
            self.punct(',')?;
        }
    }

    fn names(&mut self) -> Result<Vec<String>, PlanError> {
        let mut out = vec![self.word("a node name")?];
        while self.eat(',') {
            out.push(self.word("a node name")?);
        }
        Ok(out)
    }

    fn end(&self) -> Result<(), PlanError> {
        if self.pos == self.toks.len() {
            Ok(())
        } else {
            Err(self.err("unexpected trailing input"))
        }
    }
}

struct Decl {
    name: String,
    kind: NodeKind,
    inputs: Vec<String>,
}

/// Parses plan text whose `include` lines are resolved by `load`.
pub fn parse_plan_with(text: &str, load: &dyn Fn(&str) -> Result<String, String>) -> Result<PlanGraph, PlanError> {
    let mut decls: Vec<Decl> = Vec::new();
    let mut udfs: BTreeMap<String, Arc<UdfBody>> = BTreeMap::new();
    let mut add_udf = |name: Option<&str>, body: &str, line: usize| -> Result<(), PlanError> {
        let udf = parse_udf(body)
            .map_err(|source| PlanError::Udf { name: name.unwrap_or("<include>").to_string(), source })?;
        if let Some(name) = name {
            if udf.name() != name {
                return Err(PlanError::Syntax {
                    line,
                    message: format!("block `udf {name}` contains UDF `{}`", udf.name()),
                });
            }
        }
        let key = udf.name().to_string();
        if udfs.insert(key.clone(), Arc::new(udf)).is_some() {
            return Err(PlanError::DuplicateUdf(key));
        }
        Ok(())
    };

    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let line_no = i + 1;
        let content = lines[i].split('#').next().unwrap_or("").trim();
        i += 1;
        if content.is_empty() {
            continue;
        }
        let mut cur = Cursor { toks: lex(content, line_no)?, pos: 0, line: line_no };
        match cur.word("a declaration")?.as_str() {
            "source" => {
                let name = cur.word("a source name")?;
                cur.keyword("fields")?;
                let fields: BTreeSet<FieldId> = cur.field_list()?.into_iter().collect();
                cur.end()?;
                decls.push(Decl { name, kind: NodeKind::Source { fields }, inputs: vec![] });
            }
            "sink" => {
                let name = cur.word("a sink name")?;
                cur.keyword("consumes")?;
                let consumes: BTreeSet<FieldId> = cur.field_list()?.into_iter().collect();
                cur.keyword("from")?;
                let inputs = cur.names()?;
                cur.end()?;
                decls.push(Decl { name, kind: NodeKind::Sink { consumes }, inputs });
            }
            "op" => {
                let name = cur.word("an operator name")?;
                cur.punct('=')?;
                let sof_word = cur.word("a second-order function")?;
                let sof = Sof::from_keyword(&sof_word)
                    .ok_or_else(|| cur.err(format!("unknown second-order function `{sof_word}`")))?;
                cur.punct('(')?;
                let udf = cur.word("a UDF name")?;
                let mut keys = Vec::new();
                if cur.eat(',') {
                    cur.keyword("keys")?;
                    keys.push(cur.field_list()?);
                    while cur.eat(',') {
                        keys.push(cur.field_list()?);
                    }
                }
                cur.punct(')')?;
                cur.keyword("from")?;
                let inputs = cur.names()?;
                cur.end()?;
                decls.push(Decl { name, kind: NodeKind::Operator { sof, keys, udf }, inputs });
            }
            "include" => {
                let path = match cur.peek() {
                    Some(Tok::Str(s)) => s.clone(),
                    _ => return Err(cur.err("expected a quoted path")),
                };
                cur.pos += 1;
                cur.end()?;
                let body = load(&path).map_err(|message| PlanError::Include { path: path.clone(), message })?;
                add_udf(None, &body, line_no)?;
            }
            "udf" => {
                let name = cur.word("a UDF name")?;
                cur.punct('{')?;
                cur.end()?;
                let mut body = String::new();
                let mut closed = false;
                while i < lines.len() {
                    let l = lines[i];
                    i += 1;
                    if l.trim() == "}" {
                        closed = true;
                        break;
                    }
                    body.push_str(l);
                    body.push('\n');
                }
                if !closed {
                    return Err(PlanError::Syntax {
                        line: line_no,
                        message: format!("udf `{name}` block is not closed"),
                    });
                }
                add_udf(Some(&name), &body, line_no)?;
            }
            other => return Err(cur.err(format!("unknown declaration `{other}`"))),
        }
    }

    let index: BTreeMap<&str, usize> = decls.iter().enumerate().map(|(k, d)| (d.name.as_str(), k)).collect();
    let mut nodes = Vec::with_capacity(decls.len());
    for d in &decls {
        let mut inputs = Vec::new();
        for input in &d.inputs {
            let id = *index
                .get(input.as_str())
                .ok_or_else(|| PlanError::UnknownNode { node: d.name.clone(), input: input.clone() })?;
            inputs.push(id);
        }
        nodes.push(Node { name: d.name.clone(), kind: d.kind.clone(), inputs });
    }
    let plan = PlanGraph::new(nodes, udfs)?;
    super::schema::check_plan(&plan)?;
    Ok(plan)
}

/// Parses self-contained plan text; `include` lines are rejected.
pub fn parse_plan(text: &str) -> Result<PlanGraph, PlanError> {
    parse_plan_with(text, &|_| Err("includes need a file path; use parse_plan_file".to_string()))
}

/// Parses a plan file, resolving includes relative to its directory.
pub fn parse_plan_file(path: &Path) -> Result<PlanGraph, PlanError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PlanError::Include { path: path.display().to_string(), message: e.to_string() })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_plan_with(&text, &|rel| std::fs::read_to_string(base.join(rel)).map_err(|e| e.to_string()))
}
