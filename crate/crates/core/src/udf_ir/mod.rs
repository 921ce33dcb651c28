// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

//! Three-address IR for record-processing UDFs.
//!
//! A UDF is a header naming one or two input records followed by numbered
//! statements over the record API (`getField`, `setField`, `create`, `copy`,
//! `union`, `emit`) plus scalar assignments and jumps:
//!
//! ```text
//! 10: f1(InRec $ir)
//! 11: $a:=getField($ir,0)
//! 12: $b:=getField($ir,1)
//! 13: $c:=$a + $b
//! 14: $or:=copy($ir)
//! 15: setField($or,2,$c)
//! 16: emit($or)
//! ```

mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use parse::parse_udf;

/// Globally unique record field number.
pub type FieldId = u32;

/// Statement label as written in the source.
pub type Line = u32;

/// Position of an input record in a UDF's parameter list, starting at 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InputId(pub u8);

impl fmt::Display for InputId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A `$`-prefixed variable. The stored name excludes the `$`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(String);

impl Var {
    pub fn new(name: impl Into<String>) -> Self {
        Var(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
        }
    }

    pub fn apply(self, lhs: i64, rhs: i64) -> i64 {
        match self {
            BinOp::Add => lhs.wrapping_add(rhs),
            BinOp::Sub => lhs.wrapping_sub(rhs),
            BinOp::Mul => lhs.wrapping_mul(rhs),
            BinOp::Lt => i64::from(lhs < rhs),
            BinOp::Le => i64::from(lhs <= rhs),
            BinOp::Gt => i64::from(lhs > rhs),
            BinOp::Ge => i64::from(lhs >= rhs),
            BinOp::Eq => i64::from(lhs == rhs),
            BinOp::Ne => i64::from(lhs != rhs),
        }
    }
}

/// Right-hand side of a scalar assignment.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Var(Var),
    Const(i64),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn vars(&self) -> Vec<&Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a Var>) {
        match self {
            Expr::Var(v) => out.push(v),
            Expr::Const(_) => {}
            Expr::Neg(e) => e.collect_vars(out),
            Expr::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn operand(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match e {
                Expr::Binary(..) => write!(f, "({e})"),
                _ => write!(f, "{e}"),
            }
        }
        match self {
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Neg(inner) => match inner.as_ref() {
                Expr::Var(v) => write!(f, "-{v}"),
                other => write!(f, "-({other})"),
            },
            Expr::Binary(op, l, r) => {
                operand(l, f)?;
                write!(f, " {} ", op.symbol())?;
                operand(r, f)
            }
        }
    }
}

/// Value stored by `setField`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SetValue {
    Var(Var),
    Null,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum StmtKind {
    GetField { target: Var, record: Var, field: FieldId },
    SetField { record: Var, field: FieldId, value: SetValue },
    Create { record: Var },
    Copy { record: Var, source: Var },
    Union { record: Var, source: Var },
    Emit { record: Var },
    Assign { target: Var, expr: Expr },
    CondJump { cond: Var, target: Line },
    Jump { target: Line },
    Return,
}

impl StmtKind {
    /// Scalar variable defined by this statement, if any.
    pub fn scalar_def(&self) -> Option<&Var> {
        match self {
            StmtKind::GetField { target, .. } | StmtKind::Assign { target, .. } => Some(target),
            _ => None,
        }
    }

    /// Scalar variables read by this statement.
    pub fn scalar_uses(&self) -> Vec<&Var> {
        match self {
            StmtKind::Assign { expr, .. } => expr.vars(),
            StmtKind::SetField { value: SetValue::Var(v), .. } => vec![v],
            StmtKind::CondJump { cond, .. } => vec![cond],
            _ => Vec::new(),
        }
    }

    pub fn jump_target(&self) -> Option<Line> {
        match self {
            StmtKind::CondJump { target, .. } | StmtKind::Jump { target } => Some(*target),
            _ => None,
        }
    }
}

impl fmt::Display for StmtKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StmtKind::GetField { target, record, field } => {
                write!(f, "{target}:=getField({record},{field})")
            }
            StmtKind::SetField { record, field, value } => match value {
                SetValue::Var(v) => write!(f, "setField({record},{field},{v})"),
                SetValue::Null => write!(f, "setField({record},{field},null)"),
            },
            StmtKind::Create { record } => write!(f, "{record}:=create()"),
            StmtKind::Copy { record, source } => write!(f, "{record}:=copy({source})"),
            StmtKind::Union { record, source } => write!(f, "union({record},{source})"),
            StmtKind::Emit { record } => write!(f, "emit({record})"),
            StmtKind::Assign { target, expr } => write!(f, "{target}:={expr}"),
            StmtKind::CondJump { cond, target } => write!(f, "if {cond} goto {target}"),
            StmtKind::Jump { target } => write!(f, "goto {target}"),
            StmtKind::Return => write!(f, "return"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Statement {
    pub line: Line,
    pub kind: StmtKind,
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.line, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UdfError {
    #[error("{line}:{col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("empty UDF source")]
    Empty,
    #[error("line {line}: labels must be strictly increasing (previous label {previous})")]
    NonIncreasingLabel { line: Line, previous: Line },
    #[error("line {line}: jump target {target} does not exist")]
    UndefinedJumpTarget { line: Line, target: Line },
    #[error("line {line}: conditional jump cannot be the last statement")]
    TrailingCondJump { line: Line },
    #[error("UDF `{name}` takes {arity} input records; expected 1 or 2")]
    BadArity { name: String, arity: usize },
    #[error("duplicate parameter {0}")]
    DuplicateParam(Var),
    #[error("UDF `{0}` never emits a record")]
    NoEmit(String),
    #[error("line {line}: {var} is {actual} but is used as {expected}")]
    KindMismatch { line: Line, var: Var, expected: &'static str, actual: &'static str },
    #[error("line {line}: record {var} used before it is created")]
    RecordUsedBeforeDefinition { line: Line, var: Var },
    #[error("line {line}: variable {var} is never defined")]
    UndefinedVariable { line: Line, var: Var },
}

/// How a variable is used throughout a UDF.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Input(InputId),
    Output,
    Scalar,
}

impl VarKind {
    fn describe(self) -> &'static str {
        match self {
            VarKind::Input(_) => "an input record",
            VarKind::Output => "an output record",
            VarKind::Scalar => "a scalar",
        }
    }
}

#[derive(Clone, Copy)]
enum Expected {
    Input,
    Output,
    Scalar,
}

impl Expected {
    fn describe(self) -> &'static str {
        match self {
            Expected::Input => "an input record",
            Expected::Output => "an output record",
            Expected::Scalar => "a scalar",
        }
    }
}

/// A validated UDF. Immutable once constructed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UdfBody {
    name: String,
    header_line: Option<Line>,
    params: Vec<Var>,
    stmts: Vec<Statement>,
    kinds: BTreeMap<Var, VarKind>,
}

impl UdfBody {
    /// Validates and builds a UDF from already-parsed parts.
    pub fn new(
        name: impl Into<String>,
        header_line: Option<Line>,
        params: Vec<Var>,
        stmts: Vec<Statement>,
    ) -> Result<Self, UdfError> {
        let name = name.into();
        if params.is_empty() || params.len() > 2 {
            return Err(UdfError::BadArity { name, arity: params.len() });
        }
        let mut kinds = BTreeMap::new();
        for (i, p) in params.iter().enumerate() {
            if kinds.insert(p.clone(), VarKind::Input(InputId(i as u8 + 1))).is_some() {
                return Err(UdfError::DuplicateParam(p.clone()));
            }
        }

        let mut previous = header_line;
        for s in &stmts {
            if let Some(prev) = previous {
                if s.line <= prev {
                    return Err(UdfError::NonIncreasingLabel { line: s.line, previous: prev });
                }
            }
            previous = Some(s.line);
        }
        let labels: BTreeSet<Line> = stmts.iter().map(|s| s.line).collect();
        for (i, s) in stmts.iter().enumerate() {
            if let Some(target) = s.kind.jump_target() {
                if !labels.contains(&target) {
                    return Err(UdfError::UndefinedJumpTarget { line: s.line, target });
                }
            }
            if matches!(s.kind, StmtKind::CondJump { .. }) && i + 1 == stmts.len() {
                return Err(UdfError::TrailingCondJump { line: s.line });
            }
        }

        // Classify every defined variable first so that uses can be checked
        // independently of textual order.
        for s in &stmts {
            let (var, kind) = match &s.kind {
                StmtKind::Create { record } | StmtKind::Copy { record, .. } => (record, VarKind::Output),
                StmtKind::GetField { target, .. } | StmtKind::Assign { target, .. } => (target, VarKind::Scalar),
                _ => continue,
            };
            match kinds.get(var) {
                None => {
                    kinds.insert(var.clone(), kind);
                }
                Some(existing) if *existing == kind => {}
                Some(existing) => {
                    return Err(UdfError::KindMismatch {
                        line: s.line,
                        var: var.clone(),
                        expected: kind.describe(),
                        actual: existing.describe(),
                    })
                }
            }
        }

        let expect = |line: Line, var: &Var, want: Expected| -> Result<VarKind, UdfError> {
            let kind = *kinds.get(var).ok_or_else(|| UdfError::UndefinedVariable { line, var: var.clone() })?;
            let ok = match want {
                Expected::Input => matches!(kind, VarKind::Input(_)),
                Expected::Output => kind == VarKind::Output,
                Expected::Scalar => kind == VarKind::Scalar,
            };
            if ok {
                Ok(kind)
            } else {
                Err(UdfError::KindMismatch {
                    line,
                    var: var.clone(),
                    expected: want.describe(),
                    actual: kind.describe(),
                })
            }
        };

        let mut created: BTreeSet<&Var> = BTreeSet::new();
        let mut emits = 0usize;
        for s in &stmts {
            let line = s.line;
            match &s.kind {
                StmtKind::GetField { record, .. } => {
                    expect(line, record, Expected::Input)?;
                }
                StmtKind::Copy { record, source } => {
                    expect(line, source, Expected::Input)?;
                    created.insert(record);
                }
                StmtKind::Create { record } => {
                    created.insert(record);
                }
                StmtKind::SetField { record, value, .. } => {
                    expect(line, record, Expected::Output)?;
                    if !created.contains(record) {
                        return Err(UdfError::RecordUsedBeforeDefinition { line, var: record.clone() });
                    }
                    if let SetValue::Var(v) = value {
                        expect(line, v, Expected::Scalar)?;
                    }
                }
                StmtKind::Union { record, source } => {
                    expect(line, record, Expected::Output)?;
                    expect(line, source, Expected::Input)?;
                    if !created.contains(record) {
                        return Err(UdfError::RecordUsedBeforeDefinition { line, var: record.clone() });
                    }
                }
                StmtKind::Emit { record } => {
                    expect(line, record, Expected::Output)?;
                    if !created.contains(record) {
                        return Err(UdfError::RecordUsedBeforeDefinition { line, var: record.clone() });
                    }
                    emits += 1;
                }
                StmtKind::Assign { expr, .. } => {
                    for v in expr.vars() {
                        expect(line, v, Expected::Scalar)?;
                    }
                }
                StmtKind::CondJump { cond, .. } => {
                    expect(line, cond, Expected::Scalar)?;
                }
                StmtKind::Jump { .. } | StmtKind::Return => {}
            }
        }
        if emits == 0 {
            return Err(UdfError::NoEmit(name));
        }

        Ok(UdfBody { name, header_line, params, stmts, kinds })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn header_line(&self) -> Option<Line> {
        self.header_line
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn arity(&self) -> usize {
        self.params.len()
    }

    pub fn stmts(&self) -> &[Statement] {
        &self.stmts
    }

    pub fn len(&self) -> usize {
        self.stmts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stmts.is_empty()
    }

    pub fn var_kind(&self, var: &Var) -> Option<VarKind> {
        self.kinds.get(var).copied()
    }

    /// Input id of an input-record variable.
    pub fn input_id(&self, var: &Var) -> Option<InputId> {
        match self.kinds.get(var) {
            Some(VarKind::Input(id)) => Some(*id),
            _ => None,
        }
    }

    /// Index of the statement carrying `line`.
    pub fn index_of(&self, line: Line) -> Option<usize> {
        self.stmts.binary_search_by_key(&line, |s| s.line).ok()
    }

    /// Indices of all `emit` statements, in textual order.
    pub fn emit_indices(&self) -> Vec<usize> {
        self.stmts.iter().enumerate().filter(|(_, s)| matches!(s.kind, StmtKind::Emit { .. })).map(|(i, _)| i).collect()
    }

    /// Scalar variables, in name order.
    pub fn scalar_vars(&self) -> Vec<&Var> {
        self.kinds.iter().filter(|(_, k)| **k == VarKind::Scalar).map(|(v, _)| v).collect()
    }
}

impl fmt::Display for UdfBody {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.header_line {
            write!(f, "{line}: ")?;
        }
        write!(f, "{}(", self.name)?;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "InRec {p}")?;
        }
        writeln!(f, ")")?;
        for s in &self.stmts {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}
