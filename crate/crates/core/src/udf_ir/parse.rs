// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

use super::{BinOp, Expr, FieldId, Line, SetValue, Statement, StmtKind, UdfBody, UdfError, Var};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Int(i64),
    Var(String),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Colon,
    Assign,
    Op(BinOp),
}

struct Lexed {
    tok: Tok,
    col: usize,
}

fn lex(text: &str, line: usize) -> Result<Vec<Lexed>, UdfError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |col: usize, message: String| UdfError::Syntax { line, col, message };
    while i < bytes.len() {
        let c = bytes[i] as char;
        let col = i + 1;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let two = text.get(i..i + 2).unwrap_or("");
        let (tok, len) = match c {
            '(' => (Tok::LParen, 1),
            ')' => (Tok::RParen, 1),
            ',' => (Tok::Comma, 1),
            '+' => (Tok::Op(BinOp::Add), 1),
            '-' => (Tok::Op(BinOp::Sub), 1),
            '*' => (Tok::Op(BinOp::Mul), 1),
            ':' if two == ":=" => (Tok::Assign, 2),
            ':' => (Tok::Colon, 1),
            '<' if two == "<=" => (Tok::Op(BinOp::Le), 2),
            '<' => (Tok::Op(BinOp::Lt), 1),
            '>' if two == ">=" => (Tok::Op(BinOp::Ge), 2),
            '>' => (Tok::Op(BinOp::Gt), 1),
            '=' if two == "==" => (Tok::Op(BinOp::Eq), 2),
            '=' => (Tok::Assign, 1),
            '!' if two == "!=" => (Tok::Op(BinOp::Ne), 2),
            '$' => {
                let start = i + 1;
                let mut end = start;
                while end < bytes.len() && is_ident_char(bytes[end] as char) {
                    end += 1;
                }
                if end == start {
                    return Err(err(col, "expected a variable name after `$`".into()));
                }
                (Tok::Var(text[start..end].to_string()), end - i)
            }
            c if c.is_ascii_digit() => {
                let mut end = i;
                while end < bytes.len() && (bytes[end] as char).is_ascii_digit() {
                    end += 1;
                }
                let value = text[i..end]
                    .parse::<i64>()
                    .map_err(|_| err(col, format!("integer `{}` out of range", &text[i..end])))?;
                (Tok::Int(value), end - i)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut end = i;
                while end < bytes.len() && is_ident_char(bytes[end] as char) {
                    end += 1;
                }
                (Tok::Ident(text[i..end].to_string()), end - i)
            }
            other => return Err(err(col, format!("unexpected character `{other}`"))),
        };
        out.push(Lexed { tok, col });
        i += len;
    }
    Ok(out)
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Int(i) => format!("`{i}`"),
        Tok::Var(v) => format!("`${v}`"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Colon => "`:`".into(),
        Tok::Assign => "`:=`".into(),
        Tok::Op(op) => format!("`{}`", op.symbol()),
    }
}

struct Cursor<'a> {
    toks: &'a [Lexed],
    pos: usize,
    line: usize,
    end_col: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos).map(|l| &l.tok)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |l| l.col)
    }

    fn error(&self, message: impl Into<String>) -> UdfError {
        UdfError::Syntax { line: self.line, col: self.col(), message: message.into() }
    }

    fn unexpected(&self, wanted: &str) -> UdfError {
        match self.peek() {
            Some(tok) => self.error(format!("expected {wanted}, found {}", describe(tok))),
            None => self.error(format!("expected {wanted}, found end of line")),
        }
    }

    fn next(&mut self) -> Option<&'a Tok> {
        let tok = self.peek();
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), UdfError> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.unexpected(&describe(&tok)))
        }
    }

    fn var(&mut self) -> Result<Var, UdfError> {
        match self.peek() {
            Some(Tok::Var(v)) => {
                self.pos += 1;
                Ok(Var::new(v.clone()))
            }
            _ => Err(self.unexpected("a `$` variable")),
        }
    }

    fn field(&mut self) -> Result<FieldId, UdfError> {
        match self.peek() {
            Some(Tok::Int(i)) => {
                let value = FieldId::try_from(*i).map_err(|_| self.error(format!("field id {i} out of range")))?;
                self.pos += 1;
                Ok(value)
            }
            _ => Err(self.unexpected("a field number")),
        }
    }

    fn label(&mut self) -> Result<Line, UdfError> {
        match self.peek() {
            Some(Tok::Int(i)) if *i > 0 && *i <= i64::from(Line::MAX) => {
                self.pos += 1;
                Ok(*i as Line)
            }
            Some(Tok::Int(i)) => Err(self.error(format!("statement label {i} must be positive"))),
            _ => Err(self.unexpected("a statement label")),
        }
    }

    fn keyword(&mut self, word: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn finish(&self) -> Result<(), UdfError> {
        match self.peek() {
            None => Ok(()),
            Some(_) => Err(self.unexpected("end of statement")),
        }
    }
}

/// Parses a UDF listing.
pub fn parse_udf(text: &str) -> Result<UdfBody, UdfError> {
    let mut header: Option<(Option<Line>, String, Vec<Var>)> = None;
    let mut stmts = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let toks = lex(content, line_no)?;
        let mut cur = Cursor { toks: &toks, pos: 0, line: line_no, end_col: content.len() + 1 };
        if header.is_none() {
            header = Some(parse_header(&mut cur)?);
        } else {
            stmts.push(parse_statement(&mut cur)?);
        }
        cur.finish()?;
    }

    let (header_line, name, params) = header.ok_or(UdfError::Empty)?;
    UdfBody::new(name, header_line, params, stmts)
}

fn parse_header(cur: &mut Cursor<'_>) -> Result<(Option<Line>, String, Vec<Var>), UdfError> {
    let label = if matches!(cur.peek(), Some(Tok::Int(_))) {
        let l = cur.label()?;
        cur.expect(Tok::Colon)?;
        Some(l)
    } else {
        None
    };
    let name = match cur.next() {
        Some(Tok::Ident(name)) => name.clone(),
        _ => {
            cur.pos = cur.pos.saturating_sub(1);
            return Err(cur.unexpected("a UDF name"));
        }
    };
    cur.expect(Tok::LParen)?;
    let mut params = Vec::new();
    if !cur.eat(&Tok::RParen) {
        loop {
            if !cur.keyword("InRec") {
                return Err(cur.unexpected("`InRec`"));
            }
            params.push(cur.var()?);
            if cur.eat(&Tok::RParen) {
                break;
            }
            cur.expect(Tok::Comma)?;
        }
    }
    Ok((label, name, params))
}

fn parse_statement(cur: &mut Cursor<'_>) -> Result<Statement, UdfError> {
    let line = cur.label()?;
    cur.expect(Tok::Colon)?;
    let kind = match cur.peek() {
        Some(Tok::Var(_)) => {
            let target = cur.var()?;
            cur.expect(Tok::Assign)?;
            parse_definition(cur, target)?
        }
        Some(Tok::Ident(word)) => {
            let word = word.clone();
            cur.pos += 1;
            match word.as_str() {
                "setField" => {
                    cur.expect(Tok::LParen)?;
                    let record = cur.var()?;
                    cur.expect(Tok::Comma)?;
                    let field = cur.field()?;
                    cur.expect(Tok::Comma)?;
                    let value = if cur.keyword("null") { SetValue::Null } else { SetValue::Var(cur.var()?) };
                    cur.expect(Tok::RParen)?;
                    StmtKind::SetField { record, field, value }
                }
                "union" => {
                    cur.expect(Tok::LParen)?;
                    let record = cur.var()?;
                    cur.expect(Tok::Comma)?;
                    let source = cur.var()?;
                    cur.expect(Tok::RParen)?;
                    StmtKind::Union { record, source }
                }
                "emit" => {
                    cur.expect(Tok::LParen)?;
                    let record = cur.var()?;
                    cur.expect(Tok::RParen)?;
                    StmtKind::Emit { record }
                }
                "goto" => StmtKind::Jump { target: cur.label()? },
                "if" => {
                    let cond = cur.var()?;
                    if !cur.keyword("goto") {
                        return Err(cur.unexpected("`goto`"));
                    }
                    StmtKind::CondJump { cond, target: cur.label()? }
                }
                "return" => StmtKind::Return,
                other => {
                    cur.pos -= 1;
                    return Err(cur.error(format!("unknown statement `{other}`")));
                }
            }
        }
        _ => return Err(cur.unexpected("a statement")),
    };
    Ok(Statement { line, kind })
}

fn parse_definition(cur: &mut Cursor<'_>, target: Var) -> Result<StmtKind, UdfError> {
    if let Some(Tok::Ident(word)) = cur.peek() {
        if matches!(cur.toks.get(cur.pos + 1).map(|l| &l.tok), Some(Tok::LParen)) {
            let word = word.clone();
            cur.pos += 2;
            let kind = match word.as_str() {
                "getField" => {
                    let record = cur.var()?;
                    cur.expect(Tok::Comma)?;
                    let field = cur.field()?;
                    StmtKind::GetField { target, record, field }
                }
                "create" => StmtKind::Create { record: target },
                "copy" => StmtKind::Copy { record: target, source: cur.var()? },
                other => {
                    cur.pos -= 2;
                    return Err(cur.error(format!("unknown function `{other}`")));
                }
            };
            cur.expect(Tok::RParen)?;
            return Ok(kind);
        }
    }
    Ok(StmtKind::Assign { target, expr: parse_comparison(cur)? })
}

fn parse_comparison(cur: &mut Cursor<'_>) -> Result<Expr, UdfError> {
    let mut lhs = parse_additive(cur)?;
    while let Some(Tok::Op(op @ (BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne))) = cur.peek() {
        cur.pos += 1;
        let rhs = parse_additive(cur)?;
        lhs = Expr::Binary(*op, Box::new(lhs), Box::new(rhs));
    }
    Ok(lhs)
}

fn parse_additive(cur: &mut Cursor<'_>) -> Result<Expr, UdfError> {
    let mut lhs = parse_term(cur)?;
    while let Some(Tok::Op(op @ (BinOp::Add | BinOp::Sub))) = cur.peek() {
        cur.pos += 1;
        let rhs = parse_term(cur)?;
        lhs = Expr::Binary(*op, Box::new(lhs), Box::new(rhs));
    }
    Ok(lhs)
}

fn parse_term(cur: &mut Cursor<'_>) -> Result<Expr, UdfError> {
    let mut lhs = parse_atom(cur)?;
    while cur.eat(&Tok::Op(BinOp::Mul)) {
        let rhs = parse_atom(cur)?;
        lhs = Expr::Binary(BinOp::Mul, Box::new(lhs), Box::new(rhs));
    }
    Ok(lhs)
}

fn parse_atom(cur: &mut Cursor<'_>) -> Result<Expr, UdfError> {
    match cur.peek() {
        Some(Tok::Var(_)) => Ok(Expr::Var(cur.var()?)),
        Some(Tok::Int(i)) => {
            let i = *i;
            cur.pos += 1;
            Ok(Expr::Const(i))
        }
        Some(Tok::Op(BinOp::Sub)) => {
            cur.pos += 1;
            // A minus directly before a literal is part of the literal.
            if let Some(Tok::Int(i)) = cur.peek() {
                let i = *i;
                cur.pos += 1;
                return Ok(Expr::Const(-i));
            }
            Ok(Expr::Neg(Box::new(parse_atom(cur)?)))
        }
        Some(Tok::LParen) => {
            cur.pos += 1;
            let inner = parse_comparison(cur)?;
            cur.expect(Tok::RParen)?;
            Ok(inner)
        }
        _ => Err(cur.unexpected("an expression")),
    }
}
