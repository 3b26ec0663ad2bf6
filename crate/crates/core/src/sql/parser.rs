//! Hand-written lexer and recursive-descent parser for the supported subset.
//!
//! ```text
//! query     := SELECT projection FROM ident [WHERE expr] [';']
//! projection:= '*' | item (',' item)*
//! item      := column | agg '(' (column | '*') ')'
//! expr      := and (OR and)*
//! and       := unary (AND unary)*
//! unary     := NOT unary | '(' expr ')' | predicate
//! predicate := operand cmp operand | operand [NOT] IN '(' (query | literal, ...) ')'
//! operand   := column | literal | '(' query ')'
//! ```

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::ast::*;
use super::SqlError;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Int(String),
    Real(String),
    Str(String),
    Star,
    Comma,
    LParen,
    RParen,
    Semi,
    Dot,
    Minus,
    Op(CmpOp),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

const RESERVED: &[&str] = &["select", "from", "where", "and", "or", "not", "in", "null"];

const UNSUPPORTED: &[&str] = &[
    "join", "inner", "left", "right", "outer", "cross", "group", "order", "limit", "offset",
    "having", "union", "intersect", "except", "distinct", "as", "on", "between", "like", "is",
    "exists", "case", "with",
];

const WRITES: &[&str] = &["insert", "update", "delete", "create", "drop", "alter", "replace"];

fn syntax(pos: usize, message: impl Into<String>) -> SqlError {
    SqlError::Syntax { pos, message: message.into() }
}

fn lex(src: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'*' => {
                i += 1;
                Tok::Star
            }
            b',' => {
                i += 1;
                Tok::Comma
            }
            b'(' => {
                i += 1;
                Tok::LParen
            }
            b')' => {
                i += 1;
                Tok::RParen
            }
            b';' => {
                i += 1;
                Tok::Semi
            }
            b'.' if !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                i += 1;
                Tok::Dot
            }
            b'-' => {
                i += 1;
                Tok::Minus
            }
            b'=' => {
                i += 1;
                Tok::Op(CmpOp::Eq)
            }
            b'<' => match bytes.get(i + 1) {
                Some(b'=') => {
                    i += 2;
                    Tok::Op(CmpOp::LtEq)
                }
                Some(b'>') => {
                    i += 2;
                    Tok::Op(CmpOp::NotEq)
                }
                _ => {
                    i += 1;
                    Tok::Op(CmpOp::Lt)
                }
            },
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    Tok::Op(CmpOp::GtEq)
                } else {
                    i += 1;
                    Tok::Op(CmpOp::Gt)
                }
            }
            b'!' if bytes.get(i + 1) == Some(&b'=') => {
                i += 2;
                Tok::Op(CmpOp::NotEq)
            }
            b'\'' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match src[i..].chars().next() {
                        None => return Err(syntax(start, "unterminated string literal")),
                        Some('\'') if bytes.get(i + 1) == Some(&b'\'') => {
                            s.push('\'');
                            i += 2;
                        }
                        Some('\'') => {
                            i += 1;
                            break;
                        }
                        Some(ch) => {
                            s.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                Tok::Str(s)
            }
            b'0'..=b'9' | b'.' => {
                let mut real = false;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    real = true;
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        real = true;
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = src[start..i].to_string();
                if real {
                    Tok::Real(text)
                } else {
                    Tok::Int(text)
                }
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                Tok::Word(src[start..i].to_string())
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(syntax(i, format!("unexpected character '{ch}'")));
            }
        };
        out.push(Token { tok, pos: start });
    }
    out.push(Token { tok: Tok::Eof, pos: src.len() });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    at: usize,
}

pub fn parse(sql: &str) -> Result<Select, SqlError> {
    let toks = lex(sql)?;
    let mut p = Parser { toks, at: 0 };
    if let Tok::Word(w) = &p.peek().tok {
        if WRITES.iter().any(|k| w.eq_ignore_ascii_case(k)) {
            return Err(SqlError::Unsupported(format!(
                "{} statements are not distributed; only SELECT is supported",
                w.to_ascii_uppercase()
            )));
        }
    }
    let select = p.select()?;
    if p.peek().tok == Tok::Semi {
        p.bump();
    }
    p.expect_end()?;
    Ok(select)
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.at]
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.at + n).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at < self.toks.len() - 1 {
            self.at += 1;
        }
        t
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("expected {}", kw.to_ascii_uppercase())))
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), SqlError> {
        if self.peek().tok == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&format!("expected {what}")))
        }
    }

    /// Error for the current token, upgraded to `Unsupported` when it names a
    /// construct outside the subset.
    fn unexpected(&self, msg: &str) -> SqlError {
        let t = self.peek();
        match &t.tok {
            Tok::Word(w) if UNSUPPORTED.iter().any(|k| w.eq_ignore_ascii_case(k)) => {
                SqlError::Unsupported(format!("{} is not supported", w.to_ascii_uppercase()))
            }
            Tok::Eof => syntax(t.pos, format!("{msg}, found end of input")),
            other => syntax(t.pos, format!("{msg}, found {}", describe(other))),
        }
    }

    fn expect_end(&mut self) -> Result<(), SqlError> {
        if self.peek().tok == Tok::Eof {
            Ok(())
        } else if self.peek().tok == Tok::Comma {
            Err(SqlError::Unsupported("multi-table FROM is not supported".into()))
        } else {
            Err(self.unexpected("expected end of query"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, SqlError> {
        match &self.peek().tok {
            Tok::Word(w) if !is_reserved(w) && !is_unsupported(w) => {
                let w = w.clone();
                self.bump();
                Ok(w)
            }
            _ => Err(self.unexpected(&format!("expected {what}"))),
        }
    }

    fn column_ref(&mut self) -> Result<ColumnRef, SqlError> {
        let first = self.ident("column name")?;
        if self.peek().tok == Tok::Dot {
            self.bump();
            let name = self.ident("column name")?;
            Ok(ColumnRef { qualifier: Some(first), name })
        } else {
            Ok(ColumnRef { qualifier: None, name: first })
        }
    }

    fn select(&mut self) -> Result<Select, SqlError> {
        self.expect_kw("select")?;
        let projection = if self.peek().tok == Tok::Star {
            self.bump();
            Projection::Star
        } else {
            let mut items = alloc::vec![self.select_item()?];
            while self.peek().tok == Tok::Comma {
                self.bump();
                items.push(self.select_item()?);
            }
            Projection::Items(items)
        };
        self.expect_kw("from")?;
        let table = self.ident("table name")?;
        let predicate = if self.eat_kw("where") {
            let mut slot = 0;
            Some(self.expr(&mut slot)?)
        } else {
            None
        };
        Ok(Select { projection, table, predicate })
    }

    fn select_item(&mut self) -> Result<SelectItem, SqlError> {
        if let Tok::Word(w) = &self.peek().tok {
            if let Some(func) = AggFunc::from_name(w) {
                if *self.peek_at(1) == Tok::LParen {
                    self.bump();
                    self.bump();
                    let arg = if self.peek().tok == Tok::Star {
                        let pos = self.bump().pos;
                        if func != AggFunc::Count {
                            return Err(syntax(pos, format!("{}(*) is not valid", func.name())));
                        }
                        AggArg::Star
                    } else {
                        AggArg::Column(self.column_ref()?)
                    };
                    self.expect(Tok::RParen, "')'")?;
                    return Ok(SelectItem::Aggregate { func, arg });
                }
            }
        }
        Ok(SelectItem::Column(self.column_ref()?))
    }

    fn expr(&mut self, slot: &mut usize) -> Result<Expr, SqlError> {
        let mut left = self.and_expr(slot)?;
        while self.eat_kw("or") {
            let right = self.and_expr(slot)?;
            left = Expr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and_expr(&mut self, slot: &mut usize) -> Result<Expr, SqlError> {
        let mut left = self.unary(slot)?;
        while self.eat_kw("and") {
            let right = self.unary(slot)?;
            left = Expr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn unary(&mut self, slot: &mut usize) -> Result<Expr, SqlError> {
        if self.eat_kw("not") {
            return Ok(Expr::Not(Box::new(self.unary(slot)?)));
        }
        if self.peek().tok == Tok::LParen && !self.subquery_ahead() {
            self.bump();
            let e = self.expr(slot)?;
            self.expect(Tok::RParen, "')'")?;
            return Ok(e);
        }
        self.predicate(slot)
    }

    fn subquery_ahead(&self) -> bool {
        matches!(self.peek_at(1), Tok::Word(w) if w.eq_ignore_ascii_case("select"))
    }

    fn predicate(&mut self, slot: &mut usize) -> Result<Expr, SqlError> {
        let left = self.operand(slot)?;
        let negated = self.eat_kw("not");
        if self.eat_kw("in") {
            self.expect(Tok::LParen, "'(' after IN")?;
            if self.is_kw("select") {
                let query = self.select()?;
                self.expect(Tok::RParen, "')'")?;
                let subquery = Subquery { slot: *slot, query: Box::new(query) };
                *slot += 1;
                return Ok(Expr::InSubquery { operand: left, negated, subquery });
            }
            // An empty list is what a plain subquery with no rows binds to.
            let mut list = Vec::new();
            if self.peek().tok != Tok::RParen {
                list.push(self.literal()?);
                while self.peek().tok == Tok::Comma {
                    self.bump();
                    list.push(self.literal()?);
                }
            }
            self.expect(Tok::RParen, "')'")?;
            return Ok(Expr::InList { operand: left, negated, list });
        }
        if negated {
            return Err(self.unexpected("expected IN after NOT"));
        }
        let op = match self.peek().tok {
            Tok::Op(op) => {
                self.bump();
                op
            }
            _ => return Err(self.unexpected("expected comparison operator")),
        };
        let right = self.operand(slot)?;
        Ok(Expr::Compare { left, op, right })
    }

    fn operand(&mut self, slot: &mut usize) -> Result<Operand, SqlError> {
        match &self.peek().tok {
            Tok::LParen if self.subquery_ahead() => {
                self.bump();
                let query = self.select()?;
                self.expect(Tok::RParen, "')'")?;
                let s = Subquery { slot: *slot, query: Box::new(query) };
                *slot += 1;
                Ok(Operand::Subquery(s))
            }
            Tok::Word(w) if !w.eq_ignore_ascii_case("null") => Ok(Operand::Column(self.column_ref()?)),
            _ => Ok(Operand::Literal(self.literal()?)),
        }
    }

    fn literal(&mut self) -> Result<Value, SqlError> {
        let t = self.peek().clone();
        let negative = t.tok == Tok::Minus;
        if negative {
            self.bump();
        }
        let t = self.peek().clone();
        let v = match &t.tok {
            Tok::Int(s) => {
                let text = if negative { format!("-{s}") } else { s.clone() };
                match text.parse::<i64>() {
                    Ok(i) => Value::Integer(i),
                    Err(_) => return Err(syntax(t.pos, "integer literal out of range")),
                }
            }
            Tok::Real(s) => {
                let r: f64 = s.parse().map_err(|_| syntax(t.pos, "malformed number"))?;
                if !r.is_finite() {
                    return Err(syntax(t.pos, "real literal out of range"));
                }
                Value::Real(if negative { -r } else { r })
            }
            Tok::Str(s) if !negative => Value::Text(s.clone()),
            Tok::Word(w) if !negative && w.eq_ignore_ascii_case("null") => Value::Null,
            _ => return Err(self.unexpected("expected literal")),
        };
        self.bump();
        Ok(v)
    }
}

fn is_reserved(w: &str) -> bool {
    RESERVED.iter().any(|k| w.eq_ignore_ascii_case(k))
}

fn is_unsupported(w: &str) -> bool {
    UNSUPPORTED.iter().any(|k| w.eq_ignore_ascii_case(k))
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Word(w) => format!("'{w}'"),
        Tok::Int(s) | Tok::Real(s) => format!("number {s}"),
        Tok::Str(s) => format!("string '{s}'"),
        Tok::Star => "'*'".into(),
        Tok::Comma => "','".into(),
        Tok::LParen => "'('".into(),
        Tok::RParen => "')'".into(),
        Tok::Semi => "';'".into(),
        Tok::Dot => "'.'".into(),
        Tok::Minus => "'-'".into(),
        Tok::Op(op) => format!("'{}'", op.symbol()),
        Tok::Eof => "end of input".into(),
    }
}
