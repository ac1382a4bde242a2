// Copyright 2026 The Skyjoin Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Syntax tree of a cross-match query and its canonical printer.
//!
//! `Display` produces text that parses back to an identical tree.

use std::fmt;

use super::lexer::Position;

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub select: Vec<SelectItem>,
    pub into: Option<ObjectName>,
    pub from: Vec<TableSource>,
    pub where_clause: Option<Expr>,
    pub xmatch: Option<XmatchClause>,
    pub region: Option<RegionClause>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectItem {
    pub expr: Expr,
    pub alias: Option<String>,
}

/// `dataset:name`
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectName {
    pub dataset: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableSource {
    pub table: ObjectName,
    pub alias: Option<String>,
    pub position: Position,
}

impl TableSource {
    /// Alias if given, else the table name.
    pub fn effective_alias(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.table.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MatchMode {
    Must,
    May,
    Not,
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::Must => "MUST",
            MatchMode::May => "MAY",
            MatchMode::Not => "NOT",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sigma {
    /// Constant 1-sigma error in arcseconds.
    Arcsec(f64),
    /// Per-detection error column, arcseconds.
    Column(ColumnRef),
}

#[derive(Debug, Clone, PartialEq)]
pub struct XmatchConstraint {
    pub mode: MatchMode,
    pub alias: String,
    pub point: Vec<Expr>,
    pub sigma: Sigma,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XmatchClause {
    pub alias: String,
    pub constraints: Vec<XmatchConstraint>,
    pub limit: f64,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionClause {
    pub ra: f64,
    pub dec: f64,
    pub radius_arcmin: f64,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRef {
    pub qualifier: Option<String>,
    pub name: String,
    pub position: Position,
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{}.{}", ident(q), ident(&self.name)),
            None => f.write_str(&ident(&self.name)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

impl BinaryOp {
    pub fn precedence(self) -> u8 {
        use BinaryOp::*;
        match self {
            Or => 1,
            And => 2,
            Eq | NotEq | Lt | LtEq | Gt | GtEq => 4,
            Add | Sub => 5,
            Mul | Div | Mod => 6,
        }
    }

    pub fn symbol(self) -> &'static str {
        use BinaryOp::*;
        match self {
            Or => "OR",
            And => "AND",
            Eq => "=",
            NotEq => "<>",
            Lt => "<",
            LtEq => "<=",
            Gt => ">",
            GtEq => ">=",
            Add => "+",
            Sub => "-",
            Mul => "*",
            Div => "/",
            Mod => "%",
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 4
    }
}

// precedence of NOT is 3, of IS NULL 4, of unary minus 7
const PREC_NOT: u8 = 3;
const PREC_IS: u8 = 4;
const PREC_NEG: u8 = 7;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column(ColumnRef),
    Literal(Literal),
    Unary {
        op: UnaryOp,
        expr: Box<Expr>,
    },
    Binary {
        op: BinaryOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
    IsNull {
        expr: Box<Expr>,
        negated: bool,
    },
    Function {
        name: String,
        args: Vec<Expr>,
        star: bool,
        position: Position,
    },
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary { op, .. } => op.precedence(),
            Expr::Unary { op: UnaryOp::Not, .. } => PREC_NOT,
            Expr::Unary { op: UnaryOp::Neg, .. } => PREC_NEG,
            Expr::IsNull { .. } => PREC_IS,
            Expr::Literal(Literal::Int(i)) if *i < 0 => PREC_NEG,
            Expr::Literal(Literal::Float(x)) if x.is_sign_negative() => PREC_NEG,
            _ => u8::MAX,
        }
    }

    /// Every column reference in the expression, left to right.
    pub fn columns(&self) -> Vec<&ColumnRef> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Expr::Column(c) = e {
                out.push(c);
            }
        });
        out
    }

    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } => expr.walk(f),
            Expr::Binary { left, right, .. } => {
                left.walk(f);
                right.walk(f);
            }
            Expr::Function { args, .. } => args.iter().for_each(|a| a.walk(f)),
            Expr::Column(_) | Expr::Literal(_) => {}
        }
    }

    /// Splits a conjunction into its top-level `AND` operands.
    pub fn conjuncts(self) -> Vec<Expr> {
        match self {
            Expr::Binary { op: BinaryOp::And, left, right } => {
                let mut v = left.conjuncts();
                v.extend(right.conjuncts());
                v
            }
            e => vec![e],
        }
    }
}

/// Quotes an identifier when it would otherwise lex as something else.
pub fn ident(name: &str) -> String {
    let plain = name.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_alphanumeric() || c == '_')
        && super::lexer::tokenize(name)
            .map(|t| matches!(t[0].token, super::lexer::Token::Ident(_)))
            .unwrap_or(false);
    if plain {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

/// Float literal text that lexes back as a float with the same value.
pub fn float_literal(x: f64) -> String {
    format!("{x:?}")
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Null => f.write_str("NULL"),
            Literal::Bool(true) => f.write_str("TRUE"),
            Literal::Bool(false) => f.write_str("FALSE"),
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Float(x) => f.write_str(&float_literal(*x)),
            Literal::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Expr, min_prec: u8) -> fmt::Result {
    if child.precedence() < min_prec {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Column(c) => write!(f, "{c}"),
            Expr::Literal(l) => write!(f, "{l}"),
            Expr::Unary { op: UnaryOp::Neg, expr } => {
                f.write_str("-")?;
                // "--" would start a comment
                let numeric = matches!(**expr, Expr::Literal(Literal::Int(_) | Literal::Float(_)));
                if numeric || expr.precedence() <= PREC_NEG || matches!(**expr, Expr::Unary { .. }) {
                    write!(f, "({expr})")
                } else {
                    write!(f, "{expr}")
                }
            }
            Expr::Unary { op: UnaryOp::Not, expr } => {
                f.write_str("NOT ")?;
                write_child(f, expr, PREC_NOT)
            }
            Expr::Binary { op, left, right } => {
                let p = op.precedence();
                // comparisons are non-associative
                let left_min = if op.is_comparison() { p + 1 } else { p };
                write_child(f, left, left_min)?;
                write!(f, " {} ", op.symbol())?;
                write_child(f, right, p + 1)
            }
            Expr::IsNull { expr, negated } => {
                write_child(f, expr, PREC_IS + 1)?;
                f.write_str(if *negated { " IS NOT NULL" } else { " IS NULL" })
            }
            Expr::Function { name, args, star, .. } => {
                write!(f, "{}(", ident(name))?;
                if *star {
                    f.write_str("*")?;
                }
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for ObjectName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", ident(&self.dataset), ident(&self.name))
    }
}

impl fmt::Display for SelectItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.expr)?;
        if let Some(a) = &self.alias {
            write!(f, " AS {}", ident(a))?;
        }
        Ok(())
    }
}

impl fmt::Display for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sigma::Arcsec(x) => f.write_str(&signed_number(*x)),
            Sigma::Column(c) => write!(f, "{c}"),
        }
    }
}

fn signed_number(x: f64) -> String {
    float_literal(x)
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        for (i, item) in self.select.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{item}")?;
        }
        if let Some(into) = &self.into {
            write!(f, "\nINTO {into}")?;
        }
        for (i, src) in self.from.iter().enumerate() {
            f.write_str(if i == 0 { "\nFROM " } else { "\n  CROSS JOIN " })?;
            write!(f, "{}", src.table)?;
            if let Some(a) = &src.alias {
                write!(f, " AS {}", ident(a))?;
            }
        }
        if let Some(w) = &self.where_clause {
            write!(f, "\nWHERE {w}")?;
        }
        if let Some(x) = &self.xmatch {
            write!(f, "\nXMATCH BAYESIAN AS {}", ident(&x.alias))?;
            for c in &x.constraints {
                write!(f, "\n  {} {} ON POINT(", c.mode, ident(&c.alias))?;
                for (i, p) in c.point.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, "), {}", c.sigma)?;
            }
            write!(f, "\n  HAVING LIMIT {}", float_literal(x.limit))?;
        }
        if let Some(r) = &self.region {
            write!(
                f,
                "\nREGION CIRCLE J2000 {} {} {}",
                signed_number(r.ra),
                signed_number(r.dec),
                signed_number(r.radius_arcmin)
            )?;
        }
        Ok(())
    }
}

impl Query {
    /// Copy with every source position zeroed, for structural comparison.
    pub fn without_positions(&self) -> Query {
        let mut q = self.clone();
        let zero = Position::default();
        for s in &mut q.select {
            strip_expr(&mut s.expr);
        }
        for src in &mut q.from {
            src.position = zero;
        }
        if let Some(w) = &mut q.where_clause {
            strip_expr(w);
        }
        if let Some(x) = &mut q.xmatch {
            x.position = zero;
            for c in &mut x.constraints {
                c.position = zero;
                c.point.iter_mut().for_each(strip_expr);
                if let Sigma::Column(col) = &mut c.sigma {
                    col.position = zero;
                }
            }
        }
        if let Some(r) = &mut q.region {
            r.position = zero;
        }
        q
    }
}

fn strip_expr(e: &mut Expr) {
    match e {
        Expr::Column(c) => c.position = Position::default(),
        Expr::Literal(_) => {}
        Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } => strip_expr(expr),
        Expr::Binary { left, right, .. } => {
            strip_expr(left);
            strip_expr(right);
        }
        Expr::Function { args, position, .. } => {
            *position = Position::default();
            args.iter_mut().for_each(strip_expr);
        }
    }
}
