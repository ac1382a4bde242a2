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

//! Recursive-descent parser for the extended SQL grammar (see
//! `docs/grammar.md`).

use thiserror::Error;

use super::ast::*;
use super::lexer::{tokenize, Keyword, LexError, Position, Spanned, Token};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at {position}: expected {expected}, found {found}")]
pub struct SyntaxError {
    pub position: Position,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
}

impl ParseError {
    pub fn position(&self) -> Position {
        match self {
            ParseError::Lex(e) => e.position,
            ParseError::Syntax(e) => e.position,
        }
    }
}

/// Tokenizes and parses a query.
pub fn parse_query(text: &str) -> Result<Query, ParseError> {
    let tokens = tokenize(text)?;
    Ok(parse(&tokens)?)
}

pub fn parse(tokens: &[Spanned]) -> Result<Query, SyntaxError> {
    let mut p = Parser { tokens, pos: 0 };
    let q = p.query()?;
    p.eat(&Token::Semicolon);
    p.expect_eof()?;
    Ok(q)
}

struct Parser<'t> {
    tokens: &'t [Spanned],
    pos: usize,
}

type PResult<T> = Result<T, SyntaxError>;

impl<'t> Parser<'t> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)].token
    }

    fn here(&self) -> Position {
        self.tokens[self.pos.min(self.tokens.len() - 1)].position
    }

    fn advance(&mut self) -> &Token {
        let t = &self.tokens[self.pos.min(self.tokens.len() - 1)].token;
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, expected: impl Into<String>) -> PResult<T> {
        Err(SyntaxError {
            position: self.here(),
            expected: expected.into(),
            found: self.peek().to_string(),
        })
    }

    fn eat(&mut self, t: &Token) -> bool {
        if self.peek() == t {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: Keyword) -> bool {
        self.eat(&Token::Keyword(k))
    }

    fn expect(&mut self, t: Token) -> PResult<()> {
        if self.eat(&t) {
            Ok(())
        } else {
            self.error(t.to_string())
        }
    }

    fn expect_kw(&mut self, k: Keyword) -> PResult<()> {
        if self.eat_kw(k) {
            Ok(())
        } else {
            self.error(k.as_str())
        }
    }

    fn expect_eof(&mut self) -> PResult<()> {
        if *self.peek() == Token::Eof {
            Ok(())
        } else {
            self.error("end of query")
        }
    }

    fn identifier(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Token::Ident(s) => {
                self.advance();
                Ok(s)
            }
            _ => self.error(what),
        }
    }

    fn query(&mut self) -> PResult<Query> {
        self.expect_kw(Keyword::Select)?;
        let mut select = vec![self.select_item()?];
        while self.eat(&Token::Comma) {
            select.push(self.select_item()?);
        }
        let into = if self.eat_kw(Keyword::Into) {
            Some(self.object_name("output table name (dataset:table)")?)
        } else {
            None
        };
        self.expect_kw(Keyword::From)?;
        let mut from = vec![self.table_source()?];
        while self.eat_kw(Keyword::Cross) {
            self.expect_kw(Keyword::Join)?;
            from.push(self.table_source()?);
        }
        let where_clause = if self.eat_kw(Keyword::Where) {
            Some(self.expr()?)
        } else {
            None
        };
        let xmatch = if *self.peek() == Token::Keyword(Keyword::Xmatch) {
            Some(self.xmatch()?)
        } else {
            None
        };
        let region = if *self.peek() == Token::Keyword(Keyword::Region) {
            Some(self.region()?)
        } else {
            None
        };
        Ok(Query {
            select,
            into,
            from,
            where_clause,
            xmatch,
            region,
        })
    }

    fn select_item(&mut self) -> PResult<SelectItem> {
        let expr = self.expr()?;
        let alias = if self.eat_kw(Keyword::As) {
            Some(self.identifier("column alias")?)
        } else {
            None
        };
        Ok(SelectItem { expr, alias })
    }

    fn object_name(&mut self, what: &str) -> PResult<ObjectName> {
        match self.peek().clone() {
            Token::QualifiedName(dataset, name) => {
                self.advance();
                Ok(ObjectName { dataset, name })
            }
            _ => self.error(what),
        }
    }

    fn table_source(&mut self) -> PResult<TableSource> {
        let position = self.here();
        let table = self.object_name("table name (dataset:table)")?;
        let alias = if self.eat_kw(Keyword::As) {
            Some(self.identifier("table alias")?)
        } else if let Token::Ident(a) = self.peek().clone() {
            self.advance();
            Some(a)
        } else {
            None
        };
        Ok(TableSource { table, alias, position })
    }

    fn xmatch(&mut self) -> PResult<XmatchClause> {
        let position = self.here();
        self.expect_kw(Keyword::Xmatch)?;
        self.expect_kw(Keyword::Bayesian)?;
        self.expect_kw(Keyword::As)?;
        let alias = self.identifier("cross-match alias")?;
        let mut constraints = Vec::new();
        loop {
            let mode = match self.peek() {
                Token::Keyword(Keyword::Must) => MatchMode::Must,
                Token::Keyword(Keyword::May) => MatchMode::May,
                Token::Keyword(Keyword::Not) => MatchMode::Not,
                _ if constraints.is_empty() => return self.error("MUST, MAY or NOT"),
                _ => break,
            };
            let cpos = self.here();
            self.advance();
            let table_alias = self.identifier("table alias")?;
            self.expect_kw(Keyword::On)?;
            self.expect_kw(Keyword::Point)?;
            self.expect(Token::LParen)?;
            let mut point = vec![self.expr()?];
            while self.eat(&Token::Comma) {
                point.push(self.expr()?);
            }
            if !(2..=3).contains(&point.len()) {
                return Err(SyntaxError {
                    position: self.here(),
                    expected: "POINT with 2 (ra, dec) or 3 (x, y, z) arguments".into(),
                    found: format!("{} arguments", point.len()),
                });
            }
            self.expect(Token::RParen)?;
            self.expect(Token::Comma)?;
            let sigma = self.sigma()?;
            constraints.push(XmatchConstraint {
                mode,
                alias: table_alias,
                point,
                sigma,
                position: cpos,
            });
        }
        if *self.peek() != Token::Keyword(Keyword::Having) {
            return self.error("HAVING LIMIT (required), MUST, MAY or NOT");
        }
        self.advance();
        self.expect_kw(Keyword::Limit)?;
        let limit = self.number("Bayes factor limit")?;
        if !(limit > 0.0 && limit.is_finite()) {
            self.pos -= 1;
            return self.error("positive Bayes factor limit");
        }
        Ok(XmatchClause {
            alias,
            constraints,
            limit,
            position,
        })
    }

    fn sigma(&mut self) -> PResult<Sigma> {
        match self.peek().clone() {
            Token::Integer(_) | Token::Float(_) => {
                let v = self.number("astrometric error")?;
                if v <= 0.0 {
                    self.pos -= 1;
                    return self.error("positive astrometric error (arcsec)");
                }
                Ok(Sigma::Arcsec(v))
            }
            Token::Ident(_) => match self.primary()? {
                Expr::Column(c) => Ok(Sigma::Column(c)),
                _ => self.error("error column reference"),
            },
            _ => self.error("astrometric error (arcsec number or column)"),
        }
    }

    /// Signed numeric literal.
    fn number(&mut self, what: &str) -> PResult<f64> {
        let neg = self.eat(&Token::Minus);
        let v = match *self.peek() {
            Token::Integer(i) => i as f64,
            Token::Float(x) => x,
            _ => return self.error(what),
        };
        self.advance();
        Ok(if neg { -v } else { v })
    }

    fn region(&mut self) -> PResult<RegionClause> {
        let position = self.here();
        self.expect_kw(Keyword::Region)?;
        self.expect_kw(Keyword::Circle)?;
        self.expect_kw(Keyword::J2000)?;
        let ra = self.number("circle center RA (deg)")?;
        let dec_pos = self.here();
        let dec = self.number("circle center Dec (deg)")?;
        if !(-90.0..=90.0).contains(&dec) {
            return Err(SyntaxError {
                position: dec_pos,
                expected: "declination in [-90, 90]".into(),
                found: dec.to_string(),
            });
        }
        let r_pos = self.here();
        let radius_arcmin = self.number("circle radius (arcmin)")?;
        if radius_arcmin.is_nan() || radius_arcmin <= 0.0 {
            return Err(SyntaxError {
                position: r_pos,
                expected: "positive radius".into(),
                found: radius_arcmin.to_string(),
            });
        }
        Ok(RegionClause {
            ra,
            dec,
            radius_arcmin,
            position,
        })
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.binary(1)
    }

    fn binary_op(&self) -> Option<BinaryOp> {
        Some(match self.peek() {
            Token::Keyword(Keyword::Or) => BinaryOp::Or,
            Token::Keyword(Keyword::And) => BinaryOp::And,
            Token::Eq => BinaryOp::Eq,
            Token::NotEq => BinaryOp::NotEq,
            Token::Lt => BinaryOp::Lt,
            Token::LtEq => BinaryOp::LtEq,
            Token::Gt => BinaryOp::Gt,
            Token::GtEq => BinaryOp::GtEq,
            Token::Plus => BinaryOp::Add,
            Token::Minus => BinaryOp::Sub,
            Token::Star => BinaryOp::Mul,
            Token::Slash => BinaryOp::Div,
            Token::Percent => BinaryOp::Mod,
            _ => return None,
        })
    }

    // precedence climbing; NOT sits between AND and comparisons, IS NULL
    // binds like a comparison
    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut left = if min_prec <= 3 && *self.peek() == Token::Keyword(Keyword::Not) {
            self.advance();
            let inner = self.binary(3)?;
            Expr::Unary {
                op: UnaryOp::Not,
                expr: Box::new(inner),
            }
        } else {
            self.unary()?
        };
        loop {
            if *self.peek() == Token::Keyword(Keyword::Is) {
                if min_prec > 4 {
                    break;
                }
                self.advance();
                let negated = self.eat_kw(Keyword::Not);
                self.expect_kw(Keyword::Null)?;
                left = Expr::IsNull {
                    expr: Box::new(left),
                    negated,
                };
                continue;
            }
            let Some(op) = self.binary_op() else { break };
            let p = op.precedence();
            if p < min_prec {
                break;
            }
            self.advance();
            let right = self.binary(p + 1)?;
            left = Expr::Binary {
                op,
                left: Box::new(left),
                right: Box::new(right),
            };
            if op.is_comparison() && self.binary_op().is_some_and(|o| o.is_comparison()) {
                return self.error("AND, OR or end of comparison");
            }
        }
        Ok(left)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if *self.peek() == Token::Minus {
            self.advance();
            return Ok(match self.peek().clone() {
                // "-<number>" folds into a literal
                Token::Integer(i) => {
                    self.advance();
                    Expr::Literal(Literal::Int(-i))
                }
                Token::Float(x) => {
                    self.advance();
                    Expr::Literal(Literal::Float(-x))
                }
                _ => Expr::Unary {
                    op: UnaryOp::Neg,
                    expr: Box::new(self.unary()?),
                },
            });
        }
        if *self.peek() == Token::Plus {
            self.advance();
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let position = self.here();
        match self.peek().clone() {
            Token::Integer(i) => {
                self.advance();
                Ok(Expr::Literal(Literal::Int(i)))
            }
            Token::Float(x) => {
                self.advance();
                Ok(Expr::Literal(Literal::Float(x)))
            }
            Token::Str(s) => {
                self.advance();
                Ok(Expr::Literal(Literal::Str(s)))
            }
            Token::Keyword(Keyword::Null) => {
                self.advance();
                Ok(Expr::Literal(Literal::Null))
            }
            Token::Keyword(Keyword::True) => {
                self.advance();
                Ok(Expr::Literal(Literal::Bool(true)))
            }
            Token::Keyword(Keyword::False) => {
                self.advance();
                Ok(Expr::Literal(Literal::Bool(false)))
            }
            Token::LParen => {
                self.advance();
                let e = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(e)
            }
            Token::Ident(first) => {
                self.advance();
                if *self.peek() == Token::LParen {
                    self.advance();
                    let mut args = Vec::new();
                    let mut star = false;
                    if self.eat(&Token::Star) {
                        star = true;
                    } else if *self.peek() != Token::RParen {
                        args.push(self.expr()?);
                        while self.eat(&Token::Comma) {
                            args.push(self.expr()?);
                        }
                    }
                    self.expect(Token::RParen)?;
                    return Ok(Expr::Function {
                        name: first,
                        args,
                        star,
                        position,
                    });
                }
                if self.eat(&Token::Dot) {
                    let name = self.identifier("column name")?;
                    Ok(Expr::Column(ColumnRef {
                        qualifier: Some(first),
                        name,
                        position,
                    }))
                } else {
                    Ok(Expr::Column(ColumnRef {
                        qualifier: None,
                        name: first,
                        position,
                    }))
                }
            }
            _ => self.error("expression"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUERY1: &str = include_str!("../../tests/data/queries/query1.sql");
    const COVERAGE: &str = include_str!("../../tests/data/queries/coverage.sql");
    const MALFORMED: &str = include_str!("../../tests/data/queries/malformed.sql");

    fn entries(text: &str) -> Vec<&str> {
        text.split("\n====\n").map(str::trim_end).collect()
    }

    fn expected_position(entry: &str) -> (u32, u32, &str) {
        let (head, body) = entry.split_once('\n').unwrap();
        let (l, c) = head.trim_start_matches("-- expect ").split_once(':').unwrap();
        (l.parse().unwrap(), c.parse().unwrap(), body)
    }

    #[test]
    fn query1_structure() {
        let q = parse_query(QUERY1).unwrap();
        assert_eq!(q.select.len(), 19);
        assert_eq!(q.into.as_ref().unwrap().to_string(), "MyDB:NewResults");
        let aliases: Vec<_> = q.from.iter().map(|s| s.effective_alias()).collect();
        assert_eq!(aliases, ["s", "g", "t"]);
        assert_eq!(q.from[2].table.dataset, "TwoMASS");
        let x = q.xmatch.as_ref().unwrap();
        assert_eq!(x.alias, "x");
        let modes: Vec<_> = x.constraints.iter().map(|c| (c.mode, c.alias.as_str())).collect();
        assert_eq!(modes, [(MatchMode::Must, "s"), (MatchMode::Must, "g"), (MatchMode::May, "t")]);
        assert_eq!(x.constraints[0].point.len(), 3);
        assert_eq!(x.constraints[1].point.len(), 2);
        assert_eq!(x.constraints[2].sigma, Sigma::Arcsec(0.5));
        assert_eq!(x.limit, 1e6);
        let r = q.region.as_ref().unwrap();
        assert_eq!((r.ra, r.dec, r.radius_arcmin), (180.0, 0.0, 60.0));
        assert_eq!(q.where_clause.as_ref().unwrap().to_string(), "s.Galaxy = 1");
    }

    #[test]
    fn missing_having_limit_is_rejected() {
        let text = QUERY1.replace("HAVING LIMIT 1e6", "");
        let err = parse_query(&text).unwrap_err();
        let ParseError::Syntax(e) = err else { panic!("{err}") };
        assert!(e.expected.contains("HAVING LIMIT (required)"), "{e}");
        assert_eq!((e.position.line, e.position.column), (15, 1));
    }

    #[test]
    fn other_equinox_is_rejected() {
        let text = QUERY1.replace("J2000", "B1950");
        let e = parse_query(&text).unwrap_err();
        assert_eq!(e.position().line, 15);
        assert_eq!(e.position().column, 15);
    }

    #[test]
    fn malformed_corpus_errors_are_positioned() {
        let corpus = entries(MALFORMED);
        assert!(corpus.len() >= 20);
        let mut wrong = Vec::new();
        for entry in corpus {
            let (line, column, body) = expected_position(entry);
            let err = parse_query(body).expect_err(body);
            let p = err.position();
            if (p.line, p.column) != (line, column) {
                wrong.push(format!("{body}\n  expected {line}:{column}, got {err}"));
            }
        }
        assert!(wrong.is_empty(), "{}", wrong.join("\n"));
    }

    #[test]
    fn print_parse_round_trip() {
        let mut corpus = entries(COVERAGE);
        corpus.push(QUERY1);
        assert!(corpus.len() >= 21);
        for text in corpus {
            let q = parse_query(text).unwrap_or_else(|e| panic!("{text}\n{e}"));
            let printed = q.to_string();
            let again = parse_query(&printed).unwrap_or_else(|e| panic!("{printed}\n{e}"));
            assert_eq!(q.without_positions(), again.without_positions(), "{printed}");
            assert_eq!(printed, again.to_string());
        }
    }

    #[test]
    fn plain_sql_parses_without_xmatch() {
        let q = parse_query("SELECT a.id FROM cat:a WHERE a.id > 3").unwrap();
        assert!(q.xmatch.is_none() && q.region.is_none());
    }

    #[test]
    fn negative_literals_fold() {
        let q = parse_query("SELECT -3, -(3), - -3 FROM d:a").unwrap();
        assert_eq!(q.select[0].expr, Expr::Literal(Literal::Int(-3)));
        assert!(matches!(q.select[1].expr, Expr::Unary { op: UnaryOp::Neg, .. }));
        assert!(matches!(q.select[2].expr, Expr::Unary { op: UnaryOp::Neg, .. }));
    }
}
