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

//! Tokenizer for the extended SQL dialect.

use std::fmt;

use thiserror::Error;

/// Location of a token in the query text. Lines and columns are 1-based;
/// columns count characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Position {
    pub offset: usize,
    pub line: u32,
    pub column: u32,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("unexpected character {found:?} at {position}")]
pub struct LexError {
    pub position: Position,
    pub found: char,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keyword {
    Select,
    Into,
    From,
    Cross,
    Join,
    As,
    Where,
    And,
    Or,
    Not,
    Is,
    Null,
    True,
    False,
    Xmatch,
    Bayesian,
    Must,
    May,
    On,
    Point,
    Having,
    Limit,
    Region,
    Circle,
    J2000,
}

impl Keyword {
    fn lookup(word: &str) -> Option<Keyword> {
        use Keyword::*;
        Some(match word.to_ascii_uppercase().as_str() {
            "SELECT" => Select,
            "INTO" => Into,
            "FROM" => From,
            "CROSS" => Cross,
            "JOIN" => Join,
            "AS" => As,
            "WHERE" => Where,
            "AND" => And,
            "OR" => Or,
            "NOT" => Not,
            "IS" => Is,
            "NULL" => Null,
            "TRUE" => True,
            "FALSE" => False,
            "XMATCH" => Xmatch,
            "BAYESIAN" => Bayesian,
            "MUST" => Must,
            "MAY" => May,
            "ON" => On,
            "POINT" => Point,
            "HAVING" => Having,
            "LIMIT" => Limit,
            "REGION" => Region,
            "CIRCLE" => Circle,
            "J2000" => J2000,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        use Keyword::*;
        match self {
            Select => "SELECT",
            Into => "INTO",
            From => "FROM",
            Cross => "CROSS",
            Join => "JOIN",
            As => "AS",
            Where => "WHERE",
            And => "AND",
            Or => "OR",
            Not => "NOT",
            Is => "IS",
            Null => "NULL",
            True => "TRUE",
            False => "FALSE",
            Xmatch => "XMATCH",
            Bayesian => "BAYESIAN",
            Must => "MUST",
            May => "MAY",
            On => "ON",
            Point => "POINT",
            Having => "HAVING",
            Limit => "LIMIT",
            Region => "REGION",
            Circle => "CIRCLE",
            J2000 => "J2000",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Keyword(Keyword),
    Ident(String),
    /// `dataset:table`
    QualifiedName(String, String),
    Integer(i64),
    Float(f64),
    Str(String),
    Dot,
    Comma,
    LParen,
    RParen,
    Semicolon,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    Eof,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Keyword(k) => f.write_str(k.as_str()),
            Token::Ident(s) => write!(f, "identifier {s}"),
            Token::QualifiedName(a, b) => write!(f, "{a}:{b}"),
            Token::Integer(i) => write!(f, "{i}"),
            Token::Float(x) => write!(f, "{x:?}"),
            Token::Str(s) => write!(f, "'{s}'"),
            Token::Dot => f.write_str("'.'"),
            Token::Comma => f.write_str("','"),
            Token::LParen => f.write_str("'('"),
            Token::RParen => f.write_str("')'"),
            Token::Semicolon => f.write_str("';'"),
            Token::Plus => f.write_str("'+'"),
            Token::Minus => f.write_str("'-'"),
            Token::Star => f.write_str("'*'"),
            Token::Slash => f.write_str("'/'"),
            Token::Percent => f.write_str("'%'"),
            Token::Eq => f.write_str("'='"),
            Token::NotEq => f.write_str("'<>'"),
            Token::Lt => f.write_str("'<'"),
            Token::LtEq => f.write_str("'<='"),
            Token::Gt => f.write_str("'>'"),
            Token::GtEq => f.write_str("'>='"),
            Token::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spanned {
    pub token: Token,
    pub position: Position,
}

struct Cursor<'a> {
    chars: Vec<(usize, char)>,
    idx: usize,
    line: u32,
    column: u32,
    text: &'a str,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.idx).map(|&(_, c)| c)
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.chars.get(self.idx + n).map(|&(_, c)| c)
    }

    fn position(&self) -> Position {
        Position {
            offset: self.chars.get(self.idx).map_or(self.text.len(), |&(o, _)| o),
            line: self.line,
            column: self.column,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.idx += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        loop {
            match (self.peek(), self.peek_at(1)) {
                (Some(c), _) if c.is_whitespace() => {
                    self.bump();
                }
                (Some('-'), Some('-')) => {
                    while !matches!(self.peek(), None | Some('\n')) {
                        self.bump();
                    }
                }
                _ => return,
            }
        }
    }

    fn ident(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

/// Splits query text into tokens, ending with [`Token::Eof`].
///
/// Keywords are case-insensitive; identifiers keep their case. `"..."`
/// quotes an identifier, `'...'` a string (`''` escapes a quote), and `--`
/// starts a line comment. An identifier followed by `:` and another
/// identifier forms one `dataset:table` token.
pub fn tokenize(text: &str) -> Result<Vec<Spanned>, LexError> {
    let mut cur = Cursor {
        chars: text.char_indices().collect(),
        idx: 0,
        line: 1,
        column: 1,
        text,
    };
    let mut out = Vec::new();
    loop {
        cur.skip_trivia();
        let position = cur.position();
        let Some(c) = cur.peek() else {
            out.push(Spanned { token: Token::Eof, position });
            return Ok(out);
        };
        let lex_err = |position: Position, found: char| LexError { position, found };
        let token = if is_ident_start(c) {
            let word = cur.ident();
            if let Some(k) = Keyword::lookup(&word) {
                Token::Keyword(k)
            } else {
                qualified_or_ident(&mut cur, word)
            }
        } else if c == '"' {
            cur.bump();
            let mut s = String::new();
            loop {
                match cur.bump() {
                    Some('"') if cur.peek() == Some('"') => {
                        cur.bump();
                        s.push('"');
                    }
                    Some('"') => break,
                    Some(ch) => s.push(ch),
                    None => return Err(lex_err(position, '"')),
                }
            }
            if s.is_empty() {
                return Err(lex_err(position, '"'));
            }
            qualified_or_ident(&mut cur, s)
        } else if c == '\'' {
            cur.bump();
            let mut s = String::new();
            loop {
                match cur.bump() {
                    Some('\'') if cur.peek() == Some('\'') => {
                        cur.bump();
                        s.push('\'');
                    }
                    Some('\'') => break,
                    Some(ch) => s.push(ch),
                    None => return Err(lex_err(position, '\'')),
                }
            }
            Token::Str(s)
        } else if c.is_ascii_digit() || (c == '.' && cur.peek_at(1).is_some_and(|d| d.is_ascii_digit())) {
            number(&mut cur).ok_or_else(|| lex_err(position, c))?
        } else {
            cur.bump();
            match c {
                '.' => Token::Dot,
                ',' => Token::Comma,
                '(' => Token::LParen,
                ')' => Token::RParen,
                ';' => Token::Semicolon,
                '+' => Token::Plus,
                '-' => Token::Minus,
                '*' => Token::Star,
                '/' => Token::Slash,
                '%' => Token::Percent,
                '=' => Token::Eq,
                '!' if cur.peek() == Some('=') => {
                    cur.bump();
                    Token::NotEq
                }
                '<' => match cur.peek() {
                    Some('=') => {
                        cur.bump();
                        Token::LtEq
                    }
                    Some('>') => {
                        cur.bump();
                        Token::NotEq
                    }
                    _ => Token::Lt,
                },
                '>' => {
                    if cur.peek() == Some('=') {
                        cur.bump();
                        Token::GtEq
                    } else {
                        Token::Gt
                    }
                }
                other => return Err(lex_err(position, other)),
            }
        };
        out.push(Spanned { token, position });
    }
}

fn qualified_or_ident(cur: &mut Cursor<'_>, first: String) -> Token {
    // look past optional whitespace for ':' and an identifier
    let save = (cur.idx, cur.line, cur.column);
    cur.skip_trivia();
    if cur.peek() == Some(':') {
        cur.bump();
        cur.skip_trivia();
        if let Some(c) = cur.peek() {
            if is_ident_start(c) {
                let second = cur.ident();
                if Keyword::lookup(&second).is_none() {
                    return Token::QualifiedName(first, second);
                }
            } else if c == '"' {
                cur.bump();
                let mut s = String::new();
                while let Some(ch) = cur.bump() {
                    if ch == '"' {
                        return Token::QualifiedName(first, s);
                    }
                    s.push(ch);
                }
            }
        }
    }
    (cur.idx, cur.line, cur.column) = save;
    Token::Ident(first)
}

fn number(cur: &mut Cursor<'_>) -> Option<Token> {
    let mut s = String::new();
    let mut is_float = false;
    while let Some(c) = cur.peek() {
        if c.is_ascii_digit() {
            s.push(c);
            cur.bump();
        } else if c == '.' && !is_float && !s.contains(['e', 'E']) {
            is_float = true;
            s.push(c);
            cur.bump();
        } else if (c == 'e' || c == 'E') && !s.contains(['e', 'E']) {
            let next = cur.peek_at(1);
            let after = cur.peek_at(2);
            let exp_ok = next.is_some_and(|d| d.is_ascii_digit())
                || (matches!(next, Some('+' | '-')) && after.is_some_and(|d| d.is_ascii_digit()));
            if !exp_ok {
                return None;
            }
            is_float = true;
            s.push(c);
            cur.bump();
            if matches!(cur.peek(), Some('+' | '-')) {
                s.push(cur.bump().unwrap());
            }
        } else {
            break;
        }
    }
    if cur.peek().is_some_and(is_ident_start) {
        return None;
    }
    if is_float {
        s.parse().ok().map(Token::Float)
    } else {
        match s.parse::<i64>() {
            Ok(i) => Some(Token::Integer(i)),
            Err(_) => s.parse().ok().map(Token::Float),
        }
    }
}
