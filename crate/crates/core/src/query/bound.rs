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

//! Resolved expressions and their evaluation under SQL three-valued logic.

use std::fmt;

use crate::store::Value;

use super::ast::{BinaryOp, UnaryOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueType {
    Null,
    Bool,
    Int,
    Float,
    Text,
}

impl ValueType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ValueType::Int | ValueType::Float | ValueType::Null)
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::Null => "null",
            ValueType::Bool => "boolean",
            ValueType::Int => "integer",
            ValueType::Float => "float",
            ValueType::Text => "text",
        })
    }
}

/// Columns of the cross-match virtual table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VirtualColumn {
    Ra,
    Dec,
    BayesFactor,
    LogBayesFactor,
}

impl VirtualColumn {
    pub fn lookup(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "ra" => Some(VirtualColumn::Ra),
            "dec" => Some(VirtualColumn::Dec),
            "bf" => Some(VirtualColumn::BayesFactor),
            "logbf" => Some(VirtualColumn::LogBayesFactor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarFn {
    Abs,
    Sqrt,
    Exp,
    Ln,
    Log10,
    Power,
    Sin,
    Cos,
    Radians,
    Degrees,
}

impl ScalarFn {
    pub fn lookup(name: &str) -> Option<(Self, usize)> {
        use ScalarFn::*;
        Some(match name.to_ascii_uppercase().as_str() {
            "ABS" => (Abs, 1),
            "SQRT" => (Sqrt, 1),
            "EXP" => (Exp, 1),
            "LN" | "LOG" => (Ln, 1),
            "LOG10" => (Log10, 1),
            "POWER" => (Power, 2),
            "SIN" => (Sin, 1),
            "COS" => (Cos, 1),
            "RADIANS" => (Radians, 1),
            "DEGREES" => (Degrees, 1),
            _ => return None,
        })
    }
}

pub fn is_aggregate(name: &str) -> bool {
    matches!(
        name.to_ascii_uppercase().as_str(),
        "COUNT" | "SUM" | "AVG" | "MIN" | "MAX" | "STDEV" | "VAR"
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundExpr {
    Column { source: usize, column: usize },
    Virtual(VirtualColumn),
    Literal(Value),
    Unary { op: UnaryOp, expr: Box<BoundExpr> },
    Binary { op: BinaryOp, left: Box<BoundExpr>, right: Box<BoundExpr> },
    IsNull { expr: Box<BoundExpr>, negated: bool },
    Function { func: ScalarFn, args: Vec<BoundExpr> },
}

/// Supplies column and virtual-column values for one result row.
pub trait RowContext {
    fn column(&self, source: usize, column: usize) -> Value;
    fn virtual_value(&self, v: VirtualColumn) -> Value;
}

impl BoundExpr {
    pub fn and(self, other: BoundExpr) -> BoundExpr {
        BoundExpr::Binary {
            op: BinaryOp::And,
            left: Box::new(self),
            right: Box::new(other),
        }
    }

    /// Sources referenced by the expression.
    pub fn sources(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let BoundExpr::Column { source, .. } = e {
                if !out.contains(source) {
                    out.push(*source);
                }
            }
        });
        out
    }

    pub fn uses_virtual(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, BoundExpr::Virtual(_)));
        found
    }

    fn visit(&self, f: &mut impl FnMut(&BoundExpr)) {
        f(self);
        match self {
            BoundExpr::Unary { expr, .. } | BoundExpr::IsNull { expr, .. } => expr.visit(f),
            BoundExpr::Binary { left, right, .. } => {
                left.visit(f);
                right.visit(f);
            }
            BoundExpr::Function { args, .. } => args.iter().for_each(|a| a.visit(f)),
            BoundExpr::Column { .. } | BoundExpr::Virtual(_) | BoundExpr::Literal(_) => {}
        }
    }

    pub fn eval(&self, ctx: &dyn RowContext) -> Value {
        match self {
            BoundExpr::Column { source, column } => ctx.column(*source, *column),
            BoundExpr::Virtual(v) => ctx.virtual_value(*v),
            BoundExpr::Literal(v) => v.clone(),
            BoundExpr::Unary { op, expr } => {
                let v = expr.eval(ctx);
                match (op, v) {
                    (UnaryOp::Neg, Value::Int(i)) => i.checked_neg().map_or(Value::Null, Value::Int),
                    (UnaryOp::Neg, Value::Float(x)) => Value::Float(-x),
                    (UnaryOp::Not, Value::Bool(b)) => Value::Bool(!b),
                    _ => Value::Null,
                }
            }
            BoundExpr::IsNull { expr, negated } => Value::Bool(expr.eval(ctx).is_null() != *negated),
            BoundExpr::Binary { op, left, right } => match op {
                BinaryOp::And => {
                    let l = truth(&left.eval(ctx));
                    if l == Some(false) {
                        return Value::Bool(false);
                    }
                    match (l, truth(&right.eval(ctx))) {
                        (_, Some(false)) => Value::Bool(false),
                        (Some(true), Some(true)) => Value::Bool(true),
                        _ => Value::Null,
                    }
                }
                BinaryOp::Or => {
                    let l = truth(&left.eval(ctx));
                    if l == Some(true) {
                        return Value::Bool(true);
                    }
                    match (l, truth(&right.eval(ctx))) {
                        (_, Some(true)) => Value::Bool(true),
                        (Some(false), Some(false)) => Value::Bool(false),
                        _ => Value::Null,
                    }
                }
                _ => binary(*op, left.eval(ctx), right.eval(ctx)),
            },
            BoundExpr::Function { func, args } => {
                let vals: Vec<Value> = args.iter().map(|a| a.eval(ctx)).collect();
                call(*func, &vals)
            }
        }
    }

    /// True only when the predicate evaluates to TRUE (NULL filters out).
    pub fn accepts(&self, ctx: &dyn RowContext) -> bool {
        matches!(self.eval(ctx), Value::Bool(true))
    }
}

fn truth(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        _ => None,
    }
}

fn binary(op: BinaryOp, l: Value, r: Value) -> Value {
    use BinaryOp::*;
    if l.is_null() || r.is_null() {
        return Value::Null;
    }
    if op.is_comparison() {
        let ord = match (&l, &r) {
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            _ => match (l.as_f64(), r.as_f64()) {
                (Some(a), Some(b)) => match a.partial_cmp(&b) {
                    Some(o) => o,
                    None => return Value::Null,
                },
                _ => return Value::Null,
            },
        };
        use std::cmp::Ordering::*;
        return Value::Bool(match op {
            Eq => ord == Equal,
            NotEq => ord != Equal,
            Lt => ord == Less,
            LtEq => ord != Greater,
            Gt => ord == Greater,
            GtEq => ord != Less,
            _ => unreachable!(),
        });
    }
    match (l, r) {
        (Value::Int(a), Value::Int(b)) => match op {
            Add => a.checked_add(b),
            Sub => a.checked_sub(b),
            Mul => a.checked_mul(b),
            Div => a.checked_div(b),
            Mod => a.checked_rem(b),
            _ => None,
        }
        .map_or(Value::Null, Value::Int),
        (l, r) => match (l.as_f64(), r.as_f64()) {
            (Some(a), Some(b)) => Value::Float(match op {
                Add => a + b,
                Sub => a - b,
                Mul => a * b,
                Div => {
                    if b == 0.0 {
                        return Value::Null;
                    }
                    a / b
                }
                Mod => {
                    if b == 0.0 {
                        return Value::Null;
                    }
                    a % b
                }
                _ => return Value::Null,
            }),
            _ => Value::Null,
        },
    }
}

fn call(func: ScalarFn, args: &[Value]) -> Value {
    use ScalarFn::*;
    if args.iter().any(Value::is_null) {
        return Value::Null;
    }
    if func == Abs {
        if let Value::Int(i) = args[0] {
            return i.checked_abs().map_or(Value::Null, Value::Int);
        }
    }
    let Some(x) = args[0].as_f64() else {
        return Value::Null;
    };
    let y = match func {
        Abs => x.abs(),
        Sqrt => x.sqrt(),
        Exp => x.exp(),
        Ln => x.ln(),
        Log10 => x.log10(),
        Power => match args[1].as_f64() {
            Some(p) => x.powf(p),
            None => return Value::Null,
        },
        Sin => x.sin(),
        Cos => x.cos(),
        Radians => x.to_radians(),
        Degrees => x.to_degrees(),
    };
    if y.is_nan() {
        Value::Null
    } else {
        Value::Float(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct NoRow;

    impl RowContext for NoRow {
        fn column(&self, _: usize, _: usize) -> Value {
            Value::Null
        }
        fn virtual_value(&self, _: VirtualColumn) -> Value {
            Value::Float(2.0)
        }
    }

    fn lit(v: Value) -> Box<BoundExpr> {
        Box::new(BoundExpr::Literal(v))
    }

    fn bin(op: BinaryOp, l: Value, r: Value) -> Value {
        BoundExpr::Binary { op, left: lit(l), right: lit(r) }.eval(&NoRow)
    }

    #[test]
    fn kleene_logic() {
        use BinaryOp::*;
        assert_eq!(bin(And, Value::Null, Value::Bool(false)), Value::Bool(false));
        assert_eq!(bin(And, Value::Null, Value::Bool(true)), Value::Null);
        assert_eq!(bin(Or, Value::Null, Value::Bool(true)), Value::Bool(true));
        assert_eq!(bin(Or, Value::Bool(false), Value::Null), Value::Null);
    }

    #[test]
    fn arithmetic_and_comparison() {
        use BinaryOp::*;
        assert_eq!(bin(Add, Value::Int(2), Value::Int(3)), Value::Int(5));
        assert_eq!(bin(Div, Value::Int(7), Value::Int(2)), Value::Int(3));
        assert_eq!(bin(Div, Value::Int(7), Value::Int(0)), Value::Null);
        assert_eq!(bin(Mul, Value::Int(2), Value::Float(0.5)), Value::Float(1.0));
        assert_eq!(bin(Lt, Value::Int(2), Value::Float(2.5)), Value::Bool(true));
        assert_eq!(bin(Eq, Value::Text("a".into()), Value::Text("a".into())), Value::Bool(true));
        assert_eq!(bin(Eq, Value::Int(1), Value::Null), Value::Null);
    }

    #[test]
    fn null_tests_and_functions() {
        let e = BoundExpr::IsNull { expr: lit(Value::Null), negated: false };
        assert_eq!(e.eval(&NoRow), Value::Bool(true));
        let f = BoundExpr::Function { func: ScalarFn::Sqrt, args: vec![BoundExpr::Virtual(VirtualColumn::Ra)] };
        assert_eq!(f.eval(&NoRow), Value::Float(2f64.sqrt()));
        let neg = BoundExpr::Function { func: ScalarFn::Sqrt, args: vec![BoundExpr::Literal(Value::Int(-1))] };
        assert_eq!(neg.eval(&NoRow), Value::Null);
        assert!(is_aggregate("count"));
    }
}
