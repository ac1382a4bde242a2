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

//! Binds a parsed query to registered catalogs and checks it.

use std::sync::Arc;

use thiserror::Error;

use crate::bayes::Precision;
use crate::geometry::{self, Region, SkyCoord, UnitVector};
use crate::store::{CatalogRegistry, CatalogTable, ColumnType, Value};

use super::ast::*;
use super::bound::*;
use super::lexer::Position;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResolveError {
    #[error("query has no XMATCH clause")]
    MissingXmatch,
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown alias {alias} at {position}")]
    UnknownAlias { alias: String, position: Position },
    #[error("unknown column {column} at {position}")]
    UnknownColumn { column: String, position: Position },
    #[error("ambiguous column {column} at {position}")]
    AmbiguousColumn { column: String, position: Position },
    #[error("unknown function {name} at {position}")]
    UnknownFunction { name: String, position: Position },
    #[error("type mismatch at {position}: {reason}")]
    TypeMismatch { reason: String, position: Position },
    #[error("table {0} has no primary key")]
    MissingKey(String),
    #[error("duplicate alias {0}")]
    DuplicateAlias(String),
    #[error("invalid XMATCH clause: {0}")]
    InvalidXmatch(String),
    #[error("unsupported at {position}: {what}")]
    Unsupported { what: String, position: Position },
}

#[derive(Debug, Clone)]
pub struct BoundSource {
    pub alias: String,
    pub table: Arc<CatalogTable>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaBinding {
    Constant(Precision),
    Column(usize),
}

#[derive(Debug, Clone)]
pub struct ResolvedConstraint {
    pub mode: MatchMode,
    pub source: usize,
    pub point: Vec<BoundExpr>,
    pub sigma: SigmaBinding,
}

#[derive(Debug, Clone)]
pub struct OutputColumn {
    pub name: String,
    pub expr: BoundExpr,
}

/// A query whose identifiers are all bound. Immutable once built.
#[derive(Debug, Clone)]
pub struct ResolvedQuery {
    pub ast: Query,
    pub sources: Vec<BoundSource>,
    pub xmatch_alias: String,
    /// In query order.
    pub constraints: Vec<ResolvedConstraint>,
    pub limit: f64,
    pub region: Option<Region>,
    /// Single-source WHERE conjuncts, indexed by source.
    pub pushed: Vec<Option<BoundExpr>>,
    /// Conjuncts spanning several sources or the cross-match columns.
    pub residual: Option<BoundExpr>,
    pub projection: Vec<OutputColumn>,
    pub output: Option<ObjectName>,
}

impl ResolvedQuery {
    pub fn log_limit(&self) -> f64 {
        self.limit.ln()
    }

    pub fn constraint_of(&self, source: usize) -> &ResolvedConstraint {
        self.constraints
            .iter()
            .find(|c| c.source == source)
            .expect("every source has a constraint")
    }

    /// Direction of one source row, or `None` when its POINT expression
    /// yields null or an invalid coordinate.
    pub fn point_of(&self, constraint: &ResolvedConstraint, row: usize) -> Option<UnitVector> {
        self.point_in(constraint, &self.sources[constraint.source].table, row)
    }

    /// As [`Self::point_of`] for a row of another table with the same
    /// schema, such as a mini catalog.
    pub fn point_in(&self, constraint: &ResolvedConstraint, table: &CatalogTable, row: usize) -> Option<UnitVector> {
        let ctx = TableRow { source: constraint.source, table, row };
        let vals: Option<Vec<f64>> = constraint.point.iter().map(|e| e.eval(&ctx).as_f64()).collect();
        match vals?[..] {
            [ra, dec] => SkyCoord::new(ra, dec).ok().map(geometry::to_unit_vector),
            [x, y, z] => UnitVector::new(x, y, z).ok(),
            _ => None,
        }
    }

    pub fn precision_of(&self, constraint: &ResolvedConstraint, row: usize) -> Precision {
        match constraint.sigma {
            SigmaBinding::Constant(p) => p,
            SigmaBinding::Column(col) => {
                let table = &self.sources[constraint.source].table;
                let arcsec = table.column(col).get_f64(row).expect("validated at ingest");
                Precision::from_arcsec(arcsec).expect("validated at ingest")
            }
        }
    }

    /// Whether a source row passes its pushed-down predicate and the region.
    pub fn source_passes(&self, source: usize, row: usize) -> bool {
        self.source_passes_in(source, &self.sources[source].table, row)
    }

    pub fn source_passes_in(&self, source: usize, table: &CatalogTable, row: usize) -> bool {
        if let Some(pred) = &self.pushed[source] {
            if !pred.accepts(&TableRow { source, table, row }) {
                return false;
            }
        }
        match &self.region {
            Some(region) => self
                .point_in(self.constraint_of(source), table, row)
                .is_some_and(|p| region.contains(&p)),
            None => true,
        }
    }
}

/// Evaluation context for a single catalog row.
pub struct TableRow<'a> {
    pub source: usize,
    pub table: &'a CatalogTable,
    pub row: usize,
}

impl RowContext for TableRow<'_> {
    fn column(&self, source: usize, column: usize) -> Value {
        if source == self.source {
            self.table.value(self.row, column)
        } else {
            Value::Null
        }
    }

    fn virtual_value(&self, _: VirtualColumn) -> Value {
        Value::Null
    }
}

pub fn resolve(ast: &Query, registry: &CatalogRegistry) -> Result<ResolvedQuery, ResolveError> {
    let xm = ast.xmatch.as_ref().ok_or(ResolveError::MissingXmatch)?;

    let mut sources: Vec<BoundSource> = Vec::new();
    for src in &ast.from {
        let name = &src.table;
        let table = registry.get(&name.dataset, &name.name).ok_or_else(|| {
            if registry.has_dataset(&name.dataset) {
                ResolveError::UnknownTable(name.to_string())
            } else {
                ResolveError::UnknownDataset(name.dataset.clone())
            }
        })?;
        let alias = src.effective_alias().to_string();
        if sources.iter().any(|s| s.alias.eq_ignore_ascii_case(&alias)) {
            return Err(ResolveError::DuplicateAlias(alias));
        }
        if table.schema().key_columns.is_empty() {
            return Err(ResolveError::MissingKey(name.to_string()));
        }
        sources.push(BoundSource { alias, table: table.clone() });
    }
    if sources.iter().any(|s| s.alias.eq_ignore_ascii_case(&xm.alias)) {
        return Err(ResolveError::DuplicateAlias(xm.alias.clone()));
    }

    let binder = Binder { sources: &sources, xmatch_alias: &xm.alias };
    let constraints = bind_constraints(&binder, xm)?;

    let mut projection = Vec::new();
    for item in &ast.select {
        let (expr, _) = binder.bind(&item.expr)?;
        let not_source = expr
            .sources()
            .into_iter()
            .find(|s| constraints.iter().any(|c| c.source == *s && c.mode == MatchMode::Not));
        if let Some(s) = not_source {
            return Err(ResolveError::Unsupported {
                what: format!("columns of NOT source {} cannot be selected", sources[s].alias),
                position: first_position(&item.expr),
            });
        }
        let name = item.alias.clone().unwrap_or_else(|| item.expr.to_string());
        projection.push(OutputColumn { name, expr });
    }

    let mut pushed: Vec<Option<BoundExpr>> = vec![None; sources.len()];
    let mut residual: Option<BoundExpr> = None;
    if let Some(w) = &ast.where_clause {
        let (_, ty) = binder.bind(w)?;
        expect_bool(ty, w)?;
        for conjunct in w.clone().conjuncts() {
            let (bound, _) = binder.bind(&conjunct)?;
            let used = bound.sources();
            if used.len() == 1 && !bound.uses_virtual() {
                let slot = &mut pushed[used[0]];
                *slot = Some(match slot.take() {
                    Some(prev) => prev.and(bound),
                    None => bound,
                });
                continue;
            }
            if let Some(s) = used
                .iter()
                .find(|s| constraints.iter().any(|c| c.source == **s && c.mode == MatchMode::Not))
            {
                return Err(ResolveError::Unsupported {
                    what: format!("NOT source {} may only be filtered on its own columns", sources[*s].alias),
                    position: first_position(&conjunct),
                });
            }
            residual = Some(match residual {
                Some(prev) => prev.and(bound),
                None => bound,
            });
        }
    }

    let region = match &ast.region {
        Some(r) => Some(Region::circle(r.ra, r.dec, r.radius_arcmin).map_err(|e| {
            ResolveError::TypeMismatch {
                reason: e.to_string(),
                position: r.position,
            }
        })?),
        None => None,
    };

    Ok(ResolvedQuery {
        ast: ast.clone(),
        sources,
        xmatch_alias: xm.alias.clone(),
        constraints,
        limit: xm.limit,
        region,
        pushed,
        residual,
        projection,
        output: ast.into.clone(),
    })
}

fn bind_constraints(binder: &Binder<'_>, xm: &XmatchClause) -> Result<Vec<ResolvedConstraint>, ResolveError> {
    let sources = binder.sources;
    if xm.constraints.len() < 2 {
        return Err(ResolveError::InvalidXmatch("at least two constraints are required".into()));
    }
    if !xm.constraints.iter().any(|c| c.mode == MatchMode::Must) {
        return Err(ResolveError::InvalidXmatch("at least one MUST constraint is required".into()));
    }
    if !(xm.limit > 0.0 && xm.limit.is_finite()) {
        return Err(ResolveError::InvalidXmatch("limit must be positive".into()));
    }
    let mut out: Vec<ResolvedConstraint> = Vec::new();
    for c in &xm.constraints {
        let source = binder.alias(&c.alias).ok_or_else(|| ResolveError::UnknownAlias {
            alias: c.alias.clone(),
            position: c.position,
        })?;
        if out.iter().any(|o| o.source == source) {
            return Err(ResolveError::InvalidXmatch(format!(
                "alias {} appears in more than one constraint",
                c.alias
            )));
        }
        let mut point = Vec::new();
        for e in &c.point {
            let (b, ty) = binder.bind(e)?;
            if !ty.is_numeric() {
                return Err(ResolveError::TypeMismatch {
                    reason: format!("POINT coordinate must be numeric, found {ty}"),
                    position: first_position(e),
                });
            }
            if b.uses_virtual() || b.sources().iter().any(|s| *s != source) {
                return Err(ResolveError::InvalidXmatch(format!(
                    "POINT of {} may only use columns of {}",
                    c.alias, c.alias
                )));
            }
            point.push(b);
        }
        let sigma = match &c.sigma {
            Sigma::Arcsec(a) => SigmaBinding::Constant(Precision::from_arcsec(*a).map_err(|e| {
                ResolveError::InvalidXmatch(e.to_string())
            })?),
            Sigma::Column(col) => {
                let (b, _) = binder.bind(&Expr::Column(col.clone()))?;
                let BoundExpr::Column { source: s, column } = b else {
                    return Err(ResolveError::InvalidXmatch("error must be a catalog column".into()));
                };
                let schema = sources[s].table.schema();
                let declared = schema
                    .error_column
                    .as_deref()
                    .and_then(|n| schema.column_index(n));
                if s != source || declared != Some(column) {
                    return Err(ResolveError::TypeMismatch {
                        reason: format!(
                            "error of {} must be the declared error column of {}",
                            c.alias,
                            schema.qualified_name()
                        ),
                        position: col.position,
                    });
                }
                SigmaBinding::Column(column)
            }
        };
        out.push(ResolvedConstraint { mode: c.mode, source, point, sigma });
    }
    if let Some(s) = (0..sources.len()).find(|s| !out.iter().any(|c| c.source == *s)) {
        return Err(ResolveError::InvalidXmatch(format!(
            "source {} takes part in no constraint",
            sources[s].alias
        )));
    }
    Ok(out)
}

fn expect_bool(ty: ValueType, e: &Expr) -> Result<(), ResolveError> {
    if matches!(ty, ValueType::Bool | ValueType::Null) {
        Ok(())
    } else {
        Err(ResolveError::TypeMismatch {
            reason: format!("expected boolean, found {ty}"),
            position: first_position(e),
        })
    }
}

fn first_position(e: &Expr) -> Position {
    let mut pos = None;
    e.walk(&mut |x| {
        if pos.is_none() {
            pos = match x {
                Expr::Column(c) => Some(c.position),
                Expr::Function { position, .. } => Some(*position),
                _ => None,
            };
        }
    });
    pos.unwrap_or_default()
}

struct Binder<'a> {
    sources: &'a [BoundSource],
    xmatch_alias: &'a str,
}

impl Binder<'_> {
    fn alias(&self, name: &str) -> Option<usize> {
        self.sources.iter().position(|s| s.alias.eq_ignore_ascii_case(name))
    }

    fn column(&self, c: &ColumnRef) -> Result<(BoundExpr, ValueType), ResolveError> {
        let unknown = || ResolveError::UnknownColumn {
            column: c.to_string(),
            position: c.position,
        };
        match &c.qualifier {
            Some(q) if q.eq_ignore_ascii_case(self.xmatch_alias) => {
                let v = VirtualColumn::lookup(&c.name).ok_or_else(unknown)?;
                Ok((BoundExpr::Virtual(v), ValueType::Float))
            }
            Some(q) => {
                let source = self.alias(q).ok_or_else(|| ResolveError::UnknownAlias {
                    alias: q.clone(),
                    position: c.position,
                })?;
                let schema = self.sources[source].table.schema();
                let column = schema.column_index(&c.name).ok_or_else(unknown)?;
                Ok((BoundExpr::Column { source, column }, value_type(schema.column_type(column))))
            }
            None => {
                let hits: Vec<(usize, usize)> = self
                    .sources
                    .iter()
                    .enumerate()
                    .filter_map(|(i, s)| s.table.schema().column_index(&c.name).map(|col| (i, col)))
                    .collect();
                match hits[..] {
                    [] => Err(unknown()),
                    [(source, column)] => Ok((
                        BoundExpr::Column { source, column },
                        value_type(self.sources[source].table.schema().column_type(column)),
                    )),
                    _ => Err(ResolveError::AmbiguousColumn {
                        column: c.name.clone(),
                        position: c.position,
                    }),
                }
            }
        }
    }

    fn bind(&self, e: &Expr) -> Result<(BoundExpr, ValueType), ResolveError> {
        let mismatch = |reason: String| ResolveError::TypeMismatch {
            reason,
            position: first_position(e),
        };
        match e {
            Expr::Column(c) => self.column(c),
            Expr::Literal(l) => Ok(match l {
                Literal::Null => (BoundExpr::Literal(Value::Null), ValueType::Null),
                Literal::Bool(b) => (BoundExpr::Literal(Value::Bool(*b)), ValueType::Bool),
                Literal::Int(i) => (BoundExpr::Literal(Value::Int(*i)), ValueType::Int),
                Literal::Float(x) => (BoundExpr::Literal(Value::Float(*x)), ValueType::Float),
                Literal::Str(s) => (BoundExpr::Literal(Value::Text(s.clone())), ValueType::Text),
            }),
            Expr::Unary { op, expr } => {
                let (b, ty) = self.bind(expr)?;
                let out = match op {
                    UnaryOp::Neg if ty.is_numeric() => ty,
                    UnaryOp::Not if matches!(ty, ValueType::Bool | ValueType::Null) => ValueType::Bool,
                    UnaryOp::Neg => return Err(mismatch(format!("cannot negate {ty}"))),
                    UnaryOp::Not => return Err(mismatch(format!("NOT needs boolean, found {ty}"))),
                };
                Ok((BoundExpr::Unary { op: *op, expr: Box::new(b) }, out))
            }
            Expr::IsNull { expr, negated } => {
                let (b, _) = self.bind(expr)?;
                Ok((BoundExpr::IsNull { expr: Box::new(b), negated: *negated }, ValueType::Bool))
            }
            Expr::Binary { op, left, right } => {
                let (l, lt) = self.bind(left)?;
                let (r, rt) = self.bind(right)?;
                let ty = match op {
                    BinaryOp::And | BinaryOp::Or => {
                        if !matches!(lt, ValueType::Bool | ValueType::Null)
                            || !matches!(rt, ValueType::Bool | ValueType::Null)
                        {
                            return Err(mismatch(format!("{} needs booleans, found {lt} and {rt}", op.symbol())));
                        }
                        ValueType::Bool
                    }
                    op if op.is_comparison() => {
                        let ok = lt == ValueType::Null
                            || rt == ValueType::Null
                            || (lt.is_numeric() && rt.is_numeric())
                            || lt == rt;
                        if !ok {
                            return Err(mismatch(format!("cannot compare {lt} with {rt}")));
                        }
                        ValueType::Bool
                    }
                    _ => {
                        if !lt.is_numeric() || !rt.is_numeric() {
                            return Err(mismatch(format!(
                                "arithmetic {} needs numbers, found {lt} and {rt}",
                                op.symbol()
                            )));
                        }
                        match (lt, rt) {
                            (ValueType::Int, ValueType::Int) => ValueType::Int,
                            (ValueType::Null, ValueType::Null) => ValueType::Null,
                            _ => ValueType::Float,
                        }
                    }
                };
                Ok((
                    BoundExpr::Binary {
                        op: *op,
                        left: Box::new(l),
                        right: Box::new(r),
                    },
                    ty,
                ))
            }
            Expr::Function { name, args, star, position } => {
                if is_aggregate(name) {
                    return Err(ResolveError::Unsupported {
                        what: format!("aggregate function {name}"),
                        position: *position,
                    });
                }
                let (func, arity) = ScalarFn::lookup(name).ok_or_else(|| ResolveError::UnknownFunction {
                    name: name.clone(),
                    position: *position,
                })?;
                if *star || args.len() != arity {
                    return Err(ResolveError::TypeMismatch {
                        reason: format!("{name} takes {arity} argument(s)"),
                        position: *position,
                    });
                }
                let mut bound = Vec::new();
                let mut all_int = true;
                for a in args {
                    let (b, ty) = self.bind(a)?;
                    if !ty.is_numeric() {
                        return Err(mismatch(format!("{name} needs numbers, found {ty}")));
                    }
                    all_int &= ty == ValueType::Int;
                    bound.push(b);
                }
                let ty = if func == ScalarFn::Abs && all_int {
                    ValueType::Int
                } else {
                    ValueType::Float
                };
                Ok((BoundExpr::Function { func, args: bound }, ty))
            }
        }
    }
}

fn value_type(t: ColumnType) -> ValueType {
    match t {
        ColumnType::Int64 => ValueType::Int,
        ColumnType::Float64 => ValueType::Float,
        ColumnType::Text => ValueType::Text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_query;
    use crate::synthetic::{generate, SurveyConfig};

    const QUERY1: &str = include_str!("../../tests/data/queries/query1.sql");

    fn registry() -> CatalogRegistry {
        let cfg = SurveyConfig { rows: 50, objects: 20, doubles: 2, ..SurveyConfig::default() };
        let s = generate(&cfg);
        let mut reg = CatalogRegistry::new();
        reg.register(s.sdss);
        reg.register(s.galex);
        reg.register(s.twomass);
        reg
    }

    fn run(text: &str) -> Result<ResolvedQuery, ResolveError> {
        resolve(&parse_query(text).unwrap(), &registry())
    }

    const PAIR: &str = "SELECT x.RA, s.ObjID FROM SDSS:PhotoObjAll AS s CROSS JOIN GALEX:PhotoObjAll AS g \
        XMATCH BAYESIAN AS x MUST s ON POINT(s.RA, s.Dec), 0.1 MUST g ON POINT(g.RA, g.Dec), 0.2 HAVING LIMIT 10";

    #[test]
    fn query1_resolves_with_push_down() {
        let rq = run(QUERY1).unwrap();
        assert_eq!(rq.sources.len(), 3);
        assert_eq!(rq.projection.len(), 19);
        assert_eq!(rq.projection[0].name, "x.RA");
        assert_eq!(rq.projection[0].expr, BoundExpr::Virtual(VirtualColumn::Ra));
        let galaxy = rq.sources[0].table.schema().column_index("Galaxy").unwrap();
        assert_eq!(
            rq.pushed[0],
            Some(BoundExpr::Binary {
                op: BinaryOp::Eq,
                left: Box::new(BoundExpr::Column { source: 0, column: galaxy }),
                right: Box::new(BoundExpr::Literal(Value::Int(1))),
            })
        );
        assert!(rq.pushed[1].is_none() && rq.pushed[2].is_none() && rq.residual.is_none());
        let modes: Vec<_> = rq.constraints.iter().map(|c| (c.mode, c.source)).collect();
        assert_eq!(modes, [(MatchMode::Must, 0), (MatchMode::Must, 1), (MatchMode::May, 2)]);
        assert!(rq.region.is_some());
        assert!((rq.log_limit() - 1e6f64.ln()).abs() < 1e-12);
        // g.Ra binds to the RA column case-insensitively
        let ra = rq.sources[1].table.schema().column_index("RA").unwrap();
        assert_eq!(rq.constraints[1].point[0], BoundExpr::Column { source: 1, column: ra });
    }

    #[test]
    fn unknown_alias_is_reported() {
        let text = PAIR.replace("s.ObjID", "q.foo");
        assert!(matches!(run(&text), Err(ResolveError::UnknownAlias { alias, .. }) if alias == "q"));
    }

    #[test]
    fn self_join_resolves() {
        let text = "SELECT a.ObjID, b.ObjID FROM SDSS:PhotoObjAll AS a CROSS JOIN SDSS:PhotoObjAll AS b \
            XMATCH BAYESIAN AS x MUST a ON POINT(a.RA, a.Dec), 0.1 MUST b ON POINT(b.RA, b.Dec), 0.1 HAVING LIMIT 10";
        let rq = run(text).unwrap();
        assert!(Arc::ptr_eq(&rq.sources[0].table, &rq.sources[1].table));
    }

    #[test]
    fn name_errors() {
        assert!(matches!(run(&PAIR.replace("GALEX:", "FUSE:")), Err(ResolveError::UnknownDataset(_))));
        assert!(matches!(
            run(&PAIR.replace("GALEX:PhotoObjAll", "GALEX:Tiles")),
            Err(ResolveError::UnknownTable(_))
        ));
        assert!(matches!(
            run(&PAIR.replace("s.ObjID", "s.nope")),
            Err(ResolveError::UnknownColumn { .. })
        ));
        assert!(matches!(
            run(&PAIR.replace("s.ObjID", "ObjID")),
            Err(ResolveError::AmbiguousColumn { .. })
        ));
        assert!(matches!(
            run(&PAIR.replace("s.ObjID", "mag_nuv")),
            Ok(rq) if rq.projection[1].expr == BoundExpr::Column { source: 1, column: 3 }
        ));
        assert!(matches!(run(&PAIR.replace("AS x", "AS g")), Err(ResolveError::DuplicateAlias(_))));
        assert!(matches!(run(&PAIR.replace("x.RA", "x.Mass")), Err(ResolveError::UnknownColumn { .. })));
    }

    #[test]
    fn type_errors() {
        let with_where = |w: &str| PAIR.replace(" XMATCH", &format!(" WHERE {w} XMATCH"));
        assert!(matches!(run(&with_where("s.Galaxy = 'yes'")), Err(ResolveError::TypeMismatch { .. })));
        assert!(matches!(run(&with_where("s.mag_g + 1")), Err(ResolveError::TypeMismatch { .. })));
        assert!(matches!(run(&with_where("NOT s.mag_g")), Err(ResolveError::TypeMismatch { .. })));
        assert!(matches!(run(&with_where("SQRT(s.mag_g, 2) > 1")), Err(ResolveError::TypeMismatch { .. })));
        assert!(matches!(run(&with_where("FOO(s.mag_g) > 1")), Err(ResolveError::UnknownFunction { .. })));
        assert!(run(&with_where("s.mag_g IS NULL OR s.mag_g - s.mag_r > 0.5")).is_ok());
        let point = PAIR.replace("POINT(g.RA, g.Dec)", "POINT(g.RA, 'north')");
        assert!(matches!(run(&point), Err(ResolveError::TypeMismatch { .. })));
    }

    #[test]
    fn where_splits_into_pushed_and_residual() {
        let text = PAIR.replace(
            " XMATCH",
            " WHERE s.Galaxy = 1 AND g.mag_nuv < 20 AND s.mag_g < g.mag_nuv AND x.BF > 100 AND s.mag_r > 15 XMATCH",
        );
        let rq = run(&text).unwrap();
        let pushed_s = rq.pushed[0].as_ref().unwrap();
        assert_eq!(pushed_s.sources(), [0]);
        assert!(matches!(pushed_s, BoundExpr::Binary { op: BinaryOp::And, .. }));
        assert_eq!(rq.pushed[1].as_ref().unwrap().sources(), [1]);
        let residual = rq.residual.unwrap();
        assert!(residual.uses_virtual());
        assert_eq!(residual.sources().len(), 2);
    }

    #[test]
    fn xmatch_checks() {
        let plain = "SELECT s.ObjID FROM SDSS:PhotoObjAll AS s";
        assert!(matches!(run(plain), Err(ResolveError::MissingXmatch)));
        let aggregate = PAIR.replace("x.RA", "COUNT(*)");
        assert!(matches!(run(&aggregate), Err(ResolveError::Unsupported { .. })));
        let one = "SELECT s.ObjID FROM SDSS:PhotoObjAll AS s XMATCH BAYESIAN AS x \
            MUST s ON POINT(s.RA, s.Dec), 0.1 HAVING LIMIT 10";
        assert!(matches!(run(one), Err(ResolveError::InvalidXmatch(_))));
        let no_must = PAIR.replace("MUST", "MAY");
        assert!(matches!(run(&no_must), Err(ResolveError::InvalidXmatch(_))));
        let twice = PAIR.replace("MUST g ON POINT(g.RA, g.Dec)", "MUST s ON POINT(s.RA, s.Dec)");
        assert!(matches!(run(&twice), Err(ResolveError::InvalidXmatch(_))));
        let cross_point = PAIR.replace("POINT(g.RA, g.Dec)", "POINT(g.RA, s.Dec)");
        assert!(matches!(run(&cross_point), Err(ResolveError::InvalidXmatch(_))));
        let not_selected = PAIR.replace("MUST g", "NOT g").replace("s.ObjID", "g.ObjID");
        assert!(matches!(run(&not_selected), Err(ResolveError::Unsupported { .. })));
    }

    #[test]
    fn error_column_binding() {
        let text = "SELECT s.ObjID FROM SDSS:PhotoObjAll AS s CROSS JOIN TwoMASS:PhotoXSC AS t \
            XMATCH BAYESIAN AS x MUST s ON POINT(s.Cx, s.Cy, s.Cz), 0.1 MUST t ON POINT(t.RA, t.Dec), t.err HAVING LIMIT 10";
        let rq = run(text).unwrap();
        assert_eq!(rq.constraints[1].sigma, SigmaBinding::Column(3));
        let wrong = text.replace("t.err", "t.mag_J");
        assert!(matches!(run(&wrong), Err(ResolveError::TypeMismatch { .. })));
        let p = rq.precision_of(&rq.constraints[1], 0);
        let expected = rq.sources[1].table.column(3).get_f64(0).unwrap();
        assert!((p.sigma() / crate::geometry::ARCSEC - expected).abs() < 1e-12);
    }

    #[test]
    fn points_follow_the_point_expression() {
        let rq = run(QUERY1).unwrap();
        let t = &rq.sources[0].table;
        for row in 0..t.row_count() {
            let p = rq.point_of(&rq.constraints[0], row).unwrap();
            assert!(p.chord_sq(&t.position(row)) < 1e-24);
        }
    }
}
