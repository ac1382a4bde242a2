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


//! Shared fixtures and a brute-force cross-match oracle.
//!
//! The oracle enumerates every tuple of detections and scores it with the
//! pairwise form of the Bayes factor, so it shares neither the zone index
//! nor the accumulator arithmetic with the engine.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::sync::Arc;

use skyjoin::executor::{MatchResult, ResultTable};
use skyjoin::geometry::{Region, UnitVector};
use skyjoin::query::ast::MatchMode;
use skyjoin::query::{parse_query, resolve, ResolvedQuery};
use skyjoin::store::{
    CatalogRegistry, CatalogSchema, CatalogTable, Column, ColumnDef, ColumnType, CoordSpec,
};
use skyjoin::synthetic::{generate, Survey, SurveyConfig};

pub const QUERY1: &str = include_str!("../data/queries/query1.sql");

pub fn survey_registry(cfg: &SurveyConfig) -> (CatalogRegistry, Survey) {
    let s = generate(cfg);
    let mut reg = CatalogRegistry::new();
    reg.register(s.sdss.clone());
    reg.register(s.galex.clone());
    reg.register(s.twomass.clone());
    (reg, s)
}

pub fn resolved(text: &str, reg: &CatalogRegistry) -> ResolvedQuery {
    resolve(&parse_query(text).unwrap(), reg).unwrap()
}

/// Query 1 with TwoMASS as a drop-out constraint.
pub fn dropout_query() -> String {
    QUERY1.replace("MAY  t", "NOT  t").replace(
        ",\n       t.ObjID, t.RA, t.Dec, t.mag_J, t.mag_H, t.mag_K",
        "",
    )
}

/// An `id, ra, dec` table keyed by `id`.
pub fn point_table(
    dataset: &str,
    pts: &[(i64, f64, f64)],
    footprint: Option<Region>,
) -> CatalogTable {
    let schema = CatalogSchema {
        dataset: dataset.into(),
        table: "t".into(),
        columns: vec![
            ColumnDef { name: "id".into(), ty: ColumnType::Int64 },
            ColumnDef { name: "ra".into(), ty: ColumnType::Float64 },
            ColumnDef { name: "dec".into(), ty: ColumnType::Float64 },
        ],
        key_columns: vec!["id".into()],
        coords: CoordSpec::Spherical { ra: "ra".into(), dec: "dec".into() },
        error_column: None,
        sigma_floor_arcsec: None,
        footprint,
    };
    let cols = vec![
        Column::Int64(pts.iter().map(|p| Some(p.0)).collect()),
        Column::Float64(pts.iter().map(|p| Some(p.1)).collect()),
        Column::Float64(pts.iter().map(|p| Some(p.2)).collect()),
    ];
    CatalogTable::from_columns(schema, cols, None).unwrap()
}

/// `ln(sinh x) - x` for `x > 0`.
fn log_sinh_excess(x: f64) -> f64 {
    (-(-2.0 * x).exp_m1()).ln() - std::f64::consts::LN_2
}

/// Log Bayes factor of detections `(weight, position)` from pairwise chord
/// lengths.
pub fn oracle_log_bf(dets: &[(f64, UnitVector)]) -> f64 {
    if dets.len() < 2 {
        return 0.0;
    }
    let mut sum = [0.0f64; 3];
    let mut total = 0.0;
    let mut norm = 0.0;
    for (w, x) in dets {
        let a = x.to_array();
        for k in 0..3 {
            sum[k] += w * a[k];
        }
        total += w;
        norm += w.ln() - log_sinh_excess(*w);
    }
    let mut pair_deficit = 0.0;
    for i in 0..dets.len() {
        for j in i + 1..dets.len() {
            let (a, b) = (dets[i].1.to_array(), dets[j].1.to_array());
            let chord: f64 = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum();
            pair_deficit += dets[i].0 * dets[j].0 * chord;
        }
    }
    let s = (sum[0] * sum[0] + sum[1] * sum[1] + sum[2] * sum[2]).sqrt();
    -pair_deficit / (total + s) + log_sinh_excess(s) - s.ln() + norm
}

fn combined_direction(dets: &[(f64, UnitVector)]) -> UnitVector {
    let mut sum = [0.0f64; 3];
    for (w, x) in dets {
        let a = x.to_array();
        for k in 0..3 {
            sum[k] += w * a[k];
        }
    }
    UnitVector::new(sum[0], sum[1], sum[2]).unwrap()
}

#[derive(Debug, Clone)]
pub struct OracleMatch {
    pub detections: Vec<Option<u32>>,
    pub log_bf: f64,
}

struct Candidate {
    row: u32,
    weight: f64,
    position: UnitVector,
}

fn candidates(rq: &ResolvedQuery, c: usize) -> Vec<Candidate> {
    let con = &rq.constraints[c];
    let table = &rq.sources[con.source].table;
    (0..table.row_count())
        .filter(|&r| rq.source_passes(con.source, r))
        .filter_map(|r| {
            let position = rq.point_of(con, r)?;
            Some(Candidate { row: r as u32, weight: rq.precision_of(con, r).w(), position })
        })
        .collect()
}

fn table_of(rq: &ResolvedQuery, c: usize) -> &Arc<CatalogTable> {
    &rq.sources[rq.constraints[c].source].table
}

fn reuses(rq: &ResolvedQuery, dets: &[Option<u32>], c: usize, row: u32) -> bool {
    dets.iter().enumerate().any(|(j, d)| {
        *d == Some(row) && Arc::ptr_eq(table_of(rq, j), table_of(rq, c))
    })
}

// detections by constraint, plus the (weight, position) of each one included
type Partial = (Vec<Option<u32>>, Vec<(f64, UnitVector)>);

/// Every match of `rq`, evaluating MAY and NOT constraints in `optional_order`.
pub fn brute_force(rq: &ResolvedQuery, optional_order: &[usize]) -> Vec<OracleMatch> {
    let limit = rq.log_limit();
    let n = rq.constraints.len();
    let musts: Vec<usize> = (0..n).filter(|&c| rq.constraints[c].mode == MatchMode::Must).collect();
    let pools: Vec<Vec<Candidate>> = (0..n).map(|c| candidates(rq, c)).collect();

    let mut tuples: Vec<Partial> = vec![(vec![None; n], Vec::new())];
    for &c in &musts {
        let mut next = Vec::new();
        for (dets, parts) in &tuples {
            for cand in &pools[c] {
                if reuses(rq, dets, c, cand.row) {
                    continue;
                }
                let mut d = dets.clone();
                d[c] = Some(cand.row);
                let mut p = parts.clone();
                p.push((cand.weight, cand.position));
                next.push((d, p));
            }
        }
        tuples = next;
    }
    if musts.len() >= 2 {
        tuples.retain(|(_, p)| oracle_log_bf(p) >= limit);
    }

    let mut out = Vec::new();
    'tuple: for (mut dets, mut parts) in tuples {
        for &c in optional_order {
            let con = &rq.constraints[c];
            match con.mode {
                MatchMode::May => {
                    let mut best: Option<(f64, &Candidate)> = None;
                    for cand in &pools[c] {
                        if reuses(rq, &dets, c, cand.row) {
                            continue;
                        }
                        let mut p = parts.clone();
                        p.push((cand.weight, cand.position));
                        let lb = oracle_log_bf(&p);
                        if lb < limit {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some((b, bc)) => {
                                lb > b
                                    || (lb == b
                                        && table_of(rq, c).key_cmp(cand.row as usize, bc.row as usize)
                                            == Ordering::Less)
                            }
                        };
                        if better {
                            best = Some((lb, cand));
                        }
                    }
                    if let Some((_, cand)) = best {
                        dets[c] = Some(cand.row);
                        parts.push((cand.weight, cand.position));
                    }
                }
                MatchMode::Not => {
                    if let Some(fp) = &table_of(rq, c).schema().footprint {
                        if !fp.contains(&combined_direction(&parts)) {
                            continue 'tuple;
                        }
                    }
                    for cand in &pools[c] {
                        if reuses(rq, &dets, c, cand.row) {
                            continue;
                        }
                        let mut p = parts.clone();
                        p.push((cand.weight, cand.position));
                        if oracle_log_bf(&p) >= limit {
                            continue 'tuple;
                        }
                    }
                }
                MatchMode::Must => unreachable!("MUST constraints are enumerated above"),
            }
        }
        out.push(OracleMatch { log_bf: oracle_log_bf(&parts), detections: dets });
    }
    out.sort_by(|a, b| skyjoin::executor::compare_detections(rq, &a.detections, &b.detections));
    out
}

/// Describes every difference between engine matches and oracle matches.
pub fn diff_matches(got: &[MatchResult], want: &[OracleMatch], tol: f64) -> Vec<String> {
    let mut errs = Vec::new();
    if got.len() != want.len() {
        errs.push(format!("{} matches, oracle has {}", got.len(), want.len()));
    }
    for (g, w) in got.iter().zip(want) {
        if g.detections != w.detections {
            errs.push(format!("detections {:?} vs oracle {:?}", g.detections, w.detections));
            break;
        }
        if (g.log_bf - w.log_bf).abs() > tol * w.log_bf.abs().max(1.0) {
            errs.push(format!("{:?}: log B {} vs oracle {}", g.detections, g.log_bf, w.log_bf));
        }
    }
    errs
}

pub fn detections(t: &ResultTable) -> Vec<Vec<Option<u32>>> {
    t.matches.iter().map(|m| m.detections.clone()).collect()
}
