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

//! Statistics-driven planning: step order, RA partitions and search radii.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use log::warn;
use thiserror::Error;

use crate::bayes::{self, WeightRange};
use crate::geometry::{self, ARCSEC};
use crate::query::ast::{MatchMode, ObjectName};
use crate::query::resolve::{ResolvedQuery, SigmaBinding};
use crate::store::{CatalogTable, MiniCatalog};

pub const HISTOGRAM_BINS: usize = 360;
const MIN_ZONE_HEIGHT: f64 = 1.0 / 3600.0;
const MAX_ZONE_HEIGHT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("{alias}: per-detection errors need an err_floor in the catalog config to bound the search radius")]
    MissingSigmaFloor { alias: String },
    #[error("partition count must be at least 1")]
    NoPartitions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceStats {
    pub alias: String,
    pub source: usize,
    pub estimated_rows: f64,
    /// Rows of the sample that passed the source filters.
    pub sampled_rows: usize,
    pub sample_rate: f64,
    /// False when no mini existed and the full table was scanned.
    pub from_mini: bool,
    /// Filtered sample rows per 1-degree RA bin.
    pub ra_histogram: Vec<f64>,
}

/// Estimates per-source cardinality and RA distribution from mini catalogs.
/// A source without a mini falls back to its full table.
pub fn gather_stats(rq: &ResolvedQuery, minis: &[MiniCatalog]) -> Vec<SourceStats> {
    rq.sources
        .iter()
        .enumerate()
        .map(|(i, src)| {
            let schema = src.table.schema();
            let mini = minis.iter().find(|m| {
                m.dataset.eq_ignore_ascii_case(&schema.dataset) && m.table.eq_ignore_ascii_case(&schema.table)
            });
            let (table, rate, from_mini): (&CatalogTable, f64, bool) = match mini {
                Some(m) => (&m.rows, m.sample_rate, true),
                None => {
                    warn!("no mini catalog for {}, using the full table", schema.qualified_name());
                    (&src.table, 1.0, false)
                }
            };
            stats_from_table(rq, i, table, rate, from_mini)
        })
        .collect()
}

pub fn stats_from_table(
    rq: &ResolvedQuery,
    source: usize,
    table: &CatalogTable,
    sample_rate: f64,
    from_mini: bool,
) -> SourceStats {
    let c = rq.constraint_of(source);
    let mut hist = vec![0.0; HISTOGRAM_BINS];
    let mut n = 0usize;
    for row in 0..table.row_count() {
        if !rq.source_passes_in(source, table, row) {
            continue;
        }
        let Some(p) = rq.point_in(c, table, row) else { continue };
        let ra = geometry::from_unit_vector(p).map(|c| c.ra()).unwrap_or(0.0);
        hist[(ra.floor() as usize).min(HISTOGRAM_BINS - 1)] += 1.0;
        n += 1;
    }
    SourceStats {
        alias: rq.sources[source].alias.clone(),
        source,
        estimated_rows: n as f64 / sample_rate,
        sampled_rows: n,
        sample_rate,
        from_mini,
        ra_histogram: hist,
    }
}

/// Constraint indices in execution order: MUST by ascending estimate, then
/// MAY ascending, then NOT. Ties break on alias.
pub fn order_steps(rq: &ResolvedQuery, stats: &[SourceStats]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rq.constraints.len()).collect();
    let est = |c: usize| stats[rq.constraints[c].source].estimated_rows;
    let alias = |c: usize| rq.sources[rq.constraints[c].source].alias.as_str();
    idx.sort_by(|&a, &b| {
        rq.constraints[a]
            .mode
            .cmp(&rq.constraints[b].mode)
            .then(est(a).total_cmp(&est(b)))
            .then_with(|| alias(a).cmp(alias(b)))
    });
    idx
}

/// Lower RA edges (ascending, degrees) of `p` wedges holding equal shares of
/// the histogram mass, interpolating linearly within bins. Wedge `i` spans
/// `[b_i, b_{i+1})` and the last wedge wraps through 360.
pub fn partition_boundaries(histogram: &[f64], p: usize) -> Vec<f64> {
    assert!(p >= 1);
    let bins = histogram.len();
    let width = 360.0 / bins as f64;
    let total: f64 = histogram.iter().sum();
    if total <= 0.0 {
        return (0..p).map(|i| i as f64 * 360.0 / p as f64).collect();
    }
    let start = gap_end(histogram);
    let mut out = vec![start as f64 * width];
    let mut k = 1;
    let mut cum = 0.0;
    for step in 0..bins {
        if k == p {
            break;
        }
        let b = (start + step) % bins;
        let m = histogram[b];
        while k < p && m > 0.0 && cum + m >= total * k as f64 / p as f64 {
            let frac = (total * k as f64 / p as f64 - cum) / m;
            let pos = (start + step) as f64 * width + frac * width;
            out.push(pos % 360.0);
            k += 1;
        }
        cum += m;
    }
    out.sort_by(f64::total_cmp);
    out
}

// Bin following the longest circular run of empty bins, or 0.
fn gap_end(h: &[f64]) -> usize {
    let n = h.len();
    let Some(first_full) = h.iter().position(|&m| m > 0.0) else { return 0 };
    let (mut best_len, mut best_end) = (0, 0);
    let mut run = 0;
    for step in 1..=n {
        let b = (first_full + step) % n;
        if h[b] > 0.0 {
            if run > best_len {
                best_len = run;
                best_end = b;
            }
            run = 0;
        } else {
            run += 1;
        }
    }
    if best_len == 0 {
        0
    } else {
        best_end
    }
}

/// Index of the wedge holding `ra` for sorted lower edges `bounds`.
pub fn wedge_of(bounds: &[f64], ra: f64) -> usize {
    match bounds.partition_point(|&b| b <= ra) {
        0 => bounds.len() - 1,
        i => i - 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepInput {
    /// Rows of the driving source in the branch's wedge.
    Seed,
    Previous(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairStep {
    pub index: usize,
    pub constraint: usize,
    pub source: usize,
    pub alias: String,
    pub mode: MatchMode,
    pub left: StepInput,
    /// Two-detection cutoff for the step's errors at the query limit, radians.
    pub pair_cutoff: f64,
    /// Radius around the running best position searched for partners, radians.
    pub search_radius: f64,
    pub zone_height: f64,
    /// Upper bound on what the remaining MUST steps can add to log B.
    pub remaining_gain: f64,
    pub right_weights: WeightRange,
}

impl PairStep {
    pub fn staging_template(&self) -> String {
        format!("job{{job}}.s{}.p{{partition}}.a{{attempt}}", self.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionPlan {
    pub partitions: Vec<f64>,
    /// Constraint index of the first MUST source.
    pub driving: usize,
    pub driving_alias: String,
    pub seed_weights: WeightRange,
    pub steps: Vec<PairStep>,
    pub log_limit: f64,
    pub stats: Vec<SourceStats>,
    /// Set when the result is provably empty; execution is skipped.
    pub empty: Option<String>,
    pub output: Option<ObjectName>,
    pub columns: Vec<String>,
}

pub fn default_partitions(workers: usize) -> usize {
    4 * workers.max(1)
}

pub fn weight_range(rq: &ResolvedQuery, constraint: usize) -> Result<WeightRange, PlanError> {
    let c = &rq.constraints[constraint];
    match c.sigma {
        SigmaBinding::Constant(p) => Ok(WeightRange::exact(p.w())),
        SigmaBinding::Column(_) => {
            let src = &rq.sources[c.source];
            let floor = src
                .table
                .schema()
                .sigma_floor_arcsec
                .ok_or_else(|| PlanError::MissingSigmaFloor { alias: src.alias.clone() })?;
            let max = src.table.sigma_range_arcsec().map_or(floor, |(_, hi)| hi.max(floor));
            Ok(WeightRange::from_sigmas(floor * ARCSEC, max * ARCSEC))
        }
    }
}

fn sigma_of(w: &WeightRange) -> f64 {
    1.0 / w.max.sqrt()
}

pub fn compile(rq: &ResolvedQuery, stats: Vec<SourceStats>, partitions: usize) -> Result<ExecutionPlan, PlanError> {
    if partitions == 0 {
        return Err(PlanError::NoPartitions);
    }
    let order = order_steps(rq, &stats);
    let weights: Vec<WeightRange> = (0..rq.constraints.len())
        .map(|c| weight_range(rq, c))
        .collect::<Result<_, _>>()?;
    let log_limit = rq.log_limit();
    let driving = order[0];
    let must: Vec<usize> = order.iter().copied().filter(|&c| rq.constraints[c].mode == MatchMode::Must).collect();

    // upper bounds of each MUST pair contribution, in execution order
    let mut must_gain = Vec::new();
    let mut kmax = weights[driving].max;
    for &c in &must[1..] {
        must_gain.push(bayes::max_pair_log_bf(kmax, weights[c].max));
        kmax += weights[c].max;
    }
    let must_total: f64 = must_gain.iter().sum();

    let mut steps = Vec::new();
    let mut kmin = weights[driving].min;
    let mut kmax = weights[driving].max;
    let mut drift = 0.0f64;
    let mut may_gain = 0.0;
    for (k, &c) in order[1..].iter().enumerate() {
        let con = &rq.constraints[c];
        let w = weights[c];
        let (threshold, remaining) = match con.mode {
            MatchMode::Must => {
                let own = must_gain[k];
                let later: f64 = must_gain[k + 1..].iter().sum();
                (log_limit - (must_total - own), later)
            }
            MatchMode::May | MatchMode::Not => (log_limit - (must_total + may_gain), 0.0),
        };
        let left = WeightRange {
            min: (kmin * drift.min(FRAC_PI_2).cos()).max(f64::MIN_POSITIVE),
            max: kmax,
        };
        let search_radius = bayes::pair_search_radius(left, w, threshold);
        let pair_cutoff = bayes::cutoff_radius(sigma_of(&left), sigma_of(&w), log_limit);
        let zone_height = search_radius.to_degrees().clamp(MIN_ZONE_HEIGHT, MAX_ZONE_HEIGHT);
        let source = con.source;
        steps.push(PairStep {
            index: k,
            constraint: c,
            source,
            alias: rq.sources[source].alias.clone(),
            mode: con.mode,
            left: if k == 0 { StepInput::Seed } else { StepInput::Previous(k - 1) },
            pair_cutoff,
            search_radius,
            zone_height,
            remaining_gain: remaining,
            right_weights: w,
        });
        if con.mode == MatchMode::Must {
            kmin += w.min;
        }
        if con.mode != MatchMode::Not {
            kmax += w.max;
            drift = (drift + search_radius).min(PI);
        }
        if con.mode == MatchMode::May {
            may_gain += bayes::max_pair_log_bf(kmax - w.max, w.max).max(0.0);
        }
    }

    let empty = empty_reason(rq, &stats, &steps, &order);
    let driving_stats = &stats[rq.constraints[driving].source];
    Ok(ExecutionPlan {
        partitions: partition_boundaries(&driving_stats.ra_histogram, partitions),
        driving,
        driving_alias: rq.sources[rq.constraints[driving].source].alias.clone(),
        seed_weights: weights[driving],
        steps,
        log_limit,
        stats,
        empty,
        output: rq.output.clone(),
        columns: rq.projection.iter().map(|c| c.name.clone()).collect(),
    })
}

fn empty_reason(rq: &ResolvedQuery, stats: &[SourceStats], steps: &[PairStep], order: &[usize]) -> Option<String> {
    if let Some(s) = steps.iter().find(|s| s.mode == MatchMode::Must && s.search_radius == 0.0) {
        return Some(format!("no {} pair can reach the limit", s.alias));
    }
    for &c in order {
        let con = &rq.constraints[c];
        if con.mode != MatchMode::Must {
            continue;
        }
        let src = &rq.sources[con.source];
        if let (Some(region), Some(fp)) = (&rq.region, &src.table.schema().footprint) {
            if region.is_disjoint(fp) {
                return Some(format!("region lies outside the footprint of {}", src.alias));
            }
        }
        let st = &stats[con.source];
        if st.estimated_rows == 0.0 && st.sample_rate >= 1.0 {
            return Some(format!("no rows of {} pass the filters", src.alias));
        }
    }
    None
}

impl ExecutionPlan {
    pub fn wedge_of(&self, ra: f64) -> usize {
        wedge_of(&self.partitions, ra)
    }
}

impl fmt::Display for ExecutionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "limit: log B >= {:.6}", self.log_limit)?;
        writeln!(f, "sources:")?;
        for s in &self.stats {
            writeln!(
                f,
                "  {:<12} estimated rows {:>14.1}  ({} sampled at rate {}{})",
                s.alias,
                s.estimated_rows,
                s.sampled_rows,
                s.sample_rate,
                if s.from_mini { "" } else { ", no mini" }
            )?;
        }
        writeln!(f, "driving source: {}", self.driving_alias)?;
        writeln!(f, "steps:")?;
        for s in &self.steps {
            let left = match s.left {
                StepInput::Seed => "seed".to_string(),
                StepInput::Previous(i) => format!("step {i}"),
            };
            writeln!(
                f,
                "  {}: {} {:<10} <- {:<7} pair cutoff {:.4}\"  search radius {:.4}\"  zone height {:.6} deg",
                s.index,
                s.mode,
                s.alias,
                left,
                s.pair_cutoff / ARCSEC,
                s.search_radius / ARCSEC,
                s.zone_height
            )?;
        }
        write!(f, "partitions ({}):", self.partitions.len())?;
        for b in &self.partitions {
            write!(f, " {b:.3}")?;
        }
        writeln!(f)?;
        if let Some(reason) = &self.empty {
            writeln!(f, "empty result: {reason}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{parse_query, resolve};
    use crate::store::CatalogRegistry;
    use crate::synthetic::{generate, uniform_catalog, SurveyConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const QUERY1: &str = include_str!("../tests/data/queries/query1.sql");

    fn registry() -> CatalogRegistry {
        let s = generate(&SurveyConfig::default());
        let mut reg = CatalogRegistry::new();
        reg.register(s.sdss);
        reg.register(s.galex);
        reg.register(s.twomass);
        reg
    }

    fn resolved(text: &str, reg: &CatalogRegistry) -> ResolvedQuery {
        resolve(&parse_query(text).unwrap(), reg).unwrap()
    }

    /// Mass of the piecewise-linear histogram between `a` and `b` degrees.
    fn mass_between(h: &[f64], a: f64, b: f64) -> f64 {
        let cdf = |x: f64| {
            let bin = (x.floor() as usize).min(h.len());
            h[..bin].iter().sum::<f64>() + if bin < h.len() { h[bin] * (x - bin as f64) } else { 0.0 }
        };
        if a <= b {
            cdf(b) - cdf(a)
        } else {
            cdf(360.0) - cdf(a) + cdf(b)
        }
    }

    #[test]
    fn uniform_histogram_quarters() {
        let b = partition_boundaries(&[5.0; 360], 4);
        assert_eq!(b.len(), 4);
        for (got, want) in b.iter().zip([0.0, 90.0, 180.0, 270.0]) {
            assert!((got - want).abs() < 1e-9, "{b:?}");
        }
    }

    #[test]
    fn concentrated_mass_stays_inside() {
        let mut h = vec![0.0; 360];
        for bin in h.iter_mut().take(10) {
            *bin = 3.0;
        }
        let b = partition_boundaries(&h, 2);
        assert!(b.iter().all(|&x| (0.0..10.0).contains(&x)), "{b:?}");
        // a clump straddling RA 0 starts its first wedge at the clump edge
        let mut h = vec![0.0; 360];
        h[355..].iter_mut().for_each(|m| *m = 1.0);
        h[..5].iter_mut().for_each(|m| *m = 1.0);
        let b = partition_boundaries(&h, 4);
        assert_eq!(b, vec![0.0, 2.5, 355.0, 357.5]);
    }

    #[test]
    fn random_histograms_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let h: Vec<f64> = (0..360)
                .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..100.0f64).floor() })
                .collect();
            let total: f64 = h.iter().sum();
            let max_bin = h.iter().cloned().fold(0.0, f64::max);
            for p in [1, 2, 3, 4, 7, 8, 16] {
                let b = partition_boundaries(&h, p);
                assert_eq!(b.len(), p);
                assert!(b.windows(2).all(|w| w[0] <= w[1]));
                for i in 0..p {
                    let hi = if i + 1 < p { b[i + 1] } else { b[0] };
                    let m = if p == 1 { total } else { mass_between(&h, b[i], hi) };
                    assert!((m - total / p as f64).abs() <= max_bin + 1e-9, "p={p} wedge {i}: {m} vs {}", total / p as f64);
                }
            }
        }
    }

    #[test]
    fn wedges_cover_the_circle() {
        let b = vec![10.0, 100.0, 200.0];
        assert_eq!(wedge_of(&b, 10.0), 0);
        assert_eq!(wedge_of(&b, 99.999), 0);
        assert_eq!(wedge_of(&b, 100.0), 1);
        assert_eq!(wedge_of(&b, 359.9), 2);
        assert_eq!(wedge_of(&b, 5.0), 2);
    }

    #[test]
    fn estimates_scale_by_sample_rate() {
        let reg = registry();
        let rq = resolved(QUERY1, &reg);
        let sdss = reg.get("SDSS", "PhotoObjAll").unwrap();
        let passing = (0..sdss.row_count()).filter(|&r| rq.source_passes(0, r)).count();
        let mini = MiniCatalog {
            dataset: "SDSS".into(),
            table: "PhotoObjAll".into(),
            sample_rate: 1e-3,
            seed: 0,
            rows: (**sdss).clone(),
        };
        let stats = gather_stats(&rq, &[mini]);
        assert_eq!(stats[0].sampled_rows, passing);
        assert!((stats[0].estimated_rows - passing as f64 * 1000.0).abs() < 1e-6);
        assert!(stats[0].from_mini && !stats[1].from_mini);
        assert_eq!(stats[0].ra_histogram.iter().sum::<f64>(), passing as f64);
    }

    #[test]
    fn uniform_sky_histogram_is_flat() {
        let t = uniform_catalog("U", "sky", 100_000, 11);
        let mut reg = CatalogRegistry::new();
        reg.register(t.clone());
        reg.register(uniform_catalog("V", "sky", 10, 12));
        let rq = resolved(
            "SELECT a.id FROM U:sky AS a CROSS JOIN V:sky AS b XMATCH BAYESIAN AS x \
             MUST a ON POINT(a.ra, a.dec), 1 MUST b ON POINT(b.ra, b.dec), 1 HAVING LIMIT 10",
            &reg,
        );
        let st = stats_from_table(&rq, 0, &t, 1.0, false);
        let expected = 100_000.0 / 360.0;
        let chi2: f64 = st.ra_histogram.iter().map(|o| (o - expected).powi(2) / expected).sum();
        // 359 degrees of freedom; five standard deviations above the mean
        assert!(chi2 < 359.0 + 5.0 * (2.0f64 * 359.0).sqrt(), "chi2 = {chi2}");
    }

    #[test]
    fn query1_plan_shape() {
        let reg = registry();
        let rq = resolved(QUERY1, &reg);
        let stats = gather_stats(&rq, &[]);
        let plan = compile(&rq, stats, 4).unwrap();
        assert_eq!(plan.partitions.len(), 4);
        assert_eq!(plan.steps.len(), 2);
        assert_eq!(plan.steps[0].mode, MatchMode::Must);
        assert_eq!(plan.steps[1].mode, MatchMode::May);
        assert_eq!(plan.steps[1].alias, "t");
        assert!(plan.empty.is_none());
        for s in &plan.steps {
            assert!(s.search_radius >= s.pair_cutoff * 0.999, "{s:?}");
            assert!(s.search_radius > 0.0 && s.search_radius < 10.0 * ARCSEC);
            assert!((s.zone_height - s.search_radius.to_degrees().max(1.0 / 3600.0)).abs() < 1e-15);
        }
        let text = plan.to_string();
        assert!(text.contains("MAY t"), "{text}");
        assert_eq!(default_partitions(3), 12);
    }

    #[test]
    fn must_order_follows_estimates() {
        let reg = registry();
        let rq = resolved(QUERY1, &reg);
        let mut stats = gather_stats(&rq, &[]);
        stats[0].estimated_rows = 1e6;
        stats[1].estimated_rows = 1e4;
        stats[2].estimated_rows = 1.0;
        assert_eq!(order_steps(&rq, &stats), vec![1, 0, 2]);
        let dropout = QUERY1.replace("MAY  t", "NOT  t").replace(",\n       t.ObjID, t.RA, t.Dec, t.mag_J, t.mag_H, t.mag_K", "");
        let rq = resolved(&dropout, &reg);
        let mut stats = gather_stats(&rq, &[]);
        stats[2].estimated_rows = 0.5;
        let order = order_steps(&rq, &stats);
        assert_eq!(rq.constraints[order[2]].mode, MatchMode::Not);
    }

    #[test]
    fn empty_plans() {
        let reg = registry();
        let hopeless = resolved(&QUERY1.replace("1e6", "1e300"), &reg);
        let plan = compile(&hopeless, gather_stats(&hopeless, &[]), 2).unwrap();
        assert!(plan.empty.is_some());
        let elsewhere = resolved(&QUERY1.replace("J2000 180 0 60", "J2000 10 40 30"), &reg);
        let stats = gather_stats(&elsewhere, &[]);
        assert_eq!(stats[0].estimated_rows, 0.0);
        assert!(compile(&elsewhere, stats, 2).unwrap().empty.is_some());
    }

    #[test]
    fn per_detection_errors_need_a_floor() {
        let cfg = SurveyConfig { rows: 30, objects: 10, doubles: 0, ..SurveyConfig::default() };
        let s = generate(&cfg);
        let mut reg = CatalogRegistry::new();
        reg.register(s.sdss);
        let mut schema = s.twomass.schema().clone();
        schema.sigma_floor_arcsec = None;
        let cols = s.twomass.columns().to_vec();
        reg.register(CatalogTable::from_columns(schema, cols, None).unwrap());
        let rq = resolved(
            "SELECT s.ObjID FROM SDSS:PhotoObjAll AS s CROSS JOIN TwoMASS:PhotoXSC AS t XMATCH BAYESIAN AS x \
             MUST s ON POINT(s.RA, s.Dec), 0.1 MUST t ON POINT(t.RA, t.Dec), t.err HAVING LIMIT 10",
            &reg,
        );
        let err = compile(&rq, gather_stats(&rq, &[]), 1).unwrap_err();
        assert_eq!(err, PlanError::MissingSigmaFloor { alias: "t".into() });
    }
}
