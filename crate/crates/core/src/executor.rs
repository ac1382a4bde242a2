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

//! Plan execution: zone joins, match semantics and the branch worker pool.
//!
//! Every partition branch seeds match rows from the driving source rows in
//! its RA wedge and runs the plan's steps in order, writing each step's
//! output to a staging table. Branches run on a fixed pool of workers,
//! branch `i` starting on worker `i mod workers`; a failed branch restarts
//! from scratch on the next worker. Staging tables of a job are dropped in
//! every terminal state.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, RecvTimeoutError};
use log::{debug, warn};
use thiserror::Error;

use crate::bayes::{self, MatchAccumulator, Precision};
use crate::geometry::{self, UnitVector, ZoneId};
use crate::planner::{ExecutionPlan, PairStep, StepInput};
use crate::query::ast::MatchMode;
use crate::query::bound::{RowContext, VirtualColumn};
use crate::query::resolve::ResolvedQuery;
use crate::store::{StagingId, StagingRegistry, StoreError, Value};

// intermediate pruning tolerates this much rounding in log B
const PRUNE_SLACK: f64 = 1e-9;
const CANCEL_CHECK_ROWS: usize = 256;
const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("branch cancelled")]
    Cancelled,
    #[error("injected fault in partition {partition}, stage {stage}, attempt {attempt}")]
    Injected { partition: usize, stage: usize, attempt: u32 },
    #[error("staging table {0} is missing")]
    MissingStaging(String),
}

#[derive(Debug, Error)]
pub enum JobError {
    #[error("job failed: {0}")]
    Failed(String),
    #[error("job timed out after {0:?}")]
    TimedOut(Duration),
    #[error("job cancelled")]
    Cancelled,
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// A candidate association: one optional detection per constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchRow {
    /// Table rows indexed by constraint; `None` only for MAY constraints.
    pub detections: Vec<Option<u32>>,
    pub acc: MatchAccumulator,
}

/// Filtered rows of one source with their directions and precisions.
#[derive(Debug, Clone)]
pub struct PreparedSource {
    pub rows: Vec<u32>,
    pub positions: Vec<UnitVector>,
    pub precisions: Vec<Precision>,
    pub ra: Vec<f64>,
}

impl PreparedSource {
    pub fn new(rq: &ResolvedQuery, source: usize) -> Self {
        let c = rq.constraint_of(source);
        let table = &rq.sources[source].table;
        let mut out = PreparedSource {
            rows: Vec::new(),
            positions: Vec::new(),
            precisions: Vec::new(),
            ra: Vec::new(),
        };
        let mut skipped = 0usize;
        for row in 0..table.row_count() {
            if !rq.source_passes(source, row) {
                continue;
            }
            let Some(p) = rq.point_of(c, row) else {
                skipped += 1;
                continue;
            };
            out.rows.push(row as u32);
            out.ra.push(geometry::from_unit_vector(p).map_or(0.0, |s| s.ra()));
            out.positions.push(p);
            out.precisions.push(rq.precision_of(c, row));
        }
        if skipped > 0 {
            warn!("{}: {skipped} rows without a valid position skipped", rq.sources[source].alias);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Points bucketed by declination zone and sorted by RA within a zone.
#[derive(Debug, Clone)]
pub struct ZoneIndex {
    zone_height: f64,
    // (zone, ra, point index), sorted
    entries: Vec<(u32, f64, u32)>,
    positions: Vec<UnitVector>,
}

impl ZoneIndex {
    pub fn new(positions: &[UnitVector], zone_height: f64) -> Self {
        let mut entries: Vec<(u32, f64, u32)> = positions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let ra = geometry::from_unit_vector(*p).map_or(0.0, |s| s.ra());
                (geometry::zone_of(p.dec_deg(), zone_height).0, ra, i as u32)
            })
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        Self {
            zone_height,
            entries,
            positions: positions.to_vec(),
        }
    }

    fn zone_slice(&self, zone: u32) -> &[(u32, f64, u32)] {
        let lo = self.entries.partition_point(|e| e.0 < zone);
        let hi = self.entries.partition_point(|e| e.0 <= zone);
        &self.entries[lo..hi]
    }

    /// Indices of points within `theta` radians of `p`, ascending.
    pub fn within(&self, p: &UnitVector, theta: f64, out: &mut Vec<u32>) {
        out.clear();
        let zone = geometry::zone_of(p.dec_deg(), self.zone_height);
        let half = geometry::ra_window(theta, geometry::zone_dec_range(zone, self.zone_height));
        let ra = geometry::from_unit_vector(*p).map_or(0.0, |s| s.ra());
        for z in geometry::zone_window(ZoneId(zone.0), theta, self.zone_height) {
            let slice = self.zone_slice(z);
            let mut scan = |lo: f64, hi: f64| {
                let a = slice.partition_point(|e| e.1 < lo);
                let b = slice.partition_point(|e| e.1 <= hi);
                for e in &slice[a..b.max(a)] {
                    if geometry::angular_distance(p, &self.positions[e.2 as usize]) <= theta {
                        out.push(e.2);
                    }
                }
            };
            if half >= 180.0 {
                scan(f64::NEG_INFINITY, f64::INFINITY);
            } else {
                let (lo, hi) = (ra - half, ra + half);
                if lo < 0.0 {
                    scan(lo + 360.0, 360.0);
                    scan(0.0, hi);
                } else if hi >= 360.0 {
                    scan(lo, 360.0);
                    scan(0.0, hi - 360.0);
                } else {
                    scan(lo, hi);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
    }
}

/// All pairs `(i, j)` with `left[i]` and `right[j]` at most `theta` apart.
pub fn zone_join(left: &[UnitVector], right: &[UnitVector], theta: f64, zone_height: f64) -> Vec<(u32, u32)> {
    let index = ZoneIndex::new(right, zone_height);
    let mut out = Vec::new();
    let mut buf = Vec::new();
    for (i, p) in left.iter().enumerate() {
        index.within(p, theta, &mut buf);
        out.extend(buf.iter().map(|&j| (i as u32, j)));
    }
    out
}

/// Read-only state shared by all branches of a job.
pub struct JobData<'a> {
    pub rq: &'a ResolvedQuery,
    pub plan: &'a ExecutionPlan,
    pub sources: Vec<PreparedSource>,
    /// Zone index of each step's right-hand source.
    pub indexes: Vec<ZoneIndex>,
}

impl<'a> JobData<'a> {
    pub fn new(rq: &'a ResolvedQuery, plan: &'a ExecutionPlan) -> Self {
        let sources: Vec<PreparedSource> = (0..rq.sources.len()).map(|s| PreparedSource::new(rq, s)).collect();
        let indexes = plan
            .steps
            .iter()
            .map(|st| ZoneIndex::new(&sources[st.source].positions, st.zone_height))
            .collect();
        Self { rq, plan, sources, indexes }
    }

    fn driving_source(&self) -> usize {
        self.rq.constraints[self.plan.driving].source
    }

    /// Seed rows of one partition.
    pub fn seed(&self, partition: usize) -> Vec<MatchRow> {
        let src = &self.sources[self.driving_source()];
        let n = self.rq.constraints.len();
        (0..src.len())
            .filter(|&i| self.plan.wedge_of(src.ra[i]) == partition)
            .map(|i| {
                let mut detections = vec![None; n];
                detections[self.plan.driving] = Some(src.rows[i]);
                MatchRow {
                    detections,
                    acc: MatchAccumulator::single(&src.positions[i], src.precisions[i]),
                }
            })
            .collect()
    }

    // a detection never pairs with itself in a self-join
    fn reuses_detection(&self, row: &MatchRow, step: &PairStep, table_row: u32) -> bool {
        let table = &self.rq.sources[step.source].table;
        row.detections.iter().enumerate().any(|(c, d)| {
            *d == Some(table_row)
                && Arc::ptr_eq(&self.rq.sources[self.rq.constraints[c].source].table, table)
        })
    }

    fn key_cmp(&self, source: usize, a: u32, b: u32) -> Ordering {
        self.rq.sources[source].table.key_cmp(a as usize, b as usize)
    }

    /// Runs one step over `input`. `stop` is polled between rows.
    pub fn run_step(&self, k: usize, input: &[MatchRow], stop: &dyn Fn() -> bool) -> Result<Vec<MatchRow>, StepError> {
        let step = &self.plan.steps[k];
        let src = &self.sources[step.source];
        let index = &self.indexes[k];
        let limit = self.plan.log_limit;
        let mut out = Vec::new();
        let mut cand = Vec::new();
        for (n, row) in input.iter().enumerate() {
            if n % CANCEL_CHECK_ROWS == 0 && stop() {
                return Err(StepError::Cancelled);
            }
            let Ok(best) = bayes::best_position(&row.acc) else { continue };
            if step.mode == MatchMode::Not {
                if let Some(fp) = &self.rq.sources[step.source].table.schema().footprint {
                    if !fp.contains(&best) {
                        continue;
                    }
                }
            }
            index.within(&best, step.search_radius, &mut cand);
            let scored = cand.iter().filter_map(|&j| {
                let table_row = src.rows[j as usize];
                if self.reuses_detection(row, step, table_row) {
                    return None;
                }
                let acc = row.acc.accumulate(&src.positions[j as usize], src.precisions[j as usize]);
                let lb = bayes::log_bayes_factor(&acc).ok()?;
                Some((table_row, acc, lb))
            });
            match step.mode {
                MatchMode::Must => {
                    let last_must = self.is_last_must(k);
                    let slack = if last_must { 0.0 } else { PRUNE_SLACK };
                    for (table_row, acc, lb) in scored {
                        if lb + step.remaining_gain + slack >= limit {
                            let mut detections = row.detections.clone();
                            detections[step.constraint] = Some(table_row);
                            out.push(MatchRow { detections, acc });
                        }
                    }
                }
                MatchMode::May => {
                    let mut best_pick: Option<(u32, MatchAccumulator, f64)> = None;
                    for (table_row, acc, lb) in scored {
                        if lb < limit {
                            continue;
                        }
                        let better = match &best_pick {
                            None => true,
                            Some((r, _, blb)) => {
                                lb > *blb || (lb == *blb && self.key_cmp(step.source, table_row, *r) == Ordering::Less)
                            }
                        };
                        if better {
                            best_pick = Some((table_row, acc, lb));
                        }
                    }
                    let mut next = row.clone();
                    if let Some((table_row, acc, _)) = best_pick {
                        next.detections[step.constraint] = Some(table_row);
                        next.acc = acc;
                    }
                    out.push(next);
                }
                MatchMode::Not => {
                    let mut scored = scored;
                    if !scored.any(|(_, _, lb)| lb >= limit) {
                        out.push(row.clone());
                    }
                }
            }
        }
        Ok(out)
    }

    fn is_last_must(&self, k: usize) -> bool {
        !self.plan.steps[k + 1..].iter().any(|s| s.mode == MatchMode::Must)
    }

    fn must_count(&self) -> usize {
        self.rq.constraints.iter().filter(|c| c.mode == MatchMode::Must).count()
    }
}

pub type FaultHook = Arc<dyn Fn(usize, usize, u32) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct ExecOptions {
    pub job_id: u64,
    pub workers: usize,
    pub max_retries: u32,
    pub timeout: Option<Duration>,
    /// Called with (partition, stage, attempt) before every stage; returning
    /// true makes that stage fail.
    pub fault: Option<FaultHook>,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            job_id: 0,
            workers: 1,
            max_retries: 2,
            timeout: None,
            fault: None,
        }
    }
}

/// Cooperative cancellation flag shared with whoever may cancel the job.
#[derive(Debug, Default)]
pub struct JobControl {
    cancelled: AtomicBool,
}

impl JobControl {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.cancelled.store(true, AtomicOrdering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(AtomicOrdering::SeqCst)
    }
}

/// Where and how often a branch ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchRun {
    pub partition: usize,
    pub attempt: u32,
    pub worker: usize,
    pub succeeded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Table rows indexed by constraint.
    pub detections: Vec<Option<u32>>,
    pub log_bf: f64,
    pub position: UnitVector,
}

#[derive(Debug, Clone)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub matches: Vec<MatchResult>,
    pub branches: Vec<BranchRun>,
}

impl ResultTable {
    /// Orders rows by their detection keys, constraint by constraint.
    pub fn sort_by_keys(&mut self, rq: &ResolvedQuery) {
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by(|&a, &b| compare_detections(rq, &self.matches[a].detections, &self.matches[b].detections));
        self.rows = order.iter().map(|&i| self.rows[i].clone()).collect();
        self.matches = order.iter().map(|&i| self.matches[i].clone()).collect();
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), StoreError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| StoreError::Io { path: dir.to_path_buf(), source: e })?;
        }
        let io_err = |e: csv::Error| StoreError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        };
        let mut w = csv::Writer::from_path(path).map_err(io_err)?;
        w.write_record(&self.columns).map_err(io_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(io_err)?;
        }
        w.flush().map_err(|e| StoreError::Io { path: path.to_path_buf(), source: e })
    }
}

pub fn compare_detections(rq: &ResolvedQuery, a: &[Option<u32>], b: &[Option<u32>]) -> Ordering {
    for (c, (x, y)) in a.iter().zip(b).enumerate() {
        let ord = match (x, y) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some(x), Some(y)) => rq.sources[rq.constraints[c].source].table.key_cmp(*x as usize, *y as usize),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

/// Output path `<dir>/<dataset>/<name>.csv` for an `INTO dataset:name` target.
pub fn output_path(dir: &Path, rq: &ResolvedQuery) -> Option<PathBuf> {
    rq.output
        .as_ref()
        .map(|o| dir.join(&o.dataset).join(format!("{}.csv", o.name)))
}

struct OutputRow<'a> {
    rq: &'a ResolvedQuery,
    m: &'a MatchResult,
}

impl RowContext for OutputRow<'_> {
    fn column(&self, source: usize, column: usize) -> Value {
        let c = self
            .rq
            .constraints
            .iter()
            .position(|c| c.source == source)
            .expect("every source has a constraint");
        match self.m.detections[c] {
            Some(row) => self.rq.sources[source].table.value(row as usize, column),
            None => Value::Null,
        }
    }

    fn virtual_value(&self, v: VirtualColumn) -> Value {
        match v {
            VirtualColumn::Ra | VirtualColumn::Dec => match geometry::from_unit_vector(self.m.position) {
                Ok(c) => Value::Float(if v == VirtualColumn::Ra { c.ra() } else { c.dec() }),
                Err(_) => Value::Null,
            },
            VirtualColumn::BayesFactor => Value::Float(self.m.log_bf.exp()),
            VirtualColumn::LogBayesFactor => Value::Float(self.m.log_bf),
        }
    }
}

struct Task {
    partition: usize,
    attempt: u32,
}

struct Done {
    partition: usize,
    attempt: u32,
    worker: usize,
    outcome: Result<StagingId, StepError>,
}

/// Runs one branch from scratch; on error its staging tables are dropped.
fn run_branch(
    data: &JobData<'_>,
    staging: &StagingRegistry<MatchRow>,
    opts: &ExecOptions,
    partition: usize,
    attempt: u32,
    stop: &dyn Fn() -> bool,
) -> Result<StagingId, StepError> {
    let mut created: Vec<StagingId> = Vec::new();
    let result = (|| {
        let fault = |stage: usize| match &opts.fault {
            Some(f) if f(partition, stage, attempt) => Err(StepError::Injected { partition, stage, attempt }),
            _ => Ok(()),
        };
        fault(0)?;
        let seed_id = staging.create_staging(StagingId::new(opts.job_id, 0, partition, attempt));
        created.push(seed_id.clone());
        staging.write(&seed_id, data.seed(partition));
        let mut current = seed_id;
        for (k, step) in data.plan.steps.iter().enumerate() {
            if stop() {
                return Err(StepError::Cancelled);
            }
            fault(k + 1)?;
            debug_assert!(matches!(step.left, StepInput::Seed) || step.left == StepInput::Previous(k - 1));
            let input = staging
                .read(&current)
                .ok_or_else(|| StepError::MissingStaging(current.to_string()))?;
            let rows = data.run_step(k, &input, stop)?;
            let id = staging.create_staging(StagingId::new(opts.job_id, k + 1, partition, attempt));
            created.push(id.clone());
            staging.write(&id, rows);
            staging.drop_staging(&current);
            current = id;
        }
        Ok(current)
    })();
    if result.is_err() {
        for id in &created {
            staging.drop_staging(id);
        }
    }
    result
}

/// Executes a compiled plan. Staging tables of `opts.job_id` are gone when
/// this returns, whatever the outcome.
pub fn run_job(
    rq: &ResolvedQuery,
    plan: &ExecutionPlan,
    staging: &StagingRegistry<MatchRow>,
    opts: &ExecOptions,
    control: &JobControl,
) -> Result<ResultTable, JobError> {
    let result = execute(rq, plan, staging, opts, control);
    staging.drop_job(opts.job_id);
    result
}

fn execute(
    rq: &ResolvedQuery,
    plan: &ExecutionPlan,
    staging: &StagingRegistry<MatchRow>,
    opts: &ExecOptions,
    control: &JobControl,
) -> Result<ResultTable, JobError> {
    let started = Instant::now();
    let mut table = ResultTable {
        columns: plan.columns.clone(),
        rows: Vec::new(),
        matches: Vec::new(),
        branches: Vec::new(),
    };
    if plan.empty.is_some() {
        return Ok(table);
    }
    let data = JobData::new(rq, plan);
    let workers = opts.workers.max(1);
    let parts = plan.partitions.len();
    let abort = AtomicBool::new(false);
    let stop = || abort.load(AtomicOrdering::SeqCst) || control.is_cancelled();

    let outcome: Result<Vec<StagingId>, JobError> = thread::scope(|scope| {
        let (done_tx, done_rx) = unbounded::<Done>();
        let mut queues = Vec::new();
        for worker in 0..workers {
            let (tx, rx) = unbounded::<Task>();
            queues.push(tx);
            let done_tx = done_tx.clone();
            let data = &data;
            let stop = &stop;
            scope.spawn(move || {
                for task in rx {
                    let outcome = if stop() {
                        Err(StepError::Cancelled)
                    } else {
                        run_branch(data, staging, opts, task.partition, task.attempt, stop)
                    };
                    let _ = done_tx.send(Done {
                        partition: task.partition,
                        attempt: task.attempt,
                        worker,
                        outcome,
                    });
                }
            });
        }
        drop(done_tx);
        for p in 0..parts {
            let _ = queues[p % workers].send(Task { partition: p, attempt: 0 });
        }
        let mut finals: Vec<Option<StagingId>> = vec![None; parts];
        let mut pending = parts;
        let result = loop {
            if pending == 0 {
                break Ok(());
            }
            if control.is_cancelled() {
                break Err(JobError::Cancelled);
            }
            let wait = match opts.timeout {
                Some(t) => match t.checked_sub(started.elapsed()) {
                    Some(left) => left.min(POLL),
                    None => break Err(JobError::TimedOut(t)),
                },
                None => POLL,
            };
            match done_rx.recv_timeout(wait) {
                Ok(done) => {
                    table.branches.push(BranchRun {
                        partition: done.partition,
                        attempt: done.attempt,
                        worker: done.worker,
                        succeeded: done.outcome.is_ok(),
                    });
                    match done.outcome {
                        Ok(id) => {
                            finals[done.partition] = Some(id);
                            pending -= 1;
                        }
                        Err(StepError::Cancelled) => {}
                        Err(e) if done.attempt < opts.max_retries => {
                            let next = (done.worker + 1) % workers;
                            warn!(
                                "job {}: partition {} failed on worker {} ({e}); retrying on worker {next}",
                                opts.job_id, done.partition, done.worker
                            );
                            let _ = queues[next].send(Task {
                                partition: done.partition,
                                attempt: done.attempt + 1,
                            });
                        }
                        Err(e) => {
                            break Err(JobError::Failed(format!(
                                "partition {} failed after {} attempts: {e}",
                                done.partition,
                                done.attempt + 1
                            )))
                        }
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break Err(JobError::Failed("worker pool exited".into())),
            }
        };
        if result.is_err() {
            abort.store(true, AtomicOrdering::SeqCst);
        }
        drop(queues);
        result.map(|_| finals.into_iter().map(|f| f.expect("all branches done")).collect())
    });
    let finals = outcome?;

    let mut rows = Vec::new();
    for id in &finals {
        let part = staging.read(id).ok_or_else(|| JobError::Failed(format!("staging table {id} is missing")))?;
        rows.extend(part.iter().cloned());
        staging.drop_staging(id);
    }
    debug!("job {}: {} match rows from {parts} partitions", opts.job_id, rows.len());
    let single_must = data.must_count() < 2;
    for row in rows {
        let log_bf = bayes::log_bayes_factor(&row.acc).unwrap_or(f64::NEG_INFINITY);
        if !single_must && log_bf < plan.log_limit {
            continue;
        }
        let Ok(position) = bayes::best_position(&row.acc) else { continue };
        let m = MatchResult {
            detections: row.detections,
            log_bf,
            position,
        };
        let ctx = OutputRow { rq, m: &m };
        if let Some(res) = &rq.residual {
            if !res.accepts(&ctx) {
                continue;
            }
        }
        table.rows.push(rq.projection.iter().map(|c| c.expr.eval(&ctx)).collect());
        table.matches.push(m);
    }
    Ok(table)
}

/// Runs `plan` on a private staging namespace and sorts the result by keys.
pub fn execute_sorted(
    rq: &ResolvedQuery,
    plan: &ExecutionPlan,
    opts: &ExecOptions,
) -> Result<ResultTable, JobError> {
    let staging = StagingRegistry::new();
    let mut t = run_job(rq, plan, &staging, opts, &JobControl::new())?;
    t.sort_by_keys(rq);
    Ok(t)
}
