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


//! Quick and long job queues.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crossbeam_channel::{unbounded, Sender};
use thiserror::Error;

use crate::executor::{run_job, ExecOptions, JobControl, JobError, MatchRow, ResultTable};
use crate::planner::ExecutionPlan;
use crate::query::ResolvedQuery;
use crate::store::StagingRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueueKind {
    Quick,
    Long,
}

impl fmt::Display for QueueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueueKind::Quick => "QUICK",
            QueueKind::Long => "LONG",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobState {
    Queued,
    Running,
    /// Cancellation requested while running; branches are winding down.
    Suspending,
    Cancelled,
    Failed,
    Completed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Cancelled | JobState::Failed | JobState::Completed)
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobState::Queued => "Queued",
            JobState::Running => "Running",
            JobState::Suspending => "Suspending",
            JobState::Cancelled => "Cancelled",
            JobState::Failed => "Failed",
            JobState::Completed => "Completed",
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueueError {
    #[error("unknown job {0}")]
    UnknownJob(u64),
}

#[derive(Debug, Clone, Copy)]
pub struct QueueConfig {
    pub timeout: Option<Duration>,
    pub concurrency: usize,
}

/// A compiled query ready to run.
pub struct JobSpec {
    pub query: Arc<ResolvedQuery>,
    pub plan: Arc<ExecutionPlan>,
    /// `job_id` and `timeout` are set by the queue.
    pub options: ExecOptions,
}

struct Entry {
    queue: QueueKind,
    state: JobState,
    control: Arc<JobControl>,
    outcome: Option<Result<ResultTable, JobError>>,
}

#[derive(Default)]
struct Shared {
    jobs: Mutex<HashMap<u64, Entry>>,
    changed: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, HashMap<u64, Entry>> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn log_state(id: u64, state: JobState) {
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    eprintln!("{id} {state} {}.{:03}", ts.as_secs(), ts.subsec_millis());
}

fn set_state(jobs: &mut HashMap<u64, Entry>, id: u64, state: JobState) {
    if let Some(e) = jobs.get_mut(&id) {
        e.state = state;
        log_state(id, state);
    }
}

/// Two FIFO queues with independent timeouts and concurrency, sharing one
/// staging namespace.
pub struct JobQueues {
    shared: Arc<Shared>,
    staging: Arc<StagingRegistry<MatchRow>>,
    senders: HashMap<QueueKind, Sender<(u64, JobSpec)>>,
    runners: Vec<JoinHandle<()>>,
    next_id: Mutex<u64>,
}

impl JobQueues {
    pub fn new(quick: QueueConfig, long: QueueConfig) -> Self {
        Self::starting_at(quick, long, 1)
    }

    /// Like `new`, numbering jobs from `first_id`.
    pub fn starting_at(quick: QueueConfig, long: QueueConfig, first_id: u64) -> Self {
        let shared = Arc::new(Shared::default());
        let staging = Arc::new(StagingRegistry::new());
        let mut senders = HashMap::new();
        let mut runners = Vec::new();
        for (kind, cfg) in [(QueueKind::Quick, quick), (QueueKind::Long, long)] {
            let (tx, rx) = unbounded::<(u64, JobSpec)>();
            senders.insert(kind, tx);
            for _ in 0..cfg.concurrency.max(1) {
                let rx = rx.clone();
                let shared = shared.clone();
                let staging = staging.clone();
                runners.push(thread::spawn(move || {
                    for (id, spec) in rx {
                        run_one(&shared, &staging, cfg.timeout, id, spec);
                    }
                }));
            }
        }
        Self {
            shared,
            staging,
            senders,
            runners,
            next_id: Mutex::new(first_id),
        }
    }

    pub fn staging(&self) -> &StagingRegistry<MatchRow> {
        &self.staging
    }

    pub fn submit(&self, spec: JobSpec, queue: QueueKind) -> u64 {
        let id = {
            let mut next = self.next_id.lock().unwrap_or_else(|e| e.into_inner());
            let id = *next;
            *next += 1;
            id
        };
        self.shared.lock().insert(
            id,
            Entry {
                queue,
                state: JobState::Queued,
                control: Arc::new(JobControl::new()),
                outcome: None,
            },
        );
        log_state(id, JobState::Queued);
        self.senders[&queue].send((id, spec)).expect("queue runners outlive the queue");
        id
    }

    pub fn status(&self, id: u64) -> Result<JobState, QueueError> {
        self.shared.lock().get(&id).map(|e| e.state).ok_or(QueueError::UnknownJob(id))
    }

    pub fn queue_of(&self, id: u64) -> Result<QueueKind, QueueError> {
        self.shared.lock().get(&id).map(|e| e.queue).ok_or(QueueError::UnknownJob(id))
    }

    /// Queued jobs are cancelled at once; running ones pass through
    /// `Suspending` until their branches stop. Terminal jobs are left alone.
    pub fn cancel(&self, id: u64) -> Result<JobState, QueueError> {
        let mut jobs = self.shared.lock();
        let entry = jobs.get_mut(&id).ok_or(QueueError::UnknownJob(id))?;
        entry.control.cancel();
        let next = match entry.state {
            JobState::Queued => {
                entry.outcome = Some(Err(JobError::Cancelled));
                JobState::Cancelled
            }
            JobState::Running => JobState::Suspending,
            s => return Ok(s),
        };
        set_state(&mut jobs, id, next);
        self.shared.changed.notify_all();
        Ok(next)
    }

    /// Blocks until the job reaches a terminal state and takes its outcome.
    pub fn wait(&self, id: u64) -> Result<Result<ResultTable, JobError>, QueueError> {
        let mut jobs = self.shared.lock();
        loop {
            let entry = jobs.get_mut(&id).ok_or(QueueError::UnknownJob(id))?;
            if entry.state.is_terminal() {
                if let Some(outcome) = entry.outcome.take() {
                    return Ok(outcome);
                }
            }
            jobs = self.shared.changed.wait(jobs).unwrap_or_else(|e| e.into_inner());
        }
    }
}

impl Drop for JobQueues {
    fn drop(&mut self) {
        for e in self.shared.lock().values() {
            e.control.cancel();
        }
        self.senders.clear();
        for r in self.runners.drain(..) {
            let _ = r.join();
        }
    }
}

fn run_one(shared: &Shared, staging: &StagingRegistry<MatchRow>, timeout: Option<Duration>, id: u64, spec: JobSpec) {
    let control = {
        let mut jobs = shared.lock();
        match jobs.get(&id) {
            Some(e) if e.state == JobState::Queued => {}
            _ => return,
        }
        set_state(&mut jobs, id, JobState::Running);
        shared.changed.notify_all();
        jobs[&id].control.clone()
    };
    let opts = ExecOptions {
        job_id: id,
        timeout,
        ..spec.options
    };
    let outcome = run_job(&spec.query, &spec.plan, staging, &opts, &control);
    let state = match &outcome {
        Ok(_) => JobState::Completed,
        Err(JobError::Cancelled) => JobState::Cancelled,
        Err(_) => JobState::Failed,
    };
    let mut jobs = shared.lock();
    if let Some(e) = jobs.get_mut(&id) {
        e.outcome = Some(outcome);
    }
    set_state(&mut jobs, id, state);
    shared.changed.notify_all();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{compile, gather_stats};
    use crate::query::{parse_query, resolve};
    use crate::store::CatalogRegistry;
    use crate::synthetic::{generate, SurveyConfig};

    const QUERY1: &str = include_str!("../tests/data/queries/query1.sql");

    fn spec(fault: Option<crate::executor::FaultHook>) -> JobSpec {
        let s = generate(&SurveyConfig { rows: 300, ..Default::default() });
        let mut reg = CatalogRegistry::new();
        reg.register(s.sdss);
        reg.register(s.galex);
        reg.register(s.twomass);
        let rq = resolve(&parse_query(QUERY1).unwrap(), &reg).unwrap();
        let plan = compile(&rq, gather_stats(&rq, &[]), 4).unwrap();
        JobSpec {
            query: Arc::new(rq),
            plan: Arc::new(plan),
            options: ExecOptions { workers: 2, fault, ..Default::default() },
        }
    }

    fn queues() -> JobQueues {
        let cfg = QueueConfig { timeout: None, concurrency: 1 };
        JobQueues::new(cfg, cfg)
    }

    /// A fault hook that parks branch 0 until `gate` opens.
    fn gate() -> (Arc<(Mutex<bool>, Condvar)>, crate::executor::FaultHook) {
        let gate = Arc::new((Mutex::new(false), Condvar::new()));
        let g = gate.clone();
        let hook: crate::executor::FaultHook = Arc::new(move |partition, stage, _| {
            if partition == 0 && stage == 0 {
                let (lock, cv) = &*g;
                let mut open = lock.lock().unwrap();
                while !*open {
                    open = cv.wait(open).unwrap();
                }
            }
            false
        });
        (gate, hook)
    }

    fn open(gate: &(Mutex<bool>, Condvar)) {
        *gate.0.lock().unwrap() = true;
        gate.1.notify_all();
    }

    #[test]
    fn quick_jobs_finish_in_submission_order() {
        let q = queues();
        let (g, hook) = gate();
        let first = q.submit(spec(Some(hook)), QueueKind::Quick);
        let second = q.submit(spec(None), QueueKind::Quick);
        thread::sleep(Duration::from_millis(50));
        assert_eq!(q.status(first), Ok(JobState::Running));
        assert_eq!(q.status(second), Ok(JobState::Queued));
        open(&g);
        assert!(q.wait(first).unwrap().is_ok());
        assert!(q.wait(second).unwrap().is_ok());
        assert_eq!(q.status(second), Ok(JobState::Completed));
        assert!(q.staging().is_empty());
    }

    #[test]
    fn cancelled_queued_job_never_runs() {
        let q = queues();
        let (g, hook) = gate();
        let first = q.submit(spec(Some(hook)), QueueKind::Long);
        let ran = Arc::new(Mutex::new(false));
        let r = ran.clone();
        let mut second = spec(None);
        second.options.fault = Some(Arc::new(move |_, _, _| {
            *r.lock().unwrap() = true;
            false
        }));
        let second = q.submit(second, QueueKind::Long);
        assert_eq!(q.cancel(second), Ok(JobState::Cancelled));
        open(&g);
        assert!(q.wait(first).unwrap().is_ok());
        assert!(matches!(q.wait(second).unwrap(), Err(JobError::Cancelled)));
        thread::sleep(Duration::from_millis(20));
        assert!(!*ran.lock().unwrap());
        assert_eq!(q.status(second), Ok(JobState::Cancelled));
    }

    #[test]
    fn cancelling_a_running_job_cleans_up() {
        let q = queues();
        let (g, hook) = gate();
        let id = q.submit(spec(Some(hook)), QueueKind::Quick);
        while q.status(id) != Ok(JobState::Running) {
            thread::sleep(Duration::from_millis(5));
        }
        assert_eq!(q.cancel(id), Ok(JobState::Suspending));
        open(&g);
        assert!(matches!(q.wait(id).unwrap(), Err(JobError::Cancelled)));
        assert_eq!(q.status(id), Ok(JobState::Cancelled));
        assert!(q.staging().is_empty());
        assert_eq!(q.cancel(99), Err(QueueError::UnknownJob(99)));
        assert_eq!(q.status(99), Err(QueueError::UnknownJob(99)));
    }

    #[test]
    fn quick_timeout_fails_the_job() {
        let q = JobQueues::new(
            QueueConfig { timeout: Some(Duration::from_millis(30)), concurrency: 1 },
            QueueConfig { timeout: None, concurrency: 1 },
        );
        let (g, hook) = gate();
        let id = q.submit(spec(Some(hook)), QueueKind::Quick);
        thread::sleep(Duration::from_millis(100));
        open(&g);
        assert!(matches!(q.wait(id).unwrap(), Err(JobError::TimedOut(_))));
        assert_eq!(q.status(id), Ok(JobState::Failed));
        assert!(q.staging().is_empty());
    }
}
