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


//! Job records persisted under `<output_dir>/.jobs`, so that `status` and
//! `cancel` can address a job run by another process.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: u64,
    pub queue: String,
    pub state: String,
    pub query: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct JobRegistry {
    dir: PathBuf,
}

impl JobRegistry {
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn record_path(&self, id: u64) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn cancel_path(&self, id: u64) -> PathBuf {
        self.dir.join(format!("{id}.cancel"))
    }

    /// Reserves the next free job id by creating its record.
    pub fn allocate(&self, queue: &str, query: &str) -> io::Result<JobRecord> {
        let mut id = self.ids()?.into_iter().max().unwrap_or(0) + 1;
        loop {
            let record = JobRecord {
                id,
                queue: queue.into(),
                state: "Queued".into(),
                query: query.into(),
                output: None,
                rows: None,
                error: None,
            };
            match fs::OpenOptions::new().write(true).create_new(true).open(self.record_path(id)) {
                Ok(file) => {
                    serde_json::to_writer_pretty(file, &record)?;
                    return Ok(record);
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => id += 1,
                Err(e) => return Err(e),
            }
        }
    }

    pub fn save(&self, record: &JobRecord) -> io::Result<()> {
        let tmp = self.dir.join(format!("{}.json.tmp", record.id));
        fs::write(&tmp, serde_json::to_string_pretty(record)?)?;
        fs::rename(tmp, self.record_path(record.id))
    }

    pub fn load(&self, id: u64) -> io::Result<Option<JobRecord>> {
        match fs::read_to_string(self.record_path(id)) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn ids(&self) -> io::Result<Vec<u64>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".json")).and_then(|n| n.parse().ok()) {
                ids.push(id);
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    pub fn request_cancel(&self, id: u64) -> io::Result<()> {
        fs::write(self.cancel_path(id), b"")
    }

    pub fn cancel_requested(&self, id: u64) -> bool {
        self.cancel_path(id).exists()
    }

    pub fn clear_cancel(&self, id: u64) {
        let _ = fs::remove_file(self.cancel_path(id));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_sequential_and_records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let reg = JobRegistry::open(dir.path()).unwrap();
        let a = reg.allocate("QUICK", "q1").unwrap();
        let mut b = reg.allocate("LONG", "q2").unwrap();
        assert_eq!((a.id, b.id), (1, 2));
        b.state = "Completed".into();
        b.rows = Some(4);
        reg.save(&b).unwrap();
        assert_eq!(reg.load(2).unwrap(), Some(b));
        assert_eq!(reg.load(3).unwrap(), None);
        assert_eq!(reg.ids().unwrap(), vec![1, 2]);
        assert!(!reg.cancel_requested(1));
        reg.request_cancel(1).unwrap();
        assert!(reg.cancel_requested(1));
        reg.clear_cancel(1);
        assert!(!reg.cancel_requested(1));
    }
}
