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


//! Run settings: a TOML file, overridden by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid setting {name}: {reason}")]
    Invalid { name: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partitions {
    Auto,
    Count(usize),
}

impl FromStr for Partitions {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Partitions::Auto);
        }
        s.parse::<usize>()
            .map(Partitions::Count)
            .map_err(|_| format!("expected \"auto\" or a positive integer, got {s:?}"))
    }
}

impl fmt::Display for Partitions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Partitions::Auto => f.write_str("auto"),
            Partitions::Count(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PartitionsField {
    Count(i64),
    Word(String),
}

/// Settings as written in the config file; every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    catalogs: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    workers: Option<i64>,
    partitions: Option<PartitionsField>,
    sample_rate: Option<f64>,
    seed: Option<u64>,
    quick_timeout: Option<f64>,
    long_timeout: Option<f64>,
    max_retries: Option<i64>,
}

/// Flag values; `None` keeps the file or default value.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub catalogs: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<i64>,
    pub partitions: Option<Partitions>,
    pub sample_rate: Option<f64>,
    pub seed: Option<u64>,
    pub quick_timeout: Option<f64>,
    pub long_timeout: Option<f64>,
    pub max_retries: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub catalogs: PathBuf,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub partitions: Partitions,
    pub sample_rate: f64,
    pub seed: u64,
    pub quick_timeout: Duration,
    pub long_timeout: Duration,
    pub max_retries: u32,
}

impl CliConfig {
    /// Reads `path` (if any), applies `flags` and validates the result.
    /// Relative paths in the file are taken from the file's directory.
    pub fn load(path: Option<&Path>, flags: &Overrides) -> Result<Self, ConfigError> {
        let (file, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                let file: ConfigFile = toml::from_str(&text).map_err(|source| ConfigError::Parse {
                    path: p.to_path_buf(),
                    source,
                })?;
                (file, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (ConfigFile::default(), PathBuf::new()),
        };
        let partitions = match (flags.partitions, file.partitions) {
            (Some(p), _) => p,
            (None, None) => Partitions::Auto,
            (None, Some(PartitionsField::Count(n))) => Partitions::Count(usize::try_from(n).unwrap_or(0)),
            (None, Some(PartitionsField::Word(w))) => w
                .parse()
                .map_err(|reason| ConfigError::Invalid { name: "partitions", reason })?,
        };
        let default_workers = std::thread::available_parallelism().map_or(1, |n| n.get()) as i64;
        let raw = Raw {
            catalogs: flags
                .catalogs
                .clone()
                .or_else(|| file.catalogs.map(|c| base.join(c)))
                .unwrap_or_else(|| PathBuf::from("catalogs.toml")),
            output_dir: flags
                .output_dir
                .clone()
                .or_else(|| file.output_dir.map(|o| base.join(o)))
                .unwrap_or_else(|| PathBuf::from("skyjoin-output")),
            workers: flags.workers.or(file.workers).unwrap_or(default_workers),
            partitions,
            sample_rate: flags.sample_rate.or(file.sample_rate).unwrap_or(1e-3),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            quick_timeout: flags.quick_timeout.or(file.quick_timeout).unwrap_or(60.0),
            long_timeout: flags.long_timeout.or(file.long_timeout).unwrap_or(86_400.0),
            max_retries: flags.max_retries.or(file.max_retries).unwrap_or(2),
        };
        raw.validate()
    }

    pub fn partition_count(&self) -> usize {
        match self.partitions {
            Partitions::Auto => skyjoin::planner::default_partitions(self.workers),
            Partitions::Count(n) => n,
        }
    }

    pub fn minis_dir(&self) -> PathBuf {
        self.output_dir.join("minis")
    }

    pub fn jobs_dir(&self) -> PathBuf {
        self.output_dir.join(".jobs")
    }
}

struct Raw {
    catalogs: PathBuf,
    output_dir: PathBuf,
    workers: i64,
    partitions: Partitions,
    sample_rate: f64,
    seed: u64,
    quick_timeout: f64,
    long_timeout: f64,
    max_retries: i64,
}

impl Raw {
    fn validate(self) -> Result<CliConfig, ConfigError> {
        fn invalid<T>(name: &'static str, reason: String) -> Result<T, ConfigError> {
            Err(ConfigError::Invalid { name, reason })
        }
        if self.workers < 1 {
            return invalid("workers", format!("must be at least 1, got {}", self.workers));
        }
        if self.partitions == Partitions::Count(0) {
            return invalid("partitions", "must be at least 1".into());
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return invalid("sample_rate", format!("must be in (0, 1], got {}", self.sample_rate));
        }
        let timeout = |name, secs: f64| {
            if secs.is_finite() && secs > 0.0 {
                Ok(Duration::from_secs_f64(secs))
            } else {
                Err(ConfigError::Invalid { name, reason: format!("must be a positive number of seconds, got {secs}") })
            }
        };
        let max_retries = u32::try_from(self.max_retries)
            .or_else(|_| invalid::<u32>("max_retries", format!("must be a non-negative integer, got {}", self.max_retries)))?;
        Ok(CliConfig {
            catalogs: self.catalogs,
            output_dir: self.output_dir,
            workers: self.workers as usize,
            partitions: self.partitions,
            sample_rate: self.sample_rate,
            seed: self.seed,
            quick_timeout: timeout("quick_timeout", self.quick_timeout)?,
            long_timeout: timeout("long_timeout", self.long_timeout)?,
            max_retries,
        })
    }
}
