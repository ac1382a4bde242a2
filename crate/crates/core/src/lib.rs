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

//! Parallel probabilistic cross-matching of astronomical catalogs.
//!
//! Queries are written in SQL extended with `XMATCH`, `HAVING LIMIT` and
//! `REGION` clauses. A query is parsed and resolved against registered
//! catalogs ([`query`]), planned from mini-catalog statistics
//! ([`planner`]), and executed as RA-partitioned branches on a worker pool
//! ([`executor`]). Candidate pairs come from declination zones
//! ([`geometry`]); matches are accepted on the Fisher-distribution Bayes
//! factor ([`bayes`]).

pub mod bayes;
pub mod executor;
pub mod geometry;
pub mod planner;
pub mod query;
pub mod queue;
pub mod store;
pub mod synthetic;
