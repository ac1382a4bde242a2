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


//! Writes the synthetic SDSS/GALEX/TwoMASS bundle used by the CLI examples.
//!
//! Usage: `cargo run -p skyjoin-core --example synthetic_bundle -- [DIR] [ROWS] [SEED]`

use std::path::PathBuf;

use skyjoin::synthetic::{generate, write_bundle, SurveyConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/synthetic".into()));
    let mut cfg = SurveyConfig::default();
    if let Some(rows) = args.next() {
        cfg.rows = rows.parse().expect("ROWS must be an integer");
    }
    if let Some(seed) = args.next() {
        cfg.seed = seed.parse().expect("SEED must be an integer");
    }
    let survey = generate(&cfg);
    if let Err(e) = write_bundle(&survey, &cfg, &dir) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    println!("wrote {} rows per catalog to {}", cfg.rows, dir.display());
}
