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

//! The cross-match query language: lexing, parsing and name resolution.

pub mod ast;
pub mod bound;
pub mod lexer;
pub mod parser;
pub mod resolve;

pub use ast::Query;
pub use parser::{parse_query, ParseError};
pub use resolve::{resolve, ResolveError, ResolvedQuery};
