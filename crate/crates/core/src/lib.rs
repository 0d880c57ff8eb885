//! Bug-report driven test generation: prompt an LLM with a bug report,
//! extract and assemble the generated test, classify it by running it against
//! the buggy and fixed program, and analyse the outcomes.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod extract;
pub mod genclient;
pub mod harness;
pub mod ingest;
pub mod jsonl;
pub mod lexer;
pub mod model;
pub mod patchval;
pub mod sbfl;
