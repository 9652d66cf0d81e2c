//! Self-evolving tool-learning data pipeline.

pub mod backend;
pub mod config;
pub mod consensus;
pub mod dataset_io;
pub mod eval_harness;
pub mod evolution;
pub mod extraction;
pub mod pool;
pub mod prompting;
pub mod seeding;
pub mod synth;
pub mod tool_schema;
pub mod validation;
