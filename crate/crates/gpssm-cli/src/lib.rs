//! Batch front-end for the reduced-rank GP state space model learner:
//! configuration, CSV ingestion, synthetic benchmark generators, and
//! experiment orchestration. The `gpssm` binary in this crate exposes the
//! `learn`, `bench1`, `bench2`, `eval`, and `forecast` subcommands.

pub mod config;
pub mod data;
pub mod gen;
pub mod run;
