//! Scheduling and simulation for many LoRA fine-tuning jobs sharing one
//! frozen base model: token-capacity microbatch packing, adapter grouping,
//! pipeline schedules that respect cross-batch dependencies, and analytic
//! cost models.

pub mod cli;
pub mod costmodel;
pub mod error;
pub mod grouping;
pub mod packing;
pub mod pipesim;
pub mod schedule;
pub mod workload;

pub use error::Error;
