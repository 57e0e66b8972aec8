//! Continual-learning laboratory built around few-shot logit matching on a
//! small episodic memory, with distillation, iCaRL-style, EWC, LwF and naive
//! baselines for comparison.

pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod memory;
pub mod methods;
pub mod nn;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
