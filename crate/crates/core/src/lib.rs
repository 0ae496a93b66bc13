//! Continual learning with progressively stacked soft prompts.
//!
//! A frozen transformer encoder is adapted to a sequence of classification
//! tasks by learning one soft prompt per task. Each new prompt is prepended
//! in front of all earlier (frozen) prompts, so earlier tasks keep their
//! exact inputs and never forget, while later tasks can reuse what earlier
//! prompts encode.
//!
//! Everything runs on an in-crate reverse-mode autodiff engine
//! ([`numerics`]) and a small encoder ([`model`]) trained on synthetic
//! token-classification tasks ([`data`]).

pub mod analysis;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod persist;
pub mod pretrain;
pub mod progressive;
pub mod prompts;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
