//! Harness for comparing development-set early stopping (DevSet) with
//! epoch counts tuned on development languages (DevLang) in low-resource
//! character transduction.

pub mod error;
pub mod config;
pub mod data;
pub mod models;
pub mod numkernel;
pub mod orchestrator;
pub mod report;
pub mod stopping;

pub use error::{Error, Result};
