//! Nonparametric estimation of the proportion of a treatment effect on a
//! censored time-to-event outcome that is explained by surrogate information
//! available at a landmark time `t0`.
//!
//! The pipeline is: [`data`] ingestion and validation, [`censor`] weights for
//! inverse-probability-of-censoring estimators, [`kernel`] conditional
//! survival, point estimation in [`estimators`], perturbation-resampling
//! inference in [`inference`], and the Monte-Carlo harness in
//! [`simulation`].

pub mod censor;
pub mod config;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod kernel;
pub mod rng;
pub mod simulation;

pub use data::{Group, StudyData, SubjectRecord};
pub use error::{Error, Result};
