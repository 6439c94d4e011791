//! Active-learning exploration of static 2-D scalar fields by an agent that
//! moves one grid cell per sample, with Gaussian-process and MC-dropout
//! neural-network oracles, science-blind baselines and campaign tooling.

pub mod bnn;
pub mod campaign;
pub mod domain;
pub mod experiment;
pub mod gp;
pub mod metrics;
pub mod results;
pub mod strategy;
