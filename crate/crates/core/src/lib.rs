//! Estimating out-of-distribution performance of a model ensemble from
//! unlabeled OOD predictions, using the linear relationship between ID and
//! OOD agreement in probit space.
//!
//! The pipeline is: load prediction logs ([`datamodel`]), compute performance
//! and pairwise agreement ([`metrics`]), fit lines in probit space
//! ([`probit`]), estimate OOD performance ([`aline`], [`baselines`]), and
//! assemble a report ([`report`]). [`synth`] generates ensembles with known
//! ground truth.

pub mod aline;
pub mod baselines;
pub mod cli;
pub mod datamodel;
pub mod metrics;
pub mod probit;
pub mod report;
pub mod synth;
