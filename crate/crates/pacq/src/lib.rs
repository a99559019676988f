//! `pacq` executes a SQL subset over in-memory tables under PAC privacy.
//!
//! A query over tables linked to a designated privacy-unit (PU) table is
//! compiled into a plan whose aggregates maintain 64 per-world partial
//! results in a single pass. World membership of a row is encoded by the
//! bits of a balanced per-query hash of its PU key, and released cells are
//! noised with a Gaussian calibrated to the cross-world variance under a
//! Bayesian posterior over the secret world.
//!
//! The crate is organized around the engine's layers:
//!
//! * [`relcore`] — columnar relations and the scalar expression language
//! * [`catalog`] — privacy metadata (PU table, PAC keys/links) and query
//!   classification
//! * [`hashing`] — the balanced 64-bit world-membership hash
//! * [`worlds`] — world vectors, the noise mechanism, and the MIA bound
//! * [`aggregates`] — single-pass stochastic aggregate kernels and their
//!   optimization tiers
//! * [`planner`] — SQL parsing and the privacy rewrite
//! * [`engine`] — plan execution, the 64-fold reference oracle, and result
//!   diffing
//! * [`datagen`] — deterministic benchmark distributions and a mini
//!   customer/orders/lineitem schema
//!
//! The `examples/` directory contains one runnable example per capability;
//! the `pacq` binary is a thin command-line front end over the same API.

pub mod aggregates;
pub mod catalog;
pub mod cli;
pub mod datagen;
pub mod engine;
pub mod hashing;
pub mod planner;
pub mod relcore;
pub mod worlds;
