//! Sample-efficient molecular lead optimization.
//!
//! The library models lead optimization as a multi-turn decision process over
//! SMILES-encoded molecules. A policy proposes structural edits, a set of
//! budgeted black-box property oracles scores the results, and training
//! combines a clipped trajectory-level surrogate with turn-level listwise
//! preference learning. Inference refines molecules with an elite-pool
//! evolutionary loop under a hard oracle budget.
//!
//! Module map:
//! - [`chemgraph`]: SMILES parsing, canonicalization, Morgan fingerprints,
//!   Tanimoto similarity.
//! - [`oracle`]: built-in property proxies, table-loaded oracles, and the
//!   budget ledger with canonical-SMILES caching.
//! - [`env`]: the multi-turn environment (reward computation, rollback,
//!   termination).
//! - [`policy`]: a differentiable linear-softmax edit policy over a discrete
//!   edit vocabulary, plus the text-policy adapter trait.
//! - [`pgpo`]: GAE advantages, clipped surrogate, preference pairs, Lambda
//!   weights, and the combined update.
//! - [`filter`]: two-stage trajectory filtering ahead of each update.
//! - [`evolve`]: elite-pool evolutionary inference with temperature
//!   scheduling and difficulty-weighted fitness.
//! - [`metrics`], [`ga`], [`config`], [`experiment`]: evaluation metrics, the
//!   random-mutation GA baseline, configuration, and experiment orchestration.

pub mod chemgraph;
pub mod config;
pub mod env;
pub mod evolve;
pub mod experiment;
pub mod filter;
pub mod ga;
pub mod metrics;
pub mod oracle;
pub mod par;
pub mod pgpo;
pub mod policy;
pub mod rng;
