//! Group-bias estimation and mitigation for explicit-feedback recommenders.
//!
//! A user's log-bias is the log ratio of the geometric-mean rating they give to
//! advantaged items over the one they give to disadvantaged items. The crate
//! estimates it per user, rescales the disadvantaged ratings to remove it,
//! trains one of four rating predictors on the result and finally re-applies
//! each user's own bias to their personal recommendations.
//!
//! Module map:
//!
//! * [`dataset`]: rating data model, ingestion, activity filtering, splits.
//! * [`enrichment`]: ISBN to author to gender to group-label resolution.
//! * [`bias`]: geometric means, log-bias, debiasing, preference correction.
//! * [`synth`]: generative rating model with known ground truth.
//! * [`recommenders`]: UserKNN, ItemKNN, ALS and biased SGD matrix factorization.
//! * [`eval`]: accuracy and ranking metrics, bias aggregates, z-tests.
//! * [`experiment`]: end-to-end runs, run directories and reports.

// `!(x > 0.0)` is the idiom used to reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bias;
pub mod dataset;
pub mod enrichment;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod recommenders;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
