//! Screening prioritization for evidence synthesis.
//!
//! Records are ingested and cleaned by [`corpus`], scored by a retrainable
//! relevance model in [`classifier`], and queued for people by the active
//! learning loop in [`engine`] using the query strategies in [`sampling`].
//! [`metrics`] measures how much screening effort a run needed, and
//! [`simulator`] replays fully labeled corpora to compare strategies.

pub mod classifier;
pub mod corpus;
pub mod engine;
pub mod metrics;
pub mod sampling;
pub mod simulator;
