//! Forecaster ranking for crowd forecast aggregation.
//!
//! Questions and forecasts are ingested ([`corpus`]), question text is mapped
//! to topic proportions ([`topics`]), a shared-weight siamese comparator
//! judges pairs of forecasts ([`ranker`]), the verdicts form a weighted
//! tournament ordered by INCR-INDEG ([`tournament`]), and the top percentile
//! of the ranking forms the crowd that gets scored ([`aggregate`]).
//! [`synth`] produces seeded data with known skills and [`pipeline`] wires
//! everything behind the `crowdrank` CLI.

pub mod aggregate;
pub mod corpus;
mod error;
pub mod pipeline;
pub mod ranker;
pub mod synth;
pub mod topics;
pub mod tournament;

pub use error::{Error, Result};
