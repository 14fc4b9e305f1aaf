//! Attributed community search with learnable query-prompt graphs.
//!
//! A query `(V_q, A_q)` selects prompt tokens, which are linked into a small
//! prompt graph and inserted into the data graph. A relation-typed GNN
//! encodes the merged graph and an inner-product decoder scores every node's
//! membership in the query's community. Tokens and encoder weights are
//! trained alternately. Large graphs are handled by partitioning into shards
//! and running on per-shard query-route subgraphs.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod partition;
pub mod prompt;
pub mod query;
pub mod scale;
pub mod trainer;

pub use error::{Error, Result};
