//! Near-perfect packings of bounded-degree tree families into cliques.
//!
//! The pipeline normalises a family (merging small trees, grouping by order,
//! padding with paths), slices each tree into balanced levels, embeds the
//! levels round by round with randomised partial homomorphisms into a
//! quasirandom remainder of the host, and finally relocates the leftover
//! vertices — roots, skips, collisions — into a reserved block with a greedy
//! repair sweep. Every claimed packing is checked by an independent validator
//! before it is reported.

pub mod bits;
pub mod combinat;
pub mod correction;
pub mod error;
pub mod graph;
pub mod limping;
pub mod nibble;
mod par;
pub mod pipeline;
pub mod tree;
pub mod validate;

pub use error::{CorrectionFailure, Error, Result};
