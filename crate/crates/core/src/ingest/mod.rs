//! Loading and validating the tabular inputs, plus the map-tile cache.
//!
//! All three loaders are single-pass and order preserving. A row that fails
//! validation is dropped with a row-numbered diagnostic; more than 1% bad
//! rows fails the whole file.

mod records;
mod tiles;

pub use records::*;
pub use tiles::*;
