//! Similarity search over 2D LiDAR scan logs.

pub mod engine;
pub mod eval;
pub mod inference;
pub mod query;
pub mod scan;
pub mod store;
mod util;
