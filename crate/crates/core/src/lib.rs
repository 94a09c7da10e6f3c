//! Robust contract design: improve tabular contracts to dominating linear
//! contracts with checkable certificates, and solve the homogeneous
//! bilateral, common-agency and team-production settings.

pub mod concavify;
pub mod envelope;
pub mod error;
pub mod geometry;
pub mod homogeneous;
pub mod lp;
pub mod model;
pub mod oracles;
pub mod selfcheck;
pub mod team;

pub use error::{Error, Result};
