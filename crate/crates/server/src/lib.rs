//! HTTP API and command-line front end over `qgen-core`.
//!
//! Both front ends route every request through [`ops`], so the same logical
//! input yields the same persisted records whichever path it came from.

pub mod api;
pub mod cli;
pub mod error;
pub mod ops;

pub use api::router;
pub use error::ApiError;
pub use ops::Context;
