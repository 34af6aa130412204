//! A content-addressed, multi-version software store.
//!
//! Packages live under `<root>/<digest>-<label>` where the digest covers the
//! recipe, the build helper, the system tag and the hash-names of every
//! dependency. Any number of versions coexist; nothing is ever overwritten.

pub mod builder;
pub mod cli;
pub mod closure;
pub mod envsynth;
pub mod error;
pub mod hashname;
pub mod isolation;
pub mod recipe;
pub mod store;

pub use error::{Error, Result};
pub use hashname::HashName;
