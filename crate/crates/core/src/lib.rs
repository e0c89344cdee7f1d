pub mod asympt;
pub mod bvp;
pub mod companion;
pub mod error;
pub mod exprparse;
pub mod frame;
pub mod gridfn;
pub mod linalg;
pub mod selftest;
pub mod testkit;

pub use error::{Error, Result};
