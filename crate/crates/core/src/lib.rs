pub mod bench;
pub mod data;
pub mod distributed;
pub mod error;
pub mod linalg;
mod parallel;
mod timer;
pub mod psvm;
pub mod smoothing;
pub mod svm;

pub use error::{Error, Result};
