pub mod entropyflow;
pub mod error;
pub mod fields;
pub mod heatflow;
pub mod hopflax;
pub mod linalg;
pub mod space;
pub mod transport;

pub use error::{Error, Result};
