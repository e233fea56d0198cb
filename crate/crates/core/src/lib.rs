pub mod dgp;
pub mod error;
pub mod estimate;
pub mod glm;
pub mod infer;
pub mod ipw;
pub mod mc;
pub mod oracle;
pub mod panel;
pub mod select;
pub mod cli;

pub use error::{Error, Result};
