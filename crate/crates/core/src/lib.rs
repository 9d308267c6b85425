pub mod envs;
pub mod error;
pub mod evalreport;
pub mod learnedalgos;
pub mod metadistill;
pub mod metaes;
pub mod metallm;
pub mod numcore;
pub mod rltrain;
pub mod symdsl;

pub use error::{Error, Result};
