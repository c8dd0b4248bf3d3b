pub mod config;
pub mod connection;
pub mod error;
pub mod extrap;
pub mod holonomy;
pub mod jacobians;
pub mod liealg;
pub mod loopgeom;
pub mod loopspace;
pub mod pcm;
pub mod quadrature;
pub mod report;
pub mod stats;
pub mod suite;

pub use config::RunConfig;
pub use error::{LabError, Result};
pub use report::{CheckReport, Status};
pub use suite::Command;
