//! ECG biometrics: synthetic and on-disk ECG records, a learned R-peak
//! detector, heartbeat segmentation, a multiresolution CNN for closed-set
//! identification, and a Siamese head for identity verification.

pub mod artifact;
pub mod beats;
pub mod cli;
pub mod error;
pub mod identify;
pub mod report;
pub mod rpeak;
pub mod signal;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
