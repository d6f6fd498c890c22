//! Lower bounds on the minimum mean-square error of guessing a binary
//! attribute from data released through the additive Gaussian mechanism.

pub mod barron;
pub mod bounds;
pub mod error;
pub mod estimator;
pub mod mechanism;
pub mod rng;
pub mod scenario;
pub mod special;

pub use barron::BarronBoundReport;
pub use error::{Error, Result};
pub use mechanism::{apply_mechanism, MechanismConfig, PostProcessedLaw, PostProcessing, Target};
pub use scenario::{sample_raw, ConditionalLaw, SampleSet, Scenario, Side, SupportGeometry};
