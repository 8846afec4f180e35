//! Experiment driver behind the command-line tool.

pub mod config;
pub mod decode;
pub mod experiments;
pub mod report;

pub use config::{Detector, ExperimentConfig};
pub use decode::{cmd_decode, DecodeRecord, ObservationFile};
pub use experiments::{cmd_ber, cmd_complexity, cmd_gen_data, cmd_train};
pub use report::{ComplexityRow, ResultRow};
