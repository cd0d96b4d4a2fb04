//! Dataset generation, experiment grids and reporting.

mod dataset;
mod grid;
mod report;

pub use dataset::{
    dataset_in_memory, generate_dataset, image_file_name, load_dataset, synthesize,
    DEFAULT_IMAGE_SIZE,
};
pub use grid::{
    read_records, record_writer, run_config, run_grid, save_finals, write_records, ConfigRun,
    ExperimentConfig, ExperimentRecord, Mode, RECORD_HEADER,
};
pub use report::{
    horizontal_speedup, summarize, verify, vertical_speedup, write_profile_dat, write_speedup_dat,
    write_summary, Speedup, SummaryRow, VerifyFailure,
};

use thiserror::Error;

use crate::attacks::AttackError;
use crate::client::ClientError;
use crate::codec::CodecError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}
