//! Facial action unit detection from 3D landmarks: voxel encoding, a small
//! CNN engine, F1 metrics, cross-validation drivers and synthetic datasets.

pub mod cli;
pub mod experiments;
pub mod landmark_io;
pub mod metrics;
pub mod neuralnet;
pub mod rng;
pub mod synthgen;
pub mod voxelizer;

use std::path::PathBuf;

use thiserror::Error;

use experiments::ExperimentError;
use landmark_io::DatasetError;
use neuralnet::NetError;
use synthgen::SynthError;

/// Any failure surfaced by the command-line tool, classified by exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{context}: {source}")]
    Net { context: String, source: NetError },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("gradient check failed: max relative error {max_rel_error:e} at {worst}")]
    GradCheck { max_rel_error: f64, worst: String },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl Error {
    pub fn exit_code(&self) -> i32 {
        let net = |e: &NetError| match e {
            NetError::NonFinite(_) => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        };
        match self {
            Error::Usage(_) => EXIT_USAGE,
            Error::Io { .. } | Error::Dataset(_) => EXIT_DATA,
            Error::Net { source, .. } => net(source),
            Error::Synth(SynthError::InvalidSpec(_)) => EXIT_USAGE,
            Error::Synth(SynthError::Io { .. }) => EXIT_DATA,
            Error::GradCheck { .. } => EXIT_NUMERICAL,
            Error::Experiment(e) => match e {
                ExperimentError::InvalidConfig(_) | ExperimentError::TooFewFolds(_) => EXIT_USAGE,
                ExperimentError::NonFiniteLoss { .. } => EXIT_NUMERICAL,
                ExperimentError::Net { source, .. } => net(source),
                _ => EXIT_DATA,
            },
        }
    }
}
