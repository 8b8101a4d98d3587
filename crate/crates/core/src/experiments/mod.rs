//! Fold planning, label encoding, balancing, training and evaluation drivers.

pub mod balance;
pub mod config;
pub mod folds;
pub mod run;
pub mod targets;
pub mod train;

use std::sync::Mutex;

use thiserror::Error;

use crate::landmark_io::DatasetError;
use crate::neuralnet::NetError;
use crate::voxelizer::VoxelError;

pub use balance::{balance_weights, undersample, BalanceMode};
pub use config::{DescriptorOverrides, ExperimentConfig, FoldScores};
pub use folds::{make_folds, FoldPlan};
pub use run::{
    au_intersection, cross_dataset_report, cv_report, eval_report, evaluate, fold_seed, prepare, provenance,
    run_cross_dataset, run_cv, train_full, CrossDatasetResult, CvResult, FoldResult, Prepared, Scores,
};
pub use targets::{encode_labels, EncodedTargets};
pub use train::{predict_probs, train, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("{subjects} subjects cannot fill {k} folds")]
    TooFewSubjects { subjects: usize, k: usize },
    #[error("train and test datasets share no AU")]
    EmptyAuIntersection,
    #[error("fold {fold}: no training frames")]
    NoTrainingFrames { fold: usize },
    #[error("frame {frame_id}: {source}")]
    Frame { frame_id: String, source: VoxelError },
    #[error("{context}: {source}")]
    Net { context: String, source: NetError },
    #[error("fold {fold}: training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { fold: usize, epoch: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
}

/// Hooks into training and evaluation. Methods take `&self` because folds may
/// run on several threads; `fold` is 0-based (`usize::MAX` for a full-data run).
pub trait Observer: Sync {
    fn fold_started(&self, _fold: usize, _folds: usize) {}
    /// Frame ids of one optimizer batch.
    fn batch(&self, _fold: usize, _frame_ids: &[&str]) {}
    fn epoch(&self, _fold: usize, _epoch: usize, _loss: f64) {}
    /// Frame ids evaluated and their output probabilities (one flat vector per frame).
    fn evaluated(&self, _fold: usize, _frame_ids: &[&str], _probs: &[Vec<f64>]) {}
}

pub struct NoopObserver;

impl Observer for NoopObserver {}

/// Writes `epoch,loss` lines to standard error, with a `# fold i/k` comment
/// line before each fold.
pub struct ProgressObserver;

impl Observer for ProgressObserver {
    fn fold_started(&self, fold: usize, folds: usize) {
        if fold != usize::MAX {
            eprintln!("# fold {}/{}", fold + 1, folds);
        }
    }

    fn epoch(&self, _fold: usize, epoch: usize, loss: f64) {
        eprintln!("{epoch},{loss}");
    }
}

/// Fold, frame ids and probabilities of one evaluation call.
pub type Evaluation = (usize, Vec<String>, Vec<Vec<f64>>);

/// Keeps everything it is told, for tests and audits.
#[derive(Default)]
pub struct Recorder {
    pub batches: Mutex<Vec<(usize, Vec<String>)>>,
    pub epochs: Mutex<Vec<(usize, usize, f64)>>,
    pub evaluated: Mutex<Vec<Evaluation>>,
}

impl Observer for Recorder {
    fn batch(&self, fold: usize, frame_ids: &[&str]) {
        let ids = frame_ids.iter().map(|s| s.to_string()).collect();
        self.batches.lock().unwrap().push((fold, ids));
    }

    fn epoch(&self, fold: usize, epoch: usize, loss: f64) {
        self.epochs.lock().unwrap().push((fold, epoch, loss));
    }

    fn evaluated(&self, fold: usize, frame_ids: &[&str], probs: &[Vec<f64>]) {
        let ids = frame_ids.iter().map(|s| s.to_string()).collect();
        self.evaluated.lock().unwrap().push((fold, ids, probs.to_vec()));
    }
}
