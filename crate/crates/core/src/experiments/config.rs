use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::balance::BalanceMode;
use super::ExperimentError;
use crate::neuralnet::{AdamConfig, ArchitectureDescriptor, ConvBlock, Variant};

/// How per-fold confusion counts become one score per AU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldScores {
    /// Sum the counts over folds, then compute F1.
    #[default]
    Pooled,
    /// Compute F1 per fold, then average.
    PerFoldMean,
}

impl FoldScores {
    pub fn name(self) -> &'static str {
        match self {
            FoldScores::Pooled => "pooled",
            FoldScores::PerFoldMean => "per_fold_mean",
        }
    }
}

/// Layer settings that replace the defaults when present.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescriptorOverrides {
    pub conv: Option<Vec<ConvBlock>>,
    pub pool_after: Option<Vec<usize>>,
    pub dense: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub variant: Variant,
    /// Dataset for within-dataset runs, or the training side of a cross-dataset run.
    #[serde(alias = "manifest")]
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub folds: Vec<usize>,
    pub seed: u64,
    pub epochs: usize,
    pub balance: BalanceMode,
    pub c: usize,
    pub batch_size: usize,
    pub threshold: f64,
    pub descriptor: DescriptorOverrides,
    pub fold_scores: FoldScores,
    /// Train folds on several threads. Each fold still runs its own fixed
    /// reduction order, but the mode is reported.
    pub parallel: bool,
    pub adam: AdamConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variant: Variant::Binary,
            train_manifest: None,
            test_manifest: None,
            folds: vec![3],
            seed: 0,
            epochs: 250,
            balance: BalanceMode::Weight,
            c: 24,
            batch_size: 64,
            threshold: 0.5,
            descriptor: DescriptorOverrides::default(),
            fold_scores: FoldScores::Pooled,
            parallel: false,
            adam: AdamConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(raw: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(raw).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.c < 2 {
            return bad(format!("c must be at least 2, got {}", self.c));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} outside [0, 1]", self.threshold));
        }
        if self.folds.is_empty() {
            return bad("folds is empty".into());
        }
        if let Some(&k) = self.folds.iter().find(|&&k| k < 2) {
            return Err(ExperimentError::TooFewFolds(k));
        }
        self.descriptor(1).validate().map_err(|e| ExperimentError::InvalidConfig(e.to_string()))
    }

    pub fn descriptor(&self, au_count: usize) -> ArchitectureDescriptor {
        let mut d = ArchitectureDescriptor::default_for(self.variant);
        d.input_c = self.c;
        d.au_count = au_count;
        if let Some(conv) = &self.descriptor.conv {
            d.conv = conv.clone();
        }
        if let Some(p) = &self.descriptor.pool_after {
            d.pool_after = p.clone();
        }
        if let Some(dense) = &self.descriptor.dense {
            d.dense = dense.clone();
        }
        d
    }
}
