use serde::{Deserialize, Serialize};

use super::targets::EncodedTargets;
use crate::neuralnet::{LossWeights, THREE_CLASSES};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceMode {
    /// Per-AU class weights inside the loss.
    #[default]
    Weight,
    /// A greedily rebalanced random subset of the training frames each epoch.
    Undersample,
    None,
}

impl BalanceMode {
    pub fn name(self) -> &'static str {
        match self {
            BalanceMode::Weight => "weight",
            BalanceMode::Undersample => "undersample",
            BalanceMode::None => "none",
        }
    }
}

impl std::str::FromStr for BalanceMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weight" => Ok(BalanceMode::Weight),
            "undersample" => Ok(BalanceMode::Undersample),
            "none" => Ok(BalanceMode::None),
            other => Err(format!("unknown balance mode {other:?} (expected weight, undersample or none)")),
        }
    }
}

/// Per-AU class counts over `idx`: binary `[neg, pos]` of labeled entries,
/// three-class counts per class index.
fn class_counts(targets: &EncodedTargets, idx: &[usize]) -> Vec<[usize; THREE_CLASSES]> {
    let a = targets.au_count();
    let mut counts = vec![[0usize; THREE_CLASSES]; a];
    for &i in idx {
        for (j, c) in counts.iter_mut().enumerate() {
            match targets {
                EncodedTargets::Binary { y, mask, .. } => {
                    if mask[i * a + j] {
                        c[y[i * a + j] as usize] += 1;
                    }
                }
                EncodedTargets::ThreeClass { class, .. } => c[class[i * a + j] as usize] += 1,
            }
        }
    }
    counts
}

/// Loss weights from the training frames `idx`, plus the AUs with no positive
/// frame there (trained unweighted).
///
/// Binary: `w+ = n_neg / n_pos`, `w- = 1`. Three-class: inverse class
/// frequency scaled so the majority class weighs 1.
pub fn balance_weights(targets: &EncodedTargets, idx: &[usize]) -> (LossWeights, Vec<usize>) {
    let counts = class_counts(targets, idx);
    let mut no_pos = Vec::new();
    let weights = match targets {
        EncodedTargets::Binary { .. } => LossWeights::Binary(
            counts
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let (neg, pos) = (c[0], c[1]);
                    if pos == 0 {
                        no_pos.push(j);
                    }
                    if pos == 0 || neg == 0 {
                        [1.0, 1.0]
                    } else {
                        [1.0, neg as f64 / pos as f64]
                    }
                })
                .collect(),
        ),
        EncodedTargets::ThreeClass { .. } => LossWeights::ThreeClass(
            counts
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    if c[2] == 0 {
                        no_pos.push(j);
                        return [1.0; THREE_CLASSES];
                    }
                    let max = *c.iter().max().unwrap() as f64;
                    c.map(|n| if n == 0 { 1.0 } else { max / n as f64 })
                })
                .collect(),
        ),
    };
    (weights, no_pos)
}

/// Imbalance of one AU's counts: binary `|pos - neg|`, three-class
/// `sum_k |3 c_k - n|`.
fn imbalance(c: &[usize; THREE_CLASSES], binary: bool) -> i64 {
    if binary {
        (c[1] as i64 - c[0] as i64).abs()
    } else {
        let n: i64 = c.iter().map(|&v| v as i64).sum();
        c.iter().map(|&v| (3 * v as i64 - n).abs()).sum()
    }
}

/// Subset of `idx` with per-AU classes as even as the joint labels allow.
///
/// Frames are visited in a random order; a frame is dropped when that lowers
/// the summed imbalance over all AUs. Passes repeat until none is dropped.
pub fn undersample(targets: &EncodedTargets, idx: &[usize], rng: &mut Stream) -> Vec<usize> {
    let a = targets.au_count();
    let binary = matches!(targets, EncodedTargets::Binary { .. });
    let mut counts = class_counts(targets, idx);
    // per frame: the class index it adds to each AU, if any
    let frame_classes = |i: usize| -> Vec<Option<usize>> {
        (0..a)
            .map(|j| match targets {
                EncodedTargets::Binary { y, mask, .. } => mask[i * a + j].then_some(y[i * a + j] as usize),
                EncodedTargets::ThreeClass { class, .. } => Some(class[i * a + j] as usize),
            })
            .collect()
    };
    let mut order: Vec<usize> = idx.to_vec();
    rng.shuffle(&mut order);
    let mut keep = vec![true; order.len()];
    loop {
        let mut dropped = false;
        for (pos, &i) in order.iter().enumerate() {
            if !keep[pos] || keep.iter().filter(|&&k| k).count() <= 1 {
                continue;
            }
            let classes = frame_classes(i);
            let mut delta = 0i64;
            for (j, cls) in classes.iter().enumerate() {
                if let Some(k) = *cls {
                    let before = imbalance(&counts[j], binary);
                    let mut after_c = counts[j];
                    after_c[k] -= 1;
                    delta += imbalance(&after_c, binary) - before;
                }
            }
            if delta < 0 {
                keep[pos] = false;
                dropped = true;
                for (j, cls) in classes.iter().enumerate() {
                    if let Some(k) = *cls {
                        counts[j][k] -= 1;
                    }
                }
            }
        }
        if !dropped {
            break;
        }
    }
    let mut out: Vec<usize> = order.iter().zip(&keep).filter(|(_, &k)| k).map(|(&i, _)| i).collect();
    out.sort_unstable();
    out
}
