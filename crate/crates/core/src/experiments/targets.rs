use crate::landmark_io::{AuState, LabelTable};
use crate::metrics::class_index;
use crate::neuralnet::{Targets, Variant};

/// Per-frame training targets, flattened `[frame * au]`.
///
/// Binary: Present is 1, Absent 0, Unknown masked out. Three-class: the class
/// index of the state (absent 0, unknown 1, present 2), never masked.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodedTargets {
    Binary { au_count: usize, y: Vec<u8>, mask: Vec<bool> },
    ThreeClass { au_count: usize, class: Vec<u8> },
}

pub fn encode_labels(table: &LabelTable, variant: Variant) -> EncodedTargets {
    let rows: Vec<&[AuState]> = table.rows().iter().map(|r| r.states.as_slice()).collect();
    encode_states(&rows, table.au_ids().len(), variant)
}

pub fn encode_states(rows: &[&[AuState]], au_count: usize, variant: Variant) -> EncodedTargets {
    let flat = rows.iter().flat_map(|r| r.iter().copied());
    match variant {
        Variant::Binary => {
            let (y, mask) = flat.map(|s| ((s == AuState::Present) as u8, s != AuState::Unknown)).unzip();
            EncodedTargets::Binary { au_count, y, mask }
        }
        Variant::ThreeClass => {
            EncodedTargets::ThreeClass { au_count, class: flat.map(|s| class_index(s) as u8).collect() }
        }
    }
}

impl EncodedTargets {
    pub fn au_count(&self) -> usize {
        match self {
            EncodedTargets::Binary { au_count, .. } | EncodedTargets::ThreeClass { au_count, .. } => *au_count,
        }
    }

    pub fn frames(&self) -> usize {
        let n = match self {
            EncodedTargets::Binary { y, .. } => y.len(),
            EncodedTargets::ThreeClass { class, .. } => class.len(),
        };
        n / self.au_count().max(1)
    }

    /// Loss targets for the frames at `idx`, in that order.
    pub fn batch(&self, idx: &[usize]) -> Targets {
        let a = self.au_count();
        match self {
            EncodedTargets::Binary { y, mask, .. } => Targets::Binary {
                y: idx.iter().flat_map(|&i| y[i * a..(i + 1) * a].iter().copied()).collect(),
                mask: idx.iter().flat_map(|&i| mask[i * a..(i + 1) * a].iter().copied()).collect(),
            },
            EncodedTargets::ThreeClass { class, .. } => Targets::ThreeClass {
                class: idx.iter().flat_map(|&i| class[i * a..(i + 1) * a].iter().copied()).collect(),
            },
        }
    }
}
