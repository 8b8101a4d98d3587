use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::{ExperimentConfig, FoldScores};
use super::folds::make_folds;
use super::targets::{encode_states, EncodedTargets};
use super::train::{predict_probs, train, TrainConfig, TrainOutcome};
use super::{ExperimentError, Observer};
use crate::landmark_io::{AuId, AuState, Dataset};
use crate::metrics::{BinaryAccumulator, MetricsReport, ThreeClassAccumulator};
use crate::neuralnet::{Network, Variant};
use crate::rng::derive_seed;
use crate::voxelizer::{encode_frame, VoxelGrid};

/// Frames encoded at one grid size with labels restricted to `au_ids`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub frame_ids: Vec<String>,
    pub subjects: Vec<String>,
    pub grids: Vec<VoxelGrid>,
    pub au_ids: Vec<AuId>,
    /// Per frame, ordered like `au_ids`.
    pub states: Vec<Vec<AuState>>,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }

    pub fn targets(&self, variant: Variant) -> EncodedTargets {
        let rows: Vec<&[AuState]> = self.states.iter().map(|r| r.as_slice()).collect();
        encode_states(&rows, self.au_ids.len(), variant)
    }
}

/// Voxelize every frame and pick the label columns for `aus`.
pub fn prepare(dataset: &Dataset, aus: &[AuId], c: usize) -> Result<Prepared, ExperimentError> {
    let cols = aus
        .iter()
        .map(|au| {
            dataset.labels.au_position(au).ok_or_else(|| ExperimentError::InvalidConfig(format!("dataset has no {au}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let grids = dataset
        .frames
        .par_iter()
        .map(|f| {
            encode_frame(&f.points, c)
                .map_err(|source| ExperimentError::Frame { frame_id: f.frame_id.clone(), source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let states = dataset
        .frames
        .iter()
        .map(|f| {
            let row = dataset.labels.get(&f.frame_id).ok_or_else(|| {
                ExperimentError::InvalidConfig(format!("frame {} has no label row", f.frame_id))
            })?;
            Ok(cols.iter().map(|&j| row.states[j]).collect())
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(Prepared {
        frame_ids: dataset.frames.iter().map(|f| f.frame_id.clone()).collect(),
        subjects: dataset.frames.iter().map(|f| f.subject_id.clone()).collect(),
        grids,
        au_ids: aus.to_vec(),
        states,
    })
}

/// Confusion counts for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Scores {
    Binary(BinaryAccumulator),
    ThreeClass(ThreeClassAccumulator),
}

impl Scores {
    pub fn new(variant: Variant, au_count: usize, threshold: f64) -> Self {
        match variant {
            Variant::Binary => Scores::Binary(BinaryAccumulator::new(au_count, threshold)),
            Variant::ThreeClass => Scores::ThreeClass(ThreeClassAccumulator::new(au_count)),
        }
    }

    pub fn add_frame(&mut self, probs: &[f64], labels: &[AuState]) {
        match self {
            Scores::Binary(a) => a.add_frame(probs, labels),
            Scores::ThreeClass(a) => a.add_frame(probs, labels),
        }
    }

    pub fn merge(&mut self, other: &Scores) {
        match (self, other) {
            (Scores::Binary(a), Scores::Binary(b)) => a.merge(b),
            (Scores::ThreeClass(a), Scores::ThreeClass(b)) => a.merge(b),
            _ => panic!("merging scores of different variants"),
        }
    }

    /// Per-AU F1 columns: `[f1]` for binary, `[macro, micro]` for three-class.
    pub fn columns(&self) -> Vec<Vec<f64>> {
        match self {
            Scores::Binary(a) => vec![a.f1()],
            Scores::ThreeClass(a) => vec![a.macro_f1(), a.micro_f1()],
        }
    }
}

/// Score `net` on every frame of `data`.
pub fn evaluate(
    net: &Network<f32>,
    data: &Prepared,
    threshold: f64,
    batch_size: usize,
    fold: usize,
    observer: &dyn Observer,
) -> Result<Scores, ExperimentError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    evaluate_subset(net, data, &idx, threshold, batch_size, fold, observer)
}

fn evaluate_subset(
    net: &Network<f32>,
    data: &Prepared,
    idx: &[usize],
    threshold: f64,
    batch_size: usize,
    fold: usize,
    observer: &dyn Observer,
) -> Result<Scores, ExperimentError> {
    let d = net.descriptor();
    if d.au_count != data.au_ids.len() {
        return Err(ExperimentError::InvalidConfig(format!(
            "network predicts {} AUs, data has {}",
            d.au_count,
            data.au_ids.len()
        )));
    }
    let probs = predict_probs(net, &data.grids, idx, batch_size)
        .map_err(|source| ExperimentError::Net { context: format!("fold {fold}: evaluation"), source })?;
    let ids: Vec<&str> = idx.iter().map(|&i| data.frame_ids[i].as_str()).collect();
    observer.evaluated(fold, &ids, &probs);
    let mut scores = Scores::new(d.variant, d.au_count, threshold);
    for (&i, p) in idx.iter().zip(&probs) {
        scores.add_frame(p, &data.states[i]);
    }
    Ok(scores)
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub train_frames: usize,
    pub test_frames: usize,
    pub scores: Scores,
    pub epoch_losses: Vec<f64>,
    /// AU positions trained without any positive frame.
    pub flagged: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub k: usize,
    pub variant: Variant,
    pub au_ids: Vec<AuId>,
    pub folds: Vec<FoldResult>,
    /// Sum of the per-fold counts.
    pub pooled: Scores,
}

impl CvResult {
    /// Per-AU F1 columns under the chosen fold aggregation.
    pub fn columns(&self, mode: FoldScores) -> Vec<Vec<f64>> {
        match mode {
            FoldScores::Pooled => self.pooled.columns(),
            FoldScores::PerFoldMean => mean_columns(self.folds.iter().map(|f| f.scores.columns())),
        }
    }
}

fn mean_columns(per_fold: impl Iterator<Item = Vec<Vec<f64>>>) -> Vec<Vec<f64>> {
    let mut sum: Vec<Vec<f64>> = Vec::new();
    let mut n = 0.0;
    for cols in per_fold {
        if sum.is_empty() {
            sum = cols;
        } else {
            for (s, c) in sum.iter_mut().zip(&cols) {
                for (a, b) in s.iter_mut().zip(c) {
                    *a += b;
                }
            }
        }
        n += 1.0;
    }
    for s in &mut sum {
        for a in s.iter_mut() {
            *a /= n;
        }
    }
    sum
}

fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig { epochs: cfg.epochs, batch_size: cfg.batch_size, seed, balance: cfg.balance, adam: cfg.adam }
}

/// Training seed of fold `fold` in a `k`-fold run.
pub fn fold_seed(seed: u64, k: usize, fold: usize) -> u64 {
    derive_seed(derive_seed(seed, k as u64), fold as u64)
}

fn map_folds<R: Send>(
    parallel: bool,
    k: usize,
    f: impl Fn(usize) -> Result<R, ExperimentError> + Sync + Send,
) -> Result<Vec<R>, ExperimentError> {
    if parallel {
        (0..k).into_par_iter().map(f).collect()
    } else {
        (0..k).map(f).collect()
    }
}

/// Subject-disjoint `k`-fold cross-validation on one dataset.
pub fn run_cv(
    cfg: &ExperimentConfig,
    data: &Prepared,
    k: usize,
    observer: &dyn Observer,
) -> Result<CvResult, ExperimentError> {
    cfg.validate()?;
    let plan = make_folds(&data.subjects, k, cfg.seed)?;
    let targets = data.targets(cfg.variant);
    let desc = cfg.descriptor(data.au_ids.len());
    let folds = map_folds(cfg.parallel, k, |fold| {
        observer.fold_started(fold, k);
        let (train_idx, test_idx) = plan.split(&data.subjects, fold);
        let tc = train_config(cfg, fold_seed(cfg.seed, k, fold));
        let out = train(&desc, &data.grids, &data.frame_ids, &targets, &train_idx, &tc, fold, observer)?;
        let scores =
            evaluate_subset(&out.network, data, &test_idx, cfg.threshold, cfg.batch_size, fold, observer)?;
        Ok(FoldResult {
            fold,
            train_frames: train_idx.len(),
            test_frames: test_idx.len(),
            scores,
            epoch_losses: out.epoch_losses,
            flagged: out.flagged,
        })
    })?;
    let mut pooled = Scores::new(cfg.variant, data.au_ids.len(), cfg.threshold);
    for f in &folds {
        pooled.merge(&f.scores);
    }
    Ok(CvResult { k, variant: cfg.variant, au_ids: data.au_ids.clone(), folds, pooled })
}

#[derive(Debug, Clone)]
pub struct CrossDatasetResult {
    pub k: usize,
    pub variant: Variant,
    pub au_ids: Vec<AuId>,
    /// One entry per fold model, each scored on the whole test set.
    pub folds: Vec<FoldResult>,
}

impl CrossDatasetResult {
    /// Per-AU F1 averaged over the fold models.
    pub fn columns(&self) -> Vec<Vec<f64>> {
        mean_columns(self.folds.iter().map(|f| f.scores.columns()))
    }
}

/// AUs of `train` that `test` also labels, in `train` order.
pub fn au_intersection(train: &[AuId], test: &[AuId]) -> Vec<AuId> {
    train.iter().filter(|a| test.contains(a)).cloned().collect()
}

/// Train `k` fold models on `train_set` and score each on all of `test_set`.
pub fn run_cross_dataset(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    k: usize,
    observer: &dyn Observer,
) -> Result<CrossDatasetResult, ExperimentError> {
    cfg.validate()?;
    let aus = au_intersection(train_set.au_ids(), test_set.au_ids());
    if aus.is_empty() {
        return Err(ExperimentError::EmptyAuIntersection);
    }
    let train_data = prepare(train_set, &aus, cfg.c)?;
    let test_data = prepare(test_set, &aus, cfg.c)?;
    let plan = make_folds(&train_data.subjects, k, cfg.seed)?;
    let targets = train_data.targets(cfg.variant);
    let desc = cfg.descriptor(aus.len());
    let folds = map_folds(cfg.parallel, k, |fold| {
        observer.fold_started(fold, k);
        let (train_idx, _) = plan.split(&train_data.subjects, fold);
        let tc = train_config(cfg, fold_seed(cfg.seed, k, fold));
        let out =
            train(&desc, &train_data.grids, &train_data.frame_ids, &targets, &train_idx, &tc, fold, observer)?;
        let scores = evaluate(&out.network, &test_data, cfg.threshold, cfg.batch_size, fold, observer)?;
        Ok(FoldResult {
            fold,
            train_frames: train_idx.len(),
            test_frames: test_data.len(),
            scores,
            epoch_losses: out.epoch_losses,
            flagged: out.flagged,
        })
    })?;
    Ok(CrossDatasetResult { k, variant: cfg.variant, au_ids: aus, folds })
}

/// Train one model on every frame of `data`.
pub fn train_full(
    cfg: &ExperimentConfig,
    data: &Prepared,
    observer: &dyn Observer,
) -> Result<TrainOutcome, ExperimentError> {
    cfg.validate()?;
    let targets = data.targets(cfg.variant);
    let desc = cfg.descriptor(data.au_ids.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    observer.fold_started(usize::MAX, 1);
    train(&desc, &data.grids, &data.frame_ids, &targets, &idx, &train_config(cfg, cfg.seed), usize::MAX, observer)
}

/// Resolved config, tool version and aggregation modes for report headers.
pub fn provenance(cfg: &ExperimentConfig) -> Value {
    json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "mode": if cfg.parallel { "parallel" } else { "deterministic" },
        "fold_scores": cfg.fold_scores.name(),
        "micro_f1": "support-weighted mean of per-class F1",
        "config": cfg.to_json(),
    })
}

fn column_names(variant: Variant, suffix: &str) -> Vec<String> {
    match variant {
        Variant::Binary => vec![format!("f1{suffix}")],
        Variant::ThreeClass => vec![format!("f1_macro{suffix}"), format!("f1_micro{suffix}")],
    }
}

fn flag_notes(au_ids: &[AuId], k: usize, folds: &[FoldResult]) -> Vec<String> {
    let mut notes = Vec::new();
    for f in folds {
        for &a in &f.flagged {
            notes.push(format!(
                "{}: no positive training frames in fold {}/{k}; trained unweighted",
                au_ids[a],
                f.fold + 1
            ));
        }
    }
    notes
}

fn assemble(
    experiment: String,
    au_ids: &[AuId],
    columns: Vec<String>,
    values: Vec<Vec<f64>>,
    notes: Vec<String>,
    cfg: &ExperimentConfig,
) -> MetricsReport {
    let names: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let mut report = MetricsReport::new(experiment, &names);
    for (a, au) in au_ids.iter().enumerate() {
        report.push_row(au.short(), values.iter().map(|col| Some(col[a])).collect());
    }
    report.notes = notes;
    report.provenance = provenance(cfg);
    report
}

/// One report over several fold counts; binary columns read `f1_{k}fold`.
pub fn cv_report(cfg: &ExperimentConfig, results: &[CvResult]) -> MetricsReport {
    let au_ids = results.first().map(|r| r.au_ids.clone()).unwrap_or_default();
    let (mut columns, mut values, mut notes) = (Vec::new(), Vec::new(), Vec::new());
    for r in results {
        let suffix = match (r.variant, results.len()) {
            (Variant::ThreeClass, 1) => String::new(),
            _ => format!("_{}fold", r.k),
        };
        columns.extend(column_names(r.variant, &suffix));
        values.extend(r.columns(cfg.fold_scores));
        notes.extend(flag_notes(&r.au_ids, r.k, &r.folds));
    }
    let ks: Vec<String> = results.iter().map(|r| r.k.to_string()).collect();
    let experiment = format!("crossval {} k={} folds={}", cfg.variant.name(), ks.join(","), cfg.fold_scores.name());
    assemble(experiment, &au_ids, columns, values, notes, cfg)
}

/// One report over several fold counts; every column averages the fold models.
pub fn cross_dataset_report(cfg: &ExperimentConfig, results: &[CrossDatasetResult]) -> MetricsReport {
    let au_ids = results.first().map(|r| r.au_ids.clone()).unwrap_or_default();
    let (mut columns, mut values, mut notes) = (Vec::new(), Vec::new(), Vec::new());
    for r in results {
        let suffix = match (r.variant, results.len()) {
            (Variant::ThreeClass, 1) => String::new(),
            _ => format!("_{}fold", r.k),
        };
        columns.extend(column_names(r.variant, &suffix));
        values.extend(r.columns());
        notes.extend(flag_notes(&r.au_ids, r.k, &r.folds));
    }
    let ks: Vec<String> = results.iter().map(|r| r.k.to_string()).collect();
    let experiment = format!("crossdataset {} k={} folds=per_fold_mean", cfg.variant.name(), ks.join(","));
    assemble(experiment, &au_ids, columns, values, notes, cfg)
}

/// Report for a single evaluation of a trained model.
pub fn eval_report(cfg: &ExperimentConfig, au_ids: &[AuId], scores: &Scores) -> MetricsReport {
    let variant = match scores {
        Scores::Binary(_) => Variant::Binary,
        Scores::ThreeClass(_) => Variant::ThreeClass,
    };
    let experiment = format!("eval {}", variant.name());
    assemble(experiment, au_ids, column_names(variant, ""), scores.columns(), Vec::new(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::Recorder;
    use crate::landmark_io::LabelTable;
    use crate::synthgen::{generate, SynthSpec};

    fn small_cfg(variant: Variant) -> ExperimentConfig {
        ExperimentConfig {
            variant,
            epochs: 2,
            c: 12,
            batch_size: 16,
            descriptor: crate::experiments::DescriptorOverrides {
                conv: Some(vec![crate::neuralnet::ConvBlock { filters: 4, kernel: 3 }]),
                pool_after: Some(vec![0]),
                dense: Some(vec![8]),
            },
            ..Default::default()
        }
    }

    fn dataset(subjects: usize, seed: u64) -> Dataset {
        let mut spec = SynthSpec::bp4d(subjects, 6, 0.02, seed);
        spec.unknown_rate = 0.1;
        generate(&spec).unwrap()
    }

    #[test]
    fn cv_keeps_test_frames_out_of_training() {
        let ds = dataset(6, 1);
        let data = prepare(&ds, ds.au_ids(), 12).unwrap();
        for variant in [Variant::Binary, Variant::ThreeClass] {
            let rec = Recorder::default();
            let r = run_cv(&small_cfg(variant), &data, 3, &rec).unwrap();
            assert_eq!(r.folds.len(), 3);
            let evaluated = rec.evaluated.lock().unwrap();
            for (fold, ids, _) in evaluated.iter() {
                for (bf, batch) in rec.batches.lock().unwrap().iter() {
                    if bf == fold {
                        assert!(batch.iter().all(|b| !ids.contains(b)));
                    }
                }
                let test_subjects: Vec<&str> =
                    ids.iter().map(|id| data.subjects[data.frame_ids.iter().position(|f| f == id).unwrap()].as_str()).collect();
                for (bf, batch) in rec.batches.lock().unwrap().iter() {
                    if bf == fold {
                        for b in batch {
                            let s = &data.subjects[data.frame_ids.iter().position(|f| f == b).unwrap()];
                            assert!(!test_subjects.contains(&s.as_str()));
                        }
                    }
                }
            }
            let tested: usize = r.folds.iter().map(|f| f.test_frames).sum();
            assert_eq!(tested, data.len());
        }
    }

    #[test]
    fn pooled_counts_are_fold_sums() {
        let ds = dataset(6, 2);
        let data = prepare(&ds, ds.au_ids(), 12).unwrap();
        let r = run_cv(&small_cfg(Variant::Binary), &data, 3, &super::super::NoopObserver).unwrap();
        let (Scores::Binary(pooled), folds) = (&r.pooled, &r.folds) else { panic!() };
        for a in 0..data.au_ids.len() {
            let sum: crate::metrics::ConfusionCounts = folds
                .iter()
                .map(|f| match &f.scores {
                    Scores::Binary(b) => b.counts[a],
                    _ => unreachable!(),
                })
                .sum();
            assert_eq!(pooled.counts[a], sum);
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let ds = dataset(6, 3);
        let data = prepare(&ds, ds.au_ids(), 12).unwrap();
        let seq = run_cv(&small_cfg(Variant::Binary), &data, 3, &super::super::NoopObserver).unwrap();
        let cfg = ExperimentConfig { parallel: true, ..small_cfg(Variant::Binary) };
        let par = run_cv(&cfg, &data, 3, &super::super::NoopObserver).unwrap();
        assert_eq!(seq.pooled, par.pooled);
    }

    #[test]
    fn cross_dataset_intersects_aus() {
        let a = dataset(6, 4);
        let mut spec = SynthSpec::bp4d_plus(4, 5, 0.02, 5);
        spec.unknown_rate = 0.0;
        let b = generate(&spec).unwrap();
        let r = run_cross_dataset(&small_cfg(Variant::Binary), &a, &b, 3, &super::super::NoopObserver).unwrap();
        assert_eq!(r.au_ids.len(), 11);
        assert!(r.folds.iter().all(|f| f.test_frames == b.frames.len()));
        let report = cross_dataset_report(&small_cfg(Variant::Binary), &[r]);
        assert_eq!(report.rows.len(), 11);
        assert_eq!(report.columns, vec!["f1_3fold"]);
    }

    #[test]
    fn disjoint_aus_rejected() {
        let a = dataset(3, 6);
        let mut b = a.clone();
        b.labels = LabelTable::new(vec![AuId::from_number(99)]);
        let r = run_cross_dataset(&small_cfg(Variant::Binary), &a, &b, 3, &super::super::NoopObserver);
        assert!(matches!(r, Err(ExperimentError::EmptyAuIntersection)));
    }

    #[test]
    fn k_of_one_rejected() {
        let ds = dataset(3, 7);
        let data = prepare(&ds, ds.au_ids(), 12).unwrap();
        let r = run_cv(&small_cfg(Variant::Binary), &data, 1, &super::super::NoopObserver);
        assert!(matches!(r, Err(ExperimentError::TooFewFolds(1))));
    }

    #[test]
    fn report_layouts() {
        let ds = dataset(6, 8);
        let data = prepare(&ds, ds.au_ids(), 12).unwrap();
        let cfg = small_cfg(Variant::ThreeClass);
        let r = run_cv(&cfg, &data, 3, &super::super::NoopObserver).unwrap();
        let report = cv_report(&cfg, &[r]);
        assert_eq!(report.columns, vec!["f1_macro", "f1_micro"]);
        assert_eq!(report.rows[0].au, "1");
        assert_eq!(report.provenance["mode"], "deterministic");
        assert_eq!(report.provenance["config"]["epochs"], 2);
    }
}
