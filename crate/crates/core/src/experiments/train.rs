use super::balance::{balance_weights, undersample, BalanceMode};
use super::targets::EncodedTargets;
use super::{ExperimentError, Observer};
use crate::neuralnet::{AdamConfig, AdamState, ArchitectureDescriptor, Input, NetError, Network};
use crate::rng::{derive_seed, Stream};
use crate::voxelizer::VoxelGrid;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const UNDERSAMPLE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub balance: BalanceMode,
    pub adam: AdamConfig,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    /// Frame-weighted mean batch loss, one per epoch.
    pub epoch_losses: Vec<f64>,
    /// AU positions with no positive training frame; trained unweighted.
    pub flagged: Vec<usize>,
}

/// Train a fresh network on the frames at `train_idx`.
///
/// Balancing statistics come from `train_idx` only. `frame_ids` is used for
/// observer reporting and must align with `grids` and `targets`.
#[allow(clippy::too_many_arguments)]
pub fn train(
    descriptor: &ArchitectureDescriptor,
    grids: &[VoxelGrid],
    frame_ids: &[String],
    targets: &EncodedTargets,
    train_idx: &[usize],
    cfg: &TrainConfig,
    fold: usize,
    observer: &dyn Observer,
) -> Result<TrainOutcome, ExperimentError> {
    if train_idx.is_empty() {
        return Err(ExperimentError::NoTrainingFrames { fold });
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(ExperimentError::InvalidConfig("epochs and batch_size must be at least 1".into()));
    }
    let net_err = |context: String| move |source: NetError| ExperimentError::Net { context, source };

    let mut net = Network::<f32>::init(descriptor, derive_seed(cfg.seed, INIT_STREAM))
        .map_err(net_err(format!("fold {fold}: init")))?;
    let mut adam = AdamState::new(&net, cfg.adam);
    let mut shuffle = Stream::derived(cfg.seed, SHUFFLE_STREAM);
    let mut sampler = Stream::derived(cfg.seed, UNDERSAMPLE_STREAM);

    let (weights, flagged) = balance_weights(targets, train_idx);
    let weights = (cfg.balance == BalanceMode::Weight).then_some(weights);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order = match cfg.balance {
            BalanceMode::Undersample => undersample(targets, train_idx, &mut sampler),
            _ => train_idx.to_vec(),
        };
        shuffle.shuffle(&mut order);

        let (mut total, mut seen) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let ids: Vec<&str> = batch.iter().map(|&i| frame_ids[i].as_str()).collect();
            observer.batch(fold, &ids);
            let refs: Vec<&VoxelGrid> = batch.iter().map(|&i| &grids[i]).collect();
            let context = || format!("fold {fold}, epoch {epoch}, batch starting at frame {}", ids[0]);
            let (pred, cache) = match net.forward(&Input::Voxels(&refs)) {
                Ok(r) => r,
                Err(NetError::NonFinite(_)) => return Err(ExperimentError::NonFiniteLoss { fold, epoch }),
                Err(e) => return Err(net_err(context())(e)),
            };
            let out = crate::neuralnet::loss(&pred, &targets.batch(batch), weights.as_ref())
                .map_err(net_err(context()))?;
            if !out.loss.is_finite() {
                return Err(ExperimentError::NonFiniteLoss { fold, epoch });
            }
            let grads = net.backward(&cache, &out.logit_grad).map_err(net_err(context()))?;
            adam.step(&mut net, &grads).map_err(net_err(context()))?;
            total += out.loss * batch.len() as f64;
            seen += batch.len();
        }
        let mean = total / seen as f64;
        if !mean.is_finite() {
            return Err(ExperimentError::NonFiniteLoss { fold, epoch });
        }
        observer.epoch(fold, epoch, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { network: net, epoch_losses, flagged })
}

/// Output probabilities for the frames at `idx`, one flat vector per frame
/// (`[au]` for binary, `[au * 3]` for three-class).
pub fn predict_probs(
    net: &Network<f32>,
    grids: &[VoxelGrid],
    idx: &[usize],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>, NetError> {
    let mut out = Vec::with_capacity(idx.len());
    for batch in idx.chunks(batch_size.max(1)) {
        let refs: Vec<&VoxelGrid> = batch.iter().map(|&i| &grids[i]).collect();
        let pred = net.predict(&Input::Voxels(&refs))?;
        let per = pred.probs.data().len() / batch.len();
        out.extend(pred.probs.data().chunks(per).map(|c| c.iter().map(|&v| v as f64).collect()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::targets::encode_states;
    use crate::experiments::Recorder;
    use crate::landmark_io::AuState;
    use crate::neuralnet::Variant;
    use crate::neuralnet::gradcheck::random_grids;

    fn setup(variant: Variant) -> (ArchitectureDescriptor, Vec<VoxelGrid>, Vec<String>, EncodedTargets) {
        let d = ArchitectureDescriptor::small(variant);
        let grids = random_grids(d.input_c, 12, 5);
        let ids = (0..12).map(|i| format!("f{i}")).collect();
        let states: Vec<Vec<AuState>> = (0..12)
            .map(|i| {
                (0..d.au_count)
                    .map(|a| match (i + a) % 3 {
                        0 => AuState::Present,
                        1 => AuState::Absent,
                        _ => AuState::Unknown,
                    })
                    .collect()
            })
            .collect();
        let rows: Vec<&[AuState]> = states.iter().map(|r| r.as_slice()).collect();
        let t = encode_states(&rows, d.au_count, variant);
        (d, grids, ids, t)
    }

    fn cfg(balance: BalanceMode) -> TrainConfig {
        TrainConfig { epochs: 3, batch_size: 5, seed: 9, balance, adam: AdamConfig::default() }
    }

    #[test]
    fn only_training_frames_reach_the_optimizer() {
        for variant in [Variant::Binary, Variant::ThreeClass] {
            for balance in [BalanceMode::Weight, BalanceMode::Undersample, BalanceMode::None] {
                let (d, grids, ids, t) = setup(variant);
                let rec = Recorder::default();
                let train_idx = [0, 2, 3, 5, 7, 8, 11];
                let out = train(&d, &grids, &ids, &t, &train_idx, &cfg(balance), 0, &rec).unwrap();
                assert_eq!(out.epoch_losses.len(), 3);
                let allowed: Vec<String> = train_idx.iter().map(|&i| ids[i].clone()).collect();
                for (_, batch) in rec.batches.lock().unwrap().iter() {
                    assert!(batch.len() <= 5);
                    assert!(batch.iter().all(|id| allowed.contains(id)));
                }
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let (d, grids, ids, t) = setup(Variant::Binary);
        let idx: Vec<usize> = (0..12).collect();
        let a = train(&d, &grids, &ids, &t, &idx, &cfg(BalanceMode::Weight), 0, &crate::experiments::NoopObserver)
            .unwrap();
        let b = train(&d, &grids, &ids, &t, &idx, &cfg(BalanceMode::Weight), 0, &crate::experiments::NoopObserver)
            .unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.epoch_losses, b.epoch_losses);
        let probs = predict_probs(&a.network, &grids, &idx, 4).unwrap();
        assert_eq!(probs.len(), 12);
        assert_eq!(probs[0].len(), d.au_count);
    }

    #[test]
    fn empty_split_is_an_error() {
        let (d, grids, ids, t) = setup(Variant::Binary);
        let r = train(&d, &grids, &ids, &t, &[], &cfg(BalanceMode::Weight), 4, &crate::experiments::NoopObserver);
        assert!(matches!(r, Err(ExperimentError::NoTrainingFrames { fold: 4 })));
    }
}
