//! Central finite-difference checks in f64.

use crate::rng::Stream;
use crate::voxelizer::{encode_frame, VoxelGrid};

use super::descriptor::{ArchitectureDescriptor, Variant, THREE_CLASSES};
use super::layers::{self, ConvGeom};
use super::loss::{loss, LossWeights, Targets};
use super::network::{Input, Network};
use super::NetError;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor so that near-zero derivative pairs compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    /// Where the maximum occurred.
    pub worst: String,
    pub checked: usize,
    /// Entries left out because a step crossed a relu kink or changed a pooling choice.
    pub skipped: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }

    fn empty(name: &str) -> CheckResult {
        CheckResult { name: name.into(), max_rel_error: 0.0, worst: String::new(), checked: 0, skipped: 0 }
    }

    fn merge(name: &str, parts: Vec<CheckResult>) -> CheckResult {
        let mut out = CheckResult::empty(name);
        for p in parts {
            out.checked += p.checked;
            out.skipped += p.skipped;
            if p.max_rel_error >= out.max_rel_error {
                out.max_rel_error = p.max_rel_error;
                out.worst = p.worst;
            }
        }
        out
    }
}

/// Compare `analytic[i]` with the central difference of `f` at `x0` for each `i` in `which`.
fn compare(label: &str, x0: &[f64], analytic: &[f64], which: &[usize], mut f: impl FnMut(&[f64]) -> f64) -> CheckResult {
    let mut x = x0.to_vec();
    let mut res = CheckResult::empty(label);
    for &i in which {
        x[i] = x0[i] + FD_STEP;
        let up = f(&x);
        x[i] = x0[i] - FD_STEP;
        let dn = f(&x);
        x[i] = x0[i];
        let e = relative_error(analytic[i], (up - dn) / (2.0 * FD_STEP));
        res.checked += 1;
        if e >= res.max_rel_error {
            res.max_rel_error = e;
            res.worst = format!("{label}[{i}]");
        }
    }
    res
}

/// Like `compare`, but `f` also returns the activation pattern and entries
/// whose steps leave the pattern `base` are skipped rather than compared.
fn compare_smooth(
    label: &str,
    x0: &[f64],
    analytic: &[f64],
    base: u64,
    which: impl IntoIterator<Item = usize>,
    f: &mut impl FnMut(&[f64]) -> (f64, u64),
) -> CheckResult {
    let mut x = x0.to_vec();
    let mut res = CheckResult::empty(label);
    for i in which {
        x[i] = x0[i] + FD_STEP;
        let (up, pu) = f(&x);
        x[i] = x0[i] - FD_STEP;
        let (dn, pd) = f(&x);
        x[i] = x0[i];
        if pu != base || pd != base {
            res.skipped += 1;
            continue;
        }
        let e = relative_error(analytic[i], (up - dn) / (2.0 * FD_STEP));
        res.checked += 1;
        if e >= res.max_rel_error {
            res.max_rel_error = e;
            res.worst = format!("{label}[{i}]");
        }
    }
    res
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn uniform_vec(rng: &mut Stream, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(lo, hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerCheck {
    Conv,
    SparseConv,
    Pool,
    Dense,
    Relu,
    Sigmoid,
    Softmax,
}

impl LayerCheck {
    pub const ALL: [LayerCheck; 7] = [
        LayerCheck::Conv,
        LayerCheck::SparseConv,
        LayerCheck::Pool,
        LayerCheck::Dense,
        LayerCheck::Relu,
        LayerCheck::Sigmoid,
        LayerCheck::Softmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerCheck::Conv => "conv",
            LayerCheck::SparseConv => "conv_sparse",
            LayerCheck::Pool => "maxpool",
            LayerCheck::Dense => "dense",
            LayerCheck::Relu => "relu",
            LayerCheck::Sigmoid => "sigmoid",
            LayerCheck::Softmax => "softmax",
        }
    }
}

/// One layer in isolation, scalarized as `L = sum(r * layer(x))` for random `r`.
pub fn check_layer(kind: LayerCheck, seed: u64) -> CheckResult {
    let mut rng = Stream::derived(seed, kind as u64);
    let name = kind.name();
    match kind {
        LayerCheck::Conv => {
            let g = ConvGeom { in_ch: 2, out_ch: 3, side: 5, kernel: 3 };
            let batch = 2;
            let x = uniform_vec(&mut rng, batch * g.in_len(), -1.0, 1.0);
            let w = uniform_vec(&mut rng, g.out_ch * g.patch(), -1.0, 1.0);
            let b = uniform_vec(&mut rng, g.out_ch, -1.0, 1.0);
            let r = uniform_vec(&mut rng, batch * g.out_len(), -1.0, 1.0);
            let eval = |x: &[f64], w: &[f64], b: &[f64]| {
                let mut out = vec![0.0; batch * g.out_len()];
                layers::conv_forward(&g, batch, x, w, b, &mut out);
                dot(&out, &r)
            };
            let (mut gw, mut gb, mut gx) = (vec![0.0; w.len()], vec![0.0; b.len()], vec![0.0; x.len()]);
            layers::conv_backward(&g, batch, &x, &w, &r, &mut gw, &mut gb, Some(&mut gx));
            CheckResult::merge(
                name,
                vec![
                    compare("conv.input", &x, &gx, &all(x.len()), |v| eval(v, &w, &b)),
                    compare("conv.weight", &w, &gw, &all(w.len()), |v| eval(&x, v, &b)),
                    compare("conv.bias", &b, &gb, &all(b.len()), |v| eval(&x, &w, v)),
                ],
            )
        }
        LayerCheck::SparseConv => {
            let g = ConvGeom { in_ch: 3, out_ch: 2, side: 6, kernel: 3 };
            let cells: Vec<Vec<layers::ActiveCell>> = (0..2)
                .map(|_| {
                    (0..7)
                        .map(|_| (rng.below(3) as u32, rng.below(6) as u32, rng.below(6) as u32))
                        .collect()
                })
                .collect();
            let w = uniform_vec(&mut rng, g.out_ch * g.patch(), -1.0, 1.0);
            let b = uniform_vec(&mut rng, g.out_ch, -1.0, 1.0);
            let r = uniform_vec(&mut rng, 2 * g.out_len(), -1.0, 1.0);
            let eval = |w: &[f64], b: &[f64]| {
                let mut out = vec![0.0; 2 * g.out_len()];
                layers::conv_forward_sparse(&g, &cells, w, b, &mut out);
                dot(&out, &r)
            };
            let (mut gw, mut gb) = (vec![0.0; w.len()], vec![0.0; b.len()]);
            layers::conv_backward_sparse(&g, &cells, &r, &mut gw, &mut gb);
            CheckResult::merge(
                name,
                vec![
                    compare("conv_sparse.weight", &w, &gw, &all(w.len()), |v| eval(v, &b)),
                    compare("conv_sparse.bias", &b, &gb, &all(b.len()), |v| eval(&w, v)),
                ],
            )
        }
        LayerCheck::Pool => {
            let (planes, side) = (3, 6);
            let x = uniform_vec(&mut rng, planes * side * side, -1.0, 1.0);
            let r = uniform_vec(&mut rng, planes * 9, -1.0, 1.0);
            let eval = |x: &[f64]| {
                let mut out = vec![0.0; planes * 9];
                layers::maxpool_forward(planes, side, x, &mut out);
                dot(&out, &r)
            };
            let mut out = vec![0.0; planes * 9];
            let arg = layers::maxpool_forward(planes, side, &x, &mut out);
            let mut gx = vec![0.0; x.len()];
            layers::maxpool_backward(&arg, &r, &mut gx);
            compare("maxpool.input", &x, &gx, &all(x.len()), eval)
        }
        LayerCheck::Dense => {
            let (batch, n_in, n_out) = (3, 5, 4);
            let x = uniform_vec(&mut rng, batch * n_in, -1.0, 1.0);
            let w = uniform_vec(&mut rng, n_in * n_out, -1.0, 1.0);
            let b = uniform_vec(&mut rng, n_out, -1.0, 1.0);
            let r = uniform_vec(&mut rng, batch * n_out, -1.0, 1.0);
            let eval = |x: &[f64], w: &[f64], b: &[f64]| {
                let mut out = vec![0.0; batch * n_out];
                layers::dense_forward(batch, x, w, b, &mut out);
                dot(&out, &r)
            };
            let (mut gw, mut gb, mut gx) = (vec![0.0; w.len()], vec![0.0; b.len()], vec![0.0; x.len()]);
            layers::dense_backward(batch, &x, &w, &r, &mut gw, &mut gb, Some(&mut gx));
            CheckResult::merge(
                name,
                vec![
                    compare("dense.input", &x, &gx, &all(x.len()), |v| eval(v, &w, &b)),
                    compare("dense.weight", &w, &gw, &all(w.len()), |v| eval(&x, v, &b)),
                    compare("dense.bias", &b, &gb, &all(b.len()), |v| eval(&x, &w, v)),
                ],
            )
        }
        LayerCheck::Relu => {
            // keep inputs away from the kink, where the derivative is undefined
            let x: Vec<f64> = (0..40)
                .map(|_| {
                    let v = rng.uniform_range(0.01, 1.0);
                    if rng.bernoulli(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            let r = uniform_vec(&mut rng, x.len(), -1.0, 1.0);
            let eval = |x: &[f64]| {
                let mut y = x.to_vec();
                layers::relu_inplace(&mut y);
                dot(&y, &r)
            };
            let mut y = x.clone();
            layers::relu_inplace(&mut y);
            let mut gx = r.clone();
            layers::relu_backward(&y, &mut gx);
            compare("relu.input", &x, &gx, &all(x.len()), eval)
        }
        LayerCheck::Sigmoid => {
            let x = uniform_vec(&mut rng, 40, -6.0, 6.0);
            let r = uniform_vec(&mut rng, x.len(), -1.0, 1.0);
            let eval = |x: &[f64]| x.iter().zip(&r).map(|(&v, &ri)| layers::sigmoid(v) * ri).sum::<f64>();
            let p: Vec<f64> = x.iter().map(|&v| layers::sigmoid(v)).collect();
            let mut gx = vec![0.0; x.len()];
            layers::sigmoid_backward(&p, &r, &mut gx);
            compare("sigmoid.input", &x, &gx, &all(x.len()), eval)
        }
        LayerCheck::Softmax => {
            let n = 5;
            let x = uniform_vec(&mut rng, 4 * n, -3.0, 3.0);
            let r = uniform_vec(&mut rng, x.len(), -1.0, 1.0);
            let eval = |x: &[f64]| {
                let mut p = vec![0.0; x.len()];
                for (z, pi) in x.chunks(n).zip(p.chunks_mut(n)) {
                    layers::softmax(z, pi);
                }
                dot(&p, &r)
            };
            let mut p = vec![0.0; x.len()];
            for (z, pi) in x.chunks(n).zip(p.chunks_mut(n)) {
                layers::softmax(z, pi);
            }
            let mut gx = vec![0.0; x.len()];
            for ((pi, ri), gi) in p.chunks(n).zip(r.chunks(n)).zip(gx.chunks_mut(n)) {
                layers::softmax_backward(pi, ri, gi);
            }
            compare("softmax.input", &x, &gx, &all(x.len()), eval)
        }
    }
}

/// Options for a whole-network check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkCheck {
    pub batch: usize,
    /// Parameters checked per tensor; `None` checks every entry.
    pub per_tensor: Option<usize>,
}

impl Default for NetworkCheck {
    fn default() -> Self {
        NetworkCheck { batch: 2, per_tensor: None }
    }
}

/// Random 83-point frames encoded at side `c`.
pub fn random_grids(c: usize, n: usize, seed: u64) -> Vec<VoxelGrid> {
    (0..n)
        .map(|i| {
            let mut rng = Stream::derived(seed, i as u64);
            let pts: Vec<[f64; 3]> =
                (0..83).map(|_| [rng.uniform(), rng.uniform(), rng.uniform()]).collect();
            encode_frame(&pts, c).expect("random frames are non-degenerate")
        })
        .collect()
}

/// Loss of the composed network against random targets and loss weights,
/// differentiated with respect to every (or a sample of every) parameter tensor.
/// Biases are randomized so that no relu sits exactly at its kink.
pub fn check_network(
    descriptor: &ArchitectureDescriptor,
    seed: u64,
    opts: NetworkCheck,
) -> Result<CheckResult, NetError> {
    let mut net = Network::<f64>::init(descriptor, seed)?;
    let mut rng = Stream::derived(seed, 0xB1A5);
    for p in net.params_mut() {
        if p.name.ends_with(".bias") {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = rng.uniform_range(-0.1, 0.1));
        }
    }
    let grids = random_grids(descriptor.input_c, opts.batch, seed);
    let refs: Vec<&VoxelGrid> = grids.iter().collect();
    let au = descriptor.au_count;
    let n = opts.batch * au;
    let (targets, weights) = match descriptor.variant {
        Variant::Binary => (
            Targets::Binary {
                y: (0..n).map(|_| rng.bernoulli(0.5) as u8).collect(),
                mask: (0..n).map(|_| rng.bernoulli(0.9)).collect(),
            },
            LossWeights::Binary((0..au).map(|_| [1.0, rng.uniform_range(0.5, 3.0)]).collect()),
        ),
        Variant::ThreeClass => (
            Targets::ThreeClass { class: (0..n).map(|_| rng.below(THREE_CLASSES) as u8).collect() },
            LossWeights::ThreeClass(
                (0..au).map(|_| [rng.uniform_range(0.5, 2.0), rng.uniform_range(0.5, 2.0), 1.0]).collect(),
            ),
        ),
    };
    let input = Input::Voxels(&refs);
    let (pred, cache) = net.forward(&input)?;
    let out = loss(&pred, &targets, Some(&weights))?;
    let grads = net.backward(&cache, &out.logit_grad)?;

    let base = cache.activation_pattern();
    let mut parts = Vec::new();
    for (ti, grad) in grads.iter().enumerate() {
        let x0 = net.params()[ti].tensor.data().to_vec();
        let name = net.params()[ti].name.clone();
        let mut probe = net.clone();
        let mut f = |v: &[f64]| {
            probe.params_mut()[ti].tensor.data_mut().copy_from_slice(v);
            let (p, c) = probe.forward(&input).expect("forward succeeded once");
            (loss(&p, &targets, Some(&weights)).expect("loss succeeded once").loss, c.activation_pattern())
        };
        let analytic = grad.data();
        let part = match opts.per_tensor {
            None => compare_smooth(&name, &x0, analytic, base, all(x0.len()), &mut f),
            Some(k) => {
                // draw until `k` entries were compared or 4k draws were spent
                let mut pick = Stream::derived(seed, 0x5A3F_0000 + ti as u64);
                let mut part = CheckResult::empty(&name);
                let mut draws = 0;
                while part.checked < k.min(x0.len()) && draws < 4 * k {
                    draws += 1;
                    let r = compare_smooth(&name, &x0, analytic, base, [pick.below(x0.len())], &mut f);
                    part = CheckResult::merge(&name, vec![part, r]);
                }
                part
            }
        };
        parts.push(part);
    }
    let label = format!("network.{}", descriptor.variant.name());
    Ok(CheckResult::merge(&label, parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes() {
        for seed in 0..5 {
            for kind in LayerCheck::ALL {
                let r = check_layer(kind, seed);
                assert!(r.passed(), "{} seed {seed}: {} at {}", r.name, r.max_rel_error, r.worst);
                assert!(r.checked > 0);
            }
        }
    }

    #[test]
    fn small_networks_pass_exhaustively() {
        for variant in [Variant::Binary, Variant::ThreeClass] {
            let d = ArchitectureDescriptor::small(variant);
            let r = check_network(&d, 3, NetworkCheck::default()).unwrap();
            assert!(r.passed(), "{}: {} at {}", r.name, r.max_rel_error, r.worst);
        }
    }

    #[test]
    fn broken_gradient_is_detected() {
        let x = [0.5, -0.2];
        let r = compare("q", &x, &[1.0, 0.0], &[0, 1], |v| v[0] * v[0] + v[1]);
        assert!(!r.passed());
        assert_eq!(r.worst, "q[1]");
    }
}
