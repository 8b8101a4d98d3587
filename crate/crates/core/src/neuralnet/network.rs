use std::hash::{DefaultHasher, Hash, Hasher};

use crate::rng::Stream;
use crate::voxelizer::VoxelGrid;

use super::descriptor::{ArchitectureDescriptor, Variant, THREE_CLASSES};
use super::layers::{self, ActiveCell, ConvGeom};
use super::tensor::{Scalar, Tensor};
use super::NetError;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// A batch entering the network.
pub enum Input<'a, T> {
    /// Binary grids; the first convolution runs sparsely over set voxels.
    Voxels(&'a [&'a VoxelGrid]),
    /// `[batch, channels, side, side]` with channels = grid Z, rows = X, cols = Y.
    Dense(&'a Tensor<T>),
}

impl<T: Scalar> Input<'_, T> {
    pub fn batch(&self) -> usize {
        match self {
            Input::Voxels(g) => g.len(),
            Input::Dense(t) => t.dims().first().copied().unwrap_or(0),
        }
    }
}

/// Grids as the dense `[batch, z, x, y]` tensor the conv stack consumes.
pub fn grids_to_dense<T: Scalar>(grids: &[&VoxelGrid]) -> Tensor<T> {
    let c = grids.first().map_or(0, |g| g.side());
    let mut t = Tensor::zeros(&[grids.len(), c, c, c]);
    let plane = c * c * c;
    for (b, g) in grids.iter().enumerate() {
        for (x, y, z) in g.active() {
            t.data_mut()[b * plane + (z * c + x) * c + y] = T::one();
        }
    }
    t
}

fn active_cells(grid: &VoxelGrid) -> Vec<ActiveCell> {
    grid.active().map(|(x, y, z)| (z as u32, x as u32, y as u32)).collect()
}

/// Network outputs for a batch.
///
/// Binary: `probs` is `[batch, au]` sigmoid outputs. Three-class: `[batch, au, 3]`
/// softmax vectors over class indices (0 absent, 1 unknown, 2 present).
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions<T> {
    pub variant: Variant,
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
}

impl<T: Scalar> Predictions<T> {
    pub fn batch(&self) -> usize {
        self.probs.dims()[0]
    }
    pub fn au_count(&self) -> usize {
        self.probs.dims()[1]
    }
}

enum CachedInput {
    Sparse(Vec<Vec<ActiveCell>>),
    Dense,
}

/// Activations kept by [`Network::forward`] for [`Network::backward`].
pub struct ForwardCache<T> {
    batch: usize,
    input: CachedInput,
    dense_input: Option<Tensor<T>>,
    /// Per conv block: relu output, pooled when a pool follows.
    conv_out: Vec<Vec<T>>,
    pool_argmax: Vec<Option<Vec<u32>>>,
    /// Per head: relu outputs of the hidden dense layers.
    head_hidden: Vec<Vec<Vec<T>>>,
    released: bool,
}

impl<T> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Hash of every relu on/off state and pooling choice. Two forward passes
    /// with equal patterns lie on the same smooth piece of the network.
    pub fn activation_pattern(&self) -> u64
    where
        T: Scalar,
    {
        let mut h = DefaultHasher::new();
        let zero = T::of(0.0);
        for layer in &self.conv_out {
            layer.iter().for_each(|&v| (v > zero).hash(&mut h));
        }
        self.pool_argmax.hash(&mut h);
        for head in &self.head_hidden {
            for layer in head {
                layer.iter().for_each(|&v| (v > zero).hash(&mut h));
            }
        }
        h.finish()
    }

    /// Drop stored activations; a later backward reports `MissingCache`.
    pub fn release(&mut self) {
        self.conv_out.clear();
        self.pool_argmax.clear();
        self.head_hidden.clear();
        self.dense_input = None;
        self.input = CachedInput::Dense;
        self.released = true;
    }
}

fn check_finite<T: Scalar>(what: &str, data: &[T]) -> Result<(), NetError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NetError::NonFinite(what.to_string()))
    }
}

/// Parameters plus the descriptor that fixes their shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    descriptor: ArchitectureDescriptor,
    params: Vec<NamedTensor<T>>,
    seed: u64,
}

impl<T: Scalar> Network<T> {
    /// Uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    /// Tensor `i` draws from stream `i` of `seed`.
    pub fn init(descriptor: &ArchitectureDescriptor, seed: u64) -> Result<Self, NetError> {
        descriptor.validate()?;
        let params = descriptor
            .param_specs()
            .into_iter()
            .enumerate()
            .map(|(i, spec)| {
                let n: usize = spec.dims.iter().product();
                let data = if spec.bias {
                    vec![T::zero(); n]
                } else {
                    let bound = (6.0 / (spec.fan_in + spec.fan_out) as f64).sqrt();
                    let mut rng = Stream::derived(seed, i as u64);
                    (0..n).map(|_| T::of(rng.uniform_range(-bound, bound))).collect()
                };
                NamedTensor { name: spec.name, tensor: Tensor::from_vec(&spec.dims, data).unwrap() }
            })
            .collect();
        Ok(Network { descriptor: descriptor.clone(), params, seed })
    }

    /// All parameters zero.
    pub fn zeros(descriptor: &ArchitectureDescriptor) -> Result<Self, NetError> {
        let mut net = Self::init(descriptor, 0)?;
        net.params.iter_mut().for_each(|p| p.tensor.fill(T::zero()));
        Ok(net)
    }

    /// Assemble from explicit tensors, checking names and shapes against the descriptor.
    pub fn from_parts(
        descriptor: ArchitectureDescriptor,
        params: Vec<NamedTensor<T>>,
        seed: u64,
    ) -> Result<Self, NetError> {
        descriptor.validate()?;
        let specs = descriptor.param_specs();
        if specs.len() != params.len() {
            return Err(NetError::ShapeMismatch(format!(
                "descriptor needs {} tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.name != p.name || s.dims != p.tensor.dims() {
                return Err(NetError::ShapeMismatch(format!(
                    "expected {} {:?}, got {} {:?}",
                    s.name,
                    s.dims,
                    p.name,
                    p.tensor.dims()
                )));
            }
        }
        Ok(Network { descriptor, params, seed })
    }

    pub fn descriptor(&self) -> &ArchitectureDescriptor {
        &self.descriptor
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[NamedTensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            descriptor: self.descriptor.clone(),
            params: self
                .params
                .iter()
                .map(|p| NamedTensor { name: p.name.clone(), tensor: p.tensor.cast() })
                .collect(),
            seed: self.seed,
        }
    }

    fn conv_geom(&self, l: usize) -> ConvGeom {
        let d = &self.descriptor;
        ConvGeom {
            in_ch: if l == 0 { d.in_channels() } else { d.conv[l - 1].filters },
            out_ch: d.conv[l].filters,
            side: d.side_before(l),
            kernel: d.conv[l].kernel,
        }
    }

    fn head_param(&self, head: usize, layer: usize) -> usize {
        let d = &self.descriptor;
        2 * d.conv.len() + head * 2 * (d.dense.len() + 1) + 2 * layer
    }

    fn check_input(&self, input: &Input<'_, T>) -> Result<(), NetError> {
        let c = self.descriptor.input_c;
        match input {
            Input::Voxels(grids) => {
                if let Some(g) = grids.iter().find(|g| g.side() != c) {
                    return Err(NetError::ShapeMismatch(format!(
                        "grid side {} but network expects {c}",
                        g.side()
                    )));
                }
            }
            Input::Dense(t) => {
                if t.dims().len() != 4 || t.dims()[1..] != [c, c, c] {
                    return Err(NetError::ShapeMismatch(format!(
                        "dense input {:?} but network expects [batch, {c}, {c}, {c}]",
                        t.dims()
                    )));
                }
            }
        }
        if input.batch() == 0 {
            return Err(NetError::ShapeMismatch("empty batch".into()));
        }
        Ok(())
    }

    pub fn predict(&self, input: &Input<'_, T>) -> Result<Predictions<T>, NetError> {
        self.forward(input).map(|(p, _)| p)
    }

    pub fn forward(&self, input: &Input<'_, T>) -> Result<(Predictions<T>, ForwardCache<T>), NetError> {
        self.check_input(input)?;
        let d = &self.descriptor;
        let batch = input.batch();
        let mut conv_out: Vec<Vec<T>> = Vec::with_capacity(d.conv.len());
        let mut pool_argmax = Vec::with_capacity(d.conv.len());
        let cached_input = match input {
            Input::Voxels(grids) => CachedInput::Sparse(grids.iter().map(|g| active_cells(g)).collect()),
            Input::Dense(_) => CachedInput::Dense,
        };
        for l in 0..d.conv.len() {
            let g = self.conv_geom(l);
            let (w, b) = (self.params[2 * l].tensor.data(), self.params[2 * l + 1].tensor.data());
            let mut z = vec![T::zero(); batch * g.out_len()];
            if l == 0 {
                match (&cached_input, input) {
                    (CachedInput::Sparse(cells), _) => layers::conv_forward_sparse(&g, cells, w, b, &mut z),
                    (_, Input::Dense(t)) => layers::conv_forward(&g, batch, t.data(), w, b, &mut z),
                    _ => unreachable!(),
                }
            } else {
                layers::conv_forward(&g, batch, &conv_out[l - 1], w, b, &mut z);
            }
            layers::relu_inplace(&mut z);
            if cfg!(debug_assertions) {
                check_finite(&self.params[2 * l].name, &z)?;
            }
            if d.pool_after.contains(&l) {
                let half = g.side / 2;
                let mut pooled = vec![T::zero(); batch * g.out_ch * half * half];
                let arg = layers::maxpool_forward(batch * g.out_ch, g.side, &z, &mut pooled);
                conv_out.push(pooled);
                pool_argmax.push(Some(arg));
            } else {
                conv_out.push(z);
                pool_argmax.push(None);
            }
        }

        let flat = conv_out.last().expect("at least one conv block");
        let n_dense = d.dense.len();
        let head_out = d.head_outputs();
        let mut head_hidden = Vec::with_capacity(d.heads());
        let mut head_logits = Vec::with_capacity(d.heads());
        for h in 0..d.heads() {
            let mut hidden: Vec<Vec<T>> = Vec::with_capacity(n_dense);
            for j in 0..=n_dense {
                let pi = self.head_param(h, j);
                let (w, b) = (self.params[pi].tensor.data(), self.params[pi + 1].tensor.data());
                let x: &[T] = if j == 0 { flat } else { &hidden[j - 1] };
                let mut y = vec![T::zero(); batch * b.len()];
                layers::dense_forward(batch, x, w, b, &mut y);
                if j < n_dense {
                    layers::relu_inplace(&mut y);
                    hidden.push(y);
                } else {
                    head_logits.push(y);
                }
            }
            head_hidden.push(hidden);
        }

        let au = d.au_count;
        let predictions = match d.variant {
            Variant::Binary => {
                let logits = Tensor::from_vec(&[batch, au], head_logits.pop().unwrap())?;
                let probs = Tensor::from_vec(
                    &[batch, au],
                    logits.data().iter().map(|&z| layers::sigmoid(z)).collect(),
                )?;
                Predictions { variant: Variant::Binary, logits, probs }
            }
            Variant::ThreeClass => {
                let mut logits = Tensor::zeros(&[batch, au, head_out]);
                for (a, hl) in head_logits.iter().enumerate() {
                    for b in 0..batch {
                        let dst = (b * au + a) * head_out;
                        logits.data_mut()[dst..dst + head_out]
                            .copy_from_slice(&hl[b * head_out..(b + 1) * head_out]);
                    }
                }
                let mut probs = Tensor::zeros(&[batch, au, head_out]);
                for (z, p) in logits.data().chunks(THREE_CLASSES).zip(probs.data_mut().chunks_mut(THREE_CLASSES)) {
                    layers::softmax(z, p);
                }
                Predictions { variant: Variant::ThreeClass, logits, probs }
            }
        };
        check_finite("output", predictions.probs.data())?;

        let dense_input = match input {
            Input::Dense(t) => Some((*t).clone()),
            Input::Voxels(_) => None,
        };
        let cache = ForwardCache {
            batch,
            input: cached_input,
            dense_input,
            conv_out,
            pool_argmax,
            head_hidden,
            released: false,
        };
        Ok((predictions, cache))
    }

    /// Parameter gradients given the loss gradient with respect to the output
    /// logits (`[batch, au]` or `[batch, au, 3]`).
    pub fn backward(&self, cache: &ForwardCache<T>, logit_grad: &Tensor<T>) -> Result<Vec<Tensor<T>>, NetError> {
        if cache.released {
            return Err(NetError::MissingCache);
        }
        let d = &self.descriptor;
        let batch = cache.batch;
        let au = d.au_count;
        let expected: Vec<usize> = match d.variant {
            Variant::Binary => vec![batch, au],
            Variant::ThreeClass => vec![batch, au, THREE_CLASSES],
        };
        if logit_grad.dims() != expected.as_slice() {
            return Err(NetError::ShapeMismatch(format!(
                "logit gradient {:?}, expected {expected:?}",
                logit_grad.dims()
            )));
        }
        let mut grads: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(p.tensor.dims())).collect();
        let n_conv = d.conv.len();
        let n_dense = d.dense.len();
        let head_out = d.head_outputs();
        let flat = &cache.conv_out[n_conv - 1];
        let mut dflat = vec![T::zero(); flat.len()];

        for h in 0..d.heads() {
            let mut dy: Vec<T> = match d.variant {
                Variant::Binary => logit_grad.data().to_vec(),
                Variant::ThreeClass => (0..batch)
                    .flat_map(|b| {
                        let s = (b * au + h) * head_out;
                        logit_grad.data()[s..s + head_out].iter().copied()
                    })
                    .collect(),
            };
            for j in (0..=n_dense).rev() {
                let pi = self.head_param(h, j);
                let x: &[T] = if j == 0 { flat } else { &cache.head_hidden[h][j - 1] };
                let mut dx = vec![T::zero(); x.len()];
                let (gw, rest) = grads[pi..].split_first_mut().unwrap();
                layers::dense_backward(
                    batch,
                    x,
                    self.params[pi].tensor.data(),
                    &dy,
                    gw.data_mut(),
                    rest[0].data_mut(),
                    Some(&mut dx),
                );
                if j > 0 {
                    layers::relu_backward(x, &mut dx);
                    dy = dx;
                } else {
                    for (a, v) in dflat.iter_mut().zip(&dx) {
                        *a += *v;
                    }
                }
            }
        }

        let mut d_out = dflat;
        for l in (0..n_conv).rev() {
            let g = self.conv_geom(l);
            layers::relu_backward(&cache.conv_out[l], &mut d_out);
            let dz = match &cache.pool_argmax[l] {
                Some(arg) => {
                    let mut dz = vec![T::zero(); batch * g.out_len()];
                    layers::maxpool_backward(arg, &d_out, &mut dz);
                    dz
                }
                None => d_out,
            };
            let (gw, rest) = grads[2 * l..].split_first_mut().unwrap();
            let w = self.params[2 * l].tensor.data();
            if l == 0 {
                match (&cache.input, &cache.dense_input) {
                    (CachedInput::Sparse(cells), _) => {
                        layers::conv_backward_sparse(&g, cells, &dz, gw.data_mut(), rest[0].data_mut())
                    }
                    (CachedInput::Dense, Some(x)) => layers::conv_backward(
                        &g,
                        batch,
                        x.data(),
                        w,
                        &dz,
                        gw.data_mut(),
                        rest[0].data_mut(),
                        None,
                    ),
                    (CachedInput::Dense, None) => return Err(NetError::MissingCache),
                }
                d_out = Vec::new();
            } else {
                let mut din = vec![T::zero(); batch * g.in_len()];
                layers::conv_backward(
                    &g,
                    batch,
                    &cache.conv_out[l - 1],
                    w,
                    &dz,
                    gw.data_mut(),
                    rest[0].data_mut(),
                    Some(&mut din),
                );
                d_out = din;
            }
        }
        Ok(grads)
    }
}
