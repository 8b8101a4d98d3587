//! Layer primitives on flat row-major buffers.
//!
//! Activations are laid out `[batch, channels, side, side]`; dense operands are
//! `[batch, width]`. Backward functions accumulate into parameter gradients and
//! overwrite input gradients.

use super::tensor::{matmul, Mat, Scalar};

/// Square "same"-padded stride-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub side: usize,
    pub kernel: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.kernel / 2
    }
    pub fn area(&self) -> usize {
        self.side * self.side
    }
    /// Rows of the im2col matrix.
    pub fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
    pub fn in_len(&self) -> usize {
        self.in_ch * self.area()
    }
    pub fn out_len(&self) -> usize {
        self.out_ch * self.area()
    }
}

/// One active input cell of a sparse binary image: `(channel, row, col)`.
pub type ActiveCell = (u32, u32, u32);

/// Output columns `j0..j1` whose source column `j + dx` lies inside `0..s`.
fn valid_cols(s: usize, dx: isize) -> (usize, usize) {
    let s = s as isize;
    let j0 = (-dx).clamp(0, s);
    let j1 = (s - dx).clamp(j0, s);
    (j0 as usize, j1 as usize)
}

/// Unfold one sample into `cols[patch x area]`.
pub fn im2col<T: Scalar>(g: &ConvGeom, input: &[T], cols: &mut [T]) {
    let (s, k, pad) = (g.side, g.kernel, g.pad() as isize);
    let area = g.area();
    for c in 0..g.in_ch {
        let plane = &input[c * area..(c + 1) * area];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * area..][..area];
                let dx = kx as isize - pad;
                for i in 0..s {
                    let src_i = i as isize + ky as isize - pad;
                    let dst = &mut row[i * s..(i + 1) * s];
                    if src_i < 0 || src_i >= s as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[src_i as usize * s..(src_i as usize + 1) * s];
                    let (j0, j1) = valid_cols(s, dx);
                    dst[..j0].iter_mut().for_each(|v| *v = T::zero());
                    if j1 > j0 {
                        let lo = (j0 as isize + dx) as usize;
                        dst[j0..j1].copy_from_slice(&src[lo..lo + (j1 - j0)]);
                    }
                    dst[j1..].iter_mut().for_each(|v| *v = T::zero());
                }
            }
        }
    }
}

/// Fold `cols` back, accumulating into `input_grad` (one sample).
pub fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], input_grad: &mut [T]) {
    let (s, k, pad) = (g.side, g.kernel, g.pad() as isize);
    let area = g.area();
    for c in 0..g.in_ch {
        let plane = &mut input_grad[c * area..(c + 1) * area];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * area..][..area];
                let dx = kx as isize - pad;
                let (j0, j1) = valid_cols(s, dx);
                if j1 <= j0 {
                    continue;
                }
                for i in 0..s {
                    let src_i = i as isize + ky as isize - pad;
                    if src_i < 0 || src_i >= s as isize {
                        continue;
                    }
                    let lo = (j0 as isize + dx) as usize;
                    let dst = &mut plane[src_i as usize * s + lo..][..j1 - j0];
                    for (d, v) in dst.iter_mut().zip(&row[i * s + j0..i * s + j1]) {
                        *d += *v;
                    }
                }
            }
        }
    }
}

pub fn conv_forward<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    input: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let area = g.area();
    let mut cols = vec![T::zero(); g.patch() * area];
    for b in 0..batch {
        im2col(g, &input[b * g.in_len()..(b + 1) * g.in_len()], &mut cols);
        let o = &mut out[b * g.out_len()..(b + 1) * g.out_len()];
        for (ch, plane) in o.chunks_mut(area).enumerate() {
            plane.iter_mut().for_each(|v| *v = bias[ch]);
        }
        matmul(Mat::new(weight, g.out_ch, g.patch()), Mat::new(&cols, g.patch(), area), o, true);
    }
}

/// Convolution of sparse binary images: each active cell adds its kernel slice.
pub fn conv_forward_sparse<T: Scalar>(
    g: &ConvGeom,
    active: &[Vec<ActiveCell>],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let (s, k, pad) = (g.side as isize, g.kernel, g.pad() as isize);
    let area = g.area();
    for (b, cells) in active.iter().enumerate() {
        let o = &mut out[b * g.out_len()..(b + 1) * g.out_len()];
        for (ch, plane) in o.chunks_mut(area).enumerate() {
            plane.iter_mut().for_each(|v| *v = bias[ch]);
        }
        for &(c, r, q) in cells {
            for ky in 0..k {
                let i = r as isize - ky as isize + pad;
                if i < 0 || i >= s {
                    continue;
                }
                for kx in 0..k {
                    let j = q as isize - kx as isize + pad;
                    if j < 0 || j >= s {
                        continue;
                    }
                    let pos = i as usize * g.side + j as usize;
                    let widx = (c as usize * k + ky) * k + kx;
                    let wstride = g.patch();
                    for oc in 0..g.out_ch {
                        o[oc * area + pos] += weight[oc * wstride + widx];
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients; writes `input_grad` when given.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    input: &[T],
    weight: &[T],
    out_grad: &[T],
    weight_grad: &mut [T],
    bias_grad: &mut [T],
    mut input_grad: Option<&mut [T]>,
) {
    let area = g.area();
    let mut cols = vec![T::zero(); g.patch() * area];
    for b in 0..batch {
        let dout = &out_grad[b * g.out_len()..(b + 1) * g.out_len()];
        for (ch, plane) in dout.chunks(area).enumerate() {
            bias_grad[ch] += plane.iter().copied().sum::<T>();
        }
        im2col(g, &input[b * g.in_len()..(b + 1) * g.in_len()], &mut cols);
        matmul(
            Mat::new(dout, g.out_ch, area),
            Mat::t(&cols, area, g.patch()),
            weight_grad,
            true,
        );
        if let Some(dx) = input_grad.as_deref_mut() {
            matmul(Mat::t(weight, g.patch(), g.out_ch), Mat::new(dout, g.out_ch, area), &mut cols, false);
            let dxs = &mut dx[b * g.in_len()..(b + 1) * g.in_len()];
            dxs.iter_mut().for_each(|v| *v = T::zero());
            col2im(g, &cols, dxs);
        }
    }
}

pub fn conv_backward_sparse<T: Scalar>(
    g: &ConvGeom,
    active: &[Vec<ActiveCell>],
    out_grad: &[T],
    weight_grad: &mut [T],
    bias_grad: &mut [T],
) {
    let (s, k, pad) = (g.side as isize, g.kernel, g.pad() as isize);
    let area = g.area();
    for (b, cells) in active.iter().enumerate() {
        let dout = &out_grad[b * g.out_len()..(b + 1) * g.out_len()];
        for (ch, plane) in dout.chunks(area).enumerate() {
            bias_grad[ch] += plane.iter().copied().sum::<T>();
        }
        for &(c, r, q) in cells {
            for ky in 0..k {
                let i = r as isize - ky as isize + pad;
                if i < 0 || i >= s {
                    continue;
                }
                for kx in 0..k {
                    let j = q as isize - kx as isize + pad;
                    if j < 0 || j >= s {
                        continue;
                    }
                    let pos = i as usize * g.side + j as usize;
                    let widx = (c as usize * k + ky) * k + kx;
                    for oc in 0..g.out_ch {
                        weight_grad[oc * g.patch() + widx] += dout[oc * area + pos];
                    }
                }
            }
        }
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// `grad *= (activated > 0)`, where `activated` is the relu output.
pub fn relu_backward<T: Scalar>(activated: &[T], grad: &mut [T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 stride-2 max pool over `planes` square planes of side `side`.
/// Returns the argmax (flat input index) of every output cell; ties keep the
/// first maximum in row-major window order. Odd trailing rows/cols are dropped.
pub fn maxpool_forward<T: Scalar>(planes: usize, side: usize, input: &[T], out: &mut [T]) -> Vec<u32> {
    let half = side / 2;
    let mut argmax = Vec::with_capacity(planes * half * half);
    for p in 0..planes {
        let base = p * side * side;
        for i in 0..half {
            for j in 0..half {
                let mut best = base + 2 * i * side + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * side + 2 * j + dj;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out[(p * half + i) * half + j] = input[best];
                argmax.push(best as u32);
            }
        }
    }
    argmax
}

/// Routes each output gradient to its argmax; `input_grad` is overwritten.
pub fn maxpool_backward<T: Scalar>(argmax: &[u32], out_grad: &[T], input_grad: &mut [T]) {
    input_grad.iter_mut().for_each(|v| *v = T::zero());
    for (&idx, &g) in argmax.iter().zip(out_grad) {
        input_grad[idx as usize] += g;
    }
}

/// `out[batch x width_out] = x * w + b`, `w` stored `[width_in x width_out]`.
pub fn dense_forward<T: Scalar>(batch: usize, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let n_out = b.len();
    let n_in = w.len() / n_out;
    for row in out.chunks_mut(n_out) {
        row.copy_from_slice(b);
    }
    matmul(Mat::new(x, batch, n_in), Mat::new(w, n_in, n_out), out, true);
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Scalar>(
    batch: usize,
    x: &[T],
    w: &[T],
    out_grad: &[T],
    w_grad: &mut [T],
    b_grad: &mut [T],
    x_grad: Option<&mut [T]>,
) {
    let n_out = b_grad.len();
    let n_in = w.len() / n_out;
    matmul(Mat::t(x, n_in, batch), Mat::new(out_grad, batch, n_out), w_grad, true);
    for row in out_grad.chunks(n_out) {
        for (g, &v) in b_grad.iter_mut().zip(row) {
            *g += v;
        }
    }
    if let Some(dx) = x_grad {
        matmul(Mat::new(out_grad, batch, n_out), Mat::t(w, n_out, n_in), dx, false);
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `dz = dp * p * (1 - p)`.
pub fn sigmoid_backward<T: Scalar>(p: &[T], dp: &[T], dz: &mut [T]) {
    for ((d, &pi), &g) in dz.iter_mut().zip(p).zip(dp) {
        *d = g * pi * (T::one() - pi);
    }
}

/// Numerically stable softmax of one logit vector.
pub fn softmax<T: Scalar>(z: &[T], p: &mut [T]) {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (pi, &zi) in p.iter_mut().zip(z) {
        *pi = (zi - m).exp();
        sum += *pi;
    }
    for pi in p.iter_mut() {
        *pi = *pi / sum;
    }
}

/// `dz_i = p_i * (dp_i - sum_j p_j dp_j)`.
pub fn softmax_backward<T: Scalar>(p: &[T], dp: &[T], dz: &mut [T]) {
    let dot: T = p.iter().zip(dp).map(|(&a, &b)| a * b).sum();
    for ((d, &pi), &g) in dz.iter_mut().zip(p).zip(dp) {
        *d = pi * (g - dot);
    }
}

/// `log(sum(exp(z)))`, stable.
pub fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution, independent of im2col.
    fn conv_naive(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let (s, k, pad) = (g.side as isize, g.kernel as isize, g.pad() as isize);
        let mut out = vec![0.0; g.out_len()];
        for o in 0..g.out_ch {
            for i in 0..s {
                for j in 0..s {
                    let mut acc = b[o];
                    for c in 0..g.in_ch {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (r, q) = (i + ky - pad, j + kx - pad);
                                if r < 0 || q < 0 || r >= s || q >= s {
                                    continue;
                                }
                                let wi = ((o * g.in_ch + c) * g.kernel + ky as usize) * g.kernel + kx as usize;
                                acc += w[wi] * x[(c * g.side + r as usize) * g.side + q as usize];
                            }
                        }
                    }
                    out[(o * g.side + i as usize) * g.side + j as usize] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = crate::rng::Stream::new(seed);
        (0..n).map(|_| s.uniform_range(-1.0, 1.0)).collect()
    }

    #[test]
    fn conv_matches_naive_loops() {
        for (kernel, side) in [(3, 5), (1, 4), (5, 6), (3, 2)] {
            let g = ConvGeom { in_ch: 3, out_ch: 2, side, kernel };
            let x = pseudo(g.in_len(), 1);
            let w = pseudo(g.out_ch * g.patch(), 2);
            let b = pseudo(g.out_ch, 3);
            let mut out = vec![0.0; g.out_len()];
            conv_forward(&g, 1, &x, &w, &b, &mut out);
            let expect = conv_naive(&g, &x, &w, &b);
            for (a, e) in out.iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12, "kernel {kernel}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn sparse_conv_matches_dense_on_binary_input() {
        let g = ConvGeom { in_ch: 4, out_ch: 3, side: 6, kernel: 3 };
        let cells: Vec<ActiveCell> = vec![(0, 0, 0), (1, 2, 3), (3, 5, 5), (2, 0, 5), (0, 3, 1)];
        let mut x = vec![0.0; g.in_len()];
        for &(c, r, q) in &cells {
            x[(c as usize * 6 + r as usize) * 6 + q as usize] = 1.0;
        }
        let w = pseudo(g.out_ch * g.patch(), 4);
        let b = pseudo(g.out_ch, 5);
        let mut dense = vec![0.0; g.out_len()];
        let mut sparse = vec![0.0; g.out_len()];
        conv_forward(&g, 1, &x, &w, &b, &mut dense);
        conv_forward_sparse(&g, std::slice::from_ref(&cells), &w, &b, &mut sparse);
        for (a, e) in sparse.iter().zip(&dense) {
            assert!((a - e).abs() < 1e-12);
        }
        let dy = pseudo(g.out_len(), 6);
        let (mut wd, mut bd) = (vec![0.0; w.len()], vec![0.0; 3]);
        let (mut ws, mut bs) = (vec![0.0; w.len()], vec![0.0; 3]);
        conv_backward(&g, 1, &x, &w, &dy, &mut wd, &mut bd, None);
        conv_backward_sparse(&g, &[cells], &dy, &mut ws, &mut bs);
        for (a, e) in ws.iter().zip(&wd).chain(bs.iter().zip(&bd)) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_routes_to_single_argmax() {
        let x = [1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 7.0, 0.0, 0.0, 1.0, 1.0, 0.0, 9.0, 1.0, 1.0];
        let mut out = [0.0; 4];
        let arg = maxpool_forward(1, 4, &x, &mut out);
        assert_eq!(out, [5.0, 7.0, 9.0, 1.0]);
        assert_eq!(arg, vec![1, 6, 13, 10]);
        let mut dx = [0.0; 16];
        maxpool_backward(&arg, &[1.0, 2.0, 3.0, 4.0], &mut dx);
        assert_eq!(dx.iter().filter(|v| **v != 0.0).count(), 4);
        assert_eq!(dx[6], 2.0);
        assert_eq!(dx[10], 4.0);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut p = [0.0f64; 3];
        softmax(&[0.0, 0.0, 0.0], &mut p);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        softmax(&[1000.0, 0.0, -1000.0], &mut p);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12 && p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sigmoid_is_stable_and_centered() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(800.0f64) <= 1.0);
        assert!((log_sum_exp(&[0.0f64, 0.0, 0.0]) - 3f64.ln()).abs() < 1e-15);
    }
}
