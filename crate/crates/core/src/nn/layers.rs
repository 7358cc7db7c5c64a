//! Forward and backward passes for the temporal operators.
//!
//! Every layer returns a cache from `forward` that its `backward` consumes. Backward passes return
//! the gradient with respect to the layer input and write parameter gradients into a [`LayerGrad`].

use rand_chacha::ChaCha8Rng;

use super::mat::{Mat, Tensor3};
use super::params::{LayerGrad, Param};
use crate::error::{Error, Result};

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn relu_backward_in_place(pre: &[f64], grad: &mut [f64]) {
    for (g, &z) in grad.iter_mut().zip(pre) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Concept-wise temporal convolution.
///
/// A bank of `f_out × f_in` temporal 1×3 kernels shared across all channels; channel `c` of the
/// output depends only on channel `c` of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcLayer {
    pub f_in: usize,
    pub f_out: usize,
    pub relu: bool,
    /// Shape `[f_out, f_in, 3]`.
    pub weight: Param,
    /// Shape `[f_out]`.
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct CtcCache {
    input: Tensor3,
    pre: Vec<f64>,
}

impl CtcLayer {
    pub fn new(name: &str, f_in: usize, f_out: usize, relu: bool, rng: &mut ChaCha8Rng) -> Self {
        Self {
            f_in,
            f_out,
            relu,
            weight: Param::kaiming_uniform(
                format!("{name}.weight"),
                &[f_out, f_in, 3],
                3 * f_in,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[f_out]),
        }
    }

    #[inline]
    fn w(&self, fo: usize, fi: usize, k: usize) -> f64 {
        self.weight.value[(fo * self.f_in + fi) * 3 + k]
    }

    pub fn forward(&self, x: &Tensor3) -> Result<(Tensor3, CtcCache)> {
        let (c_n, len, f_in) = x.dims();
        if f_in != self.f_in {
            return Err(Error::shape(format!(
                "CTC layer {} expects F_in={}, got F_in={f_in}",
                self.weight.name, self.f_in
            )));
        }
        let mut pre = Tensor3::zeros(c_n, len, self.f_out);
        for c in 0..c_n {
            let xin = x.channel(c);
            let out = pre.channel_mut(c);
            for l in 0..len {
                for fo in 0..self.f_out {
                    let mut acc = self.bias.value[fo];
                    for k in 0..3 {
                        let t = l as isize + k as isize - 1;
                        if t < 0 || t >= len as isize {
                            continue;
                        }
                        let row = &xin[t as usize * f_in..(t as usize + 1) * f_in];
                        for (fi, &v) in row.iter().enumerate() {
                            acc += self.w(fo, fi, k) * v;
                        }
                    }
                    out[l * self.f_out + fo] = acc;
                }
            }
        }
        let pre_vals = pre.as_slice().to_vec();
        let mut y = pre;
        if self.relu {
            y.as_mut_slice().iter_mut().for_each(|v| *v = relu(*v));
        }
        Ok((
            y,
            CtcCache {
                input: x.clone(),
                pre: pre_vals,
            },
        ))
    }

    pub fn backward(&self, cache: &CtcCache, dy: &Tensor3, grad: &mut LayerGrad) -> Tensor3 {
        let (c_n, len, f_in) = cache.input.dims();
        let mut dpre = dy.as_slice().to_vec();
        if self.relu {
            relu_backward_in_place(&cache.pre, &mut dpre);
        }
        let mut dx = Tensor3::zeros(c_n, len, f_in);
        let f_out = self.f_out;
        for c in 0..c_n {
            let xin = cache.input.channel(c);
            let dout = &dpre[c * len * f_out..(c + 1) * len * f_out];
            let dxc = dx.channel_mut(c);
            for l in 0..len {
                for fo in 0..f_out {
                    let g = dout[l * f_out + fo];
                    if g == 0.0 {
                        continue;
                    }
                    grad.bias[fo] += g;
                    for k in 0..3 {
                        let t = l as isize + k as isize - 1;
                        if t < 0 || t >= len as isize {
                            continue;
                        }
                        let t = t as usize;
                        for fi in 0..f_in {
                            let wi = (fo * f_in + fi) * 3 + k;
                            grad.weight[wi] += g * xin[t * f_in + fi];
                            dxc[t * f_in + fi] += g * self.weight.value[wi];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn zero_grad(&self) -> LayerGrad {
        LayerGrad::zeros(self.weight.len(), self.bias.len())
    }
}

/// Temporal 1-D convolution over a `C_in × L` matrix with zero padding that keeps `L` fixed.
///
/// Kernel size 3 is the temporal layer; kernel size 1 is a pointwise channel projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub relu: bool,
    /// Shape `[c_out, c_in, kernel]`.
    pub weight: Param,
    /// Shape `[c_out]`.
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct Conv1dCache {
    input: Mat,
    pre: Vec<f64>,
}

impl Conv1d {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        relu: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Self {
            c_in,
            c_out,
            kernel,
            relu,
            weight: Param::kaiming_uniform(
                format!("{name}.weight"),
                &[c_out, c_in, kernel],
                c_in * kernel,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[c_out]),
        }
    }

    /// Sets the center tap to the identity (requires `c_in == c_out`) and zeroes everything else.
    pub fn set_identity(&mut self) {
        assert_eq!(self.c_in, self.c_out);
        self.weight.fill(0.0);
        self.bias.fill(0.0);
        let half = self.kernel / 2;
        for c in 0..self.c_out {
            self.weight.value[(c * self.c_in + c) * self.kernel + half] = 1.0;
        }
    }

    pub fn forward(&self, x: &Mat) -> Result<(Mat, Conv1dCache)> {
        if x.rows() != self.c_in {
            return Err(Error::shape(format!(
                "conv {} expects C_in={}, got C_in={}",
                self.weight.name,
                self.c_in,
                x.rows()
            )));
        }
        let len = x.cols();
        let half = (self.kernel / 2) as isize;
        let mut pre = Mat::zeros(self.c_out, len);
        for o in 0..self.c_out {
            let out = pre.row_mut(o);
            out.iter_mut().for_each(|v| *v = self.bias.value[o]);
            for i in 0..self.c_in {
                let xr = x.row(i);
                for k in 0..self.kernel {
                    let w = self.weight.value[(o * self.c_in + i) * self.kernel + k];
                    if w == 0.0 {
                        continue;
                    }
                    let shift = k as isize - half;
                    let (lo, hi) = valid_range(len, shift);
                    for l in lo..hi {
                        out[l] += w * xr[(l as isize + shift) as usize];
                    }
                }
            }
        }
        let pre_vals = pre.as_slice().to_vec();
        let y = if self.relu { pre.map(relu) } else { pre };
        Ok((
            y,
            Conv1dCache {
                input: x.clone(),
                pre: pre_vals,
            },
        ))
    }

    pub fn backward(&self, cache: &Conv1dCache, dy: &Mat, grad: &mut LayerGrad) -> Mat {
        let len = cache.input.cols();
        let half = (self.kernel / 2) as isize;
        let mut dpre = dy.clone();
        if self.relu {
            relu_backward_in_place(&cache.pre, dpre.as_mut_slice());
        }
        let mut dx = Mat::zeros(self.c_in, len);
        for o in 0..self.c_out {
            let g = dpre.row(o);
            grad.bias[o] += g.iter().sum::<f64>();
            for i in 0..self.c_in {
                let xr = cache.input.row(i);
                for k in 0..self.kernel {
                    let wi = (o * self.c_in + i) * self.kernel + k;
                    let w = self.weight.value[wi];
                    let shift = k as isize - half;
                    let (lo, hi) = valid_range(len, shift);
                    let mut gw = 0.0;
                    let dxr = dx.row_mut(i);
                    for l in lo..hi {
                        let t = (l as isize + shift) as usize;
                        gw += g[l] * xr[t];
                        dxr[t] += g[l] * w;
                    }
                    grad.weight[wi] += gw;
                }
            }
        }
        dx
    }

    pub fn zero_grad(&self) -> LayerGrad {
        LayerGrad::zeros(self.weight.len(), self.bias.len())
    }
}

/// Output positions `l` for which `l + shift` stays inside `[0, len)`.
#[inline]
fn valid_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Contiguous near-equal windows partitioning `[0, len)` into `target` parts.
pub fn pool_windows(len: usize, target: usize) -> Vec<(usize, usize)> {
    (0..target)
        .map(|j| (j * len / target, (j + 1) * len / target))
        .collect()
}

/// Temporal average pooling of a `C × L` matrix to `C × target`.
pub fn avg_pool_temporal(x: &Mat, target: usize) -> Result<Mat> {
    let len = x.cols();
    if target == 0 || target > len {
        return Err(Error::InvalidArgument(format!(
            "pooling target {target} must be in [1, {len}]"
        )));
    }
    let windows = pool_windows(len, target);
    let mut y = Mat::zeros(x.rows(), target);
    for c in 0..x.rows() {
        let row = x.row(c);
        for (j, &(a, b)) in windows.iter().enumerate() {
            let sum: f64 = row[a..b].iter().sum();
            y.set(c, j, sum / (b - a) as f64);
        }
    }
    Ok(y)
}

pub fn avg_pool_temporal_backward(dy: &Mat, len: usize) -> Mat {
    let windows = pool_windows(len, dy.cols());
    let mut dx = Mat::zeros(dy.rows(), len);
    for c in 0..dy.rows() {
        for (j, &(a, b)) in windows.iter().enumerate() {
            let g = dy.get(c, j) / (b - a) as f64;
            for t in a..b {
                dx.set(c, t, g);
            }
        }
    }
    dx
}

/// Interpolation taps for resizing a length-`len` sequence to `target` samples.
///
/// Endpoints are aligned: sample `i` sits at `i·(len−1)/(target−1)`; a single sample sits at the
/// midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ResizePlan {
    pub len: usize,
    taps: Vec<(usize, usize, f64)>,
}

impl ResizePlan {
    pub fn new(len: usize, target: usize) -> Result<Self> {
        if len == 0 || target == 0 {
            return Err(Error::InvalidArgument(
                "cannot resize an empty sequence".into(),
            ));
        }
        let taps = (0..target)
            .map(|i| {
                let pos = if target == 1 {
                    (len - 1) as f64 / 2.0
                } else {
                    (i * (len - 1)) as f64 / (target - 1) as f64
                };
                let lo = (pos.floor() as usize).min(len - 1);
                let hi = (lo + 1).min(len - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect();
        Ok(Self { len, taps })
    }

    pub fn target(&self) -> usize {
        self.taps.len()
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        let mut y = Mat::zeros(x.rows(), self.taps.len());
        for c in 0..x.rows() {
            let row = x.row(c);
            for (i, &(lo, hi, w)) in self.taps.iter().enumerate() {
                y.set(c, i, row[lo] + w * (row[hi] - row[lo]));
            }
        }
        y
    }

    pub fn backward(&self, dy: &Mat) -> Mat {
        let mut dx = Mat::zeros(dy.rows(), self.len);
        for c in 0..dy.rows() {
            for (i, &(lo, hi, w)) in self.taps.iter().enumerate() {
                let g = dy.get(c, i);
                dx.add_at(c, lo, g * (1.0 - w));
                dx.add_at(c, hi, g * w);
            }
        }
        dx
    }
}

/// Per-channel linear interpolation of a `C × L` matrix to `C × target`.
pub fn linear_resize(x: &Mat, target: usize) -> Result<Mat> {
    if x.rows() == 0 {
        return Err(Error::InvalidArgument(
            "cannot resize an empty sequence".into(),
        ));
    }
    Ok(ResizePlan::new(x.cols(), target)?.apply(x))
}

/// 2-D convolution over a `C_in × H × W` grid with zero padding, evaluated only where `out_mask`
/// is set (other outputs are zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub relu: bool,
    /// Shape `[c_out, c_in, kernel, kernel]`.
    pub weight: Param,
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct Conv2dCache {
    input: Vec<f64>,
    pre: Vec<f64>,
}

impl Conv2d {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        relu: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Self {
            c_in,
            c_out,
            kernel,
            relu,
            weight: Param::kaiming_uniform(
                format!("{name}.weight"),
                &[c_out, c_in, kernel, kernel],
                c_in * kernel * kernel,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[c_out]),
        }
    }

    /// `x` is `[c_in][h][w]` flattened; returns `[c_out][h][w]`.
    pub fn forward(
        &self,
        x: &[f64],
        h: usize,
        w: usize,
        out_mask: &[bool],
    ) -> Result<(Vec<f64>, Conv2dCache)> {
        if x.len() != self.c_in * h * w || out_mask.len() != h * w {
            return Err(Error::shape(format!(
                "conv2d {} expects {}x{h}x{w} input",
                self.weight.name, self.c_in
            )));
        }
        let k = self.kernel;
        let half = (k / 2) as isize;
        let hw = h * w;
        let mut pre = vec![0.0; self.c_out * hw];
        for o in 0..self.c_out {
            let out = &mut pre[o * hw..(o + 1) * hw];
            for (p, m) in out.iter_mut().zip(out_mask) {
                if *m {
                    *p = self.bias.value[o];
                }
            }
            for i in 0..self.c_in {
                let xin = &x[i * hw..(i + 1) * hw];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.weight.value[((o * self.c_in + i) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let dy = ky as isize - half;
                        let dx = kx as isize - half;
                        for r in 0..h {
                            let sr = r as isize + dy;
                            if sr < 0 || sr >= h as isize {
                                continue;
                            }
                            let (lo, hi) = valid_range(w, dx);
                            let src = &xin[sr as usize * w..(sr as usize + 1) * w];
                            for c in lo..hi {
                                if out_mask[r * w + c] {
                                    out[r * w + c] += wv * src[(c as isize + dx) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut y = pre.clone();
        if self.relu {
            y.iter_mut().for_each(|v| *v = relu(*v));
        }
        Ok((
            y,
            Conv2dCache {
                input: x.to_vec(),
                pre,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &Conv2dCache,
        dy: &[f64],
        h: usize,
        w: usize,
        out_mask: &[bool],
        grad: &mut LayerGrad,
    ) -> Vec<f64> {
        let k = self.kernel;
        let half = (k / 2) as isize;
        let hw = h * w;
        let mut dpre = dy.to_vec();
        if self.relu {
            relu_backward_in_place(&cache.pre, &mut dpre);
        }
        for (i, g) in dpre.iter_mut().enumerate() {
            if !out_mask[i % hw] {
                *g = 0.0;
            }
        }
        let mut dx = vec![0.0; self.c_in * hw];
        for o in 0..self.c_out {
            let g = &dpre[o * hw..(o + 1) * hw];
            grad.bias[o] += g.iter().sum::<f64>();
            for i in 0..self.c_in {
                let xin = &cache.input[i * hw..(i + 1) * hw];
                let dxi = &mut dx[i * hw..(i + 1) * hw];
                for ky in 0..k {
                    for kx in 0..k {
                        let wi = ((o * self.c_in + i) * k + ky) * k + kx;
                        let wv = self.weight.value[wi];
                        let oy = ky as isize - half;
                        let ox = kx as isize - half;
                        let mut gw = 0.0;
                        for r in 0..h {
                            let sr = r as isize + oy;
                            if sr < 0 || sr >= h as isize {
                                continue;
                            }
                            let sr = sr as usize;
                            let (lo, hi) = valid_range(w, ox);
                            for c in lo..hi {
                                let gv = g[r * w + c];
                                if gv == 0.0 {
                                    continue;
                                }
                                let sc = (c as isize + ox) as usize;
                                gw += gv * xin[sr * w + sc];
                                dxi[sr * w + sc] += gv * wv;
                            }
                        }
                        grad.weight[wi] += gw;
                    }
                }
            }
        }
        dx
    }

    pub fn zero_grad(&self) -> LayerGrad {
        LayerGrad::zeros(self.weight.len(), self.bias.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut r = rng(seed);
        let data = (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect();
        Mat::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn ctc_identity_kernel_is_identity() {
        let mut layer = CtcLayer::new("ctc", 1, 1, false, &mut rng(0));
        layer.weight.value = vec![0.0, 1.0, 0.0];
        layer.bias.fill(0.0);
        let x = Tensor3::from_mat(&random_mat(3, 5, 1));
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ctc_zero_weights_relu_gives_zeros() {
        let mut layer = CtcLayer::new("ctc", 1, 32, true, &mut rng(0));
        layer.weight.fill(0.0);
        let x = Tensor3::from_mat(&random_mat(3, 5, 1));
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.dims(), (3, 5, 32));
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ctc_rejects_filter_mismatch() {
        let layer = CtcLayer::new("ctc", 32, 1, true, &mut rng(0));
        let x = Tensor3::from_mat(&random_mat(2, 4, 1));
        let err = layer.forward(&x).unwrap_err().to_string();
        assert!(err.contains("F_in"), "{err}");
    }

    #[test]
    fn ctc_channels_are_independent() {
        let mut r = rng(0);
        let stack = [
            CtcLayer::new("a", 1, 32, true, &mut r),
            CtcLayer::new("b", 32, 1, true, &mut r),
        ];
        let run = |x: &Tensor3| {
            stack
                .iter()
                .fold(x.clone(), |acc, l| l.forward(&acc).unwrap().0)
        };
        let x = Tensor3::from_mat(&random_mat(2, 4, 3));
        let mut perturbed = x.clone();
        for v in perturbed.channel_mut(0) {
            *v += 0.5;
        }
        let (a, b) = (run(&x), run(&perturbed));
        assert_eq!(a.channel(1), b.channel(1));
    }

    #[test]
    fn conv_identity_and_bias_only() {
        let mut conv = Conv1d::new("c", 3, 3, 3, false, &mut rng(0));
        conv.set_identity();
        let x = random_mat(3, 6, 2);
        assert_eq!(conv.forward(&x).unwrap().0, x);

        conv.weight.fill(0.0);
        conv.bias.value = vec![0.5, -1.0, 2.0];
        let (y, _) = conv.forward(&x).unwrap();
        for c in 0..3 {
            assert!(y.row(c).iter().all(|&v| v == conv.bias.value[c]));
        }
    }

    #[test]
    fn conv_matches_naive_triple_loop() {
        let conv = Conv1d::new("c", 2, 3, 3, false, &mut rng(0));
        let x = random_mat(2, 5, 7);
        let (y, _) = conv.forward(&x).unwrap();
        for o in 0..3 {
            for l in 0..5 {
                let mut acc = conv.bias.value[o];
                for i in 0..2 {
                    for k in 0..3 {
                        let t = l as isize + k as isize - 1;
                        if (0..5).contains(&t) {
                            acc += conv.weight.value[(o * 2 + i) * 3 + k] * x.get(i, t as usize);
                        }
                    }
                }
                assert!((y.get(o, l) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let conv = Conv1d::new("c", 2, 3, 3, false, &mut rng(0));
        assert!(conv.forward(&random_mat(3, 5, 7)).is_err());
    }

    #[test]
    fn avg_pool_examples() {
        let x = Mat::from_rows(&[vec![1.0, 3.0, 5.0, 7.0]]);
        assert_eq!(avg_pool_temporal(&x, 2).unwrap().row(0), &[2.0, 6.0]);
        assert_eq!(avg_pool_temporal(&x, 1).unwrap().row(0), &[4.0]);
        assert_eq!(avg_pool_temporal(&x, 4).unwrap(), x);
        let c = Mat::filled(2, 7, 1.25);
        assert!(avg_pool_temporal(&c, 3)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 1.25));
        assert!(avg_pool_temporal(&x, 5).is_err());
    }

    #[test]
    fn resize_examples() {
        let x = Mat::from_rows(&[vec![0.0, 2.0]]);
        let y = linear_resize(&x, 4).unwrap();
        let expect = [0.0, 2.0 / 3.0, 4.0 / 3.0, 2.0];
        for (a, b) in y.row(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = Mat::filled(1, 7, 3.5);
        for target in [1, 2, 4, 13, 100] {
            assert!(linear_resize(&c, target)
                .unwrap()
                .as_slice()
                .iter()
                .all(|&v| v == 3.5));
        }
        let r = random_mat(3, 9, 4);
        assert_eq!(linear_resize(&r, 9).unwrap(), r);
        assert!(ResizePlan::new(0, 4).is_err());
    }

    #[test]
    fn resize_to_one_uses_midpoint() {
        let x = Mat::from_rows(&[vec![0.0, 1.0, 2.0, 3.0]]);
        assert_eq!(linear_resize(&x, 1).unwrap().row(0), &[1.5]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
