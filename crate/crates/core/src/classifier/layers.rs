//! Forward and backward kernels for the layers of the residual network.

use super::tensor::{matmul, matmul_at, matmul_bt_acc, Scalar, Tensor};

pub(crate) const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    #[cfg(test)]
    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }
}

/// Unfolds one sample into a `(in_c * k * k) x (oh * ow)` column matrix.
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], h: usize, w: usize, oh: usize, ow: usize, col: &mut [T]) {
    let n = oh * ow;
    for c in 0..g.in_c {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * ow + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            xc[iy as usize * w + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adds a column-matrix gradient back onto the input gradient of one sample.
fn col2im<T: Scalar>(g: &ConvGeom, col: &[T], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [T]) {
    let n = oh * ow;
    for c in 0..g.in_c {
        let dxc = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dxc[iy as usize * w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Bias-free 2D convolution.
pub(crate) fn conv_forward<T: Scalar>(g: &ConvGeom, weight: &[T], x: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(x.c, g.in_c);
    let (oh, ow) = g.out_size(x.h, x.w);
    let kdim = g.in_c * g.k * g.k;
    let mut out = Tensor::zeros(x.n, g.out_c, oh, ow);
    let mut col = vec![T::zero(); kdim * oh * ow];
    for i in 0..x.n {
        im2col(g, x.sample(i), x.h, x.w, oh, ow, &mut col);
        matmul(weight, &col, out.sample_mut(i), g.out_c, kdim, oh * ow);
    }
    out
}

/// Returns the input gradient and accumulates the weight gradient into `dweight`.
pub(crate) fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    weight: &[T],
    x: &Tensor<T>,
    dy: &Tensor<T>,
    dweight: &mut [T],
) -> Tensor<T> {
    let (oh, ow) = (dy.h, dy.w);
    let kdim = g.in_c * g.k * g.k;
    let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
    let mut col = vec![T::zero(); kdim * oh * ow];
    let mut dcol = vec![T::zero(); kdim * oh * ow];
    for i in 0..x.n {
        im2col(g, x.sample(i), x.h, x.w, oh, ow, &mut col);
        matmul_bt_acc(dy.sample(i), &col, dweight, g.out_c, oh * ow, kdim);
        matmul_at(weight, dy.sample(i), &mut dcol, g.out_c, kdim, oh * ow);
        col2im(g, &dcol, x.h, x.w, oh, ow, dx.sample_mut(i));
    }
    dx
}

/// Batch-norm state saved for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
}

/// Per-channel batch normalization using batch statistics.
pub(crate) fn bn_forward_train<T: Scalar>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> (Tensor<T>, BnCache<T>) {
    let (n, c, p) = (x.n, x.c, x.plane());
    let m = T::lit((n * p) as f64);
    let eps = T::lit(BN_EPS);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for i in 0..n {
            let off = (i * c + ch) * p;
            s += x.data[off..off + p].iter().copied().sum::<T>();
        }
        let mu = s / m;
        let mut v = T::zero();
        for i in 0..n {
            let off = (i * c + ch) * p;
            for val in &x.data[off..off + p] {
                let d = *val - mu;
                v += d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(n, c, x.h, x.w);
    let mut y = Tensor::zeros(n, c, x.h, x.w);
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * p;
            for k in off..off + p {
                let xh = (x.data[k] - mean[ch]) * inv_std[ch];
                xhat.data[k] = xh;
                y.data[k] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

/// Batch normalization with fixed (running) statistics.
pub(crate) fn bn_forward_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
) -> Tensor<T> {
    let (n, c, p) = (x.n, x.c, x.plane());
    let eps = T::lit(BN_EPS);
    let mut y = x.clone();
    for ch in 0..c {
        let scale = gamma[ch] / (var[ch] + eps).sqrt();
        let shift = beta[ch] - mean[ch] * scale;
        for i in 0..n {
            let off = (i * c + ch) * p;
            for v in &mut y.data[off..off + p] {
                *v = *v * scale + shift;
            }
        }
    }
    y
}

/// Returns `dx` and accumulates `dgamma`, `dbeta`.
pub(crate) fn bn_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &[T],
    dy: &Tensor<T>,
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Tensor<T> {
    let (n, c, p) = (dy.n, dy.c, dy.plane());
    let m = T::lit((n * p) as f64);
    let mut dx = Tensor::zeros(n, c, dy.h, dy.w);
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for i in 0..n {
            let off = (i * c + ch) * p;
            for k in off..off + p {
                sum_dy += dy.data[k];
                sum_dy_xhat += dy.data[k] * cache.xhat.data[k];
            }
        }
        dgamma[ch] += sum_dy_xhat;
        dbeta[ch] += sum_dy;
        let scale = gamma[ch] * cache.inv_std[ch] / m;
        for i in 0..n {
            let off = (i * c + ch) * p;
            for k in off..off + p {
                dx.data[k] = scale * (m * dy.data[k] - sum_dy - cache.xhat.data[k] * sum_dy_xhat);
            }
        }
    }
    dx
}

pub(crate) fn relu<T: Scalar>(mut x: Tensor<T>) -> Tensor<T> {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    x
}

/// Gradient through a ReLU given its output.
pub(crate) fn relu_backward<T: Scalar>(out: &Tensor<T>, mut dy: Tensor<T>) -> Tensor<T> {
    for (d, o) in dy.data.iter_mut().zip(&out.data) {
        if *o <= T::zero() {
            *d = T::zero();
        }
    }
    dy
}

/// 3x3 stride-2 max pooling with padding 1. Returns the output and, per output
/// element, the flat input index that won.
pub(crate) fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let (k, s, pad) = (3usize, 2usize, 1isize);
    let oh = (x.h + 2 - k) / s + 1;
    let ow = (x.w + 2 - k) / s + 1;
    let mut out = Tensor::zeros(x.n, x.c, oh, ow);
    let mut arg = vec![0usize; out.data.len()];
    for nc in 0..x.n * x.c {
        let base = nc * x.plane();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = base;
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - pad;
                    if iy < 0 || iy as usize >= x.h {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * s + kx) as isize - pad;
                        if ix < 0 || ix as usize >= x.w {
                            continue;
                        }
                        let idx = base + iy as usize * x.w + ix as usize;
                        if x.data[idx] > best {
                            best = x.data[idx];
                            best_i = idx;
                        }
                    }
                }
                let o = nc * oh * ow + oy * ow + ox;
                out.data[o] = best;
                arg[o] = best_i;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward<T: Scalar>(input_shape: [usize; 4], arg: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input_shape;
    let mut dx = Tensor::zeros(n, c, h, w);
    for (o, &i) in arg.iter().enumerate() {
        dx.data[i] += dy.data[o];
    }
    dx
}

/// Global average pool to an `n x c` matrix.
pub(crate) fn gap_forward<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let p = x.plane();
    let inv = T::one() / T::lit(p as f64);
    x.data.chunks_exact(p).map(|ch| ch.iter().copied().sum::<T>() * inv).collect()
}

pub(crate) fn gap_backward<T: Scalar>(shape: [usize; 4], dfeat: &[T]) -> Tensor<T> {
    let [n, c, h, w] = shape;
    let p = h * w;
    let inv = T::one() / T::lit(p as f64);
    let mut dx = Tensor::zeros(n, c, h, w);
    for (chunk, d) in dx.data.chunks_exact_mut(p).zip(dfeat) {
        chunk.fill(*d * inv);
    }
    dx
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
        let len = n * c * h * w;
        Tensor::from_vec(n, c, h, w, (0..len).map(|i| ((i * 7919) % 23) as f64 / 7.0 - 1.3).collect())
    }

    #[test]
    fn conv_matches_direct_sum() {
        let g = ConvGeom {
            in_c: 2,
            out_c: 3,
            k: 3,
            stride: 2,
            pad: 1,
        };
        let x = ramp(2, 2, 5, 6);
        let wt: Vec<f64> = (0..g.weight_len()).map(|i| (i as f64 * 0.3).sin()).collect();
        let y = conv_forward(&g, &wt, &x);
        let (oh, ow) = g.out_size(5, 6);
        assert_eq!((y.h, y.w), (oh, ow));
        for n in 0..2 {
            for o in 0..3 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for c in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * 2 + ky) as isize - 1;
                                    let ix = (ox * 2 + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= 5 || ix >= 6 {
                                        continue;
                                    }
                                    s += wt[((o * 2 + c) * 3 + ky) * 3 + kx]
                                        * x.data[((n * 2 + c) * 5 + iy as usize) * 6 + ix as usize];
                                }
                            }
                        }
                        let got = y.data[((n * 3 + o) * oh + oy) * ow + ox];
                        assert!((got - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), dy> == <x, dx> for the linear map x -> conv(x)
        let g = ConvGeom {
            in_c: 2,
            out_c: 2,
            k: 3,
            stride: 1,
            pad: 1,
        };
        let x = ramp(1, 2, 4, 4);
        let wt: Vec<f64> = (0..g.weight_len()).map(|i| (i as f64).cos()).collect();
        let y = conv_forward(&g, &wt, &x);
        let dy = Tensor::from_vec(1, 2, 4, 4, (0..32).map(|i| (i as f64 * 0.7).sin()).collect());
        let mut dw = vec![0.0; g.weight_len()];
        let dx = conv_backward(&g, &wt, &x, &dy, &mut dw);
        let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let rhs_w: f64 = wt.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-10);
    }

    #[test]
    fn bn_train_normalizes() {
        let x = ramp(3, 2, 2, 2);
        let (y, cache) = bn_forward_train(&x, &[1.0, 2.0], &[0.0, 0.5]);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|i| y.data[(i * 2 + ch) * 4..(i * 2 + ch) * 4 + 4].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / 12.0;
            assert!((mean - [0.0, 0.5][ch]).abs() < 1e-12);
        }
        assert_eq!(cache.mean.len(), 2);
    }

    #[test]
    fn maxpool_picks_window_max() {
        let x = Tensor::from_vec(1, 1, 4, 4, (0..16).map(|i| i as f64).collect());
        let (y, arg) = maxpool_forward(&x);
        assert_eq!((y.h, y.w), (2, 2));
        assert_eq!(y.data, [5.0, 7.0, 13.0, 15.0]);
        assert_eq!(arg, [5, 7, 13, 15]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
        assert!((sigmoid(2.0f64) + sigmoid(-2.0f64) - 1.0).abs() < 1e-15);
    }
}
