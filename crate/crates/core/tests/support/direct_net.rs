//! Straight-from-the-definition evaluation of the residual classifier, used as an
//! independent oracle for the im2col implementation. Layers are looked up by name so
//! this code shares nothing with the library's layer plan.

#![allow(dead_code, clippy::needless_range_loop)]

use flowmotion_core::classifier::{ModelParams, NetConfig, Scalar};

const EPS: f64 = 1e-5;

#[derive(Clone)]
pub struct Act {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Act {
    fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, v: vec![0.0; n * c * h * w] }
    }

    fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.v[((n * self.c + c) * self.h + y) * self.w + x]
    }

    fn set(&mut self, n: usize, c: usize, y: usize, x: usize, val: f64) {
        let i = ((n * self.c + c) * self.h + y) * self.w + x;
        self.v[i] = val;
    }
}

struct Weights<'a, T> {
    m: &'a ModelParams<T>,
}

impl<T: Scalar> Weights<'_, T> {
    fn get(&self, name: &str) -> Option<(Vec<usize>, Vec<f64>)> {
        if let Some(p) = self.m.param(name) {
            return Some((p.shape.clone(), p.data.iter().map(|v| v.to_f64().unwrap()).collect()));
        }
        self.m
            .buffers()
            .iter()
            .find(|b| b.name == name)
            .map(|b| (b.shape.clone(), b.data.iter().map(|v| v.to_f64().unwrap()).collect()))
    }

    fn req(&self, name: &str) -> Vec<f64> {
        self.get(name).unwrap_or_else(|| panic!("missing tensor {name}")).1
    }
}

fn conv(x: &Act, shape: &[usize], w: &[f64], stride: usize, pad: usize) -> Act {
    let (oc, ic, k) = (shape[0], shape[1], shape[2]);
    assert_eq!(ic, x.c);
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let mut out = Act::zeros(x.n, oc, oh, ow);
    for n in 0..x.n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for c in 0..ic {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                s += w[((o * ic + c) * k + ky) * k + kx] * x.at(n, c, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.set(n, o, oy, ox, s);
                }
            }
        }
    }
    out
}

fn batchnorm<T: Scalar>(x: &Act, wt: &Weights<T>, prefix: &str, train: bool) -> Act {
    let gamma = wt.req(&format!("{prefix}.weight"));
    let beta = wt.req(&format!("{prefix}.bias"));
    let mut out = x.clone();
    for c in 0..x.c {
        let (mean, var) = if train {
            let mut vals = Vec::new();
            for n in 0..x.n {
                for y in 0..x.h {
                    for xx in 0..x.w {
                        vals.push(x.at(n, c, y, xx));
                    }
                }
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
            (m, v)
        } else {
            (
                wt.req(&format!("{prefix}.running_mean"))[c],
                wt.req(&format!("{prefix}.running_var"))[c],
            )
        };
        for n in 0..x.n {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let z = (x.at(n, c, y, xx) - mean) / (var + EPS).sqrt();
                    out.set(n, c, y, xx, gamma[c] * z + beta[c]);
                }
            }
        }
    }
    out
}

fn relu(mut x: Act) -> Act {
    for v in &mut x.v {
        *v = v.max(0.0);
    }
    x
}

fn maxpool(x: &Act) -> Act {
    let oh = (x.h - 1) / 2 + 1;
    let ow = (x.w - 1) / 2 + 1;
    let mut out = Act::zeros(x.n, x.c, oh, ow);
    for n in 0..x.n {
        for c in 0..x.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy >= 0 && ix >= 0 && iy < x.h as isize && ix < x.w as isize {
                                best = best.max(x.at(n, c, iy as usize, ix as usize));
                            }
                        }
                    }
                    out.set(n, c, oy, ox, best);
                }
            }
        }
    }
    out
}

fn conv_bn<T: Scalar>(x: &Act, wt: &Weights<T>, conv_name: &str, bn_name: &str, stride: usize, train: bool) -> Act {
    let (shape, w) = wt.get(&format!("{conv_name}.weight")).unwrap();
    let pad = shape[2] / 2;
    batchnorm(&conv(x, &shape, &w, stride, pad), wt, bn_name, train)
}

/// Output probabilities for an `n x 2 x s x s` input. `train` selects batch
/// statistics instead of running statistics in the normalization layers.
pub fn direct_forward<T: Scalar>(m: &ModelParams<T>, input: &[f64], n: usize, train: bool) -> Vec<f64> {
    let cfg: &NetConfig = m.config();
    let s = cfg.input_size;
    let wt = Weights { m };
    let x = Act { n, c: cfg.input_channels, h: s, w: s, v: input.to_vec() };
    let mut h = relu(conv_bn(&x, &wt, "stem.conv", "stem.bn", cfg.stem_stride, train));
    if cfg.stem_pool {
        h = maxpool(&h);
    }
    for (si, &blocks) in cfg.blocks_per_stage.iter().enumerate() {
        for b in 0..blocks {
            let stride = if si > 0 && b == 0 { 2 } else { 1 };
            let p = format!("stage{si}.block{b}");
            let a = relu(conv_bn(&h, &wt, &format!("{p}.conv1"), &format!("{p}.bn1"), stride, train));
            let mut out = conv_bn(&a, &wt, &format!("{p}.conv2"), &format!("{p}.bn2"), 1, train);
            let short = if wt.get(&format!("{p}.downsample.conv.weight")).is_some() {
                conv_bn(&h, &wt, &format!("{p}.downsample.conv"), &format!("{p}.downsample.bn"), stride, train)
            } else {
                h.clone()
            };
            for (o, sc) in out.v.iter_mut().zip(&short.v) {
                *o += sc;
            }
            h = relu(out);
        }
    }
    let fw = wt.req("fc.weight");
    let fb = wt.req("fc.bias")[0];
    (0..n)
        .map(|i| {
            let mut z = fb;
            for c in 0..h.c {
                let mut mean = 0.0;
                for y in 0..h.h {
                    for xx in 0..h.w {
                        mean += h.at(i, c, y, xx);
                    }
                }
                z += fw[c] * mean / (h.h * h.w) as f64;
            }
            1.0 / (1.0 + (-z).exp())
        })
        .collect()
}
