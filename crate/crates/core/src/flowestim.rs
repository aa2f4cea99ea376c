//! Coarse-to-fine Horn-Schunck optical flow over grayscale image pairs.
//!
//! Each pyramid level warps the second image by the current estimate and runs Jacobi
//! sweeps on the linearized brightness-constancy energy
//! `(Ix u + Iy v + It)^2 + alpha^2 (|grad u|^2 + |grad v|^2)`.
//! Gradients are computed on `[0, 1]` intensities and rescaled to 8-bit units before
//! the update, so `alpha` is expressed in 8-bit intensity units.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::flowcore::FlowField;

/// Intensity scale that `alpha` is expressed in.
const INTENSITY_SCALE: f32 = 255.0;
/// Levels are only added while the coarser image keeps at least this many pixels per side.
const MIN_LEVEL_SIDE: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum EstimError {
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, EstimError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(EstimError::InvalidImage(format!(
                "{width}x{height} with {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(EstimError::InvalidImage("intensity outside [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn<F: FnMut(usize, usize) -> f32>(
        width: usize,
        height: usize,
        mut f: F,
    ) -> Result<Self, EstimError> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn from_luma8(img: &image::GrayImage) -> Self {
        let data = img.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    /// Luminance `0.299 R + 0.587 G + 0.114 B`.
    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                ((0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32) / 255.0).clamp(0.0, 1.0)
            })
            .collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    /// Loads a PNG or PGM file; color images are converted to luminance.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EstimError> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| EstimError::Decode {
            path: path.display().to_string(),
            source,
        })?;
        Ok(match img {
            image::DynamicImage::ImageLuma8(g) => Self::from_luma8(&g),
            other => Self::from_rgb8(&other.to_rgb8()),
        })
    }

    /// Quantizes to 8 bits.
    pub fn to_luma8(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([(self.get(x as usize, y as usize) * 255.0).round() as u8])
        })
    }

    /// Bilinear sample with edge clamping.
    fn sample(&self, x: f32, y: f32) -> f32 {
        let xc = x.clamp(0.0, (self.width - 1) as f32);
        let yc = y.clamp(0.0, (self.height - 1) as f32);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f32;
        let fy = yc - y0 as f32;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Half-resolution image by 2x2 area averaging (align-corners-false resampling).
    fn downsample(&self) -> GrayImage {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        let sx = self.width as f32 / w as f32;
        let sy = self.height as f32 / h as f32;
        let mut data = Vec::with_capacity(w * h);
        for i in 0..h {
            for j in 0..w {
                data.push(self.sample((j as f32 + 0.5) * sx - 0.5, (i as f32 + 0.5) * sy - 0.5));
            }
        }
        GrayImage {
            width: w,
            height: h,
            data,
        }
    }

    /// `I(x + u(x), y + v(x))` for every pixel.
    fn warp(&self, flow: &FlowField) -> GrayImage {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let (u, v) = flow.get(x, y);
                data.push(self.sample(x as f32 + u, y as f32 + v));
            }
        }
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HsConfig {
    /// Smoothness weight, 8-bit intensity units.
    pub alpha: f32,
    /// Jacobi sweeps per pyramid level.
    pub iterations: usize,
    pub pyramid_levels: usize,
}

impl Default for HsConfig {
    fn default() -> Self {
        Self {
            alpha: 15.0,
            iterations: 100,
            pyramid_levels: 3,
        }
    }
}

impl HsConfig {
    pub fn validate(&self) -> Result<(), EstimError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(EstimError::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.iterations == 0 || self.pyramid_levels == 0 {
            return Err(EstimError::Config(
                "iterations and pyramid_levels must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Spatial and temporal derivatives of an image pair, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub width: usize,
    pub height: usize,
    pub ix: Vec<f32>,
    pub iy: Vec<f32>,
    pub it: Vec<f32>,
}

fn check_dims(a: &GrayImage, b: &GrayImage) -> Result<(), EstimError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(EstimError::DimensionMismatch(
            (a.width, a.height),
            (b.width, b.height),
        ));
    }
    Ok(())
}

/// Central differences of the pair average for `Ix`, `Iy` (one-sided at borders),
/// and `It = img2 - img1`.
pub fn image_gradients(img1: &GrayImage, img2: &GrayImage) -> Result<Gradients, EstimError> {
    check_dims(img1, img2)?;
    let (w, h) = (img1.width, img1.height);
    let avg = |x: usize, y: usize| 0.5 * (img1.get(x, y) + img2.get(x, y));
    let n = w * h;
    let mut ix = vec![0.0; n];
    let mut iy = vec![0.0; n];
    let mut it = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            ix[i] = diff(w, x, |k| avg(k, y));
            iy[i] = diff(h, y, |k| avg(x, k));
            it[i] = img2.get(x, y) - img1.get(x, y);
        }
    }
    Ok(Gradients {
        width: w,
        height: h,
        ix,
        iy,
        it,
    })
}

/// Derivative along one axis of length `len` at position `k`.
#[inline]
fn diff<F: Fn(usize) -> f32>(len: usize, k: usize, at: F) -> f32 {
    if len == 1 {
        0.0
    } else if k == 0 {
        at(1) - at(0)
    } else if k == len - 1 {
        at(k) - at(k - 1)
    } else {
        0.5 * (at(k + 1) - at(k - 1))
    }
}

/// Estimates the flow that maps `img1` onto `img2`.
pub fn estimate_flow(img1: &GrayImage, img2: &GrayImage, cfg: &HsConfig) -> Result<FlowField, EstimError> {
    check_dims(img1, img2)?;
    cfg.validate()?;

    let mut pyr1 = vec![img1.clone()];
    let mut pyr2 = vec![img2.clone()];
    while pyr1.len() < cfg.pyramid_levels {
        let last = pyr1.last().unwrap();
        if last.width / 2 < MIN_LEVEL_SIDE || last.height / 2 < MIN_LEVEL_SIDE {
            break;
        }
        let next1 = last.downsample();
        let next2 = pyr2.last().unwrap().downsample();
        pyr1.push(next1);
        pyr2.push(next2);
    }

    let coarsest = pyr1.last().unwrap();
    let mut flow = FlowField::zeros(coarsest.width, coarsest.height).expect("non-empty level");
    for level in (0..pyr1.len()).rev() {
        let (a, b) = (&pyr1[level], &pyr2[level]);
        if (flow.width(), flow.height()) != (a.width, a.height) {
            flow = upsample_flow(&flow, a.width, a.height);
        }
        flow = refine_level(a, b, &flow, cfg);
    }
    Ok(flow)
}

/// Resizes a coarse flow to `w x h`, scaling vectors by the size ratio per axis.
fn upsample_flow(flow: &FlowField, w: usize, h: usize) -> FlowField {
    let sx = w as f32 / flow.width() as f32;
    let sy = h as f32 / flow.height() as f32;
    let up = flow.resize_bilinear(w, h).expect("positive size");
    let data = up
        .data()
        .chunks_exact(2)
        .flat_map(|p| [p[0] * sx, p[1] * sy])
        .collect();
    FlowField::from_vec(w, h, data).expect("finite flow")
}

fn refine_level(img1: &GrayImage, img2: &GrayImage, init: &FlowField, cfg: &HsConfig) -> FlowField {
    let (w, h) = (img1.width, img1.height);
    let warped = img2.warp(init);
    let g = image_gradients(img1, &warped).expect("same level dims");
    let alpha2 = cfg.alpha * cfg.alpha;

    let n = w * h;
    let mut u: Vec<f32> = init.data().iter().step_by(2).copied().collect();
    let mut v: Vec<f32> = init.data().iter().skip(1).step_by(2).copied().collect();
    let mut ix = vec![0.0f32; n];
    let mut iy = vec![0.0f32; n];
    // residual of the linearization around the initial flow: It - Ix u0 - Iy v0
    let mut it0 = vec![0.0f32; n];
    let mut denom = vec![0.0f32; n];
    for i in 0..n {
        ix[i] = g.ix[i] * INTENSITY_SCALE;
        iy[i] = g.iy[i] * INTENSITY_SCALE;
        it0[i] = g.it[i] * INTENSITY_SCALE - ix[i] * u[i] - iy[i] * v[i];
        denom[i] = alpha2 + ix[i] * ix[i] + iy[i] * iy[i];
    }

    let mut un = vec![0.0f32; n];
    let mut vn = vec![0.0f32; n];
    for _ in 0..cfg.iterations {
        for y in 0..h {
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            for x in 0..w {
                let xm = x.saturating_sub(1);
                let xp = (x + 1).min(w - 1);
                let i = y * w + x;
                let (l, r, t, b) = (y * w + xm, y * w + xp, ym * w + x, yp * w + x);
                let ubar = 0.25 * (u[l] + u[r] + u[t] + u[b]);
                let vbar = 0.25 * (v[l] + v[r] + v[t] + v[b]);
                let k = (ix[i] * ubar + iy[i] * vbar + it0[i]) / denom[i];
                un[i] = ubar - ix[i] * k;
                vn[i] = vbar - iy[i] * k;
            }
        }
        std::mem::swap(&mut u, &mut un);
        std::mem::swap(&mut v, &mut vn);
    }

    let data = u.iter().zip(&v).flat_map(|(a, b)| [*a, *b]).collect();
    FlowField::from_vec(w, h, data).expect("Horn-Schunck iterate stays finite")
}

/// Sum of absolute neighbor differences over both flow channels.
pub fn total_variation(flow: &FlowField) -> f64 {
    let (w, h) = (flow.width(), flow.height());
    let mut tv = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(x, y);
            if x + 1 < w {
                let (u2, v2) = flow.get(x + 1, y);
                tv += (u2 - u).abs() as f64 + (v2 - v).abs() as f64;
            }
            if y + 1 < h {
                let (u2, v2) = flow.get(x, y + 1);
                tv += (u2 - u).abs() as f64 + (v2 - v).abs() as f64;
            }
        }
    }
    tv
}

/// Mean endpoint error over pixels at least `margin` from every border.
pub fn interior_endpoint_error(est: &FlowField, truth: &FlowField, margin: usize) -> f64 {
    assert_eq!((est.width(), est.height()), (truth.width(), truth.height()));
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for y in margin..est.height().saturating_sub(margin) {
        for x in margin..est.width().saturating_sub(margin) {
            let (a, b) = est.get(x, y);
            let (c, d) = truth.get(x, y);
            sum += ((a - c) as f64).hypot((b - d) as f64);
            n += 1;
        }
    }
    assert!(n > 0, "margin leaves no interior pixels");
    sum / n as f64
}
