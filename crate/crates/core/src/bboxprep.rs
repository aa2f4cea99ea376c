//! 2D boxes from projected 3D-box corners and ROI preprocessing.
//!
//! The ROI pipeline is: squarify (side = max(w, h), center kept), scale sides by 3,
//! crop with clamp-to-edge padding, resize to the classifier input size.

use serde::{Deserialize, Serialize};

use crate::flowcore::{FlowError, FlowField};

/// Default side length of the classifier input.
pub const ROI_SIZE: usize = 224;
/// Context factor applied to the squarified box.
pub const EXPAND_FACTOR: f64 = 3.0;

#[derive(Debug, thiserror::Error)]
pub enum BoxError {
    #[error("expected 8 corner points, got {0}")]
    CornerCount(usize),
    #[error("non-finite box coordinate")]
    NonFinite,
    #[error("box has min > max ({min} > {max})")]
    Inverted { min: f64, max: f64 },
    #[error("expansion factor must be positive, got {0}")]
    Factor(f64),
    #[error("box rounds to an empty crop window ({width}x{height} px)")]
    Degenerate { width: i64, height: i64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Axis-aligned box in continuous pixel coordinates.
///
/// Coordinates may lie outside the image; cropping pads with edge values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Box2D {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self, BoxError> {
        if ![xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        if xmin > xmax {
            return Err(BoxError::Inverted {
                min: xmin,
                max: xmax,
            });
        }
        if ymin > ymax {
            return Err(BoxError::Inverted {
                min: ymin,
                max: ymax,
            });
        }
        Ok(Self {
            xmin,
            xmax,
            ymin,
            ymax,
        })
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    /// The same box in an image of `image_width` columns after a horizontal flip.
    pub fn mirrored(&self, image_width: usize) -> Box2D {
        let w = image_width as f64;
        Box2D {
            xmin: w - self.xmax,
            xmax: w - self.xmin,
            ..*self
        }
    }

    fn with_center_and_sides(cx: f64, cy: f64, half_w: f64, half_h: f64) -> Box2D {
        Box2D {
            xmin: cx - half_w,
            xmax: cx + half_w,
            ymin: cy - half_h,
            ymax: cy + half_h,
        }
    }

    /// Integer crop window `(x0, y0, width, height)`; each edge is rounded half away from zero.
    pub fn pixel_window(&self) -> (i64, i64, i64, i64) {
        let x0 = self.xmin.round() as i64;
        let x1 = self.xmax.round() as i64;
        let y0 = self.ymin.round() as i64;
        let y1 = self.ymax.round() as i64;
        (x0, y0, x1 - x0, y1 - y0)
    }
}

/// Tight box around the eight projected corners of a 3D box.
pub fn box_from_corners(corners: &[[f64; 2]]) -> Result<Box2D, BoxError> {
    if corners.len() != 8 {
        return Err(BoxError::CornerCount(corners.len()));
    }
    if corners.iter().flatten().any(|v| !v.is_finite()) {
        return Err(BoxError::NonFinite);
    }
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for [x, y] in corners {
        xmin = xmin.min(*x);
        xmax = xmax.max(*x);
        ymin = ymin.min(*y);
        ymax = ymax.max(*y);
    }
    Box2D::new(xmin, xmax, ymin, ymax)
}

/// Grows the shorter side so the box becomes a square, keeping its center.
pub fn squarify(b: &Box2D) -> Box2D {
    let side = b.width().max(b.height());
    if b.width() == b.height() {
        return *b;
    }
    let (cx, cy) = b.center();
    Box2D::with_center_and_sides(cx, cy, side / 2.0, side / 2.0)
}

/// Scales both sides by `factor` around the center.
pub fn expand(b: &Box2D, factor: f64) -> Result<Box2D, BoxError> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(BoxError::Factor(factor));
    }
    if factor == 1.0 {
        return Ok(*b);
    }
    let (cx, cy) = b.center();
    Ok(Box2D::with_center_and_sides(
        cx,
        cy,
        b.width() * factor / 2.0,
        b.height() * factor / 2.0,
    ))
}

/// Cuts the rounded box window out of the field, replicating edge pixels outside it.
pub fn crop_edge_padded(field: &FlowField, b: &Box2D) -> Result<FlowField, BoxError> {
    let (x0, y0, w, h) = b.pixel_window();
    if w <= 0 || h <= 0 {
        return Err(BoxError::Degenerate {
            width: w,
            height: h,
        });
    }
    let max_x = field.width() as i64 - 1;
    let max_y = field.height() as i64 - 1;
    let out = FlowField::from_fn(w as usize, h as usize, |j, i| {
        let sx = (x0 + j as i64).clamp(0, max_x) as usize;
        let sy = (y0 + i as i64).clamp(0, max_y) as usize;
        field.get(sx, sy)
    })?;
    Ok(out)
}

/// Full ROI pipeline producing a `size x size` classifier input.
pub fn preprocess_roi(field: &FlowField, raw: &Box2D, size: usize) -> Result<FlowField, BoxError> {
    if raw.width() <= 0.0 || raw.height() <= 0.0 {
        return Err(BoxError::Degenerate {
            width: raw.width().ceil() as i64,
            height: raw.height().ceil() as i64,
        });
    }
    let window = expand(&squarify(raw), EXPAND_FACTOR)?;
    let crop = crop_edge_padded(field, &window)?;
    Ok(crop.resize_bilinear(size, size)?)
}
