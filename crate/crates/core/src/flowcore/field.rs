use super::FlowError;

/// Dense two-channel motion field, row-major, `(u, v)` interleaved per pixel.
///
/// Values are displacements in pixels between the two frames of a pair.
/// Every component is finite; constructors reject anything else.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FlowField {
    /// Builds a field from interleaved `(u, v)` data of length `width * height * 2`.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self, FlowError> {
        if width == 0 || height == 0 {
            return Err(FlowError::EmptyDimensions { width, height });
        }
        let expected = width * height * 2;
        if data.len() != expected {
            return Err(FlowError::DataLength {
                expected,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite { index: pos });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self, FlowError> {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Result<Self, FlowError> {
        Self::from_fn(width, height, |_, _| (u, v))
    }

    /// Builds a field by evaluating `f(x, y)` at every pixel.
    pub fn from_fn<F>(width: usize, height: usize, mut f: F) -> Result<Self, FlowError>
    where
        F: FnMut(usize, usize) -> (f32, f32),
    {
        let mut data = Vec::with_capacity(width * height * 2);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(x, y);
                data.push(u);
                data.push(v);
            }
        }
        Self::from_vec(width, height, data)
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

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Flow vector stored at column `x`, row `y`.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    /// Largest vector magnitude in the field.
    pub fn max_magnitude(&self) -> f32 {
        self.data
            .chunks_exact(2)
            .map(|p| p[0].hypot(p[1]))
            .fold(0.0, f32::max)
    }

    /// Mean `(u, v)` over the whole field.
    pub fn mean(&self) -> (f64, f64) {
        let n = (self.width * self.height) as f64;
        let (su, sv) = self
            .data
            .chunks_exact(2)
            .fold((0.0f64, 0.0f64), |(a, b), p| (a + p[0] as f64, b + p[1] as f64));
        (su / n, sv / n)
    }

    /// Bilinear sample at a real-valued pixel coordinate.
    ///
    /// Coordinates are clamped to `[0, width-1] x [0, height-1]`, so samples outside
    /// the grid extend the edge values. At integer in-range coordinates the stored
    /// value is returned exactly.
    pub fn bilinear_sample(&self, x: f64, y: f64) -> (f32, f32) {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;

        let (u00, v00) = self.get(x0, y0);
        if fx == 0.0 && fy == 0.0 {
            return (u00, v00);
        }
        let (u10, v10) = self.get(x1, y0);
        let (u01, v01) = self.get(x0, y1);
        let (u11, v11) = self.get(x1, y1);
        let blend = |a: f32, b: f32, c: f32, d: f32| -> f32 {
            let top = a as f64 * (1.0 - fx) + b as f64 * fx;
            let bottom = c as f64 * (1.0 - fx) + d as f64 * fx;
            (top * (1.0 - fy) + bottom * fy) as f32
        };
        (blend(u00, u10, u01, u11), blend(v00, v10, v01, v11))
    }

    /// Resamples to `out_w x out_h` with the align-corners-false convention.
    ///
    /// Flow values are interpolated as-is; they are not rescaled by the size ratio.
    pub fn resize_bilinear(&self, out_w: usize, out_h: usize) -> Result<FlowField, FlowError> {
        if out_w == 0 || out_h == 0 {
            return Err(FlowError::EmptyDimensions {
                width: out_w,
                height: out_h,
            });
        }
        if out_w == self.width && out_h == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / out_w as f64;
        let sy = self.height as f64 / out_h as f64;
        FlowField::from_fn(out_w, out_h, |j, i| {
            let x = (j as f64 + 0.5) * sx - 0.5;
            let y = (i as f64 + 0.5) * sy - 0.5;
            self.bilinear_sample(x, y)
        })
    }

    /// Mirrors columns and negates the horizontal component.
    pub fn hflip(&self) -> FlowField {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let (u, v) = self.get(x, y);
                data.push(-u);
                data.push(v);
            }
        }
        FlowField {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn u_grid_2x2() -> FlowField {
        FlowField::from_vec(2, 2, vec![0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 3.0, 0.0]).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(FlowField::from_vec(0, 1, vec![]).is_err());
        assert!(FlowField::from_vec(1, 1, vec![0.0]).is_err());
        assert!(FlowField::from_vec(1, 1, vec![0.0, f32::NAN]).is_err());
        assert!(FlowField::from_vec(1, 1, vec![f32::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn sample_at_origin_is_stored_value() {
        let f = FlowField::from_fn(3, 2, |x, y| (x as f32 + 0.25, y as f32 - 7.5)).unwrap();
        assert_eq!(f.bilinear_sample(0.0, 0.0), f.get(0, 0));
    }

    #[test]
    fn sample_cell_center() {
        // (0*0.25 + 1*0.25 + 2*0.25 + 3*0.25)
        let (u, v) = u_grid_2x2().bilinear_sample(0.5, 0.5);
        assert_eq!(u, 1.5);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn sample_clamps_outside() {
        let f = u_grid_2x2();
        assert_eq!(f.bilinear_sample(-4.0, -1.0), f.get(0, 0));
        assert_eq!(f.bilinear_sample(9.0, 9.0), f.get(1, 1));
        assert_eq!(f.bilinear_sample(0.5, -3.0).0, 0.5);
    }

    #[test]
    fn resize_identity_is_bit_exact() {
        let f = FlowField::from_fn(5, 3, |x, y| (x as f32 * 0.1, y as f32 * -0.3)).unwrap();
        assert_eq!(f.resize_bilinear(5, 3).unwrap(), f);
    }

    #[test]
    fn resize_2x2_to_1x1_is_mean() {
        let f = u_grid_2x2();
        let r = f.resize_bilinear(1, 1).unwrap();
        assert_eq!(r.get(0, 0), f.bilinear_sample(0.5, 0.5));
        assert_eq!(r.get(0, 0).0, 1.5);
    }

    #[test]
    fn resize_rejects_zero_target() {
        assert!(u_grid_2x2().resize_bilinear(0, 3).is_err());
    }

    #[test]
    fn hflip_single_column() {
        let f = FlowField::from_vec(1, 1, vec![3.0, 1.0]).unwrap();
        assert_eq!(f.hflip().get(0, 0), (-3.0, 1.0));
        let z = FlowField::zeros(4, 2).unwrap();
        assert_eq!(z.hflip().data().iter().filter(|v| **v != 0.0).count(), 0);
    }

    fn arb_field() -> impl Strategy<Value = FlowField> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            prop::collection::vec(-50.0f32..50.0, w * h * 2)
                .prop_map(move |d| FlowField::from_vec(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn constant_preserved(u in -10.0f32..10.0, v in -10.0f32..10.0,
                              x in -5.0f64..20.0, y in -5.0f64..20.0,
                              ow in 1usize..20, oh in 1usize..20) {
            let f = FlowField::constant(7, 4, u, v).unwrap();
            prop_assert_eq!(f.bilinear_sample(x, y), (u, v));
            let r = f.resize_bilinear(ow, oh).unwrap();
            prop_assert!(r.data().chunks_exact(2).all(|p| p[0] == u && p[1] == v));
        }

        #[test]
        fn grid_points_exact(f in arb_field()) {
            for y in 0..f.height() {
                for x in 0..f.width() {
                    prop_assert_eq!(f.bilinear_sample(x as f64, y as f64), f.get(x, y));
                }
            }
        }

        #[test]
        fn resize_is_convex(f in arb_field(), ow in 1usize..30, oh in 1usize..30) {
            let r = f.resize_bilinear(ow, oh).unwrap();
            for c in 0..2 {
                let vals = f.data().iter().skip(c).step_by(2);
                let lo = vals.clone().cloned().fold(f32::INFINITY, f32::min);
                let hi = vals.cloned().fold(f32::NEG_INFINITY, f32::max);
                for v in r.data().iter().skip(c).step_by(2) {
                    prop_assert!(*v >= lo && *v <= hi);
                }
            }
        }

        #[test]
        fn hflip_involution_and_multisets(f in arb_field()) {
            let g = f.hflip();
            prop_assert_eq!(g.hflip(), f.clone());
            let mut a: Vec<(u32, u32)> = f.data().chunks_exact(2)
                .map(|p| (p[0].abs().to_bits(), p[1].to_bits())).collect();
            let mut b: Vec<(u32, u32)> = g.data().chunks_exact(2)
                .map(|p| (p[0].abs().to_bits(), p[1].to_bits())).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }
    }
}
