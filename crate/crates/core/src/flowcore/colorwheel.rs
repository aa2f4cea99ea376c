use image::{Rgb, RgbImage};

use super::FlowField;

/// Scale used to normalize flow magnitudes before coloring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MagnitudeScale {
    /// Use the field's own maximum magnitude (1 for an all-zero field).
    Auto,
    Fixed(f32),
}

/// Renders a flow field with the usual hue/saturation color coding.
///
/// Hue follows the direction `atan2(v, u)`, saturation the magnitude relative to the
/// scale (clamped to 1). Zero flow is white.
pub fn render_colorwheel(field: &FlowField, scale: MagnitudeScale) -> RgbImage {
    let max = match scale {
        MagnitudeScale::Fixed(m) => {
            assert!(m > 0.0 && m.is_finite(), "max magnitude must be positive");
            m
        }
        MagnitudeScale::Auto => {
            let m = field.max_magnitude();
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let mut img = RgbImage::new(field.width() as u32, field.height() as u32);
    for y in 0..field.height() {
        for x in 0..field.width() {
            let (u, v) = field.get(x, y);
            img.put_pixel(x as u32, y as u32, flow_color(u / max, v / max));
        }
    }
    img
}

/// Color for a normalized flow vector.
pub fn flow_color(nu: f32, nv: f32) -> Rgb<u8> {
    let nu = nu as f64;
    let nv = nv as f64;
    let sat = nu.hypot(nv).min(1.0);
    if sat == 0.0 {
        return Rgb([255, 255, 255]);
    }
    let hue = nv.atan2(nu).to_degrees().rem_euclid(360.0);
    let [r, g, b] = hue_rgb(hue);
    // blend the pure hue toward white by (1 - saturation)
    let ch = |c: f64| ((1.0 - sat * (1.0 - c)) * 255.0).round() as u8;
    Rgb([ch(r), ch(g), ch(b)])
}

/// Fully saturated color for a hue in degrees.
fn hue_rgb(hue: f64) -> [f64; 3] {
    let h = hue / 60.0;
    let sector = h.floor() as i32;
    let f = h - h.floor();
    match sector.rem_euclid(6) {
        0 => [1.0, f, 0.0],
        1 => [1.0 - f, 1.0, 0.0],
        2 => [0.0, 1.0, f],
        3 => [0.0, 1.0 - f, 1.0],
        4 => [f, 0.0, 1.0],
        _ => [1.0, 0.0, 1.0 - f],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_is_white() {
        let img = render_colorwheel(&FlowField::zeros(5, 3).unwrap(), MagnitudeScale::Auto);
        assert!(img.pixels().all(|p| p.0 == [255, 255, 255]));
    }

    #[test]
    fn opposite_directions_are_complementary() {
        let f = FlowField::from_vec(2, 1, vec![4.0, 0.0, -4.0, 0.0]).unwrap();
        let img = render_colorwheel(&f, MagnitudeScale::Auto);
        let a = img.get_pixel(0, 0).0;
        let b = img.get_pixel(1, 0).0;
        assert_eq!(a, [255, 0, 0]);
        for c in 0..3 {
            assert_eq!(a[c] as u16 + b[c] as u16, 255);
        }
        for (u, v) in [(1.0, 1.0), (0.3, -2.0), (-0.1, 0.7)] {
            let f = FlowField::from_vec(2, 1, vec![u, v, -u, -v]).unwrap();
            let img = render_colorwheel(&f, MagnitudeScale::Fixed(0.01));
            let a = img.get_pixel(0, 0).0;
            let b = img.get_pixel(1, 0).0;
            for c in 0..3 {
                assert!((a[c] as i32 + b[c] as i32 - 255).abs() <= 1, "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn half_magnitude_is_half_saturated() {
        // hue 0 is pure red (1, 0, 0); at saturation 0.5 the other channels sit at 0.5.
        let f = FlowField::from_vec(2, 1, vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        let img = render_colorwheel(&f, MagnitudeScale::Fixed(2.0));
        assert_eq!(img.get_pixel(1, 0).0, [255, 0, 0]);
        assert_eq!(img.get_pixel(0, 0).0, [255, 128, 128]);
    }

    #[test]
    fn saturation_clamps_above_scale() {
        let f = FlowField::from_vec(1, 1, vec![0.0, 10.0]).unwrap();
        let img = render_colorwheel(&f, MagnitudeScale::Fixed(1.0));
        // +v is 90 degrees: chartreuse boundary between yellow and green
        assert_eq!(img.get_pixel(0, 0).0, [128, 255, 0]);
    }

    #[test]
    fn scale_invariance() {
        let f = FlowField::from_fn(6, 5, |x, y| (x as f32 * 0.37 - 1.0, 0.9 - y as f32 * 0.21))
            .unwrap();
        let doubled =
            FlowField::from_vec(6, 5, f.data().iter().map(|v| v * 2.0).collect()).unwrap();
        assert_eq!(
            render_colorwheel(&f, MagnitudeScale::Fixed(1.3)),
            render_colorwheel(&doubled, MagnitudeScale::Fixed(2.6))
        );
        assert_eq!(
            render_colorwheel(&f, MagnitudeScale::Auto),
            render_colorwheel(&doubled, MagnitudeScale::Auto)
        );
    }
}
