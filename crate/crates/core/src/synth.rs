//! Synthetic scenes with exact ground truth.
//!
//! A scene is a textured background translating with the ego motion plus textured
//! rectangles moving at constant image velocity. Everything is a pure function of the
//! config and seed: images, ground-truth flow, annotations and tracks.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, DatasetError, FrameRecord, SceneDir, SceneRecord};
use crate::flowcore::{save_npy, FlowError, FlowField};
use crate::flowestim::GrayImage;
use crate::labeling::{classify_motion, LabelError, Micros, MotionLabel, TrackedObject, MOVING_THRESHOLD_MPS};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("object {index} leaves the {width}x{height} frame at frame {frame}")]
    ObjectLeavesFrame {
        index: usize,
        frame: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Label(#[from] LabelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    /// Width and height in pixels.
    pub size: [f64; 2],
    /// Top-left corner at frame 0, pixels.
    pub position: [f64; 2],
    /// Image velocity, pixels per frame.
    pub velocity: [f64; 2],
    /// Intensity offset of the object texture relative to mid-gray.
    pub contrast: f64,
    pub category: String,
    pub distance: f64,
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSceneConfig {
    pub scene_id: String,
    pub description: String,
    pub width: usize,
    pub height: usize,
    /// Blur radius of the background and object noise, pixels.
    pub smoothness: usize,
    pub objects: Vec<SynthObject>,
    /// Background translation, pixels per frame.
    pub ego_motion: [f64; 2],
    pub seed: u64,
    pub frames: usize,
    /// Every n-th frame is an annotated keyframe, starting at frame 0.
    pub keyframe_every: usize,
    pub meters_per_pixel: f64,
    /// Seconds between consecutive frames.
    pub frame_interval: f64,
}

impl SynthSceneConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.width < 2 || self.height < 2 {
            return bad("image must be at least 2x2");
        }
        if self.frames < 2 {
            return bad("need at least 2 frames");
        }
        if self.keyframe_every == 0 {
            return bad("keyframe_every must be >= 1");
        }
        if !(self.meters_per_pixel > 0.0) || !(self.frame_interval > 0.0) {
            return bad("meters_per_pixel and frame_interval must be positive");
        }
        for o in &self.objects {
            if !(o.size[0] >= 1.0 && o.size[1] >= 1.0) {
                return bad("objects must be at least 1x1 px");
            }
            if !(0.0..=1.0).contains(&o.visibility) || !(o.distance >= 0.0) {
                return bad("object visibility/distance out of range");
            }
        }
        for (index, o) in self.objects.iter().enumerate() {
            for frame in 0..self.frames {
                let (x, y) = o.top_left(frame);
                if x < 0.0
                    || y < 0.0
                    || x + o.size[0] > self.width as f64
                    || y + o.size[1] > self.height as f64
                {
                    return Err(SynthError::ObjectLeavesFrame {
                        index,
                        frame,
                        width: self.width,
                        height: self.height,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn timestamp(&self, frame: usize) -> Micros {
        (frame as f64 * self.frame_interval * 1e6).round() as Micros
    }

    fn is_keyframe(&self, frame: usize) -> bool {
        frame.is_multiple_of(self.keyframe_every)
    }

    /// Ground-plane speed the config intends for object `i`, m/s.
    pub fn intended_speed(&self, i: usize) -> f64 {
        let o = &self.objects[i];
        let dx = o.velocity[0] - self.ego_motion[0];
        let dy = o.velocity[1] - self.ego_motion[1];
        dx.hypot(dy) * self.meters_per_pixel / self.frame_interval
    }

    pub fn intended_label(&self, i: usize) -> MotionLabel {
        classify_motion(self.intended_speed(i), MOVING_THRESHOLD_MPS).expect("speed is non-negative")
    }
}

impl SynthObject {
    fn top_left(&self, frame: usize) -> (f64, f64) {
        (
            self.position[0] + self.velocity[0] * frame as f64,
            self.position[1] + self.velocity[1] * frame as f64,
        )
    }

    /// Whether the pixel centered at `(x + 0.5, y + 0.5)` is covered at `frame`.
    fn covers(&self, frame: usize, x: usize, y: usize) -> bool {
        let (ox, oy) = self.top_left(frame);
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        cx >= ox && cx < ox + self.size[0] && cy >= oy && cy < oy + self.size[1]
    }

    fn corners(&self, frame: usize) -> Vec<[f64; 2]> {
        let (x, y) = self.top_left(frame);
        let (w, h) = (self.size[0], self.size[1]);
        // front face is the full rectangle, back face a 10% inset of it
        let (ix, iy) = (0.1 * w, 0.1 * h);
        vec![
            [x, y],
            [x + w, y],
            [x + w, y + h],
            [x, y + h],
            [x + ix, y + iy],
            [x + w - ix, y + iy],
            [x + w - ix, y + h - iy],
            [x + ix, y + h - iy],
        ]
    }
}

/// Smoothed uniform noise on a `w x h` grid, rescaled to `[lo, hi]`.
#[derive(Debug, Clone)]
struct Texture {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Texture {
    fn noise(w: usize, h: usize, radius: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut data: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
        for _ in 0..3 {
            data = box_blur(&data, w, h, radius);
        }
        let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if max > min { max - min } else { 1.0 };
        for v in &mut data {
            *v = lo + (hi - lo) * (*v - min) / span;
        }
        Self { w, h, data }
    }

    /// Bilinear lookup with texel centers at integer coordinates, edge clamped.
    fn sample(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.w - 1) as f64);
        let yc = y.clamp(0.0, (self.h - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let at = |x: usize, y: usize| self.data[y * self.w + x];
        let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
        let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

fn box_blur(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return src.to_vec();
    }
    let r = r as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for d in -r..=r {
                let xx = (x as isize + d).clamp(0, w as isize - 1) as usize;
                s += src[y * w + xx];
            }
            tmp[y * w + x] = s / (2 * r + 1) as f64;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for d in -r..=r {
                let yy = (y as isize + d).clamp(0, h as isize - 1) as usize;
                s += tmp[yy * w + x];
            }
            out[y * w + x] = s / (2 * r + 1) as f64;
        }
    }
    out
}

/// A generated scene held in memory.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub config: SynthSceneConfig,
    pub record: SceneRecord,
    pub images: Vec<GrayImage>,
    /// Ground-truth flow keyed by the head frame of each keyframe pair.
    pub flows: Vec<(usize, FlowField)>,
    pub tracks: Vec<TrackedObject>,
}

impl SynthScene {
    pub fn image_name(frame: usize) -> String {
        format!("frames/{frame:04}.png")
    }

    pub fn flow_name(frame: usize) -> String {
        format!("flow/{frame:04}.npy")
    }

    pub fn dir_name(&self) -> String {
        format!("scene_{}", self.record.scene_id)
    }

    /// Writes `scene_<id>/{meta.json, frames/*.png, flow/*.npy}` under `root`.
    pub fn write(&self, root: &Path) -> Result<PathBuf, SynthError> {
        let dir = root.join(self.dir_name());
        for sub in ["frames", "flow"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|source| SynthError::Io {
                path: p.display().to_string(),
                source,
            })?;
        }
        for (i, img) in self.images.iter().enumerate() {
            let p = dir.join(Self::image_name(i));
            img.to_luma8().save(&p).map_err(|source| SynthError::Image {
                path: p.display().to_string(),
                source,
            })?;
        }
        for (i, flow) in &self.flows {
            save_npy(dir.join(Self::flow_name(*i)), flow)?;
        }
        SceneDir {
            dir: dir.clone(),
            record: self.record.clone(),
        }
        .save()?;
        Ok(dir)
    }
}

/// Renders a scene and its ground truth.
pub fn generate(cfg: &SynthSceneConfig) -> Result<SynthScene, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let radius = cfg.smoothness;

    // background must cover every translated frame
    let travel = |c: f64| (c.abs() * (cfg.frames - 1) as f64).ceil() as usize;
    let pad_x = travel(cfg.ego_motion[0]) + 2;
    let pad_y = travel(cfg.ego_motion[1]) + 2;
    let bg = Texture::noise(
        cfg.width + 2 * pad_x,
        cfg.height + 2 * pad_y,
        radius,
        0.15,
        0.85,
        &mut rng,
    );
    let textures: Vec<Texture> = cfg
        .objects
        .iter()
        .map(|o| {
            let w = o.size[0].ceil() as usize + 2;
            let h = o.size[1].ceil() as usize + 2;
            let lo = (0.3 + o.contrast).clamp(0.0, 1.0);
            let hi = (0.7 + o.contrast).clamp(0.0, 1.0);
            Texture::noise(w, h, (radius / 2).max(1), lo, hi, &mut rng)
        })
        .collect();

    let mut images = Vec::with_capacity(cfg.frames);
    for k in 0..cfg.frames {
        let ex = cfg.ego_motion[0] * k as f64;
        let ey = cfg.ego_motion[1] * k as f64;
        let img = GrayImage::from_fn(cfg.width, cfg.height, |x, y| {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            for (o, tex) in cfg.objects.iter().zip(&textures) {
                if o.covers(k, x, y) {
                    let (ox, oy) = o.top_left(k);
                    // +1 for the texture border, -0.5 to move from pixel edge to texel center
                    return tex.sample(cx - ox + 0.5, cy - oy + 0.5) as f32;
                }
            }
            bg.sample(cx - ex + pad_x as f64 - 0.5, cy - ey + pad_y as f64 - 0.5) as f32
        })
        .map_err(|e| SynthError::Config(e.to_string()))?;
        images.push(img);
    }

    let keyframes: Vec<usize> = (0..cfg.frames).filter(|k| cfg.is_keyframe(*k)).collect();
    let mut flows = Vec::new();
    for pair in keyframes.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let n = (b - a) as f32;
        let flow = FlowField::from_fn(cfg.width, cfg.height, |x, y| {
            match cfg.objects.iter().find(|o| o.covers(a, x, y)) {
                Some(o) => (o.velocity[0] as f32 * n, o.velocity[1] as f32 * n),
                None => (cfg.ego_motion[0] as f32 * n, cfg.ego_motion[1] as f32 * n),
            }
        })?;
        flows.push((a, flow));
    }

    let object_id = |i: usize| format!("{}-obj{i}", cfg.scene_id);
    let position = |o: &SynthObject, k: usize| {
        let (x, y) = o.top_left(k);
        let cx = x + o.size[0] / 2.0 - cfg.ego_motion[0] * k as f64;
        let cy = y + o.size[1] / 2.0 - cfg.ego_motion[1] * k as f64;
        [cx * cfg.meters_per_pixel, cy * cfg.meters_per_pixel, 0.0]
    };

    let frames: Vec<FrameRecord> = (0..cfg.frames)
        .map(|k| {
            let key = cfg.is_keyframe(k);
            let annotations = if key {
                cfg.objects
                    .iter()
                    .enumerate()
                    .map(|(i, o)| Annotation {
                        object_id: object_id(i),
                        category: o.category.clone(),
                        corners: o.corners(k),
                        position: position(o, k),
                        visibility: o.visibility,
                        distance: o.distance,
                    })
                    .collect()
            } else {
                Vec::new()
            };
            FrameRecord {
                timestamp: cfg.timestamp(k),
                is_keyframe: key,
                image: SynthScene::image_name(k),
                flow: flows
                    .iter()
                    .any(|(a, _)| *a == k)
                    .then(|| SynthScene::flow_name(k)),
                annotations,
            }
        })
        .collect();

    let record = SceneRecord {
        scene_id: cfg.scene_id.clone(),
        description: cfg.description.clone(),
        ego_positions: (0..cfg.frames)
            .map(|k| {
                [
                    cfg.timestamp(k) as f64,
                    cfg.ego_motion[0] * k as f64 * cfg.meters_per_pixel,
                    cfg.ego_motion[1] * k as f64 * cfg.meters_per_pixel,
                    0.0,
                ]
            })
            .collect(),
        frames,
    };
    let tracks = record.tracks()?;

    Ok(SynthScene {
        config: cfg.clone(),
        record,
        images,
        flows,
        tracks,
    })
}

/// How object speeds are drawn across a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeedPlan {
    /// Alternate moving objects (speed drawn from `moving`) with still objects
    /// (speed drawn from `still`), so the two classes are balanced.
    Balanced { moving: [f64; 2], still: [f64; 2] },
    /// Every speed drawn uniformly from the range; labels follow the threshold.
    Uniform { range: [f64; 2] },
}

/// Parameters for a batch of one-object scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub scenes: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub keyframe_every: usize,
    pub smoothness: usize,
    /// Object side range in pixels.
    pub object_size: [f64; 2],
    pub speeds: SpeedPlan,
    /// Direction of travel in degrees, counter-clockwise from the +x axis.
    pub headings: [f64; 2],
    pub contrast: [f64; 2],
    pub distance: [f64; 2],
    pub meters_per_pixel: f64,
    pub frame_interval: f64,
    pub ego_motion: [f64; 2],
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            scenes: 200,
            width: 64,
            height: 64,
            frames: 2,
            keyframe_every: 1,
            smoothness: 2,
            object_size: [8.0, 12.0],
            speeds: SpeedPlan::Balanced {
                moving: [4.0, 6.0],
                still: [0.0, 0.0],
            },
            headings: [0.0, 360.0],
            contrast: [-0.15, 0.15],
            distance: [35.0, 65.0],
            meters_per_pixel: 0.5,
            frame_interval: 0.5,
            ego_motion: [0.0, 0.0],
            seed: 0,
        }
    }
}

/// Expands a suite into per-scene configs. Each scene holds one vehicle placed so it
/// stays inside the frame, moving in a random direction.
pub fn suite_scenes(suite: &SuiteConfig) -> Result<Vec<SynthSceneConfig>, SynthError> {
    if suite.scenes == 0 {
        return Err(SynthError::Config("suite needs at least one scene".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(suite.seed);
    let categories = crate::dataset::VEHICLE_CATEGORIES;
    let draw = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
        if r[1] > r[0] {
            rng.random_range(r[0]..r[1])
        } else {
            r[0]
        }
    };
    let mut out = Vec::with_capacity(suite.scenes);
    for i in 0..suite.scenes {
        let speed = match &suite.speeds {
            SpeedPlan::Balanced { moving, still } => {
                if i % 2 == 0 {
                    draw(&mut rng, *moving)
                } else {
                    draw(&mut rng, *still)
                }
            }
            SpeedPlan::Uniform { range } => draw(&mut rng, *range),
        };
        let angle = draw(&mut rng, suite.headings).to_radians();
        let px_per_frame = speed * suite.frame_interval / suite.meters_per_pixel;
        let velocity = [
            px_per_frame * angle.cos() + suite.ego_motion[0],
            px_per_frame * angle.sin() + suite.ego_motion[1],
        ];
        let side = draw(&mut rng, suite.object_size);
        let aspect = rng.random_range(0.75..1.25);
        let size = [side, (side * aspect).max(1.0)];

        // keep the whole trajectory inside the image with a small margin
        let steps = (suite.frames - 1) as f64;
        let span_x = velocity[0] * steps;
        let span_y = velocity[1] * steps;
        let lo_x = 2.0 - span_x.min(0.0);
        let hi_x = suite.width as f64 - 2.0 - size[0] - span_x.max(0.0);
        let lo_y = 2.0 - span_y.min(0.0);
        let hi_y = suite.height as f64 - 2.0 - size[1] - span_y.max(0.0);
        if hi_x < lo_x || hi_y < lo_y {
            return Err(SynthError::Config(format!(
                "scene {i}: object of {side:.1} px moving {px_per_frame:.2} px/frame does not fit"
            )));
        }
        let position = [draw(&mut rng, [lo_x, hi_x]), draw(&mut rng, [lo_y, hi_y])];
        let object = SynthObject {
            size,
            position,
            velocity,
            contrast: draw(&mut rng, suite.contrast),
            category: categories[rng.random_range(0..categories.len())].to_string(),
            distance: draw(&mut rng, suite.distance),
            visibility: 1.0,
        };
        out.push(SynthSceneConfig {
            scene_id: format!("s{:04}", i),
            description: "synthetic, clear day".into(),
            width: suite.width,
            height: suite.height,
            smoothness: suite.smoothness,
            objects: vec![object],
            ego_motion: suite.ego_motion,
            seed: rng.random(),
            frames: suite.frames,
            keyframe_every: suite.keyframe_every,
            meters_per_pixel: suite.meters_per_pixel,
            frame_interval: suite.frame_interval,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::label_object;

    fn one_object(velocity: [f64; 2], mpp: f64, interval: f64) -> SynthSceneConfig {
        SynthSceneConfig {
            scene_id: "t".into(),
            description: "test".into(),
            width: 64,
            height: 48,
            smoothness: 2,
            objects: vec![SynthObject {
                size: [10.0, 8.0],
                position: [20.0, 20.0],
                velocity,
                contrast: 0.1,
                category: "vehicle.car".into(),
                distance: 50.0,
                visibility: 1.0,
            }],
            ego_motion: [0.0, 0.0],
            seed: 11,
            frames: 2,
            keyframe_every: 1,
            meters_per_pixel: mpp,
            frame_interval: interval,
        }
    }

    #[test]
    fn static_scene_has_zero_flow_and_still_label() {
        let s = generate(&one_object([0.0, 0.0], 0.5, 0.5)).unwrap();
        assert_eq!(s.flows.len(), 1);
        assert_eq!(s.flows[0].1.max_magnitude(), 0.0);
        assert_eq!(label_object(&s.tracks[0], 0).unwrap(), MotionLabel::Still);
        assert_eq!(s.images[0], s.images[1]);
    }

    #[test]
    fn ten_pixels_per_frame_is_five_mps() {
        let cfg = one_object([10.0, 0.0], 0.5, 1.0);
        let s = generate(&cfg).unwrap();
        let speed = crate::labeling::keyframe_speed(&s.tracks[0], 0).unwrap();
        assert!((speed - 5.0).abs() < 1e-12);
        assert_eq!(label_object(&s.tracks[0], 0).unwrap(), MotionLabel::Moving);
        assert_eq!(cfg.intended_label(0), MotionLabel::Moving);
    }

    #[test]
    fn deterministic() {
        let cfg = one_object([1.5, -0.5], 0.5, 0.5);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.flows, b.flows);
        assert_eq!(a.record, b.record);
    }

    #[test]
    fn object_leaving_frame_is_rejected() {
        let cfg = one_object([40.0, 0.0], 0.5, 0.5);
        assert!(matches!(
            generate(&cfg),
            Err(SynthError::ObjectLeavesFrame { frame: 1, .. })
        ));
    }

    #[test]
    fn ground_truth_flow_matches_rendering() {
        // integer displacement: every pixel of frame 0 reappears at x + flow in frame 1
        let mut cfg = one_object([3.0, 1.0], 0.5, 0.5);
        cfg.ego_motion = [-1.0, 0.0];
        let s = generate(&cfg).unwrap();
        let flow = &s.flows[0].1;
        let (a, b) = (&s.images[0], &s.images[1]);
        let mut checked = 0;
        for y in 4..44 {
            for x in 4..60 {
                let (u, v) = flow.get(x, y);
                let (tx, ty) = ((x as f32 + u) as usize, (y as f32 + v) as usize);
                // skip pixels uncovered/covered by the object between the frames
                let o = &cfg.objects[0];
                let in_obj_a = o.covers(0, x, y);
                if !in_obj_a && o.covers(1, tx, ty) {
                    continue;
                }
                assert!((a.get(x, y) - b.get(tx, ty)).abs() < 1e-6, "({x},{y})");
                checked += 1;
            }
        }
        assert!(checked > 2000);
        let (u, v) = flow.get(25, 24);
        assert_eq!((u, v), (3.0, 1.0));
        let (u, v) = flow.get(2, 2);
        assert_eq!((u, v), (-1.0, 0.0));
    }

    #[test]
    fn labels_follow_intended_speed() {
        for plan in [
            SpeedPlan::Balanced {
                moving: [4.0, 6.0],
                still: [0.0, 0.0],
            },
            SpeedPlan::Uniform { range: [1.5, 2.5] },
        ] {
            let suite = SuiteConfig {
                scenes: 40,
                speeds: plan,
                seed: 5,
                ..Default::default()
            };
            for cfg in suite_scenes(&suite).unwrap() {
                let s = generate(&cfg).unwrap();
                let speed = cfg.intended_speed(0);
                if (speed - MOVING_THRESHOLD_MPS).abs() < 1e-9 {
                    continue;
                }
                assert_eq!(label_object(&s.tracks[0], 0).unwrap(), cfg.intended_label(0));
            }
        }
    }

    #[test]
    fn balanced_suite_is_balanced() {
        let cfgs = suite_scenes(&SuiteConfig {
            scenes: 20,
            ..Default::default()
        })
        .unwrap();
        let moving = (0..20)
            .filter(|i| cfgs[*i].intended_label(0) == MotionLabel::Moving)
            .count();
        assert_eq!(moving, 10);
    }

    #[test]
    fn headings_bound_direction() {
        let cfgs = suite_scenes(&SuiteConfig {
            scenes: 30,
            headings: [-20.0, 20.0],
            ..Default::default()
        })
        .unwrap();
        for cfg in cfgs.iter().filter(|c| c.intended_label(0) == MotionLabel::Moving) {
            let [vx, vy] = cfg.objects[0].velocity;
            assert!(vx > 0.0 && vy.atan2(vx).abs() <= 20f64.to_radians() + 1e-12);
        }
    }

    #[test]
    fn writes_scene_tree() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = one_object([1.0, 0.0], 0.5, 0.5);
        cfg.frames = 5;
        cfg.keyframe_every = 2;
        let s = generate(&cfg).unwrap();
        let dir = s.write(tmp.path()).unwrap();
        assert!(dir.ends_with("scene_t"));
        let loaded = SceneDir::load(&dir).unwrap();
        assert_eq!(loaded.record, s.record);
        let heads: Vec<usize> = loaded
            .record
            .frames
            .iter()
            .enumerate()
            .filter(|(_, f)| f.flow.is_some())
            .map(|(i, _)| i)
            .collect();
        assert_eq!(heads, [0, 2]);
        assert!(loaded.record.frames[1].annotations.is_empty());
        let f = crate::flowcore::load_npy(dir.join("flow/0002.npy")).unwrap();
        assert_eq!(f, s.flows[1].1);
        assert_eq!(f.get(25, 24), (2.0, 0.0));
        let img = GrayImage::load(dir.join("frames/0003.png")).unwrap();
        assert_eq!((img.width(), img.height()), (64, 48));
    }
}
