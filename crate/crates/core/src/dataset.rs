//! Scene metadata ingestion, filtering, frame-pair construction, sample labeling,
//! train/eval splitting and augmentation.
//!
//! Scene metadata is one JSON document per scene (`meta.json`). Paths inside it are
//! relative to the directory holding the document.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bboxprep::{box_from_corners, BoxError, Box2D};
use crate::flowcore::FlowField;
use crate::labeling::{
    interpolate_box, label_object, propagate_label, LabelError, Micros, MotionLabel, Observation,
    TrackedObject,
};

/// File name of the per-scene metadata document.
pub const SCENE_META: &str = "meta.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid scene {scene}: {reason}")]
    InvalidScene { scene: String, reason: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Box(#[from] BoxError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub object_id: String,
    pub category: String,
    pub corners: Vec<[f64; 2]>,
    pub position: [f64; 3],
    pub visibility: f64,
    /// Distance from the ego vehicle in meters.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub timestamp: Micros,
    pub is_keyframe: bool,
    pub image: String,
    pub flow: Option<String>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub description: String,
    /// `[timestamp_us, x, y, z]` rows.
    #[serde(default)]
    pub ego_positions: Vec<[f64; 4]>,
    pub frames: Vec<FrameRecord>,
}

impl SceneRecord {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |reason: String| DatasetError::InvalidScene {
            scene: self.scene_id.clone(),
            reason,
        };
        if self.frames.windows(2).any(|w| w[0].timestamp >= w[1].timestamp) {
            return Err(invalid("frame timestamps not strictly increasing".into()));
        }
        for f in &self.frames {
            for a in &f.annotations {
                if a.corners.len() != 8 {
                    return Err(invalid(format!(
                        "annotation {} has {} corners",
                        a.object_id,
                        a.corners.len()
                    )));
                }
                if !(a.distance >= 0.0) || !(0.0..=1.0).contains(&a.visibility) {
                    return Err(invalid(format!(
                        "annotation {} has distance {} / visibility {}",
                        a.object_id, a.distance, a.visibility
                    )));
                }
            }
        }
        Ok(())
    }

    /// Groups annotations by object id into time-ordered tracks.
    pub fn tracks(&self) -> Result<Vec<TrackedObject>, DatasetError> {
        let mut by_id: BTreeMap<&str, (String, Vec<Observation>)> = BTreeMap::new();
        for f in &self.frames {
            for a in &f.annotations {
                let entry = by_id
                    .entry(a.object_id.as_str())
                    .or_insert_with(|| (a.category.clone(), Vec::new()));
                entry.1.push(Observation {
                    timestamp: f.timestamp,
                    position: a.position,
                    corners: a.corners.clone(),
                    visibility: a.visibility,
                    is_keyframe: f.is_keyframe,
                });
            }
        }
        by_id
            .into_iter()
            .map(|(id, (cat, obs))| Ok(TrackedObject::new(id, cat, obs)?))
            .collect()
    }
}

/// A scene document together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct SceneDir {
    pub dir: PathBuf,
    pub record: SceneRecord,
}

impl SceneDir {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(SCENE_META);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let record: SceneRecord = serde_json::from_str(&text).map_err(|source| DatasetError::Json {
            path: path.display().to_string(),
            source,
        })?;
        record.validate()?;
        Ok(Self { dir, record })
    }

    pub fn save(&self) -> Result<(), DatasetError> {
        std::fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let path = self.dir.join(SCENE_META);
        let mut text = serde_json::to_string_pretty(&self.record).expect("scene serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }
}

/// Annotation and scene filter settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterCriteria {
    pub categories: BTreeSet<String>,
    pub min_distance: f64,
    pub max_distance: f64,
    pub min_visibility: f64,
    pub max_visibility: f64,
    pub sensor: String,
    pub scene_exclusion_keywords: BTreeSet<String>,
}

/// The seven vehicle categories kept for training.
pub const VEHICLE_CATEGORIES: [&str; 7] = [
    "vehicle.car",
    "vehicle.emergency.ambulance",
    "vehicle.emergency.police",
    "vehicle.truck",
    "vehicle.bus.bendy",
    "vehicle.bus.rigid",
    "vehicle.construction",
];

impl Default for FilterCriteria {
    /// Distant vehicles, 30-70 m, at least 80% visible, front camera, daytime dry scenes.
    fn default() -> Self {
        Self {
            categories: VEHICLE_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            min_distance: 30.0,
            max_distance: 70.0,
            min_visibility: 0.8,
            max_visibility: 1.0,
            sensor: "CAM_FRONT".into(),
            scene_exclusion_keywords: ["night", "rain", "lightning"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl FilterCriteria {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.min_distance > self.max_distance || self.min_visibility > self.max_visibility {
            return Err(DatasetError::Argument(
                "filter range has min greater than max".into(),
            ));
        }
        Ok(())
    }

    /// Closed-interval category/distance/visibility test.
    pub fn accepts(&self, a: &Annotation) -> bool {
        self.categories.contains(&a.category)
            && (self.min_distance..=self.max_distance).contains(&a.distance)
            && (self.min_visibility..=self.max_visibility).contains(&a.visibility)
    }

    pub fn excludes_scene(&self, description: &str) -> bool {
        let d = description.to_lowercase();
        self.scene_exclusion_keywords
            .iter()
            .any(|k| d.contains(&k.to_lowercase()))
    }
}

/// Drops scenes whose description mentions an exclusion keyword (case-insensitive).
pub fn filter_scenes(scenes: Vec<SceneRecord>, criteria: &FilterCriteria) -> Vec<SceneRecord> {
    scenes
        .into_iter()
        .filter(|s| !criteria.excludes_scene(&s.description))
        .collect()
}

pub fn filter_annotations(frame: &FrameRecord, criteria: &FilterCriteria) -> Vec<Annotation> {
    frame
        .annotations
        .iter()
        .filter(|a| criteria.accepts(a))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairMode {
    /// Each keyframe paired with the next keyframe.
    KeyframesOnly,
    /// Frame `i` paired with frame `i + n`, `i` stepping by `n` from 0.
    EveryNFrames(usize),
}

/// Frame index pairs `(a, b)` with `timestamp(a) < timestamp(b)`.
pub fn build_pairs(scene: &SceneRecord, mode: PairMode) -> Result<Vec<(usize, usize)>, DatasetError> {
    match mode {
        PairMode::KeyframesOnly => {
            let keys: Vec<usize> = (0..scene.frames.len())
                .filter(|&i| scene.frames[i].is_keyframe)
                .collect();
            Ok(keys.windows(2).map(|w| (w[0], w[1])).collect())
        }
        PairMode::EveryNFrames(n) => {
            if n == 0 {
                return Err(DatasetError::Argument("frame interval must be >= 1".into()));
            }
            Ok((0..scene.frames.len())
                .step_by(n)
                .filter(|i| i + n < scene.frames.len())
                .map(|i| (i, i + n))
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub index: usize,
    pub timestamp: Micros,
}

/// One object in one frame pair, ready for ROI extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub scene_id: String,
    pub object_id: String,
    pub category: String,
    pub frame_a: FrameRef,
    pub frame_b: FrameRef,
    /// Flow file of the pair.
    pub flow: PathBuf,
    pub roi_box: Box2D,
    pub label: MotionLabel,
    pub distance: f64,
    /// True when the box and label were carried over from keyframes.
    #[serde(default)]
    pub interpolated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<MotionLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f32>,
}

/// Builds labeled samples for every pair of a scene.
///
/// Keyframe annotations are used directly. For non-keyframes the box is interpolated
/// between the surrounding keyframes and the label is taken from the closest previous
/// keyframe; filter attributes also come from that keyframe. Objects whose keyframe
/// has no successor (no velocity partner) are skipped. Pairs whose head frame has no
/// flow reference are skipped.
pub fn build_samples(
    scene: &SceneDir,
    mode: PairMode,
    criteria: &FilterCriteria,
) -> Result<Vec<SampleRecord>, DatasetError> {
    let rec = &scene.record;
    let tracks = rec.tracks()?;
    let mut samples = Vec::new();

    for (a, b) in build_pairs(rec, mode)? {
        let fa = &rec.frames[a];
        let Some(flow_ref) = fa.flow.as_deref() else {
            log::warn!("scene {}: frame {a} heads a pair but has no flow", rec.scene_id);
            continue;
        };
        for track in &tracks {
            let Some(sample) = object_sample(rec, &tracks_keyframe_labels(track), track, a, criteria)?
            else {
                continue;
            };
            let (roi_box, label, ann, interpolated) = sample;
            samples.push(SampleRecord {
                sample_id: format!("{}/{:04}/{}", rec.scene_id, a, track.object_id),
                scene_id: rec.scene_id.clone(),
                object_id: track.object_id.clone(),
                category: ann.category.clone(),
                frame_a: FrameRef {
                    index: a,
                    timestamp: fa.timestamp,
                },
                frame_b: FrameRef {
                    index: b,
                    timestamp: rec.frames[b].timestamp,
                },
                flow: scene.resolve(flow_ref),
                roi_box,
                label,
                distance: ann.distance,
                interpolated,
                split: None,
                roi: None,
                prediction: None,
                probability: None,
            });
        }
    }
    Ok(samples)
}

/// `(timestamp, label)` for every keyframe observation that has a successor keyframe.
fn tracks_keyframe_labels(track: &TrackedObject) -> Vec<(Micros, MotionLabel)> {
    track
        .observations()
        .iter()
        .enumerate()
        .filter(|(_, o)| o.is_keyframe)
        .filter_map(|(i, o)| label_object(track, i).ok().map(|l| (o.timestamp, l)))
        .collect()
}

type ObjectSample<'a> = (Box2D, MotionLabel, &'a Annotation, bool);

fn object_sample<'a>(
    rec: &'a SceneRecord,
    keyframe_labels: &[(Micros, MotionLabel)],
    track: &TrackedObject,
    frame: usize,
    criteria: &FilterCriteria,
) -> Result<Option<ObjectSample<'a>>, DatasetError> {
    let t = rec.frames[frame].timestamp;
    let find_ann = |fi: usize| {
        rec.frames[fi]
            .annotations
            .iter()
            .find(|a| a.object_id == track.object_id)
    };

    if rec.frames[frame].is_keyframe {
        let Some(ann) = find_ann(frame) else {
            return Ok(None);
        };
        if !criteria.accepts(ann) {
            return Ok(None);
        }
        let Some(&(_, label)) = keyframe_labels.iter().find(|(kt, _)| *kt == t) else {
            return Ok(None);
        };
        return Ok(Some((box_from_corners(&ann.corners)?, label, ann, false)));
    }

    // non-keyframe: bracket with the track's keyframes
    let obs = track.observations();
    let prev = obs.iter().rev().find(|o| o.is_keyframe && o.timestamp <= t);
    let next = obs.iter().find(|o| o.is_keyframe && o.timestamp > t);
    let (Some(prev), Some(next)) = (prev, next) else {
        return Ok(None);
    };
    let Some(prev_frame) = rec.frames.iter().position(|f| f.timestamp == prev.timestamp) else {
        return Ok(None);
    };
    let Some(ann) = find_ann(prev_frame) else {
        return Ok(None);
    };
    if !criteria.accepts(ann) {
        return Ok(None);
    }
    let label = match propagate_label(keyframe_labels, t) {
        Ok(l) => l,
        Err(LabelError::NoPredecessor(_)) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let b = interpolate_box(
        &box_from_corners(&prev.corners)?,
        prev.timestamp,
        &box_from_corners(&next.corners)?,
        next.timestamp,
        t,
    )?;
    Ok(Some((b, label, ann, true)))
}

/// Assigns every sample to train or eval, keeping each scene in a single split.
///
/// Scenes are taken in sorted id order, shuffled with `rng_seed`, and moved to eval
/// one at a time while doing so brings the eval sample count closer to
/// `eval_fraction * len`. With two or more scenes both splits are non-empty.
pub fn split_samples(
    samples: &mut [SampleRecord],
    eval_fraction: f64,
    rng_seed: u64,
) -> Result<(), DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::Argument("no samples to split".into()));
    }
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(DatasetError::Argument(format!(
            "eval fraction must be in (0, 1), got {eval_fraction}"
        )));
    }
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for s in samples.iter() {
        *sizes.entry(s.scene_id.as_str()).or_default() += 1;
    }
    let mut scenes: Vec<(&str, usize)> = sizes.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    scenes.shuffle(&mut rng);

    let target = eval_fraction * samples.len() as f64;
    let mut eval_count = 0usize;
    let mut eval_scenes: BTreeSet<String> = BTreeSet::new();
    for (id, n) in &scenes {
        let now = (eval_count as f64 - target).abs();
        let then = ((eval_count + n) as f64 - target).abs();
        if then < now {
            eval_count += n;
            eval_scenes.insert(id.to_string());
        }
    }
    if scenes.len() >= 2 {
        if eval_scenes.is_empty() {
            eval_scenes.insert(scenes[0].0.to_string());
        } else if eval_scenes.len() == scenes.len() {
            eval_scenes.remove(scenes[0].0);
        }
    }
    for s in samples.iter_mut() {
        s.split = Some(if eval_scenes.contains(&s.scene_id) {
            Split::Eval
        } else {
            Split::Train
        });
    }
    Ok(())
}

/// Random horizontal flip with probability `p`; the label is flip-invariant.
pub fn augment<R: Rng + ?Sized>(
    roi: &FlowField,
    label: MotionLabel,
    p: f64,
    rng: &mut R,
) -> (FlowField, MotionLabel) {
    assert!((0.0..=1.0).contains(&p), "flip probability must be in [0, 1]");
    if rng.random_bool(p) {
        (roi.hflip(), label)
    } else {
        (roi.clone(), label)
    }
}

/// Writes newline-delimited JSON sample records.
pub fn write_manifest(path: &Path, samples: &[SampleRecord]) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s).expect("sample serializes");
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>, DatasetError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| DatasetError::Json {
            path: format!("{}:{}", path.display(), i + 1),
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Sample counts per split and label, for logging.
pub fn summarize(samples: &[SampleRecord]) -> HashMap<(Option<Split>, MotionLabel), usize> {
    let mut m = HashMap::new();
    for s in samples {
        *m.entry((s.split, s.label)).or_default() += 1;
    }
    m
}
