//! Motion ground truth from global positions, keyframe box interpolation and label
//! propagation to non-keyframes.

use serde::{Deserialize, Serialize};

use crate::bboxprep::Box2D;

/// Speed at or above which an object counts as moving, in m/s.
pub const MOVING_THRESHOLD_MPS: f64 = 2.0;

/// Timestamps are integer microseconds.
pub type Micros = i64;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LabelError {
    #[error("timestamps out of order: {t1} >= {t2}")]
    TemporalOrder { t1: Micros, t2: Micros },
    #[error("speed must be a non-negative number, got {0}")]
    NegativeSpeed(f64),
    #[error("threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("observation {0} has no later keyframe to pair with")]
    InsufficientTrack(usize),
    #[error("observation {0} is not a keyframe")]
    NotKeyframe(usize),
    #[error("time {t} outside interpolation interval [{t_a}, {t_b}]")]
    Extrapolation { t: Micros, t_a: Micros, t_b: Micros },
    #[error("no keyframe at or before {0}")]
    NoPredecessor(Micros),
    #[error("invalid track: {0}")]
    InvalidTrack(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MotionLabel {
    Still,
    Moving,
}

impl MotionLabel {
    /// 1 for `Moving`, 0 for `Still`.
    pub fn as_target(self) -> f32 {
        match self {
            MotionLabel::Still => 0.0,
            MotionLabel::Moving => 1.0,
        }
    }

    pub fn is_moving(self) -> bool {
        self == MotionLabel::Moving
    }
}

impl std::fmt::Display for MotionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MotionLabel::Still => "still",
            MotionLabel::Moving => "moving",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub timestamp: Micros,
    /// Global-frame position in meters.
    pub position: [f64; 3],
    /// Eight projected corners of the 3D box, image pixels.
    pub corners: Vec<[f64; 2]>,
    pub visibility: f64,
    pub is_keyframe: bool,
}

/// One annotated object across a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedObject {
    pub object_id: String,
    pub category: String,
    observations: Vec<Observation>,
}

impl TrackedObject {
    pub fn new(
        object_id: impl Into<String>,
        category: impl Into<String>,
        observations: Vec<Observation>,
    ) -> Result<Self, LabelError> {
        if observations.is_empty() {
            return Err(LabelError::InvalidTrack("no observations".into()));
        }
        if observations
            .windows(2)
            .any(|w| w[0].timestamp >= w[1].timestamp)
        {
            return Err(LabelError::InvalidTrack(
                "timestamps not strictly increasing".into(),
            ));
        }
        if let Some(o) = observations
            .iter()
            .find(|o| !(0.0..=1.0).contains(&o.visibility))
        {
            return Err(LabelError::InvalidTrack(format!(
                "visibility {} outside [0, 1]",
                o.visibility
            )));
        }
        Ok(Self {
            object_id: object_id.into(),
            category: category.into(),
            observations,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }
}

/// Component-wise `(p2 - p1) / (t2 - t1)` in m/s for microsecond timestamps.
pub fn velocity(p1: [f64; 3], p2: [f64; 3], t1: Micros, t2: Micros) -> Result<[f64; 3], LabelError> {
    if t2 <= t1 {
        return Err(LabelError::TemporalOrder { t1, t2 });
    }
    let dt = (t2 - t1) as f64 * 1e-6;
    Ok([(p2[0] - p1[0]) / dt, (p2[1] - p1[1]) / dt, (p2[2] - p1[2]) / dt])
}

/// Euclidean norm of the ground-plane `(x, y)` components.
pub fn planar_speed(v: [f64; 3]) -> f64 {
    v[0].hypot(v[1])
}

/// `Moving` iff `speed >= threshold`.
pub fn classify_motion(speed: f64, threshold: f64) -> Result<MotionLabel, LabelError> {
    if !(speed >= 0.0) || !speed.is_finite() {
        return Err(LabelError::NegativeSpeed(speed));
    }
    if !(threshold > 0.0) {
        return Err(LabelError::Threshold(threshold));
    }
    Ok(if speed >= threshold {
        MotionLabel::Moving
    } else {
        MotionLabel::Still
    })
}

/// Planar speed between keyframe `at` and the next keyframe of the track.
pub fn keyframe_speed(obj: &TrackedObject, at: usize) -> Result<f64, LabelError> {
    let obs = obj.observations();
    let a = obs.get(at).ok_or(LabelError::InsufficientTrack(at))?;
    if !a.is_keyframe {
        return Err(LabelError::NotKeyframe(at));
    }
    let b = obs[at + 1..]
        .iter()
        .find(|o| o.is_keyframe)
        .ok_or(LabelError::InsufficientTrack(at))?;
    let v = velocity(a.position, b.position, a.timestamp, b.timestamp)?;
    Ok(planar_speed(v))
}

/// Motion label at keyframe `at`, using the next keyframe as the velocity partner.
pub fn label_object(obj: &TrackedObject, at: usize) -> Result<MotionLabel, LabelError> {
    classify_motion(keyframe_speed(obj, at)?, MOVING_THRESHOLD_MPS)
}

/// Linear interpolation of every box coordinate at time `t` in `[t_a, t_b]`.
pub fn interpolate_box(
    box_a: &Box2D,
    t_a: Micros,
    box_b: &Box2D,
    t_b: Micros,
    t: Micros,
) -> Result<Box2D, LabelError> {
    if t_b <= t_a {
        return Err(LabelError::TemporalOrder { t1: t_a, t2: t_b });
    }
    if t < t_a || t > t_b {
        return Err(LabelError::Extrapolation { t, t_a, t_b });
    }
    if t == t_a {
        return Ok(*box_a);
    }
    if t == t_b {
        return Ok(*box_b);
    }
    let w = (t - t_a) as f64 / (t_b - t_a) as f64;
    let lerp = |a: f64, b: f64| a + (b - a) * w;
    Ok(Box2D {
        xmin: lerp(box_a.xmin, box_b.xmin),
        xmax: lerp(box_a.xmax, box_b.xmax),
        ymin: lerp(box_a.ymin, box_b.ymin),
        ymax: lerp(box_a.ymax, box_b.ymax),
    })
}

/// Label of the latest keyframe at or before `query_t`.
///
/// `keyframes` must be sorted by timestamp.
pub fn propagate_label(
    keyframes: &[(Micros, MotionLabel)],
    query_t: Micros,
) -> Result<MotionLabel, LabelError> {
    let n = keyframes.partition_point(|(t, _)| *t <= query_t);
    if n == 0 {
        return Err(LabelError::NoPredecessor(query_t));
    }
    Ok(keyframes[n - 1].1)
}
