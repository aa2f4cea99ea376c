//! Optical-flow based still/moving classification of annotated vehicles.

pub mod bboxprep;
pub mod classifier;
pub mod dataset;
pub mod flowcore;
pub mod flowestim;
pub mod labeling;
pub mod metrics;
pub mod synth;

pub use bboxprep::Box2D;
pub use classifier::ModelParams;
pub use flowcore::FlowField;
pub use labeling::{MotionLabel, TrackedObject};
