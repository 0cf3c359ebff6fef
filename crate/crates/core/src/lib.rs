//! Anchor-parameterized render-and-compare pose refinement: geometry, a
//! software rasterizer, the pose update and its loss, coarse hypothesis
//! scoring, and a synthetic scene generator for experiments.

// `!(x > 0.0)` style tests are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coarse;
pub mod geometry;
pub mod hypotheses;
pub mod loss;
pub mod mesh;
pub mod metrics;
pub mod pose_update;
pub mod refiner;
pub mod render;
pub mod scene;

pub use coarse::{CoarseConfig, ScorerKind};
pub use geometry::{CameraModel, Mat3, PerturbationConfig, Pose, RngStream, Vec3};
pub use hypotheses::{BasinThresholds, Detection2D, HypothesisSet, Label};
pub use mesh::{AnchorPoint, ObjectModel, TriMesh};
pub use metrics::{PoseError, ResultRecord};
pub use pose_update::{AnchoredPose, PoseUpdate};
pub use refiner::{PredictorKind, RefineConfig};
pub use render::{Channels, DepthMap, RenderedView, ViewSetSpec};
pub use scene::{Scene, SceneSpec};
