//! Single-object tracking that combines block motion vectors from a
//! compressed stream with class-labeled detections.
//!
//! The pipeline per inter frame is:
//!
//! 1. [`mvfield::normalize`] the frame's prediction units to integer-pel
//!    vectors that reference the previous frame;
//! 2. build the motion ROI with [`roi::create_roi`] from the previous target box;
//! 3. keep the detections of the target class ([`detect::filter_by_class`]);
//! 4. pick the final box with the adaptive-threshold rule in [`decide`].
//!
//! [`eval`] scores results with one-pass Success/Precision curves, and
//! [`synth`] generates fixtures with known ground truth.

pub mod cli;
pub mod decide;
pub mod detect;
pub mod eval;
pub mod geometry;
pub mod mvfield;
pub mod roi;
pub mod synth;

pub use decide::{track_sequence, DecisionConfig, DecisionState, FrameDecision, Origin, TrackOptions, Tracker};
pub use detect::{Detection, DetectionSet, Detections};
pub use geometry::{center_distance, contains, iou, PixelBox, PixelPoint};
pub use mvfield::{FrameField, MotionVector, MvDump, NormalizedField};
