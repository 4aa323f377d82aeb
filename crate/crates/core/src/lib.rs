//! Vision-guided aggregate sorting toolkit.

// Guards like `!(x > 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod dataset;
pub mod detection;
pub mod geometry;
pub mod handeye;
pub mod kinematics;
pub mod simulator;
pub mod sizing;
pub mod stereo;
