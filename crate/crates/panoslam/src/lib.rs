//! Lidar SLAM on a graph of panoramic depth-and-normal keyframes.
//!
//! The world model is a pose graph whose nodes are panoramic depth images:
//! each incoming lidar sweep is de-rotated with gyro data, projected into a
//! panorama, registered to the current keyframe with projective point-to-plane
//! ICP, and fused into it with a saturating weighted average. When
//! registration quality drops, nearby keyframes are searched for strong or
//! weak loop closures, and a gravity-anchored pose graph is re-optimized.
//! A built-in sweep simulator and a trajectory evaluator close the loop for
//! end-to-end verification.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run --release --example simulate_dataset
//! cargo run --release --example run_slam_loop
//! cargo run --release --example register_sweeps
//! cargo run --release --example optimize_pose_graph
//! cargo run --release --example evaluate_trajectory
//! ```
//!
//! or the `panoslam` binary (`slam run`, `sim generate`, `eval ate`,
//! `map export`).

pub mod error;
pub mod eval;
pub mod geometry;
pub mod imu;
pub mod mapper;
pub mod panorama;

pub mod pipeline;
pub mod pose_graph;
pub mod registration;
pub mod sim;
pub mod sweep;

pub use error::{Error, Result};
