//! Kinematic hand prior: skeleton template, forward kinematics, camera,
//! rendering, encoders and the synthetic dataset.

pub mod dataset;
pub mod kinematics;
pub mod network;
pub mod render;
pub mod skeleton;

pub use dataset::{load_dataset, sample_synthetic, save_dataset, Sample};
pub use kinematics::{
    apply_camera, decode_params, forward_kinematics, rodrigues, HandParams, Pose3D, NUM_PARAMS,
};
pub use network::{hand_model_op, Encoder, HandModelNet, FEATURE_DIM, LATENT_DIM};
pub use render::{project_2d, render, Pose2D, Rendering};
pub use skeleton::{SkeletonTemplate, NUM_BONES, NUM_JOINTS};
