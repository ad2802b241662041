//! Differentiable Gaussian-splat rendering of articulated objects, joint
//! initialization from 2D annotations, simulated manipulation and
//! gradient-based refinement of joint parameters.

pub mod error;
pub mod experiment;
pub mod io;
pub mod joint_init;
pub mod kinematics;
pub mod loss;
pub mod metrics;
pub mod optimizer;
pub mod render;
pub mod scene;
pub mod se3;
pub mod sim;
pub mod templates;

pub use error::{Error, Result};
pub use kinematics::{
    deform_scene, forward_kinematics, lbs_deform, mdh_link_transform, pose_robot, prismatic_transform,
    revolute_transform, skeleton_transforms, BoneTransforms, LinkKind, MdhParams, Pose, RobotLink, RobotModel,
};
pub use loss::{articulation_loss, ssim, LossConfig};
pub use render::{
    composite_pixel, loss_gradients, project_gaussian, render, render_articulated, LossGradients, Projected2D,
    RenderConfig,
};
pub use scene::{covariance_from_rs, Camera, GaussianSphere, Image, Intrinsics, JointSpec, JointType, Scene};
pub use se3::{se3_apply, se3_compose, SE3};
