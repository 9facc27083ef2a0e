//! Output-feedback learning control for control-affine plants.
//!
//! The crate bundles
//! * [`model`]: control-affine plants with element-wise Jacobian bounds,
//! * [`sdp`]: a small dense semidefinite feasibility solver,
//! * [`synthesis`]: observer gain synthesis from bounded Jacobians,
//! * [`observer`]: the extended Luenberger observer at run time,
//! * [`critic`]: the critic-only learner with a saturated policy,
//! * [`sim`]: the closed-loop RK4 harness and trace export.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod critic;
pub mod error;
pub mod linalg;
pub mod model;
pub mod observer;
pub mod scalar;
pub mod sdp;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Model = model::ControlAffineModel<f64>;
pub type Bounds = model::JacobianBounds<f64>;
pub type Constraint = sdp::AffineMatrixConstraint<f64>;
pub type Certificate = sdp::SdpCertificate<f64>;


pub type Gains = synthesis::ObserverGains<f64>;
pub type Critic = critic::CriticState<f64>;
pub type Config = sim::SimConfig;
