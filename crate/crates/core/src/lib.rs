//! Robust state-feedback synthesis for unknown discrete-time LTI systems
//! from a single noisy input-state trajectory.

pub mod datamat;
pub mod error;
pub mod linalg;
pub mod lti;
pub mod noise;
pub mod sdp;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{Mat, Vector};
