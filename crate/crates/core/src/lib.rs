//! Sparse controller synthesis: H2/H∞ state- and output-feedback design with
//! reweighted group-sparsity penalties over actuators and sensors, backed by
//! a small interior-point SDP solver.

pub mod analysis;
pub mod bench;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod sdp;
pub mod sparsify;
pub mod synth;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use model::{
    ClosedLoop, Controller, DynamicController, GeneralizedPlant, StateFeedbackGain, StateSpace,
};
