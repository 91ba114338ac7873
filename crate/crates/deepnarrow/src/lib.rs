//! Compiler and verification harness turning wide, shallow neural networks
//! (function nets and branch-trunk operator nets) into deep, narrow
//! register-compute networks with truncated/encoded inputs, plus an exact
//! piecewise-linear depth-separation suite.

pub mod activation;
pub mod builder;
pub mod encoder;
pub mod error;
pub mod gadgets;
pub mod json;
pub mod narrow;
pub mod net;
pub mod par;
pub mod pl;
pub mod reconnect;
pub mod separation;
pub mod verify;
pub mod wide;

pub use activation::{ActivationKind, ActivationSpec};
pub use error::{Error, Result};
pub use net::{EvalTrace, Layer, Network, RegisterLayout};
