//! Statistical propagation of relaxation-spectrum randomness in a dispersive
//! medium to the clutter covariance of a single-snapshot FDA-MIMO
//! ground-penetrating radar, together with the spectral and separability
//! metrics derived from that covariance.
//!
//! The chain is
//!
//! ```text
//! δg(u) → δε(ω) → δk(ω) → δa(θ,r) → R_a → R_med → R_c → r_eff, p_ρ, γ, η
//! ```
//!
//! Each link has a theoretical (first-order, quadrature) route and a Monte
//! Carlo route; [`experiment`] runs both and scores their agreement stage by
//! stage.

// `!(x > 0.0)` checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod covariance;
pub mod dielectric;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod modal;
pub mod propagation;
pub mod relaxation_field;
pub mod report;
pub mod scan;
pub mod spectral;

pub use error::{Error, Result};
