//! Planner library for a power-minimizing aerial downlink assisted by a
//! passive reflecting surface.
//!
//! The crate is organized around the pipeline it implements:
//!
//! * [`scenario`] — problem instances (geometry, physics constants, limits),
//!   structured-text loading, and the initial flight plan.
//! * [`geometry`] / [`channel`] — deterministic link geometry, the
//!   elevation-dependent Rician factor, and full physical channel sampling.
//! * [`phase`] — the aligned reflection-phase policy and the resulting
//!   effective-channel statistics per scheduling scheme.
//! * [`outage`] — Marcum-Q evaluation, the channel-power CDF, its numerical
//!   inverse (outage-guaranteed effective gains), and Monte-Carlo verifiers.
//! * [`surrogate`] — the 6→200→100→1 ReLU net that approximates reciprocal
//!   effective gains, plus dataset generation, training, and serialization.
//! * [`power`] — communication and flight power models.
//! * [`conic`] — a small conic-program layer (linear, SOC, rotated SOC,
//!   exponential cones) lowered to an interior-point solver.
//! * [`optimizer`] — the two SCA subproblems, the alternating outer loop,
//!   the baseline schemes, and the independent feasibility audit.
//! * [`report`] — run reports and CSV emission helpers.
//!
//! Data-parallel sections (Monte-Carlo audits, dataset generation) run on
//! rayon when the default `parallel` feature is enabled and degrade to
//! sequential loops without it; either way results are reduced in a fixed
//! order so fixed seeds give bit-identical output.

pub mod channel;
pub mod conic;
pub mod error;
pub mod geometry;
pub mod optimizer;
pub mod outage;
pub mod par;
pub mod phase;
pub mod plan;
pub mod power;
pub mod report;
pub mod scenario;
pub mod surrogate;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Decoding role a user can occupy in a slot.
///
/// `Sic` is the user that decodes and cancels its partner first, `Nsic` the
/// co-scheduled user that treats the partner as noise, `Oma` a user served
/// alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Sic,
    Nsic,
    Oma,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Sic, Scheme::Nsic, Scheme::Oma];

    /// Stable axis index used by gain tables and weight bundles.
    pub fn index(self) -> usize {
        match self {
            Scheme::Sic => 0,
            Scheme::Nsic => 1,
            Scheme::Oma => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Sic => "sic",
            Scheme::Nsic => "nsic",
            Scheme::Oma => "oma",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sic" => Ok(Scheme::Sic),
            "nsic" => Ok(Scheme::Nsic),
            "oma" => Ok(Scheme::Oma),
            other => Err(Error::Parse(format!("unknown scheme `{other}`"))),
        }
    }
}

pub(crate) mod vec3 {
    pub type V3 = [f64; 3];

    pub fn sub(a: V3, b: V3) -> V3 {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    pub fn add(a: V3, b: V3) -> V3 {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }

    pub fn scale(a: V3, s: f64) -> V3 {
        [a[0] * s, a[1] * s, a[2] * s]
    }

    pub fn norm(a: V3) -> f64 {
        (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
    }

    pub fn dist(a: V3, b: V3) -> f64 {
        norm(sub(a, b))
    }

    pub fn lerp(a: V3, b: V3, t: f64) -> V3 {
        add(scale(a, 1.0 - t), scale(b, t))
    }
}
