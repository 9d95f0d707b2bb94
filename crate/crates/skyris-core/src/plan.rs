//! Plan containers produced by the planner: flight trajectory, user
//! scheduling, and power/rate allocation.

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::vec3::V3;

/// Per-slot 3D position and velocity of the aircraft, plus the horizontal
/// speed slack and (after trajectory optimization) the surrogate state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    /// Position per slot (m).
    pub positions: Vec<V3>,
    /// Velocity per slot (m/s); the step rule `t[n+1] = t[n] + v[n] tau`
    /// holds for all but the last slot, whose velocity only enters the
    /// flight-power term.
    pub velocities: Vec<V3>,
    /// Horizontal-speed slack per slot (m/s).
    pub nu: Vec<f64>,
    /// Slot duration used to build the plan (s).
    pub tau: f64,
    /// Reciprocal-gain and activation state from the trajectory subproblem,
    /// when one has run.
    pub surrogate: Option<SurrogateVars>,
}

impl TrajectoryPlan {
    pub fn new(positions: Vec<V3>, velocities: Vec<V3>, nu: Vec<f64>, tau: f64) -> Self {
        TrajectoryPlan {
            positions,
            velocities,
            nu,
            tau,
            surrogate: None,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.positions.len()
    }
}

/// Reciprocal effective gains and the rectifier activation pattern carried
/// by the trajectory subproblem. Axes: slot x user x scheme (and neuron).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateVars {
    /// Reciprocal effective gain upper bounds (1/channel-power units).
    pub u: Array3<f64>,
    /// First-layer activation indicators in [0, 1].
    pub a1: Array4<f64>,
    /// Second-layer activation indicators in [0, 1].
    pub a2: Array4<f64>,
}

/// Relaxed scheduling indicators. `s[(n, k, kp)]` with `k != kp` pairs user
/// `k` (cancellation side) with user `kp`; the diagonal marks a user served
/// alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub s: Array3<f64>,
}

impl Schedule {
    pub fn zeros(n: usize, k: usize) -> Self {
        Schedule {
            s: Array3::zeros((n, k, k)),
        }
    }

    pub fn n_slots(&self) -> usize {
        self.s.shape()[0]
    }

    pub fn n_users(&self) -> usize {
        self.s.shape()[1]
    }

    /// Largest deviation of any entry from an exact binary value.
    pub fn binary_deviation(&self) -> f64 {
        self.s
            .iter()
            .map(|&v| (v - v.round()).abs())
            .fold(0.0, f64::max)
    }

    /// Rounds every indicator to {0, 1}.
    pub fn rounded(&self) -> Schedule {
        Schedule {
            s: self.s.mapv(|v| v.round().clamp(0.0, 1.0)),
        }
    }

    /// The active assignment at a slot, if any: `(k, kp)` with `k == kp`
    /// meaning user `k` is served alone.
    pub fn active_pair(&self, slot: usize) -> Option<(usize, usize)> {
        let k = self.n_users();
        let mut best = None;
        let mut best_val = 0.5;
        for a in 0..k {
            for b in 0..k {
                let v = self.s[(slot, a, b)];
                if v > best_val {
                    best_val = v;
                    best = Some((a, b));
                }
            }
        }
        best
    }
}

/// Transmit powers, the scheduling-linearized power products, and the
/// outage-guaranteed rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAlloc {
    /// Transmit power per (slot, user) (W).
    pub p: Array2<f64>,
    /// Product variables per (slot, pair-row, pair-col, owner) where owner 0
    /// is the pair's first user and owner 1 the second (W). The diagonal
    /// (`row == col`) uses owner 0 only.
    pub p_tilde: Array4<f64>,
    /// Outage-guaranteed rate per (slot, user) (bits/s/Hz).
    pub r: Array2<f64>,
}

impl PowerAlloc {
    pub fn zeros(n: usize, k: usize) -> Self {
        PowerAlloc {
            p: Array2::zeros((n, k)),
            p_tilde: Array4::zeros((n, k, k, 2)),
            r: Array2::zeros((n, k)),
        }
    }

    pub fn n_slots(&self) -> usize {
        self.p.shape()[0]
    }

    pub fn n_users(&self) -> usize {
        self.p.shape()[1]
    }
}
