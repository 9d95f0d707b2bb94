//! Deterministic link geometry: distances, departure/arrival angles, and the
//! elevation-dependent Rician factor of the air-to-ground links.

use crate::error::{Error, Result};
use crate::scenario::{Scenario, SystemParams};
use crate::vec3::{self, V3};

/// Aircraft position at one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub uav_position: V3,
}

impl Pose {
    pub fn new(p: V3) -> Self {
        Pose { uav_position: p }
    }
}

/// Distances and angles of the three links meeting at one (pose, user) pair.
///
/// Angles are stored in their principal ranges; horizontal angles use
/// absolute coordinate differences, so only their sines/cosines are
/// meaningful (which is all the steering phases consume). When the aircraft
/// sits exactly above a point the horizontal angle is defined as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    /// Aircraft-to-user distance (m).
    pub d_ag: f64,
    /// Aircraft-to-surface distance (m).
    pub d_ar: f64,
    /// Surface-to-user distance (m).
    pub d_rg: f64,
    /// Elevation of the user seen from the aircraft (rad).
    pub theta_ag: f64,
    /// Horizontal departure angle toward the user (rad).
    pub xi_ag: f64,
    /// Vertical angle between aircraft and surface (rad).
    pub theta_ra: f64,
    /// Horizontal angle between aircraft and surface (rad).
    pub xi_ra: f64,
    /// Vertical departure angle from the surface to the user (rad).
    pub theta_rg: f64,
    /// Horizontal departure angle from the surface to the user (rad).
    pub xi_rg: f64,
}

fn horizontal_angle(dx: f64, dy: f64) -> f64 {
    let rho = (dx * dx + dy * dy).sqrt();
    if rho < 1e-12 {
        0.0
    } else {
        (dx.abs() / rho).clamp(-1.0, 1.0).asin()
    }
}

/// Computes the nine geometric quantities for one (pose, user) pair.
pub fn link_geometry(pose: Pose, gu_index: usize, scn: &Scenario) -> Result<LinkGeometry> {
    link_geometry_points(
        pose.uav_position,
        scn.geometry.gu_locations[gu_index],
        scn.geometry.irs_location,
    )
}

/// Same computation for explicit point coordinates (used when the ground
/// position is sampled rather than indexed).
pub fn link_geometry_points(t: V3, lk: V3, lr: V3) -> Result<LinkGeometry> {
    let d_ag = vec3::dist(lk, t);
    let d_ar = vec3::dist(lr, t);
    let d_rg = vec3::dist(lr, lk);
    if d_ag < 1e-9 || d_ar < 1e-9 {
        return Err(Error::Domain {
            op: "link_geometry",
            reason: "aircraft coincides with a terminal; angles undefined".into(),
        });
    }
    if d_rg < 1e-9 {
        return Err(Error::Domain {
            op: "link_geometry",
            reason: "user coincides with the reflecting surface".into(),
        });
    }

    let theta_ag = (t[2] / d_ag).clamp(-1.0, 1.0).asin();
    let xi_ag = horizontal_angle(lk[0] - t[0], lk[1] - t[1]);
    let theta_ra = ((t[2] - lr[2]).abs() / d_ar).clamp(-1.0, 1.0).asin();
    let xi_ra = horizontal_angle(lr[0] - t[0], lr[1] - t[1]);
    let theta_rg = (lr[2] / d_rg).clamp(-1.0, 1.0).asin();
    let xi_rg = horizontal_angle(lr[0] - lk[0], lr[1] - lk[1]);

    Ok(LinkGeometry {
        d_ag,
        d_ar,
        d_rg,
        theta_ag,
        xi_ag,
        theta_ra,
        xi_ra,
        theta_rg,
        xi_rg,
    })
}

/// Elevation-dependent Rician factor of the air-to-ground link:
/// `a1 * exp(a2 * theta)`, rising from `a1` at the horizon to
/// `a1 * exp(a2 * pi/2)` overhead.
pub fn rician_factor_ag(theta_ag: f64, system: &SystemParams) -> f64 {
    system.a1 * (system.a2 * theta_ag).exp()
}
