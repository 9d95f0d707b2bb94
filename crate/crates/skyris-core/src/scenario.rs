//! Problem instances: physics constants, flight limits, geometry, solver
//! knobs, structured-text I/O, and the initial flight plan.
//!
//! Scenario files are TOML with nested sections (`[system]`, `[flight]`,
//! `[geometry]`, `[solver]`). A top-level `units` flag selects whether the
//! convertible entries are given in the dB domain (`"db"`, the default) or
//! already linear (`"linear"`). Conversion to linear units happens exactly
//! once at load; an in-memory [`Scenario`] always stores linear values.
//! Missing entries fall back to the documented defaults (see
//! `docs/scenario.md` and `scenarios/default.toml` in the repository).

use crate::error::{Error, Result};
use crate::plan::TrajectoryPlan;
use crate::vec3::{self, V3};
use serde::{Deserialize, Serialize};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Radio-side constants and per-user service requirements (linear units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Reference channel power gain at 1 m (linear).
    pub beta0: f64,
    /// Path-loss exponent of the air-to-ground links.
    pub alpha_ag: f64,
    /// Path-loss exponent of the air-to-surface link.
    pub alpha_ar: f64,
    /// Path-loss exponent of the surface-to-ground links.
    pub alpha_rg: f64,
    /// Rician factor of the surface-to-ground links (linear).
    pub kappa_rg: f64,
    /// Elevation model floor: factor at zero elevation (linear).
    pub a1: f64,
    /// Elevation model slope (linear exponent coefficient).
    pub a2: f64,
    /// Carrier wavelength (m).
    pub lambda_c: f64,
    /// Element spacing along the surface x-axis (m).
    pub delta_rx: f64,
    /// Element spacing along the surface y-axis (m).
    pub delta_ry: f64,
    /// Element count along the surface x-axis.
    pub m_rx: usize,
    /// Element count along the surface y-axis.
    pub m_ry: usize,
    /// Effective noise power per user (W), after bandwidth normalization.
    pub noise_power_per_user: Vec<f64>,
    /// Peak transmit power per slot (W).
    pub p_peak: f64,
    /// Maximum tolerable outage probability when decoding with cancellation.
    pub eps_sic: Vec<f64>,
    /// Maximum tolerable outage probability for the co-scheduled user.
    pub eps_nsic: Vec<f64>,
    /// Maximum tolerable outage probability for a user served alone.
    pub eps_oma: Vec<f64>,
    /// Minimum average rate per user (bits/s/Hz).
    pub r_min_per_user: Vec<f64>,
    /// Slot duration (s).
    pub tau: f64,
    /// Number of slots.
    pub n_slots: usize,
}

impl SystemParams {
    pub fn m_total(&self) -> usize {
        self.m_rx * self.m_ry
    }
}

/// Rotary-wing flight power constants and kinematic limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightParams {
    /// Aircraft weight (N).
    pub weight_g: f64,
    /// Blade angular velocity (rad/s).
    pub omega: f64,
    /// Rotor radius (m).
    pub rotor_radius: f64,
    /// Air density (kg/m^3).
    pub air_density: f64,
    /// Rotor solidity.
    pub rotor_solidity: f64,
    /// Rotor disc area (m^2).
    pub rotor_disc_area: f64,
    /// Mean rotor induced velocity in forward flight (m/s).
    pub induced_velocity_v0: f64,
    /// Fuselage drag ratio.
    pub fuselage_drag_d0: f64,
    /// Blade profile power in hover (W).
    pub p_blade_hover: f64,
    /// Induced power in hover (W).
    pub p_induced_hover: f64,
    /// Maximum speed (m/s).
    pub v_max: f64,
    /// Maximum acceleration (m/s^2).
    pub v_acc: f64,
}

/// Fixed locations and the service box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Reflecting-surface location (m).
    pub irs_location: V3,
    /// Ground-user locations (m).
    pub gu_locations: Vec<V3>,
    /// Flight start point (m).
    pub start: V3,
    /// Flight finish point (m).
    pub finish: V3,
    /// Service-box lower corner (m).
    pub box_min: V3,
    /// Service-box upper corner (m).
    pub box_max: V3,
}

impl Geometry {
    pub fn n_users(&self) -> usize {
        self.gu_locations.len()
    }

    pub fn in_box(&self, p: V3, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.box_min[i] - tol && p[i] <= self.box_max[i] + tol)
    }

    pub fn clamp_to_box(&self, p: V3) -> V3 {
        let mut out = p;
        for i in 0..3 {
            out[i] = out[i].clamp(self.box_min[i], self.box_max[i]);
        }
        out
    }
}

/// Convergence tolerances and iteration caps for the three nested loops,
/// plus the scheduling penalty weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTolerances {
    /// Relative-change stop for the scheduling/power inner loop.
    pub sca_tol_1: f64,
    /// Relative-change stop for the trajectory inner loop.
    pub sca_tol_2: f64,
    /// Relative-change stop for the alternating outer loop.
    pub ao_tol: f64,
    pub max_iters_1: usize,
    pub max_iters_2: usize,
    pub max_iters_3: usize,
    /// Weight of the concave binary-enforcement penalty.
    pub penalty_zeta: f64,
}

/// A full validated problem instance. Immutable after load; safe to share
/// read-only across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub system: SystemParams,
    pub flight: FlightParams,
    pub geometry: Geometry,
    pub solver: SolverTolerances,
}

impl Scenario {
    pub fn n_users(&self) -> usize {
        self.geometry.n_users()
    }

    pub fn n_slots(&self) -> usize {
        self.system.n_slots
    }

    /// Validates every invariant, reporting the first violation with its
    /// dotted field path.
    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        let pos = |v: f64, field: &str| -> Result<()> {
            if !(v > 0.0) || !v.is_finite() {
                Err(Error::invalid(field, "must be strictly positive"))
            } else {
                Ok(())
            }
        };
        pos(s.beta0, "system.beta0")?;
        pos(s.alpha_ag, "system.alpha_ag")?;
        pos(s.alpha_ar, "system.alpha_ar")?;
        pos(s.alpha_rg, "system.alpha_rg")?;
        pos(s.kappa_rg, "system.kappa_rg")?;
        pos(s.a1, "system.a1")?;
        pos(s.a2, "system.a2")?;
        pos(s.lambda_c, "system.lambda_c")?;
        pos(s.delta_rx, "system.delta_rx")?;
        pos(s.delta_ry, "system.delta_ry")?;
        pos(s.p_peak, "system.p_peak")?;
        if s.tau <= 0.0 || !s.tau.is_finite() {
            return Err(Error::invalid("system.tau", "tau must be positive"));
        }
        if s.n_slots < 2 {
            return Err(Error::invalid("system.n_slots", "need at least two slots"));
        }
        if s.m_rx * s.m_ry < 1 {
            return Err(Error::invalid(
                "system.m_rx",
                "element grid must hold at least one element",
            ));
        }
        let k = self.geometry.gu_locations.len();
        let per_user = [
            (&s.noise_power_per_user, "system.noise_power_per_user"),
            (&s.eps_sic, "system.eps_sic"),
            (&s.eps_nsic, "system.eps_nsic"),
            (&s.eps_oma, "system.eps_oma"),
            (&s.r_min_per_user, "system.r_min_per_user"),
        ];
        for (v, field) in per_user {
            if v.len() != k {
                return Err(Error::invalid(
                    field,
                    format!("expected {k} entries (one per user), got {}", v.len()),
                ));
            }
        }
        for (i, &n) in s.noise_power_per_user.iter().enumerate() {
            pos(n, &format!("system.noise_power_per_user[{i}]"))?;
        }
        for (name, v) in [
            ("eps_sic", &s.eps_sic),
            ("eps_nsic", &s.eps_nsic),
            ("eps_oma", &s.eps_oma),
        ] {
            for (i, &e) in v.iter().enumerate() {
                if !(e > 0.0 && e < 1.0) {
                    return Err(Error::invalid(
                        &format!("system.{name}[{i}]"),
                        "outage probability must lie in (0, 1)",
                    ));
                }
            }
        }
        for (i, &r) in s.r_min_per_user.iter().enumerate() {
            if r < 0.0 || !r.is_finite() {
                return Err(Error::invalid(
                    &format!("system.r_min_per_user[{i}]"),
                    "rate requirement must be nonnegative",
                ));
            }
        }

        let f = &self.flight;
        pos(f.weight_g, "flight.weight_g")?;
        pos(f.omega, "flight.omega")?;
        pos(f.rotor_radius, "flight.rotor_radius")?;
        pos(f.air_density, "flight.air_density")?;
        pos(f.rotor_solidity, "flight.rotor_solidity")?;
        pos(f.rotor_disc_area, "flight.rotor_disc_area")?;
        pos(f.induced_velocity_v0, "flight.induced_velocity_v0")?;
        if f.fuselage_drag_d0 < 0.0 {
            return Err(Error::invalid(
                "flight.fuselage_drag_d0",
                "drag ratio must be nonnegative",
            ));
        }
        pos(f.p_blade_hover, "flight.p_blade_hover")?;
        pos(f.p_induced_hover, "flight.p_induced_hover")?;
        pos(f.v_max, "flight.v_max")?;
        pos(f.v_acc, "flight.v_acc")?;

        let g = &self.geometry;
        for i in 0..3 {
            if g.box_min[i] > g.box_max[i] {
                return Err(Error::invalid(
                    "geometry.box_min",
                    "box_min must be componentwise <= box_max",
                ));
            }
        }
        if !g.in_box(g.start, 1e-9) {
            return Err(Error::invalid("geometry.start", "start outside service box"));
        }
        if !g.in_box(g.finish, 1e-9) {
            return Err(Error::invalid(
                "geometry.finish",
                "finish outside service box",
            ));
        }
        for (i, gu) in g.gu_locations.iter().enumerate() {
            if gu[2] < 0.0 {
                return Err(Error::invalid(
                    &format!("geometry.gu_locations[{i}]"),
                    "ground-user altitude must be nonnegative",
                ));
            }
        }

        let t = &self.solver;
        pos(t.sca_tol_1, "solver.sca_tol_1")?;
        pos(t.sca_tol_2, "solver.sca_tol_2")?;
        pos(t.ao_tol, "solver.ao_tol")?;
        pos(t.penalty_zeta, "solver.penalty_zeta")?;
        if t.max_iters_1 == 0 || t.max_iters_2 == 0 || t.max_iters_3 == 0 {
            return Err(Error::invalid(
                "solver.max_iters",
                "iteration caps must be at least 1",
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Structured-text representation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
enum Units {
    #[default]
    Db,
    Linear,
}

/// Scalar broadcast to all users, or one entry per user.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PerUser {
    Scalar(f64),
    Vec(Vec<f64>),
}

impl PerUser {
    fn resolve(&self, k: usize) -> Vec<f64> {
        match self {
            PerUser::Scalar(v) => vec![*v; k],
            PerUser::Vec(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    /// dB mode: dBW. linear mode: linear gain.
    beta0: Option<f64>,
    alpha_ag: Option<f64>,
    alpha_ar: Option<f64>,
    alpha_rg: Option<f64>,
    /// dB mode: dB. linear mode: linear.
    kappa_rg: Option<f64>,
    a1: Option<f64>,
    a2: Option<f64>,
    lambda_c: Option<f64>,
    delta_rx: Option<f64>,
    delta_ry: Option<f64>,
    m_rx: Option<usize>,
    m_ry: Option<usize>,
    /// dB mode: dBm/Hz, scaled by `bandwidth_hz`. linear mode: W.
    noise: Option<PerUser>,
    bandwidth_hz: Option<f64>,
    /// dB mode: dBm. linear mode: W.
    p_peak: Option<f64>,
    eps_sic: Option<PerUser>,
    eps_nsic: Option<PerUser>,
    eps_oma: Option<PerUser>,
    r_min: Option<PerUser>,
    tau: Option<f64>,
    n_slots: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawFlight {
    weight: Option<f64>,
    blade_angular_velocity: Option<f64>,
    rotor_radius: Option<f64>,
    air_density: Option<f64>,
    rotor_solidity: Option<f64>,
    rotor_disc_area: Option<f64>,
    induced_velocity: Option<f64>,
    fuselage_drag_ratio: Option<f64>,
    blade_profile_power: Option<f64>,
    induced_power: Option<f64>,
    v_max: Option<f64>,
    v_acc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    irs: Option<V3>,
    gu: Option<Vec<V3>>,
    start: Option<V3>,
    finish: Option<V3>,
    box_min: Option<V3>,
    box_max: Option<V3>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    sca_tol_1: Option<f64>,
    sca_tol_2: Option<f64>,
    ao_tol: Option<f64>,
    max_iters_1: Option<usize>,
    max_iters_2: Option<usize>,
    max_iters_3: Option<usize>,
    penalty: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    units: Units,
    #[serde(default)]
    system: RawSystem,
    #[serde(default)]
    flight: RawFlight,
    #[serde(default)]
    geometry: RawGeometry,
    #[serde(default)]
    solver: RawSolver,
}

/// Parses, defaults, converts to linear units, and validates a scenario
/// document.
pub fn load_scenario_str(doc: &str) -> Result<Scenario> {
    let raw: RawScenario = toml::from_str(doc).map_err(|e| Error::Parse(e.to_string()))?;
    let scn = resolve(raw)?;
    scn.validate()?;
    Ok(scn)
}

pub fn load_scenario(path: &std::path::Path) -> Result<Scenario> {
    let doc = std::fs::read_to_string(path)?;
    load_scenario_str(&doc)
}

/// Serializes a scenario as a linear-units document. Loading the output
/// reproduces the scenario exactly.
pub fn save_scenario_str(scn: &Scenario) -> String {
    let g = &scn.geometry;
    let s = &scn.system;
    let f = &scn.flight;
    let t = &scn.solver;
    let raw = RawScenario {
        units: Units::Linear,
        system: RawSystem {
            beta0: Some(s.beta0),
            alpha_ag: Some(s.alpha_ag),
            alpha_ar: Some(s.alpha_ar),
            alpha_rg: Some(s.alpha_rg),
            kappa_rg: Some(s.kappa_rg),
            a1: Some(s.a1),
            a2: Some(s.a2),
            lambda_c: Some(s.lambda_c),
            delta_rx: Some(s.delta_rx),
            delta_ry: Some(s.delta_ry),
            m_rx: Some(s.m_rx),
            m_ry: Some(s.m_ry),
            noise: Some(PerUser::Vec(s.noise_power_per_user.clone())),
            bandwidth_hz: None,
            p_peak: Some(s.p_peak),
            eps_sic: Some(PerUser::Vec(s.eps_sic.clone())),
            eps_nsic: Some(PerUser::Vec(s.eps_nsic.clone())),
            eps_oma: Some(PerUser::Vec(s.eps_oma.clone())),
            r_min: Some(PerUser::Vec(s.r_min_per_user.clone())),
            tau: Some(s.tau),
            n_slots: Some(s.n_slots),
        },
        flight: RawFlight {
            weight: Some(f.weight_g),
            blade_angular_velocity: Some(f.omega),
            rotor_radius: Some(f.rotor_radius),
            air_density: Some(f.air_density),
            rotor_solidity: Some(f.rotor_solidity),
            rotor_disc_area: Some(f.rotor_disc_area),
            induced_velocity: Some(f.induced_velocity_v0),
            fuselage_drag_ratio: Some(f.fuselage_drag_d0),
            blade_profile_power: Some(f.p_blade_hover),
            induced_power: Some(f.p_induced_hover),
            v_max: Some(f.v_max),
            v_acc: Some(f.v_acc),
        },
        geometry: RawGeometry {
            irs: Some(g.irs_location),
            gu: Some(g.gu_locations.clone()),
            start: Some(g.start),
            finish: Some(g.finish),
            box_min: Some(g.box_min),
            box_max: Some(g.box_max),
        },
        solver: RawSolver {
            sca_tol_1: Some(t.sca_tol_1),
            sca_tol_2: Some(t.sca_tol_2),
            ao_tol: Some(t.ao_tol),
            max_iters_1: Some(t.max_iters_1),
            max_iters_2: Some(t.max_iters_2),
            max_iters_3: Some(t.max_iters_3),
            penalty: Some(t.penalty_zeta),
        },
    };
    toml::to_string_pretty(&raw).expect("scenario serialization cannot fail")
}

fn resolve(raw: RawScenario) -> Result<Scenario> {
    let db = raw.units == Units::Db;
    let rs = raw.system;
    let rg = raw.geometry;
    let rf = raw.flight;
    let rt = raw.solver;

    let gu_locations = rg.gu.unwrap_or_else(|| {
        vec![
            [300.0, 150.0, 0.0],
            [50.0, 400.0, 0.0],
            [100.0, 450.0, 0.0],
        ]
    });
    let k = gu_locations.len();

    // Convertible entries: defaults are stated in the dB domain and pass
    // through the same conversion as explicit dB-mode inputs.
    let gain = |v: Option<f64>, default_db: f64| -> f64 {
        match v {
            Some(x) if db => db_to_linear(x),
            Some(x) => x,
            None => db_to_linear(default_db),
        }
    };
    let power_dbm = |v: Option<f64>, default_dbm: f64| -> f64 {
        match v {
            Some(x) if db => dbm_to_watt(x),
            Some(x) => x,
            None => dbm_to_watt(default_dbm),
        }
    };

    let bandwidth = rs.bandwidth_hz.unwrap_or(1.0e6);
    if bandwidth <= 0.0 {
        return Err(Error::invalid("system.bandwidth_hz", "must be positive"));
    }
    let noise = match rs.noise {
        Some(p) => p
            .resolve(k)
            .into_iter()
            .map(|v| if db { dbm_to_watt(v) * bandwidth } else { v })
            .collect(),
        None => vec![dbm_to_watt(-160.0) * bandwidth; k],
    };

    let n_slots = rs.n_slots.unwrap_or(50);
    let p_peak = power_dbm(rs.p_peak, 36.0);

    let system = SystemParams {
        beta0: gain(rs.beta0, -50.0),
        alpha_ag: rs.alpha_ag.unwrap_or(3.6),
        alpha_ar: rs.alpha_ar.unwrap_or(2.0),
        alpha_rg: rs.alpha_rg.unwrap_or(3.6),
        kappa_rg: gain(rs.kappa_rg, 2.0),
        a1: gain(rs.a1, 0.0),
        a2: gain(rs.a2, 6.43),
        lambda_c: rs.lambda_c.unwrap_or(0.1),
        delta_rx: rs.delta_rx.unwrap_or(0.05),
        delta_ry: rs.delta_ry.unwrap_or(0.05),
        m_rx: rs.m_rx.unwrap_or(10),
        m_ry: rs.m_ry.unwrap_or(10),
        noise_power_per_user: noise,
        p_peak,
        eps_sic: rs.eps_sic.map(|p| p.resolve(k)).unwrap_or(vec![0.01; k]),
        eps_nsic: rs.eps_nsic.map(|p| p.resolve(k)).unwrap_or(vec![0.01; k]),
        eps_oma: rs.eps_oma.map(|p| p.resolve(k)).unwrap_or(vec![0.01; k]),
        r_min_per_user: rs.r_min.map(|p| p.resolve(k)).unwrap_or(vec![3.0; k]),
        tau: rs.tau.unwrap_or(2.0),
        n_slots,
    };

    let flight = FlightParams {
        weight_g: rf.weight.unwrap_or(20.0),
        omega: rf.blade_angular_velocity.unwrap_or(300.0),
        rotor_radius: rf.rotor_radius.unwrap_or(0.4),
        air_density: rf.air_density.unwrap_or(1.225),
        rotor_solidity: rf.rotor_solidity.unwrap_or(0.05),
        rotor_disc_area: rf.rotor_disc_area.unwrap_or(0.503),
        induced_velocity_v0: rf.induced_velocity.unwrap_or(4.03),
        fuselage_drag_d0: rf.fuselage_drag_ratio.unwrap_or(0.3),
        p_blade_hover: rf.blade_profile_power.unwrap_or(79.86),
        p_induced_hover: rf.induced_power.unwrap_or(88.63),
        v_max: rf.v_max.unwrap_or(30.0),
        v_acc: rf.v_acc.unwrap_or(4.0),
    };

    let geometry = Geometry {
        irs_location: rg.irs.unwrap_or([0.0, 400.0, 30.0]),
        gu_locations,
        start: rg.start.unwrap_or([0.0, 0.0, 150.0]),
        finish: rg.finish.unwrap_or([500.0, 500.0, 150.0]),
        box_min: rg.box_min.unwrap_or([0.0, 0.0, 100.0]),
        box_max: rg.box_max.unwrap_or([500.0, 500.0, 300.0]),
    };

    let solver = SolverTolerances {
        sca_tol_1: rt.sca_tol_1.unwrap_or(1e-3),
        sca_tol_2: rt.sca_tol_2.unwrap_or(1e-3),
        ao_tol: rt.ao_tol.unwrap_or(1e-3),
        max_iters_1: rt.max_iters_1.unwrap_or(10),
        max_iters_2: rt.max_iters_2.unwrap_or(10),
        max_iters_3: rt.max_iters_3.unwrap_or(10),
        penalty_zeta: rt
            .penalty
            .unwrap_or(1e3 * p_peak * n_slots as f64),
    };

    Ok(Scenario {
        system,
        flight,
        geometry,
        solver,
    })
}

/// The all-defaults desk scenario.
pub fn default_scenario() -> Scenario {
    load_scenario_str("").expect("defaults are valid")
}

// ---------------------------------------------------------------------------
// Initial flight plan
// ---------------------------------------------------------------------------

const VISIT_ALTITUDE: f64 = 100.0;

/// Builds the warm-start plan: a piecewise-linear locus from the start
/// through every ground user's horizontal projection (nearest-neighbor
/// order, altitude clamped into the box) to the finish. Speed is constant
/// on straight stretches and reduced at corners so the per-slot velocity
/// respects the acceleration and speed limits exactly; if even that is too
/// slow, waypoints are dropped greedily. Fails only when the direct
/// start-to-finish leg itself cannot be flown in time.
pub fn initial_trajectory(scn: &Scenario) -> Result<TrajectoryPlan> {
    let g = &scn.geometry;
    let n = scn.system.n_slots;
    let tau = scn.system.tau;
    let horizon = (n - 1) as f64 * tau;

    let mut visits = nearest_neighbor_order(g);
    loop {
        let mut waypoints = vec![g.start];
        waypoints.extend(visits.iter().copied());
        waypoints.push(g.finish);
        dedup_waypoints(&mut waypoints);

        if let Some(plan) = schedule_polyline(&waypoints, n, tau, horizon, &scn.flight) {
            return Ok(plan);
        }
        if visits.is_empty() {
            return Err(Error::Infeasible(format!(
                "start-to-finish leg of {:.1} m cannot be flown in {:.1} s under the speed limit",
                vec3::dist(g.start, g.finish),
                horizon
            )));
        }
        drop_longest_detour(&mut visits, g);
    }
}

fn nearest_neighbor_order(g: &Geometry) -> Vec<V3> {
    let z = VISIT_ALTITUDE.clamp(g.box_min[2], g.box_max[2]);
    let mut remaining: Vec<V3> = g
        .gu_locations
        .iter()
        .map(|gu| g.clamp_to_box([gu[0], gu[1], z]))
        .collect();
    let mut order = Vec::with_capacity(remaining.len());
    let mut cursor = [g.start[0], g.start[1], 0.0];
    while !remaining.is_empty() {
        let (idx, _) = remaining
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let dh = ((w[0] - cursor[0]).powi(2) + (w[1] - cursor[1]).powi(2)).sqrt();
                (i, dh)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        let w = remaining.remove(idx);
        cursor = [w[0], w[1], 0.0];
        order.push(w);
    }
    order
}

fn dedup_waypoints(w: &mut Vec<V3>) {
    w.dedup_by(|a, b| vec3::dist(*a, *b) < 1e-9);
}

fn drop_longest_detour(visits: &mut Vec<V3>, g: &Geometry) {
    if visits.len() == 1 {
        visits.clear();
        return;
    }
    // Remove the visit whose removal shortens the path the most.
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..visits.len() {
        let prev = if i == 0 { g.start } else { visits[i - 1] };
        let next = if i + 1 == visits.len() {
            g.finish
        } else {
            visits[i + 1]
        };
        let saving =
            vec3::dist(prev, visits[i]) + vec3::dist(visits[i], next) - vec3::dist(prev, next);
        if saving > best.1 {
            best = (i, saving);
        }
    }
    visits.remove(best.0);
}

struct Polyline {
    points: Vec<V3>,
    cumlen: Vec<f64>,
}

impl Polyline {
    fn new(points: &[V3]) -> Self {
        let mut cumlen = vec![0.0];
        for w in points.windows(2) {
            cumlen.push(cumlen.last().unwrap() + vec3::dist(w[0], w[1]));
        }
        Polyline {
            points: points.to_vec(),
            cumlen,
        }
    }

    fn length(&self) -> f64 {
        *self.cumlen.last().unwrap()
    }

    fn at(&self, s: f64) -> V3 {
        let s = s.clamp(0.0, self.length());
        let seg = match self
            .cumlen
            .binary_search_by(|probe| probe.total_cmp(&s))
        {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let seg_len = self.cumlen[seg + 1] - self.cumlen[seg];
        let t = if seg_len > 0.0 {
            (s - self.cumlen[seg]) / seg_len
        } else {
            0.0
        };
        vec3::lerp(self.points[seg], self.points[seg + 1], t)
    }

    /// Turn angle at each interior waypoint.
    fn corner_angles(&self) -> Vec<(f64, f64)> {
        let mut corners = Vec::new();
        for i in 1..self.points.len() - 1 {
            let a = vec3::sub(self.points[i], self.points[i - 1]);
            let b = vec3::sub(self.points[i + 1], self.points[i]);
            let (na, nb) = (vec3::norm(a), vec3::norm(b));
            if na < 1e-12 || nb < 1e-12 {
                continue;
            }
            let cosang = ((a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb)).clamp(-1.0, 1.0);
            corners.push((self.cumlen[i], cosang.acos()));
        }
        corners
    }
}

/// Walks the polyline with a bounded-acceleration speed profile, returning
/// slot positions, or `None` when the path cannot be covered in time.
fn schedule_polyline(
    waypoints: &[V3],
    n: usize,
    tau: f64,
    horizon: f64,
    flight: &FlightParams,
) -> Option<TrajectoryPlan> {
    let line = Polyline::new(waypoints);
    let total = line.length();

    if total < 1e-9 {
        // Degenerate: start == finish and nothing to visit.
        let t = vec![waypoints[0]; n];
        let v = vec![[0.0; 3]; n];
        let nu = vec![0.0; n];
        return Some(TrajectoryPlan::new(t, v, nu, tau));
    }

    let corners = line.corner_angles();
    let v_cap = flight.v_max * 0.995;
    let accel = flight.v_acc * tau * 0.85; // per-step speed change budget
    let corner_cap = |theta: f64, cruise: f64| -> f64 {
        let s = (theta / 2.0).sin();
        if s < 1e-9 {
            cruise
        } else {
            (flight.v_acc * tau * 0.98 / (2.0 * s)).min(cruise)
        }
    };

    // Travel time at a given cruise speed, on a fine arclength grid.
    let m = (40 * n).max(2000);
    let ds = total / m as f64;
    let profile = |cruise: f64| -> Vec<f64> {
        let mut cap = vec![cruise; m + 1];
        let window = cruise * tau + 2.0 * ds;
        for &(sc, theta) in &corners {
            let c = corner_cap(theta, cruise);
            let lo = ((sc - window) / ds).floor().max(0.0) as usize;
            let hi = (((sc + window) / ds).ceil() as usize).min(m);
            for j in lo..=hi {
                cap[j] = cap[j].min(c);
            }
        }
        // Bounded rate of change of speed per slot duration, expressed per
        // arclength step: du/ds <= a/u.
        let floor = 0.05;
        for j in 0..m {
            let u = cap[j].max(floor);
            let lim = (u * u + 2.0 * (accel / tau) * ds).sqrt();
            cap[j + 1] = cap[j + 1].min(lim);
        }
        for j in (0..m).rev() {
            let u = cap[j + 1].max(floor);
            let lim = (u * u + 2.0 * (accel / tau) * ds).sqrt();
            cap[j] = cap[j].min(lim);
        }
        cap
    };
    let travel_time = |cap: &[f64]| -> f64 {
        let mut t = 0.0;
        for j in 0..m {
            let u = 0.5 * (cap[j] + cap[j + 1]);
            t += ds / u.max(1e-9);
        }
        t
    };

    if travel_time(&profile(v_cap)) > horizon {
        return None;
    }

    // Cruise speed such that arrival is exact.
    let (mut lo, mut hi) = (1e-3, v_cap);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if travel_time(&profile(mid)) > horizon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let cap = profile(hi);

    // Time at each grid node, rescaled so the end lands exactly on the horizon.
    let mut times = Vec::with_capacity(m + 1);
    times.push(0.0);
    for j in 0..m {
        let u = 0.5 * (cap[j] + cap[j + 1]);
        times.push(times[j] + ds / u.max(1e-9));
    }
    let scale = horizon / times[m];
    for t in &mut times {
        *t *= scale;
    }

    // Sample slot positions.
    let mut t_out = Vec::with_capacity(n);
    for i in 0..n {
        let target = i as f64 * tau;
        let j = match times.binary_search_by(|probe| probe.total_cmp(&target)) {
            Ok(j) => j,
            Err(j) => j.saturating_sub(1),
        };
        let s = if j >= m {
            total
        } else {
            let span = times[j + 1] - times[j];
            let frac = if span > 0.0 {
                (target - times[j]) / span
            } else {
                0.0
            };
            (j as f64 + frac) * ds
        };
        t_out.push(line.at(s));
    }
    t_out[0] = waypoints[0];
    t_out[n - 1] = *waypoints.last().unwrap();

    let mut v = Vec::with_capacity(n);
    for i in 0..n - 1 {
        v.push(vec3::scale(vec3::sub(t_out[i + 1], t_out[i]), 1.0 / tau));
    }
    v.push(v[n - 2]);

    // Margin factors above keep the discretized walk inside the limits;
    // double-check and refuse rather than emit an infeasible plan.
    for w in v.windows(2) {
        if vec3::dist(w[0], w[1]) > flight.v_acc * tau * (1.0 + 1e-9) {
            return None;
        }
    }
    if v.iter().any(|vi| vec3::norm(*vi) > flight.v_max * (1.0 + 1e-9)) {
        return None;
    }

    let nu = v
        .iter()
        .map(|vi| (vi[0] * vi[0] + vi[1] * vi[1]).sqrt())
        .collect();
    Some(TrajectoryPlan::new(t_out, v, nu, tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn defaults_match_reference_table() {
        let scn = default_scenario();
        assert_eq!(scn.system.m_total(), 100);
        assert_relative_eq!(scn.system.lambda_c, 0.1);
        assert_eq!(scn.geometry.start, [0.0, 0.0, 150.0]);
        assert_relative_eq!(scn.system.beta0, 1e-5, max_relative = 1e-12);
        assert_relative_eq!(scn.system.p_peak, dbm_to_watt(36.0), max_relative = 1e-12);
        // Effective noise: -160 dBm/Hz over 1 MHz.
        assert_relative_eq!(
            scn.system.noise_power_per_user[0],
            1e-13,
            max_relative = 1e-9
        );
        assert_eq!(scn.n_users(), 3);
        assert_eq!(scn.system.n_slots, 50);
    }

    #[test]
    fn zero_tau_rejected() {
        let err = load_scenario_str("[system]\ntau = 0.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tau must be positive"), "got: {msg}");
    }

    #[test]
    fn elevation_slope_conversion() {
        // 6.43 dB -> ~4.395 linear, and the ceiling factor a1*exp(a2*pi/2)
        // lands at ~1e3 (30 dB).
        let scn = default_scenario();
        assert_relative_eq!(scn.system.a2, 4.395, max_relative = 2e-4);
        let kappa_max = scn.system.a1 * (scn.system.a2 * std::f64::consts::FRAC_PI_2).exp();
        assert_relative_eq!(kappa_max, 1e3, max_relative = 0.01);
    }

    #[test]
    fn save_load_round_trip_identical() {
        let scn = default_scenario();
        let doc = save_scenario_str(&scn);
        let back = load_scenario_str(&doc).unwrap();
        assert_eq!(scn, back);
    }

    #[test]
    fn linear_load_is_idempotent() {
        // Loading a pre-linearized document must not convert anything again.
        let scn = default_scenario();
        let doc = save_scenario_str(&scn);
        let once = load_scenario_str(&doc).unwrap();
        let doc2 = save_scenario_str(&once);
        assert_eq!(doc, doc2);
    }

    #[test]
    fn per_user_broadcast_and_vectors() {
        let doc = r#"
[system]
r_min = [1.0, 2.0, 3.0]
eps_sic = 0.001
"#;
        let scn = load_scenario_str(doc).unwrap();
        assert_eq!(scn.system.r_min_per_user, vec![1.0, 2.0, 3.0]);
        assert_eq!(scn.system.eps_sic, vec![0.001; 3]);
    }

    #[test]
    fn wrong_length_vector_reports_field() {
        let doc = "[system]\nr_min = [1.0, 2.0]\n";
        let err = load_scenario_str(doc).unwrap_err();
        assert!(err.to_string().contains("r_min_per_user"));
    }

    #[test]
    fn nearest_neighbor_visit_order() {
        let scn = default_scenario();
        let order = nearest_neighbor_order(&scn.geometry);
        // From the origin the closest projection is user 1 (300,150), then
        // user 2 (50,400) at 353.6 m beats user 3 (100,450) at 360.6 m.
        assert_relative_eq!(order[0][0], 300.0);
        assert_relative_eq!(order[1][0], 50.0);
        assert_relative_eq!(order[2][0], 100.0);
        assert_relative_eq!(order[0][2], 100.0);
    }

    #[test]
    fn initial_trajectory_endpoints_exact() {
        let scn = default_scenario();
        let plan = initial_trajectory(&scn).unwrap();
        assert_eq!(plan.positions[0], scn.geometry.start);
        assert_eq!(plan.positions[scn.system.n_slots - 1], scn.geometry.finish);
        // Dynamics: t[n+1] = t[n] + v[n] tau, by construction.
        for i in 0..scn.system.n_slots - 1 {
            let step = vec3::add(
                plan.positions[i],
                vec3::scale(plan.velocities[i], scn.system.tau),
            );
            assert_relative_eq!(step[0], plan.positions[i + 1][0], epsilon = 1e-9);
            assert_relative_eq!(step[1], plan.positions[i + 1][1], epsilon = 1e-9);
            assert_relative_eq!(step[2], plan.positions[i + 1][2], epsilon = 1e-9);
        }
    }

    #[test]
    fn initial_trajectory_respects_limits() {
        let scn = default_scenario();
        let plan = initial_trajectory(&scn).unwrap();
        let f = &scn.flight;
        for v in &plan.velocities {
            assert!(vec3::norm(*v) <= f.v_max + 1e-6);
        }
        for w in plan.velocities.windows(2) {
            assert!(vec3::dist(w[0], w[1]) <= f.v_acc * scn.system.tau + 1e-6);
        }
        for p in &plan.positions {
            assert!(scn.geometry.in_box(*p, 1e-6));
        }
    }

    #[test]
    fn no_users_straight_line_uniform() {
        let mut scn = default_scenario();
        scn.geometry.gu_locations.clear();
        scn.system.noise_power_per_user = vec![];
        scn.system.eps_sic = vec![];
        scn.system.eps_nsic = vec![];
        scn.system.eps_oma = vec![];
        scn.system.r_min_per_user = vec![];
        let plan = initial_trajectory(&scn).unwrap();
        let n = scn.system.n_slots;
        assert_eq!(plan.positions[0], scn.geometry.start);
        assert_eq!(plan.positions[n - 1], scn.geometry.finish);
        // Uniform spacing along the straight segment.
        let step0 = vec3::dist(plan.positions[1], plan.positions[0]);
        for w in plan.positions.windows(2) {
            assert_relative_eq!(vec3::dist(w[0], w[1]), step0, max_relative = 1e-6);
        }
    }

    #[test]
    fn infeasible_direct_leg_reported() {
        let mut scn = default_scenario();
        scn.flight.v_max = 0.5; // 707 m in 98 s needs > 7 m/s
        let err = initial_trajectory(&scn).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn truncates_visits_when_slow() {
        let mut scn = default_scenario();
        // Tight but direct-leg-feasible speed: must drop some visits.
        scn.flight.v_max = 7.5;
        let plan = initial_trajectory(&scn).unwrap();
        assert_eq!(plan.positions.len(), scn.system.n_slots);
        for v in &plan.velocities {
            assert!(vec3::norm(*v) <= scn.flight.v_max + 1e-6);
        }
    }
}
