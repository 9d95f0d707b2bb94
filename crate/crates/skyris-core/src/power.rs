//! Communication and flight power models.

use crate::error::{Error, Result};
use crate::plan::{PowerAlloc, Schedule};
use crate::scenario::FlightParams;

/// Velocity of one slot with the optional horizontal-speed slack. When the
/// slack is absent it defaults to the horizontal speed itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocitySample {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub nu: Option<f64>,
}

impl VelocitySample {
    pub fn new(v: [f64; 3]) -> Self {
        VelocitySample {
            vx: v[0],
            vy: v[1],
            vz: v[2],
            nu: None,
        }
    }

    pub fn with_slack(v: [f64; 3], nu: f64) -> Self {
        VelocitySample {
            vx: v[0],
            vy: v[1],
            vz: v[2],
            nu: Some(nu),
        }
    }

    pub fn horizontal_speed(&self) -> f64 {
        (self.vx * self.vx + self.vy * self.vy).sqrt()
    }
}

/// Transmit power spent at one slot: the scheduled pair's two powers, or the
/// sole user's power, or zero when nothing is scheduled.
pub fn comm_power(schedule: &Schedule, alloc: &PowerAlloc, slot: usize) -> Result<f64> {
    let k = schedule.n_users();
    let mut total = 0.0;
    let mut active = 0.0;
    for a in 0..k {
        for b in 0..k {
            let s = schedule.s[(slot, a, b)];
            if s < 0.0 && s.abs() > 1e-9 {
                return Err(Error::Domain {
                    op: "comm_power",
                    reason: "negative scheduling indicator".into(),
                });
            }
            active += s;
            let (pa, pb) = (alloc.p[(slot, a)], alloc.p[(slot, b)]);
            if pa < 0.0 || pb < 0.0 {
                return Err(Error::Domain {
                    op: "comm_power",
                    reason: "negative transmit power".into(),
                });
            }
            if a == b {
                total += s * pa;
            } else {
                total += s * (pa + pb);
            }
        }
    }
    if active > 1.0 + 1e-6 {
        return Err(Error::Domain {
            op: "comm_power",
            reason: format!("more than one assignment active at slot {slot}"),
        });
    }
    Ok(total)
}

/// Rotary-wing flight power: blade-profile, induced, and parasite terms on
/// the horizontal speed plus the linear climb term. The induced term is
/// `P_i v0 / nu` with the slack at equality equal to the horizontal speed;
/// hover (`nu = 0`) is outside the model's domain. Descent credits the
/// climb term (no floor at zero).
pub fn flight_power(v: VelocitySample, flight: &FlightParams) -> Result<f64> {
    let h2 = v.vx * v.vx + v.vy * v.vy;
    let nu = v.nu.unwrap_or_else(|| h2.sqrt());
    if !(nu > 0.0) {
        return Err(Error::Domain {
            op: "flight_power",
            reason: "horizontal-speed slack must be positive (hover is outside the model)".into(),
        });
    }
    let blade = flight.p_blade_hover
        * (1.0 + 3.0 * h2 / (flight.omega * flight.omega * flight.rotor_radius * flight.rotor_radius));
    let induced = flight.p_induced_hover * flight.induced_velocity_v0 / nu;
    let parasite = 0.5
        * flight.fuselage_drag_d0
        * flight.air_density
        * flight.rotor_solidity
        * flight.rotor_disc_area
        * h2.powf(1.5);
    let climb = flight.weight_g * v.vz;
    Ok(blade + induced + parasite + climb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_scenario;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn level_flight_reference_value() {
        let scn = default_scenario();
        let p = flight_power(VelocitySample::new([11.0, 0.0, 0.0]), &scn.flight).unwrap();
        assert_relative_eq!(p, 120.49, epsilon = 0.01);
        // Component split at 11 m/s.
        assert_relative_eq!(p, 81.873 + 32.471 + 6.151, epsilon = 0.01);
    }

    #[test]
    fn climb_term_is_linear_in_weight() {
        let scn = default_scenario();
        let level = flight_power(VelocitySample::new([11.0, 0.0, 0.0]), &scn.flight).unwrap();
        let climb = flight_power(VelocitySample::new([11.0, 0.0, 1.0]), &scn.flight).unwrap();
        assert_relative_eq!(climb - level, 20.0, epsilon = 1e-9);
        let descend = flight_power(VelocitySample::new([11.0, 0.0, -1.0]), &scn.flight).unwrap();
        assert_relative_eq!(level - descend, 20.0, epsilon = 1e-9);
    }

    #[test]
    fn parasite_term_is_cubic() {
        let scn = default_scenario();
        let f = &scn.flight;
        let parasite_at = |u: f64| {
            0.5 * f.fuselage_drag_d0 * f.air_density * f.rotor_solidity * f.rotor_disc_area
                * (u * u).powf(1.5)
        };
        let a = flight_power(VelocitySample::new([8.0, 0.0, 0.0]), f).unwrap() - parasite_at(8.0);
        let b = flight_power(VelocitySample::new([16.0, 0.0, 0.0]), f).unwrap() - parasite_at(16.0);
        // After removing the parasite term, the doubling must not show the
        // cubic growth; the cubic piece itself scales by exactly 8.
        assert_relative_eq!(parasite_at(16.0) / parasite_at(8.0), 8.0, epsilon = 1e-12);
        assert!(b.is_finite() && a.is_finite());
    }

    #[test]
    fn hover_rejected() {
        let scn = default_scenario();
        assert!(flight_power(VelocitySample::new([0.0, 0.0, 0.0]), &scn.flight).is_err());
        assert!(
            flight_power(VelocitySample::with_slack([1.0, 0.0, 0.0], 0.0), &scn.flight).is_err()
        );
    }

    #[test]
    fn comm_power_cases() {
        use crate::plan::{PowerAlloc, Schedule};
        let mut sched = Schedule::zeros(2, 2);
        let mut alloc = PowerAlloc::zeros(2, 2);
        // Paired slot: 0.5 + 1.5 W.
        sched.s[(0, 0, 1)] = 1.0;
        alloc.p[(0, 0)] = 0.5;
        alloc.p[(0, 1)] = 1.5;
        assert_relative_eq!(comm_power(&sched, &alloc, 0).unwrap(), 2.0);
        // Nothing scheduled.
        assert_relative_eq!(comm_power(&sched, &alloc, 1).unwrap(), 0.0);
        // Sole user at the peak.
        let scn = default_scenario();
        sched.s[(1, 1, 1)] = 1.0;
        alloc.p[(1, 1)] = scn.system.p_peak;
        let p = comm_power(&sched, &alloc, 1).unwrap();
        assert_relative_eq!(p, scn.system.p_peak);
        assert!(p <= scn.system.p_peak + 1e-9);
        // Negative power rejected.
        alloc.p[(1, 1)] = -1.0;
        assert!(comm_power(&sched, &alloc, 1).is_err());
    }

    #[test]
    fn convex_in_reformulated_variables() {
        // Midpoint convexity in (vx^2+vy^2, 1/nu, vz) on random pairs.
        let scn = default_scenario();
        let f = &scn.flight;
        let eval = |h2: f64, inv_nu: f64, vz: f64| {
            let u = h2.sqrt();
            flight_power(VelocitySample::with_slack([u, 0.0, vz], 1.0 / inv_nu), f).unwrap()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let x1 = (
                rng.gen_range(0.01..900.0),
                rng.gen_range(0.04..5.0),
                rng.gen_range(-5.0..5.0),
            );
            let x2 = (
                rng.gen_range(0.01..900.0),
                rng.gen_range(0.04..5.0),
                rng.gen_range(-5.0..5.0),
            );
            let mid = (
                0.5 * (x1.0 + x2.0),
                0.5 * (x1.1 + x2.1),
                0.5 * (x1.2 + x2.2),
            );
            let lhs = eval(mid.0, mid.1, mid.2);
            let rhs = 0.5 * eval(x1.0, x1.1, x1.2) + 0.5 * eval(x2.0, x2.1, x2.2);
            assert!(lhs <= rhs + 1e-9, "midpoint convexity violated");
        }
    }
}
