//! Run reports and CSV emission.

use crate::error::Result;
use crate::plan::{PowerAlloc, Schedule, TrajectoryPlan};
use crate::power::{comm_power, flight_power, VelocitySample};
use crate::scenario::Scenario;

/// Formats a float with 17 significant digits so the printed value parses
/// back to the identical bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One alternating-optimization trace record.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Outer iteration (1-based).
    pub outer_iter: usize,
    /// Which subproblem produced the record.
    pub stage: &'static str,
    /// Penalized total objective (W).
    pub objective: f64,
    /// Average communication power (W).
    pub comm_power: f64,
    /// Average flight power (W).
    pub flight_power: f64,
    /// Binary-enforcement penalty value (W).
    pub penalty: f64,
}

/// Everything a solve emits.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub objective_trace: Vec<TraceRecord>,
    pub schedule: Schedule,
    pub alloc: PowerAlloc,
    pub trajectory: TrajectoryPlan,
    /// Average rate actually delivered per user (bits/s/Hz).
    pub avg_rates: Vec<f64>,
    /// Final objective (W).
    pub objective: f64,
    /// Gains used by the allocation, per (slot, user, scheme).
    pub gains: ndarray::Array3<f64>,
}

impl RunReport {
    pub fn final_comm_power(&self, scn: &Scenario) -> Result<f64> {
        let n = scn.n_slots();
        let mut acc = 0.0;
        for slot in 0..n {
            acc += comm_power(&self.schedule, &self.alloc, slot)?;
        }
        Ok(acc / n as f64)
    }

    pub fn final_flight_power(&self, scn: &Scenario) -> Result<f64> {
        let n = scn.n_slots();
        let mut acc = 0.0;
        for slot in 0..n {
            let v = VelocitySample::with_slack(
                self.trajectory.velocities[slot],
                self.trajectory.nu[slot].max(1e-9),
            );
            acc += flight_power(v, &scn.flight)?;
        }
        Ok(acc / n as f64)
    }

    /// `trajectory.csv` body: slot, position, velocity, slack, flight power.
    pub fn trajectory_csv(&self, scn: &Scenario) -> Result<String> {
        let mut out = String::from("n,t_x,t_y,t_z,v_x,v_y,v_z,nu,flight_power_w\n");
        for (i, (t, v)) in self
            .trajectory
            .positions
            .iter()
            .zip(&self.trajectory.velocities)
            .enumerate()
        {
            let nu = self.trajectory.nu[i];
            let p = flight_power(VelocitySample::with_slack(*v, nu.max(1e-9)), &scn.flight)?;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                i + 1,
                fmt_f64(t[0]),
                fmt_f64(t[1]),
                fmt_f64(t[2]),
                fmt_f64(v[0]),
                fmt_f64(v[1]),
                fmt_f64(v[2]),
                fmt_f64(nu),
                fmt_f64(p),
            ));
        }
        Ok(out)
    }

    /// `allocation.csv` body: slot, scheduled pair, per-user power and rate,
    /// transmit power total.
    pub fn allocation_csv(&self, scn: &Scenario) -> Result<String> {
        let k = scn.n_users();
        let mut head = String::from("n,sic_user,nsic_user");
        for u in 0..k {
            head.push_str(&format!(",p_{}_w", u + 1));
        }
        for u in 0..k {
            head.push_str(&format!(",r_{}_bps_hz", u + 1));
        }
        head.push_str(",comm_power_w\n");
        let mut out = head;
        for slot in 0..scn.n_slots() {
            let pair = self.schedule.active_pair(slot);
            let (sic, nsic) = match pair {
                Some((a, b)) if a == b => (a as i64 + 1, -1),
                Some((a, b)) => (a as i64 + 1, b as i64 + 1),
                None => (-1, -1),
            };
            let mut row = format!("{},{},{}", slot + 1, sic, nsic);
            for u in 0..k {
                row.push_str(&format!(",{}", fmt_f64(self.alloc.p[(slot, u)])));
            }
            for u in 0..k {
                row.push_str(&format!(",{}", fmt_f64(self.alloc.r[(slot, u)])));
            }
            row.push_str(&format!(
                ",{}\n",
                fmt_f64(comm_power(&self.schedule, &self.alloc, slot)?)
            ));
            out.push_str(&row);
        }
        Ok(out)
    }

    /// `trace.csv` body: one row per subproblem solve.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,stage,objective_w,comm_w,fly_w,penalty_w\n");
        for r in &self.objective_trace {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.outer_iter,
                r.stage,
                fmt_f64(r.objective),
                fmt_f64(r.comm_power),
                fmt_f64(r.flight_power),
                fmt_f64(r.penalty),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_round_trips() {
        for v in [
            1.0,
            -0.1,
            std::f64::consts::PI,
            1.2345678901234567e-13,
            9.87654321e11,
        ] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "value {v} -> {s}");
        }
    }
}
