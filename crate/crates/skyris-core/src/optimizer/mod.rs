//! Alternating optimizer: the scheduling/power stage and the trajectory
//! stage solved in turns from the warm-start plan, plus the baseline
//! schemes and the independent plan audit.

pub mod audit;
pub mod bounds;
pub mod subproblem1;
pub mod subproblem2;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::plan::{PowerAlloc, Schedule, TrajectoryPlan};
use crate::power::{flight_power, VelocitySample};
use crate::report::{RunReport, TraceRecord};
use crate::scenario::{initial_trajectory, Scenario};
use crate::surrogate::{forward, SurrogateBundle};
use crate::vec3;
use crate::Scheme;

pub use subproblem1::{solve_subproblem1, Sp1Anchors, Sp1Options, Sp1Result};
pub use subproblem2::{rates_under_plan, solve_subproblem2, Sp2Options, Sp2Result};

/// Baseline schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// One user per slot.
    Oma,
    /// Reflecting surface removed (requires a bundle trained without it).
    Ni,
    /// Constant flight altitude.
    Cfa,
    /// Deterministic pure line-of-sight gains (requires that bundle).
    Pcsi,
    /// Straight constant-velocity trajectory; allocation only.
    St,
}

impl std::str::FromStr for Baseline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oma" => Ok(Baseline::Oma),
            "ni" => Ok(Baseline::Ni),
            "cfa" => Ok(Baseline::Cfa),
            "pcsi" => Ok(Baseline::Pcsi),
            "st" => Ok(Baseline::St),
            other => Err(Error::Parse(format!("unknown baseline `{other}`"))),
        }
    }
}

/// Knobs for the outer loop.
#[derive(Debug, Clone, Copy, Default)]
pub struct AoOptions {
    pub sp1: Sp1Options,
    pub sp2: Sp2Options,
    /// Keep the warm-start trajectory fixed (allocation stage only).
    pub skip_trajectory: bool,
}

/// Surrogate gains along a trajectory, per (slot, user, scheme index).
pub fn gains_along(
    scn: &Scenario,
    surrogates: &SurrogateBundle,
    plan: &TrajectoryPlan,
) -> Result<Array3<f64>> {
    let n = scn.n_slots();
    let k = scn.n_users();
    let mut gains = Array3::zeros((n, k, 3));
    for slot in 0..n {
        let t = plan.positions[slot];
        for user in 0..k {
            let gu = scn.geometry.gu_locations[user];
            let q = [t[0], t[1], t[2], gu[0], gu[1], gu[2]];
            for scheme in Scheme::ALL {
                gains[(slot, user, scheme.index())] =
                    1.0 / forward(surrogates.get(scheme), &q)?;
            }
        }
    }
    Ok(gains)
}

/// Average flight power of a plan with the slack at the horizontal speed.
pub fn average_flight_power(scn: &Scenario, plan: &TrajectoryPlan) -> Result<f64> {
    let mut acc = 0.0;
    for v in &plan.velocities {
        let nu = (v[0] * v[0] + v[1] * v[1]).sqrt().max(1e-3);
        acc += flight_power(VelocitySample::with_slack(*v, nu), &scn.flight)?;
    }
    Ok(acc / scn.n_slots() as f64)
}

/// Straight constant-velocity plan from start to finish.
pub fn straight_line_plan(scn: &Scenario) -> Result<TrajectoryPlan> {
    let n = scn.n_slots();
    let tau = scn.system.tau;
    let start = scn.geometry.start;
    let finish = scn.geometry.finish;
    let speed = vec3::dist(start, finish) / ((n - 1) as f64 * tau);
    if speed > scn.flight.v_max {
        return Err(Error::Infeasible(format!(
            "straight leg needs {speed:.2} m/s, above the speed limit"
        )));
    }
    let mut positions = Vec::with_capacity(n);
    for i in 0..n {
        positions.push(vec3::lerp(start, finish, i as f64 / (n - 1) as f64));
    }
    let v = vec3::scale(vec3::sub(finish, start), 1.0 / ((n - 1) as f64 * tau));
    let velocities = vec![v; n];
    let nu = vec![(v[0] * v[0] + v[1] * v[1]).sqrt(); n];
    Ok(TrajectoryPlan::new(positions, velocities, nu, tau))
}

/// Rounds the converged relaxation to a binary schedule and consistent
/// powers/rates.
fn round_and_finalize(
    scn: &Scenario,
    sp1: &Sp1Result,
    gains: &Array3<f64>,
) -> (Schedule, PowerAlloc) {
    let n = scn.n_slots();
    let k = scn.n_users();
    let schedule = sp1.schedule.rounded();
    let mut alloc = PowerAlloc::zeros(n, k);
    for slot in 0..n {
        for a in 0..k {
            for b in 0..k {
                if schedule.s[(slot, a, b)] < 0.5 {
                    continue;
                }
                let owners = if a == b { 0..1 } else { 0..2 };
                for owner in owners {
                    let user = if owner == 0 { a } else { b };
                    let pt = sp1.alloc.p_tilde[(slot, a, b, owner)];
                    alloc.p_tilde[(slot, a, b, owner)] = pt;
                    alloc.p[(slot, user)] = pt;
                }
            }
        }
    }
    let rates = audit::allocation_rates(scn, &schedule, &alloc, gains);
    alloc.r = rates;
    (schedule, alloc)
}

/// The full alternating loop: allocation stage, trajectory stage, repeat
/// until the relative objective change falls under the outer tolerance.
/// The trace of true penalized objectives is nonincreasing by construction.
pub fn alternate(
    scn: &Scenario,
    surrogates: &SurrogateBundle,
    seed: u64,
    opts: AoOptions,
) -> Result<RunReport> {
    let mut trajectory = if opts.skip_trajectory {
        straight_line_plan(scn)?
    } else {
        initial_trajectory(scn)?
    };
    let mut fly_avg = average_flight_power(scn, &trajectory)?;

    let outer_cap = if opts.skip_trajectory {
        1
    } else {
        scn.solver.max_iters_3
    };
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut warm: Option<(Schedule, PowerAlloc)> = None;
    let mut last_sp1: Option<Sp1Result> = None;
    let mut prev_outer = f64::INFINITY;

    for outer in 1..=outer_cap {
        let gains = gains_along(scn, surrogates, &trajectory)?;
        let sp1 = solve_subproblem1(
            scn,
            &gains,
            fly_avg,
            warm.as_ref().map(|(s, a)| (s, a)),
            opts.sp1,
            seed ^ outer as u64,
        )?;
        trace.push(TraceRecord {
            outer_iter: outer,
            stage: "alloc",
            objective: sp1.objective,
            comm_power: sp1.comm_power,
            flight_power: fly_avg,
            penalty: sp1.penalty,
        });

        let mut outer_obj = sp1.objective;
        if !opts.skip_trajectory {
            let sp2 = solve_subproblem2(
                scn,
                &sp1.schedule,
                &sp1.alloc,
                surrogates,
                &trajectory,
                opts.sp2,
            )?;
            outer_obj = sp2.objective + sp1.penalty;
            trace.push(TraceRecord {
                outer_iter: outer,
                stage: "traj",
                objective: outer_obj,
                comm_power: sp1.comm_power,
                flight_power: sp2.flight_power,
                penalty: sp1.penalty,
            });
            trajectory = sp2.trajectory;
            fly_avg = sp2.flight_power;
        }

        warm = Some((sp1.schedule.clone(), sp1.alloc.clone()));
        last_sp1 = Some(sp1);

        let rel = (prev_outer - outer_obj).abs() / outer_obj.abs().max(1e-12);
        prev_outer = outer_obj;
        if rel <= scn.solver.ao_tol {
            break;
        }
    }

    let sp1 = last_sp1.expect("at least one outer iteration ran");
    let gains = gains_along(scn, surrogates, &trajectory)?;
    let (schedule, alloc) = round_and_finalize(scn, &sp1, &gains);
    let avg_rates =
        audit::average_rates(scn, &audit::allocation_rates(scn, &schedule, &alloc, &gains));
    let comm_avg: f64 = alloc.p_tilde.iter().sum::<f64>() / scn.n_slots() as f64;
    let objective = comm_avg + fly_avg;

    Ok(RunReport {
        objective_trace: trace,
        schedule,
        alloc,
        trajectory,
        avg_rates,
        objective,
        gains,
    })
}

/// Runs one of the comparison schemes. The caller supplies the bundle the
/// scheme needs (surface-free gains for `Ni`, pure line-of-sight gains for
/// `Pcsi`, the standard bundle otherwise).
pub fn run_baseline(
    scn: &Scenario,
    surrogates: &SurrogateBundle,
    which: Baseline,
    seed: u64,
) -> Result<RunReport> {
    match which {
        Baseline::Oma => alternate(
            scn,
            surrogates,
            seed,
            AoOptions {
                sp1: Sp1Options {
                    orthogonal_only: true,
                },
                ..AoOptions::default()
            },
        ),
        Baseline::Ni | Baseline::Pcsi => alternate(scn, surrogates, seed, AoOptions::default()),
        Baseline::Cfa => {
            let mut pinned = scn.clone();
            let alt = pinned.geometry.box_min[2];
            pinned.geometry.start[2] = alt;
            pinned.geometry.finish[2] = alt;
            alternate(
                &pinned,
                surrogates,
                seed,
                AoOptions {
                    sp2: Sp2Options {
                        fix_altitude: Some(alt),
                    },
                    ..AoOptions::default()
                },
            )
        }
        Baseline::St => alternate(
            scn,
            surrogates,
            seed,
            AoOptions {
                skip_trajectory: true,
                ..AoOptions::default()
            },
        ),
    }
}
