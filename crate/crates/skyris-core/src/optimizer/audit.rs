//! Independent feasibility re-check of emitted plans, outside the solver:
//! scheduling simplex and binary-ness, power limits, product consistency,
//! delivered rates, step rule, endpoints, box, kinematic limits, and the
//! Monte-Carlo outage audit.

use ndarray::{Array2, Array3};

use crate::error::Result;
use crate::outage::monte_carlo_outage;
use crate::phase::{effective_stats_at, effective_stats_no_irs_at, theorem1_phases};
use crate::plan::{PowerAlloc, Schedule, TrajectoryPlan};
use crate::geometry::Pose;
use crate::scenario::Scenario;
use crate::surrogate::GainModel;
use crate::vec3;
use crate::Scheme;

pub const AUDIT_TOL: f64 = 1e-6;

/// Per-slot rates delivered by an allocation at the given gains, weighted
/// by the scheduling indicators (slot x user, bits/s/Hz).
pub fn allocation_rates(
    scn: &Scenario,
    schedule: &Schedule,
    alloc: &PowerAlloc,
    gains: &Array3<f64>,
) -> Array2<f64> {
    let n = scn.n_slots();
    let k = scn.n_users();
    let mut rates = Array2::zeros((n, k));
    for slot in 0..n {
        for a in 0..k {
            for b in 0..k {
                let s = schedule.s[(slot, a, b)];
                if s <= 1e-12 {
                    continue;
                }
                if a == b {
                    let f = gains[(slot, a, 2)];
                    let sigma2 = scn.system.noise_power_per_user[a];
                    let p = alloc.p_tilde[(slot, a, a, 0)] / s.max(1e-12);
                    rates[(slot, a)] += s * (1.0 + p * f / sigma2).log2();
                } else {
                    let f_a = gains[(slot, a, 0)];
                    let sigma_a = scn.system.noise_power_per_user[a];
                    let p_a = alloc.p_tilde[(slot, a, b, 0)] / s.max(1e-12);
                    rates[(slot, a)] += s * (1.0 + p_a * f_a / sigma_a).log2();
                    let f_b = gains[(slot, b, 1)];
                    let sigma_b = scn.system.noise_power_per_user[b];
                    let p_b = alloc.p_tilde[(slot, a, b, 1)] / s.max(1e-12);
                    rates[(slot, b)] += s * (1.0 + p_b * f_b / (p_a * f_b + sigma_b)).log2();
                }
            }
        }
    }
    rates
}

/// Average delivered rate per user.
pub fn average_rates(scn: &Scenario, rates: &Array2<f64>) -> Vec<f64> {
    let n = scn.n_slots() as f64;
    (0..scn.n_users())
        .map(|u| rates.column(u).sum() / n)
        .collect()
}

/// Re-checks every plan constraint at `AUDIT_TOL`; returns human-readable
/// violations (empty = pass).
pub fn audit_plan(
    scn: &Scenario,
    schedule: &Schedule,
    alloc: &PowerAlloc,
    plan: &TrajectoryPlan,
    gains: &Array3<f64>,
) -> Vec<String> {
    let mut bad = Vec::new();
    let n = scn.n_slots();
    let k = scn.n_users();
    let tol = AUDIT_TOL;

    // Scheduling box and simplex.
    for ((slot, a, b), &s) in schedule.s.indexed_iter() {
        if !(-1e-9..=1.0 + 1e-9).contains(&s) {
            bad.push(format!("indicator out of [0,1] at slot {slot} pair ({a},{b}): {s}"));
        }
    }
    for slot in 0..n {
        let total: f64 = (0..k)
            .flat_map(|a| (0..k).map(move |b| (a, b)))
            .map(|(a, b)| schedule.s[(slot, a, b)])
            .sum();
        if total > 1.0 + tol {
            bad.push(format!("more than one assignment at slot {slot}: sum {total}"));
        }
    }

    // Powers, peak, product consistency.
    for slot in 0..n {
        let mut comm = 0.0;
        for a in 0..k {
            if alloc.p[(slot, a)] < -1e-9 {
                bad.push(format!("negative power at slot {slot} user {a}"));
            }
            for b in 0..k {
                let s = schedule.s[(slot, a, b)];
                for owner in 0..2 {
                    if a == b && owner == 1 {
                        continue;
                    }
                    let pt = alloc.p_tilde[(slot, a, b, owner)];
                    comm += pt;
                    if pt < -1e-9 {
                        bad.push(format!("negative product power at slot {slot} ({a},{b},{owner})"));
                    }
                    let owner_user = if owner == 0 { a } else { b };
                    let p = alloc.p[(slot, owner_user)];
                    if (pt - s * p).abs() > 1e-4 * scn.system.p_peak.max(1.0) {
                        bad.push(format!(
                            "product inconsistent at slot {slot} ({a},{b},{owner}): pt={pt:.6e} s*p={:.6e}",
                            s * p
                        ));
                    }
                }
            }
        }
        if comm > scn.system.p_peak + tol {
            bad.push(format!("peak power exceeded at slot {slot}: {comm}"));
        }
    }

    // Delivered average rates.
    let rates = allocation_rates(scn, schedule, alloc, gains);
    for (u, avg) in average_rates(scn, &rates).iter().enumerate() {
        if *avg < scn.system.r_min_per_user[u] - tol {
            bad.push(format!(
                "rate requirement missed for user {}: {avg:.6} < {}",
                u + 1,
                scn.system.r_min_per_user[u]
            ));
        }
    }

    // Kinematics.
    if plan.positions.len() != n || plan.velocities.len() != n {
        bad.push("trajectory slot count mismatch".into());
        return bad;
    }
    for slot in 0..n - 1 {
        let step = vec3::add(plan.positions[slot], vec3::scale(plan.velocities[slot], scn.system.tau));
        if vec3::dist(step, plan.positions[slot + 1]) > tol {
            bad.push(format!("step rule violated at slot {slot}"));
        }
    }
    if vec3::dist(plan.positions[0], scn.geometry.start) > tol {
        bad.push("start point violated".into());
    }
    if vec3::dist(plan.positions[n - 1], scn.geometry.finish) > tol {
        bad.push("finish point violated".into());
    }
    for (slot, p) in plan.positions.iter().enumerate() {
        if !scn.geometry.in_box(*p, tol) {
            bad.push(format!("service box violated at slot {slot}"));
        }
    }
    for w in plan.velocities.windows(2) {
        if vec3::dist(w[0], w[1]) > scn.flight.v_acc * scn.system.tau + tol {
            bad.push("acceleration limit violated".into());
        }
    }
    for v in &plan.velocities {
        if vec3::norm(*v) > scn.flight.v_max + tol {
            bad.push("speed limit violated".into());
        }
    }
    for (slot, v) in plan.velocities.iter().enumerate() {
        let h = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if plan.nu[slot] > h + tol {
            bad.push(format!("speed slack above horizontal speed at slot {slot}"));
        }
    }

    // Phase policy entries stay in [0, 2pi) for every aligned slot.
    for slot in 0..n {
        if let Some((a, _)) = schedule.active_pair(slot) {
            if let Ok(policy) = theorem1_phases(Pose::new(plan.positions[slot]), a, scn) {
                if policy.phases.iter().any(|&p| !(0.0..2.0 * std::f64::consts::PI).contains(&p)) {
                    bad.push(format!("phase outside [0, 2pi) at slot {slot}"));
                }
            }
        }
    }

    bad
}

/// One Monte-Carlo outage measurement.
#[derive(Debug, Clone)]
pub struct OutageRow {
    pub slot: usize,
    pub user: usize,
    pub scheme: Scheme,
    pub epsilon: f64,
    pub empirical: f64,
    pub sigma_hat: f64,
}

/// Empirically verifies the outage level of every scheduled (slot, user)
/// against the channel statistics of the given gain model. For the pure
/// line-of-sight model the rows are informational (no outage target).
pub fn mc_outage_audit(
    scn: &Scenario,
    schedule: &Schedule,
    alloc: &PowerAlloc,
    plan: &TrajectoryPlan,
    model: GainModel,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<OutageRow>> {
    let n = scn.n_slots();
    let k = scn.n_users();
    let mut rows = Vec::new();
    for slot in 0..n {
        let pose = plan.positions[slot];
        for a in 0..k {
            for b in 0..k {
                let s = schedule.s[(slot, a, b)];
                if s <= 0.5 {
                    continue;
                }
                let mut push_row = |user: usize,
                                    scheme: Scheme,
                                    rate: f64,
                                    p_eff: f64|
                 -> Result<()> {
                    if rate <= 0.0 {
                        return Ok(());
                    }
                    let gu = scn.geometry.gu_locations[user];
                    let stats = match model {
                        GainModel::NoIrs => effective_stats_no_irs_at(pose, gu, scn)?,
                        _ => effective_stats_at(pose, gu, scn, scheme)?,
                    };
                    let eps = match scheme {
                        Scheme::Sic => scn.system.eps_sic[user],
                        Scheme::Nsic => scn.system.eps_nsic[user],
                        Scheme::Oma => scn.system.eps_oma[user],
                    };
                    let emp = if p_eff <= 0.0 {
                        1.0
                    } else {
                        monte_carlo_outage(
                            &stats,
                            rate,
                            p_eff,
                            scn.system.noise_power_per_user[user],
                            n_samples,
                            seed ^ ((slot as u64) << 32 | (user as u64) << 8 | scheme.index() as u64),
                        )
                    };
                    rows.push(OutageRow {
                        slot,
                        user,
                        scheme,
                        epsilon: eps,
                        empirical: emp,
                        sigma_hat: (eps * (1.0 - eps) / n_samples as f64).sqrt(),
                    });
                    Ok(())
                };
                if a == b {
                    push_row(a, Scheme::Oma, alloc.r[(slot, a)], alloc.p[(slot, a)])?;
                } else {
                    push_row(a, Scheme::Sic, alloc.r[(slot, a)], alloc.p[(slot, a)])?;
                    // Co-scheduled user: the interference-limited rate maps
                    // to an equivalent single-signal power threshold.
                    let r_b = alloc.r[(slot, b)];
                    let p_eff =
                        alloc.p[(slot, b)] - alloc.p[(slot, a)] * ((2f64).powf(r_b) - 1.0);
                    push_row(b, Scheme::Nsic, r_b, p_eff)?;
                }
            }
        }
    }
    Ok(rows)
}
