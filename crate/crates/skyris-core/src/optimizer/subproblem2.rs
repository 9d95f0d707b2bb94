//! Trajectory and velocity optimization at a fixed allocation: successive
//! convex approximation with the reciprocal-gain surrogate encoded through
//! its rectifier activation pattern (indicators driven to binary and pinned
//! per iteration, which reduces the product bounds to activation-cell
//! inequalities plus one affine output row), rate terms linearized against
//! the reciprocal-gain slack, and the flight-power model in conic form.

use ndarray::{Array2, Array3, Array4};

use crate::conic::{solve_conic, ConicProgramSpec, LinExpr, VarId};
use crate::error::{Error, Result};
use crate::optimizer::bounds::layer1_split;
use crate::plan::{PowerAlloc, Schedule, SurrogateVars, TrajectoryPlan};
use crate::power::{flight_power, VelocitySample};
use crate::scenario::Scenario;
use crate::surrogate::{forward, SurrogateBundle, SurrogateNet, HIDDEN_1, HIDDEN_2};
use crate::vec3::V3;
use crate::Scheme;

const LN2: f64 = std::f64::consts::LN_2;
/// Horizontal-speed slack floor; the induced-power model excludes hover.
const NU_MIN: f64 = 1e-3;
/// Scheduling weights below this are treated as unscheduled.
const S_ACTIVE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default)]
pub struct Sp2Options {
    /// Pin the altitude (and zero vertical velocity): constant-height runs.
    pub fix_altitude: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Sp2Result {
    pub trajectory: TrajectoryPlan,
    /// True total objective (W): average flight power at the returned plan
    /// plus the fixed average transmit power.
    pub objective: f64,
    /// Average flight power (W).
    pub flight_power: f64,
    /// True objective after each inner iteration.
    pub trace: Vec<f64>,
    /// Fraction of pinned indicator entries that match the activation
    /// pattern recomputed at the returned trajectory.
    pub activation_match: f64,
}

/// One scheduled (slot, user, scheme) with its fixed powers.
#[derive(Debug, Clone, Copy)]
struct ActiveTuple {
    slot: usize,
    user: usize,
    scheme: Scheme,
    weight: f64,
    /// Own signal power (W); for the co-scheduled user, the partner sum is
    /// own + interferer.
    p_own: f64,
    /// Interfering power for the co-scheduled user, 0 otherwise.
    p_int: f64,
}

fn active_tuples(schedule: &Schedule, alloc: &PowerAlloc) -> Vec<ActiveTuple> {
    let n = schedule.n_slots();
    let k = schedule.n_users();
    let mut out = Vec::new();
    for slot in 0..n {
        for a in 0..k {
            for b in 0..k {
                let s = schedule.s[(slot, a, b)];
                if s <= S_ACTIVE {
                    continue;
                }
                if a == b {
                    out.push(ActiveTuple {
                        slot,
                        user: a,
                        scheme: Scheme::Oma,
                        weight: s,
                        p_own: alloc.p_tilde[(slot, a, a, 0)],
                        p_int: 0.0,
                    });
                } else {
                    out.push(ActiveTuple {
                        slot,
                        user: a,
                        scheme: Scheme::Sic,
                        weight: s,
                        p_own: alloc.p_tilde[(slot, a, b, 0)],
                        p_int: 0.0,
                    });
                    out.push(ActiveTuple {
                        slot,
                        user: b,
                        scheme: Scheme::Nsic,
                        weight: s,
                        p_own: alloc.p_tilde[(slot, a, b, 1)],
                        p_int: alloc.p_tilde[(slot, a, b, 0)],
                    });
                }
            }
        }
    }
    out
}

/// Activation-pinned linearization of the network at an anchor: the
/// activation pattern, the layer-2 affine map within the cell, and the
/// affine output `g . t + h` that equals the network output throughout the
/// cell.
pub struct CellAffine {
    pub a1: Vec<bool>,
    pub a2: Vec<bool>,
    /// Layer-2 pre-activation map on the aircraft position.
    pub m2: Vec<[f64; 3]>,
    pub c2: Vec<f64>,
    /// Output gradient on the aircraft position.
    pub g: [f64; 3],
    /// Output constant.
    pub h: f64,
}

/// Composes the network's layers through the activation pattern at the
/// anchor, yielding the exact affine form the big-M encoding pins down when
/// its indicators match that pattern.
pub fn cell_affine(net: &SurrogateNet, gu: V3, anchor: V3) -> CellAffine {
    let q = [anchor[0], anchor[1], anchor[2], gu[0], gu[1], gu[2]];
    let (a1, a2) = net.activations(&q);
    let (w_t, c) = layer1_split(net, gu);

    let mut m2 = vec![[0.0f64; 3]; HIDDEN_2];
    let mut c2 = vec![0.0f64; HIDDEN_2];
    for j in 0..HIDDEN_2 {
        let mut acc = net.b2[j];
        for i in 0..HIDDEN_1 {
            if a1[i] {
                let w = net.w2[(j, i)];
                acc += w * c[i];
                for d in 0..3 {
                    m2[j][d] += w * w_t[(i, d)];
                }
            }
        }
        c2[j] = acc;
    }

    let mut g = [0.0f64; 3];
    let mut h = net.b3;
    for j in 0..HIDDEN_2 {
        if a2[j] {
            let w = net.w3[j];
            h += w * c2[j];
            for d in 0..3 {
                g[d] += w * m2[j][d];
            }
        }
    }
    CellAffine { a1, a2, m2, c2, g, h }
}

/// Pins the activation pattern of one tuple at the anchor position and
/// emits the cell inequalities plus the affine output row
/// `u_scaled >= sigma^2 (g . t + h)`.
fn encode_cell(
    spec: &mut ConicProgramSpec,
    net: &SurrogateNet,
    gu: V3,
    anchor: V3,
    t_vars: [VarId; 3],
    u_scaled: VarId,
    sigma2: f64,
) -> CellAffine {
    let cell = cell_affine(net, gu, anchor);
    let (w_t, c) = layer1_split(net, gu);

    // Layer-1 cell rows: active neurons keep pre >= 0, inactive pre <= 0.
    for i in 0..HIDDEN_1 {
        let row = LinExpr::constant(c[i])
            .plus_term(t_vars[0], w_t[(i, 0)])
            .plus_term(t_vars[1], w_t[(i, 1)])
            .plus_term(t_vars[2], w_t[(i, 2)]);
        if cell.a1[i] {
            spec.add_le(row.scaled(-1.0));
        } else {
            spec.add_le(row);
        }
    }
    for j in 0..HIDDEN_2 {
        let row = LinExpr::constant(cell.c2[j])
            .plus_term(t_vars[0], cell.m2[j][0])
            .plus_term(t_vars[1], cell.m2[j][1])
            .plus_term(t_vars[2], cell.m2[j][2]);
        if cell.a2[j] {
            spec.add_le(row.scaled(-1.0));
        } else {
            spec.add_le(row);
        }
    }

    spec.add_le(
        LinExpr::constant(sigma2 * cell.h)
            .plus_term(t_vars[0], sigma2 * cell.g[0])
            .plus_term(t_vars[1], sigma2 * cell.g[1])
            .plus_term(t_vars[2], sigma2 * cell.g[2])
            .plus_term(u_scaled, -1.0),
    );
    cell
}

/// Solves the trajectory stage. `comm_const_avg` is the average transmit
/// power of the fixed allocation, added so traces are comparable across
/// stages.
pub fn solve_subproblem2(
    scn: &Scenario,
    schedule: &Schedule,
    alloc: &PowerAlloc,
    surrogates: &SurrogateBundle,
    init: &TrajectoryPlan,
    opts: Sp2Options,
) -> Result<Sp2Result> {
    let n = scn.n_slots();
    let tau = scn.system.tau;
    let f = &scn.flight;
    let tuples = active_tuples(schedule, alloc);
    let comm_const_avg: f64 = alloc.p_tilde.iter().sum::<f64>() / n as f64;

    if init.positions.len() != n {
        return Err(Error::Domain {
            op: "solve_subproblem2",
            reason: "initial trajectory has the wrong slot count".into(),
        });
    }

    let mut anchor_pos = init.positions.clone();
    let mut anchor_vel = init.velocities.clone();
    let mut trace: Vec<f64> = Vec::new();

    // Incumbent: the warm-start plan itself, so the stage can only improve.
    let init_obj = {
        let mut fly = 0.0;
        for v in &init.velocities {
            let nu_true = (v[0] * v[0] + v[1] * v[1]).sqrt().max(NU_MIN);
            fly += flight_power(VelocitySample::with_slack(*v, nu_true), f)?;
        }
        fly / n as f64 + comm_const_avg
    };
    let init_cells: Vec<CellAffine> = tuples
        .iter()
        .map(|tp| {
            cell_affine(
                surrogates.get(tp.scheme),
                scn.geometry.gu_locations[tp.user],
                init.positions[tp.slot],
            )
        })
        .collect();
    let init_u: Result<Vec<f64>> = tuples
        .iter()
        .map(|tp| {
            let gu = scn.geometry.gu_locations[tp.user];
            let t = init.positions[tp.slot];
            let q = [t[0], t[1], t[2], gu[0], gu[1], gu[2]];
            Ok(scn.system.noise_power_per_user[tp.user]
                * forward(surrogates.get(tp.scheme), &q)?)
        })
        .collect();
    let mut incumbent: (TrajectoryPlan, Vec<CellAffine>, Vec<f64>, f64) = (
        TrajectoryPlan {
            positions: init.positions.clone(),
            velocities: init.velocities.clone(),
            nu: init
                .velocities
                .iter()
                .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
                .collect(),
            tau,
            surrogate: None,
        },
        init_cells,
        init_u?,
        init_obj,
    );
    let mut prev_obj = init_obj;

    for _iter in 0..scn.solver.max_iters_2 {
        let mut spec = ConicProgramSpec::new();

        // Position and velocity variables with box/endpoint bounds.
        let mut t_vars: Vec<[VarId; 3]> = Vec::with_capacity(n);
        let mut v_vars: Vec<[VarId; 3]> = Vec::with_capacity(n);
        for slot in 0..n {
            let mut tv = [VarId(0); 3];
            for d in 0..3 {
                let (mut lo, mut hi) = (scn.geometry.box_min[d], scn.geometry.box_max[d]);
                if slot == 0 {
                    lo = scn.geometry.start[d];
                    hi = scn.geometry.start[d];
                }
                if slot == n - 1 {
                    lo = scn.geometry.finish[d];
                    hi = scn.geometry.finish[d];
                }
                if d == 2 {
                    if let Some(alt) = opts.fix_altitude {
                        lo = alt;
                        hi = alt;
                    }
                }
                tv[d] = spec.add_var(lo, hi);
            }
            t_vars.push(tv);
            let mut vv = [VarId(0); 3];
            for d in 0..3 {
                let (mut lo, mut hi) = (-f.v_max, f.v_max);
                if d == 2 && opts.fix_altitude.is_some() {
                    lo = 0.0;
                    hi = 0.0;
                }
                vv[d] = spec.add_var(lo, hi);
            }
            v_vars.push(vv);
        }

        // Step rule, acceleration and speed limits.
        for slot in 0..n - 1 {
            for d in 0..3 {
                spec.add_eq(
                    LinExpr::var(t_vars[slot + 1][d])
                        .plus_term(t_vars[slot][d], -1.0)
                        .plus_term(v_vars[slot][d], -tau),
                );
            }
            spec.add_soc(
                LinExpr::constant(f.v_acc * tau),
                (0..3)
                    .map(|d| LinExpr::var(v_vars[slot + 1][d]).plus_term(v_vars[slot][d], -1.0))
                    .collect(),
            );
        }
        for slot in 0..n {
            spec.add_soc(
                LinExpr::constant(f.v_max),
                (0..3).map(|d| LinExpr::var(v_vars[slot][d])).collect(),
            );
        }

        // Flight-power epigraph pieces.
        let blade_coeff = 3.0 * f.p_blade_hover / (f.omega * f.omega * f.rotor_radius * f.rotor_radius);
        let parasite_coeff =
            0.5 * f.fuselage_drag_d0 * f.air_density * f.rotor_solidity * f.rotor_disc_area;
        let inv_n = 1.0 / n as f64;
        spec.add_objective_constant(comm_const_avg + f.p_blade_hover);

        let mut nu_vars = Vec::with_capacity(n);
        for slot in 0..n {
            let nu = spec.add_var(NU_MIN, f.v_max);
            let e = spec.add_var(0.0, f.v_max * f.v_max);
            let winv = spec.add_var(0.0, 1.0 / NU_MIN);
            let gpar = spec.add_var(0.0, f.v_max.powi(3));
            nu_vars.push(nu);

            // e >= vx^2 + vy^2
            spec.add_rsoc(
                LinExpr::term(e, 0.5),
                LinExpr::constant(1.0),
                vec![LinExpr::var(v_vars[slot][0]), LinExpr::var(v_vars[slot][1])],
            );
            // winv >= 1/nu
            spec.add_rsoc(
                LinExpr::term(winv, 0.5),
                LinExpr::var(nu),
                vec![LinExpr::constant(1.0)],
            );
            // gpar >= e^{3/2}
            spec.add_three_halves_epigraph(LinExpr::var(e), gpar);
            // nu^2 <= linearized squared horizontal speed
            let (vxj, vyj) = (anchor_vel[slot][0], anchor_vel[slot][1]);
            let lin = LinExpr::constant(-(vxj * vxj + vyj * vyj))
                .plus_term(v_vars[slot][0], 2.0 * vxj)
                .plus_term(v_vars[slot][1], 2.0 * vyj);
            spec.add_rsoc(lin.scaled(0.5), LinExpr::constant(1.0), vec![LinExpr::var(nu)]);

            spec.add_objective(e, inv_n * blade_coeff);
            spec.add_objective(winv, inv_n * f.p_induced_hover * f.induced_velocity_v0);
            spec.add_objective(gpar, inv_n * parasite_coeff);
            spec.add_objective(v_vars[slot][2], inv_n * f.weight_g);
        }

        // Surrogate state per active tuple, pinned to the anchor's pattern.
        let mut u_vars: Vec<VarId> = Vec::with_capacity(tuples.len());
        let mut u_anchor: Vec<f64> = Vec::with_capacity(tuples.len());
        let mut encodings: Vec<CellAffine> = Vec::with_capacity(tuples.len());
        for tp in &tuples {
            let net = surrogates.get(tp.scheme);
            let gu = scn.geometry.gu_locations[tp.user];
            let sigma2 = scn.system.noise_power_per_user[tp.user];
            let anchor = anchor_pos[tp.slot];
            let q = [anchor[0], anchor[1], anchor[2], gu[0], gu[1], gu[2]];
            let u_val = sigma2 * forward(net, &q)?;
            let u_scaled = spec.add_var(0.0, f64::INFINITY);
            let enc = encode_cell(
                &mut spec,
                net,
                gu,
                anchor,
                t_vars[tp.slot],
                u_scaled,
                sigma2,
            );
            u_vars.push(u_scaled);
            u_anchor.push(u_val);
            encodings.push(enc);
        }

        // Minimum average rate rows.
        for user in 0..scn.n_users() {
            let r_min = scn.system.r_min_per_user[user];
            if r_min <= 0.0 {
                continue;
            }
            let mut lhs = LinExpr::constant(-(n as f64) * r_min);
            let mut any = false;
            for (idx, tp) in tuples.iter().enumerate() {
                if tp.user != user {
                    continue;
                }
                any = true;
                let u = u_vars[idx];
                let uj = u_anchor[idx];
                match tp.scheme {
                    Scheme::Sic | Scheme::Oma => {
                        let pw = tp.p_own.max(0.0);
                        let r_at = (1.0 + pw / uj).log2();
                        let slope = pw / (uj * (uj + pw) * LN2);
                        lhs = lhs
                            .plus_const(tp.weight * (r_at + slope * uj))
                            .plus_term(u, -tp.weight * slope);
                    }
                    Scheme::Nsic => {
                        let p_sum = (tp.p_own + tp.p_int).max(0.0);
                        let r_at = (1.0 + p_sum / uj).log2();
                        let slope = p_sum / (uj * (uj + p_sum) * LN2);
                        lhs = lhs
                            .plus_const(tp.weight * (r_at + slope * uj))
                            .plus_term(u, -tp.weight * slope);
                        // Interference correction z >= log2(1 + p_int/u),
                        // exact via an inverse slack and one cone.
                        let z = spec.free_var();
                        let inv = spec.nonneg_var();
                        let ratio = spec.add_var(1e-12, 1.0);
                        spec.add_rsoc(
                            LinExpr::term(inv, 0.5),
                            LinExpr::var(u).plus_const(tp.p_int),
                            vec![LinExpr::constant(1.0)],
                        );
                        spec.add_le(
                            LinExpr::var(ratio)
                                .plus_term(inv, tp.p_int)
                                .plus_const(-1.0),
                        );
                        spec.add_exp(
                            LinExpr::term(z, -LN2),
                            LinExpr::constant(1.0),
                            LinExpr::var(ratio),
                        );
                        lhs = lhs.plus_term(z, -tp.weight);
                    }
                }
            }
            if !any {
                return Err(Error::Infeasible(format!(
                    "user {} has a positive rate requirement but no scheduled slot",
                    user + 1
                )));
            }
            spec.add_le(lhs.scaled(-1.0));
        }

        let out = solve_conic(&spec).require_optimal()?;
        let x = &out.x;

        // Extract the plan.
        let positions: Vec<V3> = t_vars
            .iter()
            .map(|tv| [x[tv[0].0], x[tv[1].0], x[tv[2].0]])
            .collect();
        let velocities: Vec<V3> = v_vars
            .iter()
            .map(|vv| [x[vv[0].0], x[vv[1].0], x[vv[2].0]])
            .collect();
        let nu: Vec<f64> = nu_vars.iter().map(|v| x[v.0]).collect();

        // True objective at the extracted plan.
        let mut fly = 0.0;
        for slot in 0..n {
            let v = velocities[slot];
            let nu_true = (v[0] * v[0] + v[1] * v[1]).sqrt().max(NU_MIN);
            fly += flight_power(VelocitySample::with_slack(v, nu_true), f)?;
        }
        fly /= n as f64;
        let obj = fly + comm_const_avg;

        let u_solved: Vec<f64> = u_vars.iter().map(|v| x[v.0]).collect();
        let plan = TrajectoryPlan {
            positions: positions.clone(),
            velocities: velocities.clone(),
            nu,
            tau,
            surrogate: None,
        };
        if obj < incumbent.3 {
            incumbent = (plan, encodings, u_solved, obj);
        }
        trace.push(incumbent.3);
        anchor_pos = positions;
        anchor_vel = velocities;

        let rel = (prev_obj - incumbent.3).abs() / incumbent.3.abs().max(1e-12);
        prev_obj = incumbent.3;
        if rel <= scn.solver.sca_tol_2 {
            break;
        }
    }

    let (mut plan, encodings, u_solved, objective) = incumbent;

    // Assemble the surrogate state: reciprocal gains and indicators for
    // every (slot, user, scheme); scheduled tuples carry the solver values
    // and pinned patterns, the rest are filled from the network at the
    // returned trajectory.
    let k = scn.n_users();
    let mut u_arr = Array3::zeros((n, k, 3));
    let mut a1_arr = Array4::zeros((n, k, 3, HIDDEN_1));
    let mut a2_arr = Array4::zeros((n, k, 3, HIDDEN_2));
    for slot in 0..n {
        for user in 0..k {
            for scheme in Scheme::ALL {
                let net = surrogates.get(scheme);
                let gu = scn.geometry.gu_locations[user];
                let t = plan.positions[slot];
                let q = [t[0], t[1], t[2], gu[0], gu[1], gu[2]];
                u_arr[(slot, user, scheme.index())] = net.forward_unchecked(&q);
                let (a1, a2) = net.activations(&q);
                for (i, &b) in a1.iter().enumerate() {
                    a1_arr[(slot, user, scheme.index(), i)] = if b { 1.0 } else { 0.0 };
                }
                for (i, &b) in a2.iter().enumerate() {
                    a2_arr[(slot, user, scheme.index(), i)] = if b { 1.0 } else { 0.0 };
                }
            }
        }
    }
    let mut match_hits = 0usize;
    let mut match_total = 0usize;
    for (idx, tp) in tuples.iter().enumerate() {
        let sigma2 = scn.system.noise_power_per_user[tp.user];
        u_arr[(tp.slot, tp.user, tp.scheme.index())] = u_solved[idx] / sigma2;
        let enc = &encodings[idx];
        for (i, &b) in enc.a1.iter().enumerate() {
            let pinned = if b { 1.0 } else { 0.0 };
            match_total += 1;
            if a1_arr[(tp.slot, tp.user, tp.scheme.index(), i)] == pinned {
                match_hits += 1;
            }
            a1_arr[(tp.slot, tp.user, tp.scheme.index(), i)] = pinned;
        }
        for (i, &b) in enc.a2.iter().enumerate() {
            let pinned = if b { 1.0 } else { 0.0 };
            match_total += 1;
            if a2_arr[(tp.slot, tp.user, tp.scheme.index(), i)] == pinned {
                match_hits += 1;
            }
            a2_arr[(tp.slot, tp.user, tp.scheme.index(), i)] = pinned;
        }
        let _ = (enc.g, enc.h);
    }
    let activation_match = if match_total == 0 {
        1.0
    } else {
        match_hits as f64 / match_total as f64
    };

    plan.surrogate = Some(SurrogateVars {
        u: u_arr,
        a1: a1_arr,
        a2: a2_arr,
    });

    let flight_power_avg = objective - comm_const_avg;
    Ok(Sp2Result {
        trajectory: plan,
        objective,
        flight_power: flight_power_avg,
        trace,
        activation_match,
    })
}

/// Rates delivered by a trajectory under a fixed allocation, using the
/// surrogate gains (slot x user, bits/s/Hz).
pub fn rates_under_plan(
    scn: &Scenario,
    schedule: &Schedule,
    alloc: &PowerAlloc,
    surrogates: &SurrogateBundle,
    plan: &TrajectoryPlan,
) -> Result<Array2<f64>> {
    let n = scn.n_slots();
    let k = scn.n_users();
    let mut rates = Array2::zeros((n, k));
    for tp in active_tuples(schedule, alloc) {
        let net = surrogates.get(tp.scheme);
        let gu = scn.geometry.gu_locations[tp.user];
        let t = plan.positions[tp.slot];
        let q = [t[0], t[1], t[2], gu[0], gu[1], gu[2]];
        let gain = 1.0 / forward(net, &q)?;
        let sigma2 = scn.system.noise_power_per_user[tp.user];
        let r = match tp.scheme {
            Scheme::Sic | Scheme::Oma => (1.0 + tp.p_own * gain / sigma2).log2(),
            Scheme::Nsic => {
                (1.0 + tp.p_own * gain / (tp.p_int * gain + sigma2)).log2()
            }
        };
        rates[(tp.slot, tp.user)] += tp.weight * r;
    }
    Ok(rates)
}
