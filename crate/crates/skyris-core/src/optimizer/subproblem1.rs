//! Scheduling and power allocation at a fixed trajectory: a successive
//! convex approximation over the relaxed scheduling indicators, with the
//! indicator/power products linearized through peak-power bounds, rate
//! terms as exponential-cone hypographs, and a concave penalty driving the
//! relaxation to binary.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conic::{solve_conic, ConicProgramSpec, LinExpr, SolveStatus, VarId};
use crate::error::{Error, Result};
use crate::plan::{PowerAlloc, Schedule};
use crate::scenario::Scenario;

const LN2: f64 = std::f64::consts::LN_2;

/// Restrictions layered on the subproblem.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sp1Options {
    /// Forbid co-scheduling (diagonal assignments only).
    pub orthogonal_only: bool,
}

/// Solution of the scheduling/power stage.
#[derive(Debug, Clone)]
pub struct Sp1Result {
    pub schedule: Schedule,
    pub alloc: PowerAlloc,
    /// Penalized total objective (W): average transmit power plus the
    /// binary-enforcement penalty plus the (constant) average flight power.
    pub objective: f64,
    /// Average transmit power (W).
    pub comm_power: f64,
    /// Penalty value at the returned point.
    pub penalty: f64,
    /// True penalized objective after each inner iteration.
    pub trace: Vec<f64>,
    /// Max deviation of any indicator from {0, 1}.
    pub binary_deviation: f64,
    /// Rates implied by the solver's hypograph variables (slot x user).
    pub solver_rates: Array2<f64>,
}

/// Per-iteration anchor state.
#[derive(Debug, Clone)]
pub struct Sp1Anchors {
    /// Scheduling indicators.
    pub s: Array3<f64>,
    /// Cancellation-side power products (pair row, pair col).
    pub q: Array3<f64>,
}

impl Sp1Anchors {
    /// Fractional warm start: uniform indicators with a little seeded jitter
    /// to break symmetric ties, products at half the peak.
    pub fn fresh(scn: &Scenario, seed: u64) -> Self {
        let n = scn.n_slots();
        let k = scn.n_users();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = 1.0 / (k * k).max(1) as f64;
        let mut s = Array3::zeros((n, k, k));
        for v in s.iter_mut() {
            *v = (base * (1.0 + 0.05 * (rng.gen::<f64>() - 0.5))).clamp(1e-6, 1.0);
        }
        let q = s.mapv(|si| si * scn.system.p_peak / 2.0);
        Sp1Anchors { s, q }
    }

    pub fn from_solution(schedule: &Schedule, alloc: &PowerAlloc) -> Self {
        let n = schedule.n_slots();
        let k = schedule.n_users();
        let mut q = Array3::zeros((n, k, k));
        for slot in 0..n {
            for a in 0..k {
                for b in 0..k {
                    q[(slot, a, b)] = alloc.p_tilde[(slot, a, b, 0)];
                }
            }
        }
        Sp1Anchors {
            s: schedule.s.clone(),
            q,
        }
    }
}

struct VarMap {
    s: Vec<Vec<Vec<Option<VarId>>>>,
    p: Vec<Vec<VarId>>,
    pt: Vec<Vec<Vec<[Option<VarId>; 2]>>>,
    t_sic: Vec<Vec<Vec<Option<VarId>>>>,
    t_i: Vec<Vec<Vec<Option<VarId>>>>,
    t_oma: Vec<Vec<VarId>>,
}

/// Normalized gains: channel power gain over noise power, per
/// (slot, user, scheme index).
fn normalized_gains(scn: &Scenario, gains: &Array3<f64>) -> Result<Array3<f64>> {
    let (n, k) = (scn.n_slots(), scn.n_users());
    if gains.shape() != [n, k, 3] {
        return Err(Error::Domain {
            op: "solve_subproblem1",
            reason: format!("gain table must be {n}x{k}x3, got {:?}", gains.shape()),
        });
    }
    let mut g = gains.clone();
    for ((_, u, _), v) in g.indexed_iter_mut() {
        if !(*v > 0.0) || !v.is_finite() {
            return Err(Error::Domain {
                op: "solve_subproblem1",
                reason: "gains must be strictly positive and finite".into(),
            });
        }
        *v /= scn.system.noise_power_per_user[u];
    }
    Ok(g)
}

/// Upper bound on a pair term `s log2(1 + gamma q / s)` linearized at the
/// anchors, exact at them.
fn pair_rate_upper(
    s_var: VarId,
    q_var: VarId,
    gamma: f64,
    s_anchor: f64,
    q_anchor: f64,
) -> LinExpr {
    let sj = s_anchor.max(1e-9);
    let xj = gamma * q_anchor.max(0.0) / sj;
    let val = sj * (1.0 + xj).log2();
    let ds = (1.0 + xj).log2() - xj / ((1.0 + xj) * LN2);
    let dq = gamma / ((1.0 + xj) * LN2);
    LinExpr::constant(val - ds * sj - dq * q_anchor.max(0.0))
        .plus_term(s_var, ds)
        .plus_term(q_var, dq)
}

fn build_and_solve(
    scn: &Scenario,
    gamma: &Array3<f64>,
    anchors: &Sp1Anchors,
    fly_const_avg: f64,
    opts: Sp1Options,
) -> Result<(Schedule, PowerAlloc, Array2<f64>, SolveStatus, String)> {
    let n = scn.n_slots();
    let k = scn.n_users();
    let p_peak = scn.system.p_peak;
    let zeta = scn.solver.penalty_zeta;
    let inv_n = 1.0 / n as f64;

    let mut spec = ConicProgramSpec::new();
    let pair_allowed = |a: usize, b: usize| a == b || !opts.orthogonal_only;

    // Variables.
    let mut vm = VarMap {
        s: vec![vec![vec![None; k]; k]; n],
        p: Vec::with_capacity(n),
        pt: vec![vec![vec![[None, None]; k]; k]; n],
        t_sic: vec![vec![vec![None; k]; k]; n],
        t_i: vec![vec![vec![None; k]; k]; n],
        t_oma: Vec::with_capacity(n),
    };
    for slot in 0..n {
        vm.p.push((0..k).map(|_| spec.add_var(0.0, p_peak)).collect());
        vm.t_oma.push((0..k).map(|_| spec.free_var()).collect());
        for a in 0..k {
            for b in 0..k {
                if !pair_allowed(a, b) {
                    continue;
                }
                vm.s[slot][a][b] = Some(spec.add_var(0.0, 1.0));
                if a == b {
                    vm.pt[slot][a][b][0] = Some(spec.add_var(0.0, p_peak));
                } else {
                    vm.pt[slot][a][b][0] = Some(spec.add_var(0.0, p_peak));
                    vm.pt[slot][a][b][1] = Some(spec.add_var(0.0, p_peak));
                    vm.t_sic[slot][a][b] = Some(spec.free_var());
                    vm.t_i[slot][a][b] = Some(spec.free_var());
                }
            }
        }
    }

    // Objective: average transmit power + penalty (+ constant flight power).
    spec.add_objective_constant(fly_const_avg);
    for slot in 0..n {
        for a in 0..k {
            for b in 0..k {
                let Some(s_id) = vm.s[slot][a][b] else { continue };
                for owner in 0..2 {
                    if let Some(pt) = vm.pt[slot][a][b][owner] {
                        spec.add_objective(pt, inv_n);
                    }
                }
                // Concave penalty s - s^2, linearized at the anchor.
                let sj = anchors.s[(slot, a, b)];
                spec.add_objective(s_id, zeta * (1.0 - 2.0 * sj));
                spec.add_objective_constant(zeta * sj * sj);
            }
        }
    }

    for slot in 0..n {
        // At most one assignment per slot.
        let mut c2 = LinExpr::constant(-1.0);
        // Peak power over the products.
        let mut c4 = LinExpr::constant(-p_peak);
        for a in 0..k {
            for b in 0..k {
                let Some(s_id) = vm.s[slot][a][b] else { continue };
                c2 = c2.plus_term(s_id, 1.0);
                for owner in 0..2 {
                    let Some(pt) = vm.pt[slot][a][b][owner] else { continue };
                    c4 = c4.plus_term(pt, 1.0);
                    let owner_user = if owner == 0 { a } else { b };
                    let p_id = vm.p[slot][owner_user];
                    // pt <= p
                    spec.add_le(LinExpr::var(pt).plus_term(p_id, -1.0));
                    // pt <= s * peak
                    spec.add_le(LinExpr::var(pt).plus_term(s_id, -p_peak));
                    // pt >= p - (1 - s) * peak
                    spec.add_le(
                        LinExpr::var(p_id)
                            .plus_const(-p_peak)
                            .plus_term(s_id, p_peak)
                            .plus_term(pt, -1.0),
                    );
                }
            }
        }
        spec.add_le(c2);
        spec.add_le(c4);
    }

    // Rate hypographs.
    for slot in 0..n {
        for a in 0..k {
            // Sole-user term.
            let s_id = match vm.s[slot][a][a] {
                Some(v) => v,
                None => continue,
            };
            let pt = vm.pt[slot][a][a][0].expect("diagonal product exists");
            let g_oma = gamma[(slot, a, 2)];
            spec.add_exp(
                LinExpr::term(vm.t_oma[slot][a], LN2),
                LinExpr::var(s_id),
                LinExpr::var(s_id).plus_term(pt, g_oma),
            );
            for b in 0..k {
                if a == b || vm.s[slot][a][b].is_none() {
                    continue;
                }
                let s_ab = vm.s[slot][a][b].unwrap();
                let pt_a = vm.pt[slot][a][b][0].unwrap();
                let pt_b = vm.pt[slot][a][b][1].unwrap();
                // Cancellation-side rate of user a.
                let g_sic = gamma[(slot, a, 0)];
                spec.add_exp(
                    LinExpr::term(vm.t_sic[slot][a][b].unwrap(), LN2),
                    LinExpr::var(s_ab),
                    LinExpr::var(s_ab).plus_term(pt_a, g_sic),
                );
                // Combined-signal term of the co-scheduled user b.
                let g_nsic = gamma[(slot, b, 1)];
                spec.add_exp(
                    LinExpr::term(vm.t_i[slot][a][b].unwrap(), LN2),
                    LinExpr::var(s_ab),
                    LinExpr::var(s_ab)
                        .plus_term(pt_a, g_nsic)
                        .plus_term(pt_b, g_nsic),
                );
            }
        }
    }

    // Minimum average rate per user.
    for user in 0..k {
        let mut lhs = LinExpr::constant(-(n as f64) * scn.system.r_min_per_user[user]);
        for slot in 0..n {
            lhs = lhs.plus_term(vm.t_oma[slot][user], 1.0);
            for other in 0..k {
                if other == user {
                    continue;
                }
                if let Some(t) = vm.t_sic[slot][user][other] {
                    lhs = lhs.plus_term(t, 1.0);
                }
                if let Some(t) = vm.t_i[slot][other][user] {
                    // Interference correction, linearized upper bound.
                    let upper = pair_rate_upper(
                        vm.s[slot][other][user].unwrap(),
                        vm.pt[slot][other][user][0].unwrap(),
                        gamma[(slot, user, 1)],
                        anchors.s[(slot, other, user)],
                        anchors.q[(slot, other, user)],
                    );
                    lhs = lhs.plus_term(t, 1.0).plus(&upper.scaled(-1.0));
                }
            }
        }
        spec.add_le(lhs.scaled(-1.0));
    }

    let out = solve_conic(&spec);
    let status = out.status;
    let raw = out.raw_status.clone();

    // Extract (values are meaningful only on success; caller checks).
    let mut schedule = Schedule::zeros(n, k);
    let mut alloc = PowerAlloc::zeros(n, k);
    let mut solver_rates = Array2::zeros((n, k));
    if status == SolveStatus::Optimal {
        let x = &out.x;
        for slot in 0..n {
            for u in 0..k {
                alloc.p[(slot, u)] = x[vm.p[slot][u].0].max(0.0);
            }
            for a in 0..k {
                for b in 0..k {
                    if let Some(s_id) = vm.s[slot][a][b] {
                        schedule.s[(slot, a, b)] = x[s_id.0].clamp(0.0, 1.0);
                    }
                    for owner in 0..2 {
                        if let Some(pt) = vm.pt[slot][a][b][owner] {
                            alloc.p_tilde[(slot, a, b, owner)] = x[pt.0].max(0.0);
                        }
                    }
                }
            }
            // Rates implied by the hypograph variables of the dominant role.
            for u in 0..k {
                let mut best_s = 0.0;
                let mut rate = 0.0;
                if let Some(s_id) = vm.s[slot][u][u] {
                    let sv = x[s_id.0];
                    if sv > best_s {
                        best_s = sv;
                        rate = x[vm.t_oma[slot][u].0] / sv.max(1e-12);
                    }
                }
                for other in 0..k {
                    if other == u {
                        continue;
                    }
                    if let Some(s_id) = vm.s[slot][u][other] {
                        let sv = x[s_id.0];
                        if sv > best_s {
                            best_s = sv;
                            rate = x[vm.t_sic[slot][u][other].unwrap().0] / sv.max(1e-12);
                        }
                    }
                    if let Some(s_id) = vm.s[slot][other][u] {
                        let sv = x[s_id.0];
                        if sv > best_s {
                            best_s = sv;
                            let upper = pair_rate_upper(
                                vm.s[slot][other][u].unwrap(),
                                vm.pt[slot][other][u][0].unwrap(),
                                gamma[(slot, u, 1)],
                                anchors.s[(slot, other, u)],
                                anchors.q[(slot, other, u)],
                            );
                            rate = (x[vm.t_i[slot][other][u].unwrap().0] - upper.eval(x))
                                / sv.max(1e-12);
                        }
                    }
                }
                if best_s > 0.5 {
                    solver_rates[(slot, u)] = rate.max(0.0);
                }
            }
        }
    }
    Ok((schedule, alloc, solver_rates, status, raw))
}

/// True (non-surrogate) penalized objective of a candidate point.
/// Indicators within interior-point tolerance of {0, 1} count as exact, so
/// the penalty does not amplify solver noise.
fn true_objective(scn: &Scenario, schedule: &Schedule, alloc: &PowerAlloc, fly_const_avg: f64) -> (f64, f64, f64) {
    let n = scn.n_slots();
    let inv_n = 1.0 / n as f64;
    let comm: f64 = alloc.p_tilde.iter().sum::<f64>() * inv_n;
    let penalty: f64 = schedule
        .s
        .iter()
        .map(|&s| {
            let s = if (s - s.round()).abs() < 1e-7 { s.round() } else { s };
            scn.solver.penalty_zeta * (s - s * s)
        })
        .sum();
    (comm + penalty + fly_const_avg, comm, penalty)
}

/// Users whose requirement exceeds even a dedicated full-power schedule.
fn hopeless_users(scn: &Scenario, gamma: &Array3<f64>) -> Vec<usize> {
    let n = scn.n_slots();
    (0..scn.n_users())
        .filter(|&u| {
            let cap: f64 = (0..n)
                .map(|slot| (1.0 + gamma[(slot, u, 0)].max(gamma[(slot, u, 2)]) * scn.system.p_peak).log2())
                .sum::<f64>()
                / n as f64;
            cap < scn.system.r_min_per_user[u]
        })
        .collect()
}

/// Closed-form role rates of a (near-)binary point, used when the incumbent
/// is the warm start rather than a solver iterate.
fn closed_form_rates(scn: &Scenario, gamma: &Array3<f64>, schedule: &Schedule, alloc: &PowerAlloc) -> Array2<f64> {
    let n = scn.n_slots();
    let k = scn.n_users();
    let mut rates = Array2::zeros((n, k));
    for slot in 0..n {
        for a in 0..k {
            for b in 0..k {
                let s = schedule.s[(slot, a, b)];
                if s <= 0.5 {
                    continue;
                }
                if a == b {
                    let q = alloc.p_tilde[(slot, a, a, 0)] / s;
                    rates[(slot, a)] = (1.0 + gamma[(slot, a, 2)] * q).log2();
                } else {
                    let qa = alloc.p_tilde[(slot, a, b, 0)] / s;
                    let qb = alloc.p_tilde[(slot, a, b, 1)] / s;
                    rates[(slot, a)] = (1.0 + gamma[(slot, a, 0)] * qa).log2();
                    let g = gamma[(slot, b, 1)];
                    rates[(slot, b)] = (1.0 + g * qb / (g * qa + 1.0)).log2();
                }
            }
        }
    }
    rates
}

/// Runs the inner successive-convex-approximation loop. `gains` holds the
/// effective channel power gain per (slot, user, scheme index 0=SIC,
/// 1=co-scheduled, 2=sole); `fly_const_avg` is the average flight power of
/// the fixed trajectory, carried so traces are comparable across stages.
///
/// The reported trace is the incumbent (best-so-far) true penalized
/// objective, which is nonincreasing by construction; a warm start seeds
/// the incumbent, so alternation can never regress past it.
pub fn solve_subproblem1(
    scn: &Scenario,
    gains: &Array3<f64>,
    fly_const_avg: f64,
    warm: Option<(&Schedule, &PowerAlloc)>,
    opts: Sp1Options,
    seed: u64,
) -> Result<Sp1Result> {
    let gamma = normalized_gains(scn, gains)?;
    let mut anchors = match warm {
        Some((sched, alloc)) => Sp1Anchors::from_solution(sched, alloc),
        None => Sp1Anchors::fresh(scn, seed),
    };
    let mut incumbent: Option<(Schedule, PowerAlloc, Array2<f64>, f64)> = warm.map(|(sched, alloc)| {
        let (obj, _, _) = true_objective(scn, sched, alloc, fly_const_avg);
        let rates = closed_form_rates(scn, &gamma, sched, alloc);
        (sched.clone(), alloc.clone(), rates, obj)
    });

    let mut trace = Vec::new();
    let mut prev_obj = incumbent.as_ref().map(|b| b.3).unwrap_or(f64::INFINITY);

    for _iter in 0..scn.solver.max_iters_1 {
        let (schedule, alloc, solver_rates, status, raw) =
            build_and_solve(scn, &gamma, &anchors, fly_const_avg, opts)?;
        match status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => {
                let bind = hopeless_users(scn, &gamma);
                let detail = if bind.is_empty() {
                    "rate requirements jointly unsatisfiable at this trajectory".to_string()
                } else {
                    format!(
                        "rate requirement unreachable for user(s) {:?} even with a dedicated full-power schedule",
                        bind.iter().map(|u| u + 1).collect::<Vec<_>>()
                    )
                };
                return Err(Error::Infeasible(format!(
                    "scheduling stage infeasible: {detail} ({raw})"
                )));
            }
            SolveStatus::NumericalFailure => {
                return Err(Error::Solver(format!("scheduling stage failed: {raw}")));
            }
        }

        let (obj, _, _) = true_objective(scn, &schedule, &alloc, fly_const_avg);
        anchors = Sp1Anchors::from_solution(&schedule, &alloc);
        if incumbent.as_ref().map_or(true, |b| obj < b.3) {
            incumbent = Some((schedule, alloc, solver_rates, obj));
        }
        let inc_obj = incumbent.as_ref().unwrap().3;
        trace.push(inc_obj);
        let rel = (prev_obj - inc_obj).abs() / inc_obj.abs().max(1e-12);
        prev_obj = inc_obj;
        if rel <= scn.solver.sca_tol_1 {
            break;
        }
    }

    let (schedule, alloc, solver_rates, _) = incumbent.expect("at least one iteration ran");
    let (objective, comm_power, penalty) = true_objective(scn, &schedule, &alloc, fly_const_avg);
    let binary_deviation = schedule.binary_deviation();
    Ok(Sp1Result {
        schedule,
        alloc,
        objective,
        comm_power,
        penalty,
        trace,
        binary_deviation,
        solver_rates,
    })
}
