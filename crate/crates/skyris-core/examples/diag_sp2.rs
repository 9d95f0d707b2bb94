use ndarray::{Array1, Array2};
use skyris_core::optimizer::{solve_subproblem2, Sp2Options};
use skyris_core::plan::{PowerAlloc, Schedule};
use skyris_core::scenario::{initial_trajectory, load_scenario_str};
use skyris_core::surrogate::{GainModel, SurrogateBundle, SurrogateNet, HIDDEN_1, HIDDEN_2, INPUT_DIM};
use skyris_core::Scheme;

fn constant_net(scheme: Scheme, value: f64) -> SurrogateNet {
    SurrogateNet {
        w1: Array2::zeros((HIDDEN_1, INPUT_DIM)), b1: Array1::zeros(HIDDEN_1),
        w2: Array2::zeros((HIDDEN_2, HIDDEN_1)), b2: Array1::zeros(HIDDEN_2),
        w3: Array1::zeros(HIDDEN_2), b3: value,
        scheme, epsilon: 0.01, model: GainModel::Outage,
        input_offset: [0.0; INPUT_DIM], input_scale: [1.0; INPUT_DIM],
    }
}

fn main() {
    let mut scn = load_scenario_str(r#"
[system]
m_rx = 4
m_ry = 4
n_slots = 29
tau = 5.0
r_min = 0.0

[geometry]
gu = [[250.0, 250.0, 0.0]]
"#).unwrap();
    scn.solver.max_iters_2 = 40;
    scn.solver.sca_tol_2 = 1e-7;
    let bundle = SurrogateBundle::new(
        constant_net(Scheme::Sic, 1e9),
        constant_net(Scheme::Nsic, 1e9),
        constant_net(Scheme::Oma, 1e9),
    ).unwrap();
    let schedule = Schedule::zeros(29, 1);
    let alloc = PowerAlloc::zeros(29, 1);
    let init = initial_trajectory(&scn).unwrap();
    let res = solve_subproblem2(&scn, &schedule, &alloc, &bundle, &init, Sp2Options::default()).unwrap();
    println!("trace: {:?}", res.trace);
    let speeds: Vec<f64> = res.trajectory.velocities.iter().map(|v| (v[0]*v[0]+v[1]*v[1]).sqrt()).collect();
    println!("speeds: {:?}", speeds.iter().map(|s| (s*10.0).round()/10.0).collect::<Vec<_>>());
    println!("nu:     {:?}", res.trajectory.nu.iter().map(|s| (s*10.0).round()/10.0).collect::<Vec<_>>());
    let path: f64 = res.trajectory.positions.windows(2).map(|w| {
        let d = [w[1][0]-w[0][0], w[1][1]-w[0][1], w[1][2]-w[0][2]];
        (d[0]*d[0]+d[1]*d[1]+d[2]*d[2]).sqrt()
    }).sum();
    println!("path length: {path:.1}; avg fly {:.2}", res.flight_power);
}
