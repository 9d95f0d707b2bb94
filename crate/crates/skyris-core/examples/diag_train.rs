use skyris_core::scenario::default_scenario;
use skyris_core::surrogate::{evaluate_nmse, generate_dataset, train, GainModel, Hyperparams};
use skyris_core::Scheme;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let np: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50000);
    let ep: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4e-3);
    let bs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(384);
    let wexp: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(2.0);

    let scn = default_scenario();
    let t0 = std::time::Instant::now();
    let data = generate_dataset(&scn, GainModel::Outage, Scheme::Sic, 0.01, np, 42).unwrap();
    println!("dataset in {:.1}s", t0.elapsed().as_secs_f64());
    let hyper = Hyperparams { epochs: ep, patience: ep, learning_rate: lr, batch_size: bs, weight_exponent: wexp, ..Hyperparams::default() };
    let t0 = std::time::Instant::now();
    let net = train(&data, Scheme::Sic, 0.01, GainModel::Outage, &hyper, 7).unwrap();
    let nmse = evaluate_nmse(&net, &data, &data.test_idx);
    let mut max_rel: f64 = 0.0;
    let mut mean_rel = 0.0;
    let mut cnt = 0.0;
    let mut min_pred = f64::INFINITY;
    for &i in &data.test_idx {
        let pred = net.forward_unchecked(&data.inputs[i]);
        let rel = ((pred - data.labels[i]) / data.labels[i]).abs();
        max_rel = max_rel.max(rel);
        mean_rel += rel;
        cnt += 1.0;
        min_pred = min_pred.min(pred);
    }
    println!("np={np} ep={ep} lr={lr} bs={bs} wexp={wexp}: nmse={nmse:.5} mean_rel={:.4} max_rel={max_rel:.3} min_pred={min_pred:.3e} time={:.1}s",
        mean_rel / cnt, t0.elapsed().as_secs_f64());
}
