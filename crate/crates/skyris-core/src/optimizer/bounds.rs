//! Interval-arithmetic bounds on the surrogate's pre-activation values over
//! the service box, layer by layer. The bounds make the indicator-driven
//! rectifier encoding sound: every admissible aircraft position must yield
//! pre-activations inside them (weights of either sign are handled by
//! pairing each coefficient with the box corner that extremizes it).

use ndarray::{Array1, Array2};

use crate::scenario::Scenario;
use crate::surrogate::{SurrogateNet, HIDDEN_1, HIDDEN_2, INPUT_DIM};
use crate::vec3::V3;

/// Per-neuron pre-activation intervals for a fixed ground-user position.
#[derive(Debug, Clone)]
pub struct ActivationBounds {
    pub layer1_lo: Array1<f64>,
    pub layer1_hi: Array1<f64>,
    pub layer2_lo: Array1<f64>,
    pub layer2_hi: Array1<f64>,
}

/// First-layer weights on the raw aircraft position plus the constant
/// contribution of the (fixed) user position.
pub fn layer1_split(net: &SurrogateNet, gu: V3) -> (Array2<f64>, Array1<f64>) {
    let (w_eff, b_eff) = net.layer1_affine();
    let mut w_t = Array2::zeros((HIDDEN_1, 3));
    let mut c = b_eff;
    for i in 0..HIDDEN_1 {
        for j in 0..3 {
            w_t[(i, j)] = w_eff[(i, j)];
        }
        for j in 3..INPUT_DIM {
            c[i] += w_eff[(i, j)] * gu[j - 3];
        }
    }
    (w_t, c)
}

/// Sound pre-activation intervals over `t in [box_min, box_max]` for a
/// fixed user position.
pub fn activation_bounds(net: &SurrogateNet, gu: V3, scn: &Scenario) -> ActivationBounds {
    let lo = scn.geometry.box_min;
    let hi = scn.geometry.box_max;
    let (w_t, c) = layer1_split(net, gu);

    let mut l1 = Array1::zeros(HIDDEN_1);
    let mut u1 = Array1::zeros(HIDDEN_1);
    for i in 0..HIDDEN_1 {
        let (mut a, mut b) = (c[i], c[i]);
        for j in 0..3 {
            let w = w_t[(i, j)];
            if w >= 0.0 {
                a += w * lo[j];
                b += w * hi[j];
            } else {
                a += w * hi[j];
                b += w * lo[j];
            }
        }
        l1[i] = a;
        u1[i] = b;
    }

    // Second layer over the rectified interval [relu(l1), relu(u1)].
    let mut l2 = Array1::zeros(HIDDEN_2);
    let mut u2 = Array1::zeros(HIDDEN_2);
    for i in 0..HIDDEN_2 {
        let (mut a, mut b) = (net.b2[i], net.b2[i]);
        for j in 0..HIDDEN_1 {
            let w = net.w2[(i, j)];
            let (rl, ru) = (l1[j].max(0.0), u1[j].max(0.0));
            if w >= 0.0 {
                a += w * rl;
                b += w * ru;
            } else {
                a += w * ru;
                b += w * rl;
            }
        }
        l2[i] = a;
        u2[i] = b;
    }

    ActivationBounds {
        layer1_lo: l1,
        layer1_hi: u1,
        layer2_lo: l2,
        layer2_hi: u2,
    }
}

/// Audits the bounds on random in-box positions; returns the number of
/// violations (zero for sound bounds).
pub fn audit_bounds(
    net: &SurrogateNet,
    gu: V3,
    scn: &Scenario,
    bounds: &ActivationBounds,
    n_trials: usize,
    seed: u64,
) -> usize {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let lo = scn.geometry.box_min;
    let hi = scn.geometry.box_max;
    let (w_t, c) = layer1_split(net, gu);
    let mut violations = 0usize;
    let tol = 1e-9;
    for _ in 0..n_trials {
        let t = [
            rng.gen_range(lo[0]..=hi[0]),
            rng.gen_range(lo[1]..=hi[1]),
            rng.gen_range(lo[2]..=hi[2]),
        ];
        let mut h1 = vec![0.0; HIDDEN_1];
        for i in 0..HIDDEN_1 {
            let pre = c[i] + w_t[(i, 0)] * t[0] + w_t[(i, 1)] * t[1] + w_t[(i, 2)] * t[2];
            if pre < bounds.layer1_lo[i] - tol || pre > bounds.layer1_hi[i] + tol {
                violations += 1;
            }
            h1[i] = pre.max(0.0);
        }
        for i in 0..HIDDEN_2 {
            let mut pre = net.b2[i];
            for j in 0..HIDDEN_1 {
                pre += net.w2[(i, j)] * h1[j];
            }
            if pre < bounds.layer2_lo[i] - tol || pre > bounds.layer2_hi[i] + tol {
                violations += 1;
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_scenario;
    use crate::surrogate::{generate_dataset, train, GainModel, Hyperparams};
    use crate::Scheme;

    #[test]
    fn bounds_contain_sampled_preactivations() {
        let mut scn = default_scenario();
        scn.system.m_rx = 2;
        scn.system.m_ry = 2;
        let data = generate_dataset(&scn, GainModel::Outage, Scheme::Sic, 0.01, 600, 21).unwrap();
        let hyper = Hyperparams {
            epochs: 12,
            ..Hyperparams::default()
        };
        let net = train(&data, Scheme::Sic, 0.01, GainModel::Outage, &hyper, 4).unwrap();
        let gu = scn.geometry.gu_locations[0];
        let bounds = activation_bounds(&net, gu, &scn);
        assert_eq!(audit_bounds(&net, gu, &scn, &bounds, 10_000, 77), 0);
    }
}
