//! Outage machinery: the first-order Marcum Q function, the CDF of the
//! effective channel power, its numerical inverse (the outage-guaranteed
//! effective gain), and Monte-Carlo verifiers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::phase::EffectiveChannelStats;
use crate::Scheme;

/// Inverse-CDF request: which scheme's statistics and at what outage level.
#[derive(Debug, Clone, Copy)]
pub struct GainQuery {
    pub stats: EffectiveChannelStats,
    pub epsilon: f64,
    pub scheme: Scheme,
}

// ---------------------------------------------------------------------------
// Marcum Q
// ---------------------------------------------------------------------------

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection for the (unused in practice) small-argument side.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized upper incomplete gamma Q(s, x) = Γ(s, x) / Γ(s).
fn reg_gamma_q(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let log_pre = -x + s * x.ln() - ln_gamma(s);
    if x < s + 1.0 {
        // Series for P(s, x), then complement.
        let mut term = 1.0 / s;
        let mut sum = term;
        let mut n = s;
        for _ in 0..10_000 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (1.0 - (log_pre.exp() * sum)).clamp(0.0, 1.0)
    } else {
        // Lentz continued fraction for Q(s, x).
        let tiny = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (log_pre.exp() * h).clamp(0.0, 1.0)
    }
}

fn erfc(x: f64) -> f64 {
    // Complementary error function via the regularized gamma tail:
    // erfc(|x|) = Q(1/2, x^2).
    let q = reg_gamma_q(0.5, x * x);
    if x >= 0.0 {
        q
    } else {
        2.0 - q
    }
}

/// Standard normal tail probability P(Z > z).
fn normal_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// First-order Marcum Q function: the survival function at `b^2` of the
/// squared magnitude of a bivariate unit-variance Gaussian with mean radius
/// `a`. Evaluated as a Poisson mixture of Erlang survivals; large arguments
/// switch to a mode-centered log-domain summation and, for extreme
/// noncentrality, to the Gaussian asymptotic tail — both overflow-free.
pub fn marcum_q1(a: f64, b: f64) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() || a < 0.0 || b < 0.0 {
        return Err(Error::Domain {
            op: "marcum_q1",
            reason: format!("arguments must be finite and nonnegative, got ({a}, {b})"),
        });
    }
    if b == 0.0 {
        return Ok(1.0);
    }
    let x = 0.5 * a * a; // Poisson intensity
    let y = 0.5 * b * b; // Erlang threshold
    if a == 0.0 {
        return Ok((-y).exp());
    }

    if x <= 600.0 && y <= 600.0 && a * b <= 700.0 {
        // Plain forward summation from k = 0.
        let mut pois = (-x).exp();
        let mut gamma_term = (-y).exp();
        let mut survival = gamma_term; // Q(1, y)
        let mut total = pois * survival;
        let mut pois_mass = pois;
        for k in 1..100_000 {
            let kf = k as f64;
            pois *= x / kf;
            gamma_term *= y / kf;
            survival += gamma_term;
            total += pois * survival;
            pois_mass += pois;
            let tail = 1.0 - pois_mass;
            if tail < 1e-15 && kf > x {
                total += tail * survival.min(1.0); // remaining mass, bounded
                break;
            }
        }
        return Ok(total.clamp(0.0, 1.0));
    }

    if x > 1.0e6 {
        // Extreme noncentrality: the squared magnitude is effectively
        // Gaussian and Q1(a, b) -> P(Z > b - a).
        return Ok(normal_tail(b - a));
    }

    // Mode-centered summation with log-domain terms.
    let half_width = 12.0 * x.sqrt() + 30.0;
    let k_lo = (x - half_width).floor().max(0.0) as usize;
    let k_hi = (x + half_width).ceil() as usize;
    let mut survival = reg_gamma_q(k_lo as f64 + 1.0, y);
    let ln_x = x.ln();
    let ln_y = y.ln();
    let mut total = 0.0;
    for k in k_lo..=k_hi {
        let kf = k as f64;
        let log_pois = -x + kf * ln_x - ln_gamma(kf + 1.0);
        total += log_pois.exp() * survival;
        // Advance the Erlang survival to order k+2.
        let log_term = -y + (kf + 1.0) * ln_y - ln_gamma(kf + 2.0);
        survival = (survival + log_term.exp()).min(1.0);
    }
    Ok(total.clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Channel-power CDF and its inverse
// ---------------------------------------------------------------------------

/// Probability that the effective channel power falls at or below `chi`,
/// for a complex Gaussian channel with the given mean magnitude and total
/// scattered variance.
pub fn cdf_gain(stats: &EffectiveChannelStats, chi: f64) -> Result<f64> {
    if !(stats.variance > 0.0) {
        return Err(Error::Domain {
            op: "cdf_gain",
            reason: "variance must be positive".into(),
        });
    }
    if chi < 0.0 {
        return Err(Error::Domain {
            op: "cdf_gain",
            reason: "channel power must be nonnegative".into(),
        });
    }
    if chi == 0.0 {
        return Ok(0.0);
    }
    let sigma = stats.sigma();
    let a = std::f64::consts::SQRT_2 * stats.mean_magnitude / sigma;
    let b = (2.0 * chi).sqrt() / sigma;
    Ok(1.0 - marcum_q1(a, b)?)
}

/// The unique channel power whose outage probability is exactly
/// `query.epsilon`: transmitting at the rate implied by this gain is
/// violated with probability epsilon under the Gaussian model. One
/// threshold serves both decoding stages of a cancellation user, since both
/// stages share one channel distribution.
pub fn effective_gain(query: &GainQuery) -> Result<f64> {
    let eps = query.epsilon;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain {
            op: "effective_gain",
            reason: format!("epsilon must lie in (0,1), got {eps}"),
        });
    }
    let stats = &query.stats;
    let mut lo = 0.0f64;
    let mut hi = (stats.mean_magnitude + 10.0 * stats.sigma()).powi(2);
    if cdf_gain(stats, hi)? < eps {
        return Err(Error::Domain {
            op: "effective_gain",
            reason: "bracket failure: CDF below epsilon at the upper bracket (invalid stats?)".into(),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf_gain(stats, mid)? < eps {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-9 * hi.max(1e-300) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Empirical outage probability of transmitting at rate `r` with power `p`
/// over `n_samples` draws of the Gaussian effective channel. Deterministic
/// for a fixed seed regardless of thread count.
pub fn monte_carlo_outage(
    stats: &EffectiveChannelStats,
    rate: f64,
    power: f64,
    sigma2: f64,
    n_samples: usize,
    seed: u64,
) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    if power <= 0.0 {
        return 1.0;
    }
    let threshold = sigma2 * ((2f64).powf(rate) - 1.0) / power;
    let n_chunks = 64.min(n_samples.max(1));
    let per = n_samples / n_chunks;
    let rem = n_samples - per * n_chunks;
    let counts = par::map_chunks(n_chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(c as u64 + 1)));
        let m = per + if c < rem { 1 } else { 0 };
        let mut hits = 0usize;
        for _ in 0..m {
            if stats.sample_gain(&mut rng) < threshold {
                hits += 1;
            }
        }
        hits
    });
    counts.iter().sum::<usize>() as f64 / n_samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::{effective_stats_nsic, effective_stats_sic};
    use crate::geometry::Pose;
    use crate::scenario::default_scenario;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    /// Test-side oracle: the defining double series evaluated directly with
    /// its own log-factorial bookkeeping. Shares no code with the
    /// implementation.
    fn marcum_series_oracle(a: f64, b: f64) -> f64 {
        let x = 0.5 * a * a;
        let y = 0.5 * b * b;
        // Erlang survivals G[k] = e^{-y} sum_{j<=k} y^j/j!
        let kmax = 2_000usize;
        let mut g = Vec::with_capacity(kmax + 1);
        let mut log_fact = 0.0;
        let mut acc = 0.0;
        for j in 0..=kmax {
            if j > 0 {
                log_fact += (j as f64).ln();
            }
            let term = if y == 0.0 {
                if j == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (-y + (j as f64) * y.ln() - log_fact).exp()
            };
            acc += term;
            g.push(acc.min(1.0));
        }
        let mut total = 0.0;
        let mut log_fact = 0.0;
        for k in 0..=kmax {
            if k > 0 {
                log_fact += (k as f64).ln();
            }
            let pois = if x == 0.0 {
                if k == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (-x + (k as f64) * x.ln() - log_fact).exp()
            };
            total += pois * g[k];
        }
        total
    }

    #[test]
    fn closed_form_spot_values() {
        assert_eq!(marcum_q1(3.0, 0.0).unwrap(), 1.0);
        assert_relative_eq!(marcum_q1(0.0, 2.0).unwrap(), (-2.0f64).exp(), epsilon = 1e-15);
        // e^{-1} (e + I0(1)) / 2 with I0 evaluated by its power series.
        let mut i0 = 0.0;
        let mut term = 1.0;
        for k in 0..40 {
            if k > 0 {
                term *= 0.25 / ((k * k) as f64);
            }
            i0 += term;
        }
        let expect = (-1.0f64).exp() * (1.0f64.exp() + i0) / 2.0;
        assert_relative_eq!(marcum_q1(1.0, 1.0).unwrap(), expect, epsilon = 1e-12);
        assert_relative_eq!(expect, 0.73288, epsilon = 1e-5);
    }

    #[test]
    fn matches_series_oracle_on_grid() {
        for i in 0..20 {
            for j in 0..20 {
                let a = i as f64;
                let b = 0.25 + j as f64;
                let got = marcum_q1(a, b).unwrap();
                let want = marcum_series_oracle(a, b);
                assert!(
                    (got - want).abs() < 1e-10,
                    "Q1({a},{b}) = {got}, oracle {want}"
                );
            }
        }
    }

    #[test]
    fn large_argument_regime_is_sane() {
        // Continuity across the plain/centered switch.
        let q_small = marcum_q1(34.6, 34.0).unwrap();
        let q_large = marcum_q1(34.7, 34.1).unwrap();
        assert!((q_small - q_large).abs() < 0.05);
        // Far tail ordering at big noncentrality.
        let hi = marcum_q1(80.0, 70.0).unwrap();
        let lo = marcum_q1(80.0, 90.0).unwrap();
        assert!(hi > 0.99 && lo < 0.01, "hi={hi} lo={lo}");
        // Median-ish point: Q1(a, a) -> 1/2 as a grows.
        let mid = marcum_q1(200.0, 200.0).unwrap();
        assert!((mid - 0.5).abs() < 0.01, "mid={mid}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(marcum_q1(f64::NAN, 1.0).is_err());
        assert!(marcum_q1(1.0, f64::INFINITY).is_err());
        assert!(marcum_q1(-0.1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_both_arguments(a in 0.0f64..20.0, b in 0.1f64..20.0, d in 0.01f64..2.0) {
            let base = marcum_q1(a, b).unwrap();
            prop_assert!(marcum_q1(a + d, b).unwrap() >= base - 1e-12);
            prop_assert!(marcum_q1(a, b + d).unwrap() <= base + 1e-12);
        }

        #[test]
        fn bounded_probability(a in 0.0f64..60.0, b in 0.0f64..60.0) {
            let q = marcum_q1(a, b).unwrap();
            prop_assert!((0.0..=1.0).contains(&q));
        }
    }

    fn demo_stats() -> EffectiveChannelStats {
        let scn = default_scenario();
        effective_stats_sic(Pose::new([0.0, 0.0, 150.0]), 0, &scn).unwrap()
    }

    #[test]
    fn cdf_edge_cases() {
        let stats = demo_stats();
        assert_eq!(cdf_gain(&stats, 0.0).unwrap(), 0.0);
        assert!(cdf_gain(&stats, -1.0).is_err());
        // Vanishing variance: step at the squared mean.
        let mut tight = stats;
        tight.variance = (stats.mean_magnitude * 1e-9).powi(2);
        let below = cdf_gain(&tight, stats.mean_magnitude.powi(2) * 0.99).unwrap();
        let above = cdf_gain(&tight, stats.mean_magnitude.powi(2) * 1.01).unwrap();
        assert!(below < 1e-6, "below={below}");
        assert!(above > 1.0 - 1e-6, "above={above}");
    }

    #[test]
    fn cdf_matches_empirical_distribution() {
        let stats = demo_stats();
        let chi = stats.mean_magnitude.powi(2);
        let want = cdf_gain(&stats, chi).unwrap();
        let n = 1_000_000usize;
        let hits = par::map_chunks(100, |c| {
            let mut rng = ChaCha8Rng::seed_from_u64(313 + c as u64);
            (0..n / 100)
                .filter(|_| stats.sample_gain(&mut rng) <= chi)
                .count()
        });
        let emp = hits.iter().sum::<usize>() as f64 / n as f64;
        let tol = 3.0 * (want * (1.0 - want) / n as f64).sqrt();
        assert!((emp - want).abs() < tol, "emp={emp} want={want} tol={tol}");
    }

    #[test]
    fn inverse_round_trip_and_limits() {
        let stats = demo_stats();
        for eps in [0.001, 0.01, 0.1] {
            let f = effective_gain(&GainQuery {
                stats,
                epsilon: eps,
                scheme: Scheme::Sic,
            })
            .unwrap();
            let back = cdf_gain(&stats, f).unwrap();
            assert!((back - eps).abs() < 1e-6, "eps={eps} back={back}");
        }
        // Deterministic limit: gain collapses to the squared mean.
        let mut tight = stats;
        tight.variance = (stats.mean_magnitude * 1e-8).powi(2);
        for eps in [0.001, 0.1] {
            let f = effective_gain(&GainQuery {
                stats: tight,
                epsilon: eps,
                scheme: Scheme::Oma,
            })
            .unwrap();
            assert_relative_eq!(f, stats.mean_magnitude.powi(2), max_relative = 1e-5);
        }
    }

    #[test]
    fn gain_matches_monte_carlo_percentile() {
        let stats = demo_stats();
        let f = effective_gain(&GainQuery {
            stats,
            epsilon: 0.01,
            scheme: Scheme::Sic,
        })
        .unwrap();
        let n = 1_000_000usize;
        let mut gains: Vec<f64> = Vec::with_capacity(n);
        let chunks = par::map_chunks(100, |c| {
            let mut rng = ChaCha8Rng::seed_from_u64(777 + c as u64);
            (0..n / 100).map(|_| stats.sample_gain(&mut rng)).collect::<Vec<_>>()
        });
        for c in chunks {
            gains.extend(c);
        }
        gains.sort_by(f64::total_cmp);
        let percentile = gains[n / 100];
        assert_relative_eq!(f, percentile, max_relative = 0.01);
    }

    #[test]
    fn gain_monotone_in_epsilon_and_mean() {
        let stats = demo_stats();
        let f = |eps: f64, st: EffectiveChannelStats| {
            effective_gain(&GainQuery {
                stats: st,
                epsilon: eps,
                scheme: Scheme::Sic,
            })
            .unwrap()
        };
        assert!(f(0.001, stats) < f(0.01, stats));
        assert!(f(0.01, stats) < f(0.1, stats));
        let mut stronger = stats;
        stronger.mean_magnitude *= 1.3;
        assert!(f(0.01, stronger) > f(0.01, stats));
    }

    #[test]
    fn nsic_gain_never_exceeds_sic_gain() {
        let scn = default_scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        for _ in 0..100 {
            let pose = Pose::new([
                rng.gen_range(0.0..500.0),
                rng.gen_range(0.0..500.0),
                rng.gen_range(100.0..300.0),
            ]);
            let gu = rng.gen_range(0..scn.n_users());
            let eps = 0.01;
            let sic = effective_gain(&GainQuery {
                stats: effective_stats_sic(pose, gu, &scn).unwrap(),
                epsilon: eps,
                scheme: Scheme::Sic,
            })
            .unwrap();
            let nsic = effective_gain(&GainQuery {
                stats: effective_stats_nsic(pose, gu, &scn).unwrap(),
                epsilon: eps,
                scheme: Scheme::Nsic,
            })
            .unwrap();
            assert!(nsic <= sic * (1.0 + 1e-9), "nsic={nsic} sic={sic}");
        }
    }

    #[test]
    fn empirical_outage_tracks_epsilon() {
        let stats = demo_stats();
        let eps = 0.01;
        let f = effective_gain(&GainQuery {
            stats,
            epsilon: eps,
            scheme: Scheme::Sic,
        })
        .unwrap();
        let sigma2 = 1e-13;
        let p = 0.5;
        let rate = (1.0 + p * f / sigma2).log2();
        let n = 100_000;
        let emp = monte_carlo_outage(&stats, rate, p, sigma2, n, 9001);
        let bound = 3.0 * (eps * (1.0 - eps) / n as f64).sqrt();
        assert!((emp - eps).abs() <= bound, "emp={emp} bound={bound}");
        // Degenerate inputs.
        assert_eq!(monte_carlo_outage(&stats, 0.0, p, sigma2, 1000, 1), 0.0);
        assert_eq!(monte_carlo_outage(&stats, 1.0, 0.0, sigma2, 1000, 1), 1.0);
    }

    #[test]
    fn outage_is_seed_deterministic() {
        let stats = demo_stats();
        let a = monte_carlo_outage(&stats, 3.0, 1.0, 1e-13, 50_000, 5);
        let b = monte_carlo_outage(&stats, 3.0, 1.0, 1e-13, 50_000, 5);
        assert_eq!(a, b);
    }
}
