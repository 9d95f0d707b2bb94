//! Physical channel construction: line-of-sight components, steering
//! phases across the reflecting surface, Rician sampling, and assembly of
//! the end-to-end effective channel under a phase policy.
//!
//! Sign conventions are fixed so that the aligned phase policy of
//! [`crate::phase::theorem1_phases`] co-phases the reflected line-of-sight
//! path with the direct one; only relative phases are observable.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{link_geometry, rician_factor_ag, LinkGeometry, Pose};
use crate::phase::PhasePolicy;
use crate::scenario::Scenario;

/// One draw of the three physical links for a (pose, user) pair.
#[derive(Debug, Clone)]
pub struct PhysicalChannelSample {
    /// Direct aircraft-to-user channel.
    pub h_ag: Complex64,
    /// Aircraft-to-surface channel (pure line of sight), one entry per element.
    pub h_ar: Vec<Complex64>,
    /// Surface-to-user channel, one entry per element.
    pub h_rg: Vec<Complex64>,
    /// Seed the draw was produced from.
    pub rng_seed: u64,
}

/// Standard circularly-symmetric complex Gaussian (unit total variance).
pub fn complex_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    // Box-Muller; each component has variance 1/2.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    let r = (-u1.ln()).sqrt(); // sqrt(2 * ln(1/u1)) / sqrt(2)
    let phi = 2.0 * std::f64::consts::PI * u2;
    Complex64::new(r * phi.cos(), r * phi.sin())
}

/// Standard real Gaussian draw.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Deterministic pieces of the links with full amplitudes: the line-of-sight
/// means of the direct and surface-to-user channels and the (deterministic)
/// aircraft-to-surface vector.
pub struct LosParts {
    pub geom: LinkGeometry,
    /// Mean of the direct channel (amplitude times unit phasor).
    pub direct_mean: Complex64,
    /// Scattered standard deviation of the direct channel.
    pub direct_sigma: f64,
    /// Mean of the surface-to-user channel per element.
    pub rg_mean: Vec<Complex64>,
    /// Scattered standard deviation per element of the surface-to-user link.
    pub rg_sigma: f64,
    /// Aircraft-to-surface vector per element.
    pub ar: Vec<Complex64>,
}

fn steering(
    n_x: usize,
    n_y: usize,
    phase_x: f64,
    phase_y: f64,
    base: Complex64,
) -> Vec<Complex64> {
    let mut v = Vec::with_capacity(n_x * n_y);
    for mx in 0..n_x {
        for my in 0..n_y {
            let ph = phase_x * mx as f64 + phase_y * my as f64;
            v.push(base * Complex64::from_polar(1.0, ph));
        }
    }
    v
}

/// Computes the deterministic channel components at a pose.
pub fn los_parts(pose: Pose, gu_index: usize, scn: &Scenario) -> Result<LosParts> {
    let s = &scn.system;
    let geom = link_geometry(pose, gu_index, scn)?;
    let two_pi_over_lambda = 2.0 * std::f64::consts::PI / s.lambda_c;

    let kappa_ag = rician_factor_ag(geom.theta_ag, s);
    let amp_ag = (s.beta0 / geom.d_ag.powf(s.alpha_ag)).sqrt();
    let direct_mean = Complex64::from_polar(
        amp_ag * (kappa_ag / (1.0 + kappa_ag)).sqrt(),
        -two_pi_over_lambda * geom.d_ag,
    );
    let direct_sigma = amp_ag / (1.0 + kappa_ag).sqrt();

    let amp_ar = (s.beta0 / geom.d_ar.powf(s.alpha_ar)).sqrt();
    let ar = steering(
        s.m_rx,
        s.m_ry,
        two_pi_over_lambda * s.delta_rx * geom.theta_ra.sin() * geom.xi_ra.cos(),
        two_pi_over_lambda * s.delta_ry * geom.theta_ra.sin() * geom.xi_ra.sin(),
        Complex64::from_polar(amp_ar, -two_pi_over_lambda * geom.d_ar),
    );

    let amp_rg = (s.beta0 / geom.d_rg.powf(s.alpha_rg)).sqrt();
    let rg_mean = steering(
        s.m_rx,
        s.m_ry,
        two_pi_over_lambda * s.delta_rx * geom.theta_rg.sin() * geom.xi_rg.cos(),
        two_pi_over_lambda * s.delta_ry * geom.theta_rg.sin() * geom.xi_rg.sin(),
        Complex64::from_polar(
            amp_rg * (s.kappa_rg / (1.0 + s.kappa_rg)).sqrt(),
            two_pi_over_lambda * geom.d_rg,
        ),
    );
    let rg_sigma = amp_rg / (1.0 + s.kappa_rg).sqrt();

    Ok(LosParts {
        geom,
        direct_mean,
        direct_sigma,
        rg_mean,
        rg_sigma,
        ar,
    })
}

/// Draws the three physical links with the given seed. Deterministic for a
/// fixed seed.
pub fn sample_physical_channels(
    pose: Pose,
    gu_index: usize,
    scn: &Scenario,
    seed: u64,
) -> Result<PhysicalChannelSample> {
    use rand::SeedableRng;
    let parts = los_parts(pose, gu_index, scn)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let h_ag = parts.direct_mean + parts.direct_sigma * complex_standard_normal(&mut rng);
    let h_rg = parts
        .rg_mean
        .iter()
        .map(|&m| m + parts.rg_sigma * complex_standard_normal(&mut rng))
        .collect();

    Ok(PhysicalChannelSample {
        h_ag,
        h_ar: parts.ar,
        h_rg,
        rng_seed: seed,
    })
}

/// End-to-end effective channel of a sample under a phase policy:
/// `h_ag + h_rg^H diag(e^{j phi}) h_ar`.
pub fn assemble_effective(sample: &PhysicalChannelSample, policy: &PhasePolicy) -> Result<Complex64> {
    let phases = policy.flat();
    if phases.len() != sample.h_ar.len() || sample.h_rg.len() != sample.h_ar.len() {
        return Err(Error::Domain {
            op: "assemble_effective",
            reason: format!(
                "element count mismatch: policy {}, links {}/{}",
                phases.len(),
                sample.h_ar.len(),
                sample.h_rg.len()
            ),
        });
    }
    let mut acc = sample.h_ag;
    for ((hr, ha), &phi) in sample.h_rg.iter().zip(&sample.h_ar).zip(phases) {
        acc += hr.conj() * Complex64::from_polar(1.0, phi) * ha;
    }
    Ok(acc)
}

/// Mean of the effective channel under a phase policy (deterministic parts
/// only).
pub fn mean_effective_channel(
    pose: Pose,
    gu_index: usize,
    scn: &Scenario,
    policy: &PhasePolicy,
) -> Result<Complex64> {
    let parts = los_parts(pose, gu_index, scn)?;
    let phases = policy.flat();
    let mut acc = parts.direct_mean;
    for ((hr, ha), &phi) in parts.rg_mean.iter().zip(&parts.ar).zip(phases) {
        acc += hr.conj() * Complex64::from_polar(1.0, phi) * ha;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par;
    use crate::scenario::default_scenario;
    use approx::assert_relative_eq;

    #[test]
    fn surface_link_entries_share_magnitude() {
        let scn = default_scenario();
        let sample =
            sample_physical_channels(Pose::new([120.0, 80.0, 170.0]), 1, &scn, 7).unwrap();
        let s = &scn.system;
        let d_ar = crate::vec3::dist(scn.geometry.irs_location, [120.0, 80.0, 170.0]);
        let expect = (s.beta0 / d_ar.powf(s.alpha_ar)).sqrt();
        for h in &sample.h_ar {
            assert_relative_eq!(h.norm(), expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn strong_rician_limit_collapses_to_los() {
        let mut scn = default_scenario();
        scn.system.a1 = 1e12; // factor floor so large the scattered part vanishes
        let pose = Pose::new([50.0, 60.0, 200.0]);
        let sample = sample_physical_channels(pose, 0, &scn, 3).unwrap();
        let parts = los_parts(pose, 0, &scn).unwrap();
        let amp = (scn.system.beta0
            / crate::vec3::dist(scn.geometry.gu_locations[0], pose.uav_position)
                .powf(scn.system.alpha_ag))
        .sqrt();
        assert_relative_eq!(sample.h_ag.norm(), amp, max_relative = 1e-5);
        assert_relative_eq!(
            (sample.h_ag - parts.direct_mean).norm(),
            0.0,
            epsilon = amp * 1e-5
        );
    }

    #[test]
    fn direct_link_power_matches_path_loss() {
        // Second moment of the direct link over 10^6 draws vs beta0 / d^alpha.
        let mut scn = default_scenario();
        scn.system.m_rx = 1;
        scn.system.m_ry = 1;
        let pose = Pose::new([0.0, 0.0, 150.0]);
        let n_chunks = 256usize;
        let per = 1_000_000usize / n_chunks;
        let sums = par::map_chunks(n_chunks, |c| {
            let mut acc = 0.0;
            for i in 0..per {
                let seed = (c * per + i) as u64;
                let s = sample_physical_channels(pose, 0, &scn, seed).unwrap();
                acc += s.h_ag.norm_sqr();
            }
            acc
        });
        let mean = sums.iter().sum::<f64>() / (n_chunks * per) as f64;
        let d = 135000f64.sqrt();
        let expect = scn.system.beta0 / d.powf(scn.system.alpha_ag);
        assert_relative_eq!(mean, expect, max_relative = 0.01);
    }

    #[test]
    fn identity_policy_assembly_matches_plain_sum() {
        let scn = default_scenario();
        let sample =
            sample_physical_channels(Pose::new([200.0, 200.0, 150.0]), 2, &scn, 11).unwrap();
        let policy = PhasePolicy::identity(scn.system.m_rx, scn.system.m_ry);
        let assembled = assemble_effective(&sample, &policy).unwrap();
        let mut plain = sample.h_ag;
        for (hr, ha) in sample.h_rg.iter().zip(&sample.h_ar) {
            plain += hr.conj() * ha;
        }
        assert_relative_eq!(assembled.re, plain.re, epsilon = 1e-12);
        assert_relative_eq!(assembled.im, plain.im, epsilon = 1e-12);
    }

    #[test]
    fn fixed_seed_reproduces_draw() {
        let scn = default_scenario();
        let a = sample_physical_channels(Pose::new([10.0, 20.0, 150.0]), 0, &scn, 42).unwrap();
        let b = sample_physical_channels(Pose::new([10.0, 20.0, 150.0]), 0, &scn, 42).unwrap();
        assert_eq!(a.h_ag, b.h_ag);
        assert_eq!(a.h_rg, b.h_rg);
    }
}
