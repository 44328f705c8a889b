//! Fermionic sampler against exact state-vector probabilities at d = 3.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use robust_phase::channel::oracle::{born_probabilities, code_word, syndrome_distribution};
use robust_phase::fermion::SyndromeSampler;
use robust_phase::rng::StreamRng;
use robust_phase::surface_code::{SurfaceCode, Syndrome};

/// Upper 1% point of chi-squared with `k` degrees of freedom
/// (Wilson-Hilferty).
fn chi2_crit_99(k: f64) -> f64 {
    let z = 2.326_347_874;
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

fn chi2_against(probs: &[f64], counts: &[usize], total: usize) -> (f64, f64) {
    // pool bins with expected count below 5
    let mut stat = 0.0;
    let mut bins = 0usize;
    let (mut pool_e, mut pool_o) = (0.0, 0.0);
    for (p, &c) in probs.iter().zip(counts) {
        let e = p * total as f64;
        if e < 5.0 {
            pool_e += e;
            pool_o += c as f64;
        } else {
            stat += (c as f64 - e).powi(2) / e;
            bins += 1;
        }
    }
    if pool_e > 0.0 {
        stat += (pool_o - pool_e).powi(2) / pool_e.max(1e-12);
        bins += 1;
    }
    (stat, chi2_crit_99((bins - 1) as f64))
}

fn empirical(theta: f64, samples: usize, seed: u64) -> Vec<usize> {
    let code = SurfaceCode::build(3).unwrap();
    let sampler = SyndromeSampler::new(&code, theta).unwrap();
    let index: HashMap<Syndrome, usize> =
        (0..16).map(|i| (Syndrome::from_index(i, 4), i)).collect();
    let mut rng = StreamRng::seed_from_u64(seed);
    let mut counts = vec![0usize; 16];
    for _ in 0..samples {
        counts[index[&sampler.sample(&mut rng).unwrap()]] += 1;
    }
    counts
}

#[test]
fn sampler_matches_born_rule() {
    let code = SurfaceCode::build(3).unwrap();
    for (theta, seed) in [(0.08 * PI, 11), (0.1 * PI, 12)] {
        let probs = born_probabilities(&code, theta).unwrap();
        let counts = empirical(theta, 5000, seed);
        let (stat, crit) = chi2_against(&probs, &counts, 5000);
        assert!(stat < crit, "theta {theta}: chi2 {stat} >= {crit}");
    }
}

#[test]
fn distribution_is_even_in_theta_and_state_independent() {
    let code = SurfaceCode::build(3).unwrap();
    let plus: Vec<Complex64> = code_word(&code, 0)
        .unwrap()
        .iter()
        .zip(code_word(&code, 1).unwrap())
        .map(|(a, b)| (a + b) / 2f64.sqrt())
        .collect();
    for theta in [0.03 * PI, 0.08 * PI, 0.12 * PI] {
        let pos = born_probabilities(&code, theta).unwrap();
        let neg = born_probabilities(&code, -theta).unwrap();
        let other = syndrome_distribution(&code, theta, &plus).unwrap();
        for i in 0..16 {
            assert!((pos[i] - neg[i]).abs() < 1e-12);
            assert!((pos[i] - other[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn identity_angle_never_flags() {
    let counts = empirical(0.0, 200, 5);
    assert_eq!(counts[0], 200);
}

/// The link-frame Gaussian sampler follows the code-state distribution
/// averaged over the Z-stabilizer sectors of its twisted Z-checks.
#[test]
fn link_frame_sampler_is_a_sector_average() {
    use robust_phase::fermion::{LinkFrameSampler, LinkGraph};
    let code = SurfaceCode::build(3).unwrap();
    let theta = 0.08 * PI;
    let twisted = LinkGraph::new(&code).twisted_z_faces();
    assert!(twisted.iter().any(|&t| t) && twisted.iter().any(|&t| !t));
    let w0 = code_word(&code, 0).unwrap();
    let mut avg = vec![0.0; 16];
    let mut count = 0.0;
    for f in 0..512usize {
        // X error f must leave every untwisted Z-check satisfied
        let keeps = code.z_faces.iter().zip(&twisted).all(|(face, &t)| {
            t || face.qubits.iter().filter(|&&q| (f >> q) & 1 == 1).count() % 2 == 0
        });
        if !keeps {
            continue;
        }
        let v: Vec<Complex64> = (0..512).map(|x| w0[x ^ f]).collect();
        for (a, p) in avg
            .iter_mut()
            .zip(syndrome_distribution(&code, theta, &v).unwrap())
        {
            *a += p;
        }
        count += 1.0;
    }
    avg.iter_mut().for_each(|a| *a /= count);

    let sampler = LinkFrameSampler::new(&code, theta).unwrap();
    let index: HashMap<Syndrome, usize> =
        (0..16).map(|i| (Syndrome::from_index(i, 4), i)).collect();
    let mut rng = StreamRng::seed_from_u64(21);
    let mut counts = vec![0usize; 16];
    for _ in 0..5000 {
        counts[index[&sampler.sample(&mut rng).unwrap()]] += 1;
    }
    let (stat, crit) = chi2_against(&avg, &counts, 5000);
    assert!(stat < crit, "chi2 {stat} >= {crit}");
    let (stat, crit) = chi2_against(&born_probabilities(&code, theta).unwrap(), &counts, 5000);
    assert!(
        stat > crit,
        "sector average should differ from the code state"
    );
}
