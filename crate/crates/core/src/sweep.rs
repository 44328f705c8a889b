//! Parameter sweeps of the relative logical dephasing `E[q_s / |phi_s|]`,
//! the half-success angle and the distance-suppression fit.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelCache, ChannelTable};
use crate::decoder::MatchingGraph;
use crate::error::{Error, Result};
use crate::fermion::{draw_samples, NoiseParams};
use crate::rng;
use crate::stats::bootstrap_mean;
use crate::surface_code::SurfaceCode;

/// Syndromes with `|phi_s|` below this are left out of the ratio.
pub const PHI_CUTOFF: f64 = 1e-12;

/// One `(d, p, theta)` measurement. Flat so it maps to one CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub d: usize,
    pub p: f64,
    pub theta: f64,
    pub n_samples: usize,
    pub distinct_syndromes: usize,
    pub trivial_probability: f64,
    /// Mean of `q_s / |phi_s|` over samples with `|phi_s| >= PHI_CUTOFF`.
    pub ratio_mean: f64,
    pub ratio_stderr: f64,
    pub ratio_ci_low: f64,
    pub ratio_ci_high: f64,
    /// Sample fraction left out of the ratio.
    pub excluded_weight: f64,
}

impl SweepPoint {
    /// Summarizes a channel table; the bootstrap uses `(seed, "bootstrap", 0)`.
    pub fn from_table(table: &ChannelTable, resamples: usize, seed: u64) -> Result<SweepPoint> {
        let mut ratios = Vec::with_capacity(table.n_samples);
        let mut excluded = 0usize;
        for e in &table.entries {
            let phi = e.params.phi_s.abs();
            if e.params.degenerate || phi < PHI_CUTOFF {
                excluded += e.count;
            } else {
                ratios.extend(std::iter::repeat(e.params.q_s / phi).take(e.count));
            }
        }
        if ratios.is_empty() {
            return Err(Error::Numerical(format!(
                "no samples with |phi_s| >= {PHI_CUTOFF} at theta = {}",
                table.theta
            )));
        }
        let est = bootstrap_mean(&ratios, resamples, &mut rng::stream(seed, "bootstrap", 0));
        Ok(SweepPoint {
            d: table.d,
            p: table.p,
            theta: table.theta,
            n_samples: table.n_samples,
            distinct_syndromes: table.entries.len(),
            trivial_probability: table.trivial_probability(),
            ratio_mean: est.mean,
            ratio_stderr: est.stderr,
            ratio_ci_low: est.ci_low,
            ratio_ci_high: est.ci_high,
            excluded_weight: excluded as f64 / table.n_samples as f64,
        })
    }
}

/// Seed of a sweep point; depends only on the point, so adding points to a
/// sweep leaves the others unchanged.
pub fn point_seed(master: u64, d: usize, p: f64, theta: f64) -> u64 {
    let label = format!("sweep/{d}/{:016x}/{:016x}", p.to_bits(), theta.to_bits());
    rng::derive_seed(master, &label, 0)
}

/// Measures one point from `n_samples` fresh syndromes.
pub fn sweep_point(
    code: &SurfaceCode,
    graph: &MatchingGraph,
    cache: &ChannelCache,
    noise: NoiseParams,
    n_samples: usize,
    resamples: usize,
    master_seed: u64,
) -> Result<SweepPoint> {
    let seed = point_seed(master_seed, code.d, noise.p, noise.theta);
    let table = ChannelTable::sample(code, graph, cache, noise, n_samples, seed)?;
    SweepPoint::from_table(&table, resamples, seed)
}

/// Cartesian sweep over `ds x ps x thetas`, duplicates removed, sorted by
/// `(d, p, theta)`.
pub fn sweep_grid(
    ds: &[usize],
    ps: &[f64],
    thetas: &[f64],
    n_samples: usize,
    resamples: usize,
    master_seed: u64,
    cache: &ChannelCache,
) -> Result<Vec<SweepPoint>> {
    let mut codes = BTreeMap::new();
    for &d in ds {
        if let std::collections::btree_map::Entry::Vacant(slot) = codes.entry(d) {
            let code = SurfaceCode::build(d)?;
            let graph = MatchingGraph::build(&code);
            slot.insert((code, graph));
        }
    }
    let mut points: Vec<(usize, NoiseParams)> = Vec::new();
    for &d in codes.keys() {
        for &p in ps {
            for &theta in thetas {
                points.push((d, NoiseParams::new(theta, p)?));
            }
        }
    }
    points.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.p.total_cmp(&b.1.p))
            .then(a.1.theta.total_cmp(&b.1.theta))
    });
    points.dedup_by(|a, b| a.0 == b.0 && a.1.p == b.1.p && a.1.theta == b.1.theta);
    points
        .par_iter()
        .map(|(d, noise)| {
            let (code, graph) = &codes[d];
            sweep_point(
                code,
                graph,
                cache,
                *noise,
                n_samples,
                resamples,
                master_seed,
            )
        })
        .collect()
}

/// Largest number of X-checks for which [`exact_point`] enumerates.
pub const MAX_ENUMERATED_CHECKS: usize = 12;

/// `E[q_s / |phi_s|]` summed over every syndrome with its exact
/// probability; no sampling error. Feasible up to `d = 5`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactPoint {
    pub d: usize,
    pub p: f64,
    pub theta: f64,
    pub ratio_mean: f64,
    pub trivial_probability: f64,
    /// Probability mass with `|phi_s| < PHI_CUTOFF`, left out of the mean.
    pub excluded_weight: f64,
}

pub fn exact_point(
    code: &SurfaceCode,
    graph: &MatchingGraph,
    cache: &ChannelCache,
    noise: NoiseParams,
) -> Result<ExactPoint> {
    let m = code.num_x_checks();
    if m > MAX_ENUMERATED_CHECKS {
        return Err(Error::Config(format!(
            "exact enumeration over 2^{m} syndromes is not supported (limit 2^{MAX_ENUMERATED_CHECKS})"
        )));
    }
    let parts = (0..1usize << m)
        .into_par_iter()
        .map(|i| {
            let s = crate::surface_code::Syndrome::from_index(i, m);
            let ch = cache.evaluate(code, graph, noise, &s)?;
            let phi = ch.phi_s.abs();
            let trivial = if i == 0 { ch.p_s } else { 0.0 };
            Ok(if ch.degenerate || phi < PHI_CUTOFF {
                (0.0, ch.p_s, trivial)
            } else {
                (ch.p_s * ch.q_s / phi, 0.0, trivial)
            })
        })
        .collect::<Result<Vec<(f64, f64, f64)>>>()?;
    let (ratio, excluded, trivial) = parts.iter().fold((0.0, 0.0, 0.0), |acc, x| {
        (acc.0 + x.0, acc.1 + x.1, acc.2 + x.2)
    });
    let included = 1.0 - excluded;
    Ok(ExactPoint {
        d: code.d,
        p: noise.p,
        theta: noise.theta,
        ratio_mean: if included > 0.0 {
            ratio / included
        } else {
            f64::NAN
        },
        trivial_probability: trivial,
        excluded_weight: excluded,
    })
}

/// Result of the half-success bisection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSuccess {
    pub theta: f64,
    pub trivial_probability: f64,
    pub iterations: usize,
    /// `|p(0) - 1/2| <= tol` was reached.
    pub converged: bool,
}

/// Empirical probability of the trivial syndrome from `n_samples` draws.
pub fn trivial_probability(
    code: &SurfaceCode,
    noise: NoiseParams,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let draws = draw_samples(code, noise, n_samples, seed)?;
    Ok(draws.iter().filter(|(s, _)| s.s.is_trivial()).count() as f64 / n_samples as f64)
}

/// Bisection for the angle where the empirical `p(0)` crosses 1/2.
///
/// Every evaluation reuses the same random streams, so the estimate is a
/// smooth-ish function of the angle. Stops once `|p(0) - 1/2| <= tol` or
/// after `max_iter` midpoints.
#[allow(clippy::too_many_arguments)]
pub fn find_half_success_angle(
    code: &SurfaceCode,
    p: f64,
    lo: f64,
    hi: f64,
    n_samples: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<HalfSuccess> {
    let eval = |theta: f64| trivial_probability(code, NoiseParams::new(theta, p)?, n_samples, seed);
    let (p_lo, p_hi) = (eval(lo)?, eval(hi)?);
    if !(p_lo > 0.5 && p_hi < 0.5) {
        return Err(Error::NotBracketing { lo: p_lo, hi: p_hi });
    }
    let (mut a, mut b) = (lo, hi);
    let mut best = HalfSuccess {
        theta: f64::NAN,
        trivial_probability: f64::NAN,
        iterations: 0,
        converged: false,
    };
    for it in 1..=max_iter {
        let mid = 0.5 * (a + b);
        let pm = eval(mid)?;
        best = HalfSuccess {
            theta: mid,
            trivial_probability: pm,
            iterations: it,
            converged: (pm - 0.5).abs() <= tol,
        };
        if best.converged {
            break;
        }
        if pm > 0.5 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(best)
}

/// Log-linear fit `ln y = a - kappa d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuppressionFit {
    pub kappa: f64,
    pub kappa_stderr: f64,
    pub intercept: f64,
    /// `ln y_i - fitted`, per input point.
    pub residuals: Vec<f64>,
}

impl SuppressionFit {
    /// 95% normal interval for `kappa`.
    pub fn kappa_interval(&self) -> (f64, f64) {
        (
            self.kappa - 1.96 * self.kappa_stderr,
            self.kappa + 1.96 * self.kappa_stderr,
        )
    }
}

/// Weighted least squares on `(d, mean, stderr)` triples. With all
/// standard errors positive the weights are inverse variances of `ln y`
/// (delta method) and the slope error follows from them; otherwise the fit
/// is unweighted and the error comes from the residuals.
pub fn fit_suppression(points: &[(usize, f64, f64)]) -> Result<SuppressionFit> {
    let mut distinct: Vec<usize> = points.iter().map(|p| p.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateFit(
            "need at least two distinct distances".into(),
        ));
    }
    if let Some(p) = points.iter().find(|p| !(p.1 > 0.0 && p.1.is_finite())) {
        return Err(Error::DegenerateFit(format!(
            "non-positive value {} at d = {}",
            p.1, p.0
        )));
    }
    let weighted = points.iter().all(|p| p.2 > 0.0);
    let w: Vec<f64> = points
        .iter()
        .map(|p| if weighted { (p.1 / p.2).powi(2) } else { 1.0 })
        .collect();
    let x: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&x).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = w
        .iter()
        .zip(&x)
        .zip(&y)
        .map(|((w, x), y)| w * (x - xm) * (y - ym))
        .sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let residuals: Vec<f64> = x
        .iter()
        .zip(&y)
        .map(|(x, y)| y - (intercept + slope * x))
        .collect();
    let kappa_stderr = if weighted {
        (1.0 / sxx).sqrt()
    } else if points.len() > 2 {
        let rss: f64 = residuals.iter().map(|r| r * r).sum();
        (rss / (points.len() - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(SuppressionFit {
        kappa: -slope,
        kappa_stderr,
        intercept,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential_is_recovered() {
        let pts: Vec<(usize, f64, f64)> = [3, 5, 7]
            .iter()
            .map(|&d| (d, 2.0 * (-0.7 * d as f64).exp(), 0.0))
            .collect();
        let fit = fit_suppression(&pts).unwrap();
        assert!((fit.kappa - 0.7).abs() < 1e-12);
        assert!((fit.intercept - 2f64.ln()).abs() < 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn two_point_weighted_error() {
        let fit = fit_suppression(&[(3, 0.2, 0.02), (5, 0.05, 0.01)]).unwrap();
        assert!((fit.kappa - (4f64).ln() / 2.0).abs() < 1e-12);
        let expect = (0.1f64.powi(2) + 0.2f64.powi(2)).sqrt() / 2.0;
        assert!((fit.kappa_stderr - expect).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            fit_suppression(&[(3, 0.1, 0.0), (3, 0.2, 0.0)]),
            Err(Error::DegenerateFit(_))
        ));
        assert!(matches!(
            fit_suppression(&[(3, 0.1, 0.0), (5, 0.0, 0.0)]),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn bisection_requires_a_bracket() {
        let code = SurfaceCode::build(3).unwrap();
        let err = find_half_success_angle(&code, 0.0, 0.4, 0.5, 200, 1, 0.02, 12).unwrap_err();
        assert!(matches!(err, Error::NotBracketing { .. }));
        let half = find_half_success_angle(
            &code,
            0.0,
            0.0,
            0.16 * std::f64::consts::PI,
            2000,
            1,
            0.02,
            12,
        )
        .unwrap();
        assert!(half.converged);
        assert!((half.trivial_probability - 0.5).abs() <= 0.02);
    }

    #[test]
    fn grid_deduplicates_and_sorts() {
        let cache = ChannelCache::new();
        let pts = sweep_grid(&[3, 3], &[0.001], &[0.2, 0.1, 0.2], 300, 50, 9, &cache).unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts[0].theta < pts[1].theta);
        let again = sweep_grid(&[3], &[0.001], &[0.2], 300, 50, 9, &cache).unwrap();
        assert_eq!(again[0], pts[1]);
    }
}
