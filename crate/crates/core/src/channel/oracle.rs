//! Brute-force state-vector reference for `d = 3`.
//!
//! Sums over all `2^9` dephasing Kraus strings, projects each branch with
//! `Pi_s`, applies the correction and overlaps the result with the code
//! words. Shares no code path with the tensor-network contraction.

use num_complex::Complex64;

use super::{extract_params, ChannelParams, ChoiMatrix};
use crate::error::{Error, Result};
use crate::fermion::NoiseParams;
use crate::surface_code::{PauliZMask, SurfaceCode, Syndrome};

fn require_d3(code: &SurfaceCode) -> Result<()> {
    if code.d != 3 {
        return Err(Error::OracleSize(code.d));
    }
    Ok(())
}

fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter()
        .enumerate()
        .map(|(i, &b)| (b as usize) << i)
        .sum()
}

/// X-stabilizer group elements as basis-index masks.
fn x_group(code: &SurfaceCode) -> Vec<(usize, Vec<u8>)> {
    let m = code.num_x_checks();
    (0..1usize << m)
        .map(|u| {
            let mut g = 0usize;
            let bits: Vec<u8> = (0..m).map(|i| ((u >> i) & 1) as u8).collect();
            for (i, row) in code.h_x.iter().enumerate() {
                if bits[i] == 1 {
                    g ^= bits_to_index(row);
                }
            }
            (g, bits)
        })
        .collect()
}

/// Code word `|a>` (real amplitudes) in the Z basis; qubit `q` is bit `q`.
pub fn code_word(code: &SurfaceCode, a: u8) -> Result<Vec<Complex64>> {
    require_d3(code)?;
    let group = x_group(code);
    let amp = 1.0 / (group.len() as f64).sqrt();
    let shift = if a == 1 {
        bits_to_index(&code.logical_x)
    } else {
        0
    };
    let mut v = vec![Complex64::new(0.0, 0.0); 1 << code.n];
    for (g, _) in group {
        v[g ^ shift] = Complex64::new(amp, 0.0);
    }
    Ok(v)
}

fn apply_projector(group: &[(usize, Vec<u8>)], s: &Syndrome, v: &[Complex64]) -> Vec<Complex64> {
    let scale = 1.0 / group.len() as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
    for (g, u) in group {
        let sign = if crate::surface_code::dot_mod2(u, &s.0) == 1 {
            -scale
        } else {
            scale
        };
        for (x, o) in out.iter_mut().enumerate() {
            *o += v[x ^ g] * sign;
        }
    }
    out
}

fn apply_diagonal(v: &mut [Complex64], n: usize, theta: f64, z_mask: usize) {
    for (x, amp) in v.iter_mut().enumerate() {
        let ones = (x & ((1 << n) - 1)).count_ones() as f64;
        let phase = theta * (n as f64 - 2.0 * ones);
        let sign = if (x & z_mask).count_ones() % 2 == 1 {
            -1.0
        } else {
            1.0
        };
        *amp *= Complex64::from_polar(sign, phase);
    }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Full 4x4 Choi matrix. `error` adds a fixed Z error before the projection.
pub fn oracle_choi(
    code: &SurfaceCode,
    noise: NoiseParams,
    s: &Syndrome,
    correction: &PauliZMask,
    error: Option<&PauliZMask>,
) -> Result<ChoiMatrix> {
    require_d3(code)?;
    code.check_syndrome_len(s)?;
    if &code.syndrome_of(correction)? != s {
        return Err(Error::CorrectionMismatch);
    }
    let n = code.n;
    let group = x_group(code);
    let words = [code_word(code, 0)?, code_word(code, 1)?];
    let corr = bits_to_index(&correction.0);
    let extra = error.map_or(0, |e| bits_to_index(&e.0));
    let zero = Complex64::new(0.0, 0.0);
    let mut j = [[zero; 4]; 4];
    for k in 0..(1usize << n) {
        let flips = k.count_ones() as i32;
        let w = noise.p.powi(flips) * (1.0 - noise.p).powi(n as i32 - flips);
        if w == 0.0 {
            continue;
        }
        // overlaps[l][x] = <l| C Pi K |x>
        let mut overlaps = [[zero; 2]; 2];
        for (x, word) in words.iter().enumerate() {
            let mut v = word.clone();
            apply_diagonal(&mut v, n, noise.theta, k ^ extra);
            let mut v = apply_projector(&group, s, &v);
            apply_diagonal(&mut v, n, 0.0, corr);
            for (l, wl) in words.iter().enumerate() {
                overlaps[l][x] = inner(wl, &v);
            }
        }
        for l in 0..2 {
            for x in 0..2 {
                for lp in 0..2 {
                    for y in 0..2 {
                        j[2 * l + x][2 * lp + y] +=
                            overlaps[l][x] * overlaps[lp][y].conj() * (0.5 * w);
                    }
                }
            }
        }
    }
    Ok(ChoiMatrix(j))
}

/// Reference logical channel, same contract as the tensor-network route.
pub fn oracle_channel(
    code: &SurfaceCode,
    noise: NoiseParams,
    s: &Syndrome,
    correction: &PauliZMask,
) -> Result<ChannelParams> {
    extract_params(&oracle_choi(code, noise, s, correction, None)?)
}

/// Logical channel when the dephasing error `e` is known to have occurred
/// (coherent rotation only, then `Z_e`, then syndrome `s`).
pub fn oracle_channel_with_error(
    code: &SurfaceCode,
    theta: f64,
    s: &Syndrome,
    correction: &PauliZMask,
    e: &PauliZMask,
) -> Result<ChannelParams> {
    let noise = NoiseParams { theta, p: 0.0 };
    extract_params(&oracle_choi(code, noise, s, correction, Some(e))?)
}

/// Exact `p(s)` for every syndrome (index as in `Syndrome::from_index`)
/// after `[exp(i theta Z)]^n` on `state`.
pub fn syndrome_distribution(
    code: &SurfaceCode,
    theta: f64,
    state: &[Complex64],
) -> Result<Vec<f64>> {
    require_d3(code)?;
    let group = x_group(code);
    let mut v = state.to_vec();
    apply_diagonal(&mut v, code.n, theta, 0);
    let m = code.num_x_checks();
    Ok((0..1usize << m)
        .map(|i| {
            let s = Syndrome::from_index(i, m);
            let proj = apply_projector(&group, &s, &v);
            proj.iter().map(|a| a.norm_sqr()).sum()
        })
        .collect())
}

/// `syndrome_distribution` for the logical `|0>`.
pub fn born_probabilities(code: &SurfaceCode, theta: f64) -> Result<Vec<f64>> {
    syndrome_distribution(code, theta, &code_word(code, 0)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_larger_codes() {
        let code = SurfaceCode::build(5).unwrap();
        assert!(matches!(code_word(&code, 0), Err(Error::OracleSize(5))));
    }

    #[test]
    fn identity_when_noiseless() {
        let code = SurfaceCode::build(3).unwrap();
        let s = Syndrome::zeros(4);
        let ch = oracle_channel(
            &code,
            NoiseParams::new(0.0, 0.0).unwrap(),
            &s,
            &PauliZMask::zeros(9),
        )
        .unwrap();
        assert!((ch.p_s - 1.0).abs() < 1e-12);
        assert!(ch.phi_s.abs() < 1e-12);
        assert!(ch.q_s.abs() < 1e-12);
    }

    #[test]
    fn half_pi_is_logical_z() {
        let code = SurfaceCode::build(3).unwrap();
        let s = Syndrome::zeros(4);
        let noise = NoiseParams::new(std::f64::consts::FRAC_PI_2, 0.0).unwrap();
        let ch = oracle_channel(&code, noise, &s, &PauliZMask::zeros(9)).unwrap();
        assert!((ch.phi_s - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn distribution_is_normalized() {
        let code = SurfaceCode::build(3).unwrap();
        for theta in [0.0, 0.1, 0.4, -0.7] {
            let total: f64 = born_probabilities(&code, theta).unwrap().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
