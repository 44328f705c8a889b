//! Exact tensor-network evaluation of the logical channel.
//!
//! In the Z basis a code word of logical value `a` is `x = u H_X + a l_X`
//! for a bit per X-check `u`. The Z-diagonal noise, the X-check projector
//! and the Z correction then reduce each Choi element to
//!
//! ```text
//! N_ab = 4^-m sum_{u, u'} prod_q T_q(x_q, x'_q)
//! T_q = (-1)^{D_q (x_q + x'_q)} e^{2 i theta (x'_q - x_q)} (1 - 2p [x_q != x'_q])
//! ```
//!
//! with `x` from the ket layer (`u`, logical `a`) and `x'` from the bra layer
//! (`u'`, logical `b`). Each X-check carries one bond variable with four
//! values `(u_f, u'_f)`; each qubit tensor couples the one or two X-checks
//! touching it, and the ancilla label enters through the qubits of `l_X`.
//! The network is contracted exactly by column-sweep variable elimination.

use num_complex::Complex64;

use super::{extract_params, ChannelParams, ChoiMatrix};
use crate::error::{Error, Result};
use crate::fermion::NoiseParams;
use crate::surface_code::{PauliZMask, SurfaceCode, Syndrome};

/// Largest distance contracted unless the caller raises the limit.
pub const DEFAULT_MAX_DISTANCE: usize = 7;

const BOND: usize = 4;

/// Dense tensor over a set of 4-valued bond variables.
///
/// `vars` is ascending; the value at assignment `(v_0, v_1, ...)` lives at
/// index `sum_i v_i * 4^i`.
#[derive(Clone, Debug)]
pub struct SiteTensor {
    pub vars: Vec<usize>,
    pub data: Vec<Complex64>,
}

impl SiteTensor {
    fn scalar(v: Complex64) -> SiteTensor {
        SiteTensor {
            vars: Vec::new(),
            data: vec![v],
        }
    }
}

/// Qubit tensor for logical labels `(a, b)`.
fn qubit_tensor(
    checks: &[usize],
    on_logical: bool,
    a: u8,
    b: u8,
    corrected: bool,
    noise: NoiseParams,
) -> SiteTensor {
    let k = checks.len();
    let size = BOND.pow(k as u32);
    let mut data = Vec::with_capacity(size);
    let shift_a = if on_logical { a } else { 0 };
    let shift_b = if on_logical { b } else { 0 };
    for idx in 0..size {
        let mut x = shift_a;
        let mut xp = shift_b;
        let mut rest = idx;
        for _ in 0..k {
            let v = rest % BOND;
            rest /= BOND;
            x ^= (v & 1) as u8;
            xp ^= (v >> 1) as u8;
        }
        let differ = x != xp;
        let mut val = Complex64::from_polar(1.0, 2.0 * noise.theta * (xp as f64 - x as f64));
        if differ {
            val *= 1.0 - 2.0 * noise.p;
            if corrected {
                val = -val;
            }
        }
        data.push(val);
    }
    SiteTensor {
        vars: checks.to_vec(),
        data,
    }
}

/// Product of `factors`, summed over `var` and scaled by `scale`.
fn eliminate(factors: Vec<SiteTensor>, var: usize, scale: f64) -> SiteTensor {
    let mut union: Vec<usize> = factors
        .iter()
        .flat_map(|f| f.vars.iter().copied())
        .collect();
    union.sort_unstable();
    union.dedup();
    let out_vars: Vec<usize> = union.iter().copied().filter(|&v| v != var).collect();
    let pos_of = |v: usize| union.iter().position(|&u| u == v).unwrap();
    let strides: Vec<Vec<(usize, usize)>> = factors
        .iter()
        .map(|f| {
            f.vars
                .iter()
                .enumerate()
                .map(|(i, &v)| (pos_of(v), BOND.pow(i as u32)))
                .collect()
        })
        .collect();
    let out_strides: Vec<(usize, usize)> = out_vars
        .iter()
        .enumerate()
        .map(|(i, &v)| (pos_of(v), BOND.pow(i as u32)))
        .collect();
    let total = BOND.pow(union.len() as u32);
    let mut out = vec![Complex64::new(0.0, 0.0); BOND.pow(out_vars.len() as u32)];
    let mut digits = vec![0usize; union.len()];
    for _ in 0..total {
        let mut val = Complex64::new(scale, 0.0);
        for (f, st) in factors.iter().zip(&strides) {
            let idx: usize = st.iter().map(|&(p, s)| digits[p] * s).sum();
            val *= f.data[idx];
        }
        let oidx: usize = out_strides.iter().map(|&(p, s)| digits[p] * s).sum();
        out[oidx] += val;
        for dgt in digits.iter_mut() {
            *dgt += 1;
            if *dgt < BOND {
                break;
            }
            *dgt = 0;
        }
    }
    SiteTensor {
        vars: out_vars,
        data: out,
    }
}

/// Contraction order: X-checks sorted by face column, then row.
fn elimination_order(code: &SurfaceCode) -> Vec<usize> {
    let mut order: Vec<usize> = (0..code.num_x_checks()).collect();
    order.sort_by_key(|&i| (code.x_faces[i].col, code.x_faces[i].row));
    order
}

/// `N_ab` for the given logical labels.
fn contract(
    code: &SurfaceCode,
    noise: NoiseParams,
    correction: &PauliZMask,
    a: u8,
    b: u8,
) -> Complex64 {
    let factors: Vec<SiteTensor> = (0..code.n)
        .map(|q| {
            qubit_tensor(
                &code.x_checks_of_qubit(q),
                code.logical_x[q] == 1,
                a,
                b,
                correction.0[q] == 1,
                noise,
            )
        })
        .collect();
    contract_factors(code, factors)
}

fn contract_factors(code: &SurfaceCode, mut factors: Vec<SiteTensor>) -> Complex64 {
    let scale = 1.0 / BOND as f64;
    for var in elimination_order(code) {
        let (touching, rest): (Vec<_>, Vec<_>) =
            factors.into_iter().partition(|f| f.vars.contains(&var));
        factors = rest;
        factors.push(eliminate(touching, var, scale));
    }
    factors
        .into_iter()
        .fold(SiteTensor::scalar(Complex64::new(1.0, 0.0)), |acc, f| {
            debug_assert!(f.vars.is_empty());
            SiteTensor::scalar(acc.data[0] * f.data[0])
        })
        .data[0]
}

/// Probability that the checks fixed in `constraints` take the given
/// values, all other checks unobserved.
///
/// Writing the projector as a sum over the X-stabilizer group, a fixed bit
/// `s_f` weighs the bond of check `f` by `(-1)^{s_f (u_f + u'_f)}`; summing
/// a free bit over both values leaves `2 [u_f = u'_f]`. With every bit
/// fixed this is `p(s)`; with none it is 1.
pub fn syndrome_marginal(
    code: &SurfaceCode,
    noise: NoiseParams,
    constraints: &[Option<u8>],
) -> Result<f64> {
    if constraints.len() != code.num_x_checks() {
        return Err(Error::LengthMismatch {
            expected: code.num_x_checks(),
            actual: constraints.len(),
        });
    }
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut factors: Vec<SiteTensor> = (0..code.n)
        .map(|q| qubit_tensor(&code.x_checks_of_qubit(q), false, 0, 0, false, noise))
        .collect();
    for (f, c) in constraints.iter().enumerate() {
        let data = match c {
            None => vec![one * 2.0, zero, zero, one * 2.0],
            Some(bit) => {
                let sign = if *bit == 1 { -one } else { one };
                vec![one, sign, sign, one]
            }
        };
        factors.push(SiteTensor {
            vars: vec![f],
            data,
        });
    }
    Ok(contract_factors(code, factors).re.max(0.0))
}

/// Choi matrix of the round `(noise, s, correction)` by exact contraction.
pub fn choi_tn(
    code: &SurfaceCode,
    noise: NoiseParams,
    s: &Syndrome,
    correction: &PauliZMask,
    max_distance: usize,
) -> Result<ChoiMatrix> {
    if code.d > max_distance {
        return Err(Error::ContractionLimit {
            d: code.d,
            limit: max_distance,
        });
    }
    code.check_syndrome_len(s)?;
    if &code.syndrome_of(correction)? != s {
        return Err(Error::CorrectionMismatch);
    }
    let n00 = contract(code, noise, correction, 0, 0);
    let n11 = contract(code, noise, correction, 1, 1);
    let n01 = contract(code, noise, correction, 0, 1);
    Ok(ChoiMatrix::from_z_block([[n00, n01], [n01.conj(), n11]]))
}

/// Exact logical channel for syndrome `s` under `correction`.
pub fn logical_channel_tn(
    code: &SurfaceCode,
    noise: NoiseParams,
    s: &Syndrome,
    correction: &PauliZMask,
) -> Result<ChannelParams> {
    let j = choi_tn(code, noise, s, correction, DEFAULT_MAX_DISTANCE)?;
    extract_params(&j)
}
