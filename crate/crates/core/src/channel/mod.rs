//! Logical channel of one round: syndrome probability `p_s`, logical
//! rotation angle `phi_s` and logical dephasing `q_s`.
//!
//! The logical map after syndrome `s` and correction is
//! `rho -> exp(i phi Z)[(1 - q) rho + q Z rho Z] exp(-i phi Z)`, scaled by
//! `p_s`. It is read off the Choi matrix over (logical, ancilla): the
//! coherence `|00><11|` carries `(1 - 2q) e^{2 i phi}`.

pub mod oracle;
pub mod tensor;

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;
use std::sync::Mutex;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::decoder::MatchingGraph;
use crate::error::{Error, Result};
use crate::fermion::NoiseParams;
use crate::surface_code::{PauliZMask, SurfaceCode, Syndrome};

pub use oracle::oracle_channel;
pub use tensor::{logical_channel_tn, DEFAULT_MAX_DISTANCE};

const HERMITIAN_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-9;
const COHERENCE_TOL: f64 = 1e-9;
/// Below this normalized coherence the angle is undefined.
const DEGENERATE_COHERENCE: f64 = 1e-12;

/// Channel parameters for one syndrome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub p_s: f64,
    pub phi_s: f64,
    pub q_s: f64,
    /// Set when the channel is fully dephased and `phi_s` carries no meaning.
    pub degenerate: bool,
}

/// Folds an angle into `(-pi/2, pi/2]`.
pub fn fold_angle(phi: f64) -> f64 {
    let mut x = phi % PI;
    if x <= -FRAC_PI_2 {
        x += PI;
    } else if x > FRAC_PI_2 {
        x -= PI;
    }
    x
}

/// Choi matrix over (logical, ancilla); row/column index `2 * logical + ancilla`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChoiMatrix(pub [[Complex64; 4]; 4]);

impl ChoiMatrix {
    /// Choi matrix of a channel that preserves the logical Z basis, given the
    /// unnormalized matrix elements `n[a][b] = <a|E(|a><b|)|b>`.
    pub fn from_z_block(n: [[Complex64; 2]; 2]) -> ChoiMatrix {
        let zero = Complex64::new(0.0, 0.0);
        let mut j = [[zero; 4]; 4];
        for a in 0..2 {
            for b in 0..2 {
                j[3 * a][3 * b] = n[a][b] * 0.5;
            }
        }
        ChoiMatrix(j)
    }

    pub fn trace(&self) -> f64 {
        (0..4).map(|i| self.0[i][i].re).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                worst = worst.max((self.0[i][j] - self.0[j][i].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part, by Jacobi iteration on the
    /// equivalent 8x8 real symmetric matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let mut a = [[0.0f64; 8]; 8];
        for i in 0..4 {
            for j in 0..4 {
                let h = (self.0[i][j] + self.0[j][i].conj()) * 0.5;
                a[i][j] = h.re;
                a[i + 4][j + 4] = h.re;
                a[i][j + 4] = -h.im;
                a[i + 4][j] = h.im;
            }
        }
        jacobi_min_eigenvalue(a)
    }

    pub fn check_physical(&self) -> Result<()> {
        let h = self.hermiticity_error();
        if h > HERMITIAN_TOL {
            return Err(Error::Numerical(format!(
                "Choi matrix not Hermitian: {h:e}"
            )));
        }
        let m = self.min_eigenvalue();
        if m < -PSD_TOL {
            return Err(Error::Numerical(format!("Choi matrix not PSD: {m:e}")));
        }
        Ok(())
    }
}

fn jacobi_min_eigenvalue(mut a: [[f64; 8]; 8]) -> f64 {
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..8 {
            for j in (i + 1)..8 {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..8 {
            for q in (p + 1)..8 {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..8 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..8 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..8).map(|i| a[i][i]).fold(f64::INFINITY, f64::min)
}

/// Reads `(p_s, phi_s, q_s)` off a Choi matrix.
pub fn extract_params(j: &ChoiMatrix) -> Result<ChannelParams> {
    let p_s = j.trace();
    if p_s <= 0.0 {
        return Ok(ChannelParams {
            p_s: p_s.max(0.0),
            phi_s: 0.0,
            q_s: 0.5,
            degenerate: true,
        });
    }
    let c = j.0[0][3] * (2.0 / p_s);
    coherence_to_params(p_s, c)
}

/// Inverts `c = (1 - 2q) e^{2 i phi}`.
pub fn coherence_to_params(p_s: f64, c: Complex64) -> Result<ChannelParams> {
    let mag = c.norm();
    if mag > 1.0 + COHERENCE_TOL {
        return Err(Error::NonPhysical(mag));
    }
    let mag = mag.min(1.0);
    if mag < DEGENERATE_COHERENCE {
        return Ok(ChannelParams {
            p_s,
            phi_s: 0.0,
            q_s: 0.5,
            degenerate: true,
        });
    }
    Ok(ChannelParams {
        p_s,
        phi_s: fold_angle(c.arg() / 2.0),
        q_s: (1.0 - mag) / 2.0,
        degenerate: false,
    })
}

/// Logical angle after a dephasing error `e` given the observed syndrome
/// `s`, from `phi_base`, the error-free angle of the coherent syndrome
/// `s0 = s xor H_X e`.
///
/// The applied Z-string `D(s) + e` differs from the coherent-only
/// correction `D(s0)` by a closed loop; the angle shifts by `pi/2` exactly
/// when that loop is a logical, `l_X . [D(s) + e + D(s0)] = 1`.
pub fn map_logical_angle(
    code: &SurfaceCode,
    graph: &MatchingGraph,
    s: &Syndrome,
    e: &PauliZMask,
    phi_base: f64,
) -> Result<f64> {
    let s0 = s.xor(&code.syndrome_of(e)?);
    let loop_mask = graph.decode(s)?.xor(e).xor(&graph.decode(&s0)?);
    let flip = code.logical_parity(&loop_mask)?;
    Ok(if flip == 1 {
        fold_angle(phi_base + FRAC_PI_2)
    } else {
        fold_angle(phi_base)
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
struct CacheKey {
    d: usize,
    theta_bits: u64,
    p_bits: u64,
    syndrome: String,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    d: usize,
    theta: f64,
    p: f64,
    syndrome: String,
    params: ChannelParams,
}

/// Thread-safe memo of channel evaluations keyed by `(d, theta, p, s)`.
///
/// The correction is always the decoder's `D(s)`, so it is not part of the
/// key.
#[derive(Default)]
pub struct ChannelCache {
    map: Mutex<HashMap<CacheKey, ChannelParams>>,
}

impl ChannelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(d: usize, params: NoiseParams, s: &Syndrome) -> CacheKey {
        CacheKey {
            d,
            theta_bits: params.theta.to_bits(),
            p_bits: params.p.to_bits(),
            syndrome: s.to_bitstring(),
        }
    }

    pub fn get(&self, d: usize, params: NoiseParams, s: &Syndrome) -> Option<ChannelParams> {
        self.map
            .lock()
            .unwrap()
            .get(&Self::key(d, params, s))
            .copied()
    }

    /// Cached `logical_channel_tn(code, params, s, D(s))`.
    ///
    /// Negative angles are served from `|theta|` with the angle mirrored
    /// (`p_s`, `q_s` even, `phi_s` odd), so both signs give bitwise
    /// consistent results.
    pub fn evaluate(
        &self,
        code: &SurfaceCode,
        graph: &MatchingGraph,
        params: NoiseParams,
        s: &Syndrome,
    ) -> Result<ChannelParams> {
        if params.theta < 0.0 {
            let mirrored = NoiseParams {
                theta: -params.theta,
                ..params
            };
            let ch = self.evaluate(code, graph, mirrored, s)?;
            return Ok(ChannelParams {
                phi_s: fold_angle(-ch.phi_s),
                ..ch
            });
        }
        if let Some(hit) = self.get(code.d, params, s) {
            return Ok(hit);
        }
        let correction = graph.decode(s)?;
        let value = logical_channel_tn(code, params, s, &correction)?;
        self.map
            .lock()
            .unwrap()
            .insert(Self::key(code.d, params, s), value);
        Ok(value)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map = self.map.lock().unwrap();
        let mut entries: Vec<CacheEntry> = map
            .iter()
            .map(|(k, v)| CacheEntry {
                d: k.d,
                theta: f64::from_bits(k.theta_bits),
                p: f64::from_bits(k.p_bits),
                syndrome: k.syndrome.clone(),
                params: *v,
            })
            .collect();
        entries.sort_by(|a, b| {
            (a.d, a.theta.to_bits(), a.p.to_bits(), &a.syndrome).cmp(&(
                b.d,
                b.theta.to_bits(),
                b.p.to_bits(),
                &b.syndrome,
            ))
        });
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &entries)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ChannelCache> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let entries: Vec<CacheEntry> = serde_json::from_reader(file)?;
        let map = entries
            .into_iter()
            .map(|e| {
                (
                    CacheKey {
                        d: e.d,
                        theta_bits: e.theta.to_bits(),
                        p_bits: e.p.to_bits(),
                        syndrome: e.syndrome,
                    },
                    e.params,
                )
            })
            .collect();
        Ok(ChannelCache {
            map: Mutex::new(map),
        })
    }
}

/// One distinct syndrome of an empirical table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub syndrome: String,
    pub count: usize,
    /// Empirical frequency `count / n_samples`.
    pub weight: f64,
    pub params: ChannelParams,
}

/// Empirical syndrome distribution at one `(d, theta, p)` with the exact
/// channel of every observed syndrome. Entries are sorted by syndrome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelTable {
    pub d: usize,
    pub theta: f64,
    pub p: f64,
    pub n_samples: usize,
    pub entries: Vec<TableEntry>,
}

impl ChannelTable {
    /// Tabulates observed syndromes and evaluates each distinct one once.
    pub fn from_syndromes(
        code: &SurfaceCode,
        graph: &MatchingGraph,
        cache: &ChannelCache,
        noise: NoiseParams,
        syndromes: &[Syndrome],
    ) -> Result<ChannelTable> {
        use rayon::prelude::*;
        if syndromes.is_empty() {
            return Err(Error::Config("empty syndrome sample".into()));
        }
        let mut counts: BTreeMap<&Syndrome, usize> = BTreeMap::new();
        for s in syndromes {
            code.check_syndrome_len(s)?;
            *counts.entry(s).or_default() += 1;
        }
        let n = syndromes.len();
        let entries = counts
            .into_par_iter()
            .map(|(s, count)| {
                Ok(TableEntry {
                    syndrome: s.to_bitstring(),
                    count,
                    weight: count as f64 / n as f64,
                    params: cache.evaluate(code, graph, noise, s)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ChannelTable {
            d: code.d,
            theta: noise.theta,
            p: noise.p,
            n_samples: n,
            entries,
        })
    }

    /// Samples `n_samples` syndromes with stream family `seed` and tabulates.
    pub fn sample(
        code: &SurfaceCode,
        graph: &MatchingGraph,
        cache: &ChannelCache,
        noise: NoiseParams,
        n_samples: usize,
        seed: u64,
    ) -> Result<ChannelTable> {
        let draws = crate::fermion::draw_samples(code, noise, n_samples, seed)?;
        let syndromes: Vec<Syndrome> = draws.into_iter().map(|(s, _)| s.s).collect();
        Self::from_syndromes(code, graph, cache, noise, &syndromes)
    }

    /// Empirical probability of the all-zero syndrome.
    pub fn trivial_probability(&self) -> f64 {
        self.entries
            .iter()
            .find(|e| e.syndrome.bytes().all(|b| b == b'0'))
            .map_or(0.0, |e| e.weight)
    }
}
