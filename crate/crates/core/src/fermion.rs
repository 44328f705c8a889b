//! Syndrome sampling for transversal Z rotations by Gaussian (free-fermion)
//! covariance-matrix simulation.
//!
//! Each qubit `q` is encoded in four Majorana modes `c1..c4` with indices
//! `4q..4q+3`, stabilizer `S = -c1 c2 c3 c4`, `X = i c1 c2` and
//! `Z = i c1 c3`. Every mode is attached to one lattice direction of its
//! qubit so that each grid edge carries one two-mode *link*; weight-2
//! boundary checks add one more link between their two outward modes and
//! the four corner modes left over are paired among themselves. Every
//! surface-code check is then, as an operator, a product of the links on the
//! boundary of its face.
//!
//! Preparation measures every link once and records the outcomes as a
//! reference frame; a syndrome bit is the parity of link outcomes on an
//! X-face that differ from the frame. The C4 projection of the prepared
//! link state is the code state, but the Gaussian state itself spreads over
//! C4 sectors, which act as random signs on some Z-checks. Link readout
//! therefore samples a sector average ([`LinkFrameSampler`]); the exact
//! code-state distribution comes from [`SyndromeSampler`], which draws bits
//! from exact marginals.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::sync::RwLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::tensor::{syndrome_marginal, DEFAULT_MAX_DISTANCE};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::surface_code::{CheckKind, PauliZMask, SurfaceCode, Syndrome};

const ANTISYM_TOL: f64 = 1e-12;
const PURITY_TOL: f64 = 1e-9;

/// Physical noise of one round: transversal `exp(i theta Z)` plus i.i.d.
/// dephasing at rate `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub theta: f64,
    pub p: f64,
}

impl NoiseParams {
    pub fn new(theta: f64, p: f64) -> Result<Self> {
        if !(theta > -FRAC_PI_2 && theta <= FRAC_PI_2) {
            return Err(Error::InvalidNoise(format!(
                "theta {theta} outside (-pi/2, pi/2]"
            )));
        }
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidNoise(format!("p {p} outside [0, 1)")));
        }
        Ok(NoiseParams { theta, p })
    }
}

/// Direction of a lattice neighbour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dir {
    Up,
    Right,
    Down,
    Left,
}

/// Mode of qubit `(r, c)` attached to direction `dir`.
fn mode(d: usize, r: usize, c: usize, dir: Dir) -> usize {
    let base = 4 * (r * d + c);
    // offsets: c1 = 0, c2 = 1, c3 = 2, c4 = 3
    let off = if (r + c) % 2 == 1 {
        match dir {
            Dir::Up => 0,
            Dir::Right => 1,
            Dir::Down => 3,
            Dir::Left => 2,
        }
    } else {
        match dir {
            Dir::Up => 0,
            Dir::Right => 2,
            Dir::Down => 3,
            Dir::Left => 1,
        }
    };
    base + off
}

/// Link structure of the encoded code: a perfect pairing of all `4n` modes.
#[derive(Clone, Debug)]
pub struct LinkGraph {
    /// Mode pairs `(k, l)`; the link operator is `i c_k c_l`.
    pub links: Vec<(usize, usize)>,
    /// Links on the boundary of each X-check, in check order.
    pub x_face_links: Vec<Vec<usize>>,
    /// Links on the boundary of each Z-check, in check order.
    pub z_face_links: Vec<Vec<usize>>,
}

impl LinkGraph {
    pub fn new(code: &SurfaceCode) -> LinkGraph {
        let d = code.d;
        let mut links = Vec::new();
        let mut index = std::collections::HashMap::new();
        let mut add = |k: usize, l: usize, links: &mut Vec<(usize, usize)>| {
            let key = (k.min(l), k.max(l));
            *index.entry(key).or_insert_with(|| {
                links.push((k, l));
                links.len() - 1
            })
        };
        let horizontal =
            |r: usize, c: usize| (mode(d, r, c, Dir::Right), mode(d, r, c + 1, Dir::Left));
        let vertical = |r: usize, c: usize| (mode(d, r, c, Dir::Down), mode(d, r + 1, c, Dir::Up));

        let face_links = |faces: &[crate::surface_code::Face],
                          links: &mut Vec<(usize, usize)>,
                          add: &mut dyn FnMut(usize, usize, &mut Vec<(usize, usize)>) -> usize|
         -> Vec<Vec<usize>> {
            faces
                .iter()
                .map(|f| {
                    let (r, c) = (f.row, f.col);
                    let di = d as i32;
                    let mut ls = Vec::new();
                    if r >= 0 && r < di - 1 && c >= 0 && c < di - 1 {
                        let (r, c) = (r as usize, c as usize);
                        for (k, l) in [
                            horizontal(r, c),
                            horizontal(r + 1, c),
                            vertical(r, c),
                            vertical(r, c + 1),
                        ] {
                            ls.push(add(k, l, links));
                        }
                    } else if c == -1 {
                        let r = r as usize;
                        let (k, l) = vertical(r, 0);
                        ls.push(add(k, l, links));
                        ls.push(add(
                            mode(d, r, 0, Dir::Left),
                            mode(d, r + 1, 0, Dir::Left),
                            links,
                        ));
                    } else if c == di - 1 {
                        let r = r as usize;
                        let (k, l) = vertical(r, d - 1);
                        ls.push(add(k, l, links));
                        ls.push(add(
                            mode(d, r, d - 1, Dir::Right),
                            mode(d, r + 1, d - 1, Dir::Right),
                            links,
                        ));
                    } else if r == -1 {
                        let c = c as usize;
                        let (k, l) = horizontal(0, c);
                        ls.push(add(k, l, links));
                        ls.push(add(
                            mode(d, 0, c, Dir::Up),
                            mode(d, 0, c + 1, Dir::Up),
                            links,
                        ));
                    } else {
                        let c = c as usize;
                        let (k, l) = horizontal(d - 1, c);
                        ls.push(add(k, l, links));
                        ls.push(add(
                            mode(d, d - 1, c, Dir::Down),
                            mode(d, d - 1, c + 1, Dir::Down),
                            links,
                        ));
                    }
                    ls
                })
                .collect()
        };

        let x_face_links = face_links(&code.x_faces, &mut links, &mut add);
        let z_face_links = face_links(&code.z_faces, &mut links, &mut add);
        // leftover corner modes
        add(
            mode(d, 0, 0, Dir::Left),
            mode(d, d - 1, 0, Dir::Down),
            &mut links,
        );
        add(
            mode(d, 0, d - 1, Dir::Up),
            mode(d, d - 1, d - 1, Dir::Right),
            &mut links,
        );
        debug_assert_eq!(links.len(), 2 * code.n);
        LinkGraph {
            links,
            x_face_links,
            z_face_links,
        }
    }

    /// Per Z-check: whether its link product uses the `c2 c4` pair on some
    /// qubit, i.e. equals the check only up to C4 stabilizers.
    pub fn twisted_z_faces(&self) -> Vec<bool> {
        self.z_face_links
            .iter()
            .map(|ls| {
                let modes: Vec<usize> = ls
                    .iter()
                    .flat_map(|&li| [self.links[li].0, self.links[li].1])
                    .collect();
                modes
                    .iter()
                    .any(|&m| m % 4 == 1 && modes.contains(&(m + 2)))
            })
            .collect()
    }
}

/// Covariance matrix `M_ij = Tr[i c_i c_j rho]` of a Gaussian state.
#[derive(Clone, Debug, PartialEq)]
pub struct MajoranaState {
    dim: usize,
    m: Vec<f64>,
}

impl MajoranaState {
    /// Product state with every qubit in the C4 code state `|0>`:
    /// `i c1 c3 = +1`, `i c2 c4 = -1`.
    pub fn product_zero(n: usize) -> MajoranaState {
        let dim = 4 * n;
        let mut st = MajoranaState {
            dim,
            m: vec![0.0; dim * dim],
        };
        for q in 0..n {
            let b = 4 * q;
            st.set(b, b + 2, 1.0);
            st.set(b + 1, b + 3, -1.0);
        }
        st
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.dim + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.m[i * self.dim + j] = v;
        self.m[j * self.dim + i] = -v;
    }

    /// Largest `|M + M^T|` entry.
    pub fn antisymmetry_error(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.get(i, j) + self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Largest entry of `|M^T M - I|`.
    pub fn purity_error(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += self.get(k, i) * self.get(k, j);
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    pub fn check_invariants(&self) -> Result<()> {
        let a = self.antisymmetry_error();
        if a > ANTISYM_TOL {
            return Err(Error::Numerical(format!(
                "covariance antisymmetry lost: {a:e}"
            )));
        }
        let p = self.purity_error();
        if p > PURITY_TOL {
            return Err(Error::Numerical(format!("covariance purity lost: {p:e}")));
        }
        Ok(())
    }

    /// Conjugates by `exp(i theta Z_q) = exp(-theta c1 c3)`, a rotation by
    /// `2 theta` in the `(c1, c3)` plane of qubit `q`:
    /// `c1 -> cos 2t c1 - sin 2t c3`, `c3 -> sin 2t c1 + cos 2t c3`.
    pub fn rotate_qubit(&mut self, q: usize, theta: f64) {
        let (a, c) = (4 * q, 4 * q + 2);
        let (s, co) = (2.0 * theta).sin_cos();
        let n = self.dim;
        // rows
        for j in 0..n {
            let ma = self.m[a * n + j];
            let mc = self.m[c * n + j];
            self.m[a * n + j] = co * ma - s * mc;
            self.m[c * n + j] = s * ma + co * mc;
        }
        // columns
        for i in 0..n {
            let ma = self.m[i * n + a];
            let mc = self.m[i * n + c];
            self.m[i * n + a] = co * ma - s * mc;
            self.m[i * n + c] = s * ma + co * mc;
        }
    }

    /// Probability that `i c_k c_l` reads `outcome`.
    pub fn link_probability(&self, k: usize, l: usize, outcome: i8) -> f64 {
        (1.0 + outcome as f64 * self.get(k, l)) / 2.0
    }

    /// Projects onto `i c_k c_l = outcome` and returns the outcome's
    /// probability. The update is the Gaussian conditional state:
    /// rows `k, l` are fixed and the rest is corrected by the four-point
    /// Wick contraction.
    pub fn project_link(&mut self, k: usize, l: usize, outcome: i8) -> Result<f64> {
        if k == l {
            return Err(Error::Numerical("link needs two distinct modes".into()));
        }
        let mkl = self.get(k, l);
        if mkl.abs() > 1.0 + PURITY_TOL {
            return Err(Error::Numerical(format!("|M_kl| = {mkl} exceeds 1")));
        }
        let s = outcome as f64;
        let prob = (1.0 + s * mkl) / 2.0;
        if prob <= 0.0 {
            return Err(Error::Numerical(
                "projection onto an impossible outcome".into(),
            ));
        }
        let n = self.dim;
        let denom = 1.0 + s * mkl;
        let col_k: Vec<f64> = (0..n).map(|i| self.get(i, k)).collect();
        let col_l: Vec<f64> = (0..n).map(|i| self.get(i, l)).collect();
        for i in 0..n {
            if i == k || i == l {
                continue;
            }
            for j in (i + 1)..n {
                if j == k || j == l {
                    continue;
                }
                let upd = s * (col_l[i] * col_k[j] - col_k[i] * col_l[j]) / denom;
                let v = self.get(i, j) + upd;
                self.set(i, j, v);
            }
        }
        for i in 0..n {
            if i != k && i != l {
                self.set(i, k, 0.0);
                self.set(i, l, 0.0);
            }
        }
        self.set(k, l, s);
        Ok(prob)
    }

    /// Born-rule measurement of the link `i c_k c_l`.
    pub fn measure_link<R: Rng + ?Sized>(&mut self, k: usize, l: usize, rng: &mut R) -> Result<i8> {
        let p_plus = self.link_probability(k, l, 1).clamp(0.0, 1.0);
        let outcome = if rng.gen::<f64>() < p_plus { 1 } else { -1 };
        self.project_link(k, l, outcome)?;
        Ok(outcome)
    }

    /// Covariance restricted to `modes` (a marginal of the same state).
    pub fn restrict(&self, modes: &[usize]) -> MajoranaState {
        let dim = modes.len();
        let mut m = vec![0.0; dim * dim];
        for (a, &i) in modes.iter().enumerate() {
            for (b, &j) in modes.iter().enumerate() {
                m[a * dim + b] = self.get(i, j);
            }
        }
        MajoranaState { dim, m }
    }
}

/// A prepared code state together with its link structure and the
/// reference outcome of every link.
#[derive(Clone, Debug)]
pub struct CodeState {
    pub graph: LinkGraph,
    pub state: MajoranaState,
    pub reference: Vec<i8>,
}

impl CodeState {
    /// Current value (`+-1`) of the product of links on check `idx`, relative to the
    /// reference frame: `+1` means unflipped. Only meaningful while the face
    /// links are in eigenstates (e.g. right after preparation).
    pub fn face_value(&self, kind: CheckKind, idx: usize) -> f64 {
        let ls = match kind {
            CheckKind::X => &self.graph.x_face_links[idx],
            CheckKind::Z => &self.graph.z_face_links[idx],
        };
        ls.iter()
            .map(|&li| {
                let (k, l) = self.graph.links[li];
                self.state.get(k, l) * self.reference[li] as f64
            })
            .product()
    }
}

/// Prepares the encoded code state: measures every link of the product
/// state and records the outcomes as the reference frame.
pub fn init_code_state<R: Rng + ?Sized>(code: &SurfaceCode, rng: &mut R) -> Result<CodeState> {
    let graph = LinkGraph::new(code);
    let mut state = MajoranaState::product_zero(code.n);
    let mut reference = Vec::with_capacity(graph.links.len());
    for &(k, l) in &graph.links {
        reference.push(state.measure_link(k, l, rng)?);
    }
    state.check_invariants()?;
    Ok(CodeState {
        graph,
        state,
        reference,
    })
}

/// Applies `[exp(i theta Z)]^{(x) n}`.
pub fn apply_transversal_rotation(mut cs: CodeState, theta: f64) -> CodeState {
    let n = cs.state.dim() / 4;
    for q in 0..n {
        cs.state.rotate_qubit(q, theta);
    }
    cs
}

/// Measures every X-check of a prepared (and rotated) state through its
/// links and consumes it. See [`LinkFrameSampler`] for what this samples.
pub fn sample_syndrome<R: Rng + ?Sized>(mut cs: CodeState, rng: &mut R) -> Result<Syndrome> {
    let mut bits = Vec::with_capacity(cs.graph.x_face_links.len());
    for face in 0..cs.graph.x_face_links.len() {
        let mut flip = 0u8;
        for i in 0..cs.graph.x_face_links[face].len() {
            let li = cs.graph.x_face_links[face][i];
            let (k, l) = cs.graph.links[li];
            let out = cs.state.measure_link(k, l, rng)?;
            if out != cs.reference[li] {
                flip ^= 1;
            }
        }
        bits.push(flip);
    }
    Ok(Syndrome(bits))
}

/// One dephased syndrome draw.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyndromeSample {
    /// Observed syndrome `s0 xor H_X e`.
    pub s: Syndrome,
    /// Coherent-only syndrome.
    pub s0: Syndrome,
    /// Sampled dephasing error.
    pub e: PauliZMask,
}

/// Gaussian sampler built from the link reference frame.
///
/// The rotated state is computed once and only its X-link marginal is kept;
/// each draw clones that marginal and measures the links face by face.
///
/// The prepared Gaussian state is a link eigenstate, not a C4 eigenstate:
/// it is an equal-weight superposition over C4 sectors. In each sector the
/// Z-checks whose link product carries C4 stabilizer factors take sector
/// dependent signs, so the draws follow `p(s)` averaged over those
/// Z-stabilizer sectors rather than `p(s)` of the code state. Checks without
/// such factors (the top boundary ones here) keep their `+1` value. The
/// exact distribution is provided by [`SyndromeSampler`].
#[derive(Clone, Debug)]
pub struct LinkFrameSampler {
    code: SurfaceCode,
    theta: f64,
    marginal: MajoranaState,
    /// Per X-face: (local mode pair, reference outcome) for each link.
    faces: Vec<Vec<(usize, usize, i8)>>,
}

impl LinkFrameSampler {
    /// Prepares with a fixed internal stream; the preparation outcomes do
    /// not influence the flip distribution.
    pub fn new(code: &SurfaceCode, theta: f64) -> Result<LinkFrameSampler> {
        let mut prep_rng = rng::stream(0, "fermion-prepare", code.d as u64);
        let cs = init_code_state(code, &mut prep_rng)?;
        let cs = apply_transversal_rotation(cs, theta);
        let mut modes = Vec::new();
        let mut faces = Vec::new();
        for ls in &cs.graph.x_face_links {
            let mut f = Vec::new();
            for &li in ls {
                let (k, l) = cs.graph.links[li];
                modes.push(k);
                modes.push(l);
                f.push((modes.len() - 2, modes.len() - 1, cs.reference[li]));
            }
            faces.push(f);
        }
        let marginal = cs.state.restrict(&modes);
        Ok(LinkFrameSampler {
            code: code.clone(),
            theta,
            marginal,
            faces,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn code(&self) -> &SurfaceCode {
        &self.code
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Syndrome> {
        let mut st = self.marginal.clone();
        let mut bits = Vec::with_capacity(self.faces.len());
        for f in &self.faces {
            let mut flip = 0u8;
            for &(k, l, r) in f {
                if st.measure_link(k, l, rng)? != r {
                    flip ^= 1;
                }
            }
            bits.push(flip);
        }
        Ok(Syndrome(bits))
    }
}

/// Exact sampler of `p(s | theta)` for the code state, check by check.
///
/// Bit `k` is drawn from `P(s_k | s_0..s_{k-1})`, the ratio of two syndrome
/// marginals evaluated by exact contraction. Marginals are memoized per
/// prefix, so repeated draws at one angle become table lookups.
#[derive(Debug)]
pub struct SyndromeSampler {
    code: SurfaceCode,
    theta: f64,
    prefixes: RwLock<HashMap<Vec<u8>, f64>>,
}

impl Clone for SyndromeSampler {
    fn clone(&self) -> Self {
        SyndromeSampler {
            code: self.code.clone(),
            theta: self.theta,
            prefixes: RwLock::new(self.prefixes.read().unwrap().clone()),
        }
    }
}

impl SyndromeSampler {
    pub fn new(code: &SurfaceCode, theta: f64) -> Result<SyndromeSampler> {
        NoiseParams::new(theta, 0.0)?;
        if code.d > DEFAULT_MAX_DISTANCE {
            return Err(Error::ContractionLimit {
                d: code.d,
                limit: DEFAULT_MAX_DISTANCE,
            });
        }
        Ok(SyndromeSampler {
            code: code.clone(),
            theta,
            prefixes: RwLock::new(HashMap::new()),
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn code(&self) -> &SurfaceCode {
        &self.code
    }

    /// Probability of the first `prefix.len()` syndrome bits.
    pub fn prefix_probability(&self, prefix: &[u8]) -> Result<f64> {
        if prefix.is_empty() {
            return Ok(1.0);
        }
        if let Some(&p) = self.prefixes.read().unwrap().get(prefix) {
            return Ok(p);
        }
        let m = self.code.num_x_checks();
        let mut constraints = vec![None; m];
        for (c, &b) in constraints.iter_mut().zip(prefix) {
            *c = Some(b);
        }
        let noise = NoiseParams {
            theta: self.theta,
            p: 0.0,
        };
        let p = syndrome_marginal(&self.code, noise, &constraints)?;
        self.prefixes.write().unwrap().insert(prefix.to_vec(), p);
        Ok(p)
    }

    /// One draw from `p(s | theta, p = 0)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Syndrome> {
        let m = self.code.num_x_checks();
        let mut bits = Vec::with_capacity(m);
        let mut total = 1.0;
        for _ in 0..m {
            bits.push(0);
            let p0 = self.prefix_probability(&bits)?;
            if rng.gen::<f64>() * total < p0 {
                total = p0;
            } else {
                *bits.last_mut().unwrap() = 1;
                total = self.prefix_probability(&bits)?;
            }
        }
        Ok(Syndrome(bits))
    }

    /// One draw with i.i.d. dephasing at rate `p`.
    pub fn sample_with_dephasing<R: Rng + ?Sized>(
        &self,
        p: f64,
        rng: &mut R,
    ) -> Result<SyndromeSample> {
        let e = PauliZMask(
            (0..self.code.n)
                .map(|_| u8::from(rng.gen::<f64>() < p))
                .collect(),
        );
        let s0 = self.sample(rng)?;
        let s = s0.xor(&self.code.syndrome_of(&e)?);
        Ok(SyndromeSample { s, s0, e })
    }
}

/// Convenience wrapper: prepare, rotate and sample with dephasing.
pub fn sample_with_dephasing<R: Rng + ?Sized>(
    code: &SurfaceCode,
    params: NoiseParams,
    rng: &mut R,
) -> Result<SyndromeSample> {
    SyndromeSampler::new(code, params.theta)?.sample_with_dephasing(params.p, rng)
}

/// Batch record for the sample file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub theta: f64,
    pub p: f64,
    pub s: String,
    pub s0: String,
    pub e: String,
    pub seed: u64,
}

impl SampleRecord {
    pub fn new(params: NoiseParams, sample: &SyndromeSample, seed: u64) -> SampleRecord {
        SampleRecord {
            theta: params.theta,
            p: params.p,
            s: sample.s.to_bitstring(),
            s0: sample.s0.to_bitstring(),
            e: sample
                .e
                .0
                .iter()
                .map(|&b| if b == 1 { '1' } else { '0' })
                .collect(),
            seed,
        }
    }
}

/// Draws `count` samples, job `i` using stream `(master_seed, "sample", i)`.
/// Parallel and deterministic.
pub fn draw_samples(
    code: &SurfaceCode,
    params: NoiseParams,
    count: usize,
    master_seed: u64,
) -> Result<Vec<(SyndromeSample, u64)>> {
    use rayon::prelude::*;
    let sampler = SyndromeSampler::new(code, params.theta)?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = rng::derive_seed(master_seed, "sample", i as u64);
            let mut r: StreamRng = rand::SeedableRng::seed_from_u64(seed);
            Ok((sampler.sample_with_dephasing(params.p, &mut r)?, seed))
        })
        .collect()
}

/// [`draw_samples`] as serializable records.
pub fn sample_batch(
    code: &SurfaceCode,
    params: NoiseParams,
    count: usize,
    master_seed: u64,
) -> Result<Vec<SampleRecord>> {
    Ok(draw_samples(code, params, count, master_seed)?
        .iter()
        .map(|(s, seed)| SampleRecord::new(params, s, *seed))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> StreamRng {
        StreamRng::seed_from_u64(seed)
    }

    #[test]
    fn face_pairs_have_the_right_pauli_type() {
        for d in [3, 5, 7] {
            let code = SurfaceCode::build(d).unwrap();
            let g = LinkGraph::new(&code);
            let mut used = vec![0; 4 * code.n];
            for &(k, l) in &g.links {
                used[k] += 1;
                used[l] += 1;
            }
            assert!(
                used.iter().all(|&u| u == 1),
                "links must pair every mode once"
            );
            for (faces, links, x_type) in [
                (&code.x_faces, &g.x_face_links, true),
                (&code.z_faces, &g.z_face_links, false),
            ] {
                for (f, ls) in faces.iter().zip(links) {
                    for &q in &f.qubits {
                        let mut offs: Vec<usize> = ls
                            .iter()
                            .flat_map(|&li| [g.links[li].0, g.links[li].1])
                            .filter(|&m| m / 4 == q)
                            .map(|m| m % 4)
                            .collect();
                        offs.sort_unstable();
                        let ok = if x_type {
                            offs == [0, 1] || offs == [2, 3]
                        } else {
                            offs == [0, 2] || offs == [1, 3]
                        };
                        assert!(ok, "d={d} face {:?} qubit {q}: {offs:?}", (f.row, f.col));
                    }
                }
            }
        }
    }

    #[test]
    fn prepared_state_is_a_code_state() {
        let code = SurfaceCode::build(3).unwrap();
        let cs = init_code_state(&code, &mut rng(1)).unwrap();
        assert!(cs.state.antisymmetry_error() < 1e-12);
        assert!(cs.state.purity_error() < 1e-9);
        for i in 0..code.num_x_checks() {
            assert!((cs.face_value(CheckKind::X, i) - 1.0).abs() < 1e-12);
        }
        for i in 0..code.num_z_checks() {
            assert!((cs.face_value(CheckKind::Z, i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rotation_is_identity() {
        let code = SurfaceCode::build(3).unwrap();
        let cs = init_code_state(&code, &mut rng(2)).unwrap();
        let before = cs.state.clone();
        let after = apply_transversal_rotation(cs, 0.0);
        assert_eq!(before, after.state);
    }

    #[test]
    fn half_pi_rotation_keeps_all_check_values() {
        let code = SurfaceCode::build(5).unwrap();
        let cs = init_code_state(&code, &mut rng(3)).unwrap();
        let cs = apply_transversal_rotation(cs, FRAC_PI_2);
        for i in 0..code.num_x_checks() {
            assert!((cs.face_value(CheckKind::X, i) - 1.0).abs() < 1e-12);
        }
        for i in 0..code.num_z_checks() {
            assert!((cs.face_value(CheckKind::Z, i) - 1.0).abs() < 1e-12);
        }
        let mut r = rng(4);
        for _ in 0..20 {
            assert!(sample_syndrome(cs.clone(), &mut r).unwrap().is_trivial());
        }
    }

    #[test]
    fn measuring_fixed_link_is_deterministic() {
        let code = SurfaceCode::build(3).unwrap();
        let mut cs = init_code_state(&code, &mut rng(5)).unwrap();
        let (k, l) = cs.graph.links[0];
        let v = cs.state.get(k, l);
        let before = cs.state.clone();
        let out = cs.state.measure_link(k, l, &mut rng(6)).unwrap();
        assert_eq!(out as f64, v.signum());
        assert!(cs
            .state
            .m
            .iter()
            .zip(&before.m)
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn repeated_measurement_is_idempotent() {
        let code = SurfaceCode::build(3).unwrap();
        let cs = apply_transversal_rotation(init_code_state(&code, &mut rng(7)).unwrap(), 0.13);
        let mut st = cs.state.clone();
        let (k, l) = cs.graph.links[cs.graph.x_face_links[0][0]];
        let mut r = rng(8);
        let first = st.measure_link(k, l, &mut r).unwrap();
        let snapshot = st.clone();
        for _ in 0..5 {
            assert_eq!(st.measure_link(k, l, &mut r).unwrap(), first);
        }
        assert!(st
            .m
            .iter()
            .zip(&snapshot.m)
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn link_frequency_matches_covariance() {
        let code = SurfaceCode::build(3).unwrap();
        let cs = apply_transversal_rotation(init_code_state(&code, &mut rng(9)).unwrap(), 0.21);
        let (k, l) = cs.graph.links[cs.graph.x_face_links[1][0]];
        let p_plus = cs.state.link_probability(k, l, 1);
        let shots = 5000;
        let mut r = rng(10);
        let mut plus = 0;
        for _ in 0..shots {
            let mut st = cs.state.clone();
            if st.measure_link(k, l, &mut r).unwrap() == 1 {
                plus += 1;
            }
        }
        let freq = plus as f64 / shots as f64;
        let sigma = (p_plus * (1.0 - p_plus) / shots as f64).sqrt().max(1e-3);
        assert!(
            (freq - p_plus).abs() < 3.0 * sigma,
            "freq {freq} vs {p_plus}"
        );
        assert!(p_plus > 0.0 && p_plus < 1.0);
    }

    #[test]
    fn zero_angle_gives_trivial_syndrome() {
        let code = SurfaceCode::build(5).unwrap();
        let sampler = SyndromeSampler::new(&code, 0.0).unwrap();
        let mut r = rng(11);
        for _ in 0..50 {
            assert!(sampler.sample(&mut r).unwrap().is_trivial());
        }
    }

    #[test]
    fn no_dephasing_means_no_error() {
        let code = SurfaceCode::build(3).unwrap();
        let sampler = SyndromeSampler::new(&code, 0.2).unwrap();
        let mut r = rng(12);
        for _ in 0..50 {
            let s = sampler.sample_with_dephasing(0.0, &mut r).unwrap();
            assert_eq!(s.e.weight(), 0);
            assert_eq!(s.s, s.s0);
        }
    }

    #[test]
    fn pure_dephasing_syndrome_is_classical() {
        let code = SurfaceCode::build(3).unwrap();
        let sampler = SyndromeSampler::new(&code, 0.0).unwrap();
        let mut r = rng(13);
        for _ in 0..200 {
            let s = sampler.sample_with_dephasing(0.2, &mut r).unwrap();
            assert_eq!(s.s, code.syndrome_of(&s.e).unwrap());
            assert!(s.s0.is_trivial());
        }
    }

    #[test]
    fn noise_params_validation() {
        assert!(NoiseParams::new(0.1, 0.01).is_ok());
        assert!(NoiseParams::new(FRAC_PI_2, 0.0).is_ok());
        assert!(NoiseParams::new(-FRAC_PI_2, 0.0).is_err());
        assert!(NoiseParams::new(0.1, 1.0).is_err());
        assert!(NoiseParams::new(0.1, -0.1).is_err());
    }

    #[test]
    fn batch_is_deterministic() {
        let code = SurfaceCode::build(3).unwrap();
        let params = NoiseParams::new(0.2, 0.01).unwrap();
        let a = sample_batch(&code, params, 64, 99).unwrap();
        let b = sample_batch(&code, params, 64, 99).unwrap();
        assert_eq!(a, b);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn random_programs_preserve_invariants(seed in 0u64..1000, angles in proptest::collection::vec(-1.5f64..1.5, 1..4)) {
            let code = SurfaceCode::build(3).unwrap();
            let mut r = rng(seed);
            let mut cs = init_code_state(&code, &mut r).unwrap();
            for th in angles {
                cs = apply_transversal_rotation(cs, th);
                let li = r.gen_range(0..cs.graph.links.len());
                let (k, l) = cs.graph.links[li];
                cs.state.measure_link(k, l, &mut r).unwrap();
                let k2 = r.gen_range(0..cs.state.dim());
                let l2 = (k2 + 1 + r.gen_range(0..cs.state.dim() - 1)) % cs.state.dim();
                cs.state.measure_link(k2, l2, &mut r).unwrap();
            }
            proptest::prop_assert!(cs.state.antisymmetry_error() < 1e-12);
            proptest::prop_assert!(cs.state.purity_error() < 1e-9);
            proptest::prop_assert!(cs.state.m.iter().all(|v| v.abs() <= 1.0 + 1e-9));
        }
    }
}
