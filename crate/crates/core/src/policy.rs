//! Adaptive rotation policies.
//!
//! The controller sees the residual `Delta = Phi_T - Phi` (folded into
//! `(-pi/2, pi/2]`) and the accumulated logical dephasing `Q`. Each round it
//! either applies a transversal rotation from a fixed action set or resets
//! to `Phi = Q = 0`; every round costs 1. A trial stops once `|Delta|` is
//! below the floor `eps = floor_ratio * |Phi_T|` and `Q <= Q_acc`.
//!
//! The outcome of a rotation comes from an [`EmpiricalKernel`]: per-angle
//! tables of observed syndromes and their exact channels, interpolated
//! between tabulated angles and mirrored to negative angles
//! (`p(s|-theta) = p(s|theta)`, `phi_s(-theta) = -phi_s(theta)`).
//!
//! The state space is discretized by [`ControlGrid`] and solved by
//! discounted value iteration ([`value_iterate`]).

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{fold_angle, ChannelCache, ChannelTable, TableEntry};
use crate::decoder::MatchingGraph;
use crate::error::{Error, Result};
use crate::fermion::NoiseParams;
use crate::surface_code::SurfaceCode;
use crate::sweep::point_seed;

/// Policy entry of terminal cells.
pub const STOP: u16 = u16::MAX;

/// Composition of two independent logical dephasings.
pub fn compose_dephasing(a: f64, b: f64) -> f64 {
    a + b - 2.0 * a * b
}

/// One outcome of a rotation: probability, logical angle, logical dephasing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelOutcome {
    pub weight: f64,
    pub phi: f64,
    pub q: f64,
}

/// Merges outcomes with identical channels and drops zero weights.
/// Symmetric syndromes share a channel, so this shrinks tables a lot.
pub fn merge_outcomes(mut outcomes: Vec<KernelOutcome>) -> Vec<KernelOutcome> {
    const SAME: f64 = 1e-12;
    outcomes.retain(|o| o.weight > 0.0);
    outcomes.sort_by(|a, b| a.phi.total_cmp(&b.phi).then(a.q.total_cmp(&b.q)));
    let mut merged: Vec<KernelOutcome> = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match merged.last_mut() {
            Some(last) if (last.phi - o.phi).abs() <= SAME && (last.q - o.q).abs() <= SAME => {
                last.weight += o.weight;
            }
            _ => merged.push(o),
        }
    }
    merged
}

/// Interpolates on a log scale when both ends are nonzero with one sign,
/// linearly otherwise.
fn interp_signed_log(a: f64, b: f64, t: f64) -> f64 {
    if a != 0.0 && b != 0.0 && a.signum() == b.signum() {
        a.signum() * ((1.0 - t) * a.abs().ln() + t * b.abs().ln()).exp()
    } else {
        (1.0 - t) * a + t * b
    }
}

fn interp_angle(a: f64, b: f64, t: f64) -> f64 {
    // keep the pair on one branch before interpolating
    let b = if b - a > FRAC_PI_2 {
        b - std::f64::consts::PI
    } else if a - b > FRAC_PI_2 {
        b + std::f64::consts::PI
    } else {
        b
    };
    fold_angle(interp_signed_log(a, b, t))
}

/// Per-angle channel tables for one `(d, p)`, at nonnegative angles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalKernel {
    pub d: usize,
    pub p: f64,
    pub tables: Vec<ChannelTable>,
}

impl EmpiricalKernel {
    pub fn new(mut tables: Vec<ChannelTable>) -> Result<EmpiricalKernel> {
        let first = tables
            .first()
            .ok_or_else(|| Error::MissingCoverage("no kernel tables".into()))?;
        let (d, p) = (first.d, first.p);
        tables.sort_by(|a, b| a.theta.total_cmp(&b.theta));
        for w in tables.windows(2) {
            if w[0].theta == w[1].theta {
                return Err(Error::Config(format!(
                    "duplicate kernel angle {}",
                    w[0].theta
                )));
            }
        }
        for t in &tables {
            if t.d != d || t.p != p {
                return Err(Error::Config(
                    "kernel tables mix distances or dephasing rates".into(),
                ));
            }
            if t.theta < 0.0 {
                return Err(Error::Config(format!(
                    "kernel angle {} is negative",
                    t.theta
                )));
            }
            let total: f64 = t.entries.iter().map(|e| e.weight).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Numerical(format!(
                    "kernel weights at theta {} sum to {total}",
                    t.theta
                )));
            }
        }
        Ok(EmpiricalKernel { d, p, tables })
    }

    /// Samples `n_samples` syndromes at each angle in `angles` (taken as
    /// `|theta|`); angle `theta` uses the seed of sweep point `(d, p, theta)`.
    pub fn build(
        code: &SurfaceCode,
        graph: &MatchingGraph,
        cache: &ChannelCache,
        p: f64,
        angles: &[f64],
        n_samples: usize,
        seed: u64,
    ) -> Result<EmpiricalKernel> {
        let mut abs: Vec<f64> = angles.iter().map(|a| a.abs()).collect();
        abs.sort_by(f64::total_cmp);
        abs.dedup();
        let tables = abs
            .par_iter()
            .map(|&a| {
                let noise = NoiseParams::new(a, p)?;
                ChannelTable::sample(
                    code,
                    graph,
                    cache,
                    noise,
                    n_samples,
                    point_seed(seed, code.d, p, a),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(tables)
    }

    /// Bootstrap replicate: every table's syndrome counts are redrawn
    /// multinomially from its own empirical distribution; the channels are
    /// kept.
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> EmpiricalKernel {
        let tables = self
            .tables
            .iter()
            .map(|t| {
                let owner: Vec<usize> = t
                    .entries
                    .iter()
                    .enumerate()
                    .flat_map(|(k, e)| std::iter::repeat(k).take(e.count))
                    .collect();
                let n = owner.len();
                let mut counts = vec![0usize; t.entries.len()];
                for _ in 0..n {
                    counts[owner[rng.gen_range(0..n)]] += 1;
                }
                let entries = t
                    .entries
                    .iter()
                    .zip(counts)
                    .filter(|(_, c)| *c > 0)
                    .map(|(e, c)| TableEntry {
                        count: c,
                        weight: c as f64 / n as f64,
                        ..e.clone()
                    })
                    .collect();
                ChannelTable {
                    d: t.d,
                    theta: t.theta,
                    p: t.p,
                    n_samples: t.n_samples,
                    entries,
                }
            })
            .collect();
        EmpiricalKernel { tables, ..*self }
    }

    /// Covered range of `|theta|`.
    pub fn theta_range(&self) -> (f64, f64) {
        (
            self.tables[0].theta,
            self.tables[self.tables.len() - 1].theta,
        )
    }

    pub fn hash(&self) -> Result<String> {
        crate::provenance::hash_json(self)
    }

    /// Outcome distribution of a rotation by `theta`.
    pub fn outcomes(&self, theta: f64) -> Result<Vec<KernelOutcome>> {
        const EDGE: f64 = 1e-12;
        let a = theta.abs();
        let sign = if theta < 0.0 { -1.0 } else { 1.0 };
        let (lo, hi) = self.theta_range();
        if a < lo - EDGE || a > hi + EDGE {
            return Err(Error::MissingCoverage(format!(
                "angle {theta} outside tabulated |theta| range [{lo}, {hi}]"
            )));
        }
        let k = self.tables.partition_point(|t| t.theta < a - EDGE);
        let raw: Vec<KernelOutcome> =
            if k < self.tables.len() && (self.tables[k].theta - a).abs() <= EDGE {
                table_outcomes(&self.tables[k]).map(|(_, o)| o).collect()
            } else {
                let (t0, t1) = (&self.tables[k - 1], &self.tables[k]);
                let t = (a - t0.theta) / (t1.theta - t0.theta);
                interpolate_tables(t0, t1, t)
            };
        Ok(merge_outcomes(
            raw.into_iter()
                .map(|o| KernelOutcome {
                    phi: fold_angle(sign * o.phi),
                    ..o
                })
                .collect(),
        ))
    }
}

fn table_outcomes(t: &ChannelTable) -> impl Iterator<Item = (&str, KernelOutcome)> {
    t.entries.iter().map(|e| {
        (
            e.syndrome.as_str(),
            KernelOutcome {
                weight: e.weight,
                phi: e.params.phi_s,
                q: e.params.q_s,
            },
        )
    })
}

/// Syndrome-wise interpolation. A syndrome seen at one end only keeps that
/// end's channel and interpolates its weight against zero.
fn interpolate_tables(t0: &ChannelTable, t1: &ChannelTable, t: f64) -> Vec<KernelOutcome> {
    use std::collections::BTreeMap;
    let mut joined: BTreeMap<&str, (Option<KernelOutcome>, Option<KernelOutcome>)> =
        BTreeMap::new();
    for (s, o) in table_outcomes(t0) {
        joined.entry(s).or_default().0 = Some(o);
    }
    for (s, o) in table_outcomes(t1) {
        joined.entry(s).or_default().1 = Some(o);
    }
    joined
        .into_values()
        .map(|pair| match pair {
            (Some(a), Some(b)) => KernelOutcome {
                weight: (1.0 - t) * a.weight + t * b.weight,
                phi: interp_angle(a.phi, b.phi, t),
                q: interp_signed_log(a.q, b.q, t),
            },
            (Some(a), None) => KernelOutcome {
                weight: (1.0 - t) * a.weight,
                ..a
            },
            (None, Some(b)) => KernelOutcome {
                weight: t * b.weight,
                ..b
            },
            (None, None) => unreachable!(),
        })
        .collect()
}

/// Parameters of the discretized control problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub phi_target: f64,
    /// Residual bins: one zero bin plus `(n_phi - 1) / 2` per sign.
    pub n_phi: usize,
    /// Dephasing bins: `[0, q_min)` plus `n_q - 1` log-spaced up to `q_max`.
    pub n_q: usize,
    pub q_min: f64,
    pub q_max: f64,
    pub q_acc: f64,
    /// Residual floor as a fraction of `|phi_target|`.
    pub floor_ratio: f64,
    pub gamma: f64,
    /// Stop when the sup-norm change of a sweep falls below this.
    pub delta: f64,
    pub max_sweeps: usize,
    /// Points per residual bin over which transitions are averaged.
    #[serde(default = "default_sub_points")]
    pub sub_points: usize,
    /// Rotation angles; the reset action comes after them.
    pub actions: Vec<f64>,
}

fn default_sub_points() -> usize {
    4
}

impl GridSpec {
    /// Defaults: 201 x 21 cells, `gamma = 0.99`, `delta = 0.01`.
    pub fn new(phi_target: f64, q_acc: f64, actions: Vec<f64>) -> GridSpec {
        GridSpec {
            phi_target,
            n_phi: 201,
            n_q: 21,
            q_min: 1e-7,
            q_max: 0.5,
            q_acc,
            floor_ratio: 0.01,
            gamma: 0.99,
            delta: 0.01,
            max_sweeps: 100_000,
            sub_points: default_sub_points(),
            actions,
        }
    }

    /// `count` evenly spaced angles covering `[-theta_max, theta_max]`.
    pub fn symmetric_actions(theta_max: f64, count: usize) -> Vec<f64> {
        match count {
            0 => Vec::new(),
            1 => vec![theta_max],
            _ => (0..count)
                // integer numerator keeps the set exactly sign-symmetric
                .map(|i| {
                    theta_max * (2 * i as i64 - (count as i64 - 1)) as f64 / (count - 1) as f64
                })
                .collect(),
        }
    }

    /// Nonnegative angles at which a kernel must be tabulated so that no
    /// action needs interpolation: 0 and every distinct `|action|`.
    pub fn kernel_angles(&self) -> Vec<f64> {
        let mut out: Vec<f64> = std::iter::once(0.0)
            .chain(self.actions.iter().map(|a| a.abs()))
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.phi_target > -FRAC_PI_2 && self.phi_target <= FRAC_PI_2) || self.phi_target == 0.0
        {
            return bad(format!(
                "target angle {} must be nonzero in (-pi/2, pi/2]",
                self.phi_target
            ));
        }
        if self.n_phi < 3 || self.n_phi % 2 == 0 {
            return bad(format!("n_phi = {} must be odd and at least 3", self.n_phi));
        }
        if self.n_q < 2 || self.n_q > 256 {
            return bad(format!("n_q = {} must lie in [2, 256]", self.n_q));
        }
        if self.n_phi > u16::MAX as usize {
            return bad(format!("n_phi = {} is too large", self.n_phi));
        }
        if !(self.q_min > 0.0 && self.q_min < self.q_max && self.q_max <= 0.5) {
            return bad("need 0 < q_min < q_max <= 0.5".into());
        }
        if !(self.q_acc >= self.q_min && self.q_acc <= self.q_max) {
            return bad(format!("q_acc = {} must lie in [q_min, q_max]", self.q_acc));
        }
        if !(self.floor_ratio > 0.0 && self.floor_ratio < 1.0) {
            return bad("floor_ratio must lie in (0, 1)".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma = {} must lie in (0, 1)", self.gamma));
        }
        if self.sub_points == 0 {
            return bad("sub_points must be positive".into());
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive".into());
        }
        if self.actions.is_empty() || self.actions.len() >= STOP as usize {
            return bad(format!("{} rotation actions", self.actions.len()));
        }
        if let Some(a) = self
            .actions
            .iter()
            .find(|a| !(**a > -FRAC_PI_2 && **a <= FRAC_PI_2))
        {
            return bad(format!("action angle {a} outside (-pi/2, pi/2]"));
        }
        Ok(())
    }
}

/// Discretization of `(Delta, Q)`.
///
/// States are the `n_phi x n_q` cells plus one extra state for the exact
/// start `Phi = Q = 0`, which every reset returns to. A residual bin is
/// followed through a rotation at `sub_points` log-spaced points inside it
/// rather than at one representative: bins are several times wider than
/// the terminal window, and a plan that only works from the bin centre
/// fails from most of the bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct ControlGrid {
    spec: GridSpec,
    delta_edges: Vec<f64>,
    q_edges: Vec<f64>,
}

impl TryFrom<GridSpec> for ControlGrid {
    type Error = Error;
    fn try_from(spec: GridSpec) -> Result<ControlGrid> {
        ControlGrid::new(spec)
    }
}

impl From<ControlGrid> for GridSpec {
    fn from(g: ControlGrid) -> GridSpec {
        g.spec
    }
}

fn log_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..=bins)
        .map(|k| match k {
            0 => lo,
            k if k == bins => hi,
            k => (a + (b - a) * k as f64 / bins as f64).exp(),
        })
        .collect()
}

impl ControlGrid {
    pub fn new(spec: GridSpec) -> Result<ControlGrid> {
        spec.validate()?;
        let side = (spec.n_phi - 1) / 2;
        let eps = spec.phi_target.abs() * spec.floor_ratio;
        Ok(ControlGrid {
            delta_edges: log_edges(eps, FRAC_PI_2, side),
            q_edges: log_edges(spec.q_min, spec.q_max, spec.n_q - 1),
            spec,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn eps_floor(&self) -> f64 {
        self.delta_edges[0]
    }

    pub fn num_cells(&self) -> usize {
        self.spec.n_phi * self.spec.n_q
    }

    /// Cells plus the start state.
    pub fn num_states(&self) -> usize {
        self.num_cells() + 1
    }

    /// Rotation actions plus reset.
    pub fn num_actions(&self) -> usize {
        self.spec.actions.len() + 1
    }

    pub fn reset_action(&self) -> usize {
        self.spec.actions.len()
    }

    fn zero_bin(&self) -> usize {
        (self.spec.n_phi - 1) / 2
    }

    /// Residual bin of `delta` (folded first).
    pub fn delta_bin(&self, delta: f64) -> usize {
        let delta = fold_angle(delta);
        let a = delta.abs();
        let zero = self.zero_bin();
        if a < self.eps_floor() {
            return zero;
        }
        let k = self.delta_edges.partition_point(|&e| e <= a).clamp(1, zero);
        if delta > 0.0 {
            zero + k
        } else {
            zero - k
        }
    }

    /// Geometric centre of a residual bin (0 for the zero bin).
    pub fn delta_rep(&self, bin: usize) -> f64 {
        let zero = self.zero_bin();
        if bin == zero {
            return 0.0;
        }
        let k = bin.abs_diff(zero);
        let mag = (self.delta_edges[k - 1] * self.delta_edges[k]).sqrt();
        if bin > zero {
            mag
        } else {
            -mag
        }
    }

    /// `sub_points` residuals spread over a bin: log-spaced in magnitude,
    /// evenly spaced in the zero bin.
    pub fn delta_points(&self, bin: usize) -> Vec<f64> {
        let zero = self.zero_bin();
        let n = self.spec.sub_points;
        let frac = |u: usize| (u as f64 + 0.5) / n as f64;
        if bin == zero {
            let eps = self.eps_floor();
            return (0..n).map(|u| eps * (2.0 * frac(u) - 1.0)).collect();
        }
        let k = bin.abs_diff(zero);
        let (lo, hi) = (self.delta_edges[k - 1], self.delta_edges[k]);
        let sign = if bin > zero { 1.0 } else { -1.0 };
        (0..n)
            .map(|u| sign * lo * (hi / lo).powf(frac(u)))
            .collect()
    }

    pub fn q_bin(&self, q: f64) -> usize {
        if q < self.spec.q_min {
            0
        } else {
            self.q_edges
                .partition_point(|&e| e <= q)
                .clamp(1, self.spec.n_q - 1)
        }
    }

    pub fn q_rep(&self, bin: usize) -> f64 {
        if bin == 0 {
            0.0
        } else {
            (self.q_edges[bin - 1] * self.q_edges[bin]).sqrt()
        }
    }

    fn q_upper(&self, bin: usize) -> f64 {
        self.q_edges[bin]
    }

    pub fn cell(&self, delta: f64, q: f64) -> usize {
        self.delta_bin(delta) * self.spec.n_q + self.q_bin(q)
    }

    /// Index of the exact start state.
    pub fn start_state(&self) -> usize {
        self.num_cells()
    }

    /// State index of a trial's `(Phi, Q)`.
    pub fn state(&self, phi: f64, q: f64) -> usize {
        if phi == 0.0 && q == 0.0 {
            self.start_state()
        } else {
            self.cell(self.spec.phi_target - phi, q)
        }
    }

    /// Continuous stopping rule.
    pub fn is_terminal(&self, delta: f64, q: f64) -> bool {
        fold_angle(delta).abs() < self.eps_floor() && q <= self.spec.q_acc
    }

    /// A cell is terminal when every state in it is.
    pub fn is_terminal_cell(&self, cell: usize) -> bool {
        if cell >= self.num_cells() {
            return self.is_terminal(self.spec.phi_target, 0.0);
        }
        let (i, j) = (cell / self.spec.n_q, cell % self.spec.n_q);
        i == self.zero_bin() && self.q_upper(j) <= self.spec.q_acc
    }
}

/// Finite discounted cost-to-go problem.
pub trait BellmanModel: Sync {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn gamma(&self) -> f64;
    fn is_terminal(&self, state: usize) -> bool;
    fn cost(&self, action: usize) -> f64;
    /// `E[V(next) | state, action]`.
    fn expected_next(&self, state: usize, action: usize, v: &[f64]) -> f64;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub value: Vec<f64>,
    /// Greedy action per state, [`STOP`] on terminal states.
    pub policy: Vec<u16>,
    /// Sup-norm change of each sweep.
    pub residuals: Vec<f64>,
}

/// Jacobi value iteration from `V = 0` until the sweep change is below
/// `delta`. Ties go to the lowest action index. The residual contracts by
/// `gamma` each sweep; an increase is reported as a numerical error.
pub fn value_iterate<M: BellmanModel>(
    model: &M,
    delta: f64,
    max_sweeps: usize,
) -> Result<Solution> {
    let n = model.num_states();
    let gamma = model.gamma();
    let mut value = vec![0.0; n];
    let mut residuals: Vec<f64> = Vec::new();
    for _ in 0..max_sweeps {
        let (next, policy): (Vec<f64>, Vec<u16>) = (0..n)
            .into_par_iter()
            .map(|s| {
                if model.is_terminal(s) {
                    return (0.0, STOP);
                }
                let mut best = f64::INFINITY;
                let mut pick = 0u16;
                for a in 0..model.num_actions() {
                    let q = model.cost(a) + gamma * model.expected_next(s, a, &value);
                    if q < best {
                        best = q;
                        pick = a as u16;
                    }
                }
                (best, pick)
            })
            .unzip();
        let residual = next
            .iter()
            .zip(&value)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !residual.is_finite() {
            return Err(Error::Numerical("non-finite Bellman residual".into()));
        }
        if let Some(&prev) = residuals.last() {
            if residual > prev * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::Numerical(format!(
                    "Bellman residual increased from {prev} to {residual}"
                )));
            }
        }
        residuals.push(residual);
        value = next;
        if residual < delta {
            return Ok(Solution {
                value,
                policy,
                residuals,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_sweeps,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// The grid problem with precomputed transitions.
struct GridModel<'a> {
    grid: &'a ControlGrid,
    weights: Vec<Vec<f64>>,
    /// `[(k * n_phi + i) * sub_points + u]`: residual bin after outcome `k`
    /// from point `u` of bin `i`.
    delta_next: Vec<Vec<u16>>,
    /// `[k * n_q + j]`: dephasing bin after outcome `k` from bin `j`.
    q_next: Vec<Vec<u8>>,
    /// `[k]`: cell after outcome `k` from the start state.
    start_next: Vec<Vec<u32>>,
}

impl<'a> GridModel<'a> {
    fn new(grid: &'a ControlGrid, outcomes: &[Vec<KernelOutcome>]) -> Result<GridModel<'a>> {
        let (n_phi, n_q) = (grid.spec.n_phi, grid.spec.n_q);
        let points: Vec<Vec<f64>> = (0..n_phi).map(|i| grid.delta_points(i)).collect();
        let mut model = GridModel {
            grid,
            weights: Vec::new(),
            delta_next: Vec::new(),
            q_next: Vec::new(),
            start_next: Vec::new(),
        };
        for (a, outs) in outcomes.iter().enumerate() {
            let total: f64 = outs.iter().map(|o| o.weight).sum();
            if outs.is_empty() || !(total > 0.0) {
                return Err(Error::MissingCoverage(format!(
                    "no outcomes for action {a}"
                )));
            }
            model
                .weights
                .push(outs.iter().map(|o| o.weight / total).collect());
            let mut dn = Vec::with_capacity(outs.len() * n_phi * grid.spec.sub_points);
            let mut qn = Vec::with_capacity(outs.len() * n_q);
            for o in outs {
                for pts in &points {
                    dn.extend(pts.iter().map(|&x| grid.delta_bin(x - o.phi) as u16));
                }
                qn.extend(
                    (0..n_q).map(|j| grid.q_bin(compose_dephasing(grid.q_rep(j), o.q)) as u8),
                );
            }
            model.delta_next.push(dn);
            model.q_next.push(qn);
            model
                .start_next
                .push(outs.iter().map(|o| grid.state(o.phi, o.q) as u32).collect());
        }
        Ok(model)
    }
}

impl BellmanModel for GridModel<'_> {
    fn num_states(&self) -> usize {
        self.grid.num_states()
    }

    fn num_actions(&self) -> usize {
        self.grid.num_actions()
    }

    fn gamma(&self) -> f64 {
        self.grid.spec.gamma
    }

    fn is_terminal(&self, state: usize) -> bool {
        self.grid.is_terminal_cell(state)
    }

    fn cost(&self, _action: usize) -> f64 {
        1.0
    }

    fn expected_next(&self, state: usize, action: usize, v: &[f64]) -> f64 {
        if action == self.grid.reset_action() {
            return v[self.grid.start_state()];
        }
        let w = &self.weights[action];
        if state == self.grid.start_state() {
            return w
                .iter()
                .zip(&self.start_next[action])
                .map(|(w, &c)| w * v[c as usize])
                .sum();
        }
        let (n_phi, n_q, n_sub) = (
            self.grid.spec.n_phi,
            self.grid.spec.n_q,
            self.grid.spec.sub_points,
        );
        let (i, j) = (state / n_q, state % n_q);
        let dn = &self.delta_next[action];
        let qn = &self.q_next[action];
        let scale = 1.0 / n_sub as f64;
        w.iter()
            .enumerate()
            .map(|(k, w)| {
                let qj = qn[k * n_q + j] as usize;
                let base = (k * n_phi + i) * n_sub;
                let sum: f64 = dn[base..base + n_sub]
                    .iter()
                    .map(|&b| v[b as usize * n_q + qj])
                    .sum();
                w * scale * sum
            })
            .sum()
    }
}

/// What the controller does next.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Action {
    Rotate(f64),
    Reset,
    Stop,
}

/// An optimized lookup table with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub grid: ControlGrid,
    pub kernel_hash: String,
    pub value: Vec<f64>,
    pub actions: Vec<u16>,
    pub residuals: Vec<f64>,
}

impl Policy {
    /// Solves the grid problem with outcomes from `kernel`.
    pub fn optimize(spec: GridSpec, kernel: &EmpiricalKernel) -> Result<Policy> {
        let outcomes = spec
            .actions
            .iter()
            .map(|&a| kernel.outcomes(a))
            .collect::<Result<Vec<_>>>()?;
        Self::optimize_with_outcomes(spec, &outcomes, kernel.hash()?)
    }

    /// Solves with explicit per-action outcome lists (same order as
    /// `spec.actions`).
    pub fn optimize_with_outcomes(
        spec: GridSpec,
        outcomes: &[Vec<KernelOutcome>],
        kernel_hash: String,
    ) -> Result<Policy> {
        let grid = ControlGrid::new(spec)?;
        if outcomes.len() != grid.spec.actions.len() {
            return Err(Error::LengthMismatch {
                expected: grid.spec.actions.len(),
                actual: outcomes.len(),
            });
        }
        let model = GridModel::new(&grid, outcomes)?;
        let sol = value_iterate(&model, grid.spec.delta, grid.spec.max_sweeps)?;
        log::info!(
            "value iteration converged in {} sweeps, V(start) = {:.4}",
            sol.residuals.len(),
            sol.value[grid.start_state()]
        );
        Ok(Policy {
            kernel_hash,
            value: sol.value,
            actions: sol.policy,
            residuals: sol.residuals,
            grid,
        })
    }

    /// Action index at accumulated angle `phi` and dephasing `q`.
    pub fn action_index(&self, phi: f64, q: f64) -> u16 {
        if self.grid.is_terminal(self.grid.spec.phi_target - phi, q) {
            return STOP;
        }
        match self.actions[self.grid.state(phi, q)] {
            // inside a terminal cell but outside the continuous rule
            STOP => self.grid.reset_action() as u16,
            a => a,
        }
    }

    pub fn action(&self, phi: f64, q: f64) -> Action {
        match self.action_index(phi, q) {
            STOP => Action::Stop,
            a if a as usize == self.grid.reset_action() => Action::Reset,
            a => Action::Rotate(self.grid.spec.actions[a as usize]),
        }
    }

    /// Undiscounted expected number of rounds from the start cell under
    /// this policy on the grid model (iterative policy evaluation).
    pub fn predicted_rounds(&self, kernel: &EmpiricalKernel) -> Result<f64> {
        let outcomes = self
            .grid
            .spec
            .actions
            .iter()
            .map(|&a| kernel.outcomes(a))
            .collect::<Result<Vec<_>>>()?;
        self.predicted_rounds_with_outcomes(&outcomes)
    }

    pub fn predicted_rounds_with_outcomes(&self, outcomes: &[Vec<KernelOutcome>]) -> Result<f64> {
        const TOL: f64 = 1e-9;
        let model = GridModel::new(&self.grid, outcomes)?;
        let mut v = vec![0.0; self.grid.num_states()];
        for _ in 0..self.grid.spec.max_sweeps {
            let next: Vec<f64> = (0..v.len())
                .into_par_iter()
                .map(|c| match self.actions[c] {
                    STOP => 0.0,
                    a => 1.0 + model.expected_next(c, a as usize, &v),
                })
                .collect();
            let change = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v = next;
            if change < TOL {
                return Ok(v[self.grid.start_state()]);
            }
        }
        Err(Error::NoConvergence {
            iterations: self.grid.spec.max_sweeps,
            residual: f64::NAN,
        })
    }

    /// Cost-to-go of the start cell.
    pub fn start_value(&self) -> f64 {
        self.value[self.grid.start_state()]
    }

    pub fn hash(&self) -> Result<String> {
        crate::provenance::hash_json(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Policy> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let policy: Policy = serde_json::from_reader(file)?;
        if policy.value.len() != policy.grid.num_states()
            || policy.actions.len() != policy.grid.num_states()
        {
            return Err(Error::Config("policy table does not match its grid".into()));
        }
        Ok(policy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Start cell `0`, trap `1`, terminal `2`. From the start, action 0
    /// succeeds with probability `r` and otherwise falls into the trap;
    /// from the trap only a reset back to the start helps.
    struct TwoCell {
        r: f64,
        gamma: f64,
    }

    impl BellmanModel for TwoCell {
        fn num_states(&self) -> usize {
            3
        }
        fn num_actions(&self) -> usize {
            2
        }
        fn gamma(&self) -> f64 {
            self.gamma
        }
        fn is_terminal(&self, s: usize) -> bool {
            s == 2
        }
        fn cost(&self, _a: usize) -> f64 {
            1.0
        }
        fn expected_next(&self, s: usize, a: usize, v: &[f64]) -> f64 {
            match (s, a) {
                (0, 0) => self.r * v[2] + (1.0 - self.r) * v[1],
                (1, 0) => v[1],
                _ => v[0],
            }
        }
    }

    #[test]
    fn two_cell_closed_form() {
        for (r, gamma) in [(0.5, 0.99), (0.3, 0.9), (0.9, 0.5)] {
            let sol = value_iterate(&TwoCell { r, gamma }, 1e-12, 100_000).unwrap();
            let g = gamma;
            let expect = (1.0 + g * (1.0 - r)) / (1.0 - g * g * (1.0 - r));
            assert!(
                (sol.value[0] - expect).abs() < 1e-9,
                "{} vs {expect}",
                sol.value[0]
            );
            assert!((sol.value[1] - (1.0 + g * expect)).abs() < 1e-9);
            assert_eq!(sol.policy, vec![0, 1, STOP]);
            assert!(sol.residuals.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn scaling_costs_keeps_the_argmin() {
        struct Scaled(TwoCell, f64);
        impl BellmanModel for Scaled {
            fn num_states(&self) -> usize {
                3
            }
            fn num_actions(&self) -> usize {
                2
            }
            fn gamma(&self) -> f64 {
                self.0.gamma
            }
            fn is_terminal(&self, s: usize) -> bool {
                self.0.is_terminal(s)
            }
            fn cost(&self, a: usize) -> f64 {
                self.1 * self.0.cost(a)
            }
            fn expected_next(&self, s: usize, a: usize, v: &[f64]) -> f64 {
                self.0.expected_next(s, a, v)
            }
        }
        let base = value_iterate(
            &TwoCell {
                r: 0.4,
                gamma: 0.95,
            },
            1e-12,
            100_000,
        )
        .unwrap();
        let scaled = value_iterate(
            &Scaled(
                TwoCell {
                    r: 0.4,
                    gamma: 0.95,
                },
                7.0,
            ),
            1e-11,
            100_000,
        )
        .unwrap();
        assert_eq!(base.policy, scaled.policy);
        assert!((scaled.value[0] - 7.0 * base.value[0]).abs() < 1e-8);
    }

    fn toy_spec(target: f64) -> GridSpec {
        let mut actions = GridSpec::symmetric_actions(0.16 * PI, 20);
        actions.push(target);
        GridSpec::new(target, 1e-3, actions)
    }

    fn deterministic(spec: &GridSpec) -> Vec<Vec<KernelOutcome>> {
        spec.actions
            .iter()
            .map(|&a| {
                vec![KernelOutcome {
                    weight: 1.0,
                    phi: a,
                    q: 0.0,
                }]
            })
            .collect()
    }

    #[test]
    fn deterministic_kernel_hits_the_target_in_one_round() {
        let target = 0.1 * PI;
        let spec = toy_spec(target);
        let outcomes = deterministic(&spec);
        let policy = Policy::optimize_with_outcomes(spec, &outcomes, "toy".into()).unwrap();
        assert!((policy.start_value() - 1.0).abs() < 1e-12);
        assert_eq!(policy.action(0.0, 0.0), Action::Rotate(target));
        assert_eq!(policy.action(target, 0.0), Action::Stop);
        assert!(policy.residuals.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn coin_flip_kernel_matches_geometric_retries() {
        // success with probability 1/2, otherwise heavy dephasing that only
        // a reset clears: V = 1 + g (V_fail / 2), V_fail = 1 + g V
        let target = 0.1 * PI;
        let mut spec = GridSpec::new(target, 1e-3, vec![target]);
        spec.delta = 1e-10;
        let outcomes = vec![vec![
            KernelOutcome {
                weight: 0.5,
                phi: target,
                q: 0.0,
            },
            KernelOutcome {
                weight: 0.5,
                phi: 0.0,
                q: 0.4,
            },
        ]];
        let policy = Policy::optimize_with_outcomes(spec, &outcomes, "toy".into()).unwrap();
        let g = 0.99;
        let expect = (1.0 + g * 0.5) / (1.0 - 0.5 * g * g);
        assert!(
            (policy.start_value() - expect).abs() < 1e-6,
            "{}",
            policy.start_value()
        );
        assert_eq!(policy.action(0.0, 0.4), Action::Reset);
        let rounds = policy.predicted_rounds_with_outcomes(&outcomes).unwrap();
        assert!((rounds - 3.0).abs() < 1e-6, "{rounds}");
    }

    #[test]
    fn grid_bins_round_trip() {
        let grid = ControlGrid::new(toy_spec(0.1 * PI)).unwrap();
        assert_eq!(grid.delta_bin(0.0), 100);
        assert_eq!(grid.delta_bin(grid.eps_floor() * 0.999), 100);
        assert_eq!(grid.delta_bin(grid.eps_floor()), 101);
        assert_eq!(grid.delta_bin(-grid.eps_floor()), 99);
        assert_eq!(grid.delta_bin(FRAC_PI_2), 200);
        assert_eq!(grid.delta_bin(-FRAC_PI_2 + 1e-9), 0);
        for i in 0..201 {
            assert_eq!(grid.delta_bin(grid.delta_rep(i)), i);
        }
        for j in 0..21 {
            assert_eq!(grid.q_bin(grid.q_rep(j)), j);
        }
        assert_eq!(grid.q_bin(0.5), 20);
        for i in 0..201 {
            let pts = grid.delta_points(i);
            assert_eq!(pts.len(), 4);
            assert!(pts.iter().all(|&x| grid.delta_bin(x) == i));
        }
        assert_eq!(grid.state(0.0, 0.0), grid.start_state());
    }

    #[test]
    fn accumulated_dephasing_stays_in_range() {
        let mut q = 0.0;
        for k in 0..2000 {
            q = compose_dephasing(q, 0.5 * (k as f64 / 2000.0));
            assert!((0.0..=0.5).contains(&q));
        }
        let (a, b, c) = (0.1, 0.2, 0.3);
        let left = compose_dephasing(compose_dephasing(a, b), c);
        let right = compose_dephasing(a, compose_dephasing(b, c));
        assert!((left - right).abs() < 1e-15);
    }

    #[test]
    fn symmetric_actions_mirror_exactly() {
        let a = GridSpec::symmetric_actions(0.16 * PI, 200);
        assert_eq!(a.len(), 200);
        assert_eq!(a[0], -0.16 * PI);
        assert_eq!(a[199], 0.16 * PI);
        for i in 0..200 {
            assert_eq!(a[i], -a[199 - i]);
        }
        let spec = GridSpec::new(0.1, 1e-3, a);
        assert_eq!(spec.kernel_angles().len(), 101);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = toy_spec(0.1);
        spec.n_phi = 200;
        assert!(matches!(ControlGrid::new(spec), Err(Error::Config(_))));
        let mut spec = toy_spec(0.1);
        spec.q_acc = 1e-9;
        assert!(ControlGrid::new(spec).is_err());
        assert!(ControlGrid::new(toy_spec(0.0)).is_err());
    }

    #[test]
    fn signed_log_interpolation() {
        assert!((interp_signed_log(1e-4, 1e-2, 0.5) - 1e-3).abs() < 1e-15);
        assert!((interp_signed_log(-1e-4, -1e-2, 0.5) + 1e-3).abs() < 1e-15);
        assert_eq!(interp_signed_log(0.0, 0.2, 0.25), 0.05);
        assert!((interp_angle(FRAC_PI_2 - 0.01, -FRAC_PI_2 + 0.01, 0.5) - FRAC_PI_2).abs() < 1e-4);
    }
}
