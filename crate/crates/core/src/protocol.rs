//! Repeat-until-success trials driven by a [`Policy`].
//!
//! A trial starts at `Phi = Q = 0`. Each round the policy picks a rotation,
//! a reset or stop from `(Phi_T - Phi, Q)`; a rotation draws one outcome
//! `(phi_s, q_s)` and updates `Phi <- Phi + phi_s`,
//! `Q <- Q + q_s - 2 Q q_s`. Outcomes come from an [`OutcomeSource`]: the
//! empirical kernel, or live syndrome sampling with exact channels.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{fold_angle, ChannelCache};
use crate::decoder::MatchingGraph;
use crate::error::{Error, Result};
use crate::fermion::{NoiseParams, SyndromeSampler};
use crate::policy::{compose_dephasing, EmpiricalKernel, KernelOutcome, Policy, STOP};
use crate::rng::{self, StreamRng};
use crate::stats::{bootstrap_mean, bootstrap_mean_shifted, Estimate};
use crate::surface_code::SurfaceCode;

pub const DEFAULT_ROUND_CAP: usize = 10_000;

/// Accumulated logical state of a trial.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolState {
    pub phi: f64,
    pub q: f64,
    pub rounds: usize,
    pub resets: usize,
}

impl ProtocolState {
    pub fn residual(&self, phi_target: f64) -> f64 {
        fold_angle(phi_target - self.phi)
    }

    fn apply(&mut self, round: &RoundRecord) {
        self.rounds += 1;
        match round.theta {
            None => {
                self.phi = 0.0;
                self.q = 0.0;
                self.resets += 1;
            }
            Some(_) => {
                self.phi = fold_angle(self.phi + round.phi);
                self.q = compose_dephasing(self.q, round.q);
            }
        }
    }
}

/// Result of one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub syndrome: Option<String>,
    pub phi: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub action: u16,
    /// `None` for a reset.
    pub theta: Option<f64>,
    pub syndrome: Option<String>,
    pub phi: f64,
    pub q: f64,
}

/// Full log of a trial; [`TrialRecord::replay`] rebuilds its final state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub final_state: ProtocolState,
    /// True when the round cap stopped the trial.
    pub divergent: bool,
}

impl TrialRecord {
    pub fn replay(&self) -> ProtocolState {
        let mut state = ProtocolState::default();
        for r in &self.rounds {
            state.apply(r);
        }
        state
    }
}

/// Supplies the outcome of rotating by action `action` (angle `theta`).
pub trait OutcomeSource: Sync {
    fn draw(&self, action: usize, theta: f64, rng: &mut StreamRng) -> Result<RoundOutcome>;
}

/// Draws from precomputed per-action outcome lists.
pub struct KernelSource {
    outcomes: Vec<Vec<KernelOutcome>>,
    cumulative: Vec<Vec<f64>>,
}

impl KernelSource {
    pub fn new(policy: &Policy, kernel: &EmpiricalKernel) -> Result<KernelSource> {
        let outcomes = policy
            .grid
            .spec()
            .actions
            .iter()
            .map(|&a| kernel.outcomes(a))
            .collect::<Result<Vec<_>>>()?;
        Self::from_outcomes(outcomes)
    }

    pub fn from_outcomes(outcomes: Vec<Vec<KernelOutcome>>) -> Result<KernelSource> {
        let cumulative = outcomes
            .iter()
            .enumerate()
            .map(|(a, outs)| {
                let total: f64 = outs.iter().map(|o| o.weight).sum();
                if !(total > 0.0) {
                    return Err(Error::MissingCoverage(format!(
                        "no outcomes for action {a}"
                    )));
                }
                Ok(outs
                    .iter()
                    .scan(0.0, |acc, o| {
                        *acc += o.weight / total;
                        Some(*acc)
                    })
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(KernelSource {
            outcomes,
            cumulative,
        })
    }
}

impl OutcomeSource for KernelSource {
    fn draw(&self, action: usize, _theta: f64, rng: &mut StreamRng) -> Result<RoundOutcome> {
        let cum = &self.cumulative[action];
        let u: f64 = rng.gen();
        let k = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        let o = self.outcomes[action][k];
        Ok(RoundOutcome {
            syndrome: None,
            phi: o.phi,
            q: o.q,
        })
    }
}

/// Samples a syndrome for the actual rotation angle, decodes it and
/// evaluates its exact channel.
pub struct LiveSource<'a> {
    code: &'a SurfaceCode,
    graph: &'a MatchingGraph,
    cache: &'a ChannelCache,
    p: f64,
    samplers: Vec<SyndromeSampler>,
}

impl<'a> LiveSource<'a> {
    pub fn new(
        code: &'a SurfaceCode,
        graph: &'a MatchingGraph,
        cache: &'a ChannelCache,
        p: f64,
        actions: &[f64],
    ) -> Result<LiveSource<'a>> {
        let samplers = actions
            .iter()
            .map(|&t| SyndromeSampler::new(code, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(LiveSource {
            code,
            graph,
            cache,
            p,
            samplers,
        })
    }
}

impl OutcomeSource for LiveSource<'_> {
    fn draw(&self, action: usize, theta: f64, rng: &mut StreamRng) -> Result<RoundOutcome> {
        let sample = self.samplers[action].sample_with_dephasing(self.p, rng)?;
        let noise = NoiseParams::new(theta, self.p)?;
        let ch = self
            .cache
            .evaluate(self.code, self.graph, noise, &sample.s)?;
        Ok(RoundOutcome {
            syndrome: Some(sample.s.to_bitstring()),
            phi: ch.phi_s,
            q: ch.q_s,
        })
    }
}

/// Runs trial `index` with stream `(seed, "trial", index)`.
pub fn run_trial(
    policy: &Policy,
    source: &dyn OutcomeSource,
    seed: u64,
    index: usize,
    round_cap: usize,
) -> Result<TrialRecord> {
    let reset = policy.grid.reset_action();
    let mut rng = rng::stream(seed, "trial", index as u64);
    let mut state = ProtocolState::default();
    let mut rounds = Vec::new();
    let mut divergent = false;
    loop {
        let action = policy.action_index(state.phi, state.q);
        if action == STOP {
            break;
        }
        if state.rounds >= round_cap {
            divergent = true;
            break;
        }
        let record = if action as usize == reset {
            RoundRecord {
                action,
                theta: None,
                syndrome: None,
                phi: 0.0,
                q: 0.0,
            }
        } else {
            let theta = policy.grid.spec().actions[action as usize];
            let out = source.draw(action as usize, theta, &mut rng)?;
            RoundRecord {
                action,
                theta: Some(theta),
                syndrome: out.syndrome,
                phi: out.phi,
                q: out.q,
            }
        };
        state.apply(&record);
        rounds.push(record);
    }
    Ok(TrialRecord {
        index,
        seed,
        rounds,
        final_state: state,
        divergent,
    })
}

/// Runs `n_trials` independent trials in parallel; deterministic in `seed`.
pub fn run_campaign(
    policy: &Policy,
    source: &dyn OutcomeSource,
    n_trials: usize,
    seed: u64,
    round_cap: usize,
) -> Result<Vec<TrialRecord>> {
    (0..n_trials)
        .into_par_iter()
        .map(|i| run_trial(policy, source, seed, i, round_cap))
        .collect()
}

/// Campaign statistics over the converged trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n_trials: usize,
    pub n_divergent: usize,
    /// Rounds `T` (rotations plus resets).
    pub rounds: Estimate,
    pub resets: Estimate,
    /// Final accumulated dephasing `Q_T`.
    pub dephasing: Estimate,
    /// `Q_T / |Phi_T|`.
    pub relative_dephasing: Estimate,
}

pub fn summarize(
    trials: &[TrialRecord],
    phi_target: f64,
    resamples: usize,
    seed: u64,
) -> Result<SummaryStats> {
    summarize_shifted(trials, phi_target, seed, &vec![0.0; resamples])
}

/// Like [`summarize`], with the rounds interval also carrying the kernel's
/// sampling error: replicate `b` adds `round_shifts[b]` (see
/// [`kernel_round_shifts`]). The other intervals are over trials only.
pub fn summarize_shifted(
    trials: &[TrialRecord],
    phi_target: f64,
    seed: u64,
    round_shifts: &[f64],
) -> Result<SummaryStats> {
    let done: Vec<&TrialRecord> = trials.iter().filter(|t| !t.divergent).collect();
    if done.is_empty() {
        return Err(Error::Numerical("every trial hit the round cap".into()));
    }
    let resamples = round_shifts.len();
    let column = |f: &dyn Fn(&ProtocolState) -> f64| -> Vec<f64> {
        done.iter().map(|t| f(&t.final_state)).collect()
    };
    let stream = |k: u64| rng::stream(seed, "bootstrap", k);
    let boot = |k: u64, values: Vec<f64>| bootstrap_mean(&values, resamples, &mut stream(k));
    Ok(SummaryStats {
        n_trials: trials.len(),
        n_divergent: trials.len() - done.len(),
        rounds: bootstrap_mean_shifted(&column(&|s| s.rounds as f64), round_shifts, &mut stream(0)),
        resets: boot(1, column(&|s| s.resets as f64)),
        dephasing: boot(2, column(&|s| s.q)),
        relative_dephasing: boot(3, column(&|s| s.q / phi_target.abs())),
    })
}

/// Kernel bootstrap of the expected rounds: for each of `resamples`
/// replicates of `kernel` ([`EmpiricalKernel::resample`]), the policy's
/// predicted rounds minus their value on `kernel` itself. The policy is
/// held fixed.
pub fn kernel_round_shifts(
    policy: &Policy,
    kernel: &EmpiricalKernel,
    resamples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let base = policy.predicted_rounds(kernel)?;
    (0..resamples)
        .into_par_iter()
        .map(|b| {
            let replicate = kernel.resample(&mut rng::stream(seed, "kernel-bootstrap", b as u64));
            Ok(policy.predicted_rounds(&replicate)? - base)
        })
        .collect()
}
