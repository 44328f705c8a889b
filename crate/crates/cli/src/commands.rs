//! The five pipeline stages. Each reads its inputs from the output
//! directory and writes its artifacts next to them:
//!
//! `sample` -> samples.csv -> `channel` -> kernel.json -> `optimize` ->
//! policy.json -> `simulate`; `sweep` is self-contained.

use std::f64::consts::PI;

use anyhow::{Context, Result};
use robust_phase::channel::{ChannelCache, ChannelTable};
use robust_phase::decoder::MatchingGraph;
use robust_phase::fermion::{draw_samples, NoiseParams, SampleRecord};
use robust_phase::policy::{EmpiricalKernel, GridSpec, Policy};
use robust_phase::protocol::{
    kernel_round_shifts, run_campaign, summarize, summarize_shifted, KernelSource, LiveSource,
    OutcomeSource, SummaryStats, TrialRecord,
};
use robust_phase::rng::derive_seed;
use robust_phase::stats::Estimate;
use robust_phase::surface_code::{SurfaceCode, Syndrome};
use robust_phase::sweep::{find_half_success_angle, fit_suppression, point_seed, sweep_grid, sweep_point};
use serde::Serialize;

use crate::config::{ConfigError, Config, Mode};
use crate::output::{parse_artifact, parse_csv, Outputs};

pub const SAMPLES: &str = "samples.csv";
pub const KERNEL: &str = "kernel.json";
pub const POLICY: &str = "policy.json";

fn mismatch(what: &str, artifact: &str, found: String, want: String) -> anyhow::Error {
    ConfigError(format!(
        "{artifact} was produced for {what} = {found} but the config has {want}; rerun the upstream command"
    ))
    .into()
}

pub fn sample(cfg: &Config, out: &mut Outputs) -> Result<()> {
    let code = SurfaceCode::build(cfg.d)?;
    let angles = match cfg.sample.theta_pi {
        Some(t) => vec![t * PI],
        None => GridSpec::new(1.0, 0.0, cfg.actions()).kernel_angles(),
    };
    let mut rows = Vec::with_capacity(angles.len() * cfg.n_samples);
    for &theta in &angles {
        let noise = NoiseParams::new(theta, cfg.p)?;
        // same streams as EmpiricalKernel::build
        let seed = point_seed(cfg.seed, cfg.d, cfg.p, theta);
        let draws = draw_samples(&code, noise, cfg.n_samples, seed)?;
        rows.extend(draws.iter().map(|(s, seed)| SampleRecord::new(noise, s, *seed)));
        log::info!("sampled {} syndromes at theta = {:.4}pi", cfg.n_samples, theta / PI);
    }
    out.write_csv(SAMPLES, &rows)
}

#[derive(Serialize)]
struct ChannelRow<'a> {
    theta: f64,
    p: f64,
    syndrome: &'a str,
    count: usize,
    weight: f64,
    p_s: f64,
    phi_s: f64,
    q_s: f64,
    degenerate: bool,
}

pub fn channel(cfg: &Config, out: &mut Outputs) -> Result<()> {
    let records: Vec<SampleRecord> = parse_csv(SAMPLES, &out.input(SAMPLES, "sample")?)?;
    if records.is_empty() {
        return Err(ConfigError(format!("{SAMPLES} has no rows")).into());
    }
    let code = SurfaceCode::build(cfg.d)?;
    let graph = MatchingGraph::build(&code);
    let cache = ChannelCache::new();
    // group by (theta, p) in file order
    let mut groups: Vec<(NoiseParams, Vec<Syndrome>)> = Vec::new();
    for r in &records {
        let s = Syndrome::from_bitstring(&r.s)
            .with_context(|| format!("bad syndrome `{}` in {SAMPLES}", r.s))?;
        if s.0.len() != code.num_x_checks() {
            return Err(mismatch(
                "syndrome length",
                SAMPLES,
                s.0.len().to_string(),
                format!("{} (d = {})", code.num_x_checks(), cfg.d),
            ));
        }
        match groups.last_mut() {
            Some((n, v)) if n.theta == r.theta && n.p == r.p => v.push(s),
            _ => groups.push((NoiseParams::new(r.theta, r.p)?, vec![s])),
        }
    }
    let tables = groups
        .iter()
        .map(|(noise, syndromes)| {
            ChannelTable::from_syndromes(&code, &graph, &cache, *noise, syndromes)
        })
        .collect::<robust_phase::Result<Vec<_>>>()?;
    let rows: Vec<ChannelRow> = tables
        .iter()
        .flat_map(|t| {
            t.entries.iter().map(move |e| ChannelRow {
                theta: t.theta,
                p: t.p,
                syndrome: &e.syndrome,
                count: e.count,
                weight: e.weight,
                p_s: e.params.p_s,
                phi_s: e.params.phi_s,
                q_s: e.params.q_s,
                degenerate: e.params.degenerate,
            })
        })
        .collect();
    out.write_csv("channel.csv", &rows)?;
    let kernel = EmpiricalKernel::new(tables)?;
    out.write_artifact(KERNEL, &kernel)
}

fn load_kernel(cfg: &Config, out: &mut Outputs) -> Result<EmpiricalKernel> {
    let kernel: EmpiricalKernel = parse_artifact(KERNEL, &out.input(KERNEL, "channel")?)?.body;
    if kernel.d != cfg.d {
        return Err(mismatch("d", KERNEL, kernel.d.to_string(), cfg.d.to_string()));
    }
    if kernel.p != cfg.p {
        return Err(mismatch("p", KERNEL, kernel.p.to_string(), cfg.p.to_string()));
    }
    Ok(kernel)
}

#[derive(Serialize)]
struct PolicyRow {
    target: f64,
    target_pi: f64,
    q_acc: f64,
    sweeps: usize,
    final_residual: f64,
    start_value: f64,
    predicted_rounds: f64,
    kernel_hash: String,
    policy_hash: String,
}

#[derive(Serialize)]
struct ResidualLine {
    target: f64,
    sweep: usize,
    residual: f64,
}

pub fn optimize(cfg: &Config, out: &mut Outputs) -> Result<()> {
    let kernel = load_kernel(cfg, out)?;
    let mut policies = Vec::new();
    let mut rows = Vec::new();
    let mut log_lines = Vec::new();
    for target in cfg.targets() {
        let spec = cfg.grid_spec(target)?;
        let q_acc = spec.q_acc;
        let policy = Policy::optimize(spec, &kernel)?;
        let predicted = policy.predicted_rounds(&kernel)?;
        log::info!(
            "target {:.5}pi: {} sweeps, predicted E[T] = {predicted:.3}",
            target / PI,
            policy.residuals.len()
        );
        log_lines.extend(policy.residuals.iter().enumerate().map(|(i, &r)| ResidualLine {
            target,
            sweep: i + 1,
            residual: r,
        }));
        rows.push(PolicyRow {
            target,
            target_pi: target / PI,
            q_acc,
            sweeps: policy.residuals.len(),
            final_residual: policy.residuals.last().copied().unwrap_or(0.0),
            start_value: policy.start_value(),
            predicted_rounds: predicted,
            kernel_hash: policy.kernel_hash.clone(),
            policy_hash: policy.hash()?,
        });
        policies.push(policy);
    }
    out.write_jsonl("optimize.log.jsonl", &log_lines)?;
    out.write_csv("policy.csv", &rows)?;
    out.write_artifact(POLICY, &policies)
}

#[derive(Serialize)]
struct TrialLine<'a> {
    target: f64,
    #[serde(flatten)]
    trial: &'a TrialRecord,
}

#[derive(Serialize)]
struct SummaryRow {
    target: f64,
    target_pi: f64,
    mode: &'static str,
    n_trials: usize,
    n_divergent: usize,
    rounds_mean: f64,
    rounds_ci_low: f64,
    rounds_ci_high: f64,
    rounds_stderr: f64,
    predicted_rounds: f64,
    resets_mean: f64,
    resets_ci_low: f64,
    resets_ci_high: f64,
    dephasing_mean: f64,
    dephasing_ci_low: f64,
    dephasing_ci_high: f64,
    relative_dephasing_mean: f64,
    relative_dephasing_ci_low: f64,
    relative_dephasing_ci_high: f64,
}

impl SummaryRow {
    fn new(target: f64, mode: Mode, s: &SummaryStats, predicted_rounds: f64) -> SummaryRow {
        let e = |x: &Estimate| (x.mean, x.ci_low, x.ci_high);
        let (resets_mean, resets_ci_low, resets_ci_high) = e(&s.resets);
        let (dephasing_mean, dephasing_ci_low, dephasing_ci_high) = e(&s.dephasing);
        let (relative_dephasing_mean, relative_dephasing_ci_low, relative_dephasing_ci_high) =
            e(&s.relative_dephasing);
        SummaryRow {
            target,
            target_pi: target / PI,
            mode: match mode {
                Mode::Kernel => "kernel",
                Mode::Live => "live",
            },
            n_trials: s.n_trials,
            n_divergent: s.n_divergent,
            rounds_mean: s.rounds.mean,
            rounds_ci_low: s.rounds.ci_low,
            rounds_ci_high: s.rounds.ci_high,
            rounds_stderr: s.rounds.stderr,
            predicted_rounds,
            resets_mean,
            resets_ci_low,
            resets_ci_high,
            dephasing_mean,
            dephasing_ci_low,
            dephasing_ci_high,
            relative_dephasing_mean,
            relative_dephasing_ci_low,
            relative_dephasing_ci_high,
        }
    }
}

/// Runs every optimized policy. In kernel mode the rounds interval also
/// carries the kernel's own sampling error (two-level bootstrap).
pub fn simulate(cfg: &Config, out: &mut Outputs) -> Result<()> {
    let policies: Vec<Policy> = parse_artifact(POLICY, &out.input(POLICY, "optimize")?)?.body;
    let kernel = load_kernel(cfg, out)?;
    let code = SurfaceCode::build(kernel.d)?;
    let graph = MatchingGraph::build(&code);
    let cache = ChannelCache::new();
    let kernel_hash = kernel.hash()?;
    let mut lines = Vec::new();
    let mut rows = Vec::new();
    let mut all_trials = Vec::new();
    for (i, policy) in policies.iter().enumerate() {
        if policy.kernel_hash != kernel_hash {
            return Err(ConfigError(format!(
                "{POLICY} was optimized against a different {KERNEL}; rerun optimize"
            ))
            .into());
        }
        let target = policy.grid.spec().phi_target;
        let seed = derive_seed(cfg.seed, "simulate", i as u64);
        let source: Box<dyn OutcomeSource + '_> = match cfg.simulate.mode {
            Mode::Kernel => Box::new(KernelSource::new(policy, &kernel)?),
            Mode::Live => Box::new(LiveSource::new(
                &code,
                &graph,
                &cache,
                kernel.p,
                &policy.grid.spec().actions,
            )?),
        };
        let trials = run_campaign(
            policy,
            source.as_ref(),
            cfg.simulate.n_trials,
            seed,
            cfg.simulate.round_cap,
        )?;
        let summary = match cfg.simulate.mode {
            Mode::Kernel => {
                let shifts = kernel_round_shifts(policy, &kernel, cfg.resamples, seed)?;
                summarize_shifted(&trials, target, seed, &shifts)?
            }
            Mode::Live => summarize(&trials, target, cfg.resamples, seed)?,
        };
        let predicted = policy.predicted_rounds(&kernel)?;
        log::info!(
            "target {:.5}pi: E[T] = {:.3} [{:.3}, {:.3}], predicted {predicted:.3}",
            target / PI,
            summary.rounds.mean,
            summary.rounds.ci_low,
            summary.rounds.ci_high
        );
        rows.push(SummaryRow::new(target, cfg.simulate.mode, &summary, predicted));
        all_trials.push((target, trials));
    }
    for (target, trials) in &all_trials {
        lines.extend(trials.iter().map(|t| TrialLine {
            target: *target,
            trial: t,
        }));
    }
    out.write_jsonl("trials.jsonl", &lines)?;
    out.write_csv("summary.csv", &rows)
}

#[derive(Serialize)]
struct HalfRow {
    d: usize,
    p: f64,
    theta: f64,
    theta_pi: f64,
    trivial_probability: f64,
    iterations: usize,
    converged: bool,
    ratio_mean: f64,
    ratio_stderr: f64,
    ratio_ci_low: f64,
    ratio_ci_high: f64,
}

#[derive(Serialize)]
struct SuppressionRow {
    p: f64,
    distances: String,
    kappa: f64,
    kappa_stderr: f64,
    kappa_ci_low: f64,
    kappa_ci_high: f64,
    intercept: f64,
}

pub fn sweep(cfg: &Config, out: &mut Outputs) -> Result<()> {
    let sw = &cfg.sweep;
    let cache = ChannelCache::new();
    let thetas: Vec<f64> = sw.thetas_pi.iter().map(|t| t * PI).collect();
    let points = sweep_grid(
        &sw.distances,
        &sw.ps,
        &thetas,
        cfg.n_samples,
        cfg.resamples,
        cfg.seed,
        &cache,
    )?;
    out.write_csv("sweep.csv", &points)?;
    if !sw.half_success {
        return Ok(());
    }
    let mut distances = sw.distances.clone();
    distances.sort_unstable();
    distances.dedup();
    let mut half_rows = Vec::new();
    let mut fits = Vec::new();
    for &p in &sw.ps {
        let mut fit_points = Vec::new();
        for &d in &distances {
            let code = SurfaceCode::build(d)?;
            let graph = MatchingGraph::build(&code);
            let half = find_half_success_angle(
                &code,
                p,
                0.0,
                cfg.theta_max(),
                cfg.n_samples,
                cfg.seed,
                sw.half_tol,
                sw.half_max_iter,
            )
            .with_context(|| format!("half-success angle for d = {d}, p = {p}"))?;
            let pt = sweep_point(
                &code,
                &graph,
                &cache,
                NoiseParams::new(half.theta, p)?,
                cfg.n_samples,
                cfg.resamples,
                cfg.seed,
            )?;
            log::info!(
                "d = {d}, p = {p}: theta_1/2 = {:.4}pi, E[q/|phi|] = {:.4e}",
                half.theta / PI,
                pt.ratio_mean
            );
            fit_points.push((d, pt.ratio_mean, pt.ratio_stderr));
            half_rows.push(HalfRow {
                d,
                p,
                theta: half.theta,
                theta_pi: half.theta / PI,
                trivial_probability: half.trivial_probability,
                iterations: half.iterations,
                converged: half.converged,
                ratio_mean: pt.ratio_mean,
                ratio_stderr: pt.ratio_stderr,
                ratio_ci_low: pt.ratio_ci_low,
                ratio_ci_high: pt.ratio_ci_high,
            });
        }
        if distances.len() >= 2 {
            let fit = fit_suppression(&fit_points)?;
            let (lo, hi) = fit.kappa_interval();
            fits.push(SuppressionRow {
                p,
                distances: distances
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
                kappa: fit.kappa,
                kappa_stderr: fit.kappa_stderr,
                kappa_ci_low: lo,
                kappa_ci_high: hi,
                intercept: fit.intercept,
            });
        }
    }
    out.write_csv("half_success.csv", &half_rows)?;
    if !fits.is_empty() {
        out.write_csv("suppression.csv", &fits)?;
    }
    Ok(())
}
