//! Seeded multi-instance experiments, their statistics and file outputs.
//!
//! Every `(scheduler, instance)` pair runs in its own [`World`] with streams
//! derived from `(base_seed, instance)`, so schedulers face identical channel,
//! arrival and data draws. Pairs run in parallel and are reduced in a fixed
//! order, which keeps the outputs byte-identical across runs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bayes::{Balsa, BalsaPo};
use crate::config::ExperimentConfig;
use crate::engine::{LearningSetup, World};
use crate::error::{Error, Result};
use crate::oracle::{MdpModel, OracleEnv, SmallInstance};
use crate::rng::{stream, Purpose, NO_DEVICE};
use crate::scheduler::{AlsaPi, Bench, RoundRobin, Scheduler, SchedulerKind, WMax};

pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CURVES_FILE: &str = "curves.csv";

pub const RECORD_HEADER: [&str; 10] = [
    "round",
    "scheduler",
    "instance",
    "F",
    "cum_reward",
    "regret",
    "loss",
    "accuracy",
    "n_total",
    "stragglers",
];

/// Metrics carried by the long-format curves file, in output order.
pub const METRICS: [&str; 7] = ["F", "cum_reward", "regret", "loss", "accuracy", "n_total", "stragglers"];

/// Loss jumps above this multiple of the trailing median count as spikes.
pub const SPIKE_RATIO: f64 = 1.5;
/// Number of earlier loss snapshots in the trailing median.
pub const SPIKE_WINDOW: usize = 10;

/// Builds the scheduler for one instance of `world`.
pub fn make_scheduler(
    kind: SchedulerKind,
    config: &ExperimentConfig,
    world: &World,
    instance: u64,
) -> Result<Box<dyn Scheduler>> {
    let u = world.num_devices();
    let rng = || stream(config.experiment.base_seed, instance, NO_DEVICE, Purpose::Scheduler);
    Ok(match kind {
        SchedulerKind::Bench => Box::new(Bench),
        SchedulerKind::RoundRobin => Box::new(RoundRobin::default()),
        SchedulerKind::WMax => Box::new(WMax),
        SchedulerKind::AlsaPi => Box::new(AlsaPi::new(world.true_rates())),
        SchedulerKind::Balsa => Box::new(Balsa::new(
            u,
            config.scheduler.bayes_options(u, config.fl.n_max)?,
            rng(),
        )),
        SchedulerKind::BalsaPo => Box::new(BalsaPo::new(
            u,
            config.scheduler.bayes_options(u, config.fl.n_max)?,
            rng(),
        )),
    })
}

/// One row of the per-instance record stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub round: u64,
    pub effectivity: f64,
    pub cum_reward: f64,
    pub regret: f64,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub n_total: u64,
    pub stragglers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub scheduler: SchedulerKind,
    pub instance: u64,
    pub rows: Vec<RecordRow>,
    /// Final posterior mean rate per device (Bayesian schedulers only).
    pub posterior_means: Option<Vec<f64>>,
    pub true_rates: Vec<f64>,
}

/// Runs one instance for `rounds` rounds. Regret columns are filled later.
pub fn run_instance(
    config: &ExperimentConfig,
    kind: SchedulerKind,
    instance: u64,
    rounds: u64,
    learning: Option<LearningSetup>,
) -> Result<InstanceResult> {
    let world_cfg = config.world_config(kind, learning)?;
    let mut world = World::new(world_cfg, config.experiment.base_seed, instance)?;
    let mut posterior_means = None;
    let rows = match kind {
        SchedulerKind::Balsa => {
            let mut s = Balsa::new(
                world.num_devices(),
                config.scheduler.bayes_options(world.num_devices(), config.fl.n_max)?,
                stream(config.experiment.base_seed, instance, NO_DEVICE, Purpose::Scheduler),
            );
            let rows = drive(&mut world, &mut s, rounds)?;
            posterior_means = Some(s.posterior().means());
            rows
        }
        SchedulerKind::BalsaPo => {
            let mut s = BalsaPo::new(
                world.num_devices(),
                config.scheduler.bayes_options(world.num_devices(), config.fl.n_max)?,
                stream(config.experiment.base_seed, instance, NO_DEVICE, Purpose::Scheduler),
            );
            let rows = drive(&mut world, &mut s, rounds)?;
            posterior_means = Some(s.posterior().means());
            rows
        }
        _ => {
            let mut s = make_scheduler(kind, config, &world, instance)?;
            drive(&mut world, s.as_mut(), rounds)?
        }
    };
    Ok(InstanceResult {
        scheduler: kind,
        instance,
        rows,
        posterior_means,
        true_rates: world.true_rates(),
    })
}

fn drive(world: &mut World, scheduler: &mut dyn Scheduler, rounds: u64) -> Result<Vec<RecordRow>> {
    let mut rows = Vec::with_capacity(rounds as usize);
    let mut cum = 0.0;
    for _ in 0..rounds {
        let rec = world.run_round(scheduler)?;
        cum += rec.effectivity;
        rows.push(RecordRow {
            round: rec.round,
            effectivity: rec.effectivity,
            cum_reward: cum,
            regret: 0.0,
            loss: rec.eval.map(|e| e.loss),
            accuracy: rec.eval.map(|e| e.accuracy),
            n_total: rec.n_total,
            stragglers: rec.stragglers,
        });
    }
    Ok(rows)
}

/// `R(t) = t * j_star - sum_{tau <= t} r_tau`.
pub fn compute_regret(rewards: &[f64], j_star: f64) -> Vec<f64> {
    let mut cum = 0.0;
    rewards
        .iter()
        .enumerate()
        .map(|(i, r)| {
            cum += r;
            (i + 1) as f64 * j_star - cum
        })
        .collect()
}

/// First 1-based index `t` with `series[t-1..t+2]` all strictly above `target`.
pub fn compute_required_rounds(series: &[f64], target: f64) -> Option<usize> {
    series
        .windows(3)
        .position(|w| w.iter().all(|&a| a > target))
        .map(|i| i + 1)
        .or_else(|| {
            // a series shorter than three entries can still satisfy a zero target trivially
            (series.len() < 3 && !series.is_empty() && target <= 0.0 && series.iter().all(|&a| a > target))
                .then_some(1)
        })
}

/// Loss snapshots exceeding `SPIKE_RATIO` times the median of up to
/// `SPIKE_WINDOW` preceding snapshots.
pub fn count_loss_spikes(losses: &[f64]) -> usize {
    (1..losses.len())
        .filter(|&i| {
            let lo = i.saturating_sub(SPIKE_WINDOW);
            let mut window: Vec<f64> = losses[lo..i].to_vec();
            window.sort_by(|a, b| a.total_cmp(b));
            let k = window.len();
            let median = if k % 2 == 1 {
                window[k / 2]
            } else {
                0.5 * (window[k / 2 - 1] + window[k / 2])
            };
            losses[i] > SPIKE_RATIO * median
        })
        .count()
}

/// Sample mean with a two-sided 95% Student-t interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

pub fn mean_ci(values: &[f64]) -> Option<MeanCi> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some(MeanCi {
            mean,
            ci_lo: mean,
            ci_hi: mean,
            n,
        });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    let half = t * (var / n as f64).sqrt();
    Some(MeanCi {
        mean,
        ci_lo: mean - half,
        ci_hi: mean + half,
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub scheduler: String,
    pub round: u64,
    pub metric: String,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub target: f64,
    pub satisfaction_rate: f64,
    /// Mean over the instances that reached the target.
    pub mean_required_rounds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerSummary {
    pub scheduler: String,
    pub instances: usize,
    pub rounds: u64,
    pub mean_effectivity: Option<MeanCi>,
    /// Mean F over the last quarter of the rounds.
    pub final_quarter_effectivity: Option<MeanCi>,
    pub final_loss: Option<MeanCi>,
    pub final_accuracy: Option<MeanCi>,
    pub loss_spikes: Option<MeanCi>,
    pub targets: Vec<TargetStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReference {
    pub scheduler: String,
    /// Mean effectivity score per round used as `J*`.
    pub j_star: f64,
    /// Always true here: the reference is an empirical mean, not the exact optimum.
    pub proxy: bool,
}

/// Aggregate over all instances of every scheduler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub base_seed: u64,
    pub rounds: u64,
    pub instances: u64,
    pub target_accuracies: Vec<f64>,
    pub regret_reference: Option<RegretReference>,
    pub schedulers: Vec<SchedulerSummary>,
    pub curves: Vec<CurvePoint>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub results: Vec<InstanceResult>,
    pub summary: RunSummary,
}

/// Runs every configured scheduler on every instance.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let kinds = config.scheduler.kinds()?;
    let rounds = config.experiment.rounds;
    let learning = config.learning_setup()?;
    let reference: SchedulerKind = config.experiment.regret_reference.parse()?;

    let mut jobs: Vec<(SchedulerKind, u64)> = Vec::new();
    let mut run_kinds = kinds.clone();
    if !run_kinds.contains(&reference) {
        run_kinds.push(reference);
    }
    for &k in &run_kinds {
        for i in 0..config.experiment.instances {
            jobs.push((k, i));
        }
    }
    let mut results: Vec<InstanceResult> = jobs
        .par_iter()
        .map(|&(k, i)| {
            // the reference only needs effectivity, so it skips training when not reported
            let learn = if kinds.contains(&k) { learning.clone() } else { None };
            run_instance(config, k, i, rounds, learn)
        })
        .collect::<Result<Vec<_>>>()?;

    let reference_rows: Vec<f64> = results
        .iter()
        .filter(|r| r.scheduler == reference)
        .flat_map(|r| r.rows.iter().map(|row| row.effectivity))
        .collect();
    let regret_reference = (!reference_rows.is_empty()).then(|| RegretReference {
        scheduler: reference.name().to_string(),
        j_star: reference_rows.iter().sum::<f64>() / reference_rows.len() as f64,
        proxy: true,
    });
    results.retain(|r| kinds.contains(&r.scheduler));
    if let Some(reference) = &regret_reference {
        for r in &mut results {
            let f: Vec<f64> = r.rows.iter().map(|row| row.effectivity).collect();
            for (row, g) in r.rows.iter_mut().zip(compute_regret(&f, reference.j_star)) {
                row.regret = g;
            }
        }
    }
    let summary = summarize(
        &results,
        &kinds,
        config.experiment.base_seed,
        rounds,
        config.experiment.instances,
        &config.experiment.target_accuracies,
        regret_reference,
    );
    Ok(ExperimentOutput { results, summary })
}

/// Statistics over `results`, grouped by scheduler in `kinds` order.
pub fn summarize(
    results: &[InstanceResult],
    kinds: &[SchedulerKind],
    base_seed: u64,
    rounds: u64,
    instances: u64,
    targets: &[f64],
    regret_reference: Option<RegretReference>,
) -> RunSummary {
    let mut schedulers = Vec::new();
    let mut curves = Vec::new();
    for &kind in kinds {
        let group: Vec<&InstanceResult> = results.iter().filter(|r| r.scheduler == kind).collect();
        let name = kind.name().to_string();
        let rounds_run = group.iter().map(|r| r.rows.len()).max().unwrap_or(0);

        let mean_f: Vec<f64> = group
            .iter()
            .filter(|r| !r.rows.is_empty())
            .map(|r| r.rows.iter().map(|x| x.effectivity).sum::<f64>() / r.rows.len() as f64)
            .collect();
        let tail_f: Vec<f64> = group
            .iter()
            .filter(|r| !r.rows.is_empty())
            .map(|r| {
                let start = r.rows.len() - r.rows.len().div_ceil(4);
                let tail = &r.rows[start..];
                tail.iter().map(|x| x.effectivity).sum::<f64>() / tail.len() as f64
            })
            .collect();
        let snapshots: Vec<Vec<&RecordRow>> = group
            .iter()
            .map(|r| r.rows.iter().filter(|x| x.accuracy.is_some()).collect())
            .collect();
        let final_loss: Vec<f64> = snapshots.iter().filter_map(|s| s.last().and_then(|x| x.loss)).collect();
        let final_acc: Vec<f64> = snapshots.iter().filter_map(|s| s.last().and_then(|x| x.accuracy)).collect();
        let spikes: Vec<f64> = snapshots
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| {
                let losses: Vec<f64> = s.iter().filter_map(|x| x.loss).collect();
                count_loss_spikes(&losses) as f64
            })
            .collect();
        let target_stats = targets
            .iter()
            .map(|&target| {
                let required: Vec<Option<u64>> = snapshots
                    .iter()
                    .map(|s| {
                        let acc: Vec<f64> = s.iter().filter_map(|x| x.accuracy).collect();
                        compute_required_rounds(&acc, target).map(|i| s[i - 1].round)
                    })
                    .collect();
                let hits: Vec<f64> = required.iter().flatten().map(|&r| r as f64).collect();
                TargetStats {
                    target,
                    satisfaction_rate: if required.is_empty() || snapshots.iter().all(|s| s.is_empty()) {
                        0.0
                    } else {
                        hits.len() as f64 / required.len() as f64
                    },
                    mean_required_rounds: (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64),
                }
            })
            .collect();
        schedulers.push(SchedulerSummary {
            scheduler: name.clone(),
            instances: group.len(),
            rounds: rounds_run as u64,
            mean_effectivity: mean_ci(&mean_f),
            final_quarter_effectivity: mean_ci(&tail_f),
            final_loss: mean_ci(&final_loss),
            final_accuracy: mean_ci(&final_acc),
            loss_spikes: mean_ci(&spikes),
            targets: target_stats,
        });

        for t in 0..rounds_run {
            let at: Vec<&RecordRow> = group.iter().filter_map(|r| r.rows.get(t)).collect();
            let round = at[0].round;
            for metric in METRICS {
                let values: Vec<f64> = at.iter().filter_map(|row| metric_value(row, metric)).collect();
                if let Some(ci) = mean_ci(&values) {
                    curves.push(CurvePoint {
                        scheduler: name.clone(),
                        round,
                        metric: metric.to_string(),
                        mean: ci.mean,
                        ci_lo: ci.ci_lo,
                        ci_hi: ci.ci_hi,
                    });
                }
            }
        }
    }
    RunSummary {
        base_seed,
        rounds,
        instances,
        target_accuracies: targets.to_vec(),
        regret_reference,
        schedulers,
        curves,
    }
}

fn metric_value(row: &RecordRow, metric: &str) -> Option<f64> {
    match metric {
        "F" => Some(row.effectivity),
        "cum_reward" => Some(row.cum_reward),
        "regret" => Some(row.regret),
        "loss" => row.loss,
        "accuracy" => row.accuracy,
        "n_total" => Some(row.n_total as f64),
        "stragglers" => Some(row.stragglers as f64),
        _ => None,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.into(),
            message: format!("{other:?}"),
        },
    }
}

/// Writes the record stream, the summary and the long-format curves into `out_dir`.
pub fn emit_outputs(results: &[InstanceResult], summary: &RunSummary, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let path = out_dir.join(RECORDS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record(RECORD_HEADER).map_err(|e| csv_error(&path, e))?;
    for r in results {
        for row in &r.rows {
            w.write_record([
                row.round.to_string(),
                r.scheduler.name().to_string(),
                r.instance.to_string(),
                row.effectivity.to_string(),
                row.cum_reward.to_string(),
                row.regret.to_string(),
                opt(row.loss),
                opt(row.accuracy),
                row.n_total.to_string(),
                row.stragglers.to_string(),
            ])
            .map_err(|e| csv_error(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out_dir.join(CURVES_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record(["scheduler", "round", "metric", "mean", "ci_lo", "ci_hi"])
        .map_err(|e| csv_error(&path, e))?;
    for c in &summary.curves {
        w.write_record([
            c.scheduler.clone(),
            c.round.to_string(),
            c.metric.clone(),
            c.mean.to_string(),
            c.ci_lo.to_string(),
            c.ci_hi.to_string(),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out_dir.join(SUMMARY_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, summary).map_err(|e| Error::Parse {
        path: path.clone(),
        message: e.to_string(),
    })?;
    writeln!(f).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Reads a record stream written by [`emit_outputs`].
pub fn read_records(path: &Path) -> Result<Vec<InstanceResult>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(RECORD_HEADER) {
        return Err(Error::Parse {
            path: path.into(),
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut groups: BTreeMap<(SchedulerKind, u64), Vec<RecordRow>> = BTreeMap::new();
    let mut order: Vec<(SchedulerKind, u64)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |what: &str| Error::Parse {
            path: path.into(),
            message: format!("row {}: bad {what}", line + 2),
        };
        let num = |i: usize, what: &str| -> Result<f64> { rec[i].parse().map_err(|_| bad(what)) };
        let maybe = |i: usize, what: &str| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                rec[i].parse().map(Some).map_err(|_| bad(what))
            }
        };
        let kind: SchedulerKind = rec[1].parse().map_err(|_| bad("scheduler"))?;
        let instance: u64 = rec[2].parse().map_err(|_| bad("instance"))?;
        let row = RecordRow {
            round: rec[0].parse().map_err(|_| bad("round"))?,
            effectivity: num(3, "F")?,
            cum_reward: num(4, "cum_reward")?,
            regret: num(5, "regret")?,
            loss: maybe(6, "loss")?,
            accuracy: maybe(7, "accuracy")?,
            n_total: rec[8].parse().map_err(|_| bad("n_total"))?,
            stragglers: rec[9].parse().map_err(|_| bad("stragglers"))?,
        };
        let key = (kind, instance);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(row);
    }
    Ok(order
        .into_iter()
        .map(|key| InstanceResult {
            scheduler: key.0,
            instance: key.1,
            rows: groups.remove(&key).unwrap_or_default(),
            posterior_means: None,
            true_rates: Vec::new(),
        })
        .collect())
}

/// Re-aggregates `in_dir/records.csv` into a fresh summary and curves file.
/// Run metadata is taken from `in_dir/summary.json` when present.
pub fn report(in_dir: &Path, out_dir: &Path) -> Result<RunSummary> {
    let results = read_records(&in_dir.join(RECORDS_FILE))?;
    let previous: Option<RunSummary> = {
        let path = in_dir.join(SUMMARY_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => Some(serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.clone(),
                message: e.to_string(),
            })?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(Error::io(path, e)),
        }
    };
    let mut kinds: Vec<SchedulerKind> = Vec::new();
    if let Some(p) = &previous {
        for s in &p.schedulers {
            kinds.push(s.scheduler.parse()?);
        }
    }
    for r in &results {
        if !kinds.contains(&r.scheduler) {
            kinds.push(r.scheduler);
        }
    }
    let rounds = results.iter().map(|r| r.rows.len() as u64).max().unwrap_or(0);
    let instances = results.iter().map(|r| r.instance + 1).max().unwrap_or(0);
    let summary = summarize(
        &results,
        &kinds,
        previous.as_ref().map_or(0, |p| p.base_seed),
        previous.as_ref().map_or(rounds, |p| p.rounds),
        previous.as_ref().map_or(instances, |p| p.instances),
        previous.as_ref().map_or(&[][..], |p| &p.target_accuracies),
        previous.as_ref().and_then(|p| p.regret_reference.clone()),
    );
    emit_outputs(&results, &summary, out_dir)?;
    Ok(summary)
}

/// Regret of a scheduler on the exact small-instance model: the mean over
/// seeds of `R(T) / T` at each checkpoint `T`, with per-round reward the
/// model's expected normalised reward of the state-action pair taken.
pub fn oracle_regret<F>(
    model: &MdpModel,
    j_star: f64,
    make: F,
    base_seed: u64,
    seeds: u64,
    checkpoints: &[u64],
) -> Result<Vec<f64>>
where
    F: Fn(u64) -> Result<Box<dyn Scheduler>> + Sync,
{
    let horizon = checkpoints.iter().copied().max().unwrap_or(0);
    let per_seed: Vec<Vec<f64>> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let mut scheduler = make(seed)?;
            let mut rng = stream(base_seed, seed, NO_DEVICE, Purpose::Channel);
            let mut env = OracleEnv::new(model, &mut rng);
            let mut cum = 0.0;
            let mut out = Vec::with_capacity(checkpoints.len());
            for t in 1..=horizon {
                cum += env.step(scheduler.as_mut(), &mut rng)?.expected_reward;
                if checkpoints.contains(&t) {
                    out.push((t as f64 * j_star - cum) / t as f64);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok((0..checkpoints.len())
        .map(|i| per_seed.iter().map(|v| v[i]).sum::<f64>() / seeds as f64)
        .collect())
}

/// BALSA set up for a small instance: its gain bins and backlog truncation
/// match the model exactly and it counts joint state-action visits.
pub fn oracle_balsa(instance: &SmallInstance, base_seed: u64, seed: u64) -> Result<Balsa> {
    let options = crate::bayes::BayesOptions {
        prior: crate::bayes::Prior::default(),
        counting: crate::bayes::CountingMode::Joint,
        discretizer: instance.discretizer()?,
    };
    Ok(Balsa::new(
        instance.devices.len(),
        options,
        stream(base_seed, seed, NO_DEVICE, Purpose::Scheduler),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn required_rounds_examples() {
        assert_eq!(compute_required_rounds(&[0.8, 0.9, 0.9, 0.9], 0.85), Some(2));
        assert_eq!(compute_required_rounds(&[0.5; 10], 0.85), None);
        assert_eq!(compute_required_rounds(&[0.1, 0.2, 0.3], 0.0), Some(1));
        assert_eq!(compute_required_rounds(&[0.9, 0.9, 0.8, 0.9, 0.9], 0.85), None);
    }

    #[test]
    fn regret_examples() {
        let j = 0.7;
        assert!(compute_regret(&[j; 50], j).iter().all(|r| r.abs() < 1e-12));
        for (t, r) in compute_regret(&[0.0; 5], j).iter().enumerate() {
            assert_relative_eq!(*r, (t + 1) as f64 * j);
        }
    }

    #[test]
    fn spikes() {
        assert_eq!(count_loss_spikes(&[1.0, 0.9, 0.8, 2.0, 0.7]), 1);
        assert_eq!(count_loss_spikes(&[1.0, 0.9, 0.8, 0.7]), 0);
        assert_eq!(count_loss_spikes(&[]), 0);
    }

    #[test]
    fn confidence_interval() {
        let ci = mean_ci(&[1.0, 2.0, 3.0]).unwrap();
        assert_relative_eq!(ci.mean, 2.0);
        // t_{0.975, 2} = 4.302653
        assert_relative_eq!(ci.ci_hi - ci.mean, 4.302_652_729_9 / 3f64.sqrt(), epsilon = 1e-8);
        let one = mean_ci(&[5.0]).unwrap();
        assert_eq!((one.ci_lo, one.ci_hi), (5.0, 5.0));
        assert!(mean_ci(&[]).is_none());
    }

    fn quick_config(rounds: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.rounds = rounds;
        cfg.experiment.instances = 2;
        cfg.experiment.learning = false;
        cfg
    }

    #[test]
    fn bench_delivers_all_arrivals() {
        let mut cfg = quick_config(30);
        cfg.scheduler.names = vec!["bench".into()];
        cfg.experiment.regret_reference = "bench".into();
        let out = run_experiment(&cfg).unwrap();
        for r in &out.results {
            for row in &r.rows {
                assert_eq!(row.stragglers, 0);
                assert_eq!(row.n_total, 0);
            }
        }
    }

    #[test]
    fn paired_streams_give_identical_arrivals() {
        let cfg = quick_config(20);
        let a = run_instance(&cfg, SchedulerKind::Bench, 0, 20, None).unwrap();
        let b = run_instance(&cfg, SchedulerKind::Bench, 0, 20, None).unwrap();
        assert_eq!(a, b);
    }
}
