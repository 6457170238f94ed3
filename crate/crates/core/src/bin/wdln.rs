//! Command-line front end: `simulate`, `oracle` and `report`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use wdln_sched::config::ExperimentConfig;
use wdln_sched::harness;
use wdln_sched::oracle::{self, OracleReport, SmallInstance};
use wdln_sched::scheduler::SchedulerKind;
use wdln_sched::{Error, Result};

#[derive(Parser)]
#[command(name = "wdln", version, about = "Scheduling simulator for asynchronous federated learning over a wireless network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded multi-instance experiment.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Run only this scheduler (bench|rr|wmax|alsa-pi|balsa|balsa-po).
        #[arg(long)]
        scheduler: Option<String>,
        #[arg(long)]
        rounds: Option<u64>,
        #[arg(long)]
        instances: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the small instance in the `[oracle]` section exactly.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-aggregate the records of a previous run.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct OracleOutput<'a> {
    instance: &'a SmallInstance,
    report: &'a OracleReport,
}

fn simulate(
    config: &Path,
    scheduler: Option<String>,
    rounds: Option<u64>,
    instances: Option<u64>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(config)?;
    if let Some(name) = scheduler {
        let kind: SchedulerKind = name.parse()?;
        cfg.scheduler.names = vec![kind.name().to_string()];
    }
    if let Some(t) = rounds {
        cfg.experiment.rounds = t;
    }
    if let Some(n) = instances {
        cfg.experiment.instances = n;
    }
    if let Some(s) = seed {
        cfg.experiment.base_seed = s;
    }
    let output = harness::run_experiment(&cfg)?;
    harness::emit_outputs(&output.results, &output.summary, out)?;
    for s in &output.summary.schedulers {
        let f = s.mean_effectivity.map_or(f64::NAN, |c| c.mean);
        let acc = s.final_accuracy.map(|c| format!(", final accuracy {:.4}", c.mean)).unwrap_or_default();
        println!("{:<9} mean F {f:.4}{acc}", s.scheduler);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn solve_oracle(config: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::from_file(config)?;
    let inst = cfg.small_instance()?;
    let (model, solution, report) = oracle::solve(&inst, cfg.oracle.tolerance, cfg.oracle.max_iter)?;
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.into(),
        source: e,
    })?;

    let path = out.join("oracle.json");
    let text = serde_json::to_string_pretty(&OracleOutput {
        instance: &inst,
        report: &report,
    })
    .expect("report serialises");
    fs::write(&path, text + "\n").map_err(|e| Error::Io { path: path.clone(), source: e })?;

    let greedy = model.greedy_policy();
    let path = out.join("policy.csv");
    let mut table = String::new();
    let u = inst.devices.len();
    let cols: Vec<String> = (0..u).flat_map(|i| [format!("bin{i}"), format!("n{i}")]).collect();
    table.push_str(&format!("state,{},optimal,greedy,v\n", cols.join(",")));
    for s in 0..model.num_states() {
        let dev: Vec<String> = model
            .device_states(s)
            .iter()
            .flat_map(|(b, n)| [b.to_string(), n.to_string()])
            .collect();
        let mask = |a: usize| {
            let m = model.action_mask(a);
            (0..u).filter(|i| m >> i & 1 == 1).map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
        };
        table.push_str(&format!(
            "{s},{},{},{},{}\n",
            dev.join(","),
            mask(solution.policy[s]),
            mask(greedy[s]),
            solution.v[s]
        ));
    }
    fs::write(&path, table).map_err(|e| Error::Io { path: path.clone(), source: e })?;

    println!("states {}  actions {}", report.num_states, report.num_actions);
    println!("J* {:.12}  (effectivity {:.6})", report.j_star, report.j_star_effectivity);
    println!("J(greedy) {:.12}  gap {:.3e}", report.j_greedy, report.greedy_gap);
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            scheduler,
            rounds,
            instances,
            seed,
            out,
        } => simulate(&config, scheduler, rounds, instances, seed, &out),
        Command::Oracle { config, out } => solve_oracle(&config, &out),
        Command::Report { input, out } => harness::report(&input, &out).map(|s| {
            println!("re-aggregated {} schedulers into {}", s.schedulers.len(), out.display());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
