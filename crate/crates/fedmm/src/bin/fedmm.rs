//! Command-line front end: run experiments, sweep a config axis, or dump
//! the synthetic datasets. Exit codes: 0 on success, 2 for an invalid
//! config (with a field-level message), 1 for any runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fedmm::config::ExperimentConfig;
use fedmm::data::save_jsonl;
use fedmm::error::{Error, Result};
use fedmm::federation::{build_partitions, run_experiment, ExperimentResult};
use fedmm::output::{summary_json, sweep_csv, write_run, SweepRow};

#[derive(Parser)]
#[command(
    name = "fedmm",
    version,
    about = "Federated multimodal learning simulator with retrieval-based augmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Directory for all output artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the config's seed list (comma-separated).
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment once per seed and summarize.
    Run {
        /// Path to a `key = value` config file.
        config: PathBuf,
    },
    /// Re-run the experiment across one config axis and tabulate results.
    Sweep {
        config: PathBuf,
        /// Which axis to sweep; values come from the config's sweep lists.
        #[arg(long)]
        axis: Axis,
    },
    /// Generate the synthetic corpus and save every split as JSONL.
    GenData { config: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Axis {
    Alpha,
    PublicSize,
    Partition,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Alpha => "alpha",
            Axis::PublicSize => "public_size",
            Axis::Partition => "partition",
        }
    }
}

fn load_config(path: &Path, seeds: &Option<Vec<u64>>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_file(path)?;
    if let Some(seeds) = seeds {
        if seeds.is_empty() {
            return Err(Error::config("--seeds must list at least one seed"));
        }
        config.seeds = seeds.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run_seeds(config: &ExperimentConfig) -> Result<Vec<(u64, ExperimentResult)>> {
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        runs.push((seed, run_experiment(config, seed)?));
    }
    Ok(runs)
}

fn cmd_run(out: &Path, config: &ExperimentConfig) -> Result<()> {
    println!("mode {} | config {}", config.mode, &config.hash()[..12]);
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let result = run_experiment(config, seed)?;
        let secs: f64 = result.history.iter().map(|r| r.wall_clock_secs).sum();
        println!(
            "seed {seed}: best round {} | val AUC {:.4} | test AUC {:.4} | {:.1}s",
            result.best_round, result.best_val_auc, result.best_test_auc, secs
        );
        write_run(out, config, seed, &result)?;
        runs.push((seed, result));
    }
    let n = runs.len() as f64;
    let mean_val = runs.iter().map(|(_, r)| r.best_val_auc).sum::<f64>() / n;
    let mean_test = runs.iter().map(|(_, r)| r.best_test_auc).sum::<f64>() / n;
    println!(
        "mean over {} seed(s): val AUC {mean_val:.4} | test AUC {mean_test:.4}",
        runs.len()
    );

    std::fs::create_dir_all(out)?;
    let summary_path = out.join(format!("summary_{}.json", &config.hash()[..12]));
    std::fs::write(&summary_path, summary_json(config, &runs)?)?;
    println!("artifacts in {}", out.display());
    Ok(())
}

/// The config variations one sweep axis expands to: a label for the CSV
/// plus the modified config.
fn sweep_points(config: &ExperimentConfig, axis: Axis) -> Result<Vec<(String, ExperimentConfig)>> {
    let mut points = Vec::new();
    match axis {
        Axis::Alpha => {
            for &alpha in &config.alpha_sweep {
                let mut c = config.clone();
                c.alpha = alpha;
                points.push((alpha.to_string(), c));
            }
        }
        Axis::PublicSize => {
            for &size in &config.public_size_sweep {
                let mut c = config.clone();
                c.public_size = size;
                c.k = c.k.min(size);
                points.push((size.to_string(), c));
            }
        }
        Axis::Partition => {
            for &(i, t, m) in &config.partition_sweep {
                let mut c = config.clone();
                c.img_only_clients = i;
                c.txt_only_clients = t;
                c.multimodal_clients = m;
                points.push((format!("{i}:{t}:{m}"), c));
            }
        }
    }
    if points.is_empty() {
        return Err(Error::config(format!(
            "config lists no values for the {} sweep",
            axis.name()
        )));
    }
    for (_, c) in &points {
        c.validate()?;
    }
    Ok(points)
}

fn cmd_sweep(out: &Path, config: &ExperimentConfig, axis: Axis) -> Result<()> {
    let points = sweep_points(config, axis)?;
    println!(
        "sweeping {} over {} value(s) x {} seed(s)",
        axis.name(),
        points.len(),
        config.seeds.len()
    );
    let mut rows = Vec::new();
    for (label, point) in &points {
        let runs = run_seeds(point)?;
        let per_seed: Vec<SweepRow> = runs
            .iter()
            .map(|(seed, r)| SweepRow::from_result(label.clone(), *seed, r))
            .collect();
        let mean = SweepRow::mean_of(label.clone(), &per_seed);
        println!(
            "{} = {label}: mean val AUC {:.4} | mean test AUC {:.4}",
            axis.name(),
            mean.best_val_auc,
            mean.best_test_auc
        );
        rows.extend(per_seed);
        rows.push(mean);
    }
    std::fs::create_dir_all(out)?;
    let path = out.join(format!(
        "sweep_{}_{}.csv",
        axis.name(),
        &config.hash()[..12]
    ));
    std::fs::write(&path, sweep_csv(config, axis.name(), &rows))?;
    println!("sweep table: {}", path.display());
    Ok(())
}

fn cmd_gen_data(out: &Path, config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(out)?;
    for &seed in &config.seeds {
        let parts = build_partitions(config, seed)?;
        let dir = out.join(format!("data_seed{seed}"));
        std::fs::create_dir_all(&dir)?;
        for (i, client) in parts.clients.iter().enumerate() {
            save_jsonl(client, &dir.join(format!("client_{i}.jsonl")))?;
        }
        save_jsonl(&parts.public, &dir.join("public.jsonl"))?;
        save_jsonl(&parts.val, &dir.join("val.jsonl"))?;
        save_jsonl(&parts.test, &dir.join("test.jsonl"))?;
        println!(
            "seed {seed}: {} clients + public({}) + val({}) + test({}) -> {}",
            parts.clients.len(),
            parts.public.len(),
            parts.val.len(),
            parts.test.len(),
            dir.display()
        );
    }
    Ok(())
}

fn real_main(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config } => {
            let config = load_config(config, &cli.seeds)?;
            cmd_run(&cli.out, &config)
        }
        Command::Sweep { config, axis } => {
            let config = load_config(config, &cli.seeds)?;
            cmd_sweep(&cli.out, &config, *axis)
        }
        Command::GenData { config } => {
            let config = load_config(config, &cli.seeds)?;
            cmd_gen_data(&cli.out, &config)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ Error::Config(_)) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
