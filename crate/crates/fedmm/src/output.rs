//! Run artifacts: per-round history CSV, multi-seed summary JSON, sweep
//! CSV, pairing-audit CSV, and binary model checkpoints. Every writer is
//! deterministic — identical inputs produce byte-identical files — so
//! artifact diffs double as regression checks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::federation::{ExperimentResult, PairingRecord};
use crate::metrics::RoundReport;
use crate::nn::model;

/// Cell for values that may be undefined (degenerate AUC classes, pairing
/// stats outside augmenting modes).
fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Per-round history as CSV text. Comment lines carry the config hash and
/// seed; the macro AUC column skips classes without both label values
/// (their per-class cells read `NA`). Wall-clock time is reported live but
/// deliberately kept out of this file so reruns are byte-identical.
pub fn history_csv(config: &ExperimentConfig, seed: u64, history: &[RoundReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config {}", config.hash());
    let _ = writeln!(out, "# seed {seed}");
    let _ = writeln!(
        out,
        "# macro AUC averages the defined per-class entries; NA marks a class \
         whose split lacks positives or negatives"
    );
    let classes = history.first().map_or(0, |r| r.per_class_auc.len());
    let mut header = String::from("round,mode,val_auc,test_auc");
    for c in 0..classes {
        let _ = write!(header, ",per_class_auc_{c}");
    }
    header.push_str(",img_weight_share,txt_weight_share");
    let _ = writeln!(out, "{header}");
    for r in history {
        let mut row = format!("{},{},{},{}", r.round, r.mode, r.val_auc, r.test_auc);
        for cell in &r.per_class_auc {
            let _ = write!(row, ",{}", opt_cell(*cell));
        }
        let _ = write!(row, ",{},{}", r.img_weight_share, r.txt_weight_share);
        let _ = writeln!(out, "{row}");
    }
    out
}

/// Pairing audit trail: one row per augmentation event.
pub fn pairing_csv(log: &[PairingRecord]) -> String {
    let mut out = String::from("round,client_id,sample_id,retrieved_public_id,delta,jaccard\n");
    for rec in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            rec.pair.round,
            rec.client_id,
            rec.pair.query_id,
            rec.pair.public_id,
            rec.pair.delta,
            rec.pair.jaccard
        );
    }
    out
}

#[derive(Debug, Serialize)]
struct SeedSummary {
    seed: u64,
    best_round: u64,
    best_val_auc: f64,
    best_test_auc: f64,
    best_per_class_auc: Vec<Option<f64>>,
    final_img_weight_share: f64,
    final_txt_weight_share: f64,
    mean_unique_pairings: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    config_hash: String,
    mode: String,
    seeds: Vec<SeedSummary>,
    mean_best_val_auc: f64,
    mean_best_test_auc: f64,
    mean_final_img_weight_share: f64,
    mean_final_txt_weight_share: f64,
    normal_form: &'a str,
}

/// Cross-seed summary as pretty JSON: one entry per seed plus means of the
/// headline numbers, with the full canonical config embedded for audit.
pub fn summary_json(config: &ExperimentConfig, runs: &[(u64, ExperimentResult)]) -> Result<String> {
    let seeds: Vec<SeedSummary> = runs
        .iter()
        .map(|(seed, r)| SeedSummary {
            seed: *seed,
            best_round: r.best_round,
            best_val_auc: r.best_val_auc,
            best_test_auc: r.best_test_auc,
            best_per_class_auc: r.best_per_class.clone(),
            final_img_weight_share: r.final_img_share,
            final_txt_weight_share: r.final_txt_share,
            mean_unique_pairings: r.mean_unique_pairings,
        })
        .collect();
    let n = seeds.len().max(1) as f64;
    let mean = |f: fn(&SeedSummary) -> f64| seeds.iter().map(f).sum::<f64>() / n;
    let mean_best_val_auc = mean(|s| s.best_val_auc);
    let mean_best_test_auc = mean(|s| s.best_test_auc);
    let mean_final_img_weight_share = mean(|s| s.final_img_weight_share);
    let mean_final_txt_weight_share = mean(|s| s.final_txt_weight_share);
    let normal_form = config.to_normal_form();
    let summary = Summary {
        config_hash: config.hash(),
        mode: config.mode.to_string(),
        seeds,
        mean_best_val_auc,
        mean_best_test_auc,
        mean_final_img_weight_share,
        mean_final_txt_weight_share,
        normal_form: &normal_form,
    };
    Ok(serde_json::to_string_pretty(&summary)?)
}

/// One sweep measurement: a run at `value`, or the cross-seed mean when
/// `seed` is `None`.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub seed: Option<u64>,
    pub best_val_auc: f64,
    pub best_test_auc: f64,
    pub final_img_share: f64,
    pub final_txt_share: f64,
}

impl SweepRow {
    pub fn from_result(value: String, seed: u64, r: &ExperimentResult) -> SweepRow {
        SweepRow {
            value,
            seed: Some(seed),
            best_val_auc: r.best_val_auc,
            best_test_auc: r.best_test_auc,
            final_img_share: r.final_img_share,
            final_txt_share: r.final_txt_share,
        }
    }

    /// Mean row over per-seed rows that share one sweep value.
    pub fn mean_of(value: String, rows: &[SweepRow]) -> SweepRow {
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&SweepRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        SweepRow {
            value,
            seed: None,
            best_val_auc: mean(|r| r.best_val_auc),
            best_test_auc: mean(|r| r.best_test_auc),
            final_img_share: mean(|r| r.final_img_share),
            final_txt_share: mean(|r| r.final_txt_share),
        }
    }
}

/// Sweep table: per-(value, seed) rows followed by a `mean` row per value.
pub fn sweep_csv(config: &ExperimentConfig, axis: &str, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config {}", config.hash());
    let _ = writeln!(out, "# axis {axis}");
    let _ = writeln!(
        out,
        "{axis},seed,best_val_auc,best_test_auc,img_weight_share,txt_weight_share"
    );
    for r in rows {
        let seed = r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.value, seed, r.best_val_auc, r.best_test_auc, r.final_img_share, r.final_txt_share
        );
    }
    out
}

/// Output paths for one run, namespaced by config hash and seed so sweeps
/// and reruns never collide.
#[derive(Debug, Clone)]
pub struct RunPaths {
    dir: PathBuf,
    tag: String,
}

impl RunPaths {
    pub fn new(dir: &Path, config: &ExperimentConfig, seed: u64) -> RunPaths {
        RunPaths {
            dir: dir.to_path_buf(),
            tag: format!("{}_seed{}", &config.hash()[..12], seed),
        }
    }

    pub fn history(&self) -> PathBuf {
        self.dir.join(format!("history_{}.csv", self.tag))
    }

    pub fn pairings(&self) -> PathBuf {
        self.dir.join(format!("pairings_{}.csv", self.tag))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join(format!("model_{}.bin", self.tag))
    }
}

/// Writes every artifact of one seeded run under `dir` (creating it),
/// honoring the config's checkpoint and pairing-dump switches.
pub fn write_run(
    dir: &Path,
    config: &ExperimentConfig,
    seed: u64,
    result: &ExperimentResult,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let paths = RunPaths::new(dir, config, seed);
    fs::write(paths.history(), history_csv(config, seed, &result.history))?;
    if config.dump_pairings {
        fs::write(paths.pairings(), pairing_csv(&result.pairing_log))?;
    }
    if config.save_checkpoints {
        model::write_flat(&paths.checkpoint(), &result.best_model.flatten())?;
    }
    Ok(())
}
