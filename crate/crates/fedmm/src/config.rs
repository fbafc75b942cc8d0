//! Experiment configuration: a flat `key = value` text format with strict
//! validation. Unknown and duplicate keys are errors so a typo in a sweep
//! never silently runs the defaults. Every config has a canonical normal
//! form whose SHA-256 hash names the run in output files.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{GeneratorSpec, PartitionConfig};
use crate::error::{Error, Result};
use crate::federation::{NormScheme, RunMode};
use crate::nn::adam::AdamConfig;

/// All knobs of one experiment. Defaults: 8:0:2 clients, 30 rounds of 3
/// local epochs, batch 8, Adam at 1e-4, top-10 retrieval with α = 0.3 and
/// softmax weight normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: RunMode,
    pub img_only_clients: usize,
    pub txt_only_clients: usize,
    pub multimodal_clients: usize,
    pub samples_per_client: usize,
    pub heterogeneous: bool,
    pub rounds: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub k: usize,
    pub alpha: f64,
    pub weight_norm: NormScheme,
    pub public_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub num_labels: usize,
    pub d_img: usize,
    pub d_txt: usize,
    pub hidden_dim: usize,
    pub feat_dim: usize,
    pub noise_scale: f64,
    pub base_prior: f64,
    pub rare_labels: usize,
    pub rare_prior: f64,
    pub shift_offset: f64,
    pub prior_shift: f64,
    pub seeds: Vec<u64>,
    pub alpha_sweep: Vec<f64>,
    pub public_size_sweep: Vec<usize>,
    pub partition_sweep: Vec<(usize, usize, usize)>,
    pub save_checkpoints: bool,
    pub dump_pairings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: RunMode::CarMfl,
            img_only_clients: 8,
            txt_only_clients: 0,
            multimodal_clients: 2,
            samples_per_client: 200,
            heterogeneous: false,
            rounds: 30,
            epochs: 3,
            batch_size: 8,
            lr: 1e-4,
            k: 10,
            alpha: 0.3,
            weight_norm: NormScheme::Softmax,
            public_size: 150,
            val_size: 400,
            test_size: 800,
            num_labels: 14,
            d_img: 32,
            d_txt: 24,
            hidden_dim: 48,
            feat_dim: 24,
            noise_scale: 1.0,
            base_prior: 0.25,
            rare_labels: 2,
            rare_prior: 0.015,
            shift_offset: 0.8,
            prior_shift: 0.3,
            seeds: vec![1, 2, 3],
            alpha_sweep: vec![1.0, 0.5, 0.4, 0.3, 0.2, 0.0],
            public_size_sweep: vec![25, 50, 75, 100],
            partition_sweep: vec![
                (4, 0, 6),
                (0, 4, 6),
                (2, 2, 6),
                (6, 0, 4),
                (0, 6, 4),
                (3, 3, 4),
                (8, 0, 2),
                (0, 8, 2),
                (4, 4, 2),
            ],
            save_checkpoints: false,
            dump_pairings: false,
        }
    }
}

fn field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("field '{key}': cannot parse '{value}'")))
}

fn field_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| field(key, v))
        .collect()
}

fn field_partition(key: &str, value: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::config(format!(
            "field '{key}': partition '{value}' must have the form I:T:M"
        )));
    }
    Ok((
        field(key, parts[0])?,
        field(key, parts[1])?,
        field(key, parts[2])?,
    ))
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// skipped. Unknown or repeated keys are config errors.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected 'key = value'", line_no + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!("field '{key}': set more than once")));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` assignment. Unknown keys and unparsable
    /// values are config errors; call [`validate`](Self::validate) after a
    /// batch of assignments to check cross-field constraints.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = field(key, value)?,
            "img_only_clients" => self.img_only_clients = field(key, value)?,
            "txt_only_clients" => self.txt_only_clients = field(key, value)?,
            "multimodal_clients" => self.multimodal_clients = field(key, value)?,
            "samples_per_client" => self.samples_per_client = field(key, value)?,
            "heterogeneous" => self.heterogeneous = field(key, value)?,
            "rounds" => self.rounds = field(key, value)?,
            "epochs" => self.epochs = field(key, value)?,
            "batch_size" => self.batch_size = field(key, value)?,
            "lr" => self.lr = field(key, value)?,
            "k" => self.k = field(key, value)?,
            "alpha" => self.alpha = field(key, value)?,
            "weight_norm" => self.weight_norm = field(key, value)?,
            "public_size" => self.public_size = field(key, value)?,
            "val_size" => self.val_size = field(key, value)?,
            "test_size" => self.test_size = field(key, value)?,
            "num_labels" => self.num_labels = field(key, value)?,
            "d_img" => self.d_img = field(key, value)?,
            "d_txt" => self.d_txt = field(key, value)?,
            "hidden_dim" => self.hidden_dim = field(key, value)?,
            "feat_dim" => self.feat_dim = field(key, value)?,
            "noise_scale" => self.noise_scale = field(key, value)?,
            "base_prior" => self.base_prior = field(key, value)?,
            "rare_labels" => self.rare_labels = field(key, value)?,
            "rare_prior" => self.rare_prior = field(key, value)?,
            "shift_offset" => self.shift_offset = field(key, value)?,
            "prior_shift" => self.prior_shift = field(key, value)?,
            "seeds" => self.seeds = field_list(key, value)?,
            "alpha_sweep" => self.alpha_sweep = field_list(key, value)?,
            "public_size_sweep" => self.public_size_sweep = field_list(key, value)?,
            "partition_sweep" => {
                self.partition_sweep = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|v| field_partition(key, v))
                    .collect::<Result<_>>()?;
            }
            "save_checkpoints" => self.save_checkpoints = field(key, value)?,
            "dump_pairings" => self.dump_pairings = field(key, value)?,
            _ => return Err(Error::config(format!("unknown field '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients() == 0 {
            return Err(Error::config("need at least one client (I + T + M >= 1)"));
        }
        if self.samples_per_client == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "samples_per_client, epochs, and batch_size must be positive",
            ));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::config("lr must be finite and >= 0"));
        }
        if self.k == 0 || self.k > self.public_size {
            return Err(Error::config(format!(
                "k = {} must lie in 1..=public_size ({})",
                self.k, self.public_size
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!(
                "alpha = {} must lie in [0, 1]",
                self.alpha
            )));
        }
        if self.public_size == 0 || self.val_size == 0 || self.test_size == 0 {
            return Err(Error::config(
                "public_size, val_size, and test_size must be positive",
            ));
        }
        if self.num_labels == 0 || self.rare_labels > self.num_labels {
            return Err(Error::config(
                "num_labels must be positive and rare_labels <= num_labels",
            ));
        }
        if self.d_img == 0 || self.d_txt == 0 || self.hidden_dim == 0 || self.feat_dim == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        for (name, p) in [
            ("base_prior", self.base_prior),
            ("rare_prior", self.rare_prior),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::config(format!("{name} = {p} must lie in (0, 1)")));
            }
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(Error::config("noise_scale must be finite and >= 0"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must list at least one seed"));
        }
        Ok(())
    }

    pub fn num_clients(&self) -> usize {
        self.img_only_clients + self.txt_only_clients + self.multimodal_clients
    }

    /// Label priors: `base_prior` everywhere except the last `rare_labels`
    /// labels, which get `rare_prior` (rare-class emulation).
    pub fn priors(&self) -> Vec<f64> {
        (0..self.num_labels)
            .map(|l| {
                if l >= self.num_labels - self.rare_labels {
                    self.rare_prior
                } else {
                    self.base_prior
                }
            })
            .collect()
    }

    /// The generator for a given run seed; signal geometry is drawn from
    /// the same seed so different seeds are fully independent replicas.
    pub fn generator_spec(&self, seed: u64) -> Result<GeneratorSpec> {
        GeneratorSpec::synthesize(
            self.num_labels,
            self.d_img,
            self.d_txt,
            self.noise_scale,
            self.priors(),
            self.shift_offset,
            self.prior_shift,
            seed,
        )
    }

    pub fn partition_config(&self) -> PartitionConfig {
        PartitionConfig {
            img_only: self.img_only_clients,
            txt_only: self.txt_only_clients,
            multimodal: self.multimodal_clients,
            samples_per_client: self.samples_per_client,
            heterogeneous: self.heterogeneous,
            public_size: self.public_size,
            val_size: self.val_size,
            test_size: self.test_size,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr)
    }

    /// Canonical serialization: every key once, fixed order. Parsing the
    /// normal form reproduces the config exactly.
    pub fn to_normal_form(&self) -> String {
        let mut out = String::new();
        let join = |xs: &[String]| xs.join(",");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("mode", self.mode.to_string());
        kv("img_only_clients", self.img_only_clients.to_string());
        kv("txt_only_clients", self.txt_only_clients.to_string());
        kv("multimodal_clients", self.multimodal_clients.to_string());
        kv("samples_per_client", self.samples_per_client.to_string());
        kv("heterogeneous", self.heterogeneous.to_string());
        kv("rounds", self.rounds.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", self.lr.to_string());
        kv("k", self.k.to_string());
        kv("alpha", self.alpha.to_string());
        kv("weight_norm", self.weight_norm.to_string());
        kv("public_size", self.public_size.to_string());
        kv("val_size", self.val_size.to_string());
        kv("test_size", self.test_size.to_string());
        kv("num_labels", self.num_labels.to_string());
        kv("d_img", self.d_img.to_string());
        kv("d_txt", self.d_txt.to_string());
        kv("hidden_dim", self.hidden_dim.to_string());
        kv("feat_dim", self.feat_dim.to_string());
        kv("noise_scale", self.noise_scale.to_string());
        kv("base_prior", self.base_prior.to_string());
        kv("rare_labels", self.rare_labels.to_string());
        kv("rare_prior", self.rare_prior.to_string());
        kv("shift_offset", self.shift_offset.to_string());
        kv("prior_shift", self.prior_shift.to_string());
        kv(
            "seeds",
            join(&self.seeds.iter().map(u64::to_string).collect::<Vec<_>>()),
        );
        kv(
            "alpha_sweep",
            join(
                &self
                    .alpha_sweep
                    .iter()
                    .map(f64::to_string)
                    .collect::<Vec<_>>(),
            ),
        );
        kv(
            "public_size_sweep",
            join(
                &self
                    .public_size_sweep
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>(),
            ),
        );
        kv(
            "partition_sweep",
            join(
                &self
                    .partition_sweep
                    .iter()
                    .map(|(i, t, m)| format!("{i}:{t}:{m}"))
                    .collect::<Vec<_>>(),
            ),
        );
        kv("save_checkpoints", self.save_checkpoints.to_string());
        kv("dump_pairings", self.dump_pairings.to_string());
        out
    }

    /// SHA-256 of the normal form, hex-encoded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_normal_form().as_bytes());
        hex::encode(hasher.finalize())
    }
}
