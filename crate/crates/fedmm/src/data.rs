//! Dataset schema, synthetic multimodal data generation, client
//! partitioning, and JSONL persistence.
//!
//! Samples carry two optional feature vectors ("image" and "text") plus a
//! multi-hot label vector. The generator draws labels from independent
//! Bernoulli priors and builds each modality as the sum of the active
//! labels' signal vectors plus Gaussian noise, so both modalities carry
//! label information and a retrieved sample with overlapping labels is an
//! informative substitute for a missing modality.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamKind};

/// One example: stable id, optional per-modality feature vectors, multi-hot
/// labels. At least one modality must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub img: Option<Vec<f64>>,
    pub txt: Option<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl Sample {
    pub fn has_img(&self) -> bool {
        self.img.is_some()
    }

    pub fn has_txt(&self) -> bool {
        self.txt.is_some()
    }
}

/// Declared modality coverage of a dataset; every sample must match it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ImageOnly,
    TextOnly,
    Multimodal,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Regime::ImageOnly => "image_only",
            Regime::TextOnly => "text_only",
            Regime::Multimodal => "multimodal",
        };
        f.write_str(name)
    }
}

/// Ordered, immutable collection of samples under one declared regime.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_labels: usize,
    regime: Regime,
}

impl Dataset {
    /// Validates regime consistency, label lengths, and the at-least-one-
    /// modality rule.
    pub fn new(samples: Vec<Sample>, num_labels: usize, regime: Regime) -> Result<Self> {
        for s in &samples {
            if s.labels.len() != num_labels {
                return Err(Error::Shape {
                    context: "sample labels",
                    expected: num_labels,
                    got: s.labels.len(),
                });
            }
            let ok = match regime {
                Regime::ImageOnly => s.has_img() && !s.has_txt(),
                Regime::TextOnly => !s.has_img() && s.has_txt(),
                Regime::Multimodal => s.has_img() && s.has_txt(),
            };
            if !ok {
                return Err(Error::invalid_data(format!(
                    "sample {} does not match declared regime {regime}",
                    s.id
                )));
            }
        }
        Ok(Dataset {
            samples,
            num_labels,
            regime,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// Copy of the samples in `start..start + len`, same regime.
    /// Panics if the range exceeds the dataset.
    pub fn slice(&self, start: usize, len: usize) -> Dataset {
        Dataset {
            samples: self.samples[start..start + len].to_vec(),
            num_labels: self.num_labels,
            regime: self.regime,
        }
    }

    /// Drops the text modality from every sample; ids and labels are kept.
    pub fn strip_txt(mut self) -> Result<Dataset> {
        for s in &mut self.samples {
            if !s.has_img() {
                return Err(Error::invalid_data(format!(
                    "cannot strip txt from image-less sample {}",
                    s.id
                )));
            }
            s.txt = None;
        }
        self.regime = Regime::ImageOnly;
        Ok(self)
    }

    /// Drops the image modality from every sample; ids and labels are kept.
    pub fn strip_img(mut self) -> Result<Dataset> {
        for s in &mut self.samples {
            if !s.has_txt() {
                return Err(Error::invalid_data(format!(
                    "cannot strip img from text-less sample {}",
                    s.id
                )));
            }
            s.img = None;
        }
        self.regime = Regime::TextOnly;
        Ok(self)
    }

    /// Shifts every id by `offset`; lets independently generated corpora be
    /// combined without id collisions.
    pub fn offset_ids(mut self, offset: u64) -> Dataset {
        for s in &mut self.samples {
            s.id += offset;
        }
        self
    }

    /// Concatenation under a shared regime and label count.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid_data("concat of zero datasets"))?;
        let mut samples = Vec::new();
        for part in parts {
            if part.regime != first.regime || part.num_labels != first.num_labels {
                return Err(Error::invalid_data(
                    "concat requires matching regime and label count",
                ));
            }
            samples.extend_from_slice(&part.samples);
        }
        Ok(Dataset {
            samples,
            num_labels: first.num_labels,
            regime: first.regime,
        })
    }
}

/// Parameters of the label-conditioned Gaussian generator.
///
/// Feature construction: `mean_offset + Σ_{active labels} signal[l] +
/// noise_scale · N(0, I)`, independently per modality. `shifted()` derives
/// the drifted variant used for unimodal clients in the heterogeneous
/// setup.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub num_labels: usize,
    pub priors: Vec<f64>,
    /// Per-label image signal vectors, `num_labels x d_img`.
    pub signal_img: Vec<Vec<f64>>,
    /// Per-label text signal vectors, `num_labels x d_txt`.
    pub signal_txt: Vec<Vec<f64>>,
    pub noise_scale: f64,
    /// Constant added to every feature component (zero for the base
    /// distribution).
    pub mean_offset: f64,
    /// Mean offset applied by `shifted()`.
    pub shift_offset: f64,
    /// Relative prior perturbation applied by `shifted()`.
    pub prior_shift: f64,
}

impl GeneratorSpec {
    /// Builds a spec with unit-norm random signal directions. Even-indexed
    /// labels get a strong image / weak text signal and odd-indexed labels
    /// the reverse, so each modality is informative for half the labels and
    /// neither tower can carry the task alone.
    #[allow(clippy::too_many_arguments)]
    pub fn synthesize(
        num_labels: usize,
        d_img: usize,
        d_txt: usize,
        noise_scale: f64,
        priors: Vec<f64>,
        shift_offset: f64,
        prior_shift: f64,
        seed: u64,
    ) -> Result<GeneratorSpec> {
        if priors.len() != num_labels {
            return Err(Error::Shape {
                context: "generator priors",
                expected: num_labels,
                got: priors.len(),
            });
        }
        let mut rng = stream(seed, StreamKind::Signals);
        let mut unit = |dim: usize| -> Vec<f64> {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        };
        const STRONG: f64 = 1.0;
        const WEAK: f64 = 0.3;
        let mut signal_img = Vec::with_capacity(num_labels);
        let mut signal_txt = Vec::with_capacity(num_labels);
        for l in 0..num_labels {
            let (img_scale, txt_scale) = if l % 2 == 0 {
                (STRONG, WEAK)
            } else {
                (WEAK, STRONG)
            };
            signal_img.push(unit(d_img).into_iter().map(|x| x * img_scale).collect());
            signal_txt.push(unit(d_txt).into_iter().map(|x| x * txt_scale).collect());
        }
        let spec = GeneratorSpec {
            num_labels,
            priors,
            signal_img,
            signal_txt,
            noise_scale,
            mean_offset: 0.0,
            shift_offset,
            prior_shift,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn d_img(&self) -> usize {
        self.signal_img.first().map_or(0, Vec::len)
    }

    pub fn d_txt(&self) -> usize {
        self.signal_txt.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_labels == 0 {
            return Err(Error::config("num_labels must be positive"));
        }
        if self.priors.len() != self.num_labels
            || self.signal_img.len() != self.num_labels
            || self.signal_txt.len() != self.num_labels
        {
            return Err(Error::config(
                "priors and signal tables must have one entry per label",
            ));
        }
        if self.priors.iter().any(|p| !(p > &0.0 && p < &1.0)) {
            return Err(Error::config("label priors must lie in (0, 1)"));
        }
        let finite = |table: &[Vec<f64>]| table.iter().flatten().all(|v| v.is_finite());
        if !finite(&self.signal_img) || !finite(&self.signal_txt) {
            return Err(Error::config("signal vectors must be finite"));
        }
        if self.signal_img.iter().any(|s| s.len() != self.d_img())
            || self.signal_txt.iter().any(|s| s.len() != self.d_txt())
        {
            return Err(Error::config("signal vectors must share dimensions"));
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(Error::config("noise_scale must be finite and >= 0"));
        }
        Ok(())
    }

    /// The drifted distribution for heterogeneous unimodal clients: all
    /// feature components move by `shift_offset`, and priors are perturbed
    /// by `prior_shift` (even labels up, odd labels down, clamped).
    pub fn shifted(&self) -> GeneratorSpec {
        let mut spec = self.clone();
        spec.mean_offset = self.mean_offset + self.shift_offset;
        spec.priors = self
            .priors
            .iter()
            .enumerate()
            .map(|(l, &p)| {
                let factor = if l % 2 == 0 {
                    1.0 + self.prior_shift
                } else {
                    1.0 - self.prior_shift
                };
                (p * factor).clamp(1e-3, 1.0 - 1e-3)
            })
            .collect();
        spec
    }

    /// Feature vectors for a fixed label assignment (noise drawn from
    /// `rng`). Exposed for direct inspection of the construction rule.
    pub fn features_for(&self, labels: &[u8], rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
        let build = |signals: &[Vec<f64>], dim: usize, rng: &mut dyn rand::RngCore| {
            let mut v = vec![self.mean_offset; dim];
            for (l, &y) in labels.iter().enumerate() {
                if y != 0 {
                    for (c, s) in v.iter_mut().zip(&signals[l]) {
                        *c += s;
                    }
                }
            }
            for c in v.iter_mut() {
                let noise: f64 = rng.sample(StandardNormal);
                *c += self.noise_scale * noise;
            }
            v
        };
        let img = build(&self.signal_img, self.d_img(), rng);
        let txt = build(&self.signal_txt, self.d_txt(), rng);
        (img, txt)
    }
}

/// Draws `n` multimodal samples with ids `0..n`. Deterministic given the
/// seed; per-sample draw order is labels, then image noise, then text
/// noise.
pub fn generate(spec: &GeneratorSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid_data("generate needs n >= 1"));
    }
    spec.validate()?;
    let mut rng = stream(seed, StreamKind::DataGen);
    let mut samples = Vec::with_capacity(n);
    for id in 0..n {
        let labels: Vec<u8> = spec
            .priors
            .iter()
            .map(|&p| u8::from(rng.gen_bool(p)))
            .collect();
        let (img, txt) = spec.features_for(&labels, &mut rng);
        samples.push(Sample {
            id: id as u64,
            img: Some(img),
            txt: Some(txt),
            labels,
        });
    }
    Dataset::new(samples, spec.num_labels, Regime::Multimodal)
}

/// How a generated corpus is divided among clients, the public pool, and
/// the evaluation splits.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    /// Image-only client count.
    pub img_only: usize,
    /// Text-only client count.
    pub txt_only: usize,
    /// Multimodal client count.
    pub multimodal: usize,
    pub samples_per_client: usize,
    /// Unimodal clients draw from a drifted distribution when set.
    pub heterogeneous: bool,
    pub public_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl PartitionConfig {
    pub fn num_clients(&self) -> usize {
        self.img_only + self.txt_only + self.multimodal
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients() == 0 {
            return Err(Error::config("need at least one client (I + T + M >= 1)"));
        }
        if self.samples_per_client == 0 {
            return Err(Error::config("samples_per_client must be positive"));
        }
        if self.public_size == 0 || self.val_size == 0 || self.test_size == 0 {
            return Err(Error::config(
                "public, validation, and test splits must be non-empty",
            ));
        }
        Ok(())
    }

    /// Samples consumed from the base corpus.
    pub fn base_demand(&self) -> usize {
        let base_clients = if self.heterogeneous {
            self.multimodal
        } else {
            self.num_clients()
        };
        base_clients * self.samples_per_client + self.public_size + self.val_size + self.test_size
    }

    /// Samples consumed from the shifted corpus (heterogeneous mode only).
    pub fn shifted_demand(&self) -> usize {
        if self.heterogeneous {
            (self.img_only + self.txt_only) * self.samples_per_client
        } else {
            0
        }
    }
}

/// Result of [`partition_full`]: the client datasets both as assigned
/// (modalities stripped per the I:T:M configuration) and in their original
/// fully multimodal form, which counterfactual baselines train on.
#[derive(Debug, Clone, PartialEq)]
pub struct Partitioned {
    pub clients: Vec<Dataset>,
    /// Same samples as `clients`, with no modality stripped.
    pub clients_unstripped: Vec<Dataset>,
    pub public: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Splits a corpus into per-client datasets (first I image-only, then T
/// text-only, then M multimodal), the public pool, and validation/test
/// sets — all disjoint by id. In heterogeneous mode the unimodal clients
/// draw from `shifted` instead of `full`; ids must not collide.
pub fn partition(
    full: &Dataset,
    cfg: &PartitionConfig,
    shifted: Option<&Dataset>,
) -> Result<(Vec<Dataset>, Dataset, Dataset, Dataset)> {
    let p = partition_full(full, cfg, shifted)?;
    Ok((p.clients, p.public, p.val, p.test))
}

/// Like [`partition`], but also keeps each client's un-stripped data.
pub fn partition_full(
    full: &Dataset,
    cfg: &PartitionConfig,
    shifted: Option<&Dataset>,
) -> Result<Partitioned> {
    cfg.validate()?;
    if full.regime() != Regime::Multimodal {
        return Err(Error::invalid_data("partition input must be multimodal"));
    }
    if cfg.heterogeneous != shifted.is_some() {
        return Err(Error::config(
            "heterogeneous mode requires a shifted corpus and homogeneous mode forbids one",
        ));
    }
    if full.len() < cfg.base_demand() {
        return Err(Error::InsufficientData {
            needed: cfg.base_demand(),
            available: full.len(),
        });
    }
    if let Some(sh) = shifted {
        if sh.len() < cfg.shifted_demand() {
            return Err(Error::InsufficientData {
                needed: cfg.shifted_demand(),
                available: sh.len(),
            });
        }
        if sh.regime() != Regime::Multimodal {
            return Err(Error::invalid_data("shifted corpus must be multimodal"));
        }
        let base_ids: HashSet<u64> = full.samples().iter().map(|s| s.id).collect();
        if sh.samples().iter().any(|s| base_ids.contains(&s.id)) {
            return Err(Error::invalid_data(
                "shifted corpus shares ids with the base corpus",
            ));
        }
    }

    let spc = cfg.samples_per_client;
    let mut base_pos = 0;
    let mut shifted_pos = 0;
    let mut next_unimodal_source = || -> Dataset {
        match shifted {
            Some(sh) => {
                let d = sh.slice(shifted_pos, spc);
                shifted_pos += spc;
                d
            }
            None => {
                let d = full.slice(base_pos, spc);
                base_pos += spc;
                d
            }
        }
    };

    let mut clients = Vec::with_capacity(cfg.num_clients());
    let mut clients_unstripped = Vec::with_capacity(cfg.num_clients());
    for _ in 0..cfg.img_only {
        let source = next_unimodal_source();
        clients.push(source.clone().strip_txt()?);
        clients_unstripped.push(source);
    }
    for _ in 0..cfg.txt_only {
        let source = next_unimodal_source();
        clients.push(source.clone().strip_img()?);
        clients_unstripped.push(source);
    }
    for _ in 0..cfg.multimodal {
        let source = full.slice(base_pos, spc);
        base_pos += spc;
        clients.push(source.clone());
        clients_unstripped.push(source);
    }
    let public = full.slice(base_pos, cfg.public_size);
    base_pos += cfg.public_size;
    let val = full.slice(base_pos, cfg.val_size);
    base_pos += cfg.val_size;
    let test = full.slice(base_pos, cfg.test_size);
    Ok(Partitioned {
        clients,
        clients_unstripped,
        public,
        val,
        test,
    })
}

/// First line of a JSONL dataset file; the sample lines follow.
#[derive(Debug, Serialize, Deserialize)]
struct JsonlHeader {
    num_labels: usize,
    regime: Regime,
}

/// Writes a dataset as JSONL: a header line, then one sample object per
/// line.
pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = JsonlHeader {
        num_labels: dataset.num_labels(),
        regime: dataset.regime(),
    };
    writeln!(
        out,
        "{}",
        serde_json::to_string(&header).map_err(|e| Error::invalid_data(e.to_string()))?
    )?;
    for s in dataset.samples() {
        writeln!(
            out,
            "{}",
            serde_json::to_string(s).map_err(|e| Error::invalid_data(e.to_string()))?
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSONL dataset back; malformed lines are reported with their
/// 1-based line number.
pub fn load_jsonl(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header line".into(),
    })??;
    let header: JsonlHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    let mut samples = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if sample.img.is_none() && sample.txt.is_none() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("sample {} has neither modality", sample.id),
            });
        }
        if sample.labels.len() != header.num_labels {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "labels length {} does not match header num_labels {}",
                    sample.labels.len(),
                    header.num_labels
                ),
            });
        }
        samples.push(sample);
    }
    Dataset::new(samples, header.num_labels, header.regime)
}
