//! The federated protocol: local Adam training from a shared global model,
//! per-component weighted aggregation, α-scaled re-adjustment of unimodal
//! clients' complementary-encoder weights, the virtual public client, the
//! baselines, and the communication-round loop.
//!
//! Determinism contract: every client draws from its own random stream
//! keyed by (seed, client id, round), so results never depend on the order
//! in which clients execute. The server side only ever touches model
//! parameters — raw client data and pairing choices stay client-local.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::data::{generate, partition_full, Dataset, Partitioned, Regime};
use crate::error::{Error, Result};
use crate::metrics::{macro_from_per_class, modality_bias, per_class_auc, RoundReport};
use crate::nn::adam::{AdamConfig, AdamState};
use crate::nn::backprop::{backward, BatchItem};
use crate::nn::model::{Component, Model, COMPONENTS};
use crate::retrieval::{augment_client, build_index, AugmentedPair};
use crate::rng::{stream, StreamKind};

/// Differentiates the base corpus stream from the drifted corpus stream in
/// heterogeneous setups.
const SHIFTED_SEED_XOR: u64 = 0x9E37_79B9_7F4A_7C15;

/// What a run trains and aggregates.
///
/// - `CarMfl`: retrieval augmentation + public client + weight re-adjustment;
/// - `MFedAvg`: zero-fill for missing modalities, no public client;
/// - `MFedAvgP`: zero-fill plus the virtual public client;
/// - `MFedAvgPNm`: `MFedAvgP` counterfactual with nothing missing;
/// - `CentralUpper`: one trainer on all client data (un-stripped) + public;
/// - `PublicOnlyLower`: one trainer on the public pool alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RunMode {
    CarMfl,
    MFedAvg,
    MFedAvgP,
    CentralUpper,
    PublicOnlyLower,
    MFedAvgPNm,
}

impl RunMode {
    pub const ALL: [RunMode; 6] = [
        RunMode::CarMfl,
        RunMode::MFedAvg,
        RunMode::MFedAvgP,
        RunMode::CentralUpper,
        RunMode::PublicOnlyLower,
        RunMode::MFedAvgPNm,
    ];

    fn as_str(self) -> &'static str {
        match self {
            RunMode::CarMfl => "CAR_MFL",
            RunMode::MFedAvg => "MFEDAVG",
            RunMode::MFedAvgP => "MFEDAVG_P",
            RunMode::CentralUpper => "CENTRAL_UPPER",
            RunMode::PublicOnlyLower => "PUBLIC_ONLY_LOWER",
            RunMode::MFedAvgPNm => "MFEDAVG_P_NM",
        }
    }

    /// Modes where the server also trains a virtual client on the public
    /// pool.
    pub fn has_public_client(self) -> bool {
        matches!(
            self,
            RunMode::CarMfl | RunMode::MFedAvgP | RunMode::MFedAvgPNm
        )
    }

    /// Modes that run one centralized trainer instead of a federation.
    pub fn is_centralized(self) -> bool {
        matches!(self, RunMode::CentralUpper | RunMode::PublicOnlyLower)
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RunMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown mode '{s}'")))
    }
}

/// How α-scaled weight vectors are renormalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormScheme {
    Softmax,
    Linear,
}

impl NormScheme {
    fn as_str(self) -> &'static str {
        match self {
            NormScheme::Softmax => "softmax",
            NormScheme::Linear => "linear",
        }
    }
}

impl fmt::Display for NormScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(NormScheme::Softmax),
            "linear" => Ok(NormScheme::Linear),
            other => Err(Error::config(format!("unknown weight_norm '{other}'"))),
        }
    }
}

/// What aggregation needs to know about one participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParticipantMeta {
    pub size: usize,
    pub regime: Regime,
}

/// One weight vector per model component; each sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights {
    pub img_encoder: Vec<f64>,
    pub txt_encoder: Vec<f64>,
    pub classifier: Vec<f64>,
}

impl AggregationWeights {
    pub fn component(&self, component: Component) -> &[f64] {
        match component {
            Component::ImageEncoder => &self.img_encoder,
            Component::TextEncoder => &self.txt_encoder,
            Component::Classifier => &self.classifier,
        }
    }

    /// Simplex check: non-negative entries summing to 1 within 1e-9.
    pub fn validate(&self, participants: usize) -> Result<()> {
        for (name, v) in [
            ("image-encoder", &self.img_encoder),
            ("text-encoder", &self.txt_encoder),
            ("classifier", &self.classifier),
        ] {
            if v.len() != participants {
                return Err(Error::Shape {
                    context: "aggregation weights",
                    expected: participants,
                    got: v.len(),
                });
            }
            if v.iter().any(|&w| w < 0.0 || !w.is_finite()) {
                return Err(Error::protocol(format!("negative {name} weight")));
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::protocol(format!(
                    "{name} weights sum to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Base weights are dataset-size fractions. Under `CarMfl`, a unimodal
/// client's weight for its MISSING modality's encoder is scaled by α and
/// the affected vector renormalized; the classifier vector is never
/// re-adjusted, and components with no scaled entry keep the base vector
/// bit-exactly. Baselines aggregate with plain base weights.
pub fn compute_weights(
    participants: &[ParticipantMeta],
    mode: RunMode,
    alpha: f64,
    scheme: NormScheme,
) -> Result<AggregationWeights> {
    if participants.is_empty() {
        return Err(Error::protocol("aggregation without participants"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha = {alpha} must lie in [0, 1]")));
    }
    if participants.iter().any(|p| p.size == 0) {
        return Err(Error::protocol("participant with an empty dataset"));
    }
    let total: f64 = participants.iter().map(|p| p.size as f64).sum();
    let base: Vec<f64> = participants.iter().map(|p| p.size as f64 / total).collect();

    let scaled_vector = |missing: Regime| -> Result<Vec<f64>> {
        // `missing` is the regime whose clients lack the component's
        // modality: text-only clients for the image encoder and vice versa.
        if mode != RunMode::CarMfl || participants.iter().all(|p| p.regime != missing) {
            return Ok(base.clone());
        }
        let scaled: Vec<f64> = participants
            .iter()
            .zip(&base)
            .map(|(p, &w)| if p.regime == missing { alpha * w } else { w })
            .collect();
        match scheme {
            NormScheme::Softmax => {
                let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                Ok(exps.into_iter().map(|e| e / sum).collect())
            }
            NormScheme::Linear => {
                let sum: f64 = scaled.iter().sum();
                if sum <= 0.0 {
                    return Err(Error::config(
                        "linear normalization with alpha = 0 removed every participant",
                    ));
                }
                Ok(scaled.into_iter().map(|v| v / sum).collect())
            }
        }
    };

    let weights = AggregationWeights {
        img_encoder: scaled_vector(Regime::TextOnly)?,
        txt_encoder: scaled_vector(Regime::ImageOnly)?,
        classifier: base,
    };
    weights.validate(participants.len())?;
    Ok(weights)
}

/// Per-component weighted mean of the participants' flat parameter blocks.
pub fn aggregate(locals: &[Model], weights: &AggregationWeights) -> Result<Model> {
    let first = locals
        .first()
        .ok_or_else(|| Error::protocol("aggregation without local models"))?;
    let shape = first.shape();
    if locals.iter().any(|m| m.shape() != shape) {
        return Err(Error::protocol("local models disagree on shape"));
    }
    weights.validate(locals.len())?;
    let flats: Vec<Vec<f64>> = locals.iter().map(Model::flatten).collect();
    let mut out = vec![0.0; first.param_count()];
    for component in COMPONENTS {
        let range = Model::component_range(&shape, component);
        let w = weights.component(component);
        for (flat, &wk) in flats.iter().zip(w) {
            for i in range.clone() {
                out[i] += wk * flat[i];
            }
        }
    }
    Model::from_flat(&shape, &out)
}

/// `epochs` passes of shuffled mini-batch Adam over the client's dataset,
/// starting from a copy of the global model with fresh optimizer state.
/// Batches are formed within modality-presence groups so each batch is
/// uniform; a missing modality contributes a zero feature after the
/// encoder and leaves that encoder's parameters bit-identical.
pub fn local_train(
    data: &Dataset,
    global: &Model,
    epochs: usize,
    batch_size: usize,
    adam_config: AdamConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Model> {
    if data.is_empty() {
        return Err(Error::protocol("local training on an empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let shape = global.shape();
    let mut params = global.flatten();
    let mut adam = AdamState::new(params.len(), adam_config);
    let samples = data.samples();
    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(rng);
        // Stable-partition the shuffled order by modality pattern;
        // backward requires uniform batches.
        let mut groups: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for idx in order {
            let s = &samples[idx];
            let g = match (s.has_img(), s.has_txt()) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => {
                    return Err(Error::invalid_data(format!(
                        "sample {} has no modality",
                        s.id
                    )))
                }
            };
            groups[g].push(idx);
        }
        for group in &groups {
            for chunk in group.chunks(batch_size) {
                let model = Model::from_flat(&shape, &params)?;
                let batch: Vec<BatchItem<'_>> = chunk
                    .iter()
                    .map(|&idx| {
                        let s = &samples[idx];
                        BatchItem {
                            img: s.img.as_deref(),
                            txt: s.txt.as_deref(),
                            labels: &s.labels,
                        }
                    })
                    .collect();
                let (grad, _) = backward(&model, &batch)?;
                adam.step(&mut params, &grad)?;
            }
        }
    }
    Model::from_flat(&shape, &params)
}

/// Hex SHA-256 over the little-endian bytes of the flat parameter vector.
pub fn model_digest(model: &Model) -> String {
    let mut hasher = Sha256::new();
    for v in model.flatten() {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// One aggregation participant: a client, or the server's virtual public
/// client (always last, always multimodal).
#[derive(Debug, Clone)]
struct Participant {
    id: usize,
    regime: Regime,
    data: Dataset,
}

/// A pairing event attributed to the client that made it.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingRecord {
    pub client_id: usize,
    pub pair: AugmentedPair,
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Reports for rounds `0..=R`; round 0 describes the initial model.
    pub history: Vec<RoundReport>,
    /// Round whose model had the best validation macro AUC.
    pub best_round: u64,
    pub best_val_auc: f64,
    /// Test metrics of the selected checkpoint.
    pub best_test_auc: f64,
    pub best_per_class: Vec<Option<f64>>,
    /// Modality split of the final round's classifier.
    pub final_img_share: f64,
    pub final_txt_share: f64,
    /// Mean distinct retrieval partners per augmented sample, if any
    /// augmentation happened.
    pub mean_unique_pairings: Option<f64>,
    /// Global-model digest after initialization and after every round.
    pub round_digests: Vec<String>,
    pub pairing_log: Vec<PairingRecord>,
    pub best_model: Model,
}

/// Per-sample score rows paired with per-sample label rows for one split.
type SplitScores = (Vec<Vec<f64>>, Vec<Vec<u8>>);

/// Live state of one seeded run.
pub struct Federation {
    mode: RunMode,
    participants: Vec<Participant>,
    public: Dataset,
    val: Dataset,
    test: Dataset,
    global: Model,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    k: usize,
    alpha: f64,
    scheme: NormScheme,
    adam: AdamConfig,
    pairing_log: Vec<PairingRecord>,
    partners: BTreeMap<u64, BTreeSet<u64>>,
    digests: Vec<String>,
}

/// Generates the corpus for `seed` (plus the drifted corpus in
/// heterogeneous setups, on a decorrelated stream with disjoint ids) and
/// partitions it into client, public, validation, and test splits.
pub fn build_partitions(config: &ExperimentConfig, seed: u64) -> Result<Partitioned> {
    let spec = config.generator_spec(seed)?;
    let pcfg = config.partition_config();
    let full = generate(&spec, pcfg.base_demand(), seed)?;
    let shifted = if pcfg.heterogeneous {
        let n = pcfg.shifted_demand();
        Some(
            generate(&spec.shifted(), n.max(1), seed ^ SHIFTED_SEED_XOR)?
                .offset_ids(full.len() as u64),
        )
    } else {
        None
    };
    partition_full(&full, &pcfg, shifted.as_ref())
}

impl Federation {
    /// Generates the corpus, partitions it, picks the participant set for
    /// the mode, and initializes the global model.
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let parts = build_partitions(config, seed)?;

        let client_participants = |datasets: Vec<Dataset>| -> Vec<Participant> {
            datasets
                .into_iter()
                .enumerate()
                .map(|(id, data)| Participant {
                    id,
                    regime: data.regime(),
                    data,
                })
                .collect()
        };
        let mut participants = match config.mode {
            RunMode::CarMfl | RunMode::MFedAvg | RunMode::MFedAvgP => {
                client_participants(parts.clients)
            }
            RunMode::MFedAvgPNm => client_participants(parts.clients_unstripped),
            RunMode::CentralUpper => {
                let mut sources: Vec<&Dataset> = parts.clients_unstripped.iter().collect();
                sources.push(&parts.public);
                vec![Participant {
                    id: 0,
                    regime: Regime::Multimodal,
                    data: Dataset::concat(&sources)?,
                }]
            }
            RunMode::PublicOnlyLower => vec![Participant {
                id: 0,
                regime: Regime::Multimodal,
                data: parts.public.clone(),
            }],
        };
        if config.mode.has_public_client() {
            participants.push(Participant {
                id: participants.len(),
                regime: Regime::Multimodal,
                data: parts.public.clone(),
            });
        }

        let mut init_rng = stream(seed, StreamKind::ModelInit);
        let global = Model::init(
            config.d_img,
            config.d_txt,
            config.hidden_dim,
            config.feat_dim,
            config.num_labels,
            &mut init_rng,
        );
        let digests = vec![model_digest(&global)];
        Ok(Federation {
            mode: config.mode,
            participants,
            public: parts.public,
            val: parts.val,
            test: parts.test,
            global,
            seed,
            epochs: config.epochs,
            batch_size: config.batch_size,
            k: config.k,
            alpha: config.alpha,
            scheme: config.weight_norm,
            adam: config.adam(),
            pairing_log: Vec::new(),
            partners: BTreeMap::new(),
            digests,
        })
    }

    pub fn global(&self) -> &Model {
        &self.global
    }

    pub fn digests(&self) -> &[String] {
        &self.digests
    }

    pub fn pairing_log(&self) -> &[PairingRecord] {
        &self.pairing_log
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    fn mean_unique_pairings(&self) -> Option<f64> {
        if self.partners.is_empty() {
            return None;
        }
        let total: usize = self.partners.values().map(BTreeSet::len).sum();
        Some(total as f64 / self.partners.len() as f64)
    }

    /// One communication round: (1) build the retrieval index from the
    /// current global model and (2) augment unimodal clients (CAR-MFL
    /// only; baselines zero-fill through modality absence), (3) train every
    /// participant locally from the global model, (4) re-weight and
    /// aggregate, (5) evaluate.
    pub fn run_round(&mut self, round: u64) -> Result<RoundReport> {
        let started = Instant::now();
        let effective: Vec<Dataset> = match self.mode {
            RunMode::CarMfl => {
                let index = build_index(&self.global, &self.public, round)?;
                let mut datasets = Vec::with_capacity(self.participants.len());
                for p in &self.participants {
                    if p.regime == Regime::Multimodal {
                        datasets.push(p.data.clone());
                    } else {
                        let (augmented, pairs) =
                            augment_client(&p.data, &index, &self.global, self.k, round)?;
                        for pair in pairs {
                            self.partners
                                .entry(pair.query_id)
                                .or_default()
                                .insert(pair.public_id);
                            self.pairing_log.push(PairingRecord {
                                client_id: p.id,
                                pair,
                            });
                        }
                        datasets.push(augmented);
                    }
                }
                datasets
            }
            _ => self.participants.iter().map(|p| p.data.clone()).collect(),
        };

        let mut locals = Vec::with_capacity(self.participants.len());
        for (p, data) in self.participants.iter().zip(&effective) {
            let mut rng = stream(
                self.seed,
                StreamKind::ClientTrain {
                    client: p.id as u64,
                    round,
                },
            );
            locals.push(local_train(
                data,
                &self.global,
                self.epochs,
                self.batch_size,
                self.adam,
                &mut rng,
            )?);
        }

        let metas: Vec<ParticipantMeta> = self
            .participants
            .iter()
            .map(|p| ParticipantMeta {
                size: p.data.len(),
                regime: p.regime,
            })
            .collect();
        let weights = compute_weights(&metas, self.mode, self.alpha, self.scheme)?;
        self.global = aggregate(&locals, &weights)?;
        self.digests.push(model_digest(&self.global));
        self.evaluate_round(round, started.elapsed().as_secs_f64())
    }

    fn scores_on(&self, dataset: &Dataset) -> Result<SplitScores> {
        let mut scores = Vec::with_capacity(dataset.len());
        let mut labels = Vec::with_capacity(dataset.len());
        for s in dataset.samples() {
            scores.push(self.global.forward(s.img.as_deref(), s.txt.as_deref())?);
            labels.push(s.labels.clone());
        }
        Ok((scores, labels))
    }

    /// Metrics of the current global model, packaged as the report for
    /// `round`.
    pub fn evaluate_round(&self, round: u64, wall_clock_secs: f64) -> Result<RoundReport> {
        let (val_scores, val_labels) = self.scores_on(&self.val)?;
        let val_auc = macro_from_per_class(&per_class_auc(&val_scores, &val_labels)?)?;
        let (test_scores, test_labels) = self.scores_on(&self.test)?;
        let per_class = per_class_auc(&test_scores, &test_labels)?;
        let test_auc = macro_from_per_class(&per_class)?;
        let (img_weight_share, txt_weight_share) = modality_bias(&self.global.classifier)
            .ok_or_else(|| Error::eval("all-zero classifier weight matrix"))?;
        Ok(RoundReport {
            round,
            mode: self.mode,
            val_auc,
            test_auc,
            per_class_auc: per_class,
            img_weight_share,
            txt_weight_share,
            mean_unique_pairings: self.mean_unique_pairings(),
            wall_clock_secs,
        })
    }
}

/// Runs `rounds` communication rounds from a fresh federation and reports
/// the checkpoint with the best validation macro AUC.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<ExperimentResult> {
    let mut federation = Federation::new(config, seed)?;
    let initial = federation.evaluate_round(0, 0.0)?;
    let mut best_round = 0u64;
    let mut best_val_auc = initial.val_auc;
    let mut best_test_auc = initial.test_auc;
    let mut best_per_class = initial.per_class_auc.clone();
    let mut best_model = federation.global().clone();
    let mut history = vec![initial];
    for round in 1..=config.rounds {
        let report = federation.run_round(round)?;
        if report.val_auc > best_val_auc {
            best_round = round;
            best_val_auc = report.val_auc;
            best_test_auc = report.test_auc;
            best_per_class = report.per_class_auc.clone();
            best_model = federation.global().clone();
        }
        history.push(report);
    }
    let last = history.last().expect("round 0 always present");
    Ok(ExperimentResult {
        best_round,
        best_val_auc,
        best_test_auc,
        best_per_class,
        final_img_share: last.img_weight_share,
        final_txt_share: last.txt_weight_share,
        mean_unique_pairings: federation.mean_unique_pairings(),
        round_digests: federation.digests().to_vec(),
        pairing_log: federation.pairing_log.clone(),
        best_model,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::ModelShape;

    fn meta(size: usize, regime: Regime) -> ParticipantMeta {
        ParticipantMeta { size, regime }
    }

    #[test]
    fn hand_derived_linear_readjustment() {
        // Two equal clients, client 0 image-only, alpha 0.3: the text
        // encoder vector is (0.15, 0.5) / 0.65.
        let participants = [meta(10, Regime::ImageOnly), meta(10, Regime::Multimodal)];
        let w = compute_weights(&participants, RunMode::CarMfl, 0.3, NormScheme::Linear).unwrap();
        assert!(
            (w.txt_encoder[0] - 0.2308).abs() < 5e-5,
            "{:?}",
            w.txt_encoder
        );
        assert!((w.txt_encoder[1] - 0.7692).abs() < 5e-5);
        // No text-only client, so the image-encoder vector stays base.
        assert_eq!(w.img_encoder, vec![0.5, 0.5]);
        assert_eq!(w.classifier, vec![0.5, 0.5]);
    }

    #[test]
    fn hand_derived_softmax_readjustment() {
        let participants = [meta(10, Regime::ImageOnly), meta(10, Regime::Multimodal)];
        let w = compute_weights(&participants, RunMode::CarMfl, 0.3, NormScheme::Softmax).unwrap();
        assert!(
            (w.txt_encoder[0] - 0.4134).abs() < 5e-5,
            "{:?}",
            w.txt_encoder
        );
        assert!((w.txt_encoder[1] - 0.5866).abs() < 5e-5);
        assert_eq!(w.img_encoder, vec![0.5, 0.5]);
        assert_eq!(w.classifier, vec![0.5, 0.5]);
    }

    #[test]
    fn all_multimodal_keeps_base_weights_bit_exactly() {
        let participants = [
            meta(30, Regime::Multimodal),
            meta(10, Regime::Multimodal),
            meta(60, Regime::Multimodal),
        ];
        let base = vec![0.3, 0.1, 0.6];
        for scheme in [NormScheme::Softmax, NormScheme::Linear] {
            let w = compute_weights(&participants, RunMode::CarMfl, 0.3, scheme).unwrap();
            assert_eq!(w.img_encoder, base);
            assert_eq!(w.txt_encoder, base);
            assert_eq!(w.classifier, base);
        }
    }

    #[test]
    fn baseline_modes_never_rescale() {
        let participants = [meta(10, Regime::ImageOnly), meta(10, Regime::Multimodal)];
        for mode in [RunMode::MFedAvg, RunMode::MFedAvgP] {
            let w = compute_weights(&participants, mode, 0.3, NormScheme::Softmax).unwrap();
            assert_eq!(w.txt_encoder, vec![0.5, 0.5]);
            assert_eq!(w.img_encoder, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn classifier_vector_is_never_readjusted() {
        let participants = [
            meta(10, Regime::ImageOnly),
            meta(20, Regime::TextOnly),
            meta(30, Regime::Multimodal),
        ];
        let w = compute_weights(&participants, RunMode::CarMfl, 0.1, NormScheme::Softmax).unwrap();
        let base: Vec<f64> = vec![10.0 / 60.0, 20.0 / 60.0, 30.0 / 60.0];
        assert_eq!(w.classifier, base);
        assert_ne!(w.img_encoder, base);
        assert_ne!(w.txt_encoder, base);
    }

    #[test]
    fn weight_vectors_form_a_simplex() {
        let participants = [
            meta(7, Regime::ImageOnly),
            meta(13, Regime::TextOnly),
            meta(29, Regime::Multimodal),
            meta(51, Regime::ImageOnly),
        ];
        for scheme in [NormScheme::Softmax, NormScheme::Linear] {
            for alpha in [0.0, 0.3, 1.0] {
                let w = compute_weights(&participants, RunMode::CarMfl, alpha, scheme).unwrap();
                w.validate(participants.len()).unwrap();
            }
        }
    }

    #[test]
    fn degenerate_linear_alpha_zero_is_rejected() {
        // Every participant misses text, so alpha = 0 under linear wipes
        // the whole text-encoder vector.
        let participants = [meta(10, Regime::ImageOnly), meta(10, Regime::ImageOnly)];
        assert!(matches!(
            compute_weights(&participants, RunMode::CarMfl, 0.0, NormScheme::Linear),
            Err(Error::Config(_))
        ));
        // Softmax keeps them at e^0 each.
        let w = compute_weights(&participants, RunMode::CarMfl, 0.0, NormScheme::Softmax).unwrap();
        assert_eq!(w.txt_encoder, vec![0.5, 0.5]);
    }

    #[test]
    fn alpha_out_of_range_is_a_config_error() {
        let participants = [meta(10, Regime::Multimodal)];
        assert!(compute_weights(&participants, RunMode::CarMfl, 1.5, NormScheme::Softmax).is_err());
        assert!(
            compute_weights(&participants, RunMode::CarMfl, -0.1, NormScheme::Softmax).is_err()
        );
    }

    fn rand_model(seed: u64) -> Model {
        let mut rng = stream(seed, StreamKind::ModelInit);
        Model::init(4, 3, 5, 3, 2, &mut rng)
    }

    #[test]
    fn aggregating_identical_locals_is_identity() {
        let model = rand_model(41);
        let weights = AggregationWeights {
            img_encoder: vec![0.25, 0.75],
            txt_encoder: vec![0.5, 0.5],
            classifier: vec![0.9, 0.1],
        };
        let out = aggregate(&[model.clone(), model.clone()], &weights).unwrap();
        for (a, b) in out.flatten().iter().zip(model.flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn one_hot_weights_select_a_single_local() {
        let a = rand_model(42);
        let b = rand_model(43);
        let weights = AggregationWeights {
            img_encoder: vec![1.0, 0.0],
            txt_encoder: vec![1.0, 0.0],
            classifier: vec![1.0, 0.0],
        };
        let out = aggregate(&[a.clone(), b], &weights).unwrap();
        assert_eq!(out.flatten(), a.flatten());
    }

    #[test]
    fn aggregate_matches_blockwise_weighted_mean_oracle() {
        let locals = [rand_model(44), rand_model(45), rand_model(46)];
        let weights = AggregationWeights {
            img_encoder: vec![0.2, 0.3, 0.5],
            txt_encoder: vec![0.6, 0.1, 0.3],
            classifier: vec![0.25, 0.25, 0.5],
        };
        let out = aggregate(&locals, &weights).unwrap().flatten();

        // Independent oracle: per-index weighted sum using component
        // membership resolved from the shape ranges.
        let shape = locals[0].shape();
        let flats: Vec<Vec<f64>> = locals.iter().map(Model::flatten).collect();
        for (i, &got) in out.iter().enumerate() {
            let component = COMPONENTS
                .into_iter()
                .find(|&c| Model::component_range(&shape, c).contains(&i))
                .unwrap();
            let w = weights.component(component);
            let expected: f64 = flats.iter().zip(w).map(|(f, &wk)| wk * f[i]).sum();
            assert!((got - expected).abs() <= 1e-12, "index {i}");
        }
    }

    #[test]
    fn aggregate_rejects_shape_mismatch() {
        let a = rand_model(47);
        let mut rng = stream(48, StreamKind::ModelInit);
        let b = Model::init(5, 3, 5, 3, 2, &mut rng);
        let weights = AggregationWeights {
            img_encoder: vec![0.5, 0.5],
            txt_encoder: vec![0.5, 0.5],
            classifier: vec![0.5, 0.5],
        };
        assert!(aggregate(&[a, b], &weights).is_err());
    }

    fn tiny_dataset(regime: Regime, n: usize, seed: u64) -> Dataset {
        let spec =
            crate::data::GeneratorSpec::synthesize(2, 4, 3, 0.5, vec![0.5, 0.5], 0.0, 0.0, seed)
                .unwrap();
        let full = generate(&spec, n, seed).unwrap();
        match regime {
            Regime::Multimodal => full,
            Regime::ImageOnly => full.strip_txt().unwrap(),
            Regime::TextOnly => full.strip_img().unwrap(),
        }
    }

    #[test]
    fn zero_lr_training_returns_global_bit_exactly() {
        let data = tiny_dataset(Regime::Multimodal, 6, 50);
        let global = rand_model(51);
        let mut rng = stream(
            52,
            StreamKind::ClientTrain {
                client: 0,
                round: 1,
            },
        );
        let trained =
            local_train(&data, &global, 2, 3, AdamConfig::with_lr(0.0), &mut rng).unwrap();
        assert_eq!(trained.flatten(), global.flatten());
    }

    #[test]
    fn single_step_matches_hand_applied_adam() {
        let data = tiny_dataset(Regime::Multimodal, 1, 53);
        let global = rand_model(54);
        let mut rng = stream(
            55,
            StreamKind::ClientTrain {
                client: 0,
                round: 1,
            },
        );
        let trained = local_train(&data, &global, 1, 1, AdamConfig::default(), &mut rng).unwrap();

        let s = &data.samples()[0];
        let batch = [BatchItem {
            img: s.img.as_deref(),
            txt: s.txt.as_deref(),
            labels: &s.labels,
        }];
        let (grad, _) = backward(&global, &batch).unwrap();
        let mut params = global.flatten();
        let mut adam = AdamState::new(params.len(), AdamConfig::default());
        adam.step(&mut params, &grad).unwrap();
        assert_eq!(trained.flatten(), params);
    }

    #[test]
    fn zero_fill_leaves_absent_encoder_untouched() {
        let data = tiny_dataset(Regime::TextOnly, 8, 56);
        let global = rand_model(57);
        let mut rng = stream(
            58,
            StreamKind::ClientTrain {
                client: 0,
                round: 1,
            },
        );
        let trained = local_train(&data, &global, 2, 4, AdamConfig::default(), &mut rng).unwrap();
        let shape = global.shape();
        let img_range = Model::component_range(&shape, Component::ImageEncoder);
        let before = global.flatten();
        let after = trained.flatten();
        assert_eq!(before[img_range.clone()], after[img_range.clone()]);
        assert_ne!(before[img_range.end..], after[img_range.end..]);
    }

    #[test]
    fn empty_dataset_is_a_protocol_error() {
        let data = Dataset::new(vec![], 2, Regime::Multimodal).unwrap();
        let global = rand_model(59);
        let mut rng = stream(
            60,
            StreamKind::ClientTrain {
                client: 0,
                round: 1,
            },
        );
        assert!(matches!(
            local_train(&data, &global, 1, 2, AdamConfig::default(), &mut rng),
            Err(Error::Protocol(_))
        ));
    }

    fn quick_config(mode: RunMode) -> ExperimentConfig {
        ExperimentConfig {
            mode,
            img_only_clients: 1,
            txt_only_clients: 1,
            multimodal_clients: 1,
            samples_per_client: 12,
            rounds: 2,
            epochs: 1,
            batch_size: 4,
            k: 3,
            public_size: 10,
            val_size: 30,
            test_size: 30,
            num_labels: 4,
            d_img: 5,
            d_txt: 4,
            hidden_dim: 6,
            feat_dim: 4,
            noise_scale: 0.8,
            base_prior: 0.4,
            rare_labels: 0,
            seeds: vec![1],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn single_client_round_reduces_to_local_training() {
        let mut config = quick_config(RunMode::MFedAvg);
        config.img_only_clients = 0;
        config.txt_only_clients = 0;
        config.multimodal_clients = 1;
        let mut federation = Federation::new(&config, 5).unwrap();
        let global_before = federation.global().clone();
        federation.run_round(1).unwrap();

        let expected = {
            let data = federation.participants[0].data.clone();
            let mut rng = stream(
                5,
                StreamKind::ClientTrain {
                    client: 0,
                    round: 1,
                },
            );
            local_train(&data, &global_before, 1, 4, config.adam(), &mut rng).unwrap()
        };
        assert_eq!(federation.global().flatten(), expected.flatten());
    }

    #[test]
    fn every_mode_runs_and_reports() {
        for mode in RunMode::ALL {
            let config = quick_config(mode);
            let result = run_experiment(&config, 2).unwrap();
            assert_eq!(result.history.len(), 3, "{mode}");
            assert_eq!(result.round_digests.len(), 3, "{mode}");
            for report in &result.history {
                assert!(report.val_auc >= 0.0 && report.val_auc <= 1.0);
                assert!((report.img_weight_share + report.txt_weight_share - 1.0).abs() < 1e-9);
            }
            if mode == RunMode::CarMfl {
                assert!(!result.pairing_log.is_empty());
                assert!(result.mean_unique_pairings.is_some());
            } else {
                assert!(result.pairing_log.is_empty());
            }
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let config = quick_config(RunMode::CarMfl);
        let a = run_experiment(&config, 3).unwrap();
        let b = run_experiment(&config, 3).unwrap();
        assert_eq!(a.round_digests, b.round_digests);
        assert_eq!(a.pairing_log, b.pairing_log);
        let aucs = |r: &ExperimentResult| -> Vec<(f64, f64)> {
            r.history.iter().map(|h| (h.val_auc, h.test_auc)).collect()
        };
        assert_eq!(aucs(&a), aucs(&b));
        let c = run_experiment(&config, 4).unwrap();
        assert_ne!(a.round_digests, c.round_digests);
    }

    #[test]
    fn no_missing_modalities_makes_car_mfl_equal_mfedavgp() {
        let mut config = quick_config(RunMode::CarMfl);
        config.img_only_clients = 0;
        config.txt_only_clients = 0;
        config.multimodal_clients = 3;
        let car = run_experiment(&config, 6).unwrap();
        config.mode = RunMode::MFedAvgP;
        let plain = run_experiment(&config, 6).unwrap();
        assert_eq!(car.round_digests, plain.round_digests);
    }

    #[test]
    fn mode_strings_round_trip() {
        for mode in RunMode::ALL {
            assert_eq!(mode.to_string().parse::<RunMode>().unwrap(), mode);
        }
        assert!("NOT_A_MODE".parse::<RunMode>().is_err());
        for scheme in [NormScheme::Softmax, NormScheme::Linear] {
            assert_eq!(scheme.to_string().parse::<NormScheme>().unwrap(), scheme);
        }
    }

    #[test]
    fn model_shape_equality_guard() {
        // aggregate's mismatch check leans on ModelShape equality.
        let a: ModelShape = rand_model(61).shape();
        let b = rand_model(62).shape();
        assert_eq!(a, b);
    }
}
