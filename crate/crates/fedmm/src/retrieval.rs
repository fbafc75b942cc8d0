//! Cross-modal augmentation by retrieval.
//!
//! At the start of a round the public pool is encoded with the current
//! global model into one L2-normalized feature matrix per modality. A
//! unimodal client encodes each of its samples with the same model,
//! searches the SAME modality's matrix for the k nearest neighbors under
//! squared Euclidean distance (exact, no approximate index), re-ranks the
//! candidates by Jaccard similarity of the multi-hot label sets, and
//! attaches the winner's complementary raw features to the sample. Labels
//! are never altered, and pairings stay on the client.

use std::collections::BTreeMap;

use crate::data::{Dataset, Regime};
use crate::error::{Error, Result};
use crate::nn::linalg::sq_dist;
use crate::nn::model::Model;

/// Which feature space a query searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Image,
    Text,
}

/// Encoded public pool for one round: per-modality normalized feature
/// rows plus the raw vectors handed out on augmentation. Immutable after
/// build; the round tag guards against reuse with a newer global model.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    round: u64,
    ids: Vec<u64>,
    labels: Vec<Vec<u8>>,
    img_encoded: Vec<Vec<f64>>,
    txt_encoded: Vec<Vec<f64>>,
    img_raw: Vec<Vec<f64>>,
    txt_raw: Vec<Vec<f64>>,
}

impl RetrievalIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn encoded(&self, modality: Modality) -> &[Vec<f64>] {
        match modality {
            Modality::Image => &self.img_encoded,
            Modality::Text => &self.txt_encoded,
        }
    }

    pub fn labels(&self, row: usize) -> &[u8] {
        &self.labels[row]
    }

    pub fn public_id(&self, row: usize) -> u64 {
        self.ids[row]
    }
}

/// One retrieval candidate: pool row, its id, and the squared Euclidean
/// distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopKEntry {
    pub public_id: u64,
    pub delta: f64,
    pub row: usize,
}

/// The k nearest pool entries, ascending by distance with ties broken by
/// ascending public id.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKSet {
    entries: Vec<TopKEntry>,
}

impl TopKSet {
    pub fn entries(&self) -> &[TopKEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One sample's augmentation outcome: which public sample filled the gap,
/// with the attached complementary feature and the scores that selected it.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub query_id: u64,
    pub public_id: u64,
    /// The raw complementary-modality vector copied onto the sample.
    pub feature: Vec<f64>,
    pub round: u64,
    pub delta: f64,
    pub jaccard: f64,
}

/// Encodes the public pool with the global model's encoders. The pool must
/// be fully multimodal.
pub fn build_index(global_model: &Model, public: &Dataset, round: u64) -> Result<RetrievalIndex> {
    if public.regime() != Regime::Multimodal {
        return Err(Error::invalid_data(
            "retrieval index requires a multimodal public pool",
        ));
    }
    let n = public.len();
    let mut index = RetrievalIndex {
        round,
        ids: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        img_encoded: Vec::with_capacity(n),
        txt_encoded: Vec::with_capacity(n),
        img_raw: Vec::with_capacity(n),
        txt_raw: Vec::with_capacity(n),
    };
    for s in public.samples() {
        let img = s.img.as_ref().expect("multimodal regime");
        let txt = s.txt.as_ref().expect("multimodal regime");
        index.ids.push(s.id);
        index.labels.push(s.labels.clone());
        index
            .img_encoded
            .push(global_model.img_encoder.encode(img)?);
        index
            .txt_encoded
            .push(global_model.txt_encoder.encode(txt)?);
        index.img_raw.push(img.clone());
        index.txt_raw.push(txt.clone());
    }
    Ok(index)
}

/// Exact k-nearest-neighbor search: the k smallest squared Euclidean
/// distances between the (already encoded and normalized) query and the
/// index rows of the same modality.
pub fn topk(
    index: &RetrievalIndex,
    query_feature: &[f64],
    modality: Modality,
    k: usize,
) -> Result<TopKSet> {
    if k == 0 || k > index.len() {
        return Err(Error::config(format!(
            "k = {k} must lie in 1..={}",
            index.len()
        )));
    }
    let rows = index.encoded(modality);
    if let Some(first) = rows.first() {
        if first.len() != query_feature.len() {
            return Err(Error::Shape {
                context: "topk query",
                expected: first.len(),
                got: query_feature.len(),
            });
        }
    }
    let mut entries: Vec<TopKEntry> = rows
        .iter()
        .enumerate()
        .map(|(row, feat)| TopKEntry {
            public_id: index.ids[row],
            delta: sq_dist(query_feature, feat),
            row,
        })
        .collect();
    entries.sort_unstable_by(|a, b| {
        a.delta
            .total_cmp(&b.delta)
            .then(a.public_id.cmp(&b.public_id))
    });
    entries.truncate(k);
    Ok(TopKSet { entries })
}

/// Jaccard similarity of two multi-hot label vectors:
/// |intersection| / |union|, with two empty sets scoring 1 (identical).
pub fn jaccard(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            context: "jaccard labels",
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x != 0, y != 0);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Picks the candidate with the highest Jaccard similarity to the query's
/// labels; ties go to the earlier entry (smaller distance).
pub fn refine(topk: &TopKSet, query_labels: &[u8], index: &RetrievalIndex) -> Result<u64> {
    refine_entry(topk, query_labels, index).map(|(entry, _)| entry.public_id)
}

fn refine_entry<'a>(
    topk: &'a TopKSet,
    query_labels: &[u8],
    index: &RetrievalIndex,
) -> Result<(&'a TopKEntry, f64)> {
    let mut best: Option<(&TopKEntry, f64)> = None;
    for entry in topk.entries() {
        let score = jaccard(query_labels, index.labels(entry.row))?;
        match best {
            Some((_, best_score)) if score <= best_score => {}
            _ => best = Some((entry, score)),
        }
    }
    best.ok_or_else(|| Error::protocol("refine over an empty candidate set"))
}

/// Fills every sample's missing modality from the pool: encode the present
/// modality, search it, refine by labels, copy the winner's complementary
/// raw features. Multimodal clients pass through unchanged. The index must
/// have been built for `round`.
pub fn augment_client(
    client: &Dataset,
    index: &RetrievalIndex,
    global_model: &Model,
    k: usize,
    round: u64,
) -> Result<(Dataset, Vec<AugmentedPair>)> {
    if index.round() != round {
        return Err(Error::protocol(format!(
            "stale retrieval index: built at round {}, augmenting round {round}",
            index.round()
        )));
    }
    if index.is_empty() {
        return Err(Error::protocol("empty public pool"));
    }
    if client.regime() == Regime::Multimodal {
        return Ok((client.clone(), Vec::new()));
    }

    let query_modality = match client.regime() {
        Regime::ImageOnly => Modality::Image,
        Regime::TextOnly => Modality::Text,
        Regime::Multimodal => unreachable!("handled above"),
    };
    let mut samples = Vec::with_capacity(client.len());
    let mut pairs = Vec::with_capacity(client.len());
    for s in client.samples() {
        let (query_raw, encoder) = match query_modality {
            Modality::Image => (s.img.as_ref(), &global_model.img_encoder),
            Modality::Text => (s.txt.as_ref(), &global_model.txt_encoder),
        };
        let query_raw = query_raw.expect("regime-checked modality");
        let query = encoder.encode(query_raw)?;
        let candidates = topk(index, &query, query_modality, k)?;
        let (entry, score) = refine_entry(&candidates, &s.labels, index)?;
        let feature = match query_modality {
            Modality::Image => index.txt_raw[entry.row].clone(),
            Modality::Text => index.img_raw[entry.row].clone(),
        };
        pairs.push(AugmentedPair {
            query_id: s.id,
            public_id: entry.public_id,
            feature: feature.clone(),
            round,
            delta: entry.delta,
            jaccard: score,
        });
        let mut sample = s.clone();
        match query_modality {
            Modality::Image => sample.txt = Some(feature),
            Modality::Text => sample.img = Some(feature),
        }
        samples.push(sample);
    }
    Dataset::new(samples, client.num_labels(), Regime::Multimodal)
        .map(|augmented| (augmented, pairs))
}

/// Distinct-retrieved-partner counts per query sample across rounds, plus
/// their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingStats {
    pub unique_partners: BTreeMap<u64, usize>,
    pub mean_unique: f64,
}

pub fn pairing_stats(history: &[AugmentedPair]) -> Result<PairingStats> {
    if history.is_empty() {
        return Err(Error::protocol("pairing stats need at least one round"));
    }
    let mut partners: BTreeMap<u64, std::collections::BTreeSet<u64>> = BTreeMap::new();
    for pair in history {
        partners
            .entry(pair.query_id)
            .or_default()
            .insert(pair.public_id);
    }
    let unique_partners: BTreeMap<u64, usize> = partners
        .into_iter()
        .map(|(id, set)| (id, set.len()))
        .collect();
    let mean_unique = unique_partners.values().sum::<usize>() as f64 / unique_partners.len() as f64;
    Ok(PairingStats {
        unique_partners,
        mean_unique,
    })
}
