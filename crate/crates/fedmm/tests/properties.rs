//! Randomized invariants over wide input ranges: round-trips, simplex
//! guarantees, ordering conventions, and normalization behavior that must
//! hold for *every* input, not just the seeded fixtures.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fedmm::data::{generate, load_jsonl, save_jsonl, Dataset, GeneratorSpec, Regime, Sample};
use fedmm::federation::{compute_weights, NormScheme, ParticipantMeta, RunMode};
use fedmm::metrics::roc_auc;
use fedmm::nn::model::Model;
use fedmm::retrieval::{build_index, topk, Modality};

fn finite_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e12..1e12f64,
        Just(0.0),
        Just(-0.0),
        Just(1e-300),
        Just(-1e-300),
        Just(f64::MIN_POSITIVE),
    ]
}

proptest! {
    /// Any finite parameter vector survives the flat <-> structured round
    /// trip bit-for-bit.
    #[test]
    fn flatten_roundtrip(
        seed in any::<u64>(),
        d_img in 1usize..5,
        d_txt in 1usize..5,
        hidden in 1usize..5,
        feat in 1usize..4,
        labels in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::init(d_img, d_txt, hidden, feat, labels, &mut rng);
        let shape = model.shape();
        let flat = model.flatten();
        let rebuilt = Model::from_flat(&shape, &flat).unwrap();
        prop_assert_eq!(rebuilt.flatten(), flat);
    }

    /// Encoded features are unit length, except the exact zero vector for
    /// inputs that die in the network.
    #[test]
    fn encoded_features_are_normalized(
        seed in any::<u64>(),
        input in prop::collection::vec(-10.0..10.0f64, 4),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::init(4, 3, 5, 3, 2, &mut rng);
        let feat = model.img_encoder.encode(&input).unwrap();
        let norm = feat.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-9, "norm {}", norm);
    }

    /// Weight vectors always form a simplex, for every participant mix,
    /// alpha, and scheme — or fail loudly in the one documented degenerate
    /// case (linear normalization after alpha = 0 removed everyone).
    #[test]
    fn aggregation_weights_form_a_simplex(
        sizes in prop::collection::vec(1usize..2000, 1..8),
        regime_picks in prop::collection::vec(0u8..3, 8),
        alpha in 0.0..=1.0f64,
        softmax in any::<bool>(),
        mode_pick in 0u8..6,
    ) {
        let participants: Vec<ParticipantMeta> = sizes
            .iter()
            .zip(&regime_picks)
            .map(|(&size, &r)| ParticipantMeta {
                size,
                regime: match r {
                    0 => Regime::ImageOnly,
                    1 => Regime::TextOnly,
                    _ => Regime::Multimodal,
                },
            })
            .collect();
        let scheme = if softmax { NormScheme::Softmax } else { NormScheme::Linear };
        let mode = RunMode::ALL[mode_pick as usize % RunMode::ALL.len()];
        match compute_weights(&participants, mode, alpha, scheme) {
            Ok(w) => {
                for v in [&w.img_encoder, &w.txt_encoder, &w.classifier] {
                    prop_assert_eq!(v.len(), participants.len());
                    prop_assert!(v.iter().all(|&x| x >= 0.0));
                    let sum: f64 = v.iter().sum();
                    prop_assert!((sum - 1.0).abs() <= 1e-9, "sum {}", sum);
                }
            }
            Err(_) => {
                // Only the documented degenerate case may error.
                prop_assert!(scheme == NormScheme::Linear && alpha == 0.0);
                prop_assert!(mode == RunMode::CarMfl);
            }
        }
    }

    /// JSONL round trip preserves every sample bit-for-bit, including ids,
    /// full-precision floats, and absent modalities.
    #[test]
    fn jsonl_roundtrip(
        num_labels in 1usize..4,
        regime_pick in 0u8..3,
        ids in prop::collection::vec(any::<u64>(), 0..12),
        raw in prop::collection::vec(prop::collection::vec(finite_f64(), 6), 0..12),
        label_bits in prop::collection::vec(any::<u8>(), 0..12),
    ) {
        let regime = match regime_pick {
            0 => Regime::Multimodal,
            1 => Regime::ImageOnly,
            _ => Regime::TextOnly,
        };
        let n = ids.len().min(raw.len()).min(label_bits.len());
        let samples: Vec<Sample> = (0..n)
            .map(|i| Sample {
                id: ids[i],
                img: (regime != Regime::TextOnly).then(|| raw[i][..3].to_vec()),
                txt: (regime != Regime::ImageOnly).then(|| raw[i][3..].to_vec()),
                labels: (0..num_labels).map(|l| (label_bits[i] >> l) & 1).collect(),
            })
            .collect();
        let dataset = Dataset::new(samples, num_labels, regime).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.jsonl");
        save_jsonl(&dataset, &path).unwrap();
        let loaded = load_jsonl(&path).unwrap();
        prop_assert_eq!(loaded.num_labels(), dataset.num_labels());
        prop_assert_eq!(loaded.regime(), dataset.regime());
        prop_assert_eq!(loaded.samples(), dataset.samples());
    }

    /// Nearest-neighbor search equals a brute-force full sort for every k.
    #[test]
    fn topk_equals_brute_force(
        seed in any::<u64>(),
        n in 1usize..60,
        k_frac in 0.0..1.0f64,
        image in any::<bool>(),
        query in prop::collection::vec(-2.0..2.0f64, 3),
    ) {
        let spec = GeneratorSpec::synthesize(
            2, 4, 3, 1.0, vec![0.5, 0.5], 0.0, 0.0, seed,
        ).unwrap();
        let pool = generate(&spec, n, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xFFFF);
        let model = Model::init(4, 3, 4, 3, 2, &mut rng);
        let index = build_index(&model, &pool, 0).unwrap();
        let modality = if image { Modality::Image } else { Modality::Text };
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let got = topk(&index, &query, modality, k).unwrap();

        let mut all: Vec<(f64, u64)> = index
            .encoded(modality)
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let delta: f64 = row.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum();
                (delta, index.public_id(r))
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        prop_assert_eq!(got.len(), k);
        for (entry, want) in got.entries().iter().zip(&all) {
            prop_assert_eq!(entry.public_id, want.1);
            prop_assert_eq!(entry.delta, want.0);
        }
    }

    /// AUC is invariant under positive affine transforms of the scores.
    #[test]
    fn auc_affine_invariance(
        quantized in prop::collection::vec(-100i32..=100, 2..120),
        label_bits in prop::collection::vec(any::<bool>(), 2..120),
        slope in 0.5..10.0f64,
        intercept in -100.0..100.0f64,
    ) {
        let n = quantized.len().min(label_bits.len());
        let scores: Vec<f64> = quantized[..n].iter().map(|&q| f64::from(q) / 10.0).collect();
        let labels: Vec<u8> = label_bits[..n].iter().map(|&b| b as u8).collect();
        let base = roc_auc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|&s| slope * s + intercept).collect();
        let transformed = roc_auc(&mapped, &labels).unwrap();
        match (base, transformed) {
            (None, None) => {}
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b),
            other => prop_assert!(false, "degeneracy changed: {:?}", other),
        }
    }
}
