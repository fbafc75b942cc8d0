//! The full model: per-modality encoders, concatenation fusion, and a linear
//! multi-label classifier head, plus the canonical flat-vector view used for
//! aggregation and checkpoints.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;

use super::encoder::{Activation, DenseLayer, EncoderParams};
use super::linalg::Matrix;
use crate::error::{Error, Result};

/// Linear head over the concatenation `[image feature | text feature]`.
/// Column count is exactly `2 * feat_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub weight: Matrix, // num_labels x 2*feat_dim
    pub bias: Vec<f64>, // num_labels
}

impl ClassifierParams {
    pub fn num_labels(&self) -> usize {
        self.weight.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.weight.cols() / 2
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    pub fn init(num_labels: usize, feat_dim: usize, rng: &mut impl Rng) -> Self {
        let layer = DenseLayer::init(2 * feat_dim, num_labels, Activation::Identity, rng);
        ClassifierParams {
            weight: layer.weight,
            bias: layer.bias,
        }
    }
}

/// Structural description of a [`Model`]; enough to rebuild one from a flat
/// parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelShape {
    /// (in_dim, out_dim, activation-is-relu) per image-encoder layer.
    pub img_layers: Vec<(usize, usize, bool)>,
    pub txt_layers: Vec<(usize, usize, bool)>,
    pub num_labels: usize,
    pub feat_dim: usize,
}

impl ModelShape {
    pub fn param_count(&self) -> usize {
        let enc =
            |ls: &[(usize, usize, bool)]| ls.iter().map(|&(i, o, _)| i * o + o).sum::<usize>();
        enc(&self.img_layers)
            + enc(&self.txt_layers)
            + self.num_labels * 2 * self.feat_dim
            + self.num_labels
    }
}

/// Which flat-vector block a parameter belongs to. Aggregation weights are
/// applied per component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    ImageEncoder,
    TextEncoder,
    Classifier,
}

pub const COMPONENTS: [Component; 3] = [
    Component::ImageEncoder,
    Component::TextEncoder,
    Component::Classifier,
];

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub img_encoder: EncoderParams,
    pub txt_encoder: EncoderParams,
    pub classifier: ClassifierParams,
}

impl Model {
    /// Fresh model with two-layer MLP encoders and a linear head. All
    /// parameter draws come from `rng` in a fixed order.
    pub fn init(
        d_img: usize,
        d_txt: usize,
        hidden: usize,
        feat_dim: usize,
        num_labels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Model {
            img_encoder: EncoderParams::init_mlp(d_img, hidden, feat_dim, rng),
            txt_encoder: EncoderParams::init_mlp(d_txt, hidden, feat_dim, rng),
            classifier: ClassifierParams::init(num_labels, feat_dim, rng),
        }
    }

    pub fn feat_dim(&self) -> usize {
        self.classifier.feat_dim()
    }

    pub fn num_labels(&self) -> usize {
        self.classifier.num_labels()
    }

    pub fn shape(&self) -> ModelShape {
        let enc = |e: &EncoderParams| {
            e.layers()
                .iter()
                .map(|l| (l.in_dim(), l.out_dim(), l.activation == Activation::Relu))
                .collect()
        };
        ModelShape {
            img_layers: enc(&self.img_encoder),
            txt_layers: enc(&self.txt_encoder),
            num_labels: self.classifier.num_labels(),
            feat_dim: self.classifier.feat_dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.img_encoder.param_count()
            + self.txt_encoder.param_count()
            + self.classifier.param_count()
    }

    /// Canonical flattening order: image-encoder layers (weights row-major,
    /// then bias, per layer), text-encoder layers, classifier weight, then
    /// classifier bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for enc in [&self.img_encoder, &self.txt_encoder] {
            for layer in enc.layers() {
                out.extend_from_slice(layer.weight.data());
                out.extend_from_slice(&layer.bias);
            }
        }
        out.extend_from_slice(self.classifier.weight.data());
        out.extend_from_slice(&self.classifier.bias);
        out
    }

    /// Rebuilds a model from the canonical flat layout.
    pub fn from_flat(shape: &ModelShape, flat: &[f64]) -> Result<Self> {
        if flat.len() != shape.param_count() {
            return Err(Error::Shape {
                context: "Model::from_flat",
                expected: shape.param_count(),
                got: flat.len(),
            });
        }
        let mut pos = 0usize;
        let mut take_layers = |spec: &[(usize, usize, bool)]| -> Result<EncoderParams> {
            let mut layers = Vec::with_capacity(spec.len());
            for &(in_dim, out_dim, relu) in spec {
                let w_len = in_dim * out_dim;
                let weight = Matrix::from_vec(out_dim, in_dim, flat[pos..pos + w_len].to_vec())?;
                pos += w_len;
                let bias = flat[pos..pos + out_dim].to_vec();
                pos += out_dim;
                layers.push(DenseLayer {
                    weight,
                    bias,
                    activation: if relu {
                        Activation::Relu
                    } else {
                        Activation::Identity
                    },
                });
            }
            EncoderParams::new(layers)
        };
        let img_encoder = take_layers(&shape.img_layers)?;
        let txt_encoder = take_layers(&shape.txt_layers)?;
        let w_len = shape.num_labels * 2 * shape.feat_dim;
        let weight = Matrix::from_vec(
            shape.num_labels,
            2 * shape.feat_dim,
            flat[pos..pos + w_len].to_vec(),
        )?;
        pos += w_len;
        let bias = flat[pos..pos + shape.num_labels].to_vec();
        Ok(Model {
            img_encoder,
            txt_encoder,
            classifier: ClassifierParams { weight, bias },
        })
    }

    /// Flat-vector index range of each component block.
    pub fn component_range(shape: &ModelShape, component: Component) -> Range<usize> {
        let enc_len =
            |ls: &[(usize, usize, bool)]| ls.iter().map(|&(i, o, _)| i * o + o).sum::<usize>();
        let img = enc_len(&shape.img_layers);
        let txt = enc_len(&shape.txt_layers);
        match component {
            Component::ImageEncoder => 0..img,
            Component::TextEncoder => img..img + txt,
            Component::Classifier => img + txt..shape.param_count(),
        }
    }

    /// Per-label logits. An absent modality contributes the zero feature
    /// vector after the (skipped) encoder.
    pub fn forward(&self, img: Option<&[f64]>, txt: Option<&[f64]>) -> Result<Vec<f64>> {
        if img.is_none() && txt.is_none() {
            return Err(Error::invalid_data("forward needs at least one modality"));
        }
        let d = self.feat_dim();
        let img_feat = match img {
            Some(x) => self.img_encoder.encode(x)?,
            None => vec![0.0; d],
        };
        let txt_feat = match txt {
            Some(x) => self.txt_encoder.encode(x)?,
            None => vec![0.0; d],
        };
        let mut fused = Vec::with_capacity(2 * d);
        fused.extend_from_slice(&img_feat);
        fused.extend_from_slice(&txt_feat);
        let mut logits = self.classifier.weight.matvec(&fused)?;
        for (z, b) in logits.iter_mut().zip(&self.classifier.bias) {
            *z += b;
        }
        Ok(logits)
    }
}

/// Writes a flat parameter vector as a little-endian length header (u64)
/// followed by little-endian f64 values. Checkpoint file format.
pub fn write_flat(path: &Path, flat: &[f64]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&(flat.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(flat.len() * 8);
    for v in flat {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_flat(path: &Path) -> Result<Vec<f64>> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 8];
    file.read_exact(&mut header)?;
    let len = u64::from_le_bytes(header) as usize;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(Error::invalid_data(format!(
            "checkpoint payload is {} bytes, header says {}",
            bytes.len(),
            len * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};

    fn test_model(seed: u64) -> Model {
        let mut rng = stream(seed, StreamKind::ModelInit);
        Model::init(6, 5, 8, 4, 3, &mut rng)
    }

    #[test]
    fn flatten_unflatten_roundtrip() {
        let model = test_model(3);
        let flat = model.flatten();
        let back = Model::from_flat(&model.shape(), &flat).unwrap();
        assert_eq!(back.flatten(), flat);
        assert_eq!(back, model);
    }

    #[test]
    fn component_ranges_cover_and_partition() {
        let model = test_model(4);
        let shape = model.shape();
        let img = Model::component_range(&shape, Component::ImageEncoder);
        let txt = Model::component_range(&shape, Component::TextEncoder);
        let cls = Model::component_range(&shape, Component::Classifier);
        assert_eq!(img.start, 0);
        assert_eq!(img.end, txt.start);
        assert_eq!(txt.end, cls.start);
        assert_eq!(cls.end, model.param_count());
        assert_eq!(img.len(), model.img_encoder.param_count());
        assert_eq!(txt.len(), model.txt_encoder.param_count());
        assert_eq!(cls.len(), model.classifier.param_count());
    }

    #[test]
    fn forward_zero_classifier_returns_bias() {
        let mut model = test_model(5);
        for w in model.classifier.weight.data_mut() {
            *w = 0.0;
        }
        model.classifier.bias = vec![0.25, -1.5, 3.0];
        let logits = model
            .forward(Some(&[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]), Some(&[1.0; 5]))
            .unwrap();
        assert_eq!(logits, vec![0.25, -1.5, 3.0]);
    }

    #[test]
    fn forward_absent_image_uses_only_text_columns() {
        let model = test_model(6);
        let d = model.feat_dim();
        let txt = vec![0.3, -0.2, 1.0, 0.7, -0.9];
        let logits = model.forward(None, Some(&txt)).unwrap();

        // Hand-computed: zero image block means logits depend only on the
        // text columns of the classifier.
        let txt_feat = model.txt_encoder.encode(&txt).unwrap();
        for (r, &z) in logits.iter().enumerate() {
            let row = model.classifier.weight.row(r);
            let mut expect = model.classifier.bias[r];
            for (j, &f) in txt_feat.iter().enumerate() {
                expect += row[d + j] * f;
            }
            assert!((z - expect).abs() < 1e-12);
        }

        // Changing image columns must not change the output.
        let mut altered = model.clone();
        for r in 0..altered.classifier.num_labels() {
            for c in 0..d {
                altered.classifier.weight.set(r, c, 99.0);
            }
        }
        let logits2 = altered.forward(None, Some(&txt)).unwrap();
        assert_eq!(logits, logits2);
    }

    #[test]
    fn forward_matches_hand_matrix_product() {
        let model = test_model(7);
        let img = vec![0.1, -0.4, 0.9, 0.2, -0.8, 0.6];
        let txt = vec![1.2, 0.3, -0.5, 0.0, 0.4];
        let logits = model.forward(Some(&img), Some(&txt)).unwrap();

        let fi = model.img_encoder.encode(&img).unwrap();
        let ft = model.txt_encoder.encode(&txt).unwrap();
        for (r, &z) in logits.iter().enumerate() {
            let row = model.classifier.weight.row(r);
            let mut acc = model.classifier.bias[r];
            for (j, &f) in fi.iter().enumerate() {
                acc += row[j] * f;
            }
            for (j, &f) in ft.iter().enumerate() {
                acc += row[model.feat_dim() + j] * f;
            }
            assert!((z - acc).abs() < 1e-12, "label {r}: {z} vs {acc}");
        }
    }

    #[test]
    fn forward_requires_a_modality() {
        let model = test_model(8);
        assert!(model.forward(None, None).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let flat = test_model(9).flatten();
        write_flat(&path, &flat).unwrap();
        let back = read_flat(&path).unwrap();
        assert_eq!(back, flat);
    }
}
