//! Hand-written backpropagation for the fused multi-label model.
//!
//! The gradient flows classifier -> concatenation split -> L2-normalization
//! Jacobian -> MLP layers. An absent modality is a zero feature injected
//! after the (skipped) encoder, so no gradient reaches that encoder: its
//! block of the flat gradient stays exactly zero.

use super::encoder::{EncoderParams, ForwardTrace};
use super::linalg::{dot, l2_norm, Matrix};
use super::loss::{bce_loss, sigmoid};
use super::model::Model;
use crate::error::{Error, Result};

/// One training example viewed by the optimizer.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub img: Option<&'a [f64]>,
    pub txt: Option<&'a [f64]>,
    pub labels: &'a [u8],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModalityPattern {
    Both,
    ImageOnly,
    TextOnly,
}

impl<'a> BatchItem<'a> {
    pub fn pattern(&self) -> Result<ModalityPattern> {
        match (self.img.is_some(), self.txt.is_some()) {
            (true, true) => Ok(ModalityPattern::Both),
            (true, false) => Ok(ModalityPattern::ImageOnly),
            (false, true) => Ok(ModalityPattern::TextOnly),
            (false, false) => Err(Error::invalid_data("sample with no modality")),
        }
    }
}

struct EncoderGrad {
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

impl EncoderGrad {
    fn zeros(enc: &EncoderParams) -> Self {
        EncoderGrad {
            weights: enc
                .layers()
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: enc
                .layers()
                .iter()
                .map(|l| vec![0.0; l.out_dim()])
                .collect(),
        }
    }
}

/// Mean-batch-loss gradient w.r.t. the flat parameter vector, plus the loss
/// itself. All samples must share one modality-presence pattern.
pub fn backward(model: &Model, batch: &[BatchItem<'_>]) -> Result<(Vec<f64>, f64)> {
    if batch.is_empty() {
        return Err(Error::invalid_data("backward on empty batch"));
    }
    let pattern = batch[0].pattern()?;
    for item in batch {
        if item.pattern()? != pattern {
            return Err(Error::invalid_data(
                "batch mixes modality-presence patterns",
            ));
        }
        if item.labels.len() != model.num_labels() {
            return Err(Error::Shape {
                context: "backward labels",
                expected: model.num_labels(),
                got: item.labels.len(),
            });
        }
    }

    let d = model.feat_dim();
    let num_labels = model.num_labels();
    let mut img_grad = EncoderGrad::zeros(&model.img_encoder);
    let mut txt_grad = EncoderGrad::zeros(&model.txt_encoder);
    let mut cls_w_grad = Matrix::zeros(num_labels, 2 * d);
    let mut cls_b_grad = vec![0.0; num_labels];
    let mut total_loss = 0.0;

    // d(total)/d(logit) carries the 1/(batch * labels) of the double mean.
    let scale = 1.0 / (batch.len() as f64 * num_labels as f64);

    for item in batch {
        let img_trace = match item.img {
            Some(x) => Some(model.img_encoder.forward_traced(x)?),
            None => None,
        };
        let txt_trace = match item.txt {
            Some(x) => Some(model.txt_encoder.forward_traced(x)?),
            None => None,
        };

        let feat_of = |trace: &Option<ForwardTrace>| -> (Vec<f64>, f64) {
            match trace {
                Some((acts, _)) => {
                    let raw = acts.last().expect("non-empty encoder").clone();
                    let norm = l2_norm(&raw);
                    if norm > 0.0 {
                        (raw.iter().map(|v| v / norm).collect(), norm)
                    } else {
                        (vec![0.0; raw.len()], 0.0)
                    }
                }
                None => (vec![0.0; d], 0.0),
            }
        };
        let (img_feat, img_norm) = feat_of(&img_trace);
        let (txt_feat, txt_norm) = feat_of(&txt_trace);

        let mut fused = Vec::with_capacity(2 * d);
        fused.extend_from_slice(&img_feat);
        fused.extend_from_slice(&txt_feat);
        let mut logits = model.classifier.weight.matvec(&fused)?;
        for (z, b) in logits.iter_mut().zip(&model.classifier.bias) {
            *z += b;
        }
        total_loss += bce_loss(&logits, item.labels)?;

        let g: Vec<f64> = logits
            .iter()
            .zip(item.labels)
            .map(|(&z, &y)| (sigmoid(z) - f64::from(y)) * scale)
            .collect();

        cls_w_grad.add_outer(&g, &fused)?;
        for (gb, gv) in cls_b_grad.iter_mut().zip(&g) {
            *gb += gv;
        }

        let d_fused = model.classifier.weight.tr_matvec(&g)?;

        let apply_encoder = |enc: &EncoderParams,
                             grads: &mut EncoderGrad,
                             trace: &Option<ForwardTrace>,
                             input: &[f64],
                             feat: &[f64],
                             norm: f64,
                             d_feat: &[f64]|
         -> Result<()> {
            let (acts, pre_acts) = trace.as_ref().expect("present modality has a trace");
            // Through u = v / ||v||: dv = (du - u (u . du)) / ||v||.
            // The zero-feature convention is non-differentiable at v = 0; no
            // gradient is propagated there.
            if norm == 0.0 {
                return Ok(());
            }
            let u_dot = dot(feat, d_feat);
            let mut d_out: Vec<f64> = d_feat
                .iter()
                .zip(feat)
                .map(|(&du, &u)| (du - u * u_dot) / norm)
                .collect();
            for (idx, layer) in enc.layers().iter().enumerate().rev() {
                let pre = &pre_acts[idx];
                let delta: Vec<f64> = d_out
                    .iter()
                    .zip(pre)
                    .map(|(&g_out, &p)| g_out * layer.activation.derivative(p))
                    .collect();
                let layer_input: &[f64] = if idx == 0 { input } else { &acts[idx - 1] };
                grads.weights[idx].add_outer(&delta, layer_input)?;
                for (gb, dv) in grads.biases[idx].iter_mut().zip(&delta) {
                    *gb += dv;
                }
                if idx > 0 {
                    d_out = layer.weight.tr_matvec(&delta)?;
                }
            }
            Ok(())
        };

        if let Some(x) = item.img {
            apply_encoder(
                &model.img_encoder,
                &mut img_grad,
                &img_trace,
                x,
                &img_feat,
                img_norm,
                &d_fused[..d],
            )?;
        }
        if let Some(x) = item.txt {
            apply_encoder(
                &model.txt_encoder,
                &mut txt_grad,
                &txt_trace,
                x,
                &txt_feat,
                txt_norm,
                &d_fused[d..],
            )?;
        }
    }

    // Flat gradient in the canonical parameter order.
    let mut flat = Vec::with_capacity(model.param_count());
    for grad in [&img_grad, &txt_grad] {
        for (w, b) in grad.weights.iter().zip(&grad.biases) {
            flat.extend_from_slice(w.data());
            flat.extend_from_slice(b);
        }
    }
    flat.extend_from_slice(cls_w_grad.data());
    flat.extend_from_slice(&cls_b_grad);

    Ok((flat, total_loss / batch.len() as f64))
}

/// Batch loss without gradients (used by finite-difference tests and
/// evaluation helpers).
pub fn batch_loss(model: &Model, batch: &[BatchItem<'_>]) -> Result<f64> {
    let mut total = 0.0;
    for item in batch {
        let logits = model.forward(item.img, item.txt)?;
        total += bce_loss(&logits, item.labels)?;
    }
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{Component, Model};
    use crate::rng::{stream, StreamKind};
    use rand::Rng;

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rand_labels(rng: &mut impl Rng, n: usize) -> Vec<u8> {
        (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect()
    }

    #[test]
    fn saturated_negative_all_zero_labels_gives_near_zero_gradient() {
        let mut rng = stream(21, StreamKind::ModelInit);
        let mut model = Model::init(4, 3, 5, 3, 2, &mut rng);
        for w in model.classifier.weight.data_mut() {
            *w = 0.0;
        }
        model.classifier.bias = vec![-50.0, -50.0];
        let img = [0.5, -0.5, 1.0, 0.0];
        let txt = [1.0, 0.5, -1.0];
        let labels = [0u8, 0u8];
        let batch = [BatchItem {
            img: Some(&img),
            txt: Some(&txt),
            labels: &labels,
        }];
        let (grad, _) = backward(&model, &batch).unwrap();
        assert!(grad.iter().all(|g| g.abs() < 1e-18));
    }

    #[test]
    fn absent_image_blocks_encoder_gradient_bitwise() {
        let mut rng = stream(22, StreamKind::ModelInit);
        let model = Model::init(4, 3, 5, 3, 2, &mut rng);
        let txt1 = [1.0, 0.5, -1.0];
        let txt2 = [-0.4, 0.2, 0.9];
        let labels = [1u8, 0u8];
        let batch = [
            BatchItem {
                img: None,
                txt: Some(&txt1),
                labels: &labels,
            },
            BatchItem {
                img: None,
                txt: Some(&txt2),
                labels: &labels,
            },
        ];
        let (grad, _) = backward(&model, &batch).unwrap();
        let img_range = Model::component_range(&model.shape(), Component::ImageEncoder);
        for i in img_range.clone() {
            assert!(grad[i] == 0.0 && grad[i].is_sign_positive(), "index {i}");
        }
        // The rest of the gradient is not all-zero.
        assert!(grad[img_range.end..].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn mixed_pattern_batch_rejected() {
        let mut rng = stream(23, StreamKind::ModelInit);
        let model = Model::init(4, 3, 5, 3, 2, &mut rng);
        let img = [0.1, 0.2, 0.3, 0.4];
        let txt = [1.0, 0.5, -1.0];
        let labels = [1u8, 0u8];
        let batch = [
            BatchItem {
                img: Some(&img),
                txt: Some(&txt),
                labels: &labels,
            },
            BatchItem {
                img: None,
                txt: Some(&txt),
                labels: &labels,
            },
        ];
        assert!(backward(&model, &batch).is_err());
    }

    /// The loss is piecewise-smooth: it is non-differentiable at ReLU kinks
    /// and at the zero-norm point of the normalization. Finite differences
    /// are only meaningful away from those, so candidates whose
    /// pre-activations or feature norms sit inside a guard band are skipped.
    fn fd_safe(model: &Model, batch: &[BatchItem<'_>]) -> bool {
        for item in batch {
            for (enc, input) in [
                (&model.img_encoder, item.img),
                (&model.txt_encoder, item.txt),
            ] {
                let Some(x) = input else { continue };
                let (acts, pre_acts) = enc.forward_traced(x).unwrap();
                if pre_acts.iter().flatten().any(|p| p.abs() < 1e-3) {
                    return false;
                }
                if l2_norm(acts.last().unwrap()) < 0.05 {
                    return false;
                }
            }
        }
        true
    }

    /// Central finite differences over the flat parameter vector.
    fn numerical_gradient(model: &Model, batch: &[BatchItem<'_>], step: f64) -> Vec<f64> {
        let shape = model.shape();
        let base = model.flatten();
        let mut grad = vec![0.0; base.len()];
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += step;
            let mut minus = base.clone();
            minus[i] -= step;
            let lp = batch_loss(&Model::from_flat(&shape, &plus).unwrap(), batch).unwrap();
            let lm = batch_loss(&Model::from_flat(&shape, &minus).unwrap(), batch).unwrap();
            grad[i] = (lp - lm) / (2.0 * step);
        }
        grad
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = stream(24, StreamKind::ModelInit);
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 10 {
            attempts += 1;
            assert!(attempts < 200, "too many non-smooth candidates");
            let model = Model::init(5, 4, 6, 3, 3, &mut rng);
            let n_items = 1 + attempts % 3;
            let imgs: Vec<Vec<f64>> = (0..n_items).map(|_| rand_vec(&mut rng, 5)).collect();
            let txts: Vec<Vec<f64>> = (0..n_items).map(|_| rand_vec(&mut rng, 4)).collect();
            let labels: Vec<Vec<u8>> = (0..n_items).map(|_| rand_labels(&mut rng, 3)).collect();
            let pattern = attempts % 3;
            let batch: Vec<BatchItem<'_>> = (0..n_items)
                .map(|i| BatchItem {
                    img: if pattern != 1 {
                        Some(imgs[i].as_slice())
                    } else {
                        None
                    },
                    txt: if pattern != 2 {
                        Some(txts[i].as_slice())
                    } else {
                        None
                    },
                    labels: &labels[i],
                })
                .collect();
            if !fd_safe(&model, &batch) {
                continue;
            }
            checked += 1;
            let (analytic, _) = backward(&model, &batch).unwrap();
            let numeric = numerical_gradient(&model, &batch, 1e-5);
            for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                assert!(
                    rel < 1e-4,
                    "attempt {attempts} param {i}: analytic {a}, fd {n}"
                );
            }
        }
    }

    #[test]
    fn all_dead_hidden_layer_gives_zero_feature_and_zero_encoder_gradient() {
        // Zero-initialized output bias plus a fully dead ReLU layer lands the
        // raw feature exactly on the zero vector; the convention maps it to a
        // zero feature and propagates no gradient into that encoder.
        let mut rng = stream(26, StreamKind::ModelInit);
        let mut model = Model::init(2, 2, 3, 2, 2, &mut rng);
        for w in model.img_encoder.layers_mut()[0].weight.data_mut() {
            *w = -1.0; // any positive input kills every hidden unit
        }
        let img = [1.0, 2.0];
        let txt = [0.5, -0.3];
        let labels = [1u8, 0u8];
        let batch = [BatchItem {
            img: Some(&img),
            txt: Some(&txt),
            labels: &labels,
        }];
        let (grad, loss) = backward(&model, &batch).unwrap();
        assert!(loss.is_finite());
        let img_range = Model::component_range(&model.shape(), Component::ImageEncoder);
        assert!(grad[img_range].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_stay_finite() {
        let mut rng = stream(25, StreamKind::ModelInit);
        let model = Model::init(6, 6, 8, 4, 5, &mut rng);
        for _ in 0..20 {
            let img = rand_vec(&mut rng, 6);
            let txt = rand_vec(&mut rng, 6);
            let labels = rand_labels(&mut rng, 5);
            let batch = [BatchItem {
                img: Some(&img),
                txt: Some(&txt),
                labels: &labels,
            }];
            let (grad, loss) = backward(&model, &batch).unwrap();
            assert!(loss.is_finite());
            assert!(grad.iter().all(|g| g.is_finite()));
        }
    }
}
