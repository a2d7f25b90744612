use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{bilinear_resize, record_score, Method, SaliencyMap, ScoreKind};
use crate::error::{Error, Result};
use crate::model::{CnnModel, Layer, Mode};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Feature map the class score is differentiated against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradCamTap {
    /// Output of the pooling layer after the last convolution.
    #[default]
    PostPool,
    /// Rectified output of the last convolution, before pooling.
    PrePool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCamParams {
    pub tap: GradCamTap,
    pub score: ScoreKind,
}

#[derive(Clone, Debug)]
pub struct GradCamResult {
    /// Upsampled to the input grid and min-max normalized.
    pub map: SaliencyMap,
    /// `ReLU(Σ_k α_k A^k)` at feature-map resolution, `h' × w'`.
    pub raw: Tensor,
    pub alphas: Vec<f64>,
    /// Layer index the feature maps were taken from.
    pub tap_layer: usize,
}

/// Layer whose output holds the feature maps: the last convolution, followed
/// through its activation (and pooling, for the post-pool tap).
fn tap_layer(model: &CnnModel, tap: GradCamTap) -> Result<usize> {
    let layers = model.layers();
    let conv = (0..layers.len())
        .rev()
        .find(|&i| matches!(layers[i], Layer::Conv2d { .. }))
        .ok_or_else(|| Error::Param("model has no convolution layer".into()))?;
    let mut chosen = conv;
    for (i, layer) in layers.iter().enumerate().skip(conv + 1) {
        match layer {
            Layer::Relu => chosen = i,
            Layer::MaxPool2d if tap == GradCamTap::PostPool => {
                chosen = i;
                break;
            }
            _ => break,
        }
    }
    Ok(chosen)
}

/// Grad-CAM with its intermediate quantities.
pub fn gradcam_detailed(
    model: &CnnModel,
    input: &Tensor,
    class: usize,
    params: &GradCamParams,
) -> Result<GradCamResult> {
    let layer = tap_layer(model, params.tap)?;
    let features = model.forward_to(input, Mode::Inference, layer)?;
    let (h, w, k) = features.dims3()?;

    let mut tape = Tape::new();
    let a = tape.leaf(features.clone().with_grad(true));
    let score = record_score(model, &mut tape, a, layer + 1, class, params.score)?;
    let mut grads = tape.backward(score)?;
    let da = grads
        .take(a)
        .unwrap_or_else(|| Tensor::zeros(features.shape()));

    let mut alphas = vec![0.0; k];
    for px in da.data().chunks_exact(k) {
        for (alpha, g) in alphas.iter_mut().zip(px) {
            *alpha += g;
        }
    }
    for alpha in &mut alphas {
        *alpha /= (h * w) as f64;
    }
    let raw: Vec<f64> = features
        .data()
        .chunks_exact(k)
        .map(|px| {
            px.iter()
                .zip(&alphas)
                .map(|(v, a)| v * a)
                .sum::<f64>()
                .max(0.0)
        })
        .collect();

    let [in_h, in_w, _] = model.input_shape();
    let mut values = bilinear_resize(&raw, h, w, in_h, in_w);
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| {
            (l.min(v), u.max(v))
        });
    if hi > lo {
        for v in &mut values {
            *v = (*v - lo) / (hi - lo);
        }
    } else if hi > 0.0 {
        values.fill(1.0);
    }
    Ok(GradCamResult {
        map: SaliencyMap {
            height: in_h,
            width: in_w,
            values,
            method: Method::Gradcam,
            class,
            params: json!({ "tap": params.tap, "score": params.score, "layer": layer }),
        },
        raw: Tensor::new(&[h, w], raw)?,
        alphas,
        tap_layer: layer,
    })
}

/// Class-discriminative heat map in [0, 1] over the input grid.
pub fn gradcam(
    model: &CnnModel,
    input: &Tensor,
    class: usize,
    params: &GradCamParams,
) -> Result<SaliencyMap> {
    Ok(gradcam_detailed(model, input, class, params)?.map)
}
