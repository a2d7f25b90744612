use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quickshift::{quickshift, QuickshiftParams, SegmentLabels};
use crate::audio::{to_input_tensor, MelImage};
use crate::error::{Error, Result};
use crate::model::CnnModel;
use crate::rng::Rng;
use crate::tensor::Tensor;

const RIDGE: f64 = 1e-6;

/// Anything that maps an `h × w × c` input to class probabilities.
pub trait Classifier: Sync {
    fn predict_proba(&self, input: &Tensor) -> Result<Vec<f64>>;
}

impl Classifier for CnnModel {
    fn predict_proba(&self, input: &Tensor) -> Result<Vec<f64>> {
        CnnModel::predict_proba(self, input)
    }
}

/// Value written into switched-off segments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    /// Per-channel mean of the whole original image.
    #[default]
    ImageMean,
    /// Per-channel mean over the pixels of the segments that stay on.
    KeptMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeParams {
    pub n_features: usize,
    pub n_samples: usize,
    pub fill: FillMode,
    pub quickshift: QuickshiftParams,
}

impl Default for LimeParams {
    fn default() -> Self {
        Self {
            n_features: 5,
            n_samples: 150,
            fill: FillMode::ImageMean,
            quickshift: QuickshiftParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LimeExplanation {
    pub segments: SegmentLabels,
    pub class: usize,
    pub intercept: f64,
    /// Surrogate coefficient per segment.
    pub coefficients: Vec<f64>,
    /// Top `n_features` segment ids, strongest first.
    pub selected: Vec<usize>,
    /// Weighted coefficient of determination of the surrogate fit.
    pub r2: f64,
}

impl LimeExplanation {
    /// 1 on pixels of selected segments, 0 elsewhere.
    pub fn selection_mask(&self) -> Vec<bool> {
        let mut on = vec![false; self.segments.count];
        for &s in &self.selected {
            on[s] = true;
        }
        self.segments.labels.iter().map(|&l| on[l]).collect()
    }

    /// Copy of `input` keeping only the selected segments; the rest is zeroed.
    pub fn masked_input(&self, input: &Tensor) -> Result<Tensor> {
        let (h, w, c) = input.dims3()?;
        if (h, w) != (self.segments.height, self.segments.width) {
            return Err(Error::Shape(format!(
                "input {h}x{w} vs segmentation {}x{}",
                self.segments.height, self.segments.width
            )));
        }
        let mask = self.selection_mask();
        let mut out = input.clone();
        for (px, &keep) in out.data_mut().chunks_exact_mut(c).zip(&mask) {
            if !keep {
                px.fill(0.0);
            }
        }
        Ok(out)
    }
}

/// `C(S, S−1) + C(S, S−2)`: perturbations with one or two segments removed.
pub fn lime_combination_count(segments: u64) -> u128 {
    let s = segments as u128;
    if s < 2 {
        return s;
    }
    s + s * (s - 1) / 2
}

fn perturb(
    input: &Tensor,
    segments: &SegmentLabels,
    mask: &[bool],
    fill: FillMode,
    image_mean: &[f64],
) -> Tensor {
    let c = input.shape()[2];
    let fill_value: Vec<f64> = match fill {
        FillMode::ImageMean => image_mean.to_vec(),
        FillMode::KeptMean => {
            let mut sum = vec![0.0; c];
            let mut n = 0usize;
            for (px, &l) in input.data().chunks_exact(c).zip(&segments.labels) {
                if mask[l] {
                    n += 1;
                    for (s, v) in sum.iter_mut().zip(px) {
                        *s += v;
                    }
                }
            }
            if n == 0 {
                image_mean.to_vec()
            } else {
                sum.into_iter().map(|s| s / n as f64).collect()
            }
        }
    };
    let mut out = input.clone();
    for (px, &l) in out.data_mut().chunks_exact_mut(c).zip(&segments.labels) {
        if !mask[l] {
            px.copy_from_slice(&fill_value);
        }
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    dot / (na * nb)
}

/// Weighted ridge least squares with an unpenalized intercept. Returns
/// `(intercept, coefficients, weighted R²)`.
pub(crate) fn weighted_fit(
    masks: &[Vec<bool>],
    targets: &[f64],
    weights: &[f64],
) -> Result<(f64, Vec<f64>, f64)> {
    let s = masks.first().map_or(0, Vec::len);
    let n = masks.len();
    let x = DMatrix::from_fn(
        n,
        s + 1,
        |i, j| if j == 0 || masks[i][j - 1] { 1.0 } else { 0.0 },
    );
    let wx = DMatrix::from_fn(n, s + 1, |i, j| weights[i] * x[(i, j)]);
    let mut normal = x.transpose() * &wx;
    for j in 1..=s {
        normal[(j, j)] += RIDGE;
    }
    let rhs = wx.transpose() * DVector::from_column_slice(targets);
    let beta = normal
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| normal.lu().solve(&rhs))
        .ok_or_else(|| Error::Param("surrogate system is singular".into()))?;

    let total_w: f64 = weights.iter().sum();
    let mean = if total_w > 0.0 {
        targets.iter().zip(weights).map(|(y, w)| w * y).sum::<f64>() / total_w
    } else {
        0.0
    };
    let fitted = &x * &beta;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for i in 0..n {
        ss_res += weights[i] * (targets[i] - fitted[i]).powi(2);
        ss_tot += weights[i] * (targets[i] - mean).powi(2);
    }
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-20 {
        1.0
    } else {
        0.0
    };
    Ok((beta[0], beta.iter().skip(1).copied().collect(), r2))
}

/// LIME over a fixed segmentation of `input` (`h × w × c`).
pub fn lime_explain_segments<C: Classifier + ?Sized>(
    classifier: &C,
    input: &Tensor,
    segments: &SegmentLabels,
    class: usize,
    params: &LimeParams,
    rng: &mut Rng,
) -> Result<LimeExplanation> {
    let (h, w, c) = input.dims3()?;
    if (h, w) != (segments.height, segments.width) {
        return Err(Error::Shape(format!(
            "input {h}x{w} vs segmentation {}x{}",
            segments.height, segments.width
        )));
    }
    let s = segments.count;
    if s < 2 {
        return Err(Error::Param(format!(
            "LIME needs at least 2 segments, got {s}"
        )));
    }
    if params.n_features == 0 || params.n_features > s {
        return Err(Error::Param(format!(
            "n_features {} must lie in 1..={s}",
            params.n_features
        )));
    }
    if params.n_samples == 0 {
        return Err(Error::Param("LIME needs at least one sample".into()));
    }

    let masks: Vec<Vec<bool>> = (0..params.n_samples)
        .map(|_| (0..s).map(|_| rng.bernoulli(0.5)).collect())
        .collect();
    let mut image_mean = vec![0.0; c];
    for px in input.data().chunks_exact(c) {
        for (m, v) in image_mean.iter_mut().zip(px) {
            *m += v;
        }
    }
    for m in &mut image_mean {
        *m /= (h * w) as f64;
    }

    let scored: Vec<(f64, f64)> = masks
        .par_iter()
        .map(|mask| {
            let perturbed = perturb(input, segments, mask, params.fill, &image_mean);
            let probs = classifier.predict_proba(&perturbed)?;
            let p = *probs
                .get(class)
                .ok_or_else(|| Error::Index(format!("class {class} of {}", probs.len())))?;
            Ok((p, cosine(perturbed.data(), input.data())))
        })
        .collect::<Result<_>>()?;
    let targets: Vec<f64> = scored.iter().map(|t| t.0).collect();
    let sims: Vec<f64> = scored.iter().map(|t| t.1).collect();
    let (lo, hi) = sims
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| {
            (l.min(v), u.max(v))
        });
    let weights: Vec<f64> = if hi > lo {
        sims.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; sims.len()]
    };

    let (intercept, coefficients, r2) = weighted_fit(&masks, &targets, &weights)?;
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| coefficients[b].total_cmp(&coefficients[a]).then(a.cmp(&b)));
    order.truncate(params.n_features);
    Ok(LimeExplanation {
        segments: segments.clone(),
        class,
        intercept,
        coefficients,
        selected: order,
        r2,
    })
}

/// Segments `image` with quickshift and explains the model's class
/// probability over those segments.
pub fn lime_explain<C: Classifier + ?Sized>(
    classifier: &C,
    image: &MelImage,
    class: usize,
    params: &LimeParams,
    rng: &mut Rng,
) -> Result<LimeExplanation> {
    let segments = quickshift(image, &params.quickshift)?;
    let input = to_input_tensor(image, image.width())?;
    lime_explain_segments(classifier, &input, &segments, class, params, rng)
}
