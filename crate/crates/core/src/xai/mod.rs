//! Explanation methods: activation maximization, SmoothGrad, Grad-CAM and
//! LIME over quickshift superpixels.

mod actmax;
mod gradcam;
mod lime;
mod quickshift;
mod render;
mod smoothgrad;

pub use actmax::{linear_view, maximize_class, maximize_filter, AMImage, AmParams, LinearView};
pub use gradcam::{gradcam, gradcam_detailed, GradCamParams, GradCamResult, GradCamTap};
pub use lime::{
    lime_combination_count, lime_explain, lime_explain_segments, Classifier, FillMode,
    LimeExplanation, LimeParams,
};
pub use quickshift::{quickshift, quickshift_pixels, QuickshiftParams, SegmentLabels};
pub use render::{colorize, load_raw_map, overlay_pixels, render_saliency, save_raw_map, Sidecar};
pub use smoothgrad::{
    reduce_channels, smoothgrad, smoothgrad_sample, vanilla_gradient, vanilla_saliency,
    SmoothGradParams,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CnnModel;
use crate::tape::{NodeId, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Smoothgrad,
    Gradcam,
    Lime,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Smoothgrad => "smoothgrad",
            Method::Gradcam => "gradcam",
            Method::Lime => "lime",
        }
    }
}

/// Which class score gradients are taken of.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Pre-softmax logit.
    #[default]
    Logit,
    Probability,
}

/// Per-pixel relevance over the input grid, row-major `height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub method: Method,
    pub class: usize,
    pub params: serde_json::Value,
}

impl SaliencyMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn check_class(model: &CnnModel, class: usize) -> Result<()> {
    let n = model.num_classes();
    if class >= n {
        return Err(Error::Index(format!("class {class} of {n}")));
    }
    Ok(())
}

/// Records the network from layer `first` on and returns the scalar score
/// node of `class`.
fn record_score<'a>(
    model: &'a CnnModel,
    tape: &mut Tape<'a>,
    x: NodeId,
    first: usize,
    class: usize,
    score: ScoreKind,
) -> Result<NodeId> {
    check_class(model, class)?;
    let logits_layer = model.logits_layer();
    let trace = model.record_range(
        tape,
        x,
        crate::model::Mode::Inference,
        false,
        first,
        logits_layer,
    )?;
    let mut out = trace.last();
    if score == ScoreKind::Probability {
        out = tape.softmax(out);
    }
    tape.select(out, class)
}

/// Bilinear resampling of a row-major `h × w` grid with half-pixel centres.
pub(crate) fn bilinear_resize(
    src: &[f64],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|j| {
                let x = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = x.floor() as usize;
                (lo, (lo + 1).min(n_in - 1), x - lo as f64)
            })
            .collect()
    };
    let rows = taps(h, out_h);
    let cols = taps(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, tr) in &rows {
        for &(c0, c1, tc) in &cols {
            let top = (1.0 - tc) * src[r0 * w + c0] + tc * src[r0 * w + c1];
            let bottom = (1.0 - tc) * src[r1 * w + c0] + tc * src[r1 * w + c1];
            out.push((1.0 - tr) * top + tr * bottom);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_preserves_constants_and_identity() {
        let src: Vec<f64> = (0..12).map(f64::from).collect();
        assert_eq!(bilinear_resize(&src, 3, 4, 3, 4), src);
        let flat = vec![2.5; 6];
        assert!(bilinear_resize(&flat, 2, 3, 16, 20)
            .iter()
            .all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn bilinear_upsample_by_two() {
        let up = bilinear_resize(&[0.0, 4.0], 1, 2, 1, 4);
        assert_eq!(up, vec![0.0, 1.0, 3.0, 4.0]);
    }
}
