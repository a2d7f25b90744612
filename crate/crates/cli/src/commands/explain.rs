use anyhow::{Context, Result};
use serde_json::json;
use specxplain::audio::{to_input_tensor, write_gray_png, MelImage};
use specxplain::dataset::Label;
use specxplain::xai::{
    gradcam_detailed, lime_explain, render_saliency, save_raw_map, smoothgrad, Method, SaliencyMap,
    Sidecar,
};
use specxplain::{Error, Rng, Tensor};

use super::train::load_model;
use super::{prepare_out, stem};
use crate::config::RunConfig;
use crate::{ExplainArgs, MethodArg};

fn summary(values: &[f64]) -> serde_json::Value {
    let n = values.len().max(1) as f64;
    json!({
        "min": values.iter().copied().fold(f64::INFINITY, f64::min),
        "max": values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        "mean": values.iter().sum::<f64>() / n,
    })
}

/// First channel of an `h × w × c` tensor in [0, 1], as 8-bit gray.
fn gray_pixels(t: &Tensor) -> Result<Vec<u8>> {
    let (_, _, c) = t.dims3()?;
    Ok(t.data()
        .chunks_exact(c)
        .map(|px| (px[0].clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect())
}

pub fn run(args: &ExplainArgs, config: &RunConfig) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let image = MelImage::load_png(&args.image)
        .with_context(|| format!("reading {}", args.image.display()))?;
    let width = model.input_shape()[1];
    if image.width() != width {
        return Err(Error::ArchitectureMismatch(format!(
            "{} is {} columns wide, the checkpoint expects {width}",
            args.image.display(),
            image.width()
        ))
        .into());
    }
    let input = to_input_tensor(&image, width)?;
    let probabilities = model.predict_proba(&input)?;
    let out = config.out_dir(args.out.as_deref());
    prepare_out(&out, config)?;
    let base = stem(&args.image);

    for label in args.class.labels() {
        let class = label.index();
        // One stream per class, so `--class both` matches two single-class runs.
        let mut rng = Rng::stream(config.seed, class);
        let name = |suffix: &str| {
            out.join(format!(
                "{base}_{}_{label}{suffix}",
                method_name(args.method)
            ))
        };
        let (map, stats, top_segments) = match args.method {
            MethodArg::Smoothgrad => {
                let map = smoothgrad(&model, &input, class, &config.smoothgrad, &mut rng)?;
                let stats = summary(&map.values);
                (map, stats, None)
            }
            MethodArg::Gradcam => {
                let result = gradcam_detailed(&model, &input, class, &config.gradcam)?;
                let stats = json!({
                    "map": summary(&result.map.values),
                    "tap_layer": result.tap_layer,
                    "feature_map_shape": result.raw.shape(),
                    "alphas": summary(&result.alphas),
                });
                (result.map, stats, None)
            }
            MethodArg::Lime => {
                let lime = lime_explain(&model, &image, class, &config.lime, &mut rng)?;
                // Selected segments carry the positive part of their surrogate weight.
                let values = lime
                    .segments
                    .labels
                    .iter()
                    .map(|&s| {
                        if lime.selected.contains(&s) {
                            lime.coefficients[s].max(0.0)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let masked = lime.masked_input(&input)?;
                write_gray_png(
                    &name("_masked.png"),
                    width,
                    image.height(),
                    &gray_pixels(&masked)?,
                )?;
                let stats = json!({
                    "segments": lime.segments.count,
                    "intercept": lime.intercept,
                    "r2": lime.r2,
                    "selected_coefficients": lime.selected.iter().map(|&s| lime.coefficients[s]).collect::<Vec<_>>(),
                });
                let map = SaliencyMap {
                    height: image.height(),
                    width,
                    values,
                    method: Method::Lime,
                    class,
                    params: serde_json::to_value(config.lime)?,
                };
                (map, stats, Some(lime.selected.clone()))
            }
        };
        render_saliency(&map, &image, &name(".png"))?;
        save_raw_map(&map, &name(".bin"))?;
        let sidecar = Sidecar {
            method: map.method.as_str().into(),
            class,
            params: map.params.clone(),
            stats: json!({
                "label": label,
                "image": args.image,
                "probability": probabilities[class],
                "predicted": Label::from_index(argmax(&probabilities))?,
                "method": stats,
            }),
            top_segments,
        };
        sidecar.save(&name(".json"))?;
        log::info!("wrote {}", name(".png").display());
    }
    Ok(())
}

fn method_name(method: MethodArg) -> &'static str {
    match method {
        MethodArg::Smoothgrad => Method::Smoothgrad.as_str(),
        MethodArg::Gradcam => Method::Gradcam.as_str(),
        MethodArg::Lime => Method::Lime.as_str(),
    }
}

fn argmax(values: &[f64]) -> usize {
    (0..values.len()).fold(0, |best, i| if values[i] > values[best] { i } else { best })
}
