use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;
use specxplain::audio::write_gray_png;
use specxplain::model::LayerSpec;
use specxplain::xai::{maximize_class, maximize_filter, AMImage};
use specxplain::{Error, Rng, Tensor};

use super::train::load_model;
use super::{prepare_out, write_json};
use crate::config::RunConfig;
use crate::{FiltersArgs, LayerArg};

/// Channel mean of an `h × w × c` image in [0, 1], as 8-bit gray.
fn gray_pixels(t: &Tensor) -> Result<Vec<u8>> {
    let (_, _, c) = t.dims3()?;
    Ok(t.data()
        .chunks_exact(c)
        .map(|px| {
            (px.iter().sum::<f64>() / c as f64 * 255.0)
                .round()
                .clamp(0.0, 255.0) as u8
        })
        .collect())
}

struct Job {
    file: String,
    /// 1-based filter or 0-based class, as reported.
    unit: usize,
    label: Option<String>,
}

pub fn run(args: &FiltersArgs, config: &RunConfig) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let [h, w, _] = model.input_shape();
    let out = config.out_dir(args.out.as_deref());

    let (layer_name, jobs): (String, Vec<Job>) = match args.layer {
        LayerArg::Conv(n) => {
            let index = model
                .conv_layer(n - 1)
                .context("model has fewer convolution layers")?;
            let LayerSpec::Conv2d { filters, .. } = model.layers()[index].spec() else {
                unreachable!("conv_layer returns convolution layers");
            };
            let (a, b) = args
                .filters
                .unwrap_or((filters.saturating_sub(4).max(1), filters));
            if b > filters {
                return Err(Error::Index(format!(
                    "filter {b} of layer {n}, which has filters 1..={filters}"
                ))
                .into());
            }
            let jobs = (a..=b)
                .map(|k| Job {
                    file: format!("layer{n}_filter{k:03}.png"),
                    unit: k,
                    label: None,
                })
                .collect();
            (n.to_string(), jobs)
        }
        LayerArg::Dense => {
            if args.filters.is_some() {
                bail!("--filters applies to convolution layers; use --class with --layer dense");
            }
            let jobs = args
                .class
                .labels()
                .into_iter()
                .map(|l| Job {
                    file: format!("dense_{l}.png"),
                    unit: l.index(),
                    label: Some(l.to_string()),
                })
                .collect();
            ("dense".into(), jobs)
        }
    };
    prepare_out(&out, config)?;
    log::info!("maximizing {} units of layer {layer_name}", jobs.len());

    let images: Vec<AMImage> = jobs
        .par_iter()
        .map(|job| {
            let mut rng = Rng::stream(config.seed, job.unit);
            match args.layer {
                LayerArg::Conv(n) => {
                    let index = model.conv_layer(n - 1).expect("checked above");
                    maximize_filter(&model, index, job.unit - 1, &config.actmax, &mut rng)
                }
                LayerArg::Dense => maximize_class(&model, job.unit, &config.actmax, &mut rng),
            }
        })
        .collect::<specxplain::Result<_>>()?;

    let mut entries = Vec::with_capacity(jobs.len());
    for (job, am) in jobs.iter().zip(&images) {
        write_gray_png(&out.join(&job.file), w, h, &gray_pixels(&am.image)?)?;
        entries.push(json!({
            "file": job.file,
            "layer": layer_name,
            "unit": job.unit,
            "class": job.label,
            "objective": am.objective,
            "initial_objective": am.initial_objective,
            "steps": am.steps,
        }));
    }
    write_json(
        &out.join(format!("layer{layer_name}_filters.json")),
        &json!({ "params": config.actmax, "images": entries }),
    )?;
    Ok(())
}
