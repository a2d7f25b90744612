use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;
use specxplain::audio::{load_wav, mel_spectrogram, resize_width, to_mel_image};
use specxplain::dataset::{Label, Manifest, Record};

use super::{create_dir, prepare_out, relative, wav_files, write_json};
use crate::config::RunConfig;
use crate::PreprocessArgs;

struct Input {
    wav: PathBuf,
    /// Output path relative to the image directory, without extension.
    name: PathBuf,
    label: Label,
}

fn discover(args: &PreprocessArgs) -> Result<Vec<Input>> {
    let dir = &args.audio_dir;
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut inputs = Vec::new();
    if let Some(label) = args.label {
        for wav in wav_files(dir)? {
            let name = Path::new(label.as_str()).join(relative(&wav, dir).with_extension(""));
            inputs.push(Input { wav, name, label });
        }
    } else {
        let mut found = false;
        for label in Label::ALL {
            let sub = dir.join(label.as_str());
            if !sub.is_dir() {
                continue;
            }
            found = true;
            for wav in wav_files(&sub)? {
                let name = Path::new(label.as_str()).join(relative(&wav, &sub).with_extension(""));
                inputs.push(Input { wav, name, label });
            }
        }
        if !found {
            bail!(
                "{} has neither covid/ nor non_covid/ subdirectories; pass --label for an unlabeled directory",
                dir.display()
            );
        }
    }
    if inputs.is_empty() {
        bail!("no .wav files under {}", dir.display());
    }
    Ok(inputs)
}

/// Natural spectrogram width and the written PNG path, relative to `out`.
fn convert(input: &Input, out: &Path, config: &RunConfig) -> Result<(usize, PathBuf)> {
    let clip = load_wav(&input.wav)?;
    let spec = mel_spectrogram(&clip, &config.audio.mel())?;
    let mut image = to_mel_image(&spec)?;
    let natural_width = image.width();
    image.provenance.source = input.wav.to_string_lossy().into_owned();
    let image = resize_width(&image, config.audio.target_width)?;

    let rel = Path::new("images").join(&input.name).with_extension("png");
    let png = out.join(&rel);
    if let Some(parent) = png.parent() {
        create_dir(parent)?;
    }
    image.save_png(&png)?;
    let sidecar = json!({
        "source": image.provenance.source,
        "label": input.label,
        "sample_rate": clip.sample_rate(),
        "samples": clip.len(),
        "duration_secs": clip.duration_secs(),
        "natural_width": natural_width,
        "width": image.width(),
        "height": image.height(),
        "mel": config.audio.mel(),
    });
    write_json(&png.with_extension("json"), &sidecar)?;
    Ok((natural_width, rel))
}

pub fn run(args: &PreprocessArgs, config: &RunConfig) -> Result<()> {
    let out = config.out_dir(args.out.as_deref());
    let inputs = discover(args)?;
    prepare_out(&out, config)?;
    log::info!(
        "converting {} WAV files into {}",
        inputs.len(),
        out.display()
    );

    let results: Vec<Result<(usize, PathBuf)>> = inputs
        .par_iter()
        .map(|i| convert(i, &out, config))
        .collect();
    let mut records = Vec::new();
    let mut widths: BTreeMap<usize, usize> = BTreeMap::new();
    let mut failed = 0;
    for (input, result) in inputs.iter().zip(results) {
        match result {
            Ok((width, rel)) => {
                *widths.entry(width).or_default() += 1;
                records.push(Record {
                    path: rel,
                    label: input.label,
                });
            }
            Err(e) => {
                failed += 1;
                log::warn!("skipping {}: {e:#}", input.wav.display());
            }
        }
    }
    if records.is_empty() {
        bail!("all {} input files failed to convert", inputs.len());
    }

    Manifest::new(records).save(&out.join("manifest.csv"))?;
    let widths_path = out.join("widths.csv");
    let mut text = String::from("width,count\n");
    for (w, n) in &widths {
        text += &format!("{w},{n}\n");
    }
    std::fs::write(&widths_path, text)
        .with_context(|| format!("writing {}", widths_path.display()))?;
    log::info!("wrote {} images ({failed} failed)", inputs.len() - failed);
    Ok(())
}
