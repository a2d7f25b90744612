use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use specxplain::audio::{augment_set, load_wav, write_wav, AudioClip};
use specxplain::Rng;

use super::{create_dir, prepare_out, relative, wav_files};
use crate::config::RunConfig;
use crate::AugmentArgs;

/// Originals are copied byte for byte; variant `k` of `x.wav` becomes
/// `x_augKK.wav` in the same relative directory. `augmentations.csv` lists
/// every written file.
pub fn run(args: &AugmentArgs, config: &RunConfig) -> Result<()> {
    let dir = &args.audio_dir;
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let out = config.out_dir(args.out.as_deref());
    let files = wav_files(dir)?;
    if files.is_empty() {
        bail!("no .wav files under {}", dir.display());
    }

    let mut sources: Vec<PathBuf> = Vec::new();
    let mut clips: Vec<AudioClip> = Vec::new();
    for path in files {
        match load_wav(&path) {
            Ok(clip) => {
                sources.push(path);
                clips.push(clip);
            }
            Err(e) => log::warn!("skipping {}: {e:#}", path.display()),
        }
    }
    if clips.is_empty() {
        bail!("no readable WAV files under {}", dir.display());
    }
    prepare_out(&out, config)?;
    log::info!(
        "augmenting {} clips with {} variants each",
        clips.len(),
        config.augment.variants_per_clip()
    );

    let augmented = augment_set(&clips, &config.augment, &mut Rng::seeded(config.seed))?;
    let mut rows = String::from("path,source,variant,stretch,noise_amp,shift\n");
    let mut jobs = Vec::with_capacity(augmented.len());
    let mut variant = 0;
    for (i, a) in augmented.iter().enumerate() {
        let src = &sources[a.source];
        let rel = relative(src, dir);
        let is_original = i == 0 || augmented[i - 1].source != a.source;
        variant = if is_original { 0 } else { variant + 1 };
        let name = if is_original {
            rel.clone()
        } else {
            let stem = super::stem(&rel);
            rel.with_file_name(format!("{stem}_aug{variant:02}.wav"))
        };
        let aug = a.augmentation;
        writeln!(
            rows,
            "{},{},{variant},{},{},{}",
            name.display(),
            rel.display(),
            aug.stretch,
            aug.noise_amp,
            aug.shift
        )?;
        jobs.push((out.join(&name), is_original.then_some(src), &a.clip));
    }

    jobs.par_iter()
        .try_for_each(|(target, original, clip)| -> Result<()> {
            if let Some(parent) = target.parent() {
                create_dir(parent)?;
            }
            match original {
                Some(src) => {
                    std::fs::copy(src, target)
                        .with_context(|| format!("copying {}", src.display()))?;
                }
                None => write_wav(clip, target)?,
            }
            Ok(())
        })?;
    let csv = out.join("augmentations.csv");
    std::fs::write(&csv, rows).with_context(|| format!("writing {}", csv.display()))?;
    log::info!("wrote {} files to {}", jobs.len(), out.display());
    Ok(())
}
