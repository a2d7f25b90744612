use std::path::PathBuf;

use anyhow::Result;
use specxplain::audio::write_gray_png;
use specxplain::dataset::{synth_generate, Manifest, Record};
use specxplain::Rng;

use super::{create_dir, prepare_out, write_json};
use crate::config::RunConfig;
use crate::SynthArgs;

/// `images/NNNN.png`, the 0/255 patch mask at `masks/NNNN.png`, a manifest
/// and the generating spec.
pub fn run(args: &SynthArgs, config: &RunConfig) -> Result<()> {
    let out = config.out_dir(args.out.as_deref());
    let spec = &config.synth;
    let samples = synth_generate(spec, &mut Rng::seeded(config.seed))?;
    prepare_out(&out, config)?;
    create_dir(&out.join("images"))?;
    create_dir(&out.join("masks"))?;

    let mut records = Vec::with_capacity(samples.len());
    let mut masks = String::from("image,mask,label\n");
    for (i, s) in samples.iter().enumerate() {
        let image = PathBuf::from("images").join(format!("{i:04}.png"));
        let mask = PathBuf::from("masks").join(format!("{i:04}.png"));
        s.image.save_png(&out.join(&image))?;
        write_gray_png(&out.join(&mask), spec.width, spec.height, &s.mask)?;
        masks += &format!("{},{},{}\n", image.display(), mask.display(), s.label);
        records.push(Record {
            path: image,
            label: s.label,
        });
    }
    Manifest::new(records).save(&out.join("manifest.csv"))?;
    std::fs::write(out.join("masks.csv"), masks)?;
    write_json(&out.join("spec.json"), spec)?;
    log::info!(
        "wrote {} synthetic images to {}",
        samples.len(),
        out.display()
    );
    Ok(())
}
