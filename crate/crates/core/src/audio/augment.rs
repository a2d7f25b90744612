use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{add_noise, time_shift, time_stretch, AudioClip, Augmentation, CANONICAL_SHIFT};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Which of noise and shift are layered on top of a stretch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseShiftCombo {
    pub noise: bool,
    pub shift: bool,
}

/// Grid of variants produced per input clip: every stretch factor crossed
/// with every combo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPlan {
    pub stretch_factors: Vec<f64>,
    pub combos: Vec<NoiseShiftCombo>,
    pub noise_amplitude: f64,
    pub shift_offset: i64,
}

impl Default for AugmentationPlan {
    fn default() -> Self {
        let combo = |noise, shift| NoiseShiftCombo { noise, shift };
        Self {
            stretch_factors: (3..=19).map(|i| i as f64 / 10.0).collect(),
            combos: vec![
                combo(false, false),
                combo(true, false),
                combo(false, true),
                combo(true, true),
            ],
            noise_amplitude: 0.005,
            shift_offset: CANONICAL_SHIFT,
        }
    }
}

impl AugmentationPlan {
    /// A plan that produces no variants.
    pub fn empty() -> Self {
        Self {
            stretch_factors: Vec::new(),
            ..Self::default()
        }
    }

    pub fn variants_per_clip(&self) -> usize {
        self.stretch_factors.len() * self.combos.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedClip {
    pub clip: AudioClip,
    /// Position of the source clip in the input list.
    pub source: usize,
    pub augmentation: Augmentation,
}

/// Variants of one clip, in plan order (factor-major).
pub fn augment_clip(
    clip: &AudioClip,
    plan: &AugmentationPlan,
    rng: &mut Rng,
) -> Result<Vec<AudioClip>> {
    Ok(augment_one(clip, 0, plan, rng)?
        .into_iter()
        .map(|a| a.clip)
        .collect())
}

fn augment_one(
    clip: &AudioClip,
    source: usize,
    plan: &AugmentationPlan,
    rng: &mut Rng,
) -> Result<Vec<AugmentedClip>> {
    let mut out = Vec::with_capacity(plan.variants_per_clip());
    for &factor in &plan.stretch_factors {
        let stretched = time_stretch(clip, factor)?;
        for combo in &plan.combos {
            let mut variant = stretched.clone();
            let mut augmentation = Augmentation {
                stretch: factor,
                ..Augmentation::default()
            };
            if combo.noise {
                variant = add_noise(&variant, plan.noise_amplitude, rng)?;
                augmentation.noise_amp = plan.noise_amplitude;
            }
            if combo.shift {
                // Short clips wrap the canonical offset around their length.
                let offset = plan.shift_offset % variant.len() as i64;
                variant = time_shift(&variant, offset)?;
                augmentation.shift = offset;
            }
            out.push(AugmentedClip {
                clip: variant,
                source,
                augmentation,
            });
        }
    }
    Ok(out)
}

/// Originals plus their variants, grouped per source clip. Each clip draws
/// noise from its own stream so results do not depend on thread count.
pub fn augment_set(
    clips: &[AudioClip],
    plan: &AugmentationPlan,
    rng: &mut Rng,
) -> Result<Vec<AugmentedClip>> {
    if clips.is_empty() {
        return Err(Error::EmptyDataset("no clips to augment".into()));
    }
    let base = rng.fork_base();
    let groups: Vec<Vec<AugmentedClip>> = clips
        .par_iter()
        .enumerate()
        .map(|(i, clip)| {
            let mut stream = Rng::stream(base, i);
            let mut group = vec![AugmentedClip {
                clip: clip.clone(),
                source: i,
                augmentation: Augmentation::default(),
            }];
            group.extend(augment_one(clip, i, plan, &mut stream)?);
            Ok(group)
        })
        .collect::<Result<_>>()?;
    Ok(groups.into_iter().flatten().collect())
}
