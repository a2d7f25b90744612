//! Audio ingestion, augmentation and spectrogram imaging.

mod augment;
mod image;
mod mel;
mod stft;

pub use augment::{augment_clip, augment_set, AugmentationPlan, AugmentedClip, NoiseShiftCombo};
pub use image::{read_gray_png, write_gray_png, write_rgb_png};
pub use image::{
    resize_width, to_input_tensor, to_mel_image, MelImage, Provenance, MEL_IMAGE_HEIGHT,
};
pub use mel::{
    hz_to_mel, mel_filterbank, mel_power_spectrogram, mel_spectrogram, mel_to_hz, power_to_db,
    MelConfig,
};
pub use stft::{
    power_spectrogram, power_spectrogram_with, stft_frame_count, time_stretch, HOP, N_FFT,
    STRETCH_RANGE,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Sample rate every clip is expected to carry.
pub const CANONICAL_SAMPLE_RATE: u32 = 44_100;

/// Canonical time-shift: 15% of the canonical sample rate.
pub const CANONICAL_SHIFT: i64 = 6_615;

/// Mono audio with samples in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Audio("clip has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Augmentation applied to a clip, recorded in image sidecars.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub stretch: f64,
    pub noise_amp: f64,
    pub shift: i64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            stretch: 1.0,
            noise_amp: 0.0,
            shift: 0,
        }
    }
}

/// Decodes 8- or 16-bit PCM WAV, averaging channels to mono.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Audio(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || !matches!(spec.bits_per_sample, 8 | 16) {
        return Err(Error::Audio(format!(
            "{}: only 8/16-bit PCM is supported, found {:?} {}-bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let scale = if spec.bits_per_sample == 8 {
        128.0
    } else {
        32768.0
    };
    let raw: Vec<i32> = reader
        .into_samples::<i32>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let channels = spec.channels.max(1) as usize;
    let samples: Vec<f64> = raw
        .chunks_exact(channels)
        .map(|frame| frame.iter().map(|&s| s as f64 / scale).sum::<f64>() / channels as f64)
        .collect();
    if samples.is_empty() {
        return Err(Error::Audio(format!(
            "{}: zero-length audio",
            path.display()
        )));
    }
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes a mono 16-bit PCM WAV.
pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Audio(format!("{}: {other}", path.display())),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &clip.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

/// Adds `amplitude · N(0, 1)` to every sample and clips to [-1, 1].
pub fn add_noise(clip: &AudioClip, amplitude: f64, rng: &mut Rng) -> Result<AudioClip> {
    if !(amplitude >= 0.0) {
        return Err(Error::Param(format!(
            "noise amplitude must be >= 0, got {amplitude}"
        )));
    }
    if amplitude == 0.0 {
        return Ok(clip.clone());
    }
    let samples = clip
        .samples
        .iter()
        .map(|&s| (s + amplitude * rng.normal()).clamp(-1.0, 1.0))
        .collect();
    AudioClip::new(samples, clip.sample_rate)
}

/// Circular rotation: the sample at index `i` moves to `(i + offset) mod L`.
/// Offsets up to the full length are accepted (a full-length shift is the
/// identity).
pub fn time_shift(clip: &AudioClip, offset: i64) -> Result<AudioClip> {
    let len = clip.len() as i64;
    if offset.abs() > len {
        return Err(Error::Param(format!(
            "shift {offset} exceeds clip length {len}"
        )));
    }
    let mut samples = clip.samples.clone();
    samples.rotate_right(offset.rem_euclid(len) as usize);
    AudioClip::new(samples, clip.sample_rate)
}

/// Clip to display image: mel spectrogram in dB, 8-bit image, then an
/// optional resize to `target_width` columns.
pub fn clip_to_image(
    clip: &AudioClip,
    config: &MelConfig,
    target_width: Option<usize>,
) -> Result<MelImage> {
    let image = to_mel_image(&mel_spectrogram(clip, config)?)?;
    match target_width {
        Some(w) => resize_width(&image, w),
        None => Ok(image),
    }
}
