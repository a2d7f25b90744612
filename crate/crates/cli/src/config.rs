//! Run configuration: one JSON document holding every tunable of the
//! pipeline. Missing fields take their defaults.
//!
//! Seed precedence, lowest first: config file, `SPECXPLAIN_SEED`, `--seed`.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use specxplain::audio::{AugmentationPlan, MelConfig, STRETCH_RANGE};
use specxplain::dataset::SyntheticSpec;
use specxplain::xai::{AmParams, GradCamParams, LimeParams, SmoothGradParams};
use specxplain::TrainConfig;

pub const SEED_ENV: &str = "SPECXPLAIN_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub top_db: f64,
    /// Every spectrogram image is resized to this many columns.
    pub target_width: usize,
}

impl Default for AudioConfig {
    fn default() -> Self {
        let mel = MelConfig::default();
        Self {
            n_fft: mel.n_fft,
            hop: mel.hop,
            n_mels: mel.n_mels,
            top_db: mel.top_db,
            target_width: 820,
        }
    }
}

impl AudioConfig {
    pub fn mel(&self) -> MelConfig {
        MelConfig {
            n_fft: self.n_fft,
            hop: self.hop,
            n_mels: self.n_mels,
            top_db: self.top_db,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_fraction: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Output directory used when a command gets no `--out`.
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Copied into `train.seed` on resolution.
    pub seed: u64,
    pub train: TrainConfig,
    pub audio: AudioConfig,
    pub augment: AugmentationPlan,
    pub split: SplitConfig,
    pub smoothgrad: SmoothGradParams,
    pub gradcam: GradCamParams,
    pub lime: LimeParams,
    pub actmax: AmParams,
    pub synth: SyntheticSpec,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// File (or defaults), then the environment seed, then the flag seed.
    pub fn resolve(
        file: Option<&Path>,
        env_seed: Option<&str>,
        flag_seed: Option<u64>,
    ) -> Result<Self> {
        let mut config = match file {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        if let Some(raw) = env_seed {
            config.seed = raw
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={raw:?} is not an unsigned integer"))?;
        }
        if let Some(seed) = flag_seed {
            config.seed = seed;
        }
        config.train.seed = config.seed;
        Ok(config)
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map_or_else(|| self.paths.out_dir.clone(), Path::to_path_buf)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let a = &self.audio;
        ensure!(
            a.n_fft >= 2 && a.hop > 0 && a.n_mels > 0,
            "audio n_fft, hop and n_mels must be positive"
        );
        ensure!(a.n_fft <= 1 << 16, "audio n_fft {} is too large", a.n_fft);
        ensure!(
            a.top_db > 0.0 && a.top_db.is_finite(),
            "audio top_db must be positive, got {}",
            a.top_db
        );
        ensure!(a.target_width > 0, "audio target_width must be positive");

        for &f in &self.augment.stretch_factors {
            ensure!(
                STRETCH_RANGE.contains(&f),
                "stretch factor {f} outside {STRETCH_RANGE:?}"
            );
        }
        ensure!(
            self.augment.noise_amplitude >= 0.0 && self.augment.noise_amplitude.is_finite(),
            "noise amplitude must be >= 0"
        );

        let f = self.split.test_fraction;
        ensure!(f > 0.0 && f < 1.0, "split test_fraction {f} not in (0, 1)");

        let sg = &self.smoothgrad;
        ensure!(sg.n > 0, "smoothgrad n must be >= 1");
        ensure!(
            sg.noise_level >= 0.0 && sg.noise_level.is_finite(),
            "smoothgrad noise_level must be >= 0"
        );

        let lime = &self.lime;
        ensure!(
            lime.n_features > 0 && lime.n_samples > 0,
            "lime n_features and n_samples must be >= 1"
        );
        let qs = &lime.quickshift;
        if !(qs.kernel_size > 0.0 && qs.max_dist > 0.0 && qs.ratio >= 0.0 && qs.ratio <= 1.0) {
            bail!("quickshift needs kernel_size > 0, max_dist > 0 and ratio in [0, 1]");
        }

        ensure!(
            self.actmax.step_size > 0.0 && self.actmax.step_size.is_finite(),
            "actmax step_size must be positive"
        );
        self.synth.validate()?;
        Ok(())
    }
}
