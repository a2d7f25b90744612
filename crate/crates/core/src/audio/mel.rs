use serde::{Deserialize, Serialize};

use super::stft::{power_spectrogram_with, HOP, N_FFT};
use super::AudioClip;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const POWER_FLOOR: f64 = 1e-10;

/// Spectrogram geometry and dB range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub top_db: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_fft: N_FFT,
            hop: HOP,
            n_mels: 128,
            top_db: 80.0,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> Result<f64> {
    if !(hz >= 0.0) {
        return Err(Error::Param(format!("frequency must be >= 0, got {hz}")));
    }
    Ok(2595.0 * (1.0 + hz / 700.0).log10())
}

pub fn mel_to_hz(mel: f64) -> Result<f64> {
    if !(mel >= 0.0) {
        return Err(Error::Param(format!("mel value must be >= 0, got {mel}")));
    }
    Ok(700.0 * (10f64.powf(mel / 2595.0) - 1.0))
}

/// Integral of the unit-height triangle (lo, centre, hi) from -inf to `f`.
fn triangle_cdf(f: f64, lo: f64, centre: f64, hi: f64) -> f64 {
    if f <= lo {
        0.0
    } else if f <= centre {
        (f - lo).powi(2) / (2.0 * (centre - lo))
    } else if f < hi {
        (hi - lo) / 2.0 - (hi - f).powi(2) / (2.0 * (hi - centre))
    } else {
        (hi - lo) / 2.0
    }
}

/// Triangular filters with centres equally spaced in mel between 0 Hz and
/// Nyquist. Shape: `n_mels × (n_fft/2 + 1)`.
///
/// Each weight is the mean of the unit-height triangle over the frequency
/// span of its FFT bin, so filters narrower than one bin still collect energy.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Result<Tensor> {
    if n_mels == 0 || n_fft < 2 || sample_rate == 0 {
        return Err(Error::Param(format!(
            "invalid filterbank n_mels={n_mels} n_fft={n_fft} sr={sample_rate}"
        )));
    }
    let bins = n_fft / 2 + 1;
    let df = sample_rate as f64 / n_fft as f64;
    let top = hz_to_mel(sample_rate as f64 / 2.0)?;
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect::<Result<_>>()?;
    let mut data = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let a = (k as f64 - 0.5) * df;
            let b = (k as f64 + 0.5) * df;
            data[m * bins + k] =
                (triangle_cdf(b, lo, centre, hi) - triangle_cdf(a, lo, centre, hi)) / df;
        }
    }
    Tensor::new(&[n_mels, bins], data)
}

/// Mel-band power before log scaling. Shape: `n_mels × frames`.
pub fn mel_power_spectrogram(clip: &AudioClip, config: &MelConfig) -> Result<Tensor> {
    let power = power_spectrogram_with(clip, config.n_fft, config.hop)?;
    let fb = mel_filterbank(config.n_mels, config.n_fft, clip.sample_rate())?;
    let (bins, frames) = (power.shape()[0], power.shape()[1]);
    let mut out = vec![0.0; config.n_mels * frames];
    for m in 0..config.n_mels {
        let row = &mut out[m * frames..(m + 1) * frames];
        for k in 0..bins {
            let w = fb.data()[m * bins + k];
            if w == 0.0 {
                continue;
            }
            let src = &power.data()[k * frames..(k + 1) * frames];
            for (o, &p) in row.iter_mut().zip(src) {
                *o += w * p;
            }
        }
    }
    Tensor::new(&[config.n_mels, frames], out)
}

/// `10·log10(max(S, 1e-10))`, floored at `max − top_db`.
pub fn power_to_db(power: &Tensor, top_db: f64) -> Result<Tensor> {
    if !(top_db >= 0.0) {
        return Err(Error::Param(format!("top_db must be >= 0, got {top_db}")));
    }
    let db: Vec<f64> = power
        .data()
        .iter()
        .map(|&p| 10.0 * p.max(POWER_FLOOR).log10())
        .collect();
    let floor = db.iter().copied().fold(f64::NEG_INFINITY, f64::max) - top_db;
    Tensor::new(
        power.shape(),
        db.into_iter().map(|v| v.max(floor)).collect(),
    )
}

/// Log-scaled mel spectrogram, `n_mels × frames`, row 0 = lowest band.
pub fn mel_spectrogram(clip: &AudioClip, config: &MelConfig) -> Result<Tensor> {
    power_to_db(&mel_power_spectrogram(clip, config)?, config.top_db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::power_spectrogram;
    use crate::rng::Rng;

    #[test]
    fn mel_scale_values() {
        assert_eq!(hz_to_mel(0.0).unwrap(), 0.0);
        assert!((hz_to_mel(700.0).unwrap() - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((hz_to_mel(700.0).unwrap() - 781.17).abs() < 0.01);
        for f in [100.0, 1000.0, 20000.0] {
            assert!((mel_to_hz(hz_to_mel(f).unwrap()).unwrap() - f).abs() < 1e-9);
        }
        assert!(hz_to_mel(-1.0).is_err());
        assert!(hz_to_mel(f64::NAN).is_err());
    }

    #[test]
    fn filters_are_nonnegative_single_peaked_triangles() {
        let fb = mel_filterbank(128, 1024, 44_100).unwrap();
        assert_eq!(fb.shape(), &[128, 513]);
        for m in 0..128 {
            let row = &fb.data()[m * 513..(m + 1) * 513];
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().any(|&w| w > 0.0), "filter {m} is empty");
            let peak = (0..513).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            assert!(
                row[..=peak].windows(2).all(|w| w[0] <= w[1]),
                "filter {m} rises twice"
            );
            assert!(
                row[peak..].windows(2).all(|w| w[0] >= w[1]),
                "filter {m} falls twice"
            );
        }
    }

    /// Point-sampled triangle weights at bin centre frequencies.
    fn naive_filter_weight(m: usize, k: usize) -> f64 {
        let top = hz_to_mel(22_050.0).unwrap();
        let edge = |i: usize| mel_to_hz(top * i as f64 / 129.0).unwrap();
        let (lo, c, hi) = (edge(m), edge(m + 1), edge(m + 2));
        let f = k as f64 * 44_100.0 / 1024.0;
        if f > lo && f <= c {
            (f - lo) / (c - lo)
        } else if f > c && f < hi {
            (hi - f) / (hi - c)
        } else {
            0.0
        }
    }

    #[test]
    fn white_noise_energy_matches_naive_summation() {
        let mut rng = Rng::seeded(21);
        let samples = (0..44_100).map(|_| 0.3 * rng.normal()).collect();
        let clip = AudioClip::new(samples, 44_100).unwrap();
        let mel = mel_power_spectrogram(&clip, &MelConfig::default()).unwrap();
        let power = power_spectrogram(&clip).unwrap();
        let frames = power.shape()[1];
        let mut naive = 0.0;
        for m in 0..128 {
            for k in 0..513 {
                let w = naive_filter_weight(m, k);
                for t in 0..frames {
                    naive += w * power.data()[k * frames + t];
                }
            }
        }
        let total: f64 = mel.data().iter().sum();
        assert!((total - naive).abs() / naive < 0.05, "{total} vs {naive}");
    }

    #[test]
    fn db_floor_and_silence() {
        let p = Tensor::new(&[1, 3], vec![1.0, 1e-3, 0.0]).unwrap();
        let db = power_to_db(&p, 80.0).unwrap();
        assert_eq!(db.data(), &[0.0, -30.0, -80.0]);

        let silence = AudioClip::new(vec![0.0; 4096], 44_100).unwrap();
        let mel = mel_spectrogram(&silence, &MelConfig::default()).unwrap();
        assert_eq!(mel.shape(), &[128, 9]);
        assert!(mel.data().iter().all(|&v| v == -100.0));
    }
}
