use std::f64::consts::PI;
use std::ops::RangeInclusive;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::AudioClip;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const N_FFT: usize = 1024;
pub const HOP: usize = 512;
const STRETCH_HOP: usize = 256;

/// Accepted time-stretch factors.
pub const STRETCH_RANGE: RangeInclusive<f64> = 0.3..=1.9;

/// Frames produced by centered framing of `n` samples.
pub fn stft_frame_count(n: usize, hop: usize) -> usize {
    1 + n / hop
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Index into `x` after reflect padding (edge sample not repeated).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

struct Stft {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    n_fft: usize,
    hop: usize,
}

impl Stft {
    fn new(n_fft: usize, hop: usize, inverse: bool) -> Self {
        let mut planner = FftPlanner::new();
        let fft = if inverse {
            planner.plan_fft_inverse(n_fft)
        } else {
            planner.plan_fft_forward(n_fft)
        };
        Self {
            window: periodic_hann(n_fft),
            fft,
            n_fft,
            hop,
        }
    }

    /// Complex spectra, one `Vec` of `n_fft/2 + 1` bins per frame.
    fn analyze(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let frames = stft_frame_count(x.len(), self.hop);
        let pad = (self.n_fft / 2) as isize;
        let bins = self.n_fft / 2 + 1;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        (0..frames)
            .map(|t| {
                let start = (t * self.hop) as isize - pad;
                for (i, slot) in buf.iter_mut().enumerate() {
                    *slot = Complex64::new(
                        x[reflect(start + i as isize, x.len())] * self.window[i],
                        0.0,
                    );
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                buf[..bins].to_vec()
            })
            .collect()
    }

    /// Weighted overlap-add inverse; `self.fft` must be an inverse plan.
    fn synthesize(&self, frames: &[Vec<Complex64>], length: usize) -> Vec<f64> {
        let pad = self.n_fft / 2;
        let total = self.n_fft + self.hop * frames.len().saturating_sub(1);
        let mut signal = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for (t, spectrum) in frames.iter().enumerate() {
            for k in 0..self.n_fft {
                buf[k] = if k < spectrum.len() {
                    spectrum[k]
                } else {
                    spectrum[self.n_fft - k].conj()
                };
            }
            // The DC and Nyquist bins must be real for a real signal.
            buf[0].im = 0.0;
            buf[self.n_fft / 2].im = 0.0;
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            let offset = t * self.hop;
            for i in 0..self.n_fft {
                signal[offset + i] += self.window[i] * buf[i].re / self.n_fft as f64;
                norm[offset + i] += self.window[i] * self.window[i];
            }
        }
        (0..length)
            .map(|i| {
                let j = i + pad;
                if j < total && norm[j] > 1e-10 {
                    signal[j] / norm[j]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// |STFT|² with a 1024-sample periodic Hann window, hop 512 and centered
/// (reflect-padded) framing. Shape: 513 × frames.
pub fn power_spectrogram(clip: &AudioClip) -> Result<Tensor> {
    power_spectrogram_with(clip, N_FFT, HOP)
}

pub fn power_spectrogram_with(clip: &AudioClip, n_fft: usize, hop: usize) -> Result<Tensor> {
    if n_fft < 2 || n_fft % 2 != 0 || hop == 0 {
        return Err(Error::Param(format!(
            "invalid STFT geometry n_fft={n_fft} hop={hop}"
        )));
    }
    if clip.len() < n_fft {
        return Err(Error::Audio(format!(
            "clip has {} samples, need at least {n_fft}",
            clip.len()
        )));
    }
    let frames = Stft::new(n_fft, hop, false).analyze(clip.samples());
    let bins = n_fft / 2 + 1;
    let mut data = vec![0.0; bins * frames.len()];
    for (t, spectrum) in frames.iter().enumerate() {
        for (k, c) in spectrum.iter().enumerate() {
            data[k * frames.len() + t] = c.norm_sqr();
        }
    }
    Tensor::new(&[bins, frames.len()], data)
}

/// Phase-vocoder time stretch. The output holds `round(len · factor)` samples;
/// pitch is preserved.
pub fn time_stretch(clip: &AudioClip, factor: f64) -> Result<AudioClip> {
    if !STRETCH_RANGE.contains(&factor) {
        return Err(Error::Param(format!(
            "stretch factor {factor} outside [{}, {}]",
            STRETCH_RANGE.start(),
            STRETCH_RANGE.end()
        )));
    }
    let length = ((clip.len() as f64 * factor).round() as usize).max(1);
    if factor == 1.0 {
        return Ok(clip.clone());
    }
    let rate = 1.0 / factor;
    let spectra = Stft::new(N_FFT, STRETCH_HOP, false).analyze(clip.samples());
    let bins = N_FFT / 2 + 1;
    let n_frames = spectra.len();
    let advance: Vec<f64> = (0..bins)
        .map(|k| 2.0 * PI * STRETCH_HOP as f64 * k as f64 / N_FFT as f64)
        .collect();
    let zero = vec![Complex64::new(0.0, 0.0); bins];
    let column = |i: usize| if i < n_frames { &spectra[i] } else { &zero };

    let mut phase: Vec<f64> = spectra[0].iter().map(|c| c.arg()).collect();
    let mut stretched = Vec::new();
    let mut step = 0.0f64;
    while step < n_frames as f64 {
        let base = step.floor() as usize;
        let alpha = step - base as f64;
        let (a, b) = (column(base), column(base + 1));
        let mut out = Vec::with_capacity(bins);
        for k in 0..bins {
            let mag = (1.0 - alpha) * a[k].norm() + alpha * b[k].norm();
            out.push(Complex64::from_polar(mag, phase[k]));
            let mut dphase = b[k].arg() - a[k].arg() - advance[k];
            dphase -= 2.0 * PI * (dphase / (2.0 * PI)).round();
            phase[k] += advance[k] + dphase;
        }
        stretched.push(out);
        step += rate;
    }
    let samples = Stft::new(N_FFT, STRETCH_HOP, true).synthesize(&stretched, length);
    AudioClip::new(
        samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect(),
        clip.sample_rate(),
    )
}
