use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Augmentation;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MEL_IMAGE_HEIGHT: usize = 128;

/// Where an image came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub augmentation: Augmentation,
}

/// 8-bit grayscale spectrogram image, 128 rows, row-major. Row 127 holds the
/// lowest mel band.
#[derive(Clone, Debug, PartialEq)]
pub struct MelImage {
    width: usize,
    pixels: Vec<u8>,
    pub provenance: Provenance,
}

impl MelImage {
    pub fn new(width: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || pixels.len() != width * MEL_IMAGE_HEIGHT {
            return Err(Error::Image(format!(
                "expected {MEL_IMAGE_HEIGHT}x{width} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            pixels,
            provenance: Provenance::default(),
        })
    }

    pub fn height(&self) -> usize {
        MEL_IMAGE_HEIGHT
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_gray_png(path, self.width, MEL_IMAGE_HEIGHT, &self.pixels)
    }

    /// Reads an 8-bit PNG of height 128. Color images are averaged to gray.
    pub fn load_png(path: &Path) -> Result<Self> {
        let (width, height, pixels) = read_gray_png(path)?;
        if height != MEL_IMAGE_HEIGHT {
            return Err(Error::Image(format!(
                "{}: height {height}, expected {MEL_IMAGE_HEIGHT}",
                path.display()
            )));
        }
        let mut img = Self::new(width, pixels)?;
        img.provenance.source = path.display().to_string();
        Ok(img)
    }
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    write_png(path, width, height, pixels, png::ColorType::Grayscale)
}

pub fn write_rgb_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    write_png(path, width, height, pixels, png::ColorType::Rgb)
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    pixels: &[u8],
    color: png::ColorType,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let wrap = |e: png::EncodingError| Error::Image(format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(wrap)?;
    writer.write_image_data(pixels).map_err(wrap)?;
    writer.finish().map_err(wrap)
}

/// Decodes an 8-bit PNG to grayscale `(width, height, pixels)`.
pub fn read_gray_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let wrap = |e: png::DecodingError| Error::Image(format!("{}: {e}", path.display()));
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(wrap)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(wrap)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Image(format!(
            "{}: only 8-bit images are supported",
            path.display()
        )));
    }
    let channels = info.color_type.samples();
    let color = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => 1,
        _ => 3,
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let pixels = buf[..w * h * channels]
        .chunks_exact(channels)
        .map(|px| {
            let sum: u32 = px[..color].iter().map(|&v| v as u32).sum();
            ((sum as f64) / color as f64).round() as u8
        })
        .collect();
    Ok((w, h, pixels))
}

/// Min-max scales to 0..=255, inverts intensity and flips vertically.
/// A constant spectrogram yields an all-zero image.
pub fn to_mel_image(spec: &Tensor) -> Result<MelImage> {
    let shape = spec.shape();
    if shape.len() != 2 || shape[0] != MEL_IMAGE_HEIGHT {
        return Err(Error::Shape(format!(
            "expected a {MEL_IMAGE_HEIGHT} x frames spectrogram, got {shape:?}"
        )));
    }
    if !spec.is_finite() {
        return Err(Error::Image(
            "spectrogram contains non-finite values".into(),
        ));
    }
    let width = shape[1];
    let (lo, hi) = (spec.min(), spec.max());
    let mut pixels = vec![0u8; MEL_IMAGE_HEIGHT * width];
    if hi > lo {
        for r in 0..MEL_IMAGE_HEIGHT {
            let dst = MEL_IMAGE_HEIGHT - 1 - r;
            for c in 0..width {
                let scaled = (255.0 * (spec.data()[r * width + c] - lo) / (hi - lo)).round() as u8;
                pixels[dst * width + c] = 255 - scaled;
            }
        }
    }
    MelImage::new(width, pixels)
}

/// Bilinear resampling along time with half-pixel centres.
pub fn resize_width(img: &MelImage, target_width: usize) -> Result<MelImage> {
    if target_width == 0 {
        return Err(Error::Param("target width must be positive".into()));
    }
    if target_width == img.width {
        return Ok(img.clone());
    }
    let scale = img.width as f64 / target_width as f64;
    let taps: Vec<(usize, usize, f64)> = (0..target_width)
        .map(|j| {
            let x = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (img.width - 1) as f64);
            let left = x.floor() as usize;
            let right = (left + 1).min(img.width - 1);
            (left, right, x - left as f64)
        })
        .collect();
    let mut pixels = Vec::with_capacity(MEL_IMAGE_HEIGHT * target_width);
    for r in 0..MEL_IMAGE_HEIGHT {
        let row = &img.pixels[r * img.width..(r + 1) * img.width];
        for &(left, right, t) in &taps {
            let v = (1.0 - t) * row[left] as f64 + t * row[right] as f64;
            pixels.push(v.round() as u8);
        }
    }
    let mut out = MelImage::new(target_width, pixels)?;
    out.provenance = img.provenance.clone();
    Ok(out)
}

/// `pixel / 255` replicated into three channels: `128 × width × 3`.
pub fn to_input_tensor(img: &MelImage, expected_width: usize) -> Result<Tensor> {
    if img.width != expected_width {
        return Err(Error::Shape(format!(
            "image width {} does not match model input width {expected_width}",
            img.width
        )));
    }
    let data = img
        .pixels
        .iter()
        .flat_map(|&p| {
            let v = p as f64 / 255.0;
            [v, v, v]
        })
        .collect();
    Tensor::new(&[MEL_IMAGE_HEIGHT, img.width, 3], data)
}
