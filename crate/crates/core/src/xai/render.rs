use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SaliencyMap;
use crate::audio::{write_rgb_png, MelImage};
use crate::error::{Error, Result};

/// Blue (0) to red (1).
pub fn colorize(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    [
        (255.0 * v).round() as u8,
        0,
        (255.0 * (1.0 - v)).round() as u8,
    ]
}

/// RGB pixels of the map, scaled by its maximum, blended 50/50 over the
/// grayscale underlay.
pub fn overlay_pixels(map: &SaliencyMap, underlay: &MelImage) -> Result<Vec<u8>> {
    if (map.height, map.width) != (underlay.height(), underlay.width()) {
        return Err(Error::Shape(format!(
            "map {}x{} vs image {}x{}",
            map.height,
            map.width,
            underlay.height(),
            underlay.width()
        )));
    }
    if map.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Param("saliency map has non-finite values".into()));
    }
    let top = map.max();
    let scale = if top > 0.0 { 1.0 / top } else { 0.0 };
    let mut out = Vec::with_capacity(3 * map.values.len());
    for (&v, &g) in map.values.iter().zip(underlay.pixels()) {
        for channel in colorize(v * scale) {
            out.push((0.5 * channel as f64 + 0.5 * g as f64).round() as u8);
        }
    }
    Ok(out)
}

pub fn render_saliency(map: &SaliencyMap, underlay: &MelImage, path: &Path) -> Result<()> {
    let pixels = overlay_pixels(map, underlay)?;
    write_rgb_png(path, map.width, map.height, &pixels)
}

/// `u32` height, `u32` width (little endian), then `f64` values row-major.
pub fn save_raw_map(map: &SaliencyMap, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + 8 * map.values.len());
    bytes.extend_from_slice(&(map.height as u32).to_le_bytes());
    bytes.extend_from_slice(&(map.width as u32).to_le_bytes());
    for v in &map.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a dump written by [`save_raw_map`]: `(height, width, values)`.
pub fn load_raw_map(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::Image(format!(
            "{}: truncated map header",
            path.display()
        )));
    }
    let h = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 8 + 8 * h * w {
        return Err(Error::Image(format!(
            "{}: expected {} bytes for {h}x{w}, found {}",
            path.display(),
            8 + 8 * h * w,
            bytes.len()
        )));
    }
    let values = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((h, w, values))
}

/// JSON written next to every rendered explanation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub method: String,
    pub class: usize,
    pub params: serde_json::Value,
    pub stats: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_segments: Option<Vec<usize>>,
}

impl Sidecar {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
