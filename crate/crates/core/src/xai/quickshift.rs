use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::audio::MelImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuickshiftParams {
    /// Gaussian bandwidth of the density estimate, in pixels.
    pub kernel_size: f64,
    /// Links longer than this (in joint space-intensity units) are cut.
    pub max_dist: f64,
    /// Weight of intensity against spatial distance.
    pub ratio: f64,
}

impl Default for QuickshiftParams {
    fn default() -> Self {
        Self {
            kernel_size: 4.0,
            max_dist: 200.0,
            ratio: 0.2,
        }
    }
}

/// Superpixel partition: `labels[r * width + c] ∈ 0..count`, numbered in
/// raster order of first appearance. Every segment is 4-connected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentLabels {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub count: usize,
}

impl SegmentLabels {
    /// Relabels connected components of equal raw labels in raster order.
    pub fn from_raw(height: usize, width: usize, raw: &[usize]) -> Result<Self> {
        if raw.len() != height * width || raw.is_empty() {
            return Err(Error::Shape(format!(
                "{} labels for {height}x{width}",
                raw.len()
            )));
        }
        let mut labels = vec![usize::MAX; raw.len()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for seed in 0..raw.len() {
            if labels[seed] != usize::MAX {
                continue;
            }
            labels[seed] = count;
            queue.push_back(seed);
            while let Some(i) = queue.pop_front() {
                let (r, c) = (i / width, i % width);
                let mut visit = |j: usize| {
                    if labels[j] == usize::MAX && raw[j] == raw[i] {
                        labels[j] = count;
                        queue.push_back(j);
                    }
                };
                if r > 0 {
                    visit(i - width);
                }
                if r + 1 < height {
                    visit(i + width);
                }
                if c > 0 {
                    visit(i - 1);
                }
                if c + 1 < width {
                    visit(i + 1);
                }
            }
            count += 1;
        }
        Ok(Self {
            height,
            width,
            labels,
            count,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    /// Pixel count per segment.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Quickshift over a grayscale image (see [`quickshift_pixels`]).
pub fn quickshift(image: &MelImage, params: &QuickshiftParams) -> Result<SegmentLabels> {
    quickshift_pixels(image.height(), image.width(), image.pixels(), params)
}

/// Mode seeking in joint (row, col, intensity) space. Intensity is the pixel
/// on a 0–100 lightness scale times `ratio`. Densities use a Gaussian of
/// bandwidth `kernel_size` over a `±ceil(3·kernel_size)` window; each pixel
/// links to the nearest higher-density pixel in that window, and links
/// longer than `max_dist` are dropped. Densities are compared as integers
/// after scaling by the maximum; equal densities count as higher only
/// between equal intensities, toward the larger raster index.
pub fn quickshift_pixels(
    height: usize,
    width: usize,
    pixels: &[u8],
    params: &QuickshiftParams,
) -> Result<SegmentLabels> {
    let QuickshiftParams {
        kernel_size,
        max_dist,
        ratio,
    } = *params;
    if !(kernel_size > 0.0 && max_dist > 0.0 && ratio > 0.0)
        || !(kernel_size.is_finite() && ratio.is_finite())
    {
        return Err(Error::Param(format!(
            "quickshift needs positive parameters, got kernel_size={kernel_size} max_dist={max_dist} ratio={ratio}"
        )));
    }
    if pixels.len() != height * width || pixels.is_empty() {
        return Err(Error::Shape(format!(
            "{} pixels for {height}x{width}",
            pixels.len()
        )));
    }
    let radius = (3.0 * kernel_size).ceil() as isize;
    let inv = -0.5 / (kernel_size * kernel_size);
    // Squared intensity distance for every absolute pixel difference.
    let step = 100.0 / 255.0 * ratio;
    let intensity_sq: Vec<f64> = (0..256).map(|d| (d as f64 * step).powi(2)).collect();
    let intensity_w: Vec<f64> = intensity_sq.iter().map(|d| (d * inv).exp()).collect();
    let span = (2 * radius + 1) as usize;
    let spatial_w: Vec<f64> = (0..span * span)
        .map(|i| {
            let (dr, dc) = ((i / span) as isize - radius, (i % span) as isize - radius);
            (((dr * dr + dc * dc) as f64) * inv).exp()
        })
        .collect();

    let (h, w) = (height as isize, width as isize);
    let window = |r: isize, c: isize| {
        let rows = (r - radius).max(0)..(r + radius + 1).min(h);
        rows.flat_map(move |rr| {
            ((c - radius).max(0)..(c + radius + 1).min(w)).map(move |cc| (rr, cc))
        })
    };

    let density: Vec<f64> = (0..height * width)
        .map(|i| {
            let (r, c) = ((i / width) as isize, (i % width) as isize);
            let p = pixels[i];
            window(r, c)
                .map(|(rr, cc)| {
                    let j = (rr * w + cc) as usize;
                    let s = ((rr - r + radius) as usize) * span + (cc - c + radius) as usize;
                    spatial_w[s] * intensity_w[p.abs_diff(pixels[j]) as usize]
                })
                .sum()
        })
        .collect();
    let top = density.iter().copied().fold(0.0, f64::max);
    let key: Vec<u64> = density
        .iter()
        .map(|d| (d / top * (1u64 << 40) as f64).round() as u64)
        .collect();

    let max_sq = max_dist * max_dist;
    let parent: Vec<usize> = (0..height * width)
        .map(|i| {
            let (r, c) = ((i / width) as isize, (i % width) as isize);
            let mut best = (f64::INFINITY, i);
            for (rr, cc) in window(r, c) {
                let j = (rr * w + cc) as usize;
                let higher =
                    key[j] > key[i] || (key[j] == key[i] && pixels[j] == pixels[i] && j > i);
                if !higher {
                    continue;
                }
                let d = ((rr - r).pow(2) + (cc - c).pow(2)) as f64
                    + intensity_sq[pixels[i].abs_diff(pixels[j]) as usize];
                if d < best.0 {
                    best = (d, j);
                }
            }
            if best.0 <= max_sq {
                best.1
            } else {
                i
            }
        })
        .collect();

    // Links always point to a strictly higher (key, index) pair, so every
    // chain ends at a root.
    let mut root = vec![usize::MAX; parent.len()];
    for i in 0..parent.len() {
        let mut path = Vec::new();
        let mut j = i;
        while root[j] == usize::MAX && parent[j] != j {
            path.push(j);
            j = parent[j];
        }
        let r = if root[j] == usize::MAX { j } else { root[j] };
        root[j] = r;
        for p in path {
            root[p] = r;
        }
    }
    SegmentLabels::from_raw(height, width, &root)
}
