//! Minimal RGB rasterizer for line and bar charts.

use std::path::Path;

use crate::audio::write_rgb_png;
use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

pub const BLACK: Rgb = [0, 0, 0];
pub const WHITE: Rgb = [255, 255, 255];
pub const GRAY: Rgb = [200, 200, 200];
pub const BLUE: Rgb = [31, 119, 180];
pub const ORANGE: Rgb = [255, 127, 14];
pub const RED: Rgb = [214, 39, 40];

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

fn glyph(ch: char) -> [u8; GLYPH_H] {
    match ch.to_ascii_uppercase() {
        'A' => [
            0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001,
        ],
        'B' => [
            0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110,
        ],
        'C' => [
            0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110,
        ],
        'D' => [
            0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100,
        ],
        'E' => [
            0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111,
        ],
        'F' => [
            0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000,
        ],
        'G' => [
            0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111,
        ],
        'H' => [
            0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001,
        ],
        'I' => [
            0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110,
        ],
        'J' => [
            0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100,
        ],
        'K' => [
            0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001,
        ],
        'L' => [
            0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111,
        ],
        'M' => [
            0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001,
        ],
        'N' => [
            0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001,
        ],
        'O' => [
            0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110,
        ],
        'P' => [
            0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000,
        ],
        'Q' => [
            0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101,
        ],
        'R' => [
            0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001,
        ],
        'S' => [
            0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110,
        ],
        'T' => [
            0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100,
        ],
        'U' => [
            0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110,
        ],
        'V' => [
            0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100,
        ],
        'W' => [
            0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010,
        ],
        'X' => [
            0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001,
        ],
        'Y' => [
            0b10001, 0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100,
        ],
        'Z' => [
            0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111,
        ],
        '0' => [
            0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110,
        ],
        '1' => [
            0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110,
        ],
        '2' => [
            0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111,
        ],
        '3' => [
            0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110,
        ],
        '4' => [
            0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010,
        ],
        '5' => [
            0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110,
        ],
        '6' => [
            0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110,
        ],
        '7' => [
            0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000,
        ],
        '8' => [
            0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110,
        ],
        '9' => [
            0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100,
        ],
        '.' => [0, 0, 0, 0, 0, 0b01100, 0b01100],
        ',' => [0, 0, 0, 0, 0b01100, 0b00100, 0b01000],
        '-' => [0, 0, 0, 0b11111, 0, 0, 0],
        '_' => [0, 0, 0, 0, 0, 0, 0b11111],
        ':' => [0, 0b01100, 0b01100, 0, 0b01100, 0b01100, 0],
        '/' => [
            0b00001, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b10000,
        ],
        '%' => [
            0b11000, 0b11001, 0b00010, 0b00100, 0b01000, 0b10011, 0b00011,
        ],
        '(' => [
            0b00010, 0b00100, 0b01000, 0b01000, 0b01000, 0b00100, 0b00010,
        ],
        ')' => [
            0b01000, 0b00100, 0b00010, 0b00010, 0b00010, 0b00100, 0b01000,
        ],
        _ => [0; 7],
    }
}

/// Pixel width of `text` drawn at `scale`.
pub fn text_width(text: &str, scale: usize) -> usize {
    let n = text.chars().count();
    if n == 0 {
        0
    } else {
        (n * (GLYPH_W + 1) - 1) * scale
    }
}

pub struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, background: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: background.repeat(width * height),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: i64, y: i64, color: Rgb) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = 3 * (y as usize * self.width + x as usize);
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, color: Rgb) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.set(xx, yy, color);
            }
        }
    }

    /// Bresenham line, `thickness` pixels wide.
    pub fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb, thickness: i64) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        let half = thickness / 2;
        loop {
            self.fill_rect(x - half, y - half, thickness, thickness, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn text(&mut self, x: i64, y: i64, text: &str, color: Rgb, scale: usize) {
        let s = scale as i64;
        for (i, ch) in text.chars().enumerate() {
            let rows = glyph(ch);
            let ox = x + i as i64 * (GLYPH_W as i64 + 1) * s;
            for (r, bits) in rows.iter().enumerate() {
                for c in 0..GLYPH_W {
                    if bits >> (GLYPH_W - 1 - c) & 1 == 1 {
                        self.fill_rect(ox + c as i64 * s, y + r as i64 * s, s, s, color);
                    }
                }
            }
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_rgb_png(path, self.width, self.height, &self.pixels)
    }
}

pub struct Series<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
    pub color: Rgb,
}

const LEFT: i64 = 70;
const RIGHT: i64 = 20;
const TOP: i64 = 40;
const BOTTOM: i64 = 50;

fn format_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Curves over x = 1..=n with labeled axes and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<Canvas> {
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    if n == 0 {
        return Err(Error::Param("line chart needs at least one value".into()));
    }
    let finite = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        return Err(Error::Param("line chart values are all non-finite".into()));
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let (w, h) = (640i64, 400i64);
    let mut canvas = Canvas::new(w as usize, h as usize, WHITE);
    let (pw, ph) = (w - LEFT - RIGHT, h - TOP - BOTTOM);
    let px = |i: usize| {
        LEFT + if n == 1 {
            pw / 2
        } else {
            (i as i64 * pw) / (n as i64 - 1)
        }
    };
    let py = |v: f64| TOP + ph - ((v - lo) / (hi - lo) * ph as f64).round() as i64;

    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = py(v);
        canvas.line((LEFT, y), (LEFT + pw, y), GRAY, 1);
        let label = format_tick(v);
        canvas.text(
            LEFT - 6 - text_width(&label, 1) as i64,
            y - 3,
            &label,
            BLACK,
            1,
        );
    }
    let step = n.div_ceil(10).max(1);
    for i in (0..n).step_by(step) {
        let label = (i + 1).to_string();
        canvas.line((px(i), TOP + ph), (px(i), TOP + ph + 4), BLACK, 1);
        canvas.text(
            px(i) - text_width(&label, 1) as i64 / 2,
            TOP + ph + 8,
            &label,
            BLACK,
            1,
        );
    }
    canvas.line((LEFT, TOP), (LEFT, TOP + ph), BLACK, 1);
    canvas.line((LEFT, TOP + ph), (LEFT + pw, TOP + ph), BLACK, 1);

    for s in series {
        let points: Vec<(i64, i64)> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| (px(i), py(v)))
            .collect();
        for pair in points.windows(2) {
            canvas.line(pair[0], pair[1], s.color, 2);
        }
        for &(x, y) in &points {
            canvas.fill_rect(x - 2, y - 2, 5, 5, s.color);
        }
    }

    canvas.text((w - text_width(title, 2) as i64) / 2, 10, title, BLACK, 2);
    canvas.text(
        LEFT + (pw - text_width(x_label, 1) as i64) / 2,
        h - 18,
        x_label,
        BLACK,
        1,
    );
    canvas.text(4, TOP - 14, y_label, BLACK, 1);
    let mut ly = TOP + 6;
    for s in series {
        let lx = LEFT + pw - text_width(s.name, 1) as i64 - 20;
        canvas.fill_rect(lx, ly, 12, 7, s.color);
        canvas.text(lx + 16, ly, s.name, BLACK, 1);
        ly += 12;
    }
    Ok(canvas)
}

/// One bar per label, heights proportional to `values`, value printed on top.
pub fn bar_chart(title: &str, labels: &[&str], values: &[f64]) -> Result<Canvas> {
    if labels.len() != values.len() || labels.is_empty() {
        return Err(Error::Param("bar chart needs one value per label".into()));
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Param(
            "bar values must be finite and nonnegative".into(),
        ));
    }
    let (w, h) = (120 + 120 * labels.len() as i64, 320i64);
    let mut canvas = Canvas::new(w as usize, h as usize, WHITE);
    let (pw, ph) = (w - LEFT - RIGHT, h - TOP - BOTTOM);
    let top = values.iter().copied().fold(0.0, f64::max).max(1.0);
    let slot = pw / labels.len() as i64;
    let palette = [BLUE, ORANGE, RED];
    for (i, (&label, &v)) in labels.iter().zip(values).enumerate() {
        let bh = (v / top * (ph - 16) as f64).round() as i64;
        let x = LEFT + i as i64 * slot + slot / 4;
        canvas.fill_rect(x, TOP + ph - bh, slot / 2, bh, palette[i % palette.len()]);
        let count = format!("{v}");
        let cx = x + slot / 4;
        canvas.text(
            cx - text_width(&count, 1) as i64 / 2,
            TOP + ph - bh - 10,
            &count,
            BLACK,
            1,
        );
        canvas.text(
            cx - text_width(label, 1) as i64 / 2,
            TOP + ph + 8,
            label,
            BLACK,
            1,
        );
    }
    canvas.line((LEFT, TOP), (LEFT, TOP + ph), BLACK, 1);
    canvas.line((LEFT, TOP + ph), (LEFT + pw, TOP + ph), BLACK, 1);
    canvas.text((w - text_width(title, 2) as i64) / 2, 10, title, BLACK, 2);
    Ok(canvas)
}
