//! Manifests, stratified splits, class-balance reports and the synthetic
//! planted-feature dataset.

mod synth;

pub use synth::{synth_generate, PatchRect, SyntheticSample, SyntheticSpec};

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{to_input_tensor, MelImage};
use crate::error::{Error, Result};
use crate::model::SampleSource;
use crate::plot::bar_chart;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Covid,
    NonCovid,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Covid, Label::NonCovid];

    pub fn index(self) -> usize {
        match self {
            Label::Covid => 0,
            Label::NonCovid => 1,
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::Index(format!("class {index} (expected 0 or 1)")))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Covid => "covid",
            Label::NonCovid => "non_covid",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "covid" => Ok(Label::Covid),
            "non_covid" => Ok(Label::NonCovid),
            other => Err(format!(
                "unknown label {other:?} (expected covid or non_covid)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub path: PathBuf,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn new(records: Vec<Record>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes `path,label` rows. Paths are written as given.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        writer
            .write_record(["path", "label"])
            .map_err(|e| csv_error(path, e))?;
        for r in &self.records {
            writer
                .write_record([r.path.to_string_lossy().as_ref(), r.label.as_str()])
                .map_err(|e| csv_error(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Manifest {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        }
    }
}

/// Parses a `path,label` CSV. Relative paths resolve against the manifest's
/// directory; every path must exist. Row numbers in errors are file lines.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{}: manifest is empty",
            path.display()
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "label"] {
        return Err(Error::Manifest {
            row: 1,
            message: format!(
                "expected header `path,label`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let fail = |message: String| Error::Manifest { row: line, message };
        let label: Label = row[1].parse().map_err(fail)?;
        let raw = PathBuf::from(&row[0]);
        let resolved = if raw.is_absolute() {
            raw
        } else {
            base.join(raw)
        };
        if !resolved.exists() {
            return Err(fail(format!("{} does not exist", resolved.display())));
        }
        if !seen.insert(resolved.clone()) {
            return Err(fail(format!("duplicate entry {}", resolved.display())));
        }
        records.push(Record {
            path: resolved,
            label,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{}: manifest has no rows",
            path.display()
        )));
    }
    Ok(Manifest { records })
}

/// Splits each class separately, sending `round(n · test_fraction)` of it
/// (at least one, at most n − 1) to the test side. Returns `(train, test)`
/// indices into `labels`, each in ascending order.
pub fn stratified_indices(
    labels: &[Label],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Param(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = Rng::seeded(seed);
    let mut is_test = vec![false; labels.len()];
    for label in Label::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::EmptyDataset(format!(
                "class {label} has {} sample(s); at least 2 are needed to split",
                members.len()
            )));
        }
        let n_test =
            ((members.len() as f64 * test_fraction).round() as usize).clamp(1, members.len() - 1);
        rng.shuffle(&mut members);
        for &i in &members[..n_test] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| is_test[i]);
    Ok((train, test))
}

/// [`stratified_indices`] over a manifest; both sides keep manifest order.
pub fn stratified_split(
    manifest: &Manifest,
    test_fraction: f64,
    seed: u64,
) -> Result<(Manifest, Manifest)> {
    let labels: Vec<Label> = manifest.records.iter().map(|r| r.label).collect();
    let (train, test) = stratified_indices(&labels, test_fraction, seed)?;
    let pick = |idx: &[usize]| Manifest {
        records: idx.iter().map(|&i| manifest.records[i].clone()).collect(),
    };
    Ok((pick(&train), pick(&test)))
}

/// Record count per label, in `Label::ALL` order.
pub fn class_histogram(manifest: &Manifest) -> [usize; 2] {
    let mut counts = [0; 2];
    for r in &manifest.records {
        counts[r.label.index()] += 1;
    }
    counts
}

pub fn save_histogram_csv(counts: &[usize; 2], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record(["label", "count"])
        .map_err(|e| csv_error(path, e))?;
    for label in Label::ALL {
        writer
            .write_record([label.as_str(), &counts[label.index()].to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn save_histogram_png(counts: &[usize; 2], title: &str, path: &Path) -> Result<()> {
    let labels: Vec<&str> = Label::ALL.iter().map(|l| l.as_str()).collect();
    let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    bar_chart(title, &labels, &values)?.save_png(path)
}

/// Labeled spectrogram images fed to training as `128 × width × 3` tensors.
#[derive(Clone, Debug, Default)]
pub struct ImageSet {
    pub images: Vec<MelImage>,
    pub labels: Vec<Label>,
}

impl ImageSet {
    pub fn push(&mut self, image: MelImage, label: Label) {
        self.images.push(image);
        self.labels.push(label);
    }

    /// Loads every PNG of a manifest.
    pub fn from_manifest(manifest: &Manifest) -> Result<Self> {
        let mut set = Self::default();
        for r in &manifest.records {
            set.push(MelImage::load_png(&r.path)?, r.label);
        }
        Ok(set)
    }

    pub fn width(&self) -> Option<usize> {
        self.images.first().map(MelImage::width)
    }

    /// Copies of the images at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

impl SampleSource for ImageSet {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn get(&self, index: usize) -> Result<(Tensor, usize)> {
        let image = self
            .images
            .get(index)
            .ok_or_else(|| Error::Index(format!("sample {index} of {}", self.images.len())))?;
        Ok((
            to_input_tensor(image, image.width())?,
            self.labels[index].index(),
        ))
    }
}
