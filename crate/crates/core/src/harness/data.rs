use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::trainers::{LabeledDataset, Model};

/// Fraction of synthetic labels flipped after thresholding.
pub const LABEL_NOISE: f64 = 0.1;

/// Gaussian features labelled by a random hyperplane through the origin,
/// with [`LABEL_NOISE`] of the labels flipped.
pub fn synth_dataset(rows: usize, cols: usize, seed: u64, model: Model) -> Result<LabeledDataset> {
    synth_dataset_with_noise(rows, cols, seed, model, LABEL_NOISE)
}

pub fn synth_dataset_with_noise(rows: usize, cols: usize, seed: u64, model: Model, noise: f64) -> Result<LabeledDataset> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!("synthetic dataset needs rows, cols >= 1, got {rows}x{cols}")));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::invalid(format!("label noise must lie in [0, 1], got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    let x = DenseMatrix::new(rows, cols, data)?;
    let y = (0..rows)
        .map(|r| {
            let mut positive = dot(x.row(r), &truth) >= 0.0;
            if rng.random_bool(noise) {
                positive = !positive;
            }
            if positive {
                1.0
            } else {
                model.negative_label()
            }
        })
        .collect();
    LabeledDataset::new(x, y)
}

/// Reads `label,feature,...` rows. Labels may use either `{0,1}` or
/// `{-1,+1}` and are mapped to the model's coding.
pub fn load_csv(path: &Path, model: Model, header: bool) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    parse_csv(file, model, header)
}

pub fn parse_csv(input: impl std::io::Read, model: Model, header: bool) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(header).flexible(true).trim(csv::Trim::All).from_reader(input);
    let mut width: Option<usize> = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None if record.len() < 2 => {
                return Err(Error::Parse { line, message: "need a label and at least one feature".into() })
            }
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse { line, message: format!("expected {w} fields, found {}", record.len()) })
            }
            Some(_) => {}
        }
        let mut cells = record.iter().map(|cell| {
            cell.parse::<f64>().map_err(|_| Error::Parse { line, message: format!("non-numeric cell '{cell}'") })
        });
        let raw = cells.next().expect("width checked")?;
        let label = model
            .map_label(raw)
            .ok_or_else(|| Error::Data(format!("line {line}: label {raw} is not admissible for {model}")))?;
        labels.push(label);
        for v in cells {
            features.push(v?);
        }
    }
    let Some(w) = width else {
        return Err(Error::Data("csv contains no samples".into()));
    };
    LabeledDataset::new(DenseMatrix::new(labels.len(), w - 1, features)?, labels)
}
