//! CSV ingestion: header + numeric rows, seeded shuffle split, train-stat
//! standardization.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::{Dataset, GeneratorFingerprint};
use crate::error::{Error, Result};

/// Parse a numeric CSV, split it into train/test by a seeded shuffle, and
/// (optionally) standardize features to zero mean and unit variance using
/// train statistics only. `split_fraction` is the train share. Constant
/// columns standardize to all-zeros under a 1e-12 variance floor.
pub fn load_csv(
    path: &Path,
    target_column: &str,
    split_fraction: f64,
    seed: u64,
    standardize: bool,
) -> Result<(Dataset, Dataset)> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must be in (0,1), got {split_fraction}"
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::CsvParse { line: 1, message: e.to_string() })?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::Config(format!("target column '{target_column}' not in header")))?;
    let p = headers.len() - 1;
    if p == 0 {
        return Err(Error::Data("no feature columns".into()));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2; // header is line 1
        let record = record.map_err(|e| Error::CsvParse { line, message: e.to_string() })?;
        if record.len() != headers.len() {
            return Err(Error::CsvParse {
                line,
                message: format!("expected {} cells, found {}", headers.len(), record.len()),
            });
        }
        let mut features = Vec::with_capacity(p);
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::CsvParse {
                line,
                message: format!("non-numeric cell in column '{}': '{cell}'", headers[j]),
            })?;
            if j == target_idx {
                targets.push(value);
            } else {
                features.push(value);
            }
        }
        rows.push(features);
    }
    let n = rows.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 rows, found {n}")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = ((split_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    // train-only standardization statistics
    let (mut means, mut stds) = (vec![0.0; p], vec![1.0; p]);
    if standardize {
        for j in 0..p {
            let mean = train_idx.iter().map(|&i| rows[i][j]).sum::<f64>() / n_train as f64;
            let var = train_idx
                .iter()
                .map(|&i| (rows[i][j] - mean).powi(2))
                .sum::<f64>()
                / n_train as f64;
            means[j] = mean;
            stds[j] = var.max(1e-12).sqrt();
        }
    }

    let build = |idx: &[usize], tag: &str| -> Dataset {
        let mut x = Array2::zeros((idx.len(), p));
        let mut y = Array1::zeros(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            for j in 0..p {
                x[[k, j]] = if standardize {
                    let z = (rows[i][j] - means[j]) / stds[j];
                    // a constant column has variance at the floor: force 0
                    if stds[j] <= 1e-6 + 1e-12 && (rows[i][j] - means[j]).abs() < 1e-9 {
                        0.0
                    } else {
                        z
                    }
                } else {
                    rows[i][j]
                };
            }
            y[k] = targets[i];
        }
        Dataset {
            x,
            y,
            theta_star: None,
            meta: GeneratorFingerprint {
                seed,
                spec: format!("csv:{}:{tag}", path.display()),
            },
        }
    };
    Ok((build(train_idx, "train"), build(test_idx, "test")))
}
