//! CSV ingestion and per-client sampling.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use fedwagg_core::data::{DataError, Dataset};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("need at least {needed} rows, found {available}")]
    InsufficientRows { needed: usize, available: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

fn parse_error(line: u64, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_label(field: &str) -> Option<u8> {
    match field.trim().parse::<f64>().ok()? {
        v if v == 0.0 => Some(0),
        v if v == 1.0 => Some(1),
        _ => None,
    }
}

/// Numeric feature columns followed by a 0/1 label. A first row that does
/// not parse as numbers is taken as a header.
pub fn parse_csv<R: Read>(reader: R) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (index, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(index as u64 + 1, |p| p.line());
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map_or(index as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let numeric: Option<Vec<f64>> = record.iter().map(|f| f.parse::<f64>().ok()).collect();
        let Some(values) = numeric else {
            if index == 0 {
                continue;
            }
            return Err(parse_error(line, "non-numeric field"));
        };
        if values.len() < 2 {
            return Err(parse_error(line, "need at least one feature and a label"));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(parse_error(
                    line,
                    format!("{} fields, expected {w}", values.len()),
                ))
            }
            Some(_) => {}
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_error(line, "non-finite value"));
        }
        let label = parse_label(&record[values.len() - 1])
            .ok_or_else(|| parse_error(line, "label must be 0 or 1"))?;
        features.push(values[..values.len() - 1].to_vec());
        labels.push(label);
    }
    Ok(Dataset::new(features, labels)?)
}

/// Rescales every column to `[0, 1]`; constant columns become 0.
pub fn normalize(data: &Dataset) -> Dataset {
    let dim = data.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for row in data.features() {
        for (k, &v) in row.iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let features = data
        .features()
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(k, &v)| {
                    let span = hi[k] - lo[k];
                    if span > 0.0 {
                        (v - lo[k]) / span
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Dataset::with_dim(features, data.labels().to_vec(), Some(dim))
        .expect("normalization keeps the shape")
}

/// Takes a disjoint benchmark of `benchmark` rows, then draws `per_client`
/// rows with replacement from the remainder for each client.
pub fn split<R: RngCore + ?Sized>(
    data: &Dataset,
    per_client: usize,
    n_clients: usize,
    benchmark: usize,
    rng: &mut R,
) -> Result<(Vec<Dataset>, Dataset), DatasetError> {
    let needed = benchmark + usize::from(per_client > 0 && n_clients > 0);
    if data.len() < needed {
        return Err(DatasetError::InsufficientRows {
            needed,
            available: data.len(),
        });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let (bench_idx, rest) = order.split_at(benchmark);
    let clients = (0..n_clients)
        .map(|_| {
            let idx: Vec<usize> = (0..per_client)
                .map(|_| rest[rng.gen_range(0..rest.len())])
                .collect();
            data.subset(&idx)
        })
        .collect();
    Ok((clients, data.subset(bench_idx)))
}

pub fn load_dataset<R: RngCore + ?Sized>(
    path: &Path,
    per_client: usize,
    n_clients: usize,
    benchmark: usize,
    rng: &mut R,
) -> Result<(Vec<Dataset>, Dataset), DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let data = normalize(&parse_csv(file)?);
    split(&data, per_client, n_clients, benchmark, rng)
}
