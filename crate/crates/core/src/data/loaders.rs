//! File loaders.
//!
//! CIFAR binary: a file is a concatenation of 3073-byte records. Byte 0 is the
//! label; bytes 1..1025 are the red plane, 1025..2049 green and 2049..3073
//! blue, each a 32×32 image in row-major order. Samples are converted to
//! interleaved HWC `f64` values in `[0, 255]`.
//!
//! CSV: one sample per line, `label,x1,...,xd`, comma separated. The label is
//! a non-negative integer; features are decimal floats. A first line whose
//! label field is not an integer is treated as a header and skipped. Every
//! row must have the same number of fields.

use std::fs;
use std::path::Path;

use super::{Dataset, SampleShape, Split};
use crate::error::{Error, Result};
use crate::model::ClassId;
use crate::tensor::Matrix;

pub const CIFAR_RECORD_BYTES: usize = 3073;
const CIFAR_SIDE: usize = 32;
const CIFAR_PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;

pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P], split: Split) -> Result<Dataset> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!(
                    "size {} is not a positive multiple of {CIFAR_RECORD_BYTES}",
                    bytes.len()
                ),
            });
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
            labels.push(ClassId(record[0] as u32));
            let pixels = &record[1..];
            for p in 0..CIFAR_PLANE {
                for ch in 0..3 {
                    values.push(pixels[ch * CIFAR_PLANE + p] as f64);
                }
            }
        }
    }
    let shape = SampleShape::Image {
        height: CIFAR_SIDE,
        width: CIFAR_SIDE,
        channels: 3,
    };
    let inputs = Matrix::from_vec(labels.len(), shape.len(), values)?;
    Dataset::new(shape, split, inputs, labels)
}

pub fn load_csv(path: &Path, split: Split) -> Result<Dataset> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(e.to_string()))?;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let Some(label_field) = record.get(0) else { continue };
        let label = match label_field.parse::<u32>() {
            Ok(l) => l,
            Err(_) if line == 0 => continue,
            Err(_) => return Err(parse_err(format!("line {}: bad label `{label_field}`", line + 1))),
        };
        let feats = record.len() - 1;
        if feats == 0 {
            return Err(parse_err(format!("line {}: no feature columns", line + 1)));
        }
        match dim {
            None => dim = Some(feats),
            Some(d) if d != feats => {
                return Err(parse_err(format!(
                    "line {}: {feats} features, expected {d}",
                    line + 1
                )))
            }
            _ => {}
        }
        for field in record.iter().skip(1) {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|_| parse_err(format!("line {}: bad value `{field}`", line + 1)))?,
            );
        }
        labels.push(ClassId(label));
    }
    let dim = dim.ok_or_else(|| parse_err("no samples".into()))?;
    let inputs = Matrix::from_vec(labels.len(), dim, values)?;
    Dataset::new(SampleShape::Vector { dim }, split, inputs, labels)
}
