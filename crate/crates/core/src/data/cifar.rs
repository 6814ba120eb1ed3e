//! CIFAR-10 binary format: each record is one label byte followed by
//! `C × H × W` channel-planar pixel bytes (3 × 32 × 32 for CIFAR-10).

use std::path::Path;

use super::{Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::nn::Shape3;
use crate::tensor::Tensor;

pub const CIFAR_SHAPE: Shape3 = (3, 32, 32);
const CIFAR_CLASSES: usize = 10;
const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

/// Parses a record file with images of `shape` and labels below `classes`.
pub fn read_records(path: &Path, shape: Shape3, classes: usize) -> Result<Vec<LabeledImage>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_records(&bytes, shape, classes).map_err(|reason| Error::CorruptDataset {
        path: path.to_path_buf(),
        reason,
    })
}

fn parse_records(bytes: &[u8], shape: Shape3, classes: usize) -> std::result::Result<Vec<LabeledImage>, String> {
    let (c, h, w) = shape;
    let record = 1 + c * h * w;
    if !bytes.len().is_multiple_of(record) {
        return Err(format!(
            "size {} is not a multiple of the {record}-byte record",
            bytes.len()
        ));
    }
    bytes
        .chunks_exact(record)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[0] as usize;
            if label >= classes {
                return Err(format!("record {i} has label {label} (max {})", classes - 1));
            }
            let pixels = rec[1..].iter().map(|&b| b as f64 / 255.0).collect();
            Ok(LabeledImage {
                pixels: Tensor::new(vec![c, h, w], pixels).map_err(|e| e.to_string())?,
                label,
            })
        })
        .collect()
}

/// Writes images in the same record layout, quantising pixels to bytes.
pub fn write_records(path: &Path, images: &[LabeledImage]) -> Result<()> {
    let mut out = Vec::new();
    for img in images {
        let label = u8::try_from(img.label)
            .map_err(|_| Error::InvalidArgument(format!("label {} does not fit a byte", img.label)))?;
        out.push(label);
        out.extend(
            img.pixels
                .data()
                .iter()
                .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    crate::io::write_atomic(path, &out)
}

/// Loads the five training batches and the test batch from `dir`.
pub fn load_cifar10_binary(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut train = Vec::new();
    for f in TRAIN_FILES {
        train.extend(read_records(&dir.join(f), CIFAR_SHAPE, CIFAR_CLASSES)?);
    }
    let test = read_records(&dir.join(TEST_FILE), CIFAR_SHAPE, CIFAR_CLASSES)?;
    Ok((
        Dataset::new(train, CIFAR_CLASSES, CIFAR_SHAPE)?,
        Dataset::new(test, CIFAR_CLASSES, CIFAR_SHAPE)?,
    ))
}
