//! Reader for the CIFAR binary distribution.
//!
//! A CIFAR-10 record is one label byte followed by 3072 pixel bytes; CIFAR-100
//! records carry a coarse and a fine label byte before the pixels. Pixels are
//! stored as three 32×32 planes (red, green, blue), rows top to bottom.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ssal_core::datasets::{Dataset, Split};
use ssal_core::Image;

use crate::error::{Error, Result};

pub const SIDE: usize = 32;
const PIXELS: usize = SIDE * SIDE * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl FromStr for CifarVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cifar10" => Ok(CifarVariant::Cifar10),
            "cifar100" => Ok(CifarVariant::Cifar100),
            other => Err(format!("unknown CIFAR variant `{other}`")),
        }
    }
}

impl CifarVariant {
    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    fn header_len(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.header_len() + PIXELS
    }

    /// Batch files of a split, in reading order.
    pub fn files(self, split: Split) -> Vec<&'static str> {
        match (self, split) {
            (CifarVariant::Cifar10, Split::Train) => vec![
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            (CifarVariant::Cifar10, Split::Test) => vec!["test_batch.bin"],
            (CifarVariant::Cifar100, Split::Train) => vec!["train.bin"],
            (CifarVariant::Cifar100, Split::Test) => vec!["test.bin"],
        }
    }

    fn subdir(self) -> &'static str {
        match self {
            CifarVariant::Cifar10 => "cifar-10-batches-bin",
            CifarVariant::Cifar100 => "cifar-100-binary",
        }
    }

    fn names_file(self) -> &'static str {
        match self {
            CifarVariant::Cifar10 => "batches.meta.txt",
            CifarVariant::Cifar100 => "fine_label_names.txt",
        }
    }
}

/// `dir` itself, or the directory the official archive extracts to inside it.
fn resolve_dir(dir: &Path, variant: CifarVariant) -> PathBuf {
    let nested = dir.join(variant.subdir());
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn class_names(dir: &Path, variant: CifarVariant) -> Vec<String> {
    let n = variant.num_classes();
    let listed: Vec<String> = fs::read_to_string(dir.join(variant.names_file()))
        .map(|s| s.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
        .unwrap_or_default();
    if listed.len() == n {
        listed
    } else {
        (0..n).map(|i| format!("class-{i}")).collect()
    }
}

/// Decode the records of one batch file. Fails without partial output if the
/// length is not a whole number of records or a label is out of range.
pub fn decode_records(path: &Path, bytes: &[u8], variant: CifarVariant) -> Result<(Vec<Image>, Vec<usize>)> {
    let rec = variant.record_len();
    if bytes.is_empty() || !bytes.len().is_multiple_of(rec) {
        return Err(Error::format(
            path,
            format!("{} bytes is not a whole number of {rec}-byte records", bytes.len()),
        ));
    }
    let n = bytes.len() / rec;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (r, chunk) in bytes.chunks_exact(rec).enumerate() {
        let label = chunk[variant.header_len() - 1] as usize;
        if label >= variant.num_classes() {
            return Err(Error::format(path, format!("record {r} has label {label}")));
        }
        let planes = &chunk[variant.header_len()..];
        let mut data = vec![0.0f32; PIXELS];
        for c in 0..3 {
            for i in 0..SIDE * SIDE {
                data[i * 3 + c] = planes[c * SIDE * SIDE + i] as f32 / 255.0;
            }
        }
        images.push(Image::new(SIDE, SIDE, 3, data)?);
        labels.push(label);
    }
    Ok((images, labels))
}

/// Load one split of CIFAR-10 or CIFAR-100 (fine labels) from `dir`.
pub fn load_cifar(dir: &Path, variant: CifarVariant, split: Split) -> Result<Dataset> {
    let root = resolve_dir(dir, variant);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for name in variant.files(split) {
        let path = root.join(name);
        if !path.is_file() {
            return Err(Error::Ingest {
                path,
                msg: "CIFAR batch file not found".into(),
            });
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (im, lb) = decode_records(&path, &bytes, variant)?;
        images.extend(im);
        labels.extend(lb);
    }
    let names = class_names(&root, variant);
    Ok(Dataset::new(images, labels, variant.num_classes(), names, split)?)
}
