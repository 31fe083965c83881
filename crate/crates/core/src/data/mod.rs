//! Dataset ingestion and file emitters.

mod idx;
mod pgm;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::index;
use sha2::{Digest, Sha256};

pub use idx::{encode_idx, parse_idx, IdxData, IdxDtype, IdxError, IdxTensor};
pub use pgm::{read_pgm, render_grid, write_filter_grid, write_pgm, GrayImage};

use crate::error::{Error, Result};
use crate::sampler::Rng;

/// Binary images (one per row) with their digit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarizedDataset {
    pub x: Array2<f64>,
    pub labels: Vec<u8>,
    /// SHA-256 of the source image bytes, hex encoded.
    pub checksum: String,
    /// Number of samples carrying each label `0..=9`.
    pub label_counts: [usize; 10],
}

impl BinarizedDataset {
    pub fn new(x: Array2<f64>, labels: Vec<u8>, checksum: String) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Empty("dataset"));
        }
        if labels.len() != x.nrows() {
            return Err(Error::Dimension {
                what: "labels",
                expected: x.nrows(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::InvalidParameter(format!("label {bad} outside 0..=9")));
        }
        crate::model::check_binary_matrix(x.view())?;
        let label_counts = count_labels(&labels);
        Ok(Self {
            x,
            labels,
            checksum,
            label_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

fn count_labels(labels: &[u8]) -> [usize; 10] {
    let mut counts = [0; 10];
    for &l in labels {
        counts[l as usize] += 1;
    }
    counts
}

fn checksum_of(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Thresholds pixel bytes: bit is 1 iff `pixel / 255 > threshold`. At the
/// default 0.5 this means `pixel >= 128`.
pub fn binarize(images: &IdxTensor, labels: &IdxTensor, threshold: f64) -> Result<BinarizedDataset> {
    let IdxData::U8(pixels) = images.data() else {
        return Err(Error::InvalidParameter("images must be unsigned bytes".into()));
    };
    let IdxData::U8(label_bytes) = labels.data() else {
        return Err(Error::InvalidParameter("labels must be unsigned bytes".into()));
    };
    let n = *images.dims().first().ok_or(Error::Empty("image tensor"))?;
    let width: usize = images.dims()[1..].iter().product();
    let x = Array2::from_shape_fn((n, width), |(r, c)| {
        if pixels[r * width + c] as f64 / 255.0 > threshold {
            1.0
        } else {
            0.0
        }
    });
    BinarizedDataset::new(x, label_bytes.clone(), checksum_of(pixels))
}

fn read_idx(path: &Path) -> Result<IdxTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_idx(&bytes)?)
}

/// Names of the four MNIST files inside a data directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

impl MnistSplit {
    fn file_names(self) -> (&'static str, &'static str) {
        match self {
            MnistSplit::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            MnistSplit::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }

    pub fn paths(self, dir: &Path) -> (PathBuf, PathBuf) {
        let (images, labels) = self.file_names();
        (dir.join(images), dir.join(labels))
    }
}

/// Loads and binarizes one MNIST split at the medium-gray threshold.
pub fn load_mnist(dir: &Path, split: MnistSplit) -> Result<BinarizedDataset> {
    let (images, labels) = split.paths(dir);
    binarize(&read_idx(&images)?, &read_idx(&labels)?, 0.5)
}

/// Seeded uniform sample of `n` rows without replacement, in draw order.
pub fn subset(dataset: &BinarizedDataset, n: usize, rng: &mut Rng) -> Result<BinarizedDataset> {
    if n > dataset.len() {
        return Err(Error::InvalidParameter(format!(
            "subset of {n} requested from {} samples",
            dataset.len()
        )));
    }
    let picks = index::sample(rng, dataset.len(), n).into_vec();
    let x = dataset.x.select(Axis(0), &picks);
    let labels = picks.iter().map(|&i| dataset.labels[i]).collect();
    BinarizedDataset::new(x, labels, dataset.checksum.clone())
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes a UTF-8, LF-terminated CSV file atomically.
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}
