//! Datasets: MNIST IDX decoding, synthetic Gaussian blobs and mini-batch
//! sampling.
//!
//! IDX files are big-endian: a 4-byte magic (`0x00000803` for unsigned-byte
//! images of rank 3, `0x00000801` for labels of rank 1), one `u32` per
//! dimension, then the payload in row-major order.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::{Batch, Shape};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Number of evaluation examples used by the convergence monitor.
pub const EVAL_SUBSET: usize = 1_000;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{what}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        what: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("{what}: truncated file, need {needed} bytes, have {actual}")]
    Truncated {
        what: &'static str,
        needed: usize,
        actual: usize,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid dataset parameters: {0}")]
    Invalid(String),
}

/// Decoded IDX image file (raw bytes, row-major).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels
            .len()
            .checked_div(self.rows * self.cols)
            .unwrap_or(0)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn require(what: &'static str, bytes: &[u8], needed: usize) -> Result<(), DataError> {
    if bytes.len() < needed {
        return Err(DataError::Truncated {
            what,
            needed,
            actual: bytes.len(),
        });
    }
    Ok(())
}

pub fn decode_idx_images(bytes: &[u8]) -> Result<IdxImages, DataError> {
    const WHAT: &str = "image file";
    require(WHAT, bytes, 16)?;
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            what: WHAT,
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let len = count * rows * cols;
    require(WHAT, bytes, 16 + len)?;
    Ok(IdxImages {
        rows,
        cols,
        pixels: bytes[16..16 + len].to_vec(),
    })
}

pub fn decode_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    const WHAT: &str = "label file";
    require(WHAT, bytes, 8)?;
    let magic = be_u32(bytes, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            what: WHAT,
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let count = be_u32(bytes, 4) as usize;
    require(WHAT, bytes, 8 + count)?;
    Ok(bytes[8..8 + count].to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.count() as u32).to_be_bytes());
    out.extend_from_slice(&(images.rows as u32).to_be_bytes());
    out.extend_from_slice(&(images.cols as u32).to_be_bytes());
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// In-memory classification dataset; features are row-major `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: Shape,
    pub features: Vec<f32>,
    pub labels: Vec<u8>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(
        shape: Shape,
        features: Vec<f32>,
        labels: Vec<u8>,
        classes: usize,
    ) -> Result<Self, DataError> {
        if features.len() != shape.size() * labels.len() {
            return Err(DataError::CountMismatch {
                images: features.len() / shape.size().max(1),
                labels: labels.len(),
            });
        }
        Ok(Dataset {
            shape,
            features,
            labels,
            classes,
        })
    }

    /// Builds a dataset from decoded IDX files, normalizing pixels by 1/255.
    pub fn from_idx(images: &IdxImages, labels: &[u8]) -> Result<Self, DataError> {
        if images.count() != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.count(),
                labels: labels.len(),
            });
        }
        let features = images.pixels.iter().map(|&p| p as f32 / 255.0).collect();
        let classes = labels
            .iter()
            .copied()
            .max()
            .map_or(0, |m| m as usize + 1)
            .max(10);
        Dataset::new(
            Shape::image(1, images.rows, images.cols),
            features,
            labels.to_vec(),
            classes,
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.shape.size()
    }

    pub fn example(&self, i: usize) -> (&[f32], u8) {
        let n = self.feature_len();
        (&self.features[i * n..(i + 1) * n], self.labels[i])
    }

    /// The first `n` examples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            shape: self.shape,
            features: self.features[..n * self.feature_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    /// Splits into the first `n` examples and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let cut = n * self.feature_len();
        let part = |features: &[f32], labels: &[u8]| Dataset {
            shape: self.shape,
            features: features.to_vec(),
            labels: labels.to_vec(),
            classes: self.classes,
        };
        (
            part(&self.features[..cut], &self.labels[..n]),
            part(&self.features[cut..], &self.labels[n..]),
        )
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> Batch<f32> {
        Batch::new(self.features.clone(), self.labels.clone())
    }
}

/// Loads an MNIST image/label file pair.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<Dataset, DataError> {
    let imgs = decode_idx_images(&read(images)?)?;
    let labs = decode_idx_labels(&read(labels)?)?;
    Dataset::from_idx(&imgs, &labs)
}

/// Gaussian clusters, one per class, with `per_class` points each.
///
/// Class centers are drawn from a standard normal in `dims` dimensions;
/// points are `center + spread * N(0, I)`. Examples are interleaved by class
/// so any prefix is close to balanced.
pub fn synthetic_blobs(
    classes: usize,
    dims: usize,
    per_class: usize,
    spread: f32,
    seed: u64,
) -> Result<Dataset, DataError> {
    if !(2..=256).contains(&classes) {
        return Err(DataError::Invalid(format!(
            "classes must be in 2..=256, got {classes}"
        )));
    }
    if dims == 0 || per_class == 0 {
        return Err(DataError::Invalid(
            "dims and per_class must be positive".into(),
        ));
    }
    if !(spread >= 0.0) {
        return Err(DataError::Invalid(format!(
            "spread must be non-negative, got {spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0f32, 1.0).expect("unit normal");
    let centers: Vec<f32> = (0..classes * dims)
        .map(|_| std_normal.sample(&mut rng))
        .collect();
    let mut features = Vec::with_capacity(classes * per_class * dims);
    let mut labels = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for c in 0..classes {
            for &mu in &centers[c * dims..(c + 1) * dims] {
                features.push(mu + spread * std_normal.sample(&mut rng));
            }
            labels.push(c as u8);
        }
    }
    Dataset::new(Shape::flat(dims), features, labels, classes)
}

/// Draws `batch_size` examples uniformly with replacement into `out`.
pub fn sample_batch_into<R: Rng + ?Sized>(
    dataset: &Dataset,
    batch_size: usize,
    rng: &mut R,
    out: &mut Batch<f32>,
) -> Result<(), DataError> {
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    if batch_size == 0 {
        return Err(DataError::Invalid("batch size must be at least 1".into()));
    }
    out.clear();
    for _ in 0..batch_size {
        let i = rng.gen_range(0..dataset.len());
        let (x, y) = dataset.example(i);
        out.inputs.extend_from_slice(x);
        out.labels.push(y);
    }
    Ok(())
}

pub fn sample_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch<f32>, DataError> {
    let mut out = Batch::default();
    sample_batch_into(dataset, batch_size, rng, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Two 2x3 images written byte by byte from the IDX layout description,
    // independent of the encoder.
    fn fixture_images() -> Vec<u8> {
        let mut b = vec![0x00, 0x00, 0x08, 0x03];
        b.extend_from_slice(&[0, 0, 0, 2]);
        b.extend_from_slice(&[0, 0, 0, 2]);
        b.extend_from_slice(&[0, 0, 0, 3]);
        b.extend_from_slice(&[0, 1, 2, 3, 4, 255]);
        b.extend_from_slice(&[255, 128, 64, 32, 16, 8]);
        b
    }

    fn fixture_labels() -> Vec<u8> {
        vec![0x00, 0x00, 0x08, 0x01, 0, 0, 0, 2, 7, 3]
    }

    #[test]
    fn decodes_hand_built_fixture() {
        let imgs = decode_idx_images(&fixture_images()).unwrap();
        assert_eq!((imgs.count(), imgs.rows, imgs.cols), (2, 2, 3));
        assert_eq!(imgs.pixels[5], 255);
        assert_eq!(imgs.pixels[7], 128);
        let labels = decode_idx_labels(&fixture_labels()).unwrap();
        assert_eq!(labels, vec![7, 3]);

        let ds = Dataset::from_idx(&imgs, &labels).unwrap();
        assert_eq!(ds.shape, Shape::image(1, 2, 3));
        assert_eq!(ds.example(0).1, 7);
        assert_eq!(ds.example(0).0[5], 1.0);
        assert_eq!(ds.example(1).0[1], 128.0 / 255.0);
        assert!(ds.features.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn reencoding_is_byte_exact() {
        let imgs = decode_idx_images(&fixture_images()).unwrap();
        assert_eq!(encode_idx_images(&imgs), fixture_images());
        let labels = decode_idx_labels(&fixture_labels()).unwrap();
        assert_eq!(encode_idx_labels(&labels), fixture_labels());
    }

    #[test]
    fn bad_magic() {
        let mut b = fixture_images();
        b[3] = 0x01;
        assert!(matches!(
            decode_idx_images(&b),
            Err(DataError::BadMagic { found: 0x801, .. })
        ));
        assert!(matches!(
            decode_idx_labels(&fixture_images()),
            Err(DataError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated() {
        let b = fixture_images();
        assert!(matches!(
            decode_idx_images(&b[..b.len() - 1]),
            Err(DataError::Truncated {
                needed: 28,
                actual: 27,
                ..
            })
        ));
        assert!(matches!(
            decode_idx_labels(&[0, 0, 8]),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn count_mismatch() {
        let imgs = decode_idx_images(&fixture_images()).unwrap();
        assert!(matches!(
            Dataset::from_idx(&imgs, &[1]),
            Err(DataError::CountMismatch {
                images: 2,
                labels: 1
            })
        ));
    }

    #[test]
    fn load_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        fs::write(&ip, fixture_images()).unwrap();
        fs::write(&lp, fixture_labels()).unwrap();
        let ds = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(matches!(
            load_mnist_idx(&dir.path().join("missing"), &lp),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn zero_spread_blobs_sit_on_centers() {
        let ds = synthetic_blobs(3, 4, 5, 0.0, 11).unwrap();
        assert_eq!(ds.len(), 15);
        for i in 0..ds.len() {
            let (x, y) = ds.example(i);
            let (c, yc) = ds.example(y as usize);
            assert_eq!(y, yc);
            assert_eq!(x, c);
        }
    }

    #[test]
    fn split_partitions_examples() {
        let d = synthetic_blobs(3, 2, 4, 0.1, 1).unwrap();
        let (a, b) = d.split_at(5);
        assert_eq!((a.len(), b.len()), (5, 7));
        assert_eq!(a.example(4), d.example(4));
        assert_eq!(b.example(0), d.example(5));
        assert_eq!(d.split_at(100).1.len(), 0);
    }

    #[test]
    fn blobs_are_deterministic() {
        assert_eq!(
            synthetic_blobs(4, 8, 10, 0.3, 5).unwrap(),
            synthetic_blobs(4, 8, 10, 0.3, 5).unwrap()
        );
        assert_ne!(
            synthetic_blobs(4, 8, 10, 0.3, 5).unwrap(),
            synthetic_blobs(4, 8, 10, 0.3, 6).unwrap()
        );
        assert!(synthetic_blobs(1, 8, 10, 0.3, 5).is_err());
    }

    #[test]
    fn sampling_single_and_deterministic() {
        let ds = synthetic_blobs(2, 3, 1, 0.1, 1).unwrap().head(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_batch(&ds, 1, &mut rng).unwrap();
        assert_eq!(b.inputs, ds.features);
        assert_eq!(b.labels, ds.labels);

        let ds = synthetic_blobs(5, 3, 20, 0.1, 1).unwrap();
        let a = sample_batch(&ds, 16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_batch(&ds, 16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_errors() {
        let empty = Dataset::new(Shape::flat(2), vec![], vec![], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_batch(&empty, 1, &mut rng),
            Err(DataError::Empty)
        ));
        let ds = synthetic_blobs(2, 3, 1, 0.1, 1).unwrap();
        assert!(sample_batch(&ds, 0, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_uniform() {
        // 10 items, 1e5 single draws: count ~ Binomial(1e5, 0.1), sd = sqrt(9000) ~ 94.9.
        let ds = Dataset::new(
            Shape::flat(1),
            (0..10).map(|i| i as f32).collect(),
            (0..10).collect(),
            10,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0u32; 10];
        let b = sample_batch(&ds, 100_000, &mut rng).unwrap();
        for y in b.labels {
            counts[y as usize] += 1;
        }
        let sd = (100_000.0f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() < 5.0 * sd, "{counts:?}");
        }
    }
}
