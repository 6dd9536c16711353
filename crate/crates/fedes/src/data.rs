//! MNIST-style ingestion: IDX container parsing, normalization, client
//! partitioning, batching.
//!
//! Partitions are derived from a seed so every participant that holds the
//! same dataset and configuration computes the same assignment without
//! coordination; the server never ships index lists.

use std::io::Read;
use std::path::Path;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::detrand::PerturbSeed;
use crate::error::{ConfigError, DataError};
use crate::nn::Batch;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
const CLASSES: u8 = 10;

/// Labeled samples: row-major f32 images normalized to [0, 1], one u8 label
/// per row. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Dataset {
    width: usize,
    images: Vec<f32>,
    labels: Vec<u8>,
}

impl Dataset {
    /// Builds a dataset from already-normalized rows. Counts must agree.
    pub fn from_parts(width: usize, images: Vec<f32>, labels: Vec<u8>) -> Result<Self, DataError> {
        if images.len() != labels.len() * width {
            return Err(DataError::CountMismatch {
                images: if width == 0 { 0 } else { images.len() / width },
                labels: labels.len(),
            });
        }
        Ok(Dataset {
            width,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * self.width..(i + 1) * self.width]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// First `n` rows, in order. Used for reduced-scale experiments.
    pub fn truncate(mut self, n: usize) -> Self {
        if n < self.len() {
            self.images.truncate(n * self.width);
            self.labels.truncate(n);
        }
        self
    }

    /// Per-class sample counts over the given indices.
    pub fn class_counts(&self, idxs: &[u32]) -> [u64; CLASSES as usize] {
        let mut counts = [0u64; CLASSES as usize];
        for &i in idxs {
            counts[self.labels[i as usize] as usize] += 1;
        }
        counts
    }
}

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>, DataError> {
    let raw = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|source| DataError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct IdxReader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    offset: usize,
}

impl<'a> IdxReader<'a> {
    fn open(path: &'a Path) -> Result<Self, DataError> {
        Ok(IdxReader {
            path,
            bytes: read_maybe_gzip(path)?,
            offset: 0,
        })
    }

    fn be_u32(&mut self) -> Result<u32, DataError> {
        let chunk = self.take(4)?;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn take(&mut self, n: usize) -> Result<&[u8], DataError> {
        if self.bytes.len() - self.offset < n {
            return Err(DataError::Truncated {
                path: self.path.to_path_buf(),
                offset: self.bytes.len() as u64,
                needed: (self.offset + n - self.bytes.len()) as u64,
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn expect_magic(&mut self, expected: u32) -> Result<(), DataError> {
        let found = self.be_u32()?;
        if found != expected {
            return Err(DataError::BadMagic {
                path: self.path.to_path_buf(),
                found,
                expected,
            });
        }
        Ok(())
    }
}

/// Loads an IDX image/label file pair (raw or gzip-compressed, detected by
/// the 1f 8b header) and normalizes pixel bytes to [0, 1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let mut img = IdxReader::open(images_path)?;
    img.expect_magic(IMAGE_MAGIC)?;
    let n_images = img.be_u32()? as usize;
    let rows = img.be_u32()?;
    let cols = img.be_u32()?;
    let width = rows as u64 * cols as u64;
    // Caps at 16M pixels per image; real headers are tiny and a corrupt one
    // must not drive a huge allocation.
    if width == 0 || width > 1 << 24 {
        return Err(DataError::BadDimensions {
            path: images_path.to_path_buf(),
            rows,
            cols,
        });
    }
    let width = width as usize;
    let pixels = img.take(n_images * width)?;
    let images: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();

    let mut lab = IdxReader::open(labels_path)?;
    lab.expect_magic(LABEL_MAGIC)?;
    let n_labels = lab.be_u32()? as usize;
    if n_labels != n_images {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let labels = lab.take(n_labels)?.to_vec();
    if let Some(index) = labels.iter().position(|&l| l >= CLASSES) {
        return Err(DataError::LabelRange {
            path: labels_path.to_path_buf(),
            label: labels[index],
            index,
        });
    }
    Dataset::from_parts(width, images, labels)
}

/// How samples are assigned to clients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    #[default]
    Iid,
    NonIid,
}

/// Per-client sample index assignments. Lists are disjoint; their union
/// covers the dataset except for at most `dropped` shuffled-off samples.
#[derive(Clone, Debug)]
pub struct Partition {
    assignments: Vec<Vec<u32>>,
    pub mode: PartitionMode,
    pub dropped: u32,
}

impl Partition {
    pub fn clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn client(&self, k: usize) -> &[u32] {
        &self.assignments[k]
    }

    pub fn sample_counts(&self) -> Vec<u64> {
        self.assignments.iter().map(|a| a.len() as u64).collect()
    }
}

/// Seeded Fisher-Yates shuffle. The modulo draw has bias below 2^-32 for
/// any realistic dataset size, and stays bit-stable across platforms.
fn shuffle(rng: &mut ChaCha20Rng, items: &mut [u32]) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Splits `data` across `k` clients.
///
/// iid: seeded shuffle, then equal contiguous slices; the `n mod k`
/// remainder is dropped and reported in [`Partition::dropped`].
///
/// non-iid: samples are ordered by label, cut into 2k near-equal shards,
/// and each client receives one seeded-permuted pair of adjacent shards, so
/// a client sees only the few classes spanned by its slice of the label
/// order.
pub fn partition(
    data: &Dataset,
    k: u32,
    mode: PartitionMode,
    seed: &PerturbSeed,
) -> Result<Partition, ConfigError> {
    if k == 0 {
        return Err(ConfigError::NoClients);
    }
    let n = data.len();
    let need = match mode {
        PartitionMode::Iid => k as usize,
        PartitionMode::NonIid => 2 * k as usize,
    };
    if n < need {
        return Err(ConfigError::TooManyClients { n, k });
    }
    let mut rng = ChaCha20Rng::from_seed(*seed.as_bytes());
    let mut order: Vec<u32> = (0..n as u32).collect();
    match mode {
        PartitionMode::Iid => {
            shuffle(&mut rng, &mut order);
            let per = n / k as usize;
            let assignments = (0..k as usize)
                .map(|c| order[c * per..(c + 1) * per].to_vec())
                .collect();
            Ok(Partition {
                assignments,
                mode,
                dropped: (n % k as usize) as u32,
            })
        }
        PartitionMode::NonIid => {
            order.sort_unstable_by_key(|&i| (data.label(i as usize), i));
            // 2k shards, sizes differing by at most one; nothing dropped.
            let shards = 2 * k as usize;
            let base = n / shards;
            let extra = n % shards;
            let mut bounds = Vec::with_capacity(shards + 1);
            let mut at = 0usize;
            bounds.push(0);
            for s in 0..shards {
                at += base + usize::from(s < extra);
                bounds.push(at);
            }
            let mut pair_of_client: Vec<u32> = (0..k).collect();
            shuffle(&mut rng, &mut pair_of_client);
            let assignments = pair_of_client
                .iter()
                .map(|&p| {
                    let (lo, hi) = (bounds[2 * p as usize], bounds[2 * p as usize + 2]);
                    order[lo..hi].to_vec()
                })
                .collect();
            Ok(Partition {
                assignments,
                mode,
                dropped: 0,
            })
        }
    }
}

/// Cuts the listed samples into ceil(len / n_b) batches in index order; the
/// last batch may be short. `n_b` must be at least 1.
pub fn batches(data: &Dataset, idxs: &[u32], n_b: u32) -> Vec<Batch> {
    assert!(n_b >= 1, "batch size must be at least 1");
    idxs.chunks(n_b as usize)
        .map(|chunk| {
            let mut inputs = Vec::with_capacity(chunk.len() * data.width());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                inputs.extend_from_slice(data.image(i as usize));
                labels.push(data.label(i as usize));
            }
            Batch::new(data.width(), inputs, labels).expect("sizes consistent by construction")
        })
        .collect()
}
