//! Labelled image datasets: IDX and CIFAR-10 binary readers and a seeded
//! synthetic generator.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Dataset(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Dataset(format!("label {bad} out of range for {num_classes} classes")));
        }
        if let Some(first) = images.first() {
            first.chw()?;
            if images.iter().any(|t| t.shape() != first.shape()) {
                return Err(Error::Dataset("images have differing shapes".into()));
            }
        }
        Ok(Dataset { images, labels, num_classes, split })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(Tensor::shape)
    }

    /// First `n` examples.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn byte_to_unit(b: u8) -> f64 {
    f64::from(b) / 127.5 - 1.0
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated(path.display().to_string()))
}

fn check_magic(bytes: &[u8], path: &Path, expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic { path: path.display().to_string(), found, expected });
    }
    Ok(())
}

/// Parse an IDX image file (`u8`, 3 dims) and its IDX label file (`u8`, 1 dim).
/// Greyscale is replicated to three channels; pixels map to `x / 127.5 - 1`.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ib = read_bytes(ip)?;
    let lb = read_bytes(lp)?;
    check_magic(&ib, ip, IDX_IMAGES_MAGIC)?;
    check_magic(&lb, lp, IDX_LABELS_MAGIC)?;

    let n = be_u32(&ib, 4, ip)? as usize;
    let rows = be_u32(&ib, 8, ip)? as usize;
    let cols = be_u32(&ib, 12, ip)? as usize;
    let nl = be_u32(&lb, 4, lp)? as usize;
    if n != nl {
        return Err(Error::Dataset(format!("{} holds {n} images but {} holds {nl} labels", ip.display(), lp.display())));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Dataset(format!("{}: zero image extent", ip.display())));
    }
    let px = rows * cols;
    let pixels = ib.get(16..16 + n * px).ok_or_else(|| Error::Truncated(ip.display().to_string()))?;
    let label_bytes = lb.get(8..8 + n).ok_or_else(|| Error::Truncated(lp.display().to_string()))?;

    let images = pixels
        .chunks_exact(px)
        .map(|chunk| {
            let gray: Vec<f64> = chunk.iter().map(|&b| byte_to_unit(b)).collect();
            let data = gray.iter().chain(&gray).chain(&gray).copied().collect();
            Tensor::new(vec![3, rows, cols], data).expect("idx shape")
        })
        .collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    Dataset::new(images, labels, num_classes, split)
}

/// Parse CIFAR-10 binary batches: records of one label byte followed by
/// 3072 channel-major pixel bytes.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P], split: Split) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = read_bytes(p)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Dataset(format!(
                "{}: length {} is not a multiple of the {CIFAR_RECORD}-byte record",
                p.display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            labels.push(usize::from(rec[0]));
            let data = rec[1..].iter().map(|&b| byte_to_unit(b)).collect();
            images.push(Tensor::new(vec![3, 32, 32], data).expect("cifar shape"));
        }
    }
    Dataset::new(images, labels, 10, split)
}

/// Pattern family of the synthetic generator. Families do not share any
/// visual structure, so one can stand in for a second, unrelated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// A coloured shape on a noisy background.
    Shapes,
    /// Oriented coloured stripes.
    Stripes,
}

/// Pixel amplitude of synthetic content. Kept well inside `[-1, 1]` so a
/// saturated trigger never appears by accident.
pub const SYNTHETIC_AMPLITUDE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub family: Family,
    pub num_classes: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_image_size() -> usize {
    32
}
fn default_noise() -> f64 {
    0.1
}

impl SyntheticTask {
    pub fn shapes(num_classes: usize) -> Self {
        SyntheticTask { family: Family::Shapes, num_classes, image_size: 32, noise: 0.1 }
    }

    pub fn stripes(num_classes: usize) -> Self {
        SyntheticTask { family: Family::Stripes, ..Self::shapes(num_classes) }
    }

    pub fn with_size(self, image_size: usize) -> Self {
        SyntheticTask { image_size, ..self }
    }

    pub fn generate(&self, n: usize, seed: u64, split: Split) -> Result<Dataset> {
        if self.num_classes < 2 {
            return Err(Error::Config("synthetic task needs at least two classes".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config("synthetic images must be at least 8x8".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // balanced: every class appears floor(n/k) or ceil(n/k) times
        let mut labels: Vec<usize> = (0..n).map(|i| i % self.num_classes).collect();
        labels.shuffle(&mut rng);
        let images = labels.iter().map(|&l| self.render(l, &mut rng)).collect();
        Dataset::new(images, labels, self.num_classes, split)
    }

    fn colour(&self, class: usize) -> [f64; 3] {
        // distinct sign patterns per channel, cycling through 6 non-gray colours
        const PALETTE: [[f64; 3]; 6] =
            [[1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0], [1.0, 1.0, -1.0], [-1.0, 1.0, 1.0], [1.0, -1.0, 1.0]];
        let p = PALETTE[class % PALETTE.len()];
        let scale = if (class / PALETTE.len()) % 2 == 0 { 0.8 } else { 0.45 };
        p.map(|v| v * scale * SYNTHETIC_AMPLITUDE)
    }

    fn render(&self, class: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let s = self.image_size;
        let mut img = Tensor::zeros(&[3, s, s]);
        for v in img.data_mut() {
            *v = rng.gen_range(-self.noise..=self.noise);
        }
        let colour = self.colour(class);
        let shape = class % 5;
        let jitter = (s / 16).max(1) as i64;
        let cy = (s / 2) as f64 + rng.gen_range(-jitter..=jitter) as f64;
        let cx = (s / 2) as f64 + rng.gen_range(-jitter..=jitter) as f64;
        let r = s as f64 * rng.gen_range(0.22..0.3);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for y in 0..s {
            for x in 0..s {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let on = match self.family {
                    Family::Shapes => match shape {
                        0 => dy.abs() <= r && dx.abs() <= r,
                        1 => dy * dy + dx * dx <= r * r,
                        2 => dy.abs() <= r * 0.35 && dx.abs() <= r * 1.2,
                        3 => dx.abs() <= r * 0.35 && dy.abs() <= r * 1.2,
                        _ => (dy.abs() <= r * 0.3 || dx.abs() <= r * 0.3) && dy.abs() <= r && dx.abs() <= r,
                    },
                    Family::Stripes => {
                        let angle = std::f64::consts::PI * shape as f64 / 5.0;
                        let u = dx * angle.cos() + dy * angle.sin();
                        (u * 0.9 + phase).sin() > 0.0
                    }
                };
                if on {
                    for (c, &v) in colour.iter().enumerate() {
                        let cur = img.at3(c, y, x);
                        img.set3(c, y, x, (v + cur * 0.5).clamp(-SYNTHETIC_AMPLITUDE, SYNTHETIC_AMPLITUDE));
                    }
                }
            }
        }
        img
    }
}

/// Where a train/test pair comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    Synthetic {
        #[serde(flatten)]
        task: SyntheticTask,
        train: usize,
        test: usize,
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
    Cifar10 {
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl DatasetSpec {
    pub fn synthetic(task: SyntheticTask, train: usize, test: usize, seed: u64) -> Self {
        DatasetSpec::Synthetic { task, train, test, seed }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DatasetSpec::Synthetic { task, .. } => task.num_classes,
            _ => 10,
        }
    }

    pub fn image_size(&self) -> usize {
        match self {
            DatasetSpec::Synthetic { task, .. } => task.image_size,
            DatasetSpec::Idx { .. } => 28,
            DatasetSpec::Cifar10 { .. } => 32,
        }
    }

    /// Load `(train, test)`.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let cap = |d: Dataset, limit: &Option<usize>| match limit {
            Some(n) => d.take(*n),
            None => d,
        };
        match self {
            DatasetSpec::Synthetic { task, train, test, seed } => Ok((
                task.generate(*train, *seed, Split::Train)?,
                task.generate(*test, seed.wrapping_add(0x5eed_7e57), Split::Test)?,
            )),
            DatasetSpec::Idx { train_images, train_labels, test_images, test_labels, limit } => Ok((
                cap(load_idx(train_images, train_labels, Split::Train)?, limit),
                cap(load_idx(test_images, test_labels, Split::Test)?, limit),
            )),
            DatasetSpec::Cifar10 { train, test, limit } => Ok((
                cap(load_cifar_binary(train, Split::Train)?, limit),
                cap(load_cifar_binary(test, Split::Test)?, limit),
            )),
        }
    }
}

/// IDX image-file bytes for `u8` images of one size. Used to build fixtures.
pub fn encode_idx_images(images: &[Vec<u8>], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [images.len(), rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

/// IDX label-file bytes.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn idx_single_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut px = vec![0u8; 4];
        px[1] = 255;
        let i = write(dir.path(), "i", &encode_idx_images(&[px], 2, 2));
        let l = write(dir.path(), "l", &encode_idx_labels(&[7]));
        let d = load_idx(&i, &l, Split::Test).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.labels, vec![7]);
        assert_eq!(d.images[0].shape(), &[3, 2, 2]);
        for c in 0..3 {
            assert_eq!(d.images[0].at3(c, 0, 1), 1.0);
            assert_eq!(d.images[0].at3(c, 0, 0), -1.0);
        }
    }

    #[test]
    fn idx_errors() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "i", &encode_idx_images(&[vec![0; 4], vec![0; 4]], 2, 2));
        let l = write(dir.path(), "l", &encode_idx_labels(&[1, 2])[..9]);
        let err = load_idx(&i, &l, Split::Train).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let swapped = load_idx(&l, &i, Split::Train).unwrap_err();
        assert!(matches!(swapped, Error::BadMagic { found: 0x801, .. }), "{swapped}");
    }

    #[test]
    fn cifar_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![0u8; CIFAR_RECORD];
        rec[0] = 9;
        rec[1 + 1024] = 255; // channel 1, pixel (0, 0)
        let p = write(dir.path(), "b", &rec);
        let d = load_cifar_binary(&[&p], Split::Train).unwrap();
        assert_eq!(d.labels, vec![9]);
        assert_eq!(d.images[0].at3(1, 0, 0), 1.0);
        assert_eq!(d.images[0].at3(0, 0, 0), -1.0);
        let bad = write(dir.path(), "c", &rec[..100]);
        assert!(load_cifar_binary(&[&bad], Split::Train).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_balanced_and_bounded() {
        for task in [SyntheticTask::shapes(10), SyntheticTask::stripes(6)] {
            let a = task.generate(101, 3, Split::Train).unwrap();
            let b = task.generate(101, 3, Split::Train).unwrap();
            assert_eq!(a, b);
            let counts = a.class_counts();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1);
            assert!(a.images.iter().all(|t| t.data().iter().all(|v| v.abs() <= SYNTHETIC_AMPLITUDE)));
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = DatasetSpec::synthetic(SyntheticTask::stripes(6), 10, 5, 1);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"synthetic\""));
        assert_eq!(serde_json::from_str::<DatasetSpec>(&text).unwrap(), spec);
    }
}
