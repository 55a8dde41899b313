//! CIFAR-10 binary records, a seeded synthetic shape dataset, and
//! nearest-neighbour upsampling.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const MAX_SYNTHETIC_CLASSES: usize = 8;

/// Channel-major (`c × h × w`) pixel grid with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels * height * width != data.len() || data.is_empty() {
            return Err(Error::contract(format!(
                "image {channels}x{height}x{width} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Side length of a square image.
    pub fn side(&self) -> Result<usize> {
        if self.height != self.width {
            return Err(Error::contract(format!(
                "expected a square image, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(self.width)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: ImageTensor,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Cifar10Binary,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub num_classes: usize,
    /// Side of the stored (original) images.
    pub image_side: usize,
    pub upsample_factor: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn synthetic(num_classes: usize, image_side: usize, train_size: usize, test_size: usize, seed: u64) -> Self {
        Self {
            source: DataSource::Synthetic,
            num_classes,
            image_side,
            upsample_factor: 1,
            train_size,
            test_size,
            seed,
        }
    }

    /// Side length the model sees.
    pub fn model_side(&self) -> usize {
        self.image_side * self.upsample_factor
    }
}

/// Decodes `1 label byte + 3·side² pixel bytes` records (R, G, B planes,
/// row-major). CIFAR-10 is `side = 32`, `num_classes = 10`.
pub fn decode_records(bytes: &[u8], side: usize, num_classes: usize) -> Result<Vec<LabeledImage>> {
    let record = 1 + 3 * side * side;
    if !bytes.len().is_multiple_of(record) {
        return Err(Error::format(format!(
            "file length {} is not a multiple of the {record}-byte record size",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(record)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[0] as usize;
            if label >= num_classes {
                return Err(Error::format(format!(
                    "record {i}: label byte {label} is not below {num_classes}"
                )));
            }
            let data = rec[1..].iter().map(|&b| b as f64 / 255.0).collect();
            Ok(LabeledImage {
                image: ImageTensor::new(3, side, side, data)?,
                label,
            })
        })
        .collect()
}

/// Inverse of [`decode_records`]; pixels are rounded to the nearest byte.
pub fn encode_records(images: &[LabeledImage]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in images {
        let img = &item.image;
        if img.channels() != 3 || img.height() != img.width() {
            return Err(Error::contract("only square RGB images can be encoded"));
        }
        let label = u8::try_from(item.label).map_err(|_| Error::contract("label does not fit in a byte"))?;
        out.push(label);
        out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

/// Loads CIFAR-10 binary data. `path` is either one record file or the
/// extracted `cifar-10-batches-bin` directory.
pub fn load_cifar10(path: &Path, split: Split) -> Result<Vec<LabeledImage>> {
    let files: Vec<std::path::PathBuf> = if path.is_dir() {
        match split {
            Split::Train => (1..=5).map(|i| path.join(format!("data_batch_{i}.bin"))).collect(),
            Split::Test => vec![path.join("test_batch.bin")],
        }
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Vec::new();
    for file in files {
        let bytes = fs::read(&file).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", file.display())))
        })?;
        out.extend(decode_records(&bytes, CIFAR_SIDE, CIFAR_CLASSES)?);
    }
    Ok(out)
}

/// Each source pixel becomes a `factor × factor` block.
pub fn upsample_nearest(img: &ImageTensor, factor: usize) -> Result<ImageTensor> {
    if factor < 1 {
        return Err(Error::contract("upsample factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (h, w) = (img.height() * factor, img.width() * factor);
    let mut out = ImageTensor::filled(img.channels(), h, w, 0.0);
    for c in 0..img.channels() {
        for y in 0..h {
            for x in 0..w {
                out.set(c, y, x, img.get(c, y / factor, x / factor));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    HorizontalBar,
    Disk,
    Cross,
    Ring,
    VerticalBar,
    Frame,
    Diagonal,
    Checker,
}

const SHAPES: [Shape; MAX_SYNTHETIC_CLASSES] = [
    Shape::HorizontalBar,
    Shape::Disk,
    Shape::Cross,
    Shape::Ring,
    Shape::VerticalBar,
    Shape::Frame,
    Shape::Diagonal,
    Shape::Checker,
];

fn shape_covers(shape: Shape, x: f64, y: f64, cx: f64, cy: f64, r: f64, thick: f64) -> bool {
    let (dx, dy) = (x - cx, y - cy);
    match shape {
        Shape::HorizontalBar => dy.abs() <= thick && dx.abs() <= r,
        Shape::VerticalBar => dx.abs() <= thick && dy.abs() <= r,
        Shape::Disk => dx * dx + dy * dy <= r * r,
        Shape::Ring => {
            let d = (dx * dx + dy * dy).sqrt();
            d <= r && d >= r - 1.5 * thick
        }
        Shape::Cross => (dy.abs() <= thick && dx.abs() <= r) || (dx.abs() <= thick && dy.abs() <= r),
        Shape::Frame => {
            let m = dx.abs().max(dy.abs());
            m <= r && m >= r - 1.5 * thick
        }
        Shape::Diagonal => (dx - dy).abs() <= 1.5 * thick && dx.abs() <= r,
        Shape::Checker => {
            dx.abs() <= r && dy.abs() <= r && (((dx + r) / (2.0 * thick)).floor() as i64 + ((dy + r) / (2.0 * thick)).floor() as i64) % 2 == 0
        }
    }
}

fn render(shape: Shape, side: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    let s = side as f64;
    let r = rng.gen_range(0.3 * s..0.45 * s);
    let thick = (s / 16.0).max(0.5) * rng.gen_range(0.8..1.3);
    let margin = (r * 0.5).min(s * 0.25);
    let cx = rng.gen_range(margin..s - margin);
    let cy = rng.gen_range(margin..s - margin);
    let color: [f64; 3] = [rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)];
    let mut img = ImageTensor::filled(3, side, side, 0.0);
    for y in 0..side {
        for x in 0..side {
            let on = shape_covers(shape, x as f64 + 0.5, y as f64 + 0.5, cx, cy, r, thick);
            for (c, &col) in color.iter().enumerate() {
                let noise = rng.gen_range(0.0..0.1);
                let v = if on { col - noise } else { noise };
                img.set(c, y, x, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// Seeded synthetic dataset: class `k` renders shape `k` at a random
/// position and colour over background noise of amplitude ≤ 0.1. Labels
/// cycle `0, 1, …, k-1`, so classes are balanced to within one.
pub fn gen_synthetic(spec: &DatasetSpec, n: usize) -> Result<Vec<LabeledImage>> {
    if spec.source != DataSource::Synthetic {
        return Err(Error::contract("gen_synthetic needs a synthetic dataset spec"));
    }
    if spec.num_classes == 0 || spec.num_classes > MAX_SYNTHETIC_CLASSES {
        return Err(Error::contract(format!(
            "synthetic data supports 1..={MAX_SYNTHETIC_CLASSES} classes, got {}",
            spec.num_classes
        )));
    }
    if spec.image_side < 4 {
        return Err(Error::contract("synthetic images need a side of at least 4"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..n)
        .map(|i| {
            let label = i % spec.num_classes;
            let image = render(SHAPES[label], spec.image_side, &mut rng);
            Ok(LabeledImage { image, label })
        })
        .collect()
}

/// Train and test splits at model resolution (upsampled when configured).
pub fn load_splits(spec: &DatasetSpec, path: Option<&Path>) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    let (mut train, mut test) = match spec.source {
        DataSource::Synthetic => {
            let test_spec = DatasetSpec {
                seed: spec.seed ^ 0x5EED_7E57,
                ..spec.clone()
            };
            (gen_synthetic(spec, spec.train_size)?, gen_synthetic(&test_spec, spec.test_size)?)
        }
        DataSource::Cifar10Binary => {
            let path = path.ok_or_else(|| Error::contract("data.path is required for cifar10_binary"))?;
            let mut train = load_cifar10(path, Split::Train)?;
            let mut test = load_cifar10(path, Split::Test)?;
            if spec.train_size > 0 {
                train.truncate(spec.train_size);
            }
            if spec.test_size > 0 {
                test.truncate(spec.test_size);
            }
            (train, test)
        }
    };
    for item in train.iter_mut().chain(test.iter_mut()) {
        if item.image.side()? != spec.image_side {
            return Err(Error::format(format!(
                "image side {} differs from configured {}",
                item.image.width(),
                spec.image_side
            )));
        }
        if spec.upsample_factor != 1 {
            item.image = upsample_nearest(&item.image, spec.upsample_factor)?;
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, pixel: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(pixel, CIFAR_RECORD_BYTES - 1));
        r
    }

    #[test]
    fn saturated_record_decodes_to_ones() {
        let imgs = decode_records(&record(3, 0xFF), 32, 10).unwrap();
        assert_eq!(imgs[0].label, 3);
        assert!(imgs[0].image.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn counts_records_and_maps_bytes() {
        let mut bytes = record(0, 128);
        bytes.extend(record(9, 0));
        let imgs = decode_records(&bytes, 32, 10).unwrap();
        assert_eq!(imgs.len(), 2);
        assert!((imgs[0].image.get(0, 0, 0) - 0.50196).abs() < 1e-5);
        assert_eq!(imgs[1].label, 9);
    }

    #[test]
    fn plane_order_is_red_green_blue() {
        let mut r = vec![1u8];
        r.extend(std::iter::repeat_n(10, 1024));
        r.extend(std::iter::repeat_n(20, 1024));
        r.extend(std::iter::repeat_n(30, 1024));
        let img = &decode_records(&r, 32, 10).unwrap()[0].image;
        assert_eq!(img.get(0, 5, 7), 10.0 / 255.0);
        assert_eq!(img.get(1, 31, 0), 20.0 / 255.0);
        assert_eq!(img.get(2, 0, 31), 30.0 / 255.0);
    }

    #[test]
    fn rejects_truncated_files_and_bad_labels() {
        let mut bytes = record(0, 1);
        bytes.pop();
        assert!(matches!(decode_records(&bytes, 32, 10), Err(Error::Format(_))));
        assert!(matches!(decode_records(&record(10, 1), 32, 10), Err(Error::Format(_))));
    }

    #[test]
    fn upsample_identity_and_blocks() {
        let img = ImageTensor::new(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(upsample_nearest(&img, 1).unwrap(), img);
        let up = upsample_nearest(&img, 2).unwrap();
        assert_eq!(up.width(), 4);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(up.get(0, y, x), img.get(0, y / 2, x / 2));
            }
        }
        assert!(upsample_nearest(&img, 0).is_err());
    }

    #[test]
    fn cifar_upsample_reaches_224() {
        let img = ImageTensor::filled(3, 32, 32, 0.3);
        let up = upsample_nearest(&img, 7).unwrap();
        assert_eq!((up.height(), up.width()), (224, 224));
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let spec = DatasetSpec::synthetic(3, 16, 30, 0, 11);
        let a = gen_synthetic(&spec, 30).unwrap();
        let b = gen_synthetic(&spec, 30).unwrap();
        assert_eq!(a, b);
        for k in 0..3 {
            assert_eq!(a.iter().filter(|i| i.label == k).count(), 10);
        }
        assert!(a.iter().all(|i| i.image.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn synthetic_rejects_too_many_classes() {
        let spec = DatasetSpec::synthetic(9, 16, 10, 0, 0);
        assert!(gen_synthetic(&spec, 10).is_err());
    }
}
