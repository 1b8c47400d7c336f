//! Dataset ingestion and synthesis.
//!
//! IDX files (the classic MNIST container) are parsed big-endian: a 4-byte
//! magic (0x00000803 for 3-D image files, 0x00000801 for 1-D label files),
//! one big-endian u32 per dimension, then unsigned payload bytes. Image
//! payloads are scaled to [0,1]; labels stay integral.
//!
//! Synthetic Gaussian blobs provide desk-scale data with known structure
//! for closed-form checks. Loaders are pure functions of the file bytes.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;
const IDX_MAGIC_LABELS: u32 = 0x0000_0801;

/// Normalization applied to a dataset; carried into reports because the
/// alignment is not invariant to the input representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    None,
    UnitRange,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::UnitRange => "unit-range",
        }
    }
}

/// Which split a dataset represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// A labelled sample set: one dense image/feature tensor per sample plus
/// integer class labels. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    samples: Vec<Tensor>,
    labels: Vec<usize>,
    n_classes: usize,
    split: Split,
    normalization: Normalization,
    notes: Vec<String>,
}

impl Dataset {
    pub fn new(
        samples: Vec<Tensor>,
        labels: Vec<usize>,
        n_classes: usize,
        split: Split,
        normalization: Normalization,
    ) -> Result<Dataset> {
        if samples.len() != labels.len() {
            return Err(Error::InvalidConfig(format!(
                "{} samples vs {} labels",
                samples.len(),
                labels.len()
            )));
        }
        let sample_shape = samples
            .first()
            .map(|t| t.shape().to_vec())
            .unwrap_or_default();
        for (i, s) in samples.iter().enumerate() {
            if s.shape() != sample_shape {
                return Err(Error::shape(format!(
                    "sample {i}: shape {:?} vs {:?}",
                    s.shape(),
                    sample_shape
                )));
            }
        }
        if let Some(&bad) = labels.iter().find(|l| **l >= n_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} outside 0..{n_classes}"
            )));
        }
        Ok(Dataset {
            sample_shape,
            samples,
            labels,
            n_classes,
            split,
            normalization,
            notes: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample(&self, i: usize) -> &Tensor {
        &self.samples[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    /// Fraction of samples the network classifies correctly.
    pub fn accuracy(&self, net: &crate::network::Network) -> Result<f64> {
        if self.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0usize;
        for i in 0..self.len() {
            if net.predict(&self.samples[i])? == self.labels[i] {
                hits += 1;
            }
        }
        Ok(hits as f64 / self.len() as f64)
    }
}

/// A train/validation pair drawn from the same source.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: Dataset,
    pub validation: Dataset,
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::parse(offset, "truncated header"));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses IDX bytes: images become a tensor of shape (n, h, w) scaled to
/// [0,1]; labels become a 1-D tensor of raw integer values.
pub fn parse_idx(bytes: &[u8]) -> Result<Tensor> {
    let magic = read_u32_be(bytes, 0)?;
    let (ndim, scale) = match magic {
        IDX_MAGIC_IMAGES => (3usize, true),
        IDX_MAGIC_LABELS => (1usize, false),
        other => {
            return Err(Error::parse(
                0,
                format!("unsupported IDX type code 0x{other:08x} (expected 0x00000801 or 0x00000803)"),
            ))
        }
    };
    let mut shape = Vec::with_capacity(ndim);
    for d in 0..ndim {
        let v = read_u32_be(bytes, 4 + 4 * d)? as usize;
        shape.push(v);
    }
    let header = 4 + 4 * ndim;
    let numel: usize = shape.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::parse(4, format!("dimension overflow in shape {shape:?}")))
    })?;
    let payload = &bytes[header.min(bytes.len())..];
    if payload.len() != numel {
        return Err(Error::parse(
            header,
            format!("payload of {} bytes, shape {shape:?} needs {numel}", payload.len()),
        ));
    }
    let data: Vec<f64> = if scale {
        payload.iter().map(|b| *b as f64 / 255.0).collect()
    } else {
        payload.iter().map(|b| *b as f64).collect()
    };
    Tensor::from_vec(shape, data)
}

/// Reads and parses one IDX file.
pub fn load_idx(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    parse_idx(&bytes)
}

/// Serializes a tensor back to IDX bytes. Image tensors must hold values in
/// [0,1] (stored as value*255 rounded); label tensors hold integers 0..=255.
pub fn write_idx(tensor: &Tensor) -> Result<Vec<u8>> {
    let shape = tensor.shape();
    let (magic, scale) = match shape.len() {
        3 => (IDX_MAGIC_IMAGES, true),
        1 => (IDX_MAGIC_LABELS, false),
        other => {
            return Err(Error::InvalidConfig(format!(
                "IDX writer supports rank 1 or 3 tensors, got rank {other}"
            )))
        }
    };
    let mut out = Vec::with_capacity(4 + 4 * shape.len() + tensor.numel());
    out.extend_from_slice(&magic.to_be_bytes());
    for d in shape {
        out.extend_from_slice(&(*d as u32).to_be_bytes());
    }
    for v in tensor.data() {
        let byte = if scale { (v * 255.0).round() } else { v.round() };
        if !(0.0..=255.0).contains(&byte) {
            return Err(Error::InvalidConfig(format!(
                "value {v} not representable as a payload byte"
            )));
        }
        out.push(byte as u8);
    }
    Ok(out)
}

/// Loads an MNIST-layout directory: train-images/labels plus t10k files as
/// the validation split. Images get a trailing channel axis (h, w, 1).
pub fn load_idx_dir(dir: impl AsRef<Path>) -> Result<DataSplit> {
    let dir = dir.as_ref();
    let train = load_idx_pair(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        Split::Train,
    )?;
    let validation = load_idx_pair(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        Split::Validation,
    )?;
    Ok(DataSplit { train, validation })
}

fn load_idx_pair(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let image_tensor = load_idx(images)?;
    let label_tensor = load_idx(labels)?;
    let shape = image_tensor.shape().to_vec();
    let (n, h, w) = (shape[0], shape[1], shape[2]);
    if label_tensor.numel() != n {
        return Err(Error::InvalidConfig(format!(
            "{n} images vs {} labels",
            label_tensor.numel()
        )));
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let data = image_tensor.data()[i * h * w..(i + 1) * h * w].to_vec();
        samples.push(Tensor::from_vec(vec![h, w, 1], data)?);
    }
    let labels: Vec<usize> = label_tensor.data().iter().map(|v| *v as usize).collect();
    let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(samples, labels, n_classes, split, Normalization::UnitRange)
}

/// Samples isotropic Gaussian blobs, one per class, centered at
/// `separation * u_k` for near-orthonormal directions `u_k`. With more
/// classes than orthonormal slots the centers fall back to random unit
/// directions (noted on the dataset).
pub fn synth_gaussian_blobs(
    n_classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 || dim < 2 {
        return Err(Error::InvalidConfig(
            "blobs need at least 2 classes and 2 dimensions".into(),
        ));
    }
    if separation < 0.0 {
        return Err(Error::InvalidConfig("separation must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut notes = Vec::new();

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    if n_classes <= dim {
        for k in 0..n_classes {
            let mut c = vec![0.0; dim];
            c[k] = separation;
            centers.push(c);
        }
    } else if n_classes == dim + 1 {
        for k in 0..dim {
            let mut c = vec![0.0; dim];
            c[k] = separation;
            centers.push(c);
        }
        let v = separation / (dim as f64).sqrt();
        centers.push(vec![-v; dim]);
    } else {
        log::warn!("{n_classes} classes exceed {dim}+1 orthonormal slots; using random unit centers");
        notes.push(format!(
            "random unit centers: {n_classes} classes exceed dim+1 = {}",
            dim + 1
        ));
        for _ in 0..n_classes {
            let mut c: Vec<f64> = (0..dim)
                .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in &mut c {
                *v *= separation / norm;
            }
            centers.push(c);
        }
    }

    let mut samples = Vec::with_capacity(n_classes * n_per_class);
    let mut labels = Vec::with_capacity(n_classes * n_per_class);
    for (k, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            let data: Vec<f64> = center
                .iter()
                .map(|c| {
                    c + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                })
                .collect();
            samples.push(Tensor::from_vec(vec![dim], data)?);
            labels.push(k);
        }
    }
    let mut ds = Dataset::new(samples, labels, n_classes, Split::Train, Normalization::None)?;
    ds.notes = notes;
    Ok(ds)
}

/// Splits off a shuffled validation fraction (seeded, deterministic).
pub fn split_dataset(ds: &Dataset, validation_fraction: f64, seed: u64) -> Result<DataSplit> {
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::InvalidConfig(
            "validation fraction must be in [0,1)".into(),
        ));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_val = ((ds.len() as f64) * validation_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let subset = |idx: &[usize], split: Split| -> Result<Dataset> {
        let samples = idx.iter().map(|i| ds.samples[*i].clone()).collect();
        let labels = idx.iter().map(|i| ds.labels[*i]).collect();
        let mut out = Dataset::new(samples, labels, ds.n_classes, split, ds.normalization)?;
        out.notes = ds.notes.clone();
        Ok(out)
    };
    Ok(DataSplit {
        train: subset(train_idx, Split::Train)?,
        validation: subset(val_idx, Split::Validation)?,
    })
}

/// Applies a normalization scheme, recording it on the dataset.
/// Re-normalizing an already unit-range dataset is an error.
pub fn normalize(ds: &Dataset, scheme: Normalization) -> Result<Dataset> {
    match scheme {
        Normalization::None => Ok(ds.clone()),
        Normalization::UnitRange => {
            if ds.normalization == Normalization::UnitRange {
                return Err(Error::InvalidConfig(
                    "dataset is already unit-range normalized".into(),
                ));
            }
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for s in &ds.samples {
                for v in s.data() {
                    lo = lo.min(*v);
                    hi = hi.max(*v);
                }
            }
            if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
                return Err(Error::InvalidConfig(
                    "degenerate value range for unit-range normalization".into(),
                ));
            }
            let scale = 1.0 / (hi - lo);
            let samples = ds
                .samples
                .iter()
                .map(|s| {
                    Tensor::from_vec(
                        s.shape().to_vec(),
                        s.data().iter().map(|v| (v - lo) * scale).collect(),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let mut out = Dataset::new(
                samples,
                ds.labels.clone(),
                ds.n_classes,
                ds.split,
                Normalization::UnitRange,
            )?;
            out.notes = ds.notes.clone();
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_image_example_from_bytes() {
        let bytes: Vec<u8> = [
            0x00, 0x00, 0x08, 0x03, // magic: images
            0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x02,
            1, 2, 3, 4, 5, 6, 7, 255,
        ]
        .to_vec();
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.shape(), &[2, 2, 2]);
        assert_eq!(t.data()[7], 1.0);
        assert!((t.data()[0] - 1.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn idx_label_example_from_bytes() {
        let bytes: Vec<u8> = [
            0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x03, 5, 0, 9,
        ]
        .to_vec();
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.shape(), &[3]);
        assert_eq!(t.data(), &[5.0, 0.0, 9.0]);
    }

    #[test]
    fn idx_bad_magic_and_truncation() {
        let bytes: Vec<u8> = [0x00, 0x00, 0x08, 0x02, 0, 0, 0, 1, 7].to_vec();
        let err = parse_idx(&bytes).unwrap_err();
        assert!(err.to_string().contains("0x00000802"), "{err}");

        let bytes: Vec<u8> = [
            0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x05, 1, 2,
        ]
        .to_vec();
        let err = parse_idx(&bytes).unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");
    }

    #[test]
    fn idx_roundtrip_is_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..2 * 3 * 4)
            .map(|_| rng.gen_range(0u8..=255) as f64 / 255.0)
            .collect();
        let t = Tensor::from_vec(vec![2, 3, 4], data).unwrap();
        let bytes = write_idx(&t).unwrap();
        assert_eq!(parse_idx(&bytes).unwrap(), t);

        let labels = Tensor::vector(&[3.0, 0.0, 255.0]);
        let bytes = write_idx(&labels).unwrap();
        assert_eq!(parse_idx(&bytes).unwrap(), labels);
    }

    #[test]
    fn blobs_are_deterministic_and_well_separated() {
        let a = synth_gaussian_blobs(2, 100, 2, 6.0, 9).unwrap();
        let b = synth_gaussian_blobs(2, 100, 2, 6.0, 9).unwrap();
        assert_eq!(a.len(), 200);
        for i in 0..a.len() {
            assert_eq!(a.sample(i), b.sample(i));
            assert_eq!(a.label(i), b.label(i));
        }
    }

    use crate::testkit::logistic_oracle_accuracy;

    #[test]
    fn separated_blobs_are_linearly_classifiable() {
        let ds = synth_gaussian_blobs(2, 200, 2, 6.0, 3).unwrap();
        let split = split_dataset(&ds, 0.25, 1).unwrap();
        let acc = logistic_oracle_accuracy(&split.train, &split.validation);
        assert!(acc > 0.99, "oracle accuracy {acc}");
    }

    #[test]
    fn zero_separation_blobs_are_chance_level() {
        let ds = synth_gaussian_blobs(2, 400, 2, 0.0, 3).unwrap();
        let split = split_dataset(&ds, 0.25, 1).unwrap();
        let acc = logistic_oracle_accuracy(&split.train, &split.validation);
        assert!((acc - 0.5).abs() < 0.1, "oracle accuracy {acc}");
    }

    #[test]
    fn too_many_classes_falls_back_with_note() {
        let ds = synth_gaussian_blobs(5, 10, 3, 4.0, 7).unwrap();
        assert_eq!(ds.n_classes(), 5);
        assert!(!ds.notes().is_empty());
    }

    #[test]
    fn normalization_records_and_rejects_double_application() {
        let ds = synth_gaussian_blobs(2, 50, 2, 3.0, 5).unwrap();
        assert_eq!(ds.normalization(), Normalization::None);
        let unit = normalize(&ds, Normalization::UnitRange).unwrap();
        assert_eq!(unit.normalization(), Normalization::UnitRange);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..unit.len() {
            for v in unit.sample(i).data() {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        assert!(lo >= 0.0 && hi <= 1.0 && (hi - 1.0).abs() < 1e-12);
        assert!(normalize(&unit, Normalization::UnitRange).is_err());
        // Identity scheme keeps the record.
        let same = normalize(&ds, Normalization::None).unwrap();
        assert_eq!(same.normalization(), Normalization::None);
    }

    #[test]
    fn bundled_digits_directory_loads_when_present() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/digits");
        if !std::path::Path::new(dir).exists() {
            return;
        }
        let split = load_idx_dir(dir).unwrap();
        assert_eq!(split.train.sample_shape(), &[8, 8, 1]);
        assert_eq!(split.train.n_classes(), 10);
        assert!(split.validation.len() >= 200);
        assert_eq!(split.train.normalization(), Normalization::UnitRange);
    }
}
