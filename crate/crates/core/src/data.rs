//! Datasets: synthetic Gaussian blobs, IDX-format ingestion, label-noise
//! injection, and a Gaussian input corruption. Everything is a pure function
//! of its arguments including the seed.

use std::fs;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::rng::{self, standard_normal};
use crate::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// An in-memory classification dataset with features in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    split: String,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    noise_mask: Vec<bool>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn from_parts(
        name: &str,
        inputs: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if dim == 0 || num_classes == 0 {
            return Err(Error::Input("dataset dim and class count must be > 0".into()));
        }
        if inputs.len() != labels.len() * dim {
            return Err(Error::Input(format!(
                "{} input values do not form {} rows of width {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        let noise_mask = vec![false; labels.len()];
        Ok(Dataset {
            name: name.to_string(),
            split: "all".to_string(),
            inputs,
            labels,
            noise_mask,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> &str {
        &self.split
    }

    pub fn with_split(mut self, split: &str) -> Self {
        self.split = split.to_string();
        self
    }

    /// Overrides the class count (e.g. when an IDX test split is missing
    /// classes); fails if any label is out of range.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn noise_mask(&self) -> &[bool] {
        &self.noise_mask
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    /// Copies the rows at `indices` into contiguous batch buffers.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    /// SHA-256 over shape, features, labels, and noise mask.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.num_classes as u64).to_le_bytes());
        for v in &self.inputs {
            h.update(v.to_le_bytes());
        }
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        for &m in &self.noise_mask {
            h.update([m as u8]);
        }
        hex::encode(h.finalize())
    }
}

fn draw_centers(seed: u64, d: usize, k: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, "blobs.centers");
    // keep centers away from the clamp boundary
    (0..k * d).map(|_| 0.2 + 0.6 * r.random::<f64>()).collect()
}

fn blob_points(
    centers: &[f64],
    rng: &mut rand_chacha::ChaCha8Rng,
    n: usize,
    d: usize,
    k: usize,
    spread: f64,
) -> (Vec<f64>, Vec<usize>) {
    let mut inputs = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        let center = &centers[class * d..(class + 1) * d];
        for &c in center {
            let v = c + spread * standard_normal(rng);
            inputs.push(v.clamp(0.0, 1.0));
        }
        labels.push(class);
    }
    (inputs, labels)
}

/// `k` Gaussian clusters with fixed random centers in `[0.2, 0.8]^d`,
/// class-balanced, clamped to `[0, 1]`.
pub fn synth_blobs(seed: u64, n: usize, d: usize, k: usize, spread: f64) -> Result<Dataset> {
    if k < 2 || n < k || d == 0 {
        return Err(Error::Input(format!(
            "blob sizes invalid: n={n}, d={d}, k={k} (need n >= k >= 2, d >= 1)"
        )));
    }
    if spread < 0.0 {
        return Err(Error::Input(format!("negative spread {spread}")));
    }
    let centers = draw_centers(seed, d, k);
    let mut point_rng = rng::stream(seed, "blobs.train");
    let (inputs, labels) = blob_points(&centers, &mut point_rng, n, d, k, spread);
    Dataset::from_parts(&format!("blobs-{k}x{d}"), inputs, labels, d, k)
}

/// Train/test pair drawn from the same cluster centers but disjoint
/// point streams.
pub fn synth_blobs_split(
    seed: u64,
    n_train: usize,
    n_test: usize,
    d: usize,
    k: usize,
    spread: f64,
) -> Result<(Dataset, Dataset)> {
    if k < 2 || n_train < k || n_test < k || d == 0 {
        return Err(Error::Input(format!(
            "blob sizes invalid: n_train={n_train}, n_test={n_test}, d={d}, k={k}"
        )));
    }
    let centers = draw_centers(seed, d, k);
    let name = format!("blobs-{k}x{d}");
    let mut train_rng = rng::stream(seed, "blobs.train");
    let (xi, yi) = blob_points(&centers, &mut train_rng, n_train, d, k, spread);
    let train = Dataset::from_parts(&name, xi, yi, d, k)?.with_split("train");
    let mut test_rng = rng::stream(seed, "blobs.test");
    let (xt, yt) = blob_points(&centers, &mut test_rng, n_test, d, k, spread);
    let test = Dataset::from_parts(&name, xt, yt, d, k)?.with_split("test");
    Ok((train, test))
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Format {
            offset,
            message: format!("file truncated while reading {what}"),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parses the IDX image/label pair (big-endian magics 0x00000803 and
/// 0x00000801), scaling pixels by 1/255 and flattening rows row-major.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path.display().to_string(), e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path.display().to_string(), e))?;

    let magic = read_be_u32(&images, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_be_u32(&images, 4, "image count")? as usize;
    let rows = read_be_u32(&images, 8, "row count")? as usize;
    let cols = read_be_u32(&images, 12, "column count")? as usize;
    let pixel_count = n * rows * cols;
    if images.len() != 16 + pixel_count {
        return Err(Error::Format {
            offset: images.len().min(16 + pixel_count),
            message: format!(
                "image payload has {} bytes, header promises {pixel_count}",
                images.len().saturating_sub(16)
            ),
        });
    }

    let lmagic = read_be_u32(&labels, 0, "label magic")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic {lmagic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let ln = read_be_u32(&labels, 4, "label count")? as usize;
    if labels.len() != 8 + ln {
        return Err(Error::Format {
            offset: labels.len().min(8 + ln),
            message: format!(
                "label payload has {} bytes, header promises {ln}",
                labels.len().saturating_sub(8)
            ),
        });
    }
    if ln != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("image count {n} does not match label count {ln}"),
        });
    }

    let inputs: Vec<f64> = images[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let label_vals: Vec<usize> = labels[8..].iter().map(|&b| b as usize).collect();
    let num_classes = label_vals.iter().max().map_or(1, |&m| m + 1);
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".to_string());
    Dataset::from_parts(&name, inputs, label_vals, rows * cols, num_classes)
}

/// Serializes a dataset as an IDX pair (`rows = 1`, `cols = dim`), quantizing
/// features to bytes via `round(255 * x)`. Reading the result back and
/// writing it again is byte-identical.
pub fn save_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let n = dataset.len();
    let mut images = Vec::with_capacity(16 + n * dataset.dim());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&1u32.to_be_bytes());
    images.extend_from_slice(&(dataset.dim() as u32).to_be_bytes());
    for &v in dataset.inputs() {
        images.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }

    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    for &y in dataset.labels() {
        if y > u8::MAX as usize {
            return Err(Error::Input(format!("label {y} does not fit an IDX byte")));
        }
        labels.push(y as u8);
    }

    fs::write(images_path, images).map_err(|e| Error::io(images_path.display().to_string(), e))?;
    fs::write(labels_path, labels).map_err(|e| Error::io(labels_path.display().to_string(), e))?;
    Ok(())
}

/// Replaces the labels of exactly `floor(c * n)` uniformly chosen rows with
/// independent uniform draws over all classes (a redraw may coincide with
/// the original label). The mask marks chosen rows; inputs are untouched.
pub fn inject_label_noise(dataset: &Dataset, c: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::Input(format!("noise fraction {c} outside [0, 1]")));
    }
    let mut out = dataset.clone();
    let n = dataset.len();
    let count = (c * n as f64).floor() as usize;
    let mut r = rng::stream(seed, "label_noise");
    let mut indices: Vec<usize> = (0..n).collect();
    // partial Fisher-Yates: the first `count` slots are a uniform sample
    // without replacement
    for i in 0..count {
        let j = r.random_range(i..n);
        indices.swap(i, j);
    }
    for &idx in &indices[..count] {
        out.labels[idx] = r.random_range(0..dataset.num_classes());
        out.noise_mask[idx] = true;
    }
    Ok(out)
}

/// Adds zero-mean Gaussian noise with standard deviation `severity` to every
/// feature, clamped back to `[0, 1]`.
pub fn corrupt_gaussian(dataset: &Dataset, severity: f64, seed: u64) -> Result<Dataset> {
    if severity < 0.0 {
        return Err(Error::Input(format!("negative severity {severity}")));
    }
    let mut out = dataset.clone();
    let mut r = rng::stream(seed, "corrupt");
    for v in &mut out.inputs {
        *v = (*v + severity * standard_normal(&mut r)).clamp(0.0, 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_blob_sizes_are_rejected() {
        assert!(matches!(synth_blobs(1, 10, 2, 1, 0.1), Err(Error::Input(_))));
        assert!(matches!(synth_blobs(1, 2, 2, 3, 0.1), Err(Error::Input(_))));
        assert!(matches!(synth_blobs(1, 10, 0, 2, 0.1), Err(Error::Input(_))));
    }

    #[test]
    fn idx_count_mismatch_names_the_offset() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&[1, 2]);
        fs::write(&ip, &img).unwrap();
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&3u32.to_be_bytes());
        lab.extend_from_slice(&[0, 1, 0]);
        fs::write(&lp, &lab).unwrap();
        match load_idx(&ip, &lp) {
            Err(Error::Format { offset: 4, message }) => {
                assert!(message.contains("does not match"), "{message}")
            }
            other => panic!("expected format error at offset 4, got {other:?}"),
        }
    }

    #[test]
    fn blobs_are_deterministic_per_seed() {
        let a = synth_blobs(42, 60, 3, 4, 0.1).unwrap();
        let b = synth_blobs(42, 60, 3, 4, 0.1).unwrap();
        assert_eq!(a, b);
        let c = synth_blobs(43, 60, 3, 4, 0.1).unwrap();
        assert_ne!(a.inputs(), c.inputs());
    }

    #[test]
    fn blobs_are_class_balanced() {
        let d = synth_blobs(1, 10_000, 2, 10, 0.05).unwrap();
        let mut counts = [0usize; 10];
        for &y in d.labels() {
            counts[y] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1000));
    }

    #[test]
    fn zero_spread_blobs_are_nearest_centroid_separable() {
        let d = synth_blobs(7, 40, 3, 4, 0.0).unwrap();
        // centroids = per-class means
        let mut centroids = [0.0; 4 * 3];
        let mut counts = [0usize; 4];
        for i in 0..d.len() {
            let y = d.labels()[i];
            counts[y] += 1;
            for (c, v) in centroids[y * 3..(y + 1) * 3].iter_mut().zip(d.row(i)) {
                *c += v;
            }
        }
        for (y, chunk) in centroids.chunks_mut(3).enumerate() {
            for c in chunk {
                *c /= counts[y] as f64;
            }
        }
        for i in 0..d.len() {
            let best = (0..4)
                .min_by(|&a, &b| {
                    let da: f64 = d.row(i)
                        .iter()
                        .zip(&centroids[a * 3..(a + 1) * 3])
                        .map(|(x, c)| (x - c) * (x - c))
                        .sum();
                    let db: f64 = d.row(i)
                        .iter()
                        .zip(&centroids[b * 3..(b + 1) * 3])
                        .map(|(x, c)| (x - c) * (x - c))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(best, d.labels()[i]);
        }
    }

    #[test]
    fn split_shares_centers_but_not_points() {
        let (train, test) = synth_blobs_split(3, 40, 40, 2, 4, 0.02).unwrap();
        assert_eq!(train.split(), "train");
        assert_eq!(test.split(), "test");
        assert_ne!(train.inputs(), test.inputs());
        // same centers: per-class means nearly coincide at small spread
        for y in 0..4 {
            let mean = |d: &Dataset| {
                let mut m = [0.0; 2];
                let mut n = 0;
                for i in 0..d.len() {
                    if d.labels()[i] == y {
                        n += 1;
                        m[0] += d.row(i)[0];
                        m[1] += d.row(i)[1];
                    }
                }
                [m[0] / n as f64, m[1] / n as f64]
            };
            let (a, b) = (mean(&train), mean(&test));
            assert!((a[0] - b[0]).abs() < 0.05 && (a[1] - b[1]).abs() < 0.05);
        }
    }

    #[test]
    fn idx_fixture_parses_with_exact_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        // two 3x3 images, pixels 0 and 255 in known positions
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&3u32.to_be_bytes());
        img.extend_from_slice(&3u32.to_be_bytes());
        img.extend_from_slice(&[255, 0, 0, 0, 51, 0, 0, 0, 0]);
        img.extend_from_slice(&[0; 9]);
        fs::write(&ip, &img).unwrap();
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&2u32.to_be_bytes());
        lab.extend_from_slice(&[1, 0]);
        fs::write(&lp, &lab).unwrap();

        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 9);
        assert_eq!(d.row(0)[0], 1.0);
        assert_eq!(d.row(0)[4], 51.0 / 255.0);
        assert_eq!(d.labels(), &[1, 0]);
    }

    #[test]
    fn wrong_label_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.push(7);
        fs::write(&ip, &img).unwrap();
        // labels file carrying the images magic
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        lab.extend_from_slice(&1u32.to_be_bytes());
        lab.push(0);
        fs::write(&lp, &lab).unwrap();
        match load_idx(&ip, &lp) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at offset 0, got {other:?}"),
        }
    }

    #[test]
    fn idx_round_trip_is_byte_exact() {
        let d = synth_blobs(5, 30, 4, 3, 0.2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (i1, l1) = (dir.path().join("a-img"), dir.path().join("a-lab"));
        let (i2, l2) = (dir.path().join("b-img"), dir.path().join("b-lab"));
        save_idx(&d, &i1, &l1).unwrap();
        let read = load_idx(&i1, &l1).unwrap();
        save_idx(&read, &i2, &l2).unwrap();
        assert_eq!(fs::read(&i1).unwrap(), fs::read(&i2).unwrap());
        assert_eq!(fs::read(&l1).unwrap(), fs::read(&l2).unwrap());
    }

    #[test]
    fn zero_noise_is_identity() {
        let d = synth_blobs(9, 50, 2, 5, 0.1).unwrap();
        let noisy = inject_label_noise(&d, 0.0, 1).unwrap();
        assert_eq!(d, noisy);
        assert!(noisy.noise_mask().iter().all(|&m| !m));
    }

    #[test]
    fn noise_changes_exactly_the_masked_entries() {
        let d = synth_blobs(11, 200, 2, 5, 0.1).unwrap();
        let noisy = inject_label_noise(&d, 0.3, 123).unwrap();
        assert_eq!(d.inputs(), noisy.inputs());
        assert_eq!(noisy.noise_mask().iter().filter(|&&m| m).count(), 60);
        for i in 0..d.len() {
            if !noisy.noise_mask()[i] {
                assert_eq!(d.labels()[i], noisy.labels()[i]);
            }
        }
        let again = inject_label_noise(&d, 0.3, 123).unwrap();
        assert_eq!(noisy, again);
    }

    #[test]
    fn full_noise_coincides_with_originals_at_chance_rate() {
        let d = synth_blobs(13, 5000, 2, 10, 0.1).unwrap();
        let noisy = inject_label_noise(&d, 1.0, 77).unwrap();
        assert!(noisy.noise_mask().iter().all(|&m| m));
        let coincide = d
            .labels()
            .iter()
            .zip(noisy.labels())
            .filter(|(a, b)| a == b)
            .count() as f64;
        // uniform redraw keeps the original 1/k of the time; 3 sigma band
        let n = d.len() as f64;
        let sigma = (n * 0.1 * 0.9).sqrt();
        assert!((coincide - 0.1 * n).abs() < 3.0 * sigma, "{coincide} matches");
    }

    #[test]
    fn corruption_is_deterministic_and_clamps() {
        let d = synth_blobs(17, 500, 3, 4, 0.1).unwrap();
        assert_eq!(corrupt_gaussian(&d, 0.0, 5).unwrap(), d);
        let a = corrupt_gaussian(&d, 10.0, 5).unwrap();
        let b = corrupt_gaussian(&d, 10.0, 5).unwrap();
        assert_eq!(a, b);
        let at_bounds = a
            .inputs()
            .iter()
            .filter(|&&v| v == 0.0 || v == 1.0)
            .count() as f64;
        assert!(at_bounds / a.inputs().len() as f64 >= 0.9);
    }
}
