//! Two-class face-image corpus: ingestion, preprocessing to 224x224x3 in
//! [0,1], deterministic stratified splits, and a synthetic substitute
//! generator for network-free testing.

use crate::par;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

pub const SIDE: usize = 224;

/// Lowercase hex rendering of a digest.
pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Positive class (label 1) / negative class (label 0) display names.
pub const POSITIVE_CLASS: &str = "ASD";
pub const NEGATIVE_CLASS: &str = "TD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Td = 0,
    Asd = 1,
}

impl Label {
    pub fn as_f32(self) -> f32 {
        match self {
            Label::Td => 0.0,
            Label::Asd => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Td => NEGATIVE_CLASS,
            Label::Asd => POSITIVE_CLASS,
        }
    }
}

/// Where a sample's pixels come from. File-backed samples decode lazily so a
/// manifest of thousands of images does not hold them all in memory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PixelSource {
    File { path: PathBuf },
    /// Synthetic pixels are regenerated on demand from (seed, index, label).
    Synthetic { seed: u64, index: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageSample {
    pub id: String,
    pub label: Label,
    pub source: PixelSource,
}

impl ImageSample {
    /// Decode/generate and preprocess to a CHW tensor of shape 3x224x224.
    pub fn pixels(&self) -> Result<Tensor, DatasetError> {
        match &self.source {
            PixelSource::File { path } => {
                let img = image::open(path).map_err(|e| DatasetError::UnreadableImage {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
                let rgb = img.to_rgb8();
                let (w, h) = rgb.dimensions();
                preprocess_rgb(rgb.as_raw(), h as usize, w as usize, 3)
            }
            PixelSource::Synthetic { seed, index } => Ok(synth_pixels(*seed, *index, self.label)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: Vec<ImageSample>,
    pub class_counts: BTreeMap<Label, usize>,
    pub total: usize,
    /// SHA-256 over the ordered (id, label-name) pairs.
    pub content_hash: String,
    /// Images that failed to decode during ingestion (skipped with warning).
    pub skipped: usize,
}

impl DatasetManifest {
    fn from_samples(samples: Vec<ImageSample>, skipped: usize) -> Self {
        let mut class_counts = BTreeMap::new();
        for s in &samples {
            *class_counts.entry(s.label).or_insert(0) += 1;
        }
        let mut hasher = Sha256::new();
        for s in &samples {
            hasher.update(s.id.as_bytes());
            hasher.update(b"\x1f");
            hasher.update(s.label.name().as_bytes());
            hasher.update(b"\x1e");
        }
        let content_hash = hex(&hasher.finalize());
        DatasetManifest {
            total: samples.len(),
            samples,
            class_counts,
            content_hash,
            skipped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SplitStrategy {
    Standard,
    Stacking,
}

/// Split fractions as exact rationals over 10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub strategy: SplitStrategy,
    /// (train, val, test) tenths; always sums to 10.
    pub tenths: (u32, u32, u32),
    pub seed: u64,
}

impl SplitSpec {
    pub fn standard(seed: u64) -> Self {
        SplitSpec { strategy: SplitStrategy::Standard, tenths: (8, 1, 1), seed }
    }

    pub fn stacking(seed: u64) -> Self {
        SplitSpec { strategy: SplitStrategy::Stacking, tenths: (6, 1, 3), seed }
    }

    /// Split sizes for a total of `n`: train and val take the floor of their
    /// fraction, test takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let (ft, fv, _) = self.tenths;
        let train = n * ft as usize / 10;
        let val = n * fv as usize / 10;
        (train, val, n - train - val)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub spec: SplitSpec,
    pub manifest_hash: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("missing class directories under {root}: found {found} class subdirectories, need at least 2")]
    MissingClassDir { root: PathBuf, found: usize },
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("empty dataset: no decodable images found under {0}")]
    EmptyDataset(PathBuf),
    #[error("zero-dimension image: {h}x{w}")]
    ZeroDimension { h: usize, w: usize },
    #[error("too few samples: {n} total would leave the {split} split empty")]
    TooFewSamples { n: usize, split: &'static str },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn label_for_dir(name: &str) -> Label {
    // The source corpus uses "autistic"/"non_autistic"; any other pair maps
    // by sorted order: lexicographically first directory = positive class.
    match name {
        "autistic" | "asd" | "ASD" => Label::Asd,
        "non_autistic" | "td" | "TD" => Label::Td,
        _ => Label::Asd, // resolved by caller for generic pairs
    }
}

const IMAGE_EXTS: [&str; 3] = ["jpg", "jpeg", "png"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Ingest `root/<class_name>/*.{jpg,jpeg,png}`. Exactly two class
/// subdirectories are required; files are enumerated sorted by
/// (class, filename) so the manifest is deterministic. Undecodable files are
/// skipped with a warning and counted.
pub fn ingest_directory(root: &Path) -> Result<DatasetManifest, DatasetError> {
    let io_err = |path: &Path, source| DatasetError::Io { path: path.to_path_buf(), source };
    let mut class_dirs: Vec<PathBuf> = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| io_err(root, e))? {
        let entry = entry.map_err(|e| io_err(root, e))?;
        if entry.path().is_dir() {
            class_dirs.push(entry.path());
        }
    }
    class_dirs.sort();
    if class_dirs.len() < 2 {
        return Err(DatasetError::MissingClassDir {
            root: root.to_path_buf(),
            found: class_dirs.len(),
        });
    }

    // Map directory names to labels: recognized names win; otherwise the
    // lexicographically first directory is the positive class.
    let mut dir_labels: Vec<(PathBuf, Label)> = Vec::new();
    let names: Vec<String> = class_dirs
        .iter()
        .map(|d| d.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    let recognized = names.iter().any(|n| {
        matches!(n.as_str(), "autistic" | "asd" | "ASD" | "non_autistic" | "td" | "TD")
    });
    for (i, dir) in class_dirs.iter().enumerate() {
        let label = if recognized {
            label_for_dir(&names[i])
        } else if i == 0 {
            Label::Asd
        } else {
            Label::Td
        };
        dir_labels.push((dir.clone(), label));
    }

    // Enumerate sorted, then decode-check in parallel preserving order.
    let mut candidates: Vec<(PathBuf, Label, String)> = Vec::new();
    for (dir, label) in &dir_labels {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        files.sort();
        for f in files {
            let id = format!(
                "{}/{}",
                dir.file_name().unwrap_or_default().to_string_lossy(),
                f.file_name().unwrap_or_default().to_string_lossy()
            );
            candidates.push((f, *label, id));
        }
    }

    let checked: Vec<Option<ImageSample>> = par::map_ordered(&candidates, |(path, label, id)| {
        match image::image_dimensions(path) {
            Ok((w, h)) if w > 0 && h > 0 => Some(ImageSample {
                id: id.clone(),
                label: *label,
                source: PixelSource::File { path: path.clone() },
            }),
            Ok(_) | Err(_) => {
                eprintln!("warning: skipping unreadable image {}", path.display());
                None
            }
        }
    });
    let skipped = checked.iter().filter(|s| s.is_none()).count();
    let samples: Vec<ImageSample> = checked.into_iter().flatten().collect();
    if samples.is_empty() {
        return Err(DatasetError::EmptyDataset(root.to_path_buf()));
    }
    Ok(DatasetManifest::from_samples(samples, skipped))
}

/// Resize + normalize an interleaved row-major HxWxC byte image to a CHW
/// float tensor of shape 3x224x224 with values in [0,1]. Grayscale inputs
/// are replicated across channels; alpha is dropped.
pub fn preprocess_rgb(bytes: &[u8], h: usize, w: usize, c: usize) -> Result<Tensor, DatasetError> {
    if h == 0 || w == 0 {
        return Err(DatasetError::ZeroDimension { h, w });
    }
    assert!(matches!(c, 1 | 3 | 4), "channel count must be 1, 3, or 4");
    assert_eq!(bytes.len(), h * w * c, "byte length must match dimensions");
    let mut out = Tensor::zeros(&[3, SIDE, SIDE]);
    let sy = h as f32 / SIDE as f32;
    let sx = w as f32 / SIDE as f32;
    for oy in 0..SIDE {
        // Half-pixel-centre source coordinate, clamped to the image.
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f32;
        for ox in 0..SIDE {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f32;
            for ch in 0..3 {
                let sc = if c == 1 { 0 } else { ch };
                let at = |y: usize, x: usize| bytes[(y * w + x) * c + sc] as f32;
                // Lerp form: exact on constant images.
                let top = at(y0, x0) + tx * (at(y0, x1) - at(y0, x0));
                let bot = at(y1, x0) + tx * (at(y1, x1) - at(y1, x0));
                let v = top + ty * (bot - top);
                out.data[ch * SIDE * SIDE + oy * SIDE + ox] = v / 255.0;
            }
        }
    }
    Ok(out)
}

/// Deterministic per-class stratified split. Sample order within each class
/// is shuffled by a ChaCha stream keyed on (manifest hash, spec seed); sizes
/// follow the floor rule per class with the global floor-rule totals
/// restored by moving boundary samples between splits is unnecessary: the
/// per-class floor rule already deviates from the global rule by at most one
/// sample per class, and the assignment keeps the global totals exact by
/// allocating per class with largest-remainder rounding against the global
/// targets.
pub fn split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<SplitAssignment, DatasetError> {
    let n = manifest.total;
    let (want_train, want_val, want_test) = spec.sizes(n);
    for (size, name) in [(want_train, "train"), (want_val, "val"), (want_test, "test")] {
        if size == 0 {
            return Err(DatasetError::TooFewSamples { n, split: name });
        }
    }

    // Group ids per class in manifest order, then shuffle deterministically.
    let mut per_class: BTreeMap<Label, Vec<&str>> = BTreeMap::new();
    for s in &manifest.samples {
        per_class.entry(s.label).or_default().push(&s.id);
    }
    let mut seed_bytes = [0u8; 32];
    let mut hasher = Sha256::new();
    hasher.update(manifest.content_hash.as_bytes());
    hasher.update(spec.seed.to_le_bytes());
    seed_bytes.copy_from_slice(&hasher.finalize());
    let mut rng = ChaCha8Rng::from_seed(seed_bytes);
    for ids in per_class.values_mut() {
        // Fisher-Yates
        for i in (1..ids.len()).rev() {
            let j = rng.gen_range(0..=i);
            ids.swap(i, j);
        }
    }

    // Allocate train and val counts per class by largest remainder against
    // the global floor-rule targets; test is the per-class remainder.
    let classes: Vec<Label> = per_class.keys().copied().collect();
    let counts: Vec<usize> = classes.iter().map(|c| per_class[c].len()).collect();
    let train_alloc = largest_remainder(&counts, want_train, n);
    let val_alloc = largest_remainder_bounded(&counts, &train_alloc, want_val, n);

    let mut train_ids = Vec::with_capacity(want_train);
    let mut val_ids = Vec::with_capacity(want_val);
    let mut test_ids = Vec::with_capacity(want_test);
    for (ci, class) in classes.iter().enumerate() {
        let ids = &per_class[class];
        let t = train_alloc[ci];
        let v = val_alloc[ci];
        train_ids.extend(ids[..t].iter().map(|s| s.to_string()));
        val_ids.extend(ids[t..t + v].iter().map(|s| s.to_string()));
        test_ids.extend(ids[t + v..].iter().map(|s| s.to_string()));
    }
    debug_assert_eq!(train_ids.len(), want_train);
    debug_assert_eq!(val_ids.len(), want_val);
    debug_assert_eq!(test_ids.len(), want_test);

    Ok(SplitAssignment {
        train_ids,
        val_ids,
        test_ids,
        spec: *spec,
        manifest_hash: manifest.content_hash.clone(),
    })
}

/// Apportion `target` among classes proportionally to `counts` (largest
/// remainder), never exceeding a class's count.
fn largest_remainder(counts: &[usize], target: usize, n: usize) -> Vec<usize> {
    let mut alloc: Vec<usize> = counts.iter().map(|&c| c * target / n).collect();
    let mut rema: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (c * target % n, i))
        .collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut short = target - alloc.iter().sum::<usize>();
    for &(_, i) in &rema {
        if short == 0 {
            break;
        }
        if alloc[i] < counts[i] {
            alloc[i] += 1;
            short -= 1;
        }
    }
    alloc
}

/// Like `largest_remainder` but capped at counts[i] - used[i].
fn largest_remainder_bounded(counts: &[usize], used: &[usize], target: usize, n: usize) -> Vec<usize> {
    let avail: Vec<usize> = counts.iter().zip(used).map(|(&c, &u)| c - u).collect();
    let mut alloc: Vec<usize> = counts
        .iter()
        .zip(&avail)
        .map(|(&c, &a)| (c * target / n).min(a))
        .collect();
    let mut rema: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (c * target % n, i))
        .collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut short = target - alloc.iter().sum::<usize>();
    while short > 0 {
        let mut moved = false;
        for &(_, i) in &rema {
            if short == 0 {
                break;
            }
            if alloc[i] < avail[i] {
                alloc[i] += 1;
                short -= 1;
                moved = true;
            }
        }
        assert!(moved, "split targets exceed available samples");
    }
    alloc
}

/// Margin between the two synthetic classes' mean pixel intensity.
pub const SYNTH_MEAN_MARGIN: f32 = 0.12;

/// Deterministic synthetic corpus: `n_per_class` samples per class. The two
/// classes differ by a fixed mean-intensity margin plus a class-keyed
/// channel tilt, so a randomly initialized backbone can separate them within
/// one epoch while individual samples still vary.
pub fn synth_dataset(n_per_class: usize, seed: u64) -> DatasetManifest {
    assert!(n_per_class >= 1, "n_per_class must be >= 1");
    let mut samples = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        samples.push(ImageSample {
            id: format!("synthetic/asd/{i:05}"),
            label: Label::Asd,
            source: PixelSource::Synthetic { seed, index: i as u64 },
        });
    }
    for i in 0..n_per_class {
        samples.push(ImageSample {
            id: format!("synthetic/td/{i:05}"),
            label: Label::Td,
            source: PixelSource::Synthetic { seed, index: i as u64 },
        });
    }
    DatasetManifest::from_samples(samples, 0)
}

/// Generate one synthetic 3x224x224 sample. Class signal: the positive
/// class sits `SYNTH_MEAN_MARGIN` above the negative class in mean
/// intensity and tilts toward the red channel; per-sample noise and a
/// low-frequency texture keep samples distinct.
pub fn synth_pixels(seed: u64, index: u64, label: Label) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((label as u64) << 61),
    );
    let base = match label {
        Label::Asd => 0.5 + SYNTH_MEAN_MARGIN / 2.0,
        Label::Td => 0.5 - SYNTH_MEAN_MARGIN / 2.0,
    };
    // Channel tilt: positive class brighter in red, negative in blue.
    let tilt = match label {
        Label::Asd => [0.06f32, 0.0, -0.06],
        Label::Td => [-0.06, 0.0, 0.06],
    };
    let fx = rng.gen_range(1.0f32..4.0);
    let fy = rng.gen_range(1.0f32..4.0);
    let phase = rng.gen_range(0.0f32..std::f32::consts::TAU);
    let mut t = Tensor::zeros(&[3, SIDE, SIDE]);
    for ch in 0..3 {
        for y in 0..SIDE {
            for x in 0..SIDE {
                let u = x as f32 / SIDE as f32;
                let v = y as f32 / SIDE as f32;
                let texture = 0.05
                    * (std::f32::consts::TAU * (fx * u + fy * v) + phase + ch as f32).sin();
                let noise = rng.gen_range(-0.02f32..0.02);
                let val = (base + tilt[ch] + texture + noise).clamp(0.0, 1.0);
                t.data[ch * SIDE * SIDE + y * SIDE + x] = val;
            }
        }
    }
    t
}

/// Fetch pixel tensors for a list of ids, in the given order.
pub fn load_pixels(manifest: &DatasetManifest, ids: &[String]) -> Result<Vec<(String, Label, Tensor)>, DatasetError> {
    let by_id: BTreeMap<&str, &ImageSample> =
        manifest.samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let s = by_id
            .get(id.as_str())
            .unwrap_or_else(|| panic!("id {id} not in manifest"));
        out.push((s.id.clone(), s.label, s.pixels()?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacking_split_of_2936_is_1761_293_882() {
        let spec = SplitSpec::stacking(0);
        assert_eq!(spec.sizes(2936), (1761, 293, 882));
    }

    #[test]
    fn stacking_split_of_10_is_6_1_3() {
        assert_eq!(SplitSpec::stacking(0).sizes(10), (6, 1, 3));
    }

    #[test]
    fn split_is_deterministic_and_partitions_ids() {
        let manifest = synth_dataset(20, 3);
        let spec = SplitSpec::stacking(11);
        let a = split(&manifest, &spec).unwrap();
        for _ in 0..10 {
            let b = split(&manifest, &spec).unwrap();
            assert_eq!(a.train_ids, b.train_ids);
            assert_eq!(a.val_ids, b.val_ids);
            assert_eq!(a.test_ids, b.test_ids);
        }
        let mut all: Vec<&String> = a
            .train_ids
            .iter()
            .chain(&a.val_ids)
            .chain(&a.test_ids)
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), manifest.total);
        assert_eq!(a.train_ids.len(), 24);
        assert_eq!(a.val_ids.len(), 4);
        assert_eq!(a.test_ids.len(), 12);
    }

    #[test]
    fn split_is_stratified_within_one_sample_per_class() {
        let manifest = synth_dataset(25, 1);
        let spec = SplitSpec::stacking(5);
        let a = split(&manifest, &spec).unwrap();
        let asd_train = a.train_ids.iter().filter(|id| id.contains("/asd/")).count();
        let td_train = a.train_ids.len() - asd_train;
        assert!((asd_train as i64 - td_train as i64).abs() <= 1);
    }

    #[test]
    fn split_rejects_tiny_datasets() {
        let manifest = synth_dataset(2, 0);
        let err = split(&manifest, &SplitSpec::stacking(0)).unwrap_err();
        assert!(matches!(err, DatasetError::TooFewSamples { .. }));
    }

    #[test]
    fn preprocess_constant_image_is_identity_on_values() {
        let bytes = vec![127u8; 500 * 350 * 3];
        let t = preprocess_rgb(&bytes, 500, 350, 3).unwrap();
        assert_eq!(t.shape, vec![3, 224, 224]);
        for &v in &t.data {
            assert_eq!(v, 127.0 / 255.0);
        }
    }

    #[test]
    fn preprocess_replicates_grayscale_channels() {
        let mut bytes = vec![0u8; 100 * 100];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = (i % 251) as u8;
        }
        let t = preprocess_rgb(&bytes, 100, 100, 1).unwrap();
        let plane = SIDE * SIDE;
        assert_eq!(&t.data[..plane], &t.data[plane..2 * plane]);
        assert_eq!(&t.data[..plane], &t.data[2 * plane..]);
    }

    #[test]
    fn preprocess_drops_alpha() {
        let mut bytes = Vec::new();
        for _ in 0..(4 * 4) {
            bytes.extend_from_slice(&[10, 20, 30, 255]);
        }
        let t = preprocess_rgb(&bytes, 4, 4, 4).unwrap();
        let plane = SIDE * SIDE;
        assert!((t.data[0] - 10.0 / 255.0).abs() < 1e-6);
        assert!((t.data[plane] - 20.0 / 255.0).abs() < 1e-6);
        assert!((t.data[2 * plane] - 30.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn preprocess_rejects_zero_dimension() {
        assert!(matches!(
            preprocess_rgb(&[], 0, 5, 3),
            Err(DatasetError::ZeroDimension { .. })
        ));
    }

    #[test]
    fn synth_dataset_is_deterministic_with_separated_class_means() {
        let a = synth_dataset(4, 7);
        let b = synth_dataset(4, 7);
        assert_eq!(a.content_hash, b.content_hash);
        assert_eq!(a.total, 8);
        assert_eq!(a.class_counts[&Label::Asd], 4);

        let mean = |label: Label| -> f32 {
            let mut total = 0.0;
            let mut count = 0usize;
            for s in a.samples.iter().filter(|s| s.label == label) {
                let px = s.pixels().unwrap();
                total += px.data.iter().sum::<f32>();
                count += px.data.len();
            }
            total / count as f32
        };
        let gap = mean(Label::Asd) - mean(Label::Td);
        assert!(
            (gap - SYNTH_MEAN_MARGIN).abs() < 0.02,
            "class mean gap {gap} should be near {SYNTH_MEAN_MARGIN}"
        );
    }

    #[test]
    fn synth_pixels_identical_across_calls() {
        let a = synth_pixels(7, 3, Label::Asd);
        let b = synth_pixels(7, 3, Label::Asd);
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn ingest_rejects_single_class_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("only_class")).unwrap();
        let err = ingest_directory(dir.path()).unwrap_err();
        assert!(matches!(err, DatasetError::MissingClassDir { found: 1, .. }));
    }

    #[test]
    fn ingest_two_class_tree_counts_and_hashes_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        for class in ["autistic", "non_autistic"] {
            let cdir = dir.path().join(class);
            std::fs::create_dir(&cdir).unwrap();
            for i in 0..2 {
                let img = image::RgbImage::from_pixel(8, 8, image::Rgb([i * 100, 50, 200]));
                img.save(cdir.join(format!("{i}.png"))).unwrap();
            }
        }
        // A junk file that must be skipped with a warning.
        std::fs::write(dir.path().join("autistic/broken.jpg"), b"not an image").unwrap();

        let m1 = ingest_directory(dir.path()).unwrap();
        let m2 = ingest_directory(dir.path()).unwrap();
        assert_eq!(m1.total, 4);
        assert_eq!(m1.skipped, 1);
        assert_eq!(m1.class_counts[&Label::Asd], 2);
        assert_eq!(m1.class_counts[&Label::Td], 2);
        assert_eq!(m1.content_hash, m2.content_hash);
        // File-backed pixels decode through the full preprocessing path.
        let px = m1.samples[0].pixels().unwrap();
        assert_eq!(px.shape, vec![3, 224, 224]);
        assert!(px.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ingest_empty_tree_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("a")).unwrap();
        std::fs::create_dir(dir.path().join("b")).unwrap();
        assert!(matches!(
            ingest_directory(dir.path()),
            Err(DatasetError::EmptyDataset(_))
        ));
    }

    #[test]
    fn input_shape_matches_preprocess_output() {
        assert_eq!(crate::backbones::INPUT_SHAPE, [3, SIDE, SIDE]);
    }
}
