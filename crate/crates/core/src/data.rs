//! Manifest ingestion, image decoding, preprocessing and dataset splitting.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("manifest line {line}: duplicate sample id {id:?}")]
    DuplicateId { id: String, line: u64 },
    #[error("unknown class name {0:?} (expected benign or malignant)")]
    UnknownClass(String),
    #[error("unsupported image format: {0}")]
    Unsupported(String),
    #[error("malformed image header: {0}")]
    Header(String),
    #[error("short read: needed {needed} bytes, file has {actual}")]
    ShortRead { needed: usize, actual: usize },
    #[error("pixel value {value} at flat index {index} is outside [0, 255]")]
    Range { value: f32, index: usize },
    #[error("image {height}x{width} is too small for a 3x3 filter")]
    TooSmall { height: usize, width: usize },
    #[error("{0}")]
    Split(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Maps a class name onto its label: benign → 0, malignant → 1.
pub fn encode_label(name: &str) -> Result<u8, DataError> {
    match name.trim().to_ascii_lowercase().as_str() {
        "benign" => Ok(0),
        "malignant" => Ok(1),
        _ => Err(DataError::UnknownClass(name.to_string())),
    }
}

pub fn class_name(label: u8) -> &'static str {
    if label == 0 {
        "benign"
    } else {
        "malignant"
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    /// As written in the manifest.
    pub path: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&bytes, base_dir)
}

/// Parses `id,path,label` CSV (LF or CRLF).
pub fn parse_manifest(bytes: &[u8], base_dir: PathBuf) -> Result<Manifest, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader.headers().map_err(|e| DataError::Malformed {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().map(str::trim).collect::<Vec<_>>() != ["id", "path", "label"] {
        return Err(DataError::Malformed {
            line: 1,
            reason: format!("header must be id,path,label, got {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| DataError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row[0].trim().to_string();
        if id.is_empty() {
            return Err(DataError::Malformed {
                line,
                reason: "empty sample id".into(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateId { id, line });
        }
        let label = encode_label(&row[2]).map_err(|_| DataError::Malformed {
            line,
            reason: format!("unknown class name {:?} (expected benign or malignant)", &row[2]),
        })?;
        records.push(ManifestRecord {
            id,
            path: row[1].trim().to_string(),
            label,
        });
    }
    Ok(Manifest { records, base_dir })
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<(), DataError> {
    let mut out = String::from("id,path,label\n");
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.id, r.path, class_name(r.label)));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub const RAW_TENSOR_MAGIC: &[u8; 4] = b"FTEN";
pub const RAW_TENSOR_VERSION: u8 = 1;

pub fn decode_image(path: &Path) -> Result<Tensor, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_image_bytes(&bytes)
}

/// Decodes binary PGM (P5), binary PPM (P6) or the raw tensor format into a
/// channel-planar `[C, H, W]` tensor of stored values.
pub fn decode_image_bytes(bytes: &[u8]) -> Result<Tensor, DataError> {
    if bytes.len() < 4 {
        return Err(DataError::ShortRead {
            needed: 4,
            actual: bytes.len(),
        });
    }
    match &bytes[..2] {
        b"P5" => decode_pnm(bytes, 1),
        b"P6" => decode_pnm(bytes, 3),
        _ if &bytes[..4] == RAW_TENSOR_MAGIC => decode_raw_tensor(bytes),
        _ => Err(DataError::Unsupported(format!("magic {:?}", String::from_utf8_lossy(&bytes[..2])))),
    }
}

fn decode_pnm(bytes: &[u8], channels: usize) -> Result<Tensor, DataError> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let name = ["width", "height", "maxval"][i];
        if start == pos {
            return Err(DataError::Header(format!("missing {name}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DataError::Header(format!("{name} out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(DataError::Header("expected whitespace after maxval".into())),
        None => {
            return Err(DataError::ShortRead {
                needed: pos + 1,
                actual: bytes.len(),
            })
        }
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(DataError::Header(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(DataError::Unsupported(format!("maxval {maxval} (only 8-bit samples are supported)")));
    }
    let plane = width * height;
    let needed = pos + plane * channels;
    if bytes.len() < needed {
        return Err(DataError::ShortRead { needed, actual: bytes.len() });
    }
    let raster = &bytes[pos..needed];
    let mut data = vec![0f32; plane * channels];
    for (i, &b) in raster.iter().enumerate() {
        let (pixel, c) = (i / channels, i % channels);
        data[c * plane + pixel] = b as f32;
    }
    Ok(Tensor::new(vec![channels, height, width], data)?)
}

fn decode_raw_tensor(bytes: &[u8]) -> Result<Tensor, DataError> {
    let short = |needed| DataError::ShortRead { needed, actual: bytes.len() };
    if bytes.len() < 6 {
        return Err(short(6));
    }
    if bytes[4] != RAW_TENSOR_VERSION {
        return Err(DataError::Unsupported(format!("raw tensor version {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    if !(2..=3).contains(&rank) {
        return Err(DataError::Header(format!("raw tensor rank {rank}; images need rank 2 or 3")));
    }
    let dims_end = 6 + 4 * rank;
    if bytes.len() < dims_end {
        return Err(short(dims_end));
    }
    let mut shape: Vec<usize> = bytes[6..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    if shape.contains(&0) {
        return Err(DataError::Header(format!("zero dimension in {shape:?}")));
    }
    let count: usize = shape.iter().product();
    let needed = dims_end + 4 * count;
    if bytes.len() < needed {
        return Err(short(needed));
    }
    let data = bytes[dims_end..needed]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if rank == 2 {
        shape.insert(0, 1);
    }
    Ok(Tensor::new(shape, data)?)
}

pub fn encode_raw_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(RAW_TENSOR_MAGIC);
    out.push(RAW_TENSOR_VERSION);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Encodes a `[C, H, W]` tensor of byte values as P5 (C = 1) or P6 (C = 3).
pub fn encode_pnm(image: &Tensor) -> Result<Vec<u8>, DataError> {
    let shape = image.shape();
    let [c, h, w] = match shape[..] {
        [c, h, w] => [c, h, w],
        _ => return Err(DataError::Unsupported(format!("cannot encode shape {shape:?} as PNM"))),
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(DataError::Unsupported(format!("{c} channels"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..c {
            let v = image.data()[ch * plane + p];
            if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                return Err(DataError::Range {
                    value: v,
                    index: ch * plane + p,
                });
            }
            out.push(v as u8);
        }
    }
    Ok(out)
}

/// Scales raw byte intensities into `[0, 1]`.
pub fn normalize(raw: &Tensor) -> Result<Tensor, DataError> {
    if let Some((index, &value)) = raw.data().iter().enumerate().find(|(_, v)| !(0.0..=255.0).contains(*v)) {
        return Err(DataError::Range { value, index });
    }
    Ok(raw.map(|v| v / 255.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SmoothKind {
    #[default]
    None,
    Mean3,
    Median3,
}

impl std::str::FromStr for SmoothKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "none" => Ok(SmoothKind::None),
            "mean3" => Ok(SmoothKind::Mean3),
            "median3" => Ok(SmoothKind::Median3),
            other => Err(format!("unknown smoothing {other:?} (none, mean3, median3)")),
        }
    }
}

/// Per-channel 3×3 mean or median filter with replicated edges.
pub fn smooth(image: &Tensor, kind: SmoothKind) -> Result<Tensor, DataError> {
    if kind == SmoothKind::None {
        return Ok(image.clone());
    }
    let [c, h, w] = match image.shape()[..] {
        [c, h, w] => [c, h, w],
        _ => return Err(DataError::Unsupported(format!("smooth expects [C, H, W], got {:?}", image.shape()))),
    };
    if h < 3 || w < 3 {
        return Err(DataError::TooSmall { height: h, width: w });
    }
    let src = image.data();
    let mut out = vec![0f32; src.len()];
    let mut window = [0f32; 9];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut k = 0;
                for dy in [-1isize, 0, 1] {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in [-1isize, 0, 1] {
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        window[k] = plane[yy * w + xx];
                        k += 1;
                    }
                }
                out[ch * h * w + y * w + x] = match kind {
                    SmoothKind::Mean3 => (window.iter().map(|&v| v as f64).sum::<f64>() / 9.0) as f32,
                    SmoothKind::Median3 => {
                        window.sort_by(f32::total_cmp);
                        window[4]
                    }
                    SmoothKind::None => unreachable!(),
                };
            }
        }
    }
    Ok(Tensor::new(image.shape().to_vec(), out)?)
}

/// Nearest-neighbour resize of a `[C, H, W]` image.
pub fn resize_nearest(image: &Tensor, height: usize, width: usize) -> Result<Tensor, DataError> {
    let [c, h, w] = match image.shape()[..] {
        [c, h, w] => [c, h, w],
        _ => return Err(DataError::Unsupported(format!("resize expects [C, H, W], got {:?}", image.shape()))),
    };
    if (h, w) == (height, width) {
        return Ok(image.clone());
    }
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        for y in 0..height {
            let sy = y * h / height;
            for x in 0..width {
                let sx = x * w / width;
                out.push(image.data()[ch * h * w + sy * w + sx]);
            }
        }
    }
    Ok(Tensor::new(vec![c, height, width], out)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub smoothing: SmoothKind,
    /// Resize target `(C, H, W)`; channel count must already match.
    pub target: Option<(usize, usize, usize)>,
}

/// decode → smooth → resize → normalize.
pub fn preprocess(raw: &Tensor, config: &PreprocessConfig) -> Result<Tensor, DataError> {
    let mut img = smooth(raw, config.smoothing)?;
    if let Some((c, h, w)) = config.target {
        if img.shape()[0] != c {
            return Err(DataError::Unsupported(format!(
                "image has {} channels, model expects {c}",
                img.shape()[0]
            )));
        }
        img = resize_nearest(&img, h, w)?;
    }
    normalize(&img)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    /// `[C, H, W]` in `[0, 1]`.
    pub pixels: Tensor,
    pub label: u8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ImageSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks the samples at `indices` into `[N, C, H, W]` plus labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<u8>), TensorError> {
        let items: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].pixels).collect();
        let labels = indices.iter().map(|&i| self.samples[i].label).collect();
        Ok((Tensor::stack(&items)?, labels))
    }
}

/// Decodes and preprocesses the manifest rows at `indices`, in that order.
pub fn load_dataset(manifest: &Manifest, indices: &[usize], config: &PreprocessConfig) -> Result<Dataset, DataError> {
    let samples = indices
        .iter()
        .map(|&i| {
            let rec = &manifest.records[i];
            let raw = decode_image(&manifest.resolve(rec))?;
            Ok(ImageSample {
                id: rec.id.clone(),
                pixels: preprocess(&raw, config)?,
                label: rec.label,
            })
        })
        .collect::<Result<_, DataError>>()?;
    Ok(Dataset { samples })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub test_fraction: f64,
    /// Fraction of the remaining train pool held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.20,
            validation_fraction: 0.10,
            seed: 42,
        }
    }
}

/// Sorted manifest indices of each subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

// Absorbs representation error so exact products such as 10 * 0.8 floor to 8.
const FLOOR_SLACK: f64 = 1e-9;

/// `(train, validation, test)` sizes. The train pool is `floor(n · (1 − test))`
/// and the test set takes the remainder; validation is
/// `floor(pool · validation)` of the pool.
pub fn split_counts(n: usize, config: &SplitConfig) -> Result<(usize, usize, usize), DataError> {
    for (name, f) in [("test", config.test_fraction), ("validation", config.validation_fraction)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(DataError::Split(format!("{name} fraction {f} must lie strictly between 0 and 1")));
        }
    }
    if n == 0 {
        return Err(DataError::Split("manifest is empty".into()));
    }
    let pool = ((n as f64) * (1.0 - config.test_fraction) + FLOOR_SLACK).floor() as usize;
    let test = n - pool;
    let validation = ((pool as f64) * config.validation_fraction + FLOOR_SLACK).floor() as usize;
    let train = pool - validation;
    for (name, size) in [("train", train), ("validation", validation), ("test", test)] {
        if size == 0 {
            return Err(DataError::Split(format!(
                "{name} subset is empty for n = {n} (train {train}, validation {validation}, test {test})"
            )));
        }
    }
    Ok((train, validation, test))
}

/// Seeded uniform shuffle of `0..n`, then cut into test, validation, train.
pub fn split_indices(n: usize, config: &SplitConfig) -> Result<Split, DataError> {
    let (_, validation, test) = split_counts(n, config)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(Split {
        test: sorted(&perm[..test]),
        validation: sorted(&perm[test..test + validation]),
        train: sorted(&perm[test + validation..]),
    })
}

pub fn split(manifest: &Manifest, config: &SplitConfig) -> Result<Split, DataError> {
    split_indices(manifest.len(), config)
}

/// Splits with seeds `seed, seed + 1, …` until every subset holds both
/// classes. Returns the split and the seed that produced it.
pub fn split_covering_classes(labels: &[u8], config: &SplitConfig, max_reseeds: u32) -> Result<(Split, u64), DataError> {
    for attempt in 0..=max_reseeds as u64 {
        let cfg = SplitConfig {
            seed: config.seed.wrapping_add(attempt),
            ..*config
        };
        let s = split_indices(labels.len(), &cfg)?;
        let covers = |idx: &[usize]| idx.iter().any(|&i| labels[i] == 0) && idx.iter().any(|&i| labels[i] == 1);
        if covers(&s.train) && covers(&s.validation) && covers(&s.test) {
            return Ok((s, cfg.seed));
        }
    }
    Err(DataError::Split(format!(
        "no seed in {}..={} gives every subset both classes",
        config.seed,
        config.seed.wrapping_add(max_reseeds as u64)
    )))
}

/// Seeded synthetic lesions: dark patches are malignant (1), bright benign (0).
pub mod synthetic {
    use super::*;

    /// Raw `[C, H, W]` byte-valued images with alternating labels.
    pub fn bright_dark(n: usize, channels: usize, height: usize, width: usize, seed: u64) -> Vec<(Tensor, u8)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let base: f32 = if label == 1 {
                    rng.gen_range(0.0..20.0)
                } else {
                    rng.gen_range(235.0..255.0)
                };
                let img = Tensor::from_fn(&[channels, height, width], |_| {
                    (base + rng.gen_range(-5.0f32..5.0)).round().clamp(0.0, 255.0)
                });
                (img, label)
            })
            .collect()
    }

    /// Writes PNM files plus `manifest.csv` into `dir`; returns the manifest path.
    pub fn write_dataset(dir: &Path, n: usize, channels: usize, height: usize, width: usize, seed: u64) -> Result<PathBuf, DataError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let ext = if channels == 1 { "pgm" } else { "ppm" };
        let mut records = Vec::with_capacity(n);
        for (i, (img, label)) in bright_dark(n, channels, height, width, seed).into_iter().enumerate() {
            let file = format!("img_{i:04}.{ext}");
            let path = dir.join(&file);
            let mut f = fs::File::create(&path).map_err(io_err(&path))?;
            f.write_all(&encode_pnm(&img)?).map_err(io_err(&path))?;
            records.push(ManifestRecord {
                id: format!("s{i:04}"),
                path: file,
                label,
            });
        }
        let manifest = dir.join("manifest.csv");
        write_manifest(&manifest, &records)?;
        Ok(manifest)
    }

    /// In-memory normalized dataset.
    pub fn dataset(n: usize, channels: usize, height: usize, width: usize, seed: u64) -> Dataset {
        let samples = bright_dark(n, channels, height, width, seed)
            .into_iter()
            .enumerate()
            .map(|(i, (img, label))| ImageSample {
                id: format!("s{i:04}"),
                pixels: normalize(&img).expect("synthetic bytes are in range"),
                label,
            })
            .collect();
        Dataset { samples }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(encode_label("benign").unwrap(), 0);
        assert_eq!(encode_label("Malignant").unwrap(), 1);
        assert!(matches!(encode_label("Melanoma"), Err(DataError::UnknownClass(_))));
    }

    #[test]
    fn manifest_order_and_errors() {
        let m = parse_manifest(b"id,path,label\na,x.pgm,benign\nb,y.pgm,malignant\nc,z.pgm,benign\n", PathBuf::new()).unwrap();
        assert_eq!(m.records.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(m.labels(), [0, 1, 0]);

        let err = parse_manifest(b"id,path,label\na,x,benign\na,y,benign\n", PathBuf::new()).unwrap_err();
        assert!(matches!(err, DataError::DuplicateId { ref id, line: 3 } if id == "a"), "{err}");

        let err = parse_manifest(b"id,path,label\na,x,benign\nb,y\n", PathBuf::new()).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 3, .. }), "{err}");

        let err = parse_manifest(b"id,path,label\na,x,nevus\n", PathBuf::new()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn crlf_manifest_matches_lf() {
        let lf = b"id,path,label\na,x.pgm,benign\nb,y.pgm,malignant\n".to_vec();
        let crlf: Vec<u8> = lf.iter().flat_map(|&b| if b == b'\n' { vec![b'\r', b'\n'] } else { vec![b] }).collect();
        assert_ne!(lf, crlf);
        assert_eq!(
            parse_manifest(&lf, PathBuf::new()).unwrap(),
            parse_manifest(&crlf, PathBuf::new()).unwrap()
        );
    }

    #[test]
    fn p5_bytes_map_directly() {
        let mut file = b"P5\n2 2\n255\n".to_vec();
        file.extend_from_slice(&[0, 128, 255, 64]);
        let t = decode_image_bytes(&file).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 128.0, 255.0, 64.0]);
    }

    #[test]
    fn p6_reencode_round_trip() {
        let mut file = b"P6\n# comment line\n3 2\n255\n".to_vec();
        let raster: Vec<u8> = (0..18).map(|i| (i * 13) as u8).collect();
        file.extend_from_slice(&raster);
        let t = decode_image_bytes(&file).unwrap();
        assert_eq!(t.shape(), &[3, 2, 3]);
        // Channel-planar: first plane holds the red samples.
        assert_eq!(t.data()[1], raster[3] as f32);
        let re = encode_pnm(&t).unwrap();
        assert!(re.ends_with(&raster));
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode_image_bytes(b""), Err(DataError::ShortRead { .. })));
        assert!(matches!(decode_image_bytes(b"P3\n1 1\n255\n0"), Err(DataError::Unsupported(_))));
        assert!(matches!(decode_image_bytes(b"P5\n2 x\n255\n"), Err(DataError::Header(_))));
        assert!(matches!(
            decode_image_bytes(b"P5\n2 2\n255\n\x01\x02"),
            Err(DataError::ShortRead { needed: 15, .. })
        ));
    }

    #[test]
    fn raw_tensor_round_trip() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f32 * 1.5);
        assert_eq!(decode_image_bytes(&encode_raw_tensor(&t)).unwrap(), t);
        let mut truncated = encode_raw_tensor(&t);
        truncated.truncate(truncated.len() - 1);
        assert!(matches!(decode_image_bytes(&truncated), Err(DataError::ShortRead { .. })));
    }

    #[test]
    fn normalize_endpoints_and_range() {
        let t = Tensor::new(vec![3], vec![0.0, 128.0, 255.0]).unwrap();
        let n = normalize(&t).unwrap();
        assert_eq!(n.data()[0], 0.0);
        assert_eq!(n.data()[2], 1.0);
        assert!((n.data()[1] - 0.501_960_8).abs() < 1e-7);
        let bad = Tensor::new(vec![2], vec![10.0, 256.0]).unwrap();
        assert!(matches!(normalize(&bad), Err(DataError::Range { index: 1, .. })));
    }

    #[test]
    fn smoothing_cases() {
        let flat = Tensor::full(&[2, 4, 5], 77.0);
        assert_eq!(smooth(&flat, SmoothKind::Mean3).unwrap(), flat);
        assert_eq!(smooth(&flat, SmoothKind::Median3).unwrap(), flat);

        let mut salt = Tensor::zeros(&[1, 5, 5]);
        salt.data_mut()[12] = 255.0;
        let cleaned = smooth(&salt, SmoothKind::Median3).unwrap();
        assert!(cleaned.data().iter().all(|&v| v == 0.0));

        let mean = smooth(&salt, SmoothKind::Mean3).unwrap();
        assert!((mean.data()[12] - 255.0 / 9.0).abs() < 1e-5);

        let odd = Tensor::from_fn(&[1, 3, 3], |i| i as f32);
        assert_eq!(smooth(&odd, SmoothKind::None).unwrap(), odd);
        assert!(matches!(
            smooth(&Tensor::zeros(&[1, 2, 5]), SmoothKind::Mean3),
            Err(DataError::TooSmall { .. })
        ));
    }

    #[test]
    fn nearest_resize() {
        let t = Tensor::from_fn(&[1, 2, 2], |i| i as f32);
        let r = resize_nearest(&t, 4, 4).unwrap();
        assert_eq!(&r.data()[..4], &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(&r.data()[12..], &[2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn split_sizes() {
        let cfg = SplitConfig::default();
        assert_eq!(split_counts(3297, &cfg).unwrap(), (2374, 263, 660));
        assert!(matches!(split_counts(10, &cfg), Err(DataError::Split(_))));
        assert_eq!(split_counts(200, &cfg).unwrap(), (144, 16, 40));
    }

    #[test]
    fn class_covering_split() {
        let labels: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
        let (s, _) = split_covering_classes(&labels, &SplitConfig::default(), 10).unwrap();
        assert_eq!(s.test.len(), 40);
        // Impossible with a single class.
        assert!(split_covering_classes(&[0; 50], &SplitConfig::default(), 3).is_err());
    }
}
