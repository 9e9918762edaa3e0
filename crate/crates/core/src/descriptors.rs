//! Per-image keypoint descriptor matrices.
//!
//! A [`DescriptorMatrix`] stacks the `N` descriptors of one image as the
//! columns of a `T x N` matrix. Values are kept as `f32`, which is what
//! keypoint extractors emit, so that the binary and CSV encodings round-trip
//! exactly. Numerical work happens on an `f64` copy obtained with
//! [`DescriptorMatrix::to_f64`].

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::DescriptorError;

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"DMT1";
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorFormat {
    Binary,
    Csv,
}

impl DescriptorFormat {
    /// `.csv` files are CSV, everything else is the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DescriptorFormat::Csv,
            _ => DescriptorFormat::Binary,
        }
    }
}

/// The stacked descriptors of one image, column `j` being descriptor `d_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorMatrix {
    image_id: String,
    object_id: String,
    values: DMatrix<f32>,
}

impl DescriptorMatrix {
    /// Validates and wraps a `T x N` matrix of descriptors.
    ///
    /// Entries must be finite and non-negative, `T >= 2`, `N >= 1`, and no
    /// column may be identically zero.
    pub fn new(
        image_id: impl Into<String>,
        object_id: impl Into<String>,
        values: DMatrix<f32>,
    ) -> Result<Self, DescriptorError> {
        let (t, n) = values.shape();
        if t < 2 || n < 1 {
            return Err(DescriptorError::EmptyMatrix { t, n });
        }
        for (col, column) in values.column_iter().enumerate() {
            let mut any_nonzero = false;
            for (row, &v) in column.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(DescriptorError::InvalidEntry { row, col, value: v });
                }
                any_nonzero |= v != 0.0;
            }
            if !any_nonzero {
                return Err(DescriptorError::ZeroColumn(col));
            }
        }
        Ok(Self {
            image_id: image_id.into(),
            object_id: object_id.into(),
            values,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn object_id(&self) -> &str {
        &self.object_id
    }

    pub fn with_ids(mut self, image_id: impl Into<String>, object_id: impl Into<String>) -> Self {
        self.image_id = image_id.into();
        self.object_id = object_id.into();
        self
    }

    /// Descriptor length `T`.
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Number of descriptors `N`.
    pub fn count(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f32> {
        &self.values
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        self.values.map(f64::from)
    }
}

/// Parses a descriptor matrix from `bytes`.
///
/// Binary inputs carry their ids in the optional trailer; CSV inputs come
/// back with empty ids.
pub fn load_descriptors(
    bytes: &[u8],
    format: DescriptorFormat,
) -> Result<DescriptorMatrix, DescriptorError> {
    match format {
        DescriptorFormat::Binary => load_binary(bytes),
        DescriptorFormat::Csv => load_csv(bytes),
    }
}

pub fn save_descriptors(m: &DescriptorMatrix, format: DescriptorFormat) -> Vec<u8> {
    match format {
        DescriptorFormat::Binary => save_binary(m),
        DescriptorFormat::Csv => save_csv(m),
    }
}

fn load_binary(bytes: &[u8]) -> Result<DescriptorMatrix, DescriptorError> {
    if bytes.len() < HEADER_LEN {
        return Err(DescriptorError::MalformedHeader(format!(
            "need {HEADER_LEN} header bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != DESCRIPTOR_MAGIC {
        return Err(DescriptorError::MalformedHeader("bad magic".into()));
    }
    let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if t == 0 || n == 0 {
        return Err(DescriptorError::MalformedHeader(format!(
            "zero dimension {t}x{n}"
        )));
    }
    let expected = t
        .checked_mul(n)
        .ok_or_else(|| DescriptorError::MalformedHeader("dimensions overflow".into()))?;
    let body = &bytes[HEADER_LEN..];
    let payload_len = expected.saturating_mul(4);
    if body.len() < payload_len {
        return Err(DescriptorError::DimensionMismatch {
            expected,
            found: body.len() / 4,
        });
    }
    let (payload, trailer) = body.split_at(payload_len);
    let (image_id, object_id) = if trailer.is_empty() {
        (String::new(), String::new())
    } else {
        parse_trailer(trailer).ok_or(DescriptorError::DimensionMismatch {
            expected,
            found: body.len() / 4,
        })?
    };
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DescriptorMatrix::new(image_id, object_id, DMatrix::from_vec(t, n, data))
}

fn parse_trailer(trailer: &[u8]) -> Option<(String, String)> {
    let text = std::str::from_utf8(trailer).ok()?;
    let inner = text.strip_prefix("\nID:")?.strip_suffix('\n')?;
    let (image, object) = inner.rsplit_once(";OBJ:")?;
    Some((image.to_string(), object.to_string()))
}

fn save_binary(m: &DescriptorMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.values.len() + 32);
    out.extend_from_slice(DESCRIPTOR_MAGIC);
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(m.count() as u32).to_le_bytes());
    // nalgebra storage is column-major already
    for v in m.values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if !m.image_id.is_empty() || !m.object_id.is_empty() {
        out.extend_from_slice(format!("\nID:{};OBJ:{}\n", m.image_id, m.object_id).as_bytes());
    }
    out
}

fn load_csv(bytes: &[u8]) -> Result<DescriptorMatrix, DescriptorError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| DescriptorError::MalformedHeader(format!("csv is not UTF-8: {e}")))?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|field| field.trim().parse::<f32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DescriptorError::MalformedHeader(format!("line {}: {e}", line_no + 1)))?;
        rows.push(row);
    }
    let t = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(DescriptorError::DimensionMismatch {
            expected: t * n,
            found: t * n - n + bad.len(),
        });
    }
    let values = DMatrix::from_fn(t, n, |i, j| rows[i][j]);
    DescriptorMatrix::new(String::new(), String::new(), values)
}

fn save_csv(m: &DescriptorMatrix) -> Vec<u8> {
    let mut out = String::new();
    for row in m.values.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn read_descriptor_file(path: &Path) -> Result<DescriptorMatrix, DescriptorError> {
    let bytes = fs::read(path)?;
    let m = load_descriptors(&bytes, DescriptorFormat::from_path(path))?;
    if m.image_id.is_empty() && m.object_id.is_empty() {
        let (image, object) = ids_from_file_name(path);
        Ok(m.with_ids(image, object))
    } else {
        Ok(m)
    }
}

pub fn write_descriptor_file(path: &Path, m: &DescriptorMatrix) -> Result<(), DescriptorError> {
    fs::write(path, save_descriptors(m, DescriptorFormat::from_path(path)))?;
    Ok(())
}

/// `<object>_<view>.ext` names the image `<object>_<view>` of object `<object>`.
fn ids_from_file_name(path: &Path) -> (String, String) {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let object = stem
        .rsplit_once('_')
        .map_or_else(|| stem.clone(), |(o, _)| o.to_string());
    (stem, object)
}

/// Loads every `.dmt` / `.csv` file in `dir`, sorted by file name.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<DescriptorMatrix>, DescriptorError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("dmt") | Some("csv")
                )
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| read_descriptor_file(p)).collect()
}

/// Writes each matrix to `<dir>/<image_id>.dmt`.
pub fn write_corpus_dir(dir: &Path, corpus: &[DescriptorMatrix]) -> Result<(), DescriptorError> {
    fs::create_dir_all(dir)?;
    for m in corpus {
        write_descriptor_file(&dir.join(format!("{}.dmt", m.image_id)), m)?;
    }
    Ok(())
}

/// Parameters of a synthetic corpus with a planted per-object rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusSpec {
    pub num_objects: usize,
    pub views_per_object: usize,
    pub dim: usize,
    pub descriptors_per_view: usize,
    pub planted_rank: usize,
    pub view_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthCorpusSpec {
    fn default() -> Self {
        Self {
            num_objects: 50,
            views_per_object: 5,
            dim: 32,
            descriptors_per_view: 400,
            planted_rank: 4,
            view_noise_sigma: 0.05,
            seed: 1,
        }
    }
}

impl SynthCorpusSpec {
    pub fn validate(&self) -> Result<(), DescriptorError> {
        let bad = |msg: String| Err(DescriptorError::InvalidSpec(msg));
        if self.num_objects == 0 || self.views_per_object == 0 {
            return bad("num_objects and views_per_object must be positive".into());
        }
        if self.dim < 2 || self.descriptors_per_view == 0 || self.planted_rank == 0 {
            return bad("dim >= 2, descriptors_per_view >= 1 and planted_rank >= 1 required".into());
        }
        let limit = self.dim.min(self.descriptors_per_view);
        if self.planted_rank >= limit {
            return bad(format!(
                "planted rank {} must be below min(T, N) = {limit}",
                self.planted_rank
            ));
        }
        if !(self.view_noise_sigma.is_finite() && self.view_noise_sigma >= 0.0) {
            return bad(format!("noise sigma {} invalid", self.view_noise_sigma));
        }
        Ok(())
    }

    /// Parses `key=value` pairs separated by commas, e.g.
    /// `objects=50,views=5,t=32,n=400,rank=4,sigma=0.05,seed=1`.
    /// Keys not given keep their defaults.
    pub fn parse(text: &str) -> Result<Self, DescriptorError> {
        let mut spec = Self::default();
        for pair in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| DescriptorError::InvalidSpec(format!("expected key=value, got {pair:?}")))?;
            let int = || {
                value
                    .parse::<usize>()
                    .map_err(|e| DescriptorError::InvalidSpec(format!("{key}: {e}")))
            };
            match key {
                "objects" => spec.num_objects = int()?,
                "views" => spec.views_per_object = int()?,
                "t" | "dim" => spec.dim = int()?,
                "n" => spec.descriptors_per_view = int()?,
                "rank" | "r" => spec.planted_rank = int()?,
                "sigma" => {
                    spec.view_noise_sigma = value
                        .parse()
                        .map_err(|e| DescriptorError::InvalidSpec(format!("sigma: {e}")))?
                }
                "seed" => {
                    spec.seed = value
                        .parse()
                        .map_err(|e| DescriptorError::InvalidSpec(format!("seed: {e}")))?
                }
                other => return Err(DescriptorError::InvalidSpec(format!("unknown key {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

pub fn synthetic_object_id(object: usize) -> String {
    format!("obj{object:04}")
}

pub fn synthetic_image_id(object: usize, view: usize) -> String {
    format!("obj{object:04}_v{}", view + 1)
}

/// Generates a deterministic corpus of planted-rank descriptor matrices.
///
/// Each object owns `planted_rank` sparse non-negative unit-norm centroids.
/// Every descriptor of every view is a Dirichlet(1/2) mixture of its object's
/// centroids plus Gaussian noise, truncated at zero. Output is ordered by
/// object, then view.
pub fn generate_corpus(spec: &SynthCorpusSpec) -> Result<Vec<DescriptorMatrix>, DescriptorError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let t = spec.dim;
    let n = spec.descriptors_per_view;
    let r = spec.planted_rank;
    let gamma = Gamma::new(0.5, 1.0).expect("valid gamma parameters");
    let noise = Normal::new(0.0, spec.view_noise_sigma).expect("validated sigma");

    let mut corpus = Vec::with_capacity(spec.num_objects * spec.views_per_object);
    for object in 0..spec.num_objects {
        let centroids = DMatrix::from_columns(
            &(0..r)
                .map(|_| random_centroid(&mut rng, t))
                .collect::<Vec<_>>(),
        );
        for view in 0..spec.views_per_object {
            let mut values = DMatrix::<f32>::zeros(t, n);
            for j in 0..n {
                let weights = dirichlet_weights(&mut rng, &gamma, r);
                loop {
                    let mut any_nonzero = false;
                    for i in 0..t {
                        let mut x: f64 = (0..r).map(|c| weights[c] * centroids[(i, c)]).sum();
                        if spec.view_noise_sigma > 0.0 {
                            x += noise.sample(&mut rng);
                        }
                        let x = x.max(0.0) as f32;
                        any_nonzero |= x != 0.0;
                        values[(i, j)] = x;
                    }
                    if any_nonzero {
                        break;
                    }
                }
            }
            corpus.push(DescriptorMatrix::new(
                synthetic_image_id(object, view),
                synthetic_object_id(object),
                values,
            )?);
        }
    }
    Ok(corpus)
}

fn random_centroid(rng: &mut ChaCha8Rng, t: usize) -> nalgebra::DVector<f64> {
    loop {
        let v = nalgebra::DVector::from_fn(t, |_, _| {
            if rng.random_bool(0.5) {
                1.0 - rng.random::<f64>()
            } else {
                0.0
            }
        });
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

fn dirichlet_weights(rng: &mut ChaCha8Rng, gamma: &Gamma<f64>, r: usize) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..r).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = w.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return w.into_iter().map(|x| x / sum).collect();
        }
    }
}
