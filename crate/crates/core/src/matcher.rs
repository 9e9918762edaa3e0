//! Scoring query loadings against a database of indexed images.
//!
//! Two similarities are supported:
//!
//! * the angle between the column spans, `acos ||P_A P_B||_2`, which is the
//!   smallest principal angle between the subspaces (smaller is better);
//! * the correlation score, the sum over database columns of their best
//!   inner product with any query column (larger is better).
//!
//! The angle is evaluated from orthonormal bases in `O(T k^2 + k^3)` per pair
//! rather than through `T x T` projection matrices.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::codec::QuantizedLoadings;
use crate::error::MatchError;
use crate::factorization::{FactorLoadings, LoadingKind};
use crate::fusion::{fuse, FusionParams};

/// Below this cosine the angle is taken from `acos`; above it, from the sine
/// of the residual, where `acos` loses about half the significant digits.
const COS_SWITCH: f64 = 0.9999;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Angle,
    Correlation,
}

impl Metric {
    /// Correlation for PCA loadings, angle for NMF loadings.
    pub fn default_for(kind: LoadingKind) -> Self {
        match kind {
            LoadingKind::Pca => Metric::Correlation,
            LoadingKind::Nmf => Metric::Angle,
        }
    }

    /// Orders scores best-first.
    pub fn compare(self, a: f64, b: f64) -> Ordering {
        match self {
            Metric::Angle => a.total_cmp(&b),
            Metric::Correlation => b.total_cmp(&a),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Angle => "angle",
            Metric::Correlation => "correlation",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "angle" => Ok(Metric::Angle),
            "correlation" | "corr" => Ok(Metric::Correlation),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

/// Orthonormal basis of the column span, or `None` when the columns are
/// (numerically) linearly dependent.
pub fn orthonormal_basis(columns: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (t, k) = columns.shape();
    if k == 0 || k > t {
        return None;
    }
    let qr = columns.clone().qr();
    let r = qr.r();
    if (0..k).any(|i| r[(i, i)].abs() < RANK_TOL) {
        return None;
    }
    Some(qr.q())
}

/// Smallest principal angle between the spans of two orthonormal bases.
pub fn smallest_principal_angle(qa: &DMatrix<f64>, qb: &DMatrix<f64>) -> f64 {
    let cross = qa.transpose() * qb;
    let cos = cross.singular_values().max().min(1.0);
    let angle = if cos < COS_SWITCH {
        cos.acos()
    } else {
        let residual = qb - qa * cross;
        residual.singular_values().min().clamp(0.0, 1.0).asin()
    };
    angle.clamp(0.0, std::f64::consts::FRAC_PI_2)
}

/// Largest principal angle between the spans of two equal-rank matrices.
pub fn largest_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let (Some(qa), Some(qb)) = (orthonormal_basis(a), orthonormal_basis(b)) else {
        return std::f64::consts::FRAC_PI_2;
    };
    let residual = &qb - &qa * (qa.transpose() * &qb);
    residual.singular_values().max().clamp(0.0, 1.0).asin()
}

pub fn subspace_angle(a: &FactorLoadings, b: &FactorLoadings) -> Result<f64, MatchError> {
    if a.dim() != b.dim() {
        return Err(MatchError::DimensionMismatch(a.dim(), b.dim()));
    }
    let qa = orthonormal_basis(a.columns()).ok_or_else(|| MatchError::RankDeficient(a.image_id().into()))?;
    let qb = orthonormal_basis(b.columns()).ok_or_else(|| MatchError::RankDeficient(b.image_id().into()))?;
    Ok(smallest_principal_angle(&qa, &qb))
}

fn correlation_of(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let s = a.transpose() * b;
    s.column_iter()
        .map(|col| col.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum()
}

/// `sum_l max_i (A^T B)_{i l}` over the columns `l` of `b`.
pub fn correlation_score(a: &FactorLoadings, b: &FactorLoadings) -> Result<f64, MatchError> {
    if a.dim() != b.dim() {
        return Err(MatchError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(correlation_of(a.columns(), b.columns()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedEntry {
    pub object_id: String,
    pub image_id: String,
    pub score: f64,
}

/// Top-`eta` objects, best first, each represented by its best image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
    pub eta: usize,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn objects(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.object_id.as_str())
    }

    /// Zero-based rank of `object_id`, if listed.
    pub fn position(&self, object_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.object_id == object_id)
    }
}

/// One database image with both of its loading matrices.
#[derive(Debug, Clone)]
pub struct IndexedImage {
    pub object_id: String,
    pub k_star: usize,
    pub pca: FactorLoadings,
    pub nmf: FactorLoadings,
    /// Quantized forms, when the loadings came out of a quantization round trip.
    pub stored: Option<(QuantizedLoadings, QuantizedLoadings)>,
    pca_basis: Option<DMatrix<f64>>,
    nmf_basis: Option<DMatrix<f64>>,
}

impl IndexedImage {
    pub fn new(
        object_id: impl Into<String>,
        k_star: usize,
        pca: FactorLoadings,
        nmf: FactorLoadings,
        stored: Option<(QuantizedLoadings, QuantizedLoadings)>,
    ) -> Result<Self, MatchError> {
        let image_id = pca.image_id().to_string();
        if nmf.image_id() != image_id {
            return Err(MatchError::InconsistentEntry(
                image_id,
                format!("NMF loadings belong to {:?}", nmf.image_id()),
            ));
        }
        if pca.kind() != LoadingKind::Pca || nmf.kind() != LoadingKind::Nmf {
            return Err(MatchError::InconsistentEntry(image_id, "loading kinds swapped".into()));
        }
        if pca.order() != k_star || nmf.order() != k_star {
            return Err(MatchError::InconsistentEntry(
                image_id,
                format!("orders {} / {} differ from k* = {k_star}", pca.order(), nmf.order()),
            ));
        }
        if pca.dim() != nmf.dim() {
            return Err(MatchError::DimensionMismatch(pca.dim(), nmf.dim()));
        }
        Ok(Self {
            object_id: object_id.into(),
            k_star,
            pca_basis: orthonormal_basis(pca.columns()),
            nmf_basis: orthonormal_basis(nmf.columns()),
            pca,
            nmf,
            stored,
        })
    }

    pub fn image_id(&self) -> &str {
        self.pca.image_id()
    }

    pub fn loadings(&self, kind: LoadingKind) -> &FactorLoadings {
        match kind {
            LoadingKind::Pca => &self.pca,
            LoadingKind::Nmf => &self.nmf,
        }
    }

    fn basis(&self, kind: LoadingKind) -> Option<&DMatrix<f64>> {
        match kind {
            LoadingKind::Pca => self.pca_basis.as_ref(),
            LoadingKind::Nmf => self.nmf_basis.as_ref(),
        }
    }
}

/// Server-side database: image id to loadings, grouped by object.
#[derive(Debug, Clone, Default)]
pub struct ObjectIndex {
    images: BTreeMap<String, IndexedImage>,
    dim: Option<usize>,
}

impl ObjectIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image: IndexedImage) -> Result<(), MatchError> {
        let id = image.image_id().to_string();
        if self.images.contains_key(&id) {
            return Err(MatchError::DuplicateImage(id));
        }
        match self.dim {
            Some(t) if t != image.pca.dim() => return Err(MatchError::DimensionMismatch(t, image.pca.dim())),
            _ => self.dim = Some(image.pca.dim()),
        }
        self.images.insert(id, image);
        Ok(())
    }

    /// Number of images `K`.
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn object_count(&self) -> usize {
        self.images.values().map(|i| i.object_id.as_str()).collect::<HashSet<_>>().len()
    }

    pub fn get(&self, image_id: &str) -> Option<&IndexedImage> {
        self.images.get(image_id)
    }

    /// Images in ascending image-id order.
    pub fn iter(&self) -> impl Iterator<Item = &IndexedImage> {
        self.images.values()
    }

    /// Every image id belonging to one of `objects`.
    pub fn images_of<'a>(&self, objects: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
        let wanted: HashSet<&str> = objects.into_iter().collect();
        self.images
            .values()
            .filter(|img| wanted.contains(img.object_id.as_str()))
            .map(|img| img.image_id().to_string())
            .collect()
    }
}

/// Scores `query` against the index (or the `candidates` subset), sorts
/// best-first with image id as tie-break, keeps each object's best image and
/// truncates to `eta` objects.
///
/// Database images whose loadings have no usable basis are skipped under the
/// angle metric.
pub fn rank_database(
    query: &FactorLoadings,
    index: &ObjectIndex,
    metric: Metric,
    eta: usize,
    candidates: Option<&BTreeSet<String>>,
) -> Result<RankedList, MatchError> {
    if index.is_empty() {
        return Err(MatchError::EmptyIndex);
    }
    if eta == 0 {
        return Err(MatchError::InvalidEta);
    }
    if let Some(t) = index.dim() {
        if t != query.dim() {
            return Err(MatchError::DimensionMismatch(query.dim(), t));
        }
    }
    let kind = query.kind();
    let query_basis = match metric {
        Metric::Angle => Some(
            orthonormal_basis(query.columns())
                .ok_or_else(|| MatchError::RankDeficient(query.image_id().into()))?,
        ),
        Metric::Correlation => None,
    };

    let mut scored: Vec<(f64, &IndexedImage)> = Vec::with_capacity(index.len());
    for image in index.iter() {
        if candidates.is_some_and(|c| !c.contains(image.image_id())) {
            continue;
        }
        let score = match (&query_basis, metric) {
            (Some(qa), Metric::Angle) => match image.basis(kind) {
                Some(qb) => smallest_principal_angle(qa, qb),
                None => continue,
            },
            _ => correlation_of(query.columns(), image.loadings(kind).columns()),
        };
        scored.push((score, image));
    }
    scored.sort_by(|a, b| metric.compare(a.0, b.0).then_with(|| a.1.image_id().cmp(b.1.image_id())));

    let mut seen = HashSet::new();
    let entries = scored
        .into_iter()
        .filter(|(_, img)| seen.insert(img.object_id.as_str()))
        .take(eta)
        .map(|(score, img)| RankedEntry {
            object_id: img.object_id.clone(),
            image_id: img.image_id().to_string(),
            score,
        })
        .collect();
    Ok(RankedList { entries, eta })
}

/// The two hypotheses of the combined pipeline and their fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedRetrieval {
    /// PCA correlation ranking over the whole index.
    pub secondary: RankedList,
    /// NMF angle ranking restricted to every image of the secondary's objects.
    pub primary: RankedList,
    pub fused: RankedList,
}

/// PCA-correlation prefilter to `eta` objects, NMF-angle rerank over all
/// views of those objects, then fusion with weight `alpha`.
pub fn retrieve_combined(
    query_pca: &FactorLoadings,
    query_nmf: &FactorLoadings,
    index: &ObjectIndex,
    eta: usize,
    alpha: usize,
) -> Result<RankedList, MatchError> {
    Ok(retrieve_combined_detailed(query_pca, query_nmf, index, eta, alpha)?.fused)
}

pub fn retrieve_combined_detailed(
    query_pca: &FactorLoadings,
    query_nmf: &FactorLoadings,
    index: &ObjectIndex,
    eta: usize,
    alpha: usize,
) -> Result<CombinedRetrieval, MatchError> {
    let params = FusionParams::new(alpha, eta)?;
    let secondary = rank_database(query_pca, index, Metric::Correlation, eta, None)?;
    let candidates = index.images_of(secondary.objects());
    let primary = rank_database(query_nmf, index, Metric::Angle, eta, Some(&candidates))?;
    let fused = fuse(&primary, &secondary, &params)?;
    Ok(CombinedRetrieval {
        secondary,
        primary,
        fused,
    })
}
