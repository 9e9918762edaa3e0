//! Factor-loading representations of a descriptor matrix.
//!
//! Two factorizations reduce an image's `N` descriptors to `k` loading
//! columns: truncated SVD ([`pca`]) and 1-sparse non-negative factorization
//! ([`nmf`]).

pub mod nmf;
pub mod pca;

use std::fmt;

use nalgebra::DMatrix;

use crate::error::FactorizationError;

pub use nmf::{nmf_loadings, nmf_objective, FactorAssignment, NmfConfig, NmfResult};
pub use pca::{pca_from_svd, pca_loadings, svd, SvdResult};

/// Column norms may deviate from one by at most this much.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LoadingKind {
    Pca,
    Nmf,
}

impl LoadingKind {
    pub fn code(self) -> u8 {
        match self {
            LoadingKind::Pca => 0,
            LoadingKind::Nmf => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LoadingKind::Pca),
            1 => Some(LoadingKind::Nmf),
            _ => None,
        }
    }
}

impl fmt::Display for LoadingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoadingKind::Pca => "pca",
            LoadingKind::Nmf => "nmf",
        })
    }
}

/// A `T x k` loading matrix with unit-norm columns: `H` for PCA, `L` for NMF.
///
/// PCA loadings straight out of [`pca_loadings`] are orthonormal; after a
/// quantization round trip they are only unit-norm, which is all this type
/// checks.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorLoadings {
    image_id: String,
    kind: LoadingKind,
    columns: DMatrix<f64>,
}

impl FactorLoadings {
    pub fn new(
        image_id: impl Into<String>,
        kind: LoadingKind,
        columns: DMatrix<f64>,
    ) -> Result<Self, FactorizationError> {
        let (t, k) = columns.shape();
        if t == 0 || k == 0 {
            return Err(FactorizationError::InvalidLoadings(format!(
                "empty {t}x{k} loading matrix"
            )));
        }
        for (c, col) in columns.column_iter().enumerate() {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(FactorizationError::InvalidLoadings(format!(
                    "column {c} has a non-finite entry"
                )));
            }
            let norm = col.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(FactorizationError::InvalidLoadings(format!(
                    "column {c} has norm {norm}"
                )));
            }
            if kind == LoadingKind::Nmf && col.iter().any(|&v| v < 0.0) {
                return Err(FactorizationError::InvalidLoadings(format!(
                    "NMF column {c} has a negative entry"
                )));
            }
        }
        Ok(Self {
            image_id: image_id.into(),
            kind,
            columns,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn kind(&self) -> LoadingKind {
        self.kind
    }

    /// Ambient dimension `T`.
    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    /// Model order `k`.
    pub fn order(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn with_image_id(mut self, image_id: impl Into<String>) -> Self {
        self.image_id = image_id.into();
        self
    }
}
