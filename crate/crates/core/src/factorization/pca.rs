use nalgebra::{DMatrix, DVector, SVD};

use super::{FactorLoadings, LoadingKind};
use crate::descriptors::DescriptorMatrix;
use crate::error::FactorizationError;

/// Thin SVD `M = U diag(s) Vt` with singular values in descending order.
///
/// `U` is `T x min(T, N)`. Every column of `U` is sign-canonicalized so that
/// its largest-magnitude entry (the first one, on ties) is positive; the
/// matching row of `Vt` is flipped with it.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl SvdResult {
    pub fn rank_limit(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (mut col, s) in us.column_iter_mut().zip(self.singular_values.iter()) {
            col *= *s;
        }
        us * &self.v_t
    }
}

pub fn svd(m: &DescriptorMatrix) -> Result<SvdResult, FactorizationError> {
    svd_of(m.to_f64())
}

pub(crate) fn svd_of(matrix: DMatrix<f64>) -> Result<SvdResult, FactorizationError> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(FactorizationError::SvdFailed("non-finite input".into()));
    }
    let decomposition = SVD::try_new(matrix, true, true, f64::EPSILON, 0)
        .ok_or_else(|| FactorizationError::SvdFailed("did not converge".into()))?;
    let mut u = decomposition
        .u
        .ok_or_else(|| FactorizationError::SvdFailed("missing U".into()))?;
    let mut v_t = decomposition
        .v_t
        .ok_or_else(|| FactorizationError::SvdFailed("missing V^T".into()))?;
    for c in 0..u.ncols() {
        if needs_flip(u.column(c).iter()) {
            u.column_mut(c).neg_mut();
            v_t.row_mut(c).neg_mut();
        }
    }
    Ok(SvdResult {
        u,
        singular_values: decomposition.singular_values,
        v_t,
    })
}

fn needs_flip<'a>(values: impl Iterator<Item = &'a f64>) -> bool {
    let mut best = 0.0f64;
    let mut sign_negative = false;
    for &v in values {
        if v.abs() > best {
            best = v.abs();
            sign_negative = v < 0.0;
        }
    }
    sign_negative
}

/// PCA factor loadings: the first `k` left singular vectors of `m`.
pub fn pca_loadings(
    m: &DescriptorMatrix,
    k: usize,
) -> Result<(FactorLoadings, SvdResult), FactorizationError> {
    let max = m.dim().min(m.count());
    if k == 0 || k > max {
        return Err(FactorizationError::OrderOutOfRange { k, max });
    }
    let decomposition = svd(m)?;
    let loadings = pca_from_svd(m.image_id(), &decomposition, k)?;
    Ok((loadings, decomposition))
}

/// Takes the leading `k` columns of an existing decomposition.
pub fn pca_from_svd(
    image_id: &str,
    decomposition: &SvdResult,
    k: usize,
) -> Result<FactorLoadings, FactorizationError> {
    let max = decomposition.rank_limit();
    if k == 0 || k > max {
        return Err(FactorizationError::OrderOutOfRange { k, max });
    }
    let mut h = decomposition.u.columns(0, k).into_owned();
    // scrub the last ulp of norm drift so the unit-norm check is exact
    for mut col in h.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    FactorLoadings::new(image_id, LoadingKind::Pca, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(t: usize, n: usize, data: &[f32]) -> DescriptorMatrix {
        DescriptorMatrix::new("img", "obj", DMatrix::from_row_slice(t, n, data)).unwrap()
    }

    fn random_matrix(seed: u64, t: usize, n: usize) -> DescriptorMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DescriptorMatrix::new(
            "r",
            "r",
            DMatrix::from_fn(t, n, |_, _| rng.random_range(0.01f32..1.0)),
        )
        .unwrap()
    }

    #[test]
    fn rank_one_sign_canonical() {
        let m = matrix(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let (h, _) = pca_loadings(&m, 1).unwrap();
        assert!((h.columns()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(h.columns()[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn orthonormal_columns() {
        for seed in 0..5 {
            let m = random_matrix(seed, 12, 30);
            for k in 1..=12 {
                let (h, _) = pca_loadings(&m, k).unwrap();
                let gram = h.columns().transpose() * h.columns();
                let err = (gram - DMatrix::identity(k, k)).abs().max();
                assert!(err < 1e-8, "seed {seed} k {k}: {err}");
            }
        }
    }

    #[test]
    fn matches_eigendecomposition_subspace() {
        let m = random_matrix(3, 3, 6);
        let (h, _) = pca_loadings(&m, 2).unwrap();
        // independent route: top-2 eigenvectors of M M^T
        let mf = m.to_f64();
        let eig = SymmetricEigen::new(&mf * mf.transpose());
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let e = DMatrix::from_columns(&[eig.eigenvectors.column(order[0]), eig.eigenvectors.column(order[1])]);
        // largest principal angle between spans: sines are singular values of (I - E E^T) H
        let residual = h.columns() - &e * (e.transpose() * h.columns());
        let max_sine = residual.singular_values().max();
        assert!(max_sine.asin() < 1e-7, "angle {}", max_sine.asin());
    }

    #[test]
    fn reconstruction_and_order() {
        let m = random_matrix(9, 10, 25);
        let s = svd(&m).unwrap();
        let rel = (s.reconstruct() - m.to_f64()).norm() / m.to_f64().norm();
        assert!(rel < 1e-6);
        assert!(s.singular_values.iter().zip(s.singular_values.iter().skip(1)).all(|(a, b)| a >= b));
    }

    #[test]
    fn tail_energy_matches_projection_residual() {
        let m = random_matrix(4, 8, 20);
        let mf = m.to_f64();
        let s = svd(&m).unwrap();
        let mut previous = f64::INFINITY;
        for k in 1..=8 {
            let (h, _) = pca_loadings(&m, k).unwrap();
            let hc = h.columns();
            let resid = (&mf - hc * (hc.transpose() * &mf)).norm();
            let tail: f64 = s.singular_values.iter().skip(k).map(|x| x * x).sum::<f64>().sqrt();
            assert!(resid <= previous + 1e-12);
            assert!((resid - tail).abs() <= 1e-6 * mf.norm());
            previous = resid;
        }
    }

    #[test]
    fn order_out_of_range() {
        let m = random_matrix(1, 4, 3);
        assert!(matches!(pca_loadings(&m, 0), Err(FactorizationError::OrderOutOfRange { .. })));
        assert!(matches!(pca_loadings(&m, 4), Err(FactorizationError::OrderOutOfRange { k: 4, max: 3 })));
    }
}
