//! Per-image model order from the information-content criterion
//!
//! `I(k) = ln V(k) + k (T+N)/(TN) ln(TN/(T+N))`, where `V(k)` is the mean
//! squared residual of the best rank-`k` fit. The estimated order is the
//! smallest minimizer of `I`.

use serde::Serialize;

use crate::descriptors::DescriptorMatrix;
use crate::error::FactorizationError;
use crate::factorization::{svd, SvdResult};

/// Floor applied to `V(k)` so that exactly low-rank inputs keep `ln V` finite.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

/// Default cap on candidate orders.
pub const DEFAULT_MAX_ORDER: usize = 64;

/// `min(64, min(T, N) / 2)`, at least 1. Close to full rank the last few
/// noise singular values make `ln V` fall faster than the penalty grows, so
/// the search stops at half the available rank.
pub fn default_k_max(t: usize, n: usize) -> usize {
    DEFAULT_MAX_ORDER.min(t.min(n) / 2).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelOrderProfile {
    pub k_max: usize,
    /// `residual[k - 1] = V(k)`.
    pub residual: Vec<f64>,
    /// `information[k - 1] = I(k)`.
    pub information: Vec<f64>,
    pub k_star: usize,
}

/// `V(k)`: tail singular-value energy over `T N`, floored at [`RESIDUAL_FLOOR`].
pub fn residual_variance(
    m: &DescriptorMatrix,
    decomposition: &SvdResult,
    k: usize,
) -> Result<f64, FactorizationError> {
    let max = m.dim().min(m.count());
    if k == 0 || k > max {
        return Err(FactorizationError::OrderOutOfRange { k, max });
    }
    Ok(tail_variance(decomposition, k, m.dim(), m.count()))
}

fn tail_variance(decomposition: &SvdResult, k: usize, t: usize, n: usize) -> f64 {
    let tail: f64 = decomposition
        .singular_values
        .iter()
        .skip(k)
        .map(|s| s * s)
        .sum();
    (tail / (t * n) as f64).max(RESIDUAL_FLOOR)
}

pub fn information_content(residual: f64, k: usize, t: usize, n: usize) -> f64 {
    let (t, n) = (t as f64, n as f64);
    residual.ln() + k as f64 * ((t + n) / (t * n)) * ((t * n) / (t + n)).ln()
}

pub fn estimate_order(m: &DescriptorMatrix, k_max: usize) -> Result<ModelOrderProfile, FactorizationError> {
    let max = m.dim().min(m.count());
    if k_max == 0 || k_max > max {
        return Err(FactorizationError::OrderOutOfRange { k: k_max, max });
    }
    let decomposition = svd(m)?;
    Ok(profile_from_svd(&decomposition, m.dim(), m.count(), k_max))
}

/// Same as [`estimate_order`] on a decomposition that is already available.
pub fn profile_from_svd(decomposition: &SvdResult, t: usize, n: usize, k_max: usize) -> ModelOrderProfile {
    let residual: Vec<f64> = (1..=k_max).map(|k| tail_variance(decomposition, k, t, n)).collect();
    let information: Vec<f64> = residual
        .iter()
        .enumerate()
        .map(|(i, &v)| information_content(v, i + 1, t, n))
        .collect();
    let mut k_star = 1;
    for (i, &value) in information.iter().enumerate() {
        if value < information[k_star - 1] {
            k_star = i + 1;
        }
    }
    ModelOrderProfile {
        k_max,
        residual,
        information,
        k_star,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{generate_corpus, SynthCorpusSpec};
    use crate::factorization::pca_loadings;
    use nalgebra::DMatrix;

    fn planted(rank: usize, sigma: f64, seed: u64) -> DescriptorMatrix {
        planted_sized(16, 200, rank, sigma, seed)
    }

    fn planted_sized(t: usize, n: usize, rank: usize, sigma: f64, seed: u64) -> DescriptorMatrix {
        generate_corpus(&SynthCorpusSpec {
            num_objects: 1,
            views_per_object: 1,
            dim: t,
            descriptors_per_view: n,
            planted_rank: rank,
            view_noise_sigma: sigma,
            seed,
        })
        .unwrap()
        .remove(0)
    }

    #[test]
    fn unit_residual_leaves_penalty() {
        let (t, n, k) = (16usize, 200usize, 5usize);
        let expected = k as f64 * (216.0 / 3200.0) * (3200.0f64 / 216.0).ln();
        assert!((information_content(1.0, k, t, n) - expected).abs() < 1e-15);
    }

    #[test]
    fn high_precision_reference_value() {
        // ln(0.01) + 3 * (216/3200) * ln(3200/216), evaluated at 40 digits
        let reference = -4.059_305_580_564_602;
        let got = information_content(0.01, 3, 16, 200);
        assert!((got - reference).abs() < 1e-13, "{got}");
    }

    #[test]
    fn penalty_increases_with_order() {
        for (t, n) in [(2, 3), (16, 200), (128, 2253), (32, 3)] {
            let values: Vec<f64> = (1..10).map(|k| information_content(1.0, k, t, n)).collect();
            assert!(values.windows(2).all(|w| w[1] > w[0]), "T={t} N={n}");
        }
    }

    #[test]
    fn residual_matches_explicit_projection() {
        for seed in 0..4 {
            let m = planted(3, 0.05, seed);
            let mf = m.to_f64();
            let scale = (m.dim() * m.count()) as f64;
            let s = svd(&m).unwrap();
            for k in 1..=m.dim() {
                let (h, _) = pca_loadings(&m, k).unwrap();
                let hc = h.columns();
                let explicit = ((&mf - hc * (hc.transpose() * &mf)).norm_squared() / scale).max(RESIDUAL_FLOOR);
                let got = residual_variance(&m, &s, k).unwrap();
                assert!((got - explicit).abs() <= 1e-9 * explicit.max(1e-3), "k={k}: {got} vs {explicit}");
            }
        }
    }

    #[test]
    fn exact_rank_is_floored() {
        let m = planted(2, 0.0, 7);
        let s = svd(&m).unwrap();
        assert_eq!(residual_variance(&m, &s, 2).unwrap(), RESIDUAL_FLOOR);
        assert_eq!(residual_variance(&m, &s, 16).unwrap(), RESIDUAL_FLOOR);
        assert!(residual_variance(&m, &s, 0).is_err());
        assert!(residual_variance(&m, &s, 17).is_err());
    }

    /// Brute-force argmin over the profile, independent of `profile_from_svd`.
    fn brute_force_argmin(m: &DescriptorMatrix, k_max: usize) -> usize {
        let s = svd(m).unwrap();
        let mut best = (f64::INFINITY, 0);
        for k in 1..=k_max {
            let v = residual_variance(m, &s, k).unwrap();
            let i = information_content(v, k, m.dim(), m.count());
            if i < best.0 {
                best = (i, k);
            }
        }
        best.1
    }

    #[test]
    fn recovers_planted_rank() {
        let m = planted(4, 0.01, 3);
        let profile = estimate_order(&m, default_k_max(16, 200)).unwrap();
        assert_eq!(brute_force_argmin(&m, profile.k_max), 4);
        assert_eq!(profile.k_star, 4);

        let m = planted_sized(32, 400, 1, 0.01, 3);
        assert_eq!(brute_force_argmin(&m, 16), 1);
        assert_eq!(estimate_order(&m, 16).unwrap().k_star, 1);
    }

    #[test]
    fn noiseless_order_does_not_exceed_planted() {
        for r in 1..6 {
            let m = planted(r, 0.0, r as u64);
            assert!(estimate_order(&m, 15).unwrap().k_star <= r);
        }
    }

    #[test]
    fn residual_profile_non_increasing() {
        let m = planted(5, 0.1, 1);
        let p = estimate_order(&m, 15).unwrap();
        assert!(p.residual.windows(2).all(|w| w[1] <= w[0]));
        assert!(p.k_star >= 1 && p.k_star <= p.k_max);
    }

    #[test]
    fn invariant_to_column_permutation() {
        let m = planted(3, 0.05, 5);
        let vals = m.values();
        let n = vals.ncols();
        let permuted = DMatrix::from_fn(vals.nrows(), n, |i, j| vals[(i, (j * 7 + 3) % n)]);
        let p = DescriptorMatrix::new("p", "p", permuted).unwrap();
        assert_eq!(estimate_order(&m, 15).unwrap().k_star, estimate_order(&p, 15).unwrap().k_star);
    }

    #[test]
    fn ties_prefer_smaller_order() {
        // rank-1 input: every k >= 1 hits the floor, so I(k) only grows
        let m = DescriptorMatrix::new("t", "t", DMatrix::from_element(4, 6, 1.0f32)).unwrap();
        assert_eq!(estimate_order(&m, 3).unwrap().k_star, 1);
    }

    #[test]
    fn default_cap() {
        assert_eq!(default_k_max(128, 2000), 64);
        assert_eq!(default_k_max(32, 400), 16);
        assert_eq!(default_k_max(16, 200), 8);
        assert_eq!(default_k_max(2, 1), 1);
    }
}
