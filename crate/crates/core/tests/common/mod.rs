#![allow(dead_code)]

use facret::descriptors::{generate_corpus, DescriptorMatrix, SynthCorpusSpec};
use facret::factorization::{FactorLoadings, LoadingKind};
use facret::matcher::RankedEntry;
use facret::matcher::RankedList;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Gaussian `t x k` matrix with unit-norm columns.
pub fn random_unit_columns(rng: &mut ChaCha8Rng, t: usize, k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(t, k, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    for mut col in m.column_iter_mut() {
        let n = col.norm();
        col /= n;
    }
    m
}

pub fn loadings(id: &str, kind: LoadingKind, columns: DMatrix<f64>) -> FactorLoadings {
    FactorLoadings::new(id, kind, columns).unwrap()
}

pub fn normalize_columns(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in m.column_iter_mut() {
        let n = col.norm();
        col /= n;
    }
    m
}

/// Smallest principal angle from orthogonal projectors:
/// `acos(sigma_max(P_A P_B))` with `P = X (X^T X)^-1 X^T`.
pub fn projection_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let pa = a * (a.transpose() * a).try_inverse().unwrap() * a.transpose();
    let pb = b * (b.transpose() * b).try_inverse().unwrap() * b.transpose();
    (pa * pb).singular_values().max().min(1.0).acos()
}

pub fn non_negative_matrix(rng: &mut ChaCha8Rng, t: usize, n: usize) -> DescriptorMatrix {
    let values = DMatrix::from_fn(t, n, |_, _| rng.random::<f32>() + 1e-3);
    DescriptorMatrix::new("m", "o", values).unwrap()
}

pub fn list(objects: &[String]) -> RankedList {
    RankedList {
        entries: objects
            .iter()
            .enumerate()
            .map(|(i, o)| RankedEntry {
                object_id: o.clone(),
                image_id: format!("{o}_v"),
                score: i as f64,
            })
            .collect(),
        eta: objects.len(),
    }
}

pub fn corpus(objects: usize, views: usize, t: usize, n: usize, rank: usize, sigma: f64, seed: u64) -> Vec<DescriptorMatrix> {
    generate_corpus(&SynthCorpusSpec {
        num_objects: objects,
        views_per_object: views,
        dim: t,
        descriptors_per_view: n,
        planted_rank: rank,
        view_noise_sigma: sigma,
        seed,
    })
    .unwrap()
}
