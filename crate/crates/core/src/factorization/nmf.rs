//! Sparse NMF: `M ~ L R` with unit-norm non-negative columns in `L` and
//! exactly one non-zero per column of `R`.
//!
//! With one non-zero per factor column the problem is a spherical clustering
//! of the descriptors: each descriptor picks the loading column it correlates
//! with best, and carries the correlation as its scale. Minimizing
//! `1/2 ||M - L R||_F^2` is the same as maximizing the sum of squared
//! correlations, which is what both alternation steps do.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FactorLoadings, LoadingKind};
use crate::descriptors::DescriptorMatrix;
use crate::error::FactorizationError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmfConfig {
    pub max_iters: usize,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// The 1-sparse factor matrix `R`, stored as one (cluster, scale) pair per
/// descriptor. Cluster indices are zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorAssignment {
    pub k: usize,
    pub cluster_of: Vec<usize>,
    pub scale_of: Vec<f64>,
}

impl FactorAssignment {
    pub fn len(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster_of.is_empty()
    }

    /// Dense `k x N` form of `R`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.k, self.len());
        for (j, (&c, &s)) in self.cluster_of.iter().zip(&self.scale_of).enumerate() {
            r[(c, j)] = s;
        }
        r
    }
}

#[derive(Debug, Clone)]
pub struct NmfResult {
    pub loadings: FactorLoadings,
    pub assignment: FactorAssignment,
    /// `1/2 ||M - L R||_F^2` after each assignment step.
    pub objective_trace: Vec<f64>,
}

pub fn nmf_loadings(
    m: &DescriptorMatrix,
    k: usize,
    config: &NmfConfig,
) -> Result<NmfResult, FactorizationError> {
    let n = m.count();
    if k == 0 || k > n {
        return Err(FactorizationError::OrderOutOfRange { k, max: n });
    }
    if config.max_iters == 0 {
        return Err(FactorizationError::InvalidLoadings("max_iters must be positive".into()));
    }
    let data = m.to_f64();
    for ((row, col), &v) in data.iter().enumerate().map(|(i, v)| ((i % data.nrows(), i / data.nrows()), v)) {
        if v < 0.0 {
            return Err(FactorizationError::NegativeEntry { row, col });
        }
    }
    let sq_norms: Vec<f64> = data.column_iter().map(|c| c.norm_squared()).collect();
    let total_energy: f64 = sq_norms.iter().sum();

    let mut loadings = farthest_point_init(&data, k, config.seed);
    let mut trace: Vec<f64> = Vec::new();
    let mut accepted: Option<(DMatrix<f64>, FactorAssignment)> = None;

    for iter in 0..config.max_iters {
        let (assignment, gains) = assign(&data, &loadings);
        let objective = 0.5 * (total_energy - gains.iter().sum::<f64>()).max(0.0);
        if let Some(&previous) = trace.last() {
            // only reachable through rounding; keep the last accepted state
            if objective > previous {
                break;
            }
        }
        trace.push(objective);
        let previous = trace.len().checked_sub(2).map(|i| trace[i]);
        accepted = Some((loadings.clone(), assignment));
        let converged = objective == 0.0
            || previous.is_some_and(|p| p <= 0.0 || (p - objective) < config.tol * p);
        if converged || iter + 1 == config.max_iters {
            break;
        }
        let (_, assignment) = accepted.as_ref().expect("just set");
        loadings = update(&data, &loadings, assignment, &sq_norms);
    }

    let (loadings, assignment) = accepted.expect("at least one iteration runs");
    Ok(NmfResult {
        loadings: FactorLoadings::new(m.image_id(), LoadingKind::Nmf, loadings)?,
        assignment,
        objective_trace: trace,
    })
}

/// Seed-chosen first column, then repeatedly the unchosen column whose best
/// cosine similarity to the chosen set is smallest (lowest index on ties).
fn farthest_point_init(data: &DMatrix<f64>, k: usize, seed: u64) -> DMatrix<f64> {
    let n = data.ncols();
    let normalized: Vec<DVector<f64>> = data
        .column_iter()
        .map(|c| {
            let c = c.into_owned();
            let norm = c.norm();
            c / norm
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut taken = vec![false; n];
    taken[first] = true;
    let mut best_sim: Vec<f64> = normalized.iter().map(|v| v.dot(&normalized[first])).collect();
    while chosen.len() < k {
        let next = (0..n)
            .filter(|&j| !taken[j])
            .min_by(|&a, &b| best_sim[a].total_cmp(&best_sim[b]).then(a.cmp(&b)))
            .expect("k <= N leaves a candidate");
        taken[next] = true;
        chosen.push(next);
        for (j, sim) in best_sim.iter_mut().enumerate() {
            *sim = sim.max(normalized[j].dot(&normalized[next]));
        }
    }
    DMatrix::from_columns(&chosen.iter().map(|&j| normalized[j].clone()).collect::<Vec<_>>())
}

/// Assigns every descriptor to its best-correlated column. Returns the
/// assignment and the per-cluster sum of squared scales.
fn assign(data: &DMatrix<f64>, loadings: &DMatrix<f64>) -> (FactorAssignment, Vec<f64>) {
    let k = loadings.ncols();
    let dots = loadings.transpose() * data;
    let mut cluster_of = Vec::with_capacity(data.ncols());
    let mut scale_of = Vec::with_capacity(data.ncols());
    let mut gains = vec![0.0; k];
    for col in dots.column_iter() {
        let mut best = 0;
        for c in 1..k {
            if col[c] > col[best] {
                best = c;
            }
        }
        let scale = col[best].max(0.0);
        cluster_of.push(best);
        scale_of.push(scale);
        gains[best] += scale * scale;
    }
    (
        FactorAssignment {
            k,
            cluster_of,
            scale_of,
        },
        gains,
    )
}

/// Moves each column to the normalized sum of its members, keeping the old
/// column whenever that would lower the cluster's captured energy. Empty
/// clusters are re-seeded from the worst-fit descriptors.
fn update(
    data: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
    assignment: &FactorAssignment,
    sq_norms: &[f64],
) -> DMatrix<f64> {
    let (t, k) = loadings.shape();
    let mut sums = DMatrix::<f64>::zeros(t, k);
    let mut members = vec![Vec::new(); k];
    for (j, &c) in assignment.cluster_of.iter().enumerate() {
        sums.column_mut(c).axpy(1.0, &data.column(j), 1.0);
        members[c].push(j);
    }

    let mut residuals: Vec<f64> = sq_norms
        .iter()
        .zip(&assignment.scale_of)
        .map(|(sq, s)| sq - s * s)
        .collect();
    let mut next = loadings.clone();
    for (c, cluster) in members.iter().enumerate() {
        if cluster.is_empty() {
            let worst = (0..residuals.len())
                .max_by(|&a, &b| residuals[a].total_cmp(&residuals[b]).then(b.cmp(&a)))
                .expect("non-empty data");
            residuals[worst] = f64::NEG_INFINITY;
            let d = data.column(worst);
            next.set_column(c, &(d / d.norm()));
            continue;
        }
        let norm = sums.column(c).norm();
        if norm == 0.0 {
            continue;
        }
        let candidate = sums.column(c) / norm;
        let captured = |col: &DVector<f64>| -> f64 {
            cluster
                .iter()
                .map(|&j| {
                    let s = data.column(j).dot(col).max(0.0);
                    s * s
                })
                .sum()
        };
        let current = loadings.column(c).into_owned();
        if captured(&candidate) >= captured(&current) {
            next.set_column(c, &candidate);
        }
    }
    next
}

/// `1/2 ||M - L R||_F^2` with `R` rebuilt from `assign`.
pub fn nmf_objective(
    m: &DescriptorMatrix,
    loadings: &FactorLoadings,
    assign: &FactorAssignment,
) -> Result<f64, FactorizationError> {
    let l = loadings.columns();
    if l.nrows() != m.dim() {
        return Err(FactorizationError::ShapeMismatch(format!(
            "loadings have T={} but descriptors have T={}",
            l.nrows(),
            m.dim()
        )));
    }
    if assign.k != l.ncols() || assign.len() != m.count() || assign.scale_of.len() != assign.len() {
        return Err(FactorizationError::ShapeMismatch(format!(
            "assignment is k={} over {} descriptors, loadings have k={} and N={}",
            assign.k,
            assign.len(),
            l.ncols(),
            m.count()
        )));
    }
    if let Some(&bad) = assign.cluster_of.iter().find(|&&c| c >= assign.k) {
        return Err(FactorizationError::ShapeMismatch(format!("cluster index {bad} >= k")));
    }
    let data = m.to_f64();
    let mut total = 0.0;
    for (j, d) in data.column_iter().enumerate() {
        let fit = l.column(assign.cluster_of[j]) * assign.scale_of[j];
        total += (d - fit).norm_squared();
    }
    Ok(0.5 * total)
}
