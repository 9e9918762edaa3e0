//! Leave-one-view-out evaluation and the parameter sweeps.
//!
//! For every object the `query_view`-th image (1-based, corpus order) is the
//! query; all other images form the database. Accuracy at `n` is the fraction
//! of queries whose own object appears among the first `n` ranked objects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::DescriptorMatrix;
use crate::error::{CodecError, EvalError, MatchError, ServiceError};
use crate::factorization::{FactorLoadings, NmfConfig};
use crate::fusion::{fuse, FusionParams};
use crate::matcher::{rank_database, Metric, ObjectIndex, RankedList};
use crate::service::{factorize, indexed_image, store, ImageFactors, OrderMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    PcaCorr,
    PcaAngle,
    NmfCorr,
    NmfAngle,
    /// NMF angle restricted to the objects of the PCA-correlation list; the
    /// primary hypothesis of the combined pipeline.
    NmfAnglePrefiltered,
    Combined,
}

impl Pipeline {
    pub const ALL: [Pipeline; 6] = [
        Pipeline::PcaCorr,
        Pipeline::PcaAngle,
        Pipeline::NmfCorr,
        Pipeline::NmfAngle,
        Pipeline::NmfAnglePrefiltered,
        Pipeline::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::PcaCorr => "pca_corr",
            Pipeline::PcaAngle => "pca_angle",
            Pipeline::NmfCorr => "nmf_corr",
            Pipeline::NmfAngle => "nmf_angle",
            Pipeline::NmfAnglePrefiltered => "nmf_angle_prefiltered",
            Pipeline::Combined => "combined",
        }
    }

    /// Whether the ranking depends on alpha.
    pub fn uses_alpha(self) -> bool {
        self == Pipeline::Combined
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum RankMode {
    Estimated,
    Fixed(usize),
}

impl fmt::Display for RankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankMode::Estimated => f.write_str("estimated"),
            RankMode::Fixed(k) => write!(f, "fixed({k})"),
        }
    }
}

impl FromStr for RankMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "estimated" {
            return Ok(RankMode::Estimated);
        }
        s.strip_prefix("fixed(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|k| k.parse().ok())
            .filter(|&k| k > 0)
            .map(RankMode::Fixed)
            .ok_or_else(|| EvalError::InvalidConfig(format!("bad rank mode {s:?}")))
    }
}

impl From<RankMode> for String {
    fn from(mode: RankMode) -> Self {
        mode.to_string()
    }
}

impl TryFrom<String> for RankMode {
    type Error = EvalError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub eta: usize,
    pub alpha: usize,
    /// `None` evaluates unquantized loadings.
    pub bits: Option<u8>,
    /// Largest n for which top-n accuracy is reported.
    pub top: usize,
    /// 1-based position of the query image among each object's views.
    pub query_view: usize,
    pub rank_mode: RankMode,
    pub k_max: Option<usize>,
    pub nmf: NmfConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            eta: 20,
            alpha: 2,
            bits: Some(5),
            top: 20,
            query_view: 1,
            rank_mode: RankMode::Estimated,
            k_max: None,
            nmf: NmfConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.eta == 0 {
            return Err(EvalError::InvalidConfig("eta must be at least 1".into()));
        }
        if self.alpha > self.eta {
            return Err(EvalError::InvalidConfig(format!("alpha {} exceeds eta {}", self.alpha, self.eta)));
        }
        if self.top == 0 {
            return Err(EvalError::InvalidConfig("top must be at least 1".into()));
        }
        if self.query_view == 0 {
            return Err(EvalError::InvalidConfig("query view is 1-based".into()));
        }
        if let Some(b) = self.bits {
            if !(1..=16).contains(&b) {
                return Err(CodecError::BitsOutOfRange(b).into());
            }
        }
        Ok(())
    }

    fn order_mode(&self, mode: RankMode) -> OrderMode {
        match mode {
            RankMode::Estimated => OrderMode::Estimated { k_max: self.k_max },
            RankMode::Fixed(k) => OrderMode::Fixed(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub pipeline: Pipeline,
    pub rank_mode: RankMode,
    pub bits: Option<u8>,
    pub alpha: usize,
    pub top_n: usize,
    pub accuracy: f64,
    pub hits: usize,
    pub queries: usize,
}

/// Key identifying one accuracy curve.
pub type ConfigKey = (Pipeline, RankMode, Option<u8>, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalHeader {
    pub corpus: String,
    pub queries: usize,
    pub database_images: usize,
    pub objects: usize,
    pub eta: usize,
    pub query_view: usize,
    /// Mean model order per rank mode over all images.
    pub mean_order: BTreeMap<String, f64>,
    /// Queries whose loadings could not be dequantized, largest over the
    /// grid; they count as misses.
    pub failed_queries: usize,
    /// Database images left out because their loadings could not be
    /// dequantized, largest over the grid.
    pub dropped_images: usize,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub header: EvalHeader,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn accuracy(&self, pipeline: Pipeline, rank_mode: RankMode, bits: Option<u8>, alpha: usize, top_n: usize) -> Option<f64> {
        self.records
            .iter()
            .find(|r| {
                r.pipeline == pipeline && r.rank_mode == rank_mode && r.bits == bits && r.alpha == alpha && r.top_n == top_n
            })
            .map(|r| r.accuracy)
    }

    /// Accuracy curves indexed by top_n - 1.
    pub fn curves(&self) -> BTreeMap<ConfigKey, Vec<f64>> {
        let mut curves: BTreeMap<ConfigKey, Vec<(usize, f64)>> = BTreeMap::new();
        for r in &self.records {
            curves
                .entry((r.pipeline, r.rank_mode, r.bits, r.alpha))
                .or_default()
                .push((r.top_n, r.accuracy));
        }
        curves
            .into_iter()
            .map(|(k, mut v)| {
                v.sort_by_key(|p| p.0);
                (k, v.into_iter().map(|p| p.1).collect())
            })
            .collect()
    }

    /// Violations of the report invariants: accuracy in [0, 1], curves
    /// non-decreasing in top_n, and for every configuration that has both,
    /// the combined curve at alpha = eta equal to the prefiltered NMF curve.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let curves = self.curves();
        for (key, curve) in &curves {
            if curve.iter().any(|a| !(0.0..=1.0).contains(a)) {
                out.push(format!("{key:?}: accuracy outside [0, 1]"));
            }
            if curve.windows(2).any(|w| w[1] < w[0]) {
                out.push(format!("{key:?}: accuracy decreases with top_n"));
            }
        }
        let eta = self.header.eta;
        for ((pipeline, mode, bits, alpha), curve) in &curves {
            if *pipeline != Pipeline::Combined || *alpha != eta {
                continue;
            }
            let primary = curves
                .iter()
                .find(|((p, m, b, _), _)| *p == Pipeline::NmfAnglePrefiltered && m == mode && b == bits);
            if let Some((_, primary)) = primary {
                if primary != curve {
                    out.push(format!(
                        "combined at alpha = eta differs from the prefiltered NMF ranking ({mode}, bits {bits:?})"
                    ));
                }
            }
        }
        out
    }

    pub fn check_invariants(&self) -> Result<(), EvalError> {
        let violations = self.invariant_violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(EvalError::InvariantViolation(violations.join("; ")))
        }
    }

    /// One header line, then one line per record.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), EvalError> {
        #[derive(Serialize)]
        struct Line<'a, T> {
            #[serde(rename = "type")]
            kind: &'static str,
            #[serde(flatten)]
            body: &'a T,
        }
        serde_json::to_writer(&mut w, &Line { kind: "header", body: &self.header })?;
        writeln!(w)?;
        for r in &self.records {
            serde_json::to_writer(&mut w, &Line { kind: "record", body: r })?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// Top-1/2/3 and top-`max` accuracy per configuration.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let h = &self.header;
        let _ = writeln!(
            s,
            "corpus {}: {} queries, {} database images, {} objects, eta {}",
            h.corpus, h.queries, h.database_images, h.objects, h.eta
        );
        for (mode, k) in &h.mean_order {
            let _ = writeln!(s, "mean model order ({mode}): {k:.3}");
        }
        if h.failed_queries > 0 || h.dropped_images > 0 {
            let _ = writeln!(s, "failed queries {}, dropped images {}", h.failed_queries, h.dropped_images);
        }
        let _ = writeln!(
            s,
            "{:<22} {:<12} {:>5} {:>5} {:>7} {:>7} {:>7} {:>9}",
            "pipeline", "rank", "bits", "alpha", "top1", "top2", "top3", "top-max"
        );
        for ((pipeline, mode, bits, alpha), curve) in self.curves() {
            let at = |n: usize| curve.get(n - 1).map_or("-".to_string(), |a| format!("{:.4}", a));
            let bits = bits.map_or("-".to_string(), |b| b.to_string());
            let _ = writeln!(
                s,
                "{:<22} {:<12} {:>5} {:>5} {:>7} {:>7} {:>7} {:>9}",
                pipeline.name(),
                mode.to_string(),
                bits,
                alpha,
                at(1),
                at(2),
                at(3),
                at(curve.len())
            );
        }
        let _ = write!(s, "runtime {:.2} s", h.runtime_secs);
        s
    }
}

/// Query and database positions in `corpus`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewSplit {
    pub queries: Vec<usize>,
    pub database: Vec<usize>,
    pub objects: usize,
}

pub fn split_views(corpus: &[DescriptorMatrix], query_view: usize) -> Result<ViewSplit, EvalError> {
    let mut by_object: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, m) in corpus.iter().enumerate() {
        by_object.entry(m.object_id()).or_default().push(i);
    }
    if by_object.is_empty() {
        return Err(EvalError::InvalidConfig("empty corpus".into()));
    }
    let mut split = ViewSplit {
        queries: Vec::new(),
        database: Vec::new(),
        objects: by_object.len(),
    };
    for (object, views) in by_object {
        if views.len() < 2 {
            return Err(EvalError::SingleView(object.to_string()));
        }
        let q = *views.get(query_view - 1).ok_or_else(|| EvalError::MissingQueryView {
            object: object.to_string(),
            view: query_view,
        })?;
        split.queries.push(q);
        split.database.extend(views.into_iter().filter(|&i| i != q));
    }
    split.database.sort_unstable();
    Ok(split)
}

/// Factorizations of a whole corpus at one rank mode; independent of bits
/// and alpha, so sweeps reuse them.
struct Factored {
    mode: RankMode,
    images: Vec<ImageFactors>,
}

fn factor_corpus(corpus: &[DescriptorMatrix], config: &EvalConfig, mode: RankMode) -> Result<Factored, EvalError> {
    let order = config.order_mode(mode);
    let images = corpus
        .par_iter()
        .map(|m| factorize(m, order, &config.nmf))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Factored { mode, images })
}

/// Rank of the true object (0-based) in each pipeline's list, `None` for a
/// miss; `combined` holds one entry per alpha.
struct QueryOutcome {
    single: BTreeMap<Pipeline, Option<usize>>,
    combined: Vec<Option<usize>>,
}

struct Prepared {
    index: ObjectIndex,
    queries: Vec<Option<(String, FactorLoadings, FactorLoadings)>>,
    dropped: usize,
}

fn prepare(factored: &Factored, split: &ViewSplit, bits: Option<u8>) -> Result<Prepared, EvalError> {
    let mut index = ObjectIndex::new();
    let mut dropped = 0;
    for &i in &split.database {
        let f = &factored.images[i];
        match store(f, bits) {
            Ok(stored) => index.insert(indexed_image(f, stored)?)?,
            Err(CodecError::DegenerateColumn(c)) => {
                warn!("dropping {}: column {c} dequantizes to zero", f.image_id);
                dropped += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    if index.is_empty() {
        warn!("no database image survived quantization at {bits:?} bits; every query misses");
    }
    let queries = split
        .queries
        .iter()
        .map(|&i| {
            let f = &factored.images[i];
            match store(f, bits) {
                Ok(s) => Ok(Some((f.object_id.clone(), s.pca, s.nmf))),
                Err(CodecError::DegenerateColumn(_)) => Ok(None),
                Err(e) => Err(EvalError::from(e)),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Prepared { index, queries, dropped })
}

/// Ranks against the index; a query whose loadings lost rank (coarse
/// quantization can merge columns) has no angle ranking and counts as a miss.
fn rank_or_miss(
    query: &FactorLoadings,
    index: &ObjectIndex,
    metric: Metric,
    eta: usize,
    candidates: Option<&BTreeSet<String>>,
) -> Result<Option<RankedList>, EvalError> {
    match rank_database(query, index, metric, eta, candidates) {
        Ok(list) => Ok(Some(list)),
        Err(MatchError::RankDeficient(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn run_query(
    index: &ObjectIndex,
    object: &str,
    pca: &FactorLoadings,
    nmf: &FactorLoadings,
    eta: usize,
    alphas: &[usize],
) -> Result<QueryOutcome, EvalError> {
    let position = |list: &Option<RankedList>| list.as_ref().and_then(|l| l.position(object));
    let mut single = BTreeMap::new();
    for (pipeline, loadings, metric) in [
        (Pipeline::PcaAngle, pca, Metric::Angle),
        (Pipeline::NmfCorr, nmf, Metric::Correlation),
        (Pipeline::NmfAngle, nmf, Metric::Angle),
    ] {
        single.insert(pipeline, position(&rank_or_miss(loadings, index, metric, eta, None)?));
    }
    let secondary = rank_database(pca, index, Metric::Correlation, eta, None)?;
    single.insert(Pipeline::PcaCorr, secondary.position(object));
    let candidates = index.images_of(secondary.objects());
    let primary = rank_or_miss(nmf, index, Metric::Angle, eta, Some(&candidates))?;
    single.insert(Pipeline::NmfAnglePrefiltered, position(&primary));
    let combined = match primary {
        None => vec![None; alphas.len()],
        Some(primary) => alphas
            .iter()
            .map(|&alpha| {
                let params = FusionParams::new(alpha, eta).map_err(MatchError::from)?;
                let fused = fuse(&primary, &secondary, &params).map_err(MatchError::from)?;
                Ok(fused.position(object))
            })
            .collect::<Result<Vec<_>, EvalError>>()?,
    };
    Ok(QueryOutcome { single, combined })
}

/// Evaluates every pipeline for one (rank mode, bits) cell over `alphas`.
fn evaluate_cell(
    factored: &Factored,
    split: &ViewSplit,
    bits: Option<u8>,
    alphas: &[usize],
    config: &EvalConfig,
) -> Result<(Vec<EvalRecord>, usize, usize), EvalError> {
    let prepared = prepare(factored, split, bits)?;
    let failed = prepared.queries.iter().filter(|q| q.is_none()).count();
    let outcomes = prepared
        .queries
        .par_iter()
        .map(|q| match q {
            Some((object, pca, nmf)) if !prepared.index.is_empty() => run_query(&prepared.index, object, pca, nmf, config.eta, alphas).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<Vec<_>, _>>()?;

    let queries = outcomes.len();
    let curve = |positions: &mut dyn Iterator<Item = Option<usize>>| -> Vec<usize> {
        let mut hits = vec![0usize; config.top];
        for p in positions.flatten() {
            for h in hits.iter_mut().skip(p) {
                *h += 1;
            }
        }
        hits
    };
    let mut records = Vec::new();
    let mut push = |pipeline: Pipeline, alpha: usize, hits: Vec<usize>| {
        for (n, h) in hits.into_iter().enumerate() {
            records.push(EvalRecord {
                pipeline,
                rank_mode: factored.mode,
                bits,
                alpha,
                top_n: n + 1,
                accuracy: h as f64 / queries as f64,
                hits: h,
                queries,
            });
        }
    };
    for pipeline in Pipeline::ALL {
        if pipeline.uses_alpha() {
            for (a, &alpha) in alphas.iter().enumerate() {
                let hits = curve(&mut outcomes.iter().map(|o| o.as_ref().and_then(|o| o.combined[a])));
                push(pipeline, alpha, hits);
            }
        } else {
            let hits = curve(&mut outcomes.iter().map(|o| o.as_ref().and_then(|o| o.single[&pipeline])));
            push(pipeline, config.alpha, hits);
        }
    }
    Ok((records, failed, prepared.dropped))
}

fn run_grid(
    corpus: &[DescriptorMatrix],
    corpus_label: &str,
    config: &EvalConfig,
    modes: &[RankMode],
    bit_grid: &[Option<u8>],
    alphas: &[usize],
) -> Result<EvalReport, EvalError> {
    config.validate()?;
    for &alpha in alphas {
        if alpha > config.eta {
            return Err(EvalError::InvalidConfig(format!("alpha {alpha} exceeds eta {}", config.eta)));
        }
    }
    for &bits in bit_grid {
        EvalConfig { bits, ..*config }.validate()?;
    }
    let start = Instant::now();
    let split = split_views(corpus, config.query_view)?;
    let mut records = Vec::new();
    let mut mean_order = BTreeMap::new();
    let mut failed = 0;
    let mut dropped = 0;
    for &mode in modes {
        let factored = factor_corpus(corpus, config, mode)?;
        let mean = factored.images.iter().map(|f| f.k as f64).sum::<f64>() / factored.images.len() as f64;
        mean_order.insert(mode.to_string(), mean);
        for &bits in bit_grid {
            let (cell, f, d) = evaluate_cell(&factored, &split, bits, alphas, config)?;
            records.extend(cell);
            failed = failed.max(f);
            dropped = dropped.max(d);
        }
    }
    records.sort_by(|a, b| {
        (a.pipeline, a.rank_mode, a.bits, a.alpha, a.top_n).cmp(&(b.pipeline, b.rank_mode, b.bits, b.alpha, b.top_n))
    });
    Ok(EvalReport {
        header: EvalHeader {
            corpus: corpus_label.to_string(),
            queries: split.queries.len(),
            database_images: split.database.len(),
            objects: split.objects,
            eta: config.eta,
            query_view: config.query_view,
            mean_order,
            failed_queries: failed,
            dropped_images: dropped,
            runtime_secs: start.elapsed().as_secs_f64(),
        },
        records,
    })
}

/// All pipelines at the configured rank mode, bits and alpha.
pub fn evaluate(corpus: &[DescriptorMatrix], corpus_label: &str, config: &EvalConfig) -> Result<EvalReport, EvalError> {
    run_grid(corpus, corpus_label, config, &[config.rank_mode], &[config.bits], &[config.alpha])
}

/// The combined pipeline at every alpha in `alphas`, beside the single-metric
/// pipelines.
pub fn sweep_alpha(
    corpus: &[DescriptorMatrix],
    corpus_label: &str,
    config: &EvalConfig,
    alphas: &[usize],
) -> Result<EvalReport, EvalError> {
    if alphas.is_empty() {
        return Err(EvalError::InvalidConfig("empty alpha grid".into()));
    }
    run_grid(corpus, corpus_label, config, &[config.rank_mode], &[config.bits], alphas)
}

/// Every pipeline at each rate of `bit_grid` plus an unquantized row.
pub fn sweep_bits(
    corpus: &[DescriptorMatrix],
    corpus_label: &str,
    config: &EvalConfig,
    bit_grid: &[u8],
) -> Result<EvalReport, EvalError> {
    let mut grid: Vec<Option<u8>> = bit_grid.iter().copied().map(Some).collect();
    grid.sort();
    grid.dedup();
    grid.push(None);
    run_grid(corpus, corpus_label, config, &[config.rank_mode], &grid, &[config.alpha])
}

/// Every pipeline at each fixed rank plus the estimated order.
pub fn sweep_rank(
    corpus: &[DescriptorMatrix],
    corpus_label: &str,
    config: &EvalConfig,
    fixed_ranks: &[usize],
) -> Result<EvalReport, EvalError> {
    let mut modes: Vec<RankMode> = fixed_ranks.iter().map(|&k| RankMode::Fixed(k)).collect();
    modes.sort();
    modes.dedup();
    modes.push(RankMode::Estimated);
    run_grid(corpus, corpus_label, config, &modes, &[config.bits], &[config.alpha])
}

impl From<ServiceError> for EvalError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Codec(e) => EvalError::Codec(e),
            ServiceError::Factorization(e) => EvalError::Factorization(e),
            ServiceError::Match(e) => EvalError::Match(e),
            ServiceError::Descriptor(e) => EvalError::Descriptor(e),
            ServiceError::Io(e) => EvalError::Io(e),
            other => EvalError::InvalidConfig(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{generate_corpus, SynthCorpusSpec};

    fn corpus(sigma: f64, seed: u64) -> Vec<DescriptorMatrix> {
        generate_corpus(&SynthCorpusSpec {
            num_objects: 6,
            views_per_object: 3,
            dim: 16,
            descriptors_per_view: 80,
            planted_rank: 3,
            view_noise_sigma: sigma,
            seed,
        })
        .unwrap()
    }

    fn small_config() -> EvalConfig {
        EvalConfig {
            eta: 5,
            alpha: 1,
            top: 5,
            ..Default::default()
        }
    }

    #[test]
    fn split_takes_first_view() {
        let c = corpus(0.01, 1);
        let split = split_views(&c, 1).unwrap();
        assert_eq!(split.queries, vec![0, 3, 6, 9, 12, 15]);
        assert_eq!(split.database.len(), 12);
        let split3 = split_views(&c, 3).unwrap();
        assert_eq!(split3.queries[0], 2);
        assert!(matches!(split_views(&c, 4), Err(EvalError::MissingQueryView { view: 4, .. })));
    }

    #[test]
    fn single_view_objects_rejected() {
        let c = corpus(0.01, 1);
        assert!(matches!(split_views(&c[..4], 1), Err(EvalError::SingleView(_))));
    }

    #[test]
    fn report_shape_and_invariants() {
        let report = evaluate(&corpus(0.02, 2), "test", &small_config()).unwrap();
        assert_eq!(report.records.len(), Pipeline::ALL.len() * 5);
        assert_eq!(report.header.queries, 6);
        report.check_invariants().unwrap();
        for r in &report.records {
            assert_eq!(r.queries, 6);
            assert_eq!(r.accuracy, r.hits as f64 / 6.0);
        }
    }

    #[test]
    fn alpha_eta_matches_primary() {
        let config = small_config();
        let report = sweep_alpha(&corpus(0.3, 4), "test", &config, &[0, 1, 2, 3, 4, 5]).unwrap();
        report.check_invariants().unwrap();
        for n in 1..=5 {
            assert_eq!(
                report.accuracy(Pipeline::Combined, RankMode::Estimated, Some(5), 5, n),
                report.accuracy(Pipeline::NmfAnglePrefiltered, RankMode::Estimated, Some(5), 1, n)
            );
        }
    }

    #[test]
    fn sweeps_include_reference_rows() {
        let c = corpus(0.02, 5);
        let bits = sweep_bits(&c, "t", &small_config(), &[8, 2]).unwrap();
        for b in [Some(2), Some(8), None] {
            assert!(bits.accuracy(Pipeline::Combined, RankMode::Estimated, b, 1, 1).is_some());
        }
        let ranks = sweep_rank(&c, "t", &small_config(), &[1, 2]).unwrap();
        for m in [RankMode::Fixed(1), RankMode::Fixed(2), RankMode::Estimated] {
            assert!(ranks.accuracy(Pipeline::PcaCorr, m, Some(5), 1, 1).is_some());
        }
        assert_eq!(ranks.header.mean_order["fixed(2)"], 2.0);
    }

    #[test]
    fn jsonl_has_header_then_records() {
        let report = evaluate(&corpus(0.02, 2), "synthetic:test", &small_config()).unwrap();
        let mut buf = Vec::new();
        report.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + report.records.len());
        let header: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(header["type"], "header");
        assert_eq!(header["corpus"], "synthetic:test");
        let rec: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(rec["type"], "record");
        assert_eq!(rec["rank_mode"], "estimated");
        assert!(report.summary_table().contains("combined"));
    }

    #[test]
    fn deterministic_reports() {
        let c = corpus(0.05, 9);
        let a = evaluate(&c, "t", &small_config()).unwrap();
        let b = evaluate(&c, "t", &small_config()).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn monotonicity_violation_detected() {
        let mut report = evaluate(&corpus(0.02, 2), "t", &small_config()).unwrap();
        let last = report.records.iter_mut().find(|r| r.top_n == 5).unwrap();
        last.accuracy = -0.5;
        assert!(report.check_invariants().is_err());
    }

    #[test]
    fn rank_mode_text() {
        assert_eq!("fixed(7)".parse::<RankMode>().unwrap(), RankMode::Fixed(7));
        assert_eq!("estimated".parse::<RankMode>().unwrap(), RankMode::Estimated);
        assert!("fixed(0)".parse::<RankMode>().is_err());
        assert_eq!(RankMode::Fixed(3).to_string(), "fixed(3)");
    }
}
