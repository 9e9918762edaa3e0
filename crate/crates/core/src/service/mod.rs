//! Client/server retrieval: index building, the query pipeline, and the
//! length-prefixed binary protocol that carries quantized loadings to the
//! server and ranked object lists back.

pub mod client;
pub mod protocol;
pub mod server;

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::codec::{decode, dequantize, encode, quantize, QuantizedLoadings};
use crate::descriptors::DescriptorMatrix;
use crate::error::{CodecError, FactorizationError, MatchError, ServiceError};
use crate::factorization::{nmf_loadings, pca_from_svd, svd, FactorLoadings, LoadingKind, NmfConfig};
use crate::matcher::{retrieve_combined, IndexedImage, ObjectIndex, RankedList};
use crate::model_order::{default_k_max, profile_from_svd};

pub use client::{query_remote, RetrievalClient, DEFAULT_TIMEOUT};
pub use protocol::{QueryMessage, ResponseEntry, ResponseMessage, Status, DEFAULT_MAX_FRAME};
pub use server::{serve, ServerConfig, ServerHandle};

/// How many loading columns each image keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderMode {
    /// Minimize the information criterion over `1..=k_max` (default cap when `None`).
    Estimated { k_max: Option<usize> },
    Fixed(usize),
}

impl Default for OrderMode {
    fn default() -> Self {
        OrderMode::Estimated { k_max: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub order: OrderMode,
    pub nmf: NmfConfig,
    /// Quantization rate for stored and transmitted loadings; `None` keeps
    /// full precision.
    pub bits: Option<u8>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            order: OrderMode::default(),
            nmf: NmfConfig::default(),
            bits: Some(5),
        }
    }
}

/// Both factorizations of one image at a shared model order.
#[derive(Debug, Clone)]
pub struct ImageFactors {
    pub image_id: String,
    pub object_id: String,
    pub k: usize,
    pub pca: FactorLoadings,
    pub nmf: FactorLoadings,
}

pub fn factorize(
    m: &DescriptorMatrix,
    order: OrderMode,
    nmf: &NmfConfig,
) -> Result<ImageFactors, FactorizationError> {
    let limit = m.dim().min(m.count());
    let decomposition = svd(m)?;
    let k = match order {
        OrderMode::Estimated { k_max } => {
            let k_max = k_max.unwrap_or_else(|| default_k_max(m.dim(), m.count()));
            if k_max == 0 || k_max > limit {
                return Err(FactorizationError::OrderOutOfRange { k: k_max, max: limit });
            }
            profile_from_svd(&decomposition, m.dim(), m.count(), k_max).k_star
        }
        OrderMode::Fixed(k) => k,
    };
    let pca = pca_from_svd(m.image_id(), &decomposition, k)?;
    let nmf = nmf_loadings(m, k, nmf)?.loadings;
    Ok(ImageFactors {
        image_id: m.image_id().to_string(),
        object_id: m.object_id().to_string(),
        k,
        pca,
        nmf,
    })
}

/// Loadings as the server sees them: after a quantization round trip when
/// `bits` is set.
#[derive(Debug, Clone)]
pub struct StoredLoadings {
    pub pca: FactorLoadings,
    pub nmf: FactorLoadings,
    pub quantized: Option<(QuantizedLoadings, QuantizedLoadings)>,
}

pub fn store(factors: &ImageFactors, bits: Option<u8>) -> Result<StoredLoadings, CodecError> {
    match bits {
        None => Ok(StoredLoadings {
            pca: factors.pca.clone(),
            nmf: factors.nmf.clone(),
            quantized: None,
        }),
        Some(b) => {
            let qp = quantize(&factors.pca, b)?;
            let qn = quantize(&factors.nmf, b)?;
            Ok(StoredLoadings {
                pca: dequantize(&qp)?,
                nmf: dequantize(&qn)?,
                quantized: Some((qp, qn)),
            })
        }
    }
}

pub fn indexed_image(factors: &ImageFactors, stored: StoredLoadings) -> Result<IndexedImage, MatchError> {
    IndexedImage::new(
        factors.object_id.clone(),
        factors.k,
        stored.pca,
        stored.nmf,
        stored.quantized,
    )
}

/// Factorizes, quantizes and indexes every image of `corpus`.
pub fn build_index(corpus: &[DescriptorMatrix], config: &PipelineConfig) -> Result<ObjectIndex, ServiceError> {
    if corpus.is_empty() {
        return Err(MatchError::EmptyIndex.into());
    }
    let images = corpus
        .par_iter()
        .map(|m| -> Result<IndexedImage, ServiceError> {
            let factors = factorize(m, config.order, &config.nmf)?;
            let stored = store(&factors, config.bits)?;
            Ok(indexed_image(&factors, stored)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut index = ObjectIndex::new();
    for image in images {
        index.insert(image)?;
    }
    Ok(index)
}

/// Client side of a query: factorize, quantize and encode both loadings.
pub fn prepare_query(
    m: &DescriptorMatrix,
    eta: u16,
    alpha: u16,
    bits: u8,
    config: &PipelineConfig,
) -> Result<QueryMessage, ServiceError> {
    let factors = factorize(m, config.order, &config.nmf)?;
    let pca = quantize(&factors.pca, bits)?;
    let nmf = quantize(&factors.nmf, bits)?;
    Ok(QueryMessage {
        version: protocol::PROTOCOL_VERSION,
        eta,
        alpha,
        pca_blob: encode(&pca),
        nmf_blob: encode(&nmf),
    })
}

/// Server side of a query: decode, dequantize, retrieve.
pub fn answer_query(index: &ObjectIndex, query: &QueryMessage) -> ResponseMessage {
    match run_query(index, query) {
        Ok(list) => ResponseMessage::from_ranked(&list),
        Err(err) => ResponseMessage::from_error(&err),
    }
}

fn run_query(index: &ObjectIndex, query: &QueryMessage) -> Result<RankedList, ServiceError> {
    if query.eta == 0 {
        return Err(ServiceError::InvalidParameters("eta must be at least 1".into()));
    }
    if query.alpha > query.eta {
        return Err(ServiceError::InvalidParameters(format!(
            "alpha {} exceeds eta {}",
            query.alpha, query.eta
        )));
    }
    let malformed = |e: CodecError| ServiceError::MalformedFrame(e.to_string());
    let qp = decode(&query.pca_blob).map_err(malformed)?;
    let qn = decode(&query.nmf_blob).map_err(malformed)?;
    if qp.kind() != LoadingKind::Pca || qn.kind() != LoadingKind::Nmf {
        return Err(ServiceError::InvalidParameters("expected a PCA blob then an NMF blob".into()));
    }
    if qp.dim() != qn.dim() || index.dim().is_some_and(|t| t != qp.dim()) {
        return Err(ServiceError::InvalidParameters(format!(
            "descriptor dimension {} / {} does not match index {:?}",
            qp.dim(),
            qn.dim(),
            index.dim()
        )));
    }
    let invalid = |e: CodecError| ServiceError::InvalidParameters(e.to_string());
    let pca = dequantize(&qp).map_err(invalid)?;
    let nmf = dequantize(&qn).map_err(invalid)?;
    Ok(retrieve_combined(&pca, &nmf, index, usize::from(query.eta), usize::from(query.alpha))?)
}

/// The full pipeline without the network hop.
pub fn local_query(
    index: &ObjectIndex,
    m: &DescriptorMatrix,
    eta: u16,
    alpha: u16,
    bits: u8,
    config: &PipelineConfig,
) -> Result<ResponseMessage, ServiceError> {
    let query = prepare_query(m, eta, alpha, bits, config)?;
    Ok(answer_query(index, &query))
}

const INDEX_MAGIC: &[u8; 4] = b"OIX1";

/// Serializes an index built with quantization: per image the object id and
/// both codec blobs.
pub fn save_index(index: &ObjectIndex) -> Result<Vec<u8>, ServiceError> {
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&(index.len() as u32).to_le_bytes());
    for image in index.iter() {
        let (qp, qn) = image.stored.as_ref().ok_or_else(|| {
            ServiceError::InvalidParameters(format!(
                "image {:?} has no quantized form; build the index with a bit rate",
                image.image_id()
            ))
        })?;
        let object = image.object_id.as_bytes();
        out.extend_from_slice(&(object.len() as u16).to_le_bytes());
        out.extend_from_slice(object);
        for blob in [encode(qp), encode(qn)] {
            out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
            out.extend_from_slice(&blob);
        }
    }
    Ok(out)
}

pub fn load_index(bytes: &[u8]) -> Result<ObjectIndex, ServiceError> {
    let mut reader = protocol::Reader::new(bytes);
    if reader.take(4)? != INDEX_MAGIC {
        return Err(ServiceError::MalformedFrame("bad index magic".into()));
    }
    let count = reader.u32()? as usize;
    let mut index = ObjectIndex::new();
    for _ in 0..count {
        let object_len = usize::from(reader.u16()?);
        let object = reader.string(object_len)?;
        let pca_len = reader.u32()? as usize;
        let qp = decode(reader.take(pca_len)?)?;
        let nmf_len = reader.u32()? as usize;
        let qn = decode(reader.take(nmf_len)?)?;
        let image = IndexedImage::new(object, qp.order(), dequantize(&qp)?, dequantize(&qn)?, Some((qp, qn)))?;
        index.insert(image)?;
    }
    reader.finish()?;
    Ok(index)
}

pub fn write_index_file(path: &Path, index: &ObjectIndex) -> Result<(), ServiceError> {
    fs::write(path, save_index(index)?)?;
    Ok(())
}

pub fn read_index_file(path: &Path) -> Result<ObjectIndex, ServiceError> {
    load_index(&fs::read(path)?)
}
