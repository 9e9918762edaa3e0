//! Compact image retrieval from keypoint descriptors.
//!
//! Each image's `T x N` descriptor matrix is reduced to a few PCA and sparse
//! NMF factor loadings, with the number of columns chosen per image by an
//! information criterion. Loadings are quantized for transmission, compared
//! by principal angles or column correlation, and the two rankings are fused.

pub mod codec;
pub mod descriptors;
pub mod error;
pub mod eval;
pub mod factorization;
pub mod fusion;
pub mod matcher;
pub mod model_order;
pub mod service;

pub use codec::{decode, dequantize, encode, quantize, QuantizedLoadings};
pub use descriptors::{generate_corpus, load_descriptors, save_descriptors, DescriptorFormat, DescriptorMatrix, SynthCorpusSpec};
pub use error::{CodecError, DescriptorError, EvalError, FactorizationError, FusionError, MatchError, ServiceError};
pub use factorization::{nmf_loadings, pca_loadings, FactorLoadings, LoadingKind, NmfConfig};
pub use fusion::{fuse, FusionParams};
pub use matcher::{rank_database, retrieve_combined, subspace_angle, correlation_score, Metric, ObjectIndex, RankedList};
pub use model_order::{estimate_order, information_content, ModelOrderProfile};
