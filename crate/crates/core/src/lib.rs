//! Discrete speech-unit toolkit: feature containers, k-means codebooks,
//! single/ensemble/product-quantized tokenization, conversion metrics and a
//! synthetic recognition-synthesis benchmark.

pub mod discretize;
pub mod error;
pub mod features;
pub mod kmeans;
pub mod metrics;
pub mod simbench;

pub use discretize::{
    load_tokens, save_tokens, train_scheme, train_scheme_with, DiscretizationScheme, Mode,
    SchemeConfig, TokenSequence,
};
pub use error::{Error, ErrorClass, Result};
pub use features::{
    load_feature_matrix, load_metric_table, save_feature_matrix, EmbeddingVector, FeatureMatrix,
    MetricTable,
};
pub use kmeans::{
    assign, kmeanspp_init, lloyd_train, train, Assignment, Codebook, TrainParams, TrainReport,
};
