//! Table representation learning with a dual-axis (row/column) Transformer
//! pretrained by corrupt-cell detection.
//!
//! The crate covers the whole pipeline: corpus loading and truncation, a
//! frozen hashed n-gram cell embedder, the encoder with manual
//! backpropagation, corruption processes, pretraining, fine-tuning heads,
//! ranking and classification metrics, and embedding retrieval/clustering.

pub mod corpus;
pub mod corruption;
pub mod embedder;
pub mod encoder;
pub mod error;
pub mod index;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod scalar;
pub mod synth;
pub mod tasks;
pub mod training;
mod util;

pub use corpus::{build_cell_vocabulary, load_corpus, truncate_table, CellVocab, Corpus, Table, TruncationLimits};
pub use corruption::{CorruptionConfig, CorruptionRecord, CorruptionTag, Strategy, SwapConstraint};
pub use embedder::{Embedder, EmbedderConfig, PositionalEmbeddings};
pub use encoder::{augment_with_cls, encode, CellGrid, EmbeddingKind, EncoderConfig, TableEncoding};
pub use error::{Error, Result};
pub use index::{build_index, kmeans, EmbeddingIndex, EmbeddingKey, KMeansConfig, KMeansResult, KindSelector, Metric};
pub use metrics::{MetricReport, Prf, RankedPrediction};
pub use model::{Model, ModelConfig};
pub use params::{ModelParams, ParamSet};
pub use scalar::Scalar;
pub use tasks::{detect_corruption, evaluate_detection, finetune, FinetuneSpec, TaskKind, TaskModel};
pub use util::derived_rng;
