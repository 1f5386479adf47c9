//! Priority-weighted deep hashing at desk scale.
//!
//! The crate covers the full pipeline: a label-derived similarity graph with
//! degree-based imbalance weights, the priority cross-entropy and priority
//! quantization losses with analytic gradients, a small feed-forward encoder
//! trained by momentum SGD, sign binarization, and a bit-packed Hamming
//! retrieval engine with MAP@K, precision within a Hamming radius, PR and
//! P@N metrics.
//!
//! ```
//! use phash::graph::build_graph;
//! use phash::dataset::{Item, LabeledDataset};
//!
//! let items = vec![
//!     Item::new("a", vec![0], vec![0.0, 1.0]),
//!     Item::new("b", vec![0], vec![0.1, 0.9]),
//!     Item::new("c", vec![1], vec![1.0, 0.0]),
//! ];
//! let dataset = LabeledDataset::new(items).unwrap();
//! let graph = build_graph(&dataset, false).unwrap();
//! assert!(graph.sim(0, 1));
//! assert!(!graph.sim(0, 2));
//! ```

pub mod ablation;
pub mod bytes;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod loss;
pub mod retrieval;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
