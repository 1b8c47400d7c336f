//! Saliency-alignment and adversarial-robustness analysis for small ReLU
//! networks.
//!
//! The crate trains feedforward ReLU classifiers with gradient-norm
//! (double-backpropagation) regularization, estimates their pointwise
//! adversarial robustness with three minimal-perturbation attacks, computes
//! alignment metrics between inputs and saliency maps together with the
//! decomposition-based upper bounds relating the two, and aggregates
//! everything into per-sample and per-model reports.

pub mod attacks;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod network;
pub mod records;
pub mod stats;
pub mod tensor;
pub mod training;

#[cfg(test)]
pub(crate) mod testkit;

pub use attacks::{AttackConfig, AttackKind, AttackResult};
pub use autodiff::{finite_diff_check, Bindings, Graph, NodeId};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use data::{DataSplit, Dataset, Normalization};
pub use error::{Error, Result};
pub use metrics::AlignmentReport;
pub use network::{LayerSpec, Mode, Network};
pub use records::{SampleRecord, SweepSummary};
pub use tensor::Tensor;
pub use training::{PenaltyKind, TrainConfig, TrainHistory};
