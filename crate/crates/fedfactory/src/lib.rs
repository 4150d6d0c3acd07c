//! FederatedFactory: a desk-scale simulator for one-shot federated learning
//! under pathological label skew.
//!
//! Clients train local generative priors ("factories", here diagonal-covariance
//! Gaussian mixtures) on their class-conditional data and transmit only the
//! fitted parameters. A server (Protocol A) or peer mesh (Protocol B) then
//! synthesizes a class-balanced dataset from the received factories, trains a
//! classifier on it, and can later *exactly* unlearn any client, class, or
//! (class, client) cell by deleting the corresponding factory and
//! resynthesizing. The [`theory`] module verifies the framework's risk bounds
//! (mixture KL decomposition, Pinsker's inequality, and the 2Mε̄ excess-risk
//! bound) numerically on enumerable discrete instances.
//!
//! Module map:
//! - [`core`]: shared ids, provenance tags, deterministic RNG streams, and the
//!   bounded (clipped) cross-entropy loss.
//! - [`data`]: Gaussian-blob ground truth with exact densities, CSV ingestion,
//!   and client partitioning (uniform / Dirichlet / single-class silo).
//! - [`factory`]: GMM factories — EM training, sampling, uplink payload codec.
//! - [`genmatrix`]: the sparse class×client Generative Matrix, synthesis
//!   quotas, and the three exact-unlearning modes.
//! - [`learner`]: bounded-loss multinomial linear classifier trained by
//!   mini-batch SGD with cosine annealing.
//! - [`baselines`]: iterative FedAvg / FedProx for collapse comparisons.
//! - [`protocols`]: end-to-end Protocol A / Protocol B orchestration with
//!   communication and compute accounting.
//! - [`theory`]: exact KL/TV computations and brute-force bound verification.
//! - [`metrics`]: accuracy, macro one-vs-rest AUROC, fidelity/diversity ECDFs.

pub mod baselines;
pub mod core;
pub mod data;
pub mod factory;
pub mod genmatrix;
pub mod learner;
pub mod metrics;
pub mod protocols;
pub mod theory;

pub use crate::baselines::FedConfig;
pub use crate::core::{BoundedLoss, ClassId, ClientId, Error, Provenance, Result, Rng};
pub use crate::data::{BlobDensity, BlobSpec, LabeledDataset, Partition, PartitionSpec};
pub use crate::factory::{FactoryParams, GmmConfig};
pub use crate::genmatrix::{GenerativeMatrix, QuotaPlan, UnlearnRequest};
pub use crate::learner::{ClassifierModel, TrainConfig};
pub use crate::protocols::{CostLedger, ExperimentResult, PoEConfig};
