//! Preference extraction: AUC, single-feature and network probes, reductions,
//! clustering and the autoencoder baseline.

pub mod auc;
pub mod autoencoder;
pub mod dataset;
pub mod kmeans;
pub mod linalg;
pub mod model;
pub mod nmf;
pub mod nn_probe;
pub mod pca;
pub mod single;

pub use auc::{auc, average_ranks, oriented_auc};
pub use autoencoder::{
    apple_count_readback, count_striped_cells, readback_states, train_autoencoder, Autoencoder,
    AutoencoderHyperparams, ReconstructionReport,
};
pub use dataset::{InputSource, LabeledDataset, SourceTag, Variant};
pub use kmeans::{cluster_majority, fit_kmeans, ClusterLabeler, KMeans};
pub use model::{Predictor, ProbeModel, ReductionKind, ReductionModel};
pub use nmf::{fit_nmf, fit_nmf_shifted, Nmf, NmfFit};
pub use nn_probe::{train_nn_probe, NnProbe, NnProbeHyperparams, Standardizer};
pub use pca::{fit_pca, Pca};
pub use single::{best_single_feature, SingleFeature};
