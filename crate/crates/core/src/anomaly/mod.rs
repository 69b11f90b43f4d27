//! Unsupervised signal-quality detection from autoencoder reconstruction
//! errors: RMSE and Mahalanobis scores, errors sets, k-means and dbscan
//! clustering, an SVM for labelling unseen windows, and binary metrics.

mod cluster;
mod metrics;
mod pipeline;
mod scores;
mod svm;

pub use cluster::{
    canonicalize, dbscan, dbscan_eps, dbscan_with_eps, kmeans, kmeans2, label_clusters, ClusterLabeling, Clustering,
    DbscanResult, KMeansResult, DBSCAN_MIN_PTS, KMEANS_MAX_ITER, LABEL_BAD, LABEL_GOOD, NOISE,
};
pub use metrics::{evaluate_binary, BinaryScores, Metrics};
pub use pipeline::{
    build_error_sets, cluster_labels, label_test, refine_training_set, run_pipeline, slice_losses, train_two_stage,
    Approach, Clusterer, ErrorSets, PipelineConfig, PipelineOutput, Refinement, TwoStageConfig, TwoStageOutcome,
    WindowSet,
};
pub use scores::{
    aggregate_by_slice, aggregate_normalize, error_points, fit_mahalanobis, fit_mahalanobis_residuals,
    mahalanobis_scores, residuals, rmse_scores, ErrorPoint, MahalanobisConfig, MahalanobisModel, MinMaxNormalizer,
};
pub use svm::{svm_fit, svm_fit_predict, svm_objective, LinearSvm, SvmConfig};
