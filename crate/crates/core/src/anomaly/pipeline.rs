//! Unsupervised quality detection: two-stage autoencoder training,
//! errors sets, clustering and test labelling.

use serde::{Deserialize, Serialize};

use super::cluster::{dbscan, kmeans2, label_clusters, DBSCAN_MIN_PTS, LABEL_BAD};
use super::metrics::{evaluate_binary, Metrics};
use super::scores::{
    error_points, fit_mahalanobis_residuals, mahalanobis_scores, residuals, rmse_scores, ErrorPoint, MahalanobisConfig,
    MahalanobisModel, MinMaxNormalizer,
};
use super::svm::{svm_fit_predict, LinearSvm, SvmConfig};
use crate::error::{Error, Result};
use crate::models::{reconstruct_windows, train, Model, ModelConfig, TrainConfig, TrainHistory};

/// Model-sized windows grouped into labelled slices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub windows: Vec<Vec<f64>>,
    /// Slice of every window, numbered `0..num_slices`.
    pub slice_of: Vec<usize>,
    pub num_slices: usize,
    /// Binary label of every slice, when known.
    pub labels: Option<Vec<u8>>,
}

impl WindowSet {
    pub fn validate(&self) -> Result<()> {
        if self.windows.len() != self.slice_of.len() {
            return Err(Error::Shape(format!(
                "{} windows with {} slice ids",
                self.windows.len(),
                self.slice_of.len()
            )));
        }
        if self.slice_of.iter().any(|&s| s >= self.num_slices) {
            return Err(Error::InvalidArgument("slice id out of range".into()));
        }
        if self.labels.as_ref().is_some_and(|l| l.len() != self.num_slices) {
            return Err(Error::Shape("one label per slice expected".into()));
        }
        Ok(())
    }

    /// Keeps the listed slices, renumbered in the given order.
    pub fn select_slices(&self, keep: &[usize]) -> WindowSet {
        let mut new_id = vec![usize::MAX; self.num_slices];
        for (n, &s) in keep.iter().enumerate() {
            new_id[s] = n;
        }
        let mut out = WindowSet {
            num_slices: keep.len(),
            labels: self.labels.as_ref().map(|l| keep.iter().map(|&s| l[s]).collect()),
            ..Default::default()
        };
        for (w, &s) in self.windows.iter().zip(&self.slice_of) {
            if new_id[s] != usize::MAX {
                out.windows.push(w.clone());
                out.slice_of.push(new_id[s]);
            }
        }
        out
    }

    /// Fraction of slices labelled bad.
    pub fn anomaly_rate(&self) -> Option<f64> {
        let l = self.labels.as_ref()?;
        (!l.is_empty()).then(|| l.iter().filter(|&&v| v == LABEL_BAD).count() as f64 / l.len() as f64)
    }
}

/// Per-slice mean reconstruction MSE.
pub fn slice_losses(model: &Model, set: &WindowSet, batch_size: usize) -> Result<Vec<f64>> {
    set.validate()?;
    let rec = reconstruct_windows(model, &set.windows, batch_size)?;
    let mse: Vec<f64> = rmse_scores(&set.windows, &rec)?.iter().map(|r| r * r).collect();
    super::scores::aggregate_by_slice(&mse, &set.slice_of, set.num_slices)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub set: WindowSet,
    /// Original ids of the kept slices, in original order.
    pub kept: Vec<usize>,
    pub slice_loss: Vec<f64>,
}

/// Drops the worst-reconstructed `fraction` of slices, keeping
/// `ceil((1 − fraction) · N)`.
pub fn refine_training_set(model: &Model, set: &WindowSet, fraction: f64, batch_size: usize) -> Result<Refinement> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("discard fraction {fraction} outside [0, 1]")));
    }
    if set.num_slices == 0 {
        return Err(Error::Empty("training set".into()));
    }
    let slice_loss = slice_losses(model, set, batch_size)?;
    let n = set.num_slices;
    let keep_n = (((1.0 - fraction) * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| slice_loss[a].total_cmp(&slice_loss[b]).then(a.cmp(&b)));
    let mut kept = order[..keep_n.min(n)].to_vec();
    kept.sort_unstable();
    Ok(Refinement {
        set: set.select_slices(&kept),
        kept,
        slice_loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageConfig {
    pub first: TrainConfig,
    pub second: TrainConfig,
    pub discard_fraction: f64,
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        Self {
            first: TrainConfig {
                epochs: 75,
                ..Default::default()
            },
            second: TrainConfig {
                epochs: 200,
                ..Default::default()
            },
            discard_fraction: 0.2,
        }
    }
}

pub struct TwoStageOutcome {
    pub model: Model,
    pub refinement: Refinement,
    pub first: TrainHistory,
    pub second: TrainHistory,
}

/// Trains, discards the worst-reconstructed slices, then retrains a fresh
/// model with the same initialization seed on the rest.
pub fn train_two_stage(config: &ModelConfig, set: &WindowSet, cfg: &TwoStageConfig, init_seed: u64) -> Result<TwoStageOutcome> {
    let mut model = Model::new(config.clone(), init_seed)?;
    let first = train(&mut model, &set.windows, None, &cfg.first)?;
    let refinement = refine_training_set(&model, set, cfg.discard_fraction, cfg.first.batch_size)?;
    log::info!(
        "refinement kept {} of {} slices; anomaly rate {:?} -> {:?}",
        refinement.set.num_slices,
        set.num_slices,
        set.anomaly_rate(),
        refinement.set.anomaly_rate()
    );
    let mut model = Model::new(config.clone(), init_seed)?;
    let second = train(&mut model, &refinement.set.windows, None, &cfg.second)?;
    Ok(TwoStageOutcome {
        model,
        refinement,
        first,
        second,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Approach {
    /// Re-cluster the test errors set on its own.
    A,
    /// Train an SVM on the clustered validation set and predict the test set.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clusterer {
    Kmeans,
    Dbscan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub approach: Approach,
    pub clusterer: Clusterer,
    pub seed: u64,
    pub mahalanobis: MahalanobisConfig,
    pub min_pts: usize,
    pub svm: SvmConfig,
    pub batch_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            approach: Approach::A,
            clusterer: Clusterer::Kmeans,
            seed: 0,
            mahalanobis: MahalanobisConfig::default(),
            min_pts: DBSCAN_MIN_PTS,
            svm: SvmConfig::default(),
            batch_size: 64,
        }
    }
}

/// Unnormalized validation and test errors sets.
#[derive(Debug, Clone)]
pub struct ErrorSets {
    pub valid: Vec<ErrorPoint>,
    pub test: Vec<ErrorPoint>,
    pub mahalanobis: MahalanobisModel,
}

fn raw_errors(model: &Model, maha: &MahalanobisModel, set: &WindowSet, cfg: &MahalanobisConfig, bs: usize) -> Result<Vec<ErrorPoint>> {
    set.validate()?;
    let rec = reconstruct_windows(model, &set.windows, bs)?;
    let rmse = rmse_scores(&set.windows, &rec)?;
    let res = residuals(&set.windows, &rec)?;
    let m = mahalanobis_scores(maha, &res, cfg)?;
    error_points(&rmse, &m, &set.slice_of, set.labels.as_deref(), set.num_slices)
}

/// Fits the residual model on `train` and scores `valid` and `test`.
pub fn build_error_sets(
    model: &Model,
    train: &WindowSet,
    valid: &WindowSet,
    test: &WindowSet,
    cfg: &MahalanobisConfig,
    batch_size: usize,
) -> Result<ErrorSets> {
    train.validate()?;
    let rec = reconstruct_windows(model, &train.windows, batch_size)?;
    let maha = fit_mahalanobis_residuals(&residuals(&train.windows, &rec)?, cfg)?;
    Ok(ErrorSets {
        valid: raw_errors(model, &maha, valid, cfg, batch_size)?,
        test: raw_errors(model, &maha, test, cfg, batch_size)?,
        mahalanobis: maha,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    /// Normalized validation errors and their cluster labels.
    pub valid: Vec<ErrorPoint>,
    pub valid_labels: Vec<u8>,
    /// Test errors as they were labelled.
    pub test: Vec<ErrorPoint>,
    pub test_labels: Vec<u8>,
    pub valid_normalizer: MinMaxNormalizer,
    pub svm: Option<LinearSvm>,
    /// Test metrics when ground truth is known.
    pub metrics: Option<Metrics>,
}

/// Clusters normalized points and turns clusters into quality labels.
pub fn cluster_labels(points: &[ErrorPoint], clusterer: Clusterer, cfg: &PipelineConfig) -> Result<Vec<u8>> {
    let clustering = match clusterer {
        Clusterer::Kmeans => kmeans2(points, cfg.seed)?.clustering,
        Clusterer::Dbscan => dbscan(points, cfg.min_pts)?.clustering,
    };
    Ok(label_clusters(&clustering, points)?.labels)
}

/// Labels the test set from precomputed errors sets.
pub fn label_test(sets: &ErrorSets, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let norm = MinMaxNormalizer::fit(&sets.valid)?;
    let valid = norm.apply(&sets.valid);
    let valid_labels = cluster_labels(&valid, cfg.clusterer, cfg)?;
    let (test, test_labels, svm) = match cfg.approach {
        Approach::A => {
            let test = MinMaxNormalizer::fit(&sets.test)?.apply(&sets.test);
            let labels = cluster_labels(&test, cfg.clusterer, cfg)?;
            (test, labels, None)
        }
        Approach::B => {
            let test = norm.apply(&sets.test);
            let (svm, labels) = svm_fit_predict(&valid, &valid_labels, &test, &cfg.svm)?;
            (test, labels, Some(svm))
        }
    };
    let truth: Option<Vec<u8>> = test.iter().map(|p| p.true_label).collect();
    let metrics = truth.map(|t| evaluate_binary(&test_labels, &t)).transpose()?;
    Ok(PipelineOutput {
        valid,
        valid_labels,
        test,
        test_labels,
        valid_normalizer: norm,
        svm,
        metrics,
    })
}

/// Scores the three sets with a trained autoencoder and labels the test set.
pub fn run_pipeline(
    model: &Model,
    train: &WindowSet,
    valid: &WindowSet,
    test: &WindowSet,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    if !model.is_autoencoder() {
        return Err(Error::InvalidArgument("the pipeline needs an autoencoder".into()));
    }
    let sets = build_error_sets(model, train, valid, test, &cfg.mahalanobis, cfg.batch_size)?;
    label_test(&sets, cfg)
}
