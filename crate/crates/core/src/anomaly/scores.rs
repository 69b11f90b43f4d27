//! Reconstruction-error scores: RMSE, Mahalanobis distance of residual
//! sub-windows, per-slice aggregation and min-max normalization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One point of an errors set: the mean scores of a labelled slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPoint {
    pub window_id: usize,
    pub rmse: f64,
    pub mahalanobis: f64,
    pub true_label: Option<u8>,
}

impl ErrorPoint {
    pub fn coords(&self) -> [f64; 2] {
        [self.rmse, self.mahalanobis]
    }
}

fn check_pairs(originals: &[Vec<f64>], recon: &[Vec<f64>]) -> Result<()> {
    if originals.len() != recon.len() {
        return Err(Error::Shape(format!(
            "{} originals vs {} reconstructions",
            originals.len(),
            recon.len()
        )));
    }
    for (i, (x, y)) in originals.iter().zip(recon).enumerate() {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::Shape(format!(
                "window {i}: {} samples vs {} reconstructed",
                x.len(),
                y.len()
            )));
        }
    }
    Ok(())
}

/// Root mean squared residual of every window.
pub fn rmse_scores(originals: &[Vec<f64>], recon: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_pairs(originals, recon)?;
    Ok(originals
        .iter()
        .zip(recon)
        .map(|(x, y)| {
            let ss: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (ss / x.len() as f64).sqrt()
        })
        .collect())
}

/// `original − reconstruction` for every window.
pub fn residuals(originals: &[Vec<f64>], recon: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_pairs(originals, recon)?;
    Ok(originals
        .iter()
        .zip(recon)
        .map(|(x, y)| x.iter().zip(y).map(|(a, b)| a - b).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MahalanobisConfig {
    /// Sub-window length ℓ.
    pub sub_len: usize,
    pub stride: usize,
    /// Diagonal regularizer as a multiple of `trace(Σ) / ℓ`.
    pub eps_scale: f64,
}

impl Default for MahalanobisConfig {
    fn default() -> Self {
        Self {
            sub_len: 8,
            stride: 4,
            eps_scale: 1e-6,
        }
    }
}

/// Smallest diagonal regularizer, used when the covariance vanishes.
const EPS_FLOOR: f64 = 1e-12;

impl MahalanobisConfig {
    /// Length-ℓ sub-windows of `residual` at the configured stride.
    pub fn sub_windows<'a>(&self, residual: &'a [f64]) -> impl Iterator<Item = &'a [f64]> + 'a {
        let (l, s) = (self.sub_len, self.stride.max(1));
        let n = if residual.len() >= l { (residual.len() - l) / s + 1 } else { 0 };
        (0..n).map(move |i| &residual[i * s..i * s + l])
    }
}

/// Gaussian model of residual sub-windows.
#[derive(Debug, Clone)]
pub struct MahalanobisModel {
    pub mean: Vec<f64>,
    /// Row-major ℓ×ℓ sample covariance, without the regularizer.
    pub cov: Vec<f64>,
    pub eps: f64,
    chol: Cholesky<f64, Dyn>,
}

impl MahalanobisModel {
    /// Model with the given mean and covariance; `Σ + εI` must be
    /// positive definite.
    pub fn new(mean: Vec<f64>, cov: Vec<f64>, eps: f64) -> Result<Self> {
        let l = mean.len();
        if l == 0 || cov.len() != l * l {
            return Err(Error::Shape(format!("mean of length {l} with {} covariance entries", cov.len())));
        }
        let m = DMatrix::from_row_slice(l, l, &cov) + DMatrix::identity(l, l) * eps;
        let chol = Cholesky::new(m).ok_or_else(|| Error::Degenerate("regularized covariance is not positive definite".into()))?;
        Ok(Self { mean, cov, eps, chol })
    }

    pub fn sub_len(&self) -> usize {
        self.mean.len()
    }

    /// `sqrt((e − μ)ᵀ (Σ + εI)⁻¹ (e − μ))`.
    pub fn distance(&self, e: &[f64]) -> Result<f64> {
        if e.len() != self.mean.len() {
            return Err(Error::Shape(format!("sub-window of {} for ℓ = {}", e.len(), self.mean.len())));
        }
        let v = DVector::from_iterator(e.len(), e.iter().zip(&self.mean).map(|(a, m)| a - m));
        let q = v.dot(&self.chol.solve(&v));
        Ok(q.max(0.0).sqrt())
    }
}

/// Fits mean and covariance to residual sub-windows of equal length ℓ.
/// `eps` defaults to `1e-6 · trace(Σ) / ℓ`.
pub fn fit_mahalanobis(sub_windows: &[&[f64]], eps: Option<f64>) -> Result<MahalanobisModel> {
    let reg = match eps {
        Some(e) => Regularizer::Absolute(e),
        None => Regularizer::Relative(MahalanobisConfig::default().eps_scale),
    };
    fit_scaled(sub_windows, reg)
}

fn fit_scaled(sub_windows: &[&[f64]], reg: Regularizer) -> Result<MahalanobisModel> {
    let l = sub_windows.first().map_or(0, |w| w.len());
    if l == 0 {
        return Err(Error::Empty("residual sub-windows".into()));
    }
    let n = sub_windows.len();
    if n < l + 1 {
        return Err(Error::InvalidArgument(format!("{n} sub-windows are too few for ℓ = {l}")));
    }
    if sub_windows.iter().any(|w| w.len() != l) {
        return Err(Error::Shape("sub-windows of unequal length".into()));
    }
    let mut mean = vec![0.0; l];
    for w in sub_windows {
        for (m, v) in mean.iter_mut().zip(*w) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; l * l];
    let mut c = vec![0.0; l];
    for w in sub_windows {
        for (ci, (v, m)) in c.iter_mut().zip(w.iter().zip(&mean)) {
            *ci = v - m;
        }
        for i in 0..l {
            for j in 0..l {
                cov[i * l + j] += c[i] * c[j];
            }
        }
    }
    cov.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    let eps = match reg {
        Regularizer::Absolute(e) => e,
        Regularizer::Relative(scale) => {
            let trace: f64 = (0..l).map(|i| cov[i * l + i]).sum();
            (scale * trace / l as f64).max(EPS_FLOOR)
        }
    };
    MahalanobisModel::new(mean, cov, eps)
}

/// Fits the model on all sub-windows of the training residuals.
pub fn fit_mahalanobis_residuals(residuals: &[Vec<f64>], cfg: &MahalanobisConfig) -> Result<MahalanobisModel> {
    if cfg.sub_len == 0 || cfg.stride == 0 {
        return Err(Error::InvalidArgument("sub-window length and stride must be positive".into()));
    }
    let subs: Vec<&[f64]> = residuals.iter().flat_map(|r| cfg.sub_windows(r)).collect();
    fit_scaled(&subs, Regularizer::Relative(cfg.eps_scale))
}

enum Regularizer {
    Absolute(f64),
    /// Multiple of `trace(Σ) / ℓ`.
    Relative(f64),
}

/// Mean sub-window distance of every window's residual.
pub fn mahalanobis_scores(model: &MahalanobisModel, residuals: &[Vec<f64>], cfg: &MahalanobisConfig) -> Result<Vec<f64>> {
    if cfg.sub_len != model.sub_len() {
        return Err(Error::Shape(format!(
            "config sub-window {} for a model fitted with ℓ = {}",
            cfg.sub_len,
            model.sub_len()
        )));
    }
    residuals
        .iter()
        .map(|r| {
            let mut total = 0.0;
            let mut n = 0usize;
            for w in cfg.sub_windows(r) {
                total += model.distance(w)?;
                n += 1;
            }
            if n == 0 {
                return Err(Error::Shape(format!("window of {} samples is shorter than ℓ = {}", r.len(), cfg.sub_len)));
            }
            Ok(total / n as f64)
        })
        .collect()
}

/// Mean of the scores of each slice; `slice_of[i]` is the slice of score
/// `i` and slices are numbered `0..num_slices`.
pub fn aggregate_by_slice(scores: &[f64], slice_of: &[usize], num_slices: usize) -> Result<Vec<f64>> {
    if scores.len() != slice_of.len() {
        return Err(Error::Shape(format!("{} scores for {} slice ids", scores.len(), slice_of.len())));
    }
    let mut sum = vec![0.0; num_slices];
    let mut count = vec![0usize; num_slices];
    for (&v, &s) in scores.iter().zip(slice_of) {
        if s >= num_slices {
            return Err(Error::InvalidArgument(format!("slice id {s} ≥ {num_slices}")));
        }
        sum[s] += v;
        count[s] += 1;
    }
    if let Some(s) = count.iter().position(|&c| c == 0) {
        return Err(Error::Empty(format!("slice {s} has no scores")));
    }
    Ok(sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect())
}

/// Per-coordinate affine min-max map fitted on one errors set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxNormalizer {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl MinMaxNormalizer {
    pub fn fit(points: &[ErrorPoint]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("errors set".into()));
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for (k, v) in p.coords().into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Degenerate(format!("non-finite score in window {}", p.window_id)));
                }
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Ok(Self { min, max })
    }

    /// Applies the fitted map without clamping. A constant coordinate maps
    /// to its offset from the fitted value.
    pub fn apply(&self, points: &[ErrorPoint]) -> Vec<ErrorPoint> {
        let f = |v: f64, k: usize| {
            let range = self.max[k] - self.min[k];
            if range > 0.0 {
                (v - self.min[k]) / range
            } else {
                v - self.min[k]
            }
        };
        points
            .iter()
            .map(|p| ErrorPoint {
                rmse: f(p.rmse, 0),
                mahalanobis: f(p.mahalanobis, 1),
                ..*p
            })
            .collect()
    }
}

/// Builds the errors set of `num_slices` slices from per-window scores.
pub fn error_points(
    rmse: &[f64],
    mahalanobis: &[f64],
    slice_of: &[usize],
    labels: Option<&[u8]>,
    num_slices: usize,
) -> Result<Vec<ErrorPoint>> {
    let r = aggregate_by_slice(rmse, slice_of, num_slices)?;
    let m = aggregate_by_slice(mahalanobis, slice_of, num_slices)?;
    if labels.is_some_and(|l| l.len() != num_slices) {
        return Err(Error::Shape("one label per slice expected".into()));
    }
    Ok((0..num_slices)
        .map(|i| ErrorPoint {
            window_id: i,
            rmse: r[i],
            mahalanobis: m[i],
            true_label: labels.map(|l| l[i]),
        })
        .collect())
}

/// Aggregates per slice and normalizes. With `normalizer = None` the map
/// is fitted on this set (the fitting set) and returned.
pub fn aggregate_normalize(
    rmse: &[f64],
    mahalanobis: &[f64],
    slice_of: &[usize],
    labels: Option<&[u8]>,
    num_slices: usize,
    normalizer: Option<&MinMaxNormalizer>,
) -> Result<(Vec<ErrorPoint>, MinMaxNormalizer)> {
    let raw = error_points(rmse, mahalanobis, slice_of, labels, num_slices)?;
    let norm = match normalizer {
        Some(n) => *n,
        None => MinMaxNormalizer::fit(&raw)?,
    };
    Ok((norm.apply(&raw), norm))
}
