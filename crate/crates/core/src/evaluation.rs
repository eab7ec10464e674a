//! Silhouette scores per hierarchy level, and early stopping.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::LabelPath;

pub const DEFAULT_PATIENCE: usize = 20;

/// Cosine distance matrix between all rows. Rows need not be unit norm; a
/// zero row is at distance 1 from everything else.
pub fn cosine_distance_matrix(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let gram = x.dot(&x.t());
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else if norms[i] == 0.0 || norms[j] == 0.0 {
            1.0
        } else {
            (1.0 - gram[[i, j]] / (norms[i] * norms[j])).clamp(0.0, 2.0)
        }
    })
}

/// Mean silhouette coefficient given a distance matrix and dense cluster ids.
///
/// Samples alone in their cluster contribute 0.
pub fn silhouette_from_distances(dist: ArrayView2<'_, f64>, clusters: &[usize]) -> Result<f64> {
    let n = clusters.len();
    if dist.dim() != (n, n) {
        return Err(Error::Shape(format!(
            "{:?} distances for {n} samples",
            dist.dim()
        )));
    }
    if n < 2 {
        return Err(Error::UndefinedSilhouette(format!("{n} samples")));
    }
    let k = clusters.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &c in clusters {
        sizes[c] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::UndefinedSilhouette(
            "fewer than 2 distinct labels".into(),
        ));
    }
    let mut sums = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..n {
        let own = clusters[i];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[clusters[j]] += dist[[i, j]];
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

fn dense_ids<T: Ord>(labels: &[T]) -> Vec<usize> {
    let mut ids = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect()
}

/// Mean silhouette of `x` under cosine distance for the given cluster labels.
pub fn silhouette<T: Ord>(x: ArrayView2<'_, f64>, labels: &[T]) -> Result<f64> {
    if x.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows, {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    let dist = cosine_distance_matrix(x);
    silhouette_from_distances(dist.view(), &dense_ids(labels))
}

/// Silhouette at every hierarchy level, root-most level first (for a
/// two-level taxonomy: `[coarse, fine]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteReport {
    /// `None` when the level has fewer than two distinct classes.
    pub sil_per_level: Vec<Option<f64>>,
    /// Mean of the available levels.
    #[serde(rename = "avSil")]
    pub av_sil: Option<f64>,
}

impl SilhouetteReport {
    pub fn level(&self, level: usize) -> Option<f64> {
        self.sil_per_level
            .get(level.checked_sub(1)?)
            .copied()
            .flatten()
    }

    pub fn coarse(&self) -> Option<f64> {
        self.level(1)
    }

    pub fn fine(&self) -> Option<f64> {
        self.sil_per_level.last().copied().flatten()
    }
}

/// One silhouette per level `1..=depth`, clustering by label prefix.
/// Labels truncated above a level are left out of that level.
pub fn multilevel_report(
    x: ArrayView2<'_, f64>,
    labels: &[LabelPath],
    depth: usize,
) -> Result<SilhouetteReport> {
    if x.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows, {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    let dist = cosine_distance_matrix(x);
    let mut per_level = Vec::with_capacity(depth);
    for level in 1..=depth {
        let rows: Vec<usize> = (0..labels.len())
            .filter(|&k| labels[k].len() >= level)
            .collect();
        let prefixes: Vec<&[String]> = rows
            .iter()
            .map(|&k| labels[k].prefix(level).unwrap())
            .collect();
        let ids = dense_ids(&prefixes);
        let distinct = ids.iter().max().map_or(0, |m| m + 1);
        if distinct < 2 {
            per_level.push(None);
            continue;
        }
        let sub = if rows.len() == labels.len() {
            dist.clone()
        } else {
            dist.select(Axis(0), &rows).select(Axis(1), &rows)
        };
        per_level.push(Some(silhouette_from_distances(sub.view(), &ids)?));
    }
    let available: Vec<f64> = per_level.iter().flatten().copied().collect();
    let av_sil =
        (!available.is_empty()).then(|| available.iter().sum::<f64>() / available.len() as f64);
    Ok(SilhouetteReport {
        sil_per_level: per_level,
        av_sil,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// New best score; the current model should be kept.
    Improved,
    Stale,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strict improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    best: Option<f64>,
    best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            best_epoch: None,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn stale_epochs(&self) -> usize {
        self.stale
    }

    /// A non-finite score never counts as an improvement.
    pub fn update(&mut self, epoch: usize, score: f64) -> StopDecision {
        if score.is_finite() && self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_epoch = Some(epoch);
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Stale
        }
    }
}
