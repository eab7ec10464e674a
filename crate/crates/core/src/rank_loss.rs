//! Rank-based loss over all pairs of a batch.
//!
//! Every pair `(i, j)` of the batch has a rank taken from the label
//! taxonomy. The included pairs' cosine distances are sorted ascending and
//! the sorted vector is cut into one contiguous span per present rank, in
//! ascending rank order, sized by how many pairs carry that rank. A pair is
//! correct when its distance can sit inside its own rank's span; otherwise it
//! is pulled toward its rank's target, the distance at the middle of the span:
//!
//! ```text
//! loss = 1/P' * sum over wrong pairs of (d_p - t_p)^2
//! ```
//!
//! where `P'` counts every included pair. Spans, targets and correctness are
//! recomputed per batch and treated as constants by the gradient.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Tolerance on the unit-norm precondition for embeddings.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDistance {
    pub i: usize,
    pub j: usize,
    pub dist: f64,
}

/// Cosine distance `1 - <e_i, e_j>` for every `i < j`, clamped to `[0, 2]`.
///
/// Pairs come out in row-major order: `(0,1), (0,2), ..., (1,2), ...`.
pub fn pairwise_cosine_distances(embeddings: ArrayView2<'_, f64>) -> Result<Vec<PairDistance>> {
    let n = embeddings.nrows();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    for (row, e) in embeddings.rows().into_iter().enumerate() {
        let norm = e.dot(&e).sqrt();
        if norm.is_nan() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotUnitNorm { row, norm });
        }
    }
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let ei = embeddings.row(i);
        for j in i + 1..n {
            let dist = (1.0 - ei.dot(&embeddings.row(j))).clamp(0.0, 2.0);
            out.push(PairDistance { i, j, dist });
        }
    }
    Ok(out)
}

/// Block of sorted positions allotted to one rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSpan {
    pub rank: usize,
    pub start: usize,
    pub count: usize,
    pub target: f64,
}

impl RankSpan {
    /// Last position of the span (inclusive).
    pub fn end(&self) -> usize {
        self.start + self.count - 1
    }

    pub fn contains(&self, pos: usize) -> bool {
        (self.start..=self.end()).contains(&pos)
    }
}

/// Spans of all ranks present in a batch, ascending by rank.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankSpans(Vec<RankSpan>);

impl RankSpans {
    pub fn get(&self, rank: usize) -> Option<&RankSpan> {
        self.0
            .binary_search_by_key(&rank, |s| s.rank)
            .ok()
            .map(|k| &self.0[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = &RankSpan> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEntry {
    pub i: usize,
    pub j: usize,
    pub dist: f64,
    pub rank: Option<usize>,
    /// Position in the sorted distance vector (included pairs only).
    pub position: Option<usize>,
    pub target: Option<f64>,
    pub correct: bool,
    pub included: bool,
}

/// Per-batch bookkeeping of the rank-based loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    pub pairs: Vec<PairEntry>,
    pub spans: RankSpans,
    pub included: usize,
}

impl PairTable {
    pub fn wrong(&self) -> impl Iterator<Item = &PairEntry> {
        self.pairs.iter().filter(|p| p.included && !p.correct)
    }

    /// Loss with spans, targets and flags frozen, evaluated at `embeddings`
    /// using the unclamped distance `1 - <e_i, e_j>`. Matches the function
    /// [`rbl_backward`] differentiates.
    pub fn frozen_loss(&self, embeddings: ArrayView2<'_, f64>) -> f64 {
        let sum: f64 = self
            .wrong()
            .map(|p| {
                let d = 1.0 - embeddings.row(p.i).dot(&embeddings.row(p.j));
                let diff = d - p.target.unwrap();
                diff * diff
            })
            .sum();
        sum / self.included as f64
    }
}

/// Sorts included distances, builds rank spans and flags every pair.
///
/// `ranks[p]` is the rank of `distances[p]`; `None` excludes the pair.
/// Ties in distance are broken by pair index for the attained position, but a
/// tied pair counts as correct if any position holding its distance value
/// lies in its span.
pub fn assign_targets(distances: &[PairDistance], ranks: &[Option<usize>]) -> Result<PairTable> {
    if distances.len() != ranks.len() {
        return Err(Error::Shape(format!(
            "{} distances but {} ranks",
            distances.len(),
            ranks.len()
        )));
    }
    let mut order: Vec<usize> = (0..distances.len())
        .filter(|&p| ranks[p].is_some())
        .collect();
    if order.is_empty() {
        return Err(Error::NoIncludedPairs);
    }
    // stable sort keeps pair-index order among exact ties
    order.sort_by(|&a, &b| distances[a].dist.total_cmp(&distances[b].dist));
    let sorted: Vec<f64> = order.iter().map(|&p| distances[p].dist).collect();

    let mut counts = std::collections::BTreeMap::<usize, usize>::new();
    for r in ranks.iter().flatten() {
        *counts.entry(*r).or_default() += 1;
    }
    let mut spans = Vec::with_capacity(counts.len());
    let mut start = 0;
    for (rank, count) in counts {
        spans.push(RankSpan {
            rank,
            start,
            count,
            target: sorted[start + count / 2],
        });
        start += count;
    }
    let spans = RankSpans(spans);

    let mut position = vec![None; distances.len()];
    for (pos, &p) in order.iter().enumerate() {
        position[p] = Some(pos);
    }

    let pairs = distances
        .iter()
        .zip(ranks)
        .zip(position)
        .map(|((pd, &rank), position)| {
            let (target, correct) = match rank {
                Some(r) => {
                    let span = spans.get(r).expect("span exists for every present rank");
                    let lo = sorted.partition_point(|&x| x < pd.dist);
                    let hi = sorted.partition_point(|&x| x <= pd.dist) - 1;
                    (Some(span.target), lo <= span.end() && hi >= span.start)
                }
                None => (None, false),
            };
            PairEntry {
                i: pd.i,
                j: pd.j,
                dist: pd.dist,
                rank,
                position,
                target,
                correct,
                included: rank.is_some(),
            }
        })
        .collect();

    Ok(PairTable {
        pairs,
        spans,
        included: order.len(),
    })
}

/// Loss value and pair table for one batch of unit-norm embeddings.
///
/// `ranks` follows the pair order of [`pairwise_cosine_distances`].
pub fn rbl_forward(
    embeddings: ArrayView2<'_, f64>,
    ranks: &[Option<usize>],
) -> Result<(f64, PairTable)> {
    let distances = pairwise_cosine_distances(embeddings)?;
    let table = assign_targets(&distances, ranks)?;
    let sum: f64 = table
        .wrong()
        .map(|p| {
            let diff = p.dist - p.target.unwrap();
            diff * diff
        })
        .sum();
    Ok((sum / table.included as f64, table))
}

/// Gradient of the loss with respect to each embedding row.
///
/// For a wrong pair `(i, j)`, `d = 1 - <e_i, e_j>` gives
/// `dL/de_i = -(2/P') (d - t) e_j` and symmetrically for `e_j`.
pub fn rbl_backward(table: &PairTable, embeddings: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = embeddings.nrows();
    if let Some(p) = table.pairs.iter().find(|p| p.j >= n) {
        return Err(Error::Shape(format!(
            "pair ({}, {}) outside a batch of {n}",
            p.i, p.j
        )));
    }
    let mut grad = Array2::zeros(embeddings.raw_dim());
    let scale = 2.0 / table.included as f64;
    for p in table.wrong() {
        let coef = scale * (p.dist - p.target.unwrap());
        grad.row_mut(p.i).scaled_add(-coef, &embeddings.row(p.j));
        grad.row_mut(p.j).scaled_add(-coef, &embeddings.row(p.i));
    }
    Ok(grad)
}
