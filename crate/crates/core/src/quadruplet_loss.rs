//! Quadruplet loss baseline with fixed fine and coarse margins.
//!
//! Each quadruplet holds an anchor, a positive with the same full label, a
//! fine negative (same coarse class, other fine class) and a coarse negative
//! (other coarse class). With cosine distance `d`:
//!
//! ```text
//! loss = mean over quadruplets of
//!        max(0, d(a,p) - d(a,n_fine) + m_fine) + max(0, d(a,p) - d(a,n_coarse) + m_coarse)
//! ```

use ndarray::{Array2, ArrayView2};
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::LabelPath;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Quadruplet {
    pub anchor: usize,
    pub positive: usize,
    pub neg_fine: usize,
    pub neg_coarse: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub fine: f64,
    pub coarse: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Margins {
            fine: 0.25,
            coarse: 0.5,
        }
    }
}

impl Margins {
    pub fn new(fine: f64, coarse: f64) -> Result<Self> {
        if !(fine >= 0.0 && coarse > fine && coarse.is_finite()) {
            return Err(Error::Config(format!(
                "margins need coarse > fine >= 0, got fine={fine} coarse={coarse}"
            )));
        }
        Ok(Margins { fine, coarse })
    }
}

/// One quadruplet per anchor that has a partner for every role.
///
/// Labels are read as two levels: the first segment is the coarse class and
/// the whole path is the fine class. Labels shorter than the deepest one are
/// ignored.
pub fn mine_quadruplets(labels: &[&LabelPath], seed: u64) -> Vec<Quadruplet> {
    let depth = labels.iter().map(|l| l.len()).max().unwrap_or(0);
    let full = |k: usize| labels[k].len() == depth;
    let mut rng = rng::seeded(seed);
    let mut out = Vec::new();
    let mut positives = Vec::new();
    let mut fine_negs = Vec::new();
    let mut coarse_negs = Vec::new();
    for a in (0..labels.len()).filter(|&a| full(a)) {
        positives.clear();
        fine_negs.clear();
        coarse_negs.clear();
        for k in (0..labels.len()).filter(|&k| k != a && full(k)) {
            if labels[k] == labels[a] {
                positives.push(k);
            } else if labels[k].coarse() == labels[a].coarse() {
                fine_negs.push(k);
            } else {
                coarse_negs.push(k);
            }
        }
        if let (Some(&p), Some(&nf), Some(&nc)) = (
            positives.choose(&mut rng),
            fine_negs.choose(&mut rng),
            coarse_negs.choose(&mut rng),
        ) {
            out.push(Quadruplet {
                anchor: a,
                positive: p,
                neg_fine: nf,
                neg_coarse: nc,
            });
        }
    }
    out
}

fn cos_dist(e: ArrayView2<'_, f64>, a: usize, b: usize) -> f64 {
    1.0 - e.row(a).dot(&e.row(b))
}

/// Hinge arguments `(fine, coarse)` for one quadruplet.
pub fn hinge_terms(e: ArrayView2<'_, f64>, q: &Quadruplet, m: Margins) -> (f64, f64) {
    let ap = cos_dist(e, q.anchor, q.positive);
    (
        ap - cos_dist(e, q.anchor, q.neg_fine) + m.fine,
        ap - cos_dist(e, q.anchor, q.neg_coarse) + m.coarse,
    )
}

fn check(e: ArrayView2<'_, f64>, quads: &[Quadruplet]) -> Result<()> {
    if quads.is_empty() {
        return Err(Error::NoQuadruplets);
    }
    let n = e.nrows();
    if quads
        .iter()
        .any(|q| q.anchor.max(q.positive).max(q.neg_fine).max(q.neg_coarse) >= n)
    {
        return Err(Error::Shape(format!(
            "quadruplet index outside a batch of {n}"
        )));
    }
    Ok(())
}

pub fn quad_forward(e: ArrayView2<'_, f64>, quads: &[Quadruplet], m: Margins) -> Result<f64> {
    check(e, quads)?;
    let total: f64 = quads
        .iter()
        .map(|q| {
            let (f, c) = hinge_terms(e, q, m);
            f.max(0.0) + c.max(0.0)
        })
        .sum();
    Ok(total / quads.len() as f64)
}

/// Subgradient of [`quad_forward`]; inactive hinges (argument <= 0) add nothing.
pub fn quad_backward(
    e: ArrayView2<'_, f64>,
    quads: &[Quadruplet],
    m: Margins,
) -> Result<Array2<f64>> {
    check(e, quads)?;
    let mut grad = Array2::zeros(e.raw_dim());
    let w = 1.0 / quads.len() as f64;
    for q in quads {
        let (f, c) = hinge_terms(e, q, m);
        for (arg, neg) in [(f, q.neg_fine), (c, q.neg_coarse)] {
            if arg <= 0.0 {
                continue;
            }
            // d(a,p) - d(a,n) = <a,n> - <a,p>
            grad.row_mut(q.anchor).scaled_add(w, &e.row(neg));
            grad.row_mut(q.anchor).scaled_add(-w, &e.row(q.positive));
            grad.row_mut(q.positive).scaled_add(-w, &e.row(q.anchor));
            grad.row_mut(neg).scaled_add(w, &e.row(q.anchor));
        }
    }
    Ok(grad)
}
