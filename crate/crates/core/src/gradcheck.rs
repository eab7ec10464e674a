//! Central finite-difference checks of every analytic gradient.
//!
//! Each suite draws seeded random problems and compares the analytic
//! gradient with `(f(θ + h) - f(θ - h)) / 2h` entry by entry. The rank-based
//! loss is differentiated with its spans, targets and flags frozen at the
//! unperturbed point; quadruplet problems are redrawn until every hinge is at
//! least [`KINK_MARGIN`] away from its kink.

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::hierarchy::{LabelPath, LabelTree, RankMap};
use crate::projection::{FeatureStats, ProjectionModel};
use crate::quadruplet_loss::{hinge_terms, mine_quadruplets, quad_backward, quad_forward, Margins};
use crate::rank_loss::{rbl_backward, rbl_forward};
use crate::rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const KINK_MARGIN: f64 = 1e-3;
pub const DEFAULT_TRIALS: usize = 20;

/// Deliberate corruption of an analytic gradient, used to check that the
/// suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    FlipSign,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|)` in the Euclidean norm; 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn numeric_gradient(
    point: &Array2<f64>,
    mut f: impl FnMut(ArrayView2<'_, f64>) -> f64,
) -> Array2<f64> {
    let mut work = point.clone();
    let mut grad = Array2::zeros(point.raw_dim());
    for idx in 0..point.len() {
        let (r, c) = (idx / point.ncols(), idx % point.ncols());
        let x0 = point[[r, c]];
        work[[r, c]] = x0 + STEP;
        let up = f(work.view());
        work[[r, c]] = x0 - STEP;
        let down = f(work.view());
        work[[r, c]] = x0;
        grad[[r, c]] = (up - down) / (2.0 * STEP);
    }
    grad
}

fn random_unit_rows(rng: &mut impl Rng, n: usize, d: usize) -> Array2<f64> {
    let mut e = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    for mut row in e.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    e
}

/// Random two-level labels over a 3x3 taxonomy.
fn random_labels(rng: &mut impl Rng, n: usize) -> Vec<LabelPath> {
    let classes: Vec<LabelPath> = (0..3)
        .flat_map(|c| (0..3).map(move |f| format!("c{c}/f{c}_{f}")))
        .map(|s| s.parse().unwrap())
        .collect();
    (0..n)
        .map(|_| classes.choose(rng).unwrap().clone())
        .collect()
}

fn ranks_for(labels: &[LabelPath]) -> Result<Vec<Option<usize>>> {
    let tree = LabelTree::build(labels)?;
    let map = RankMap::build(&tree, labels)?;
    map.batch_ranks(&labels.iter().collect::<Vec<_>>())
}

fn finish(suite: &'static str, errors: Vec<f64>) -> SuiteReport {
    let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
    SuiteReport {
        suite,
        trials: errors.len(),
        max_rel_error,
        passed: max_rel_error < TOLERANCE,
    }
}

fn apply(mutation: Mutation, g: &mut Array2<f64>) {
    if mutation == Mutation::FlipSign {
        g.mapv_inplace(|x| -x);
    }
}

/// Rank-based loss gradient with respect to the embeddings.
pub fn rank_loss_suite(seed: u64, trials: usize, mutation: Mutation) -> Result<SuiteReport> {
    let mut rng = rng::seeded(seed);
    let mut errors = Vec::with_capacity(trials);
    while errors.len() < trials {
        let e = random_unit_rows(&mut rng, 12, 3);
        let labels = random_labels(&mut rng, 12);
        let ranks = ranks_for(&labels)?;
        let (_, table) = rbl_forward(e.view(), &ranks)?;
        if table.wrong().next().is_none() {
            continue;
        }
        let mut analytic = rbl_backward(&table, e.view())?;
        apply(mutation, &mut analytic);
        let numeric = numeric_gradient(&e, |p| table.frozen_loss(p));
        errors.push(relative_error(
            analytic.as_slice().unwrap(),
            numeric.as_slice().unwrap(),
        ));
    }
    Ok(finish("rank_loss", errors))
}

/// Quadruplet loss subgradient away from hinge kinks.
pub fn quadruplet_suite(seed: u64, trials: usize, mutation: Mutation) -> Result<SuiteReport> {
    let mut rng = rng::seeded(seed);
    let margins = Margins::default();
    let labels: Vec<LabelPath> = (0..12)
        .map(|k| format!("c{}/f{}", k / 6, (k / 3) % 2).parse().unwrap())
        .collect();
    let refs: Vec<&LabelPath> = labels.iter().collect();
    let mut errors = Vec::with_capacity(trials);
    while errors.len() < trials {
        let e = random_unit_rows(&mut rng, 12, 3);
        let quads = mine_quadruplets(&refs, rng.random());
        let terms: Vec<(f64, f64)> = quads
            .iter()
            .map(|q| hinge_terms(e.view(), q, margins))
            .collect();
        let near_kink = terms
            .iter()
            .any(|&(f, c)| f.abs() < KINK_MARGIN || c.abs() < KINK_MARGIN);
        let active = terms.iter().any(|&(f, c)| f > 0.0 || c > 0.0);
        if near_kink || !active {
            continue;
        }
        let mut analytic = quad_backward(e.view(), &quads, margins)?;
        apply(mutation, &mut analytic);
        let numeric = numeric_gradient(&e, |p| quad_forward(p, &quads, margins).unwrap());
        errors.push(relative_error(
            analytic.as_slice().unwrap(),
            numeric.as_slice().unwrap(),
        ));
    }
    Ok(finish("quadruplet_loss", errors))
}

/// Full chain: standardize, project, normalize, rank-based loss; gradient
/// with respect to the projection weights and bias.
pub fn chain_suite(seed: u64, trials: usize, mutation: Mutation) -> Result<SuiteReport> {
    const D_IN: usize = 128;
    let mut rng = rng::seeded(seed);
    let mut errors = Vec::with_capacity(trials);
    while errors.len() < trials {
        let raw = Array2::from_shape_simple_fn((12, D_IN), || {
            3.0 + 2.0 * rng.sample::<f64, _>(StandardNormal)
        });
        let stats = FeatureStats::fit(raw.view())?;
        let x = stats.standardize(raw.view())?;
        let mut model = ProjectionModel::init(rng.random(), D_IN, 3)?;
        model.bias = Array1::from_shape_simple_fn(3, || 0.1 * rng.sample::<f64, _>(StandardNormal));
        let labels = random_labels(&mut rng, 12);
        let ranks = ranks_for(&labels)?;

        let (e, cache) = model.forward(x.view())?;
        let (_, table) = rbl_forward(e.view(), &ranks)?;
        if table.wrong().next().is_none() {
            continue;
        }
        let grad_e = rbl_backward(&table, e.view())?;
        let grads = model.backward(&cache, grad_e.view())?;

        // pack [W | b] as one d_out x (d_in + 1) point
        let mut params = Array2::zeros((3, D_IN + 1));
        params
            .slice_mut(ndarray::s![.., ..D_IN])
            .assign(&model.weight);
        params.column_mut(D_IN).assign(&model.bias);
        let mut analytic = params.clone();
        analytic
            .slice_mut(ndarray::s![.., ..D_IN])
            .assign(&grads.weight);
        analytic.column_mut(D_IN).assign(&grads.bias);
        apply(mutation, &mut analytic);

        let mut probe = model.clone();
        let numeric = numeric_gradient(&params, |p| {
            Zip::from(&mut probe.weight)
                .and(&p.slice(ndarray::s![.., ..D_IN]))
                .for_each(|w, &v| *w = v);
            probe.bias.assign(&p.column(D_IN));
            let e = probe.embed(x.view()).unwrap();
            table.frozen_loss(e.view())
        });
        errors.push(relative_error(
            analytic.as_slice().unwrap(),
            numeric.as_slice().unwrap(),
        ));
    }
    Ok(finish("projection_chain", errors))
}

pub fn run_all(seed: u64, trials: usize, mutation: Mutation) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        rank_loss_suite(seed, trials, mutation)?,
        quadruplet_suite(seed.wrapping_add(1), trials, mutation)?,
        chain_suite(seed.wrapping_add(2), trials, mutation)?,
    ])
}
