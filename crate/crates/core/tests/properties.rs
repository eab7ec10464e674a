mod common;

use common::{pairs, rng, OracleTree};
use hierank::evaluation::{multilevel_report, silhouette};
use hierank::quadruplet_loss::{mine_quadruplets, quad_forward};
use hierank::rank_loss::{rbl_backward, rbl_forward};
use hierank::{Dataset, LabelPath, LabelTree, Margins, ProjectionModel, RankMap};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::IndexedRandom;

fn unit_rows(values: &[f64], n: usize, d: usize) -> Array2<f64> {
    let mut e = Array2::from_shape_vec((n, d), values.to_vec()).unwrap();
    for mut row in e.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    e
}

/// Rows of `n x d` values bounded away from the origin.
fn matrix(n: usize, d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-3.0..-0.1, 0.1..3.0f64], n * d)
}

fn two_level_labels(n: usize) -> impl Strategy<Value = Vec<LabelPath>> {
    prop::collection::vec((0..3usize, 0..3usize), n).prop_map(|v| {
        v.into_iter()
            .map(|(c, f)| format!("c{c}/f{f}").parse().unwrap())
            .collect()
    })
}

fn ranks_of(labels: &[LabelPath]) -> Vec<Option<usize>> {
    let tree = LabelTree::build(labels).unwrap();
    let map = RankMap::build(&tree, labels).unwrap();
    map.batch_ranks(&labels.iter().collect::<Vec<_>>()).unwrap()
}

proptest! {
    #[test]
    fn rank_is_symmetric_and_ultrametric(seed in any::<u64>(), height in 1..=4usize) {
        let mut rng = rng(seed);
        let oracle = OracleTree::random(&mut rng, height, 3, 50);
        let leaves = oracle.leaves();
        let paths: Vec<LabelPath> = leaves.iter().map(|&v| oracle.path(v)).collect();
        let tree = LabelTree::build(&paths).unwrap();
        for _ in 0..50 {
            let [a, b, c] = [(); 3].map(|_| paths.choose(&mut rng).unwrap());
            let ab = tree.pair_rank(a, b).unwrap().unwrap();
            prop_assert_eq!(Some(ab), tree.pair_rank(b, a).unwrap());
            prop_assert_eq!(tree.pair_rank(a, a).unwrap(), Some(0));
            let mut three = [ab, tree.pair_rank(b, c).unwrap().unwrap(), tree.pair_rank(a, c).unwrap().unwrap()];
            three.sort();
            prop_assert_eq!(three[1], three[2]);
            prop_assert!(three[2] <= height);
        }
        let map = RankMap::build(&tree, &paths).unwrap();
        prop_assert!(map.num_ranks() <= height + 1);
    }

    #[test]
    fn loss_is_non_negative_with_monotone_targets(
        values in matrix(8, 3),
        labels in two_level_labels(8),
    ) {
        let e = unit_rows(&values, 8, 3);
        let (loss, table) = rbl_forward(e.view(), &ranks_of(&labels)).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert_eq!(loss == 0.0, table.wrong().next().is_none());
        let targets: Vec<f64> = table.spans.iter().map(|s| s.target).collect();
        prop_assert!(targets.windows(2).all(|w| w[0] <= w[1]));
        let mut positions: Vec<usize> = table.pairs.iter().filter_map(|p| p.position).collect();
        positions.sort();
        prop_assert_eq!(positions, (0..table.included).collect::<Vec<_>>());
    }

    #[test]
    fn loss_and_gradient_are_permutation_equivariant(
        values in matrix(7, 3),
        labels in two_level_labels(7),
        perm in Just((0..7usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let e = unit_rows(&values, 7, 3);
        let (loss, table) = rbl_forward(e.view(), &ranks_of(&labels)).unwrap();
        let grad = rbl_backward(&table, e.view()).unwrap();

        let pe = e.select(Axis(0), &perm);
        let pl: Vec<LabelPath> = perm.iter().map(|&k| labels[k].clone()).collect();
        let (ploss, ptable) = rbl_forward(pe.view(), &ranks_of(&pl)).unwrap();
        let pgrad = rbl_backward(&ptable, pe.view()).unwrap();
        prop_assert!((loss - ploss).abs() < 1e-12);
        let expected = grad.select(Axis(0), &perm);
        prop_assert!((&pgrad - &expected).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn projection_rows_are_unit_norm(
        seed in any::<u64>(),
        values in prop::collection::vec(-5.0..5.0f64, 5 * 16),
        d_out in 1..=4usize,
    ) {
        let x = Array2::from_shape_vec((5, 16), values).unwrap();
        let model = ProjectionModel::init(seed, 16, d_out).unwrap();
        if let Ok(e) = model.embed(x.view()) {
            for row in e.rows() {
                prop_assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn silhouette_invariances(
        values in matrix(10, 3),
        labels in prop::collection::vec(0..3u8, 10),
        perm in Just((0..10usize).collect::<Vec<_>>()).prop_shuffle(),
        angle in 0.0..std::f64::consts::TAU,
    ) {
        prop_assume!(labels.iter().collect::<std::collections::BTreeSet<_>>().len() >= 2);
        let x = unit_rows(&values, 10, 3);
        let base = silhouette(x.view(), &labels).unwrap();
        prop_assert!((-1.0..=1.0).contains(&base));

        let renamed: Vec<u8> = labels.iter().map(|l| (l + 1) % 3).collect();
        prop_assert!((silhouette(x.view(), &renamed).unwrap() - base).abs() < 1e-12);

        let px = x.select(Axis(0), &perm);
        let pl: Vec<u8> = perm.iter().map(|&k| labels[k]).collect();
        prop_assert!((silhouette(px.view(), &pl).unwrap() - base).abs() < 1e-12);

        let (s, c) = angle.sin_cos();
        let rot = ndarray::arr2(&[[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]);
        let rx = x.dot(&rot);
        prop_assert!((silhouette(rx.view(), &labels).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn report_average_is_mean_of_levels(values in matrix(12, 3), labels in two_level_labels(12)) {
        let x = unit_rows(&values, 12, 3);
        let r = multilevel_report(x.view(), &labels, 2).unwrap();
        let levels: Vec<f64> = r.sil_per_level.iter().flatten().copied().collect();
        if levels.is_empty() {
            prop_assert_eq!(r.av_sil, None);
        } else {
            let mean = levels.iter().sum::<f64>() / levels.len() as f64;
            prop_assert!((r.av_sil.unwrap() - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn csv_round_trip(
        values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 4 * 3),
        labels in two_level_labels(4),
    ) {
        let ids = (0..4).map(|k| format!("row{k}")).collect();
        let ds = Dataset::new(ids, labels, Array2::from_shape_vec((4, 3), values).unwrap()).unwrap();
        let mut text = Vec::new();
        ds.write_csv(&mut text).unwrap();
        let back = Dataset::read_csv(text.as_slice()).unwrap();
        prop_assert_eq!(&back.ids, &ds.ids);
        prop_assert_eq!(&back.labels, &ds.labels);
        prop_assert!(back.features.iter().zip(&ds.features).all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        prop_assert_eq!(text, again);
    }

    #[test]
    fn quadruplet_loss_grows_with_margins(
        values in matrix(12, 3),
        seed in any::<u64>(),
        fine in 0.0..0.5f64,
        extra in 0.01..0.5f64,
        bump in 0.0..0.3f64,
    ) {
        let labels: Vec<LabelPath> = (0..12)
            .map(|k| format!("c{}/f{}", k / 6, (k / 3) % 2).parse().unwrap())
            .collect();
        let refs: Vec<&LabelPath> = labels.iter().collect();
        let quads = mine_quadruplets(&refs, seed);
        let e = unit_rows(&values, 12, 3);
        let small = Margins::new(fine, fine + extra).unwrap();
        let large = Margins::new(fine + bump, fine + extra + 2.0 * bump).unwrap();
        let a = quad_forward(e.view(), &quads, small).unwrap();
        let b = quad_forward(e.view(), &quads, large).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!(b >= a);
    }
}

#[test]
fn pair_order_matches_batch_ranks() {
    let labels: Vec<LabelPath> = ["A/x", "A/y", "B/z", "A/x"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let ranks = ranks_of(&labels);
    let expected: Vec<Option<usize>> = pairs(4)
        .iter()
        .map(|&(i, j)| match (i, j) {
            (0, 3) => Some(0),
            (0, 1) | (1, 3) => Some(1),
            _ => Some(2),
        })
        .collect();
    assert_eq!(ranks, expected);
}
