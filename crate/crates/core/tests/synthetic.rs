use hierank::evaluation::{multilevel_report, silhouette};
use hierank::{FeatureStats, SynthSpec};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn raw_report(spec: &SynthSpec) -> hierank::SilhouetteReport {
    let ds = spec.generate().unwrap();
    let x = FeatureStats::fit(ds.features.view())
        .unwrap()
        .standardize(ds.features.view())
        .unwrap();
    multilevel_report(x.view(), &ds.labels, 2).unwrap()
}

#[test]
fn nested_spreads_give_coarse_above_fine() {
    for seed in 0..12 {
        let spec = SynthSpec {
            fine_spread: 0.5,
            noise: 0.5,
            seed,
            ..SynthSpec::default()
        };
        let r = raw_report(&spec);
        assert!(
            r.coarse().unwrap() >= r.fine().unwrap(),
            "seed {seed}: {r:?}"
        );
    }
}

#[test]
fn well_separated_levels_score_high() {
    let spec = SynthSpec {
        coarse_spread: 1.0,
        fine_spread: 0.3,
        noise: 0.05,
        ..SynthSpec::default()
    };
    let r = raw_report(&spec);
    assert!(
        r.coarse().unwrap() > 0.5 && r.fine().unwrap() > 0.5,
        "{r:?}"
    );
}

#[test]
fn overwhelming_noise_scores_near_zero() {
    for seed in 0..5 {
        let spec = SynthSpec {
            noise: 20.0,
            seed,
            ..SynthSpec::default()
        };
        let r = raw_report(&spec);
        for s in r.sil_per_level.iter().flatten() {
            assert!(s.abs() < 0.05, "seed {seed}: {r:?}");
        }
    }
}

#[test]
fn random_labels_on_one_blob() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((120, 8), || rng.sample::<f64, _>(StandardNormal));
        let labels: Vec<u8> = (0..120).map(|_| rng.random_range(0..3)).collect();
        let s = silhouette(x.view(), &labels).unwrap();
        assert!(s.abs() < 0.15, "seed {seed}: {s}");
    }
}

#[test]
fn generator_shape_and_determinism() {
    let spec = SynthSpec {
        coarse: 3,
        fine_per_coarse: 3,
        per_class: 20,
        ..SynthSpec::default()
    };
    let a = spec.generate().unwrap();
    assert_eq!(a.len(), 180);
    assert_eq!(
        hierank::dataio::fine_classes(&a.labels, &(0..180).collect::<Vec<_>>()).len(),
        9
    );
    assert_eq!(a.features, spec.generate().unwrap().features);
}
