//! Dataset CSV ingestion, splitting and synthetic data.
//!
//! The CSV header is `id,labels,f0,f1,...`; `labels` holds a `/`-joined
//! label path. Features are written with the shortest representation that
//! parses back to the same `f64`, so load/save/load is exact.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::LabelPath;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    AltTest,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::AltTest];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::AltTest => "alt_test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub labels: Vec<LabelPath>,
    /// One row per example.
    pub features: Array2<f64>,
    /// `None` until a split is assigned.
    pub splits: Vec<Option<Split>>,
}

impl Dataset {
    pub fn new(ids: Vec<String>, labels: Vec<LabelPath>, features: Array2<f64>) -> Result<Self> {
        if ids.len() != labels.len() || ids.len() != features.nrows() {
            return Err(Error::Shape(format!(
                "{} ids, {} labels, {} feature rows",
                ids.len(),
                labels.len(),
                features.nrows()
            )));
        }
        let mut seen = HashSet::new();
        for (row, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId {
                    row: row + 1,
                    id: id.clone(),
                });
            }
        }
        let n = ids.len();
        Ok(Dataset {
            ids,
            labels,
            features,
            splits: vec![None; n],
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Depth of the deepest label.
    pub fn depth(&self) -> usize {
        self.labels.iter().map(LabelPath::len).max().unwrap_or(0)
    }

    /// Row indices carrying `split`, in file order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| self.splits[k] == Some(split))
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            ids: rows.iter().map(|&k| self.ids[k].clone()).collect(),
            labels: rows.iter().map(|&k| self.labels[k].clone()).collect(),
            features: self.features.select(Axis(0), rows),
            splits: rows.iter().map(|&k| self.splits[k]).collect(),
        }
    }

    pub fn select_features(&self, rows: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), rows)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 3 || &header[0] != "id" || &header[1] != "labels" {
            return Err(Error::BadHeader("expected id,labels,f0,...".to_string()));
        }
        for (k, name) in header.iter().skip(2).enumerate() {
            if name != format!("f{k}") {
                return Err(Error::BadHeader(format!(
                    "column {} is {name:?}, expected f{k}",
                    k + 2
                )));
            }
        }
        let dim = header.len() - 2;
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut values = Vec::new();
        let mut seen = HashSet::new();
        for (k, rec) in rdr.records().enumerate() {
            let row = k + 1;
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::RaggedRow {
                    row,
                    expected: dim,
                    found: rec.len().saturating_sub(2),
                });
            }
            let id = rec[0].to_string();
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId { row, id });
            }
            let label = rec[1].parse::<LabelPath>().map_err(|e| Error::RowLabel {
                row,
                source: Box::new(e),
            })?;
            for (c, text) in rec.iter().skip(2).enumerate() {
                match text.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => {
                        return Err(Error::NonNumeric {
                            row,
                            column: format!("f{c}"),
                            value: text.to_string(),
                        })
                    }
                }
            }
            ids.push(id);
            labels.push(label);
        }
        let features = Array2::from_shape_vec((ids.len(), dim), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Dataset::new(ids, labels, features)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "labels".to_string()];
        header.extend((0..self.dim()).map(|k| format!("f{k}")));
        wtr.write_record(&header)?;
        let mut rec = Vec::with_capacity(header.len());
        for k in 0..self.len() {
            rec.clear();
            rec.push(self.ids[k].clone());
            rec.push(self.labels[k].to_string());
            rec.extend(self.features.row(k).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Writes `id,split` for every row with an assigned split.
    pub fn save_splits(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut wtr = csv::Writer::from_writer(std::io::BufWriter::new(file));
        wtr.write_record(["id", "split"])?;
        for (id, split) in self.ids.iter().zip(&self.splits) {
            if let Some(s) = split {
                wtr.write_record([id.as_str(), s.as_str()])?;
            }
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_splits(&mut self, path: &Path) -> Result<()> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let index: BTreeMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(k, id)| (id.as_str(), k))
            .collect();
        let mut splits = vec![None; self.len()];
        for rec in rdr.records() {
            let rec = rec?;
            let k = *index.get(&rec[0]).ok_or_else(|| {
                Error::Config(format!("split file names unknown id {:?}", &rec[0]))
            })?;
            splits[k] = Some(rec[1].parse()?);
        }
        self.splits = splits;
        Ok(())
    }
}

/// Target sizes for a development pool of `n`: 70% / 20% / rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (0.7 * n as f64).round() as usize;
    let val = ((0.2 * n as f64).round() as usize).min(n - train);
    (train, val, n - train - val)
}

/// Assigns train/val/test to every row not already tagged `alt_test`.
///
/// When every fine class of the pool has at least 3 examples the assignment
/// is stratified: each class is spread evenly over the pool before it is cut
/// 70/20/10, and every class is guaranteed a training example.
pub fn split(dataset: &mut Dataset, seed: u64) -> Result<()> {
    let pool: Vec<usize> = (0..dataset.len())
        .filter(|&k| dataset.splits[k] != Some(Split::AltTest))
        .collect();
    if pool.len() < 10 {
        return Err(Error::TooSmallToSplit(pool.len()));
    }
    let mut rng = rng::seeded(seed);
    let mut by_class: BTreeMap<&LabelPath, Vec<usize>> = BTreeMap::new();
    for &k in &pool {
        by_class.entry(&dataset.labels[k]).or_default().push(k);
    }
    let stratify = by_class.values().all(|rows| rows.len() >= 3);

    let order: Vec<usize> = if stratify {
        // each class gets evenly spaced keys (k + u_c) / n_c in [0, 1)
        let mut keyed: Vec<(f64, f64, usize)> = Vec::with_capacity(pool.len());
        for rows in by_class.values() {
            let mut rows = rows.clone();
            rows.shuffle(&mut rng);
            let offset: f64 = rng.random();
            let n_c = rows.len() as f64;
            for (k, row) in rows.into_iter().enumerate() {
                keyed.push(((k as f64 + offset) / n_c, rng.random(), row));
            }
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        keyed.into_iter().map(|(_, _, row)| row).collect()
    } else {
        let mut rows = pool.clone();
        rows.shuffle(&mut rng);
        rows
    };

    let (n_train, n_val, _) = split_sizes(order.len());
    let mut tags: Vec<(usize, Split)> = order
        .iter()
        .enumerate()
        .map(|(pos, &row)| {
            let s = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (row, s)
        })
        .collect();

    if stratify {
        ensure_train_coverage(&mut tags, &dataset.labels);
    }
    for (row, s) in tags {
        dataset.splits[row] = Some(s);
    }
    Ok(())
}

/// Swaps a held-out example of any class missing from train with a training
/// example of the class that has the most training rows.
fn ensure_train_coverage(tags: &mut [(usize, Split)], labels: &[LabelPath]) {
    loop {
        let mut train_count: BTreeMap<&LabelPath, usize> = BTreeMap::new();
        for (row, _) in tags.iter() {
            train_count.entry(&labels[*row]).or_default();
        }
        for (row, s) in tags.iter() {
            if *s == Split::Train {
                *train_count.get_mut(&labels[*row]).unwrap() += 1;
            }
        }
        let Some(missing) = train_count
            .iter()
            .find(|(_, &c)| c == 0)
            .map(|(l, _)| (*l).clone())
        else {
            return;
        };
        let (donor, donor_count) = train_count
            .iter()
            .max_by_key(|(_, &c)| c)
            .map(|(l, c)| ((*l).clone(), *c))
            .unwrap();
        if donor_count < 2 {
            return;
        }
        let from = tags
            .iter()
            .position(|(row, s)| *s != Split::Train && labels[*row] == missing)
            .unwrap();
        let to = tags
            .iter()
            .position(|(row, s)| *s == Split::Train && labels[*row] == donor)
            .unwrap();
        let held = tags[from].1;
        tags[from].1 = Split::Train;
        tags[to].1 = held;
    }
}

/// Rows of `pool` whose full label is not a development class, tagged `alt_test`.
pub fn make_unseen_class_testset(
    pool: &Dataset,
    dev_fine_classes: &BTreeSet<LabelPath>,
) -> Result<Dataset> {
    let depth = pool.depth();
    let rows: Vec<usize> = (0..pool.len())
        .filter(|&k| pool.labels[k].len() == depth && !dev_fine_classes.contains(&pool.labels[k]))
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyUnseenSet);
    }
    let mut out = pool.subset(&rows);
    out.splits = vec![Some(Split::AltTest); rows.len()];
    Ok(out)
}

/// Tags the last `per_coarse` fine classes (in label order) under every
/// coarse class as `alt_test`. Returns the held-out classes.
pub fn hold_out_fine_classes(
    dataset: &mut Dataset,
    per_coarse: usize,
) -> Result<BTreeSet<LabelPath>> {
    let depth = dataset.depth();
    let mut fine: BTreeMap<&str, BTreeSet<&LabelPath>> = BTreeMap::new();
    for l in dataset.labels.iter().filter(|l| l.len() == depth) {
        fine.entry(l.coarse()).or_default().insert(l);
    }
    let mut held = BTreeSet::new();
    for (coarse, classes) in &fine {
        if classes.len() <= per_coarse {
            return Err(Error::Config(format!(
                "coarse class {coarse} has {} fine classes, cannot hold out {per_coarse}",
                classes.len()
            )));
        }
        held.extend(classes.iter().rev().take(per_coarse).map(|l| (*l).clone()));
    }
    for k in 0..dataset.len() {
        if held.contains(&dataset.labels[k]) {
            dataset.splits[k] = Some(Split::AltTest);
        }
    }
    Ok(held)
}

/// Hierarchical Gaussian mixture: coarse centers, fine offsets, sample noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub coarse: usize,
    pub fine_per_coarse: usize,
    pub per_class: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub coarse_spread: f64,
    pub fine_spread: f64,
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_dim() -> usize {
    128
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            coarse: 3,
            fine_per_coarse: 3,
            per_class: 20,
            dim: 128,
            coarse_spread: 1.0,
            fine_spread: 0.5,
            noise: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.coarse < 1 || self.fine_per_coarse < 1 || self.per_class < 1 || self.dim < 1 {
            return Err(Error::Config(
                "synthetic counts and dim must be >= 1".into(),
            ));
        }
        for (name, v) in [
            ("coarse_spread", self.coarse_spread),
            ("fine_spread", self.fine_spread),
            ("noise", self.noise),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Samples the dataset. Labels are `c{i}/f{i}_{j}`.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = rng::seeded(self.seed);
        let gauss = |sd: f64| Normal::new(0.0, sd).expect("positive spread");
        let (g_c, g_f, g_n) = (
            gauss(self.coarse_spread),
            gauss(self.fine_spread),
            gauss(self.noise),
        );
        let n = self.coarse * self.fine_per_coarse * self.per_class;
        let mut features = Array2::zeros((n, self.dim));
        let mut ids = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut row = 0;
        for i in 0..self.coarse {
            let coarse_center = Array1::from_shape_simple_fn(self.dim, || g_c.sample(&mut rng));
            for j in 0..self.fine_per_coarse {
                let offset = Array1::from_shape_simple_fn(self.dim, || g_f.sample(&mut rng));
                let fine_center = &coarse_center + &offset;
                let label = LabelPath::new([format!("c{i}"), format!("f{i}_{j}")])?;
                for _ in 0..self.per_class {
                    let mut x = features.row_mut(row);
                    x.assign(&fine_center);
                    x.iter_mut().for_each(|v| *v += g_n.sample(&mut rng));
                    ids.push(format!("s{row:06}"));
                    labels.push(label.clone());
                    row += 1;
                }
            }
        }
        Dataset::new(ids, labels, features)
    }
}

pub fn fine_classes(labels: &[LabelPath], rows: &[usize]) -> BTreeSet<LabelPath> {
    rows.iter().map(|&k| labels[k].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_ROWS: &str =
        "id,labels,f0,f1\na,guitar/guitar_003,1.5,-2\nb,flute/flute_001,0,1e-3\n";

    #[test]
    fn reads_well_formed_csv() {
        let d = Dataset::read_csv(TWO_ROWS.as_bytes()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.labels[0].segments(), ["guitar", "guitar_003"]);
        assert_eq!(d.features[[1, 1]], 1e-3);
    }

    #[test]
    fn ragged_row_reports_row() {
        let mut text = String::from("id,labels");
        for k in 0..128 {
            text.push_str(&format!(",f{k}"));
        }
        text.push('\n');
        let full: Vec<String> = (0..128).map(|k| k.to_string()).collect();
        text.push_str(&format!("a,A/x,{}\n", full.join(",")));
        text.push_str(&format!("b,A/y,{}\n", full[..127].join(",")));
        match Dataset::read_csv(text.as_bytes()) {
            Err(Error::RaggedRow {
                row,
                expected,
                found,
            }) => {
                assert_eq!((row, expected, found), (2, 128, 127));
            }
            other => panic!("expected ragged row, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_are_distinct() {
        let bad_num = "id,labels,f0\na,A/x,abc\n";
        assert!(matches!(
            Dataset::read_csv(bad_num.as_bytes()),
            Err(Error::NonNumeric { row: 1, .. })
        ));
        let nan = "id,labels,f0\na,A/x,NaN\n";
        assert!(matches!(
            Dataset::read_csv(nan.as_bytes()),
            Err(Error::NonNumeric { .. })
        ));
        let dup = "id,labels,f0\na,A/x,1\na,A/y,2\n";
        assert!(matches!(
            Dataset::read_csv(dup.as_bytes()),
            Err(Error::DuplicateId { row: 2, .. })
        ));
        let label = "id,labels,f0\na,A//x,1\n";
        assert!(matches!(
            Dataset::read_csv(label.as_bytes()),
            Err(Error::RowLabel { row: 1, .. })
        ));
        let header = "id,label,f0\na,A/x,1\n";
        assert!(matches!(
            Dataset::read_csv(header.as_bytes()),
            Err(Error::BadHeader(_))
        ));
    }

    #[test]
    fn split_proportions_exact_for_100() {
        let spec = SynthSpec {
            coarse: 2,
            fine_per_coarse: 5,
            per_class: 10,
            dim: 4,
            ..Default::default()
        };
        let mut d = spec.generate().unwrap();
        split(&mut d, 9).unwrap();
        assert_eq!(d.indices(Split::Train).len(), 70);
        assert_eq!(d.indices(Split::Val).len(), 20);
        assert_eq!(d.indices(Split::Test).len(), 10);
        let mut again = spec.generate().unwrap();
        split(&mut again, 9).unwrap();
        assert_eq!(d.splits, again.splits);
    }

    #[test]
    fn split_is_a_partition_with_train_coverage() {
        for seed in 0..20 {
            let spec = SynthSpec {
                coarse: 3,
                fine_per_coarse: 4,
                per_class: 3,
                dim: 2,
                seed,
                ..Default::default()
            };
            let mut d = spec.generate().unwrap();
            split(&mut d, seed).unwrap();
            assert!(d.splits.iter().all(|s| s.is_some()));
            let train = fine_classes(&d.labels, &d.indices(Split::Train));
            assert_eq!(train.len(), 12, "seed {seed}");
            let (a, b, c) = split_sizes(36);
            assert_eq!(d.indices(Split::Train).len(), a);
            assert_eq!(d.indices(Split::Val).len(), b);
            assert_eq!(d.indices(Split::Test).len(), c);
        }
    }

    #[test]
    fn split_needs_ten_rows() {
        let spec = SynthSpec {
            coarse: 1,
            fine_per_coarse: 1,
            per_class: 9,
            dim: 2,
            ..Default::default()
        };
        let mut d = spec.generate().unwrap();
        assert!(matches!(split(&mut d, 0), Err(Error::TooSmallToSplit(9))));
    }

    #[test]
    fn unseen_class_selection() {
        let text = "id,labels,f0\n1,A/x,0\n2,A/y,0\n3,B/z,0\n4,B/w,0\n5,B/w,1\n";
        let d = Dataset::read_csv(text.as_bytes()).unwrap();
        let dev: BTreeSet<LabelPath> = ["A/x", "A/y", "B/z"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let alt = make_unseen_class_testset(&d, &dev).unwrap();
        assert_eq!(alt.ids, ["4", "5"]);
        assert!(alt.splits.iter().all(|s| *s == Some(Split::AltTest)));
        let all = fine_classes(&d.labels, &(0..5).collect::<Vec<_>>());
        assert!(matches!(
            make_unseen_class_testset(&d, &all),
            Err(Error::EmptyUnseenSet)
        ));
    }

    #[test]
    fn hold_out_one_per_coarse() {
        let spec = SynthSpec {
            coarse: 3,
            fine_per_coarse: 4,
            per_class: 5,
            dim: 2,
            ..Default::default()
        };
        let mut d = spec.generate().unwrap();
        let held = hold_out_fine_classes(&mut d, 1).unwrap();
        assert_eq!(held.len(), 3);
        let novel: BTreeSet<&str> = held.iter().map(|l| l.segments()[1].as_str()).collect();
        assert_eq!(novel, ["f0_3", "f1_3", "f2_3"].into_iter().collect());
        assert_eq!(d.indices(Split::AltTest).len(), 15);
        assert!(hold_out_fine_classes(&mut d, 4).is_err());
    }

    #[test]
    fn synth_shapes_and_determinism() {
        let spec = SynthSpec {
            per_class: 20,
            ..Default::default()
        };
        let d = spec.generate().unwrap();
        assert_eq!(d.len(), 180);
        assert_eq!(d.dim(), 128);
        assert_eq!(
            fine_classes(&d.labels, &(0..180).collect::<Vec<_>>()).len(),
            9
        );
        assert_eq!(d.labels[0].to_string(), "c0/f0_0");
        assert_eq!(d, spec.generate().unwrap());
        assert!(SynthSpec { noise: 0.0, ..spec }.generate().is_err());
    }

    #[test]
    fn splits_file_round_trip() {
        let spec = SynthSpec {
            coarse: 2,
            fine_per_coarse: 2,
            per_class: 5,
            dim: 2,
            ..Default::default()
        };
        let mut d = spec.generate().unwrap();
        split(&mut d, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("splits.csv");
        d.save_splits(&path).unwrap();
        let mut fresh = spec.generate().unwrap();
        fresh.load_splits(&path).unwrap();
        assert_eq!(fresh.splits, d.splits);
    }
}
