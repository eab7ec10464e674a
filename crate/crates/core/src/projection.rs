//! Feature standardization, the trainable projection and its optimizers.
//!
//! The model is `e = normalize(x W^T + b)`. Backpropagation through the
//! normalization uses `de/dz = (I - e e^T) / |z|`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const STD_FLOOR: f64 = 1e-8;
pub const MIN_OUTPUT_NORM: f64 = 1e-12;

/// Per-dimension mean and standard deviation of the training features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl FeatureStats {
    pub fn new(mean: Array1<f64>, std: Array1<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Shape(format!(
                "mean has {} entries, std has {}",
                mean.len(),
                std.len()
            )));
        }
        let std = std.mapv(|s| s.max(STD_FLOOR));
        Ok(FeatureStats { mean, std })
    }

    /// Population statistics of `features` (rows are examples).
    pub fn fit(features: ArrayView2<'_, f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Shape("no rows to fit feature statistics".into()));
        }
        let mean = features.mean_axis(Axis(0)).unwrap();
        let std = features.std_axis(Axis(0), 0.0);
        FeatureStats::new(mean, std)
    }

    pub fn identity(dim: usize) -> Self {
        FeatureStats {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "features have {} columns, statistics cover {}",
                features.ncols(),
                self.dim()
            )));
        }
        Ok((&features - &self.mean) / &self.std)
    }
}

/// Intermediate values kept by [`ProjectionModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Array2<f64>,
    pub output: Array2<f64>,
    pub norms: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Gradients {
    fn is_finite(&self) -> bool {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .all(|x| x.is_finite())
    }
}

/// Linear layer followed by row normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    /// `d_out x d_in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ProjectionModel {
    /// Weights uniform in `±sqrt(1/d_in)`, zero bias.
    pub fn init(seed: u64, d_in: usize, d_out: usize) -> Result<Self> {
        if d_in < 1 || d_out < 1 {
            return Err(Error::Config(format!(
                "projection dimensions must be positive, got {d_in} -> {d_out}"
            )));
        }
        let bound = (1.0 / d_in as f64).sqrt();
        let mut rng = rng::seeded(seed);
        let weight =
            Array2::from_shape_simple_fn((d_out, d_in), || rng.random_range(-bound..=bound));
        Ok(ProjectionModel {
            weight,
            bias: Array1::zeros(d_out),
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != self.d_in() {
            return Err(Error::Shape(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.d_in()
            )));
        }
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        if let Some((row, &norm)) = norms
            .iter()
            .enumerate()
            .find(|(_, n)| n.is_nan() || **n < MIN_OUTPUT_NORM)
        {
            return Err(Error::DegenerateOutput { row, norm });
        }
        let e = &z / &norms.view().insert_axis(Axis(1));
        let cache = ForwardCache {
            input: x.to_owned(),
            output: e.clone(),
            norms,
        };
        Ok((e, cache))
    }

    /// Unit-norm embeddings without keeping a cache.
    pub fn embed(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward(x).map(|(e, _)| e)
    }

    pub fn backward(&self, cache: &ForwardCache, grad_e: ArrayView2<'_, f64>) -> Result<Gradients> {
        if grad_e.dim() != cache.output.dim() {
            return Err(Error::Shape(format!(
                "gradient is {:?}, output was {:?}",
                grad_e.dim(),
                cache.output.dim()
            )));
        }
        let mut grad_z = grad_e.to_owned();
        for ((mut g, e), &norm) in grad_z
            .rows_mut()
            .into_iter()
            .zip(cache.output.rows())
            .zip(&cache.norms)
        {
            let radial = g.dot(&e);
            g.scaled_add(-radial, &e);
            g /= norm;
        }
        Ok(Gradients {
            weight: grad_z.t().dot(&cache.input),
            bias: grad_z.sum_axis(Axis(0)),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam(1e-3)
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        match self {
            OptimizerConfig::Sgd { .. } => OptimizerConfig::Sgd { lr },
            OptimizerConfig::Adam {
                beta1, beta2, eps, ..
            } => OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        // zero is allowed so a run can be evaluated without moving the model
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {lr}"
            )));
        }
        if let OptimizerConfig::Adam {
            beta1, beta2, eps, ..
        } = *self
        {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::Config("adam needs 0 <= beta < 1 and eps > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m_w: Array2<f64>,
    v_w: Array2<f64>,
    m_b: Array1<f64>,
    v_b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    moments: Option<Moments>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, model: &ProjectionModel) -> Self {
        let moments = matches!(config, OptimizerConfig::Adam { .. }).then(|| Moments {
            m_w: Array2::zeros(model.weight.raw_dim()),
            v_w: Array2::zeros(model.weight.raw_dim()),
            m_b: Array1::zeros(model.bias.raw_dim()),
            v_b: Array1::zeros(model.bias.raw_dim()),
        });
        Optimizer {
            config,
            moments,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, model: &mut ProjectionModel, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient("projection parameters"));
        }
        if grads.weight.dim() != model.weight.dim() || grads.bias.len() != model.bias.len() {
            return Err(Error::Shape("gradients do not match the model".into()));
        }
        self.steps += 1;
        match (self.config, self.moments.as_mut()) {
            (OptimizerConfig::Sgd { lr }, _) => {
                model.weight.scaled_add(-lr, &grads.weight);
                model.bias.scaled_add(-lr, &grads.bias);
            }
            (
                OptimizerConfig::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                },
                Some(m),
            ) => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let update = |param: f64, g: f64, mean: &mut f64, var: &mut f64| {
                    *mean = beta1 * *mean + (1.0 - beta1) * g;
                    *var = beta2 * *var + (1.0 - beta2) * g * g;
                    param - lr * (*mean / c1) / ((*var / c2).sqrt() + eps)
                };
                ndarray::Zip::from(&mut model.weight)
                    .and(&grads.weight)
                    .and(&mut m.m_w)
                    .and(&mut m.v_w)
                    .for_each(|p, &g, mean, var| *p = update(*p, g, mean, var));
                ndarray::Zip::from(&mut model.bias)
                    .and(&grads.bias)
                    .and(&mut m.m_b)
                    .and(&mut m.v_b)
                    .for_each(|p, &g, mean, var| *p = update(*p, g, mean, var));
            }
            (OptimizerConfig::Adam { .. }, None) => unreachable!("adam state is allocated in new"),
        }
        Ok(())
    }
}

/// On-disk model: projection plus the feature statistics it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub d_in: usize,
    pub d_out: usize,
    /// Row-major `d_out x d_in`.
    #[serde(rename = "W")]
    pub weight: Vec<f64>,
    pub b: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

impl Checkpoint {
    pub fn new(model: &ProjectionModel, stats: &FeatureStats) -> Self {
        Checkpoint {
            d_in: model.d_in(),
            d_out: model.d_out(),
            weight: model.weight.iter().copied().collect(),
            b: model.bias.to_vec(),
            feature_mean: stats.mean.to_vec(),
            feature_std: stats.std.to_vec(),
        }
    }

    pub fn into_parts(self) -> Result<(ProjectionModel, FeatureStats)> {
        let weight = Array2::from_shape_vec((self.d_out, self.d_in), self.weight)
            .map_err(|e| Error::Shape(format!("checkpoint W: {e}")))?;
        if self.b.len() != self.d_out
            || self.feature_mean.len() != self.d_in
            || self.feature_std.len() != self.d_in
        {
            return Err(Error::Shape(
                "checkpoint vectors do not match d_in/d_out".into(),
            ));
        }
        let model = ProjectionModel {
            weight,
            bias: Array1::from(self.b),
        };
        if !model.is_finite() {
            return Err(Error::Config("checkpoint has non-finite parameters".into()));
        }
        let stats = FeatureStats::new(self.feature_mean.into(), self.feature_std.into())?;
        Ok((model, stats))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn standardize_cases() {
        let stats = FeatureStats::new(array![1.0], array![0.5]).unwrap();
        assert_eq!(
            stats.standardize(array![[2.0]].view()).unwrap(),
            array![[2.0]]
        );
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let id = FeatureStats::identity(2);
        assert_eq!(id.standardize(x.view()).unwrap(), x);
        let fit = FeatureStats::fit(x.view()).unwrap();
        let z = fit.standardize(array![[2.0, 3.0]].view()).unwrap();
        assert_eq!(z, array![[0.0, 0.0]]);
        assert!(fit.standardize(array![[1.0]].view()).is_err());
    }

    #[test]
    fn constant_column_is_floored() {
        let x = array![[1.0, 5.0], [2.0, 5.0]];
        let fit = FeatureStats::fit(x.view()).unwrap();
        assert_eq!(fit.std[1], STD_FLOOR);
        assert!(fit
            .standardize(x.view())
            .unwrap()
            .iter()
            .all(|v| v.is_finite()));
    }

    #[test]
    fn identity_projection() {
        let model = ProjectionModel {
            weight: array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            bias: array![0.0, 0.0],
        };
        let x = array![[0.6, 0.8, 0.0]];
        let e = model.embed(x.view()).unwrap();
        assert_abs_diff_eq!(e[[0, 0]], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(e[[0, 1]], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn normalization() {
        let model = ProjectionModel {
            weight: array![[1.0], [0.0]],
            bias: array![0.0, 4.0],
        };
        let e = model.embed(array![[3.0]].view()).unwrap();
        assert_abs_diff_eq!(e[[0, 0]], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(e[[0, 1]], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_output() {
        let model = ProjectionModel {
            weight: array![[0.0, 0.0]],
            bias: array![0.0],
        };
        assert!(matches!(
            model.forward(array![[1.0, 2.0]].view()),
            Err(Error::DegenerateOutput { row: 0, .. })
        ));
    }

    #[test]
    fn radial_gradient_vanishes() {
        let model = ProjectionModel::init(3, 4, 3).unwrap();
        let x = array![[0.3, -1.0, 2.0, 0.5], [1.0, 1.0, -0.2, 0.0]];
        let (e, cache) = model.forward(x.view()).unwrap();
        let g = model.backward(&cache, (&e * 2.5).view()).unwrap();
        assert!(g
            .weight
            .iter()
            .chain(g.bias.iter())
            .all(|v| v.abs() < 1e-14));
        let g = model
            .backward(&cache, Array2::zeros(e.raw_dim()).view())
            .unwrap();
        assert!(g.weight.iter().all(|&v| v == 0.0));
        assert!(model
            .backward(&cache, Array2::zeros((1, 3)).view())
            .is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = ProjectionModel::init(11, 128, 3).unwrap();
        let b = ProjectionModel::init(11, 128, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ProjectionModel::init(12, 128, 3).unwrap());
        let bound = (1.0f64 / 128.0).sqrt();
        assert!(a.weight.iter().all(|w| w.abs() <= bound));
        assert!(a.bias.iter().all(|&v| v == 0.0));
        assert!(ProjectionModel::init(0, 0, 3).is_err());
    }

    #[test]
    fn sgd_step() {
        let mut model = ProjectionModel {
            weight: array![[1.0]],
            bias: array![0.0],
        };
        let mut opt = Optimizer::new(OptimizerConfig::Sgd { lr: 0.1 }, &model);
        let g = Gradients {
            weight: array![[1.0]],
            bias: array![0.0],
        };
        opt.step(&mut model, &g).unwrap();
        assert_abs_diff_eq!(model.weight[[0, 0]], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut model = ProjectionModel::init(1, 5, 2).unwrap();
        let before = model.clone();
        let zero = Gradients {
            weight: Array2::zeros((2, 5)),
            bias: Array1::zeros(2),
        };
        for cfg in [OptimizerConfig::Sgd { lr: 0.5 }, OptimizerConfig::adam(0.5)] {
            let mut opt = Optimizer::new(cfg, &model);
            opt.step(&mut model, &zero).unwrap();
            assert_eq!(model, before);
        }
    }

    #[test]
    fn adam_step_size_tends_to_lr() {
        // constant g: bias-corrected moments equal g and g^2 exactly, so
        // every step moves by lr * |g| / (|g| + eps)
        let lr = 0.01;
        let mut model = ProjectionModel {
            weight: array![[0.0]],
            bias: array![0.0],
        };
        let mut opt = Optimizer::new(OptimizerConfig::adam(lr), &model);
        let g = Gradients {
            weight: array![[0.3]],
            bias: array![-2.0],
        };
        let mut prev = model.clone();
        for _ in 0..50 {
            opt.step(&mut model, &g).unwrap();
            let dw = (model.weight[[0, 0]] - prev.weight[[0, 0]]).abs();
            let db = (model.bias[0] - prev.bias[0]).abs();
            assert_abs_diff_eq!(dw, lr * 0.3 / (0.3 + 1e-8), epsilon = 1e-12);
            assert_abs_diff_eq!(db, lr, epsilon = 1e-10);
            prev = model.clone();
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut model = ProjectionModel::init(1, 2, 2).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::default(), &model);
        let g = Gradients {
            weight: array![[f64::NAN, 0.0], [0.0, 0.0]],
            bias: array![0.0, 0.0],
        };
        assert!(matches!(
            opt.step(&mut model, &g),
            Err(Error::NonFiniteGradient(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = ProjectionModel::init(5, 4, 3).unwrap();
        let stats =
            FeatureStats::new(array![0.0, 1.0, 2.0, 3.0], array![1.0, 2.0, 0.5, 1.0]).unwrap();
        let ck = Checkpoint::new(&model, &stats);
        let json = serde_json::to_value(&ck).unwrap();
        for key in ["d_in", "d_out", "W", "b", "feature_mean", "feature_std"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["W"].as_array().unwrap().len(), 12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let (m2, s2) = Checkpoint::load(&path).unwrap().into_parts().unwrap();
        assert_eq!(m2, model);
        assert_eq!(s2, stats);
    }
}
