//! One-hidden-layer perceptron mapping response-map features to a detection
//! threshold, and the ratio baseline it is compared against.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::{read_json, write_json};
use crate::error::{Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation value `h`.
    fn slope(self, h: f64) -> f64 {
        match self {
            Activation::Sigmoid => h * (1.0 - h),
            Activation::Tanh => 1.0 - h * h,
        }
    }
}

/// Min-max ranges used to scale inputs and targets into `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub t_min: f64,
    pub t_max: f64,
}

impl Normalization {
    fn input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_min.iter().zip(&self.x_max))
            .map(|(&v, (&lo, &hi))| (v - lo) / (hi - lo))
            .collect()
    }

    fn target(&self, t: f64) -> f64 {
        (t - self.t_min) / (self.t_max - self.t_min)
    }

    fn denormalize(&self, y: f64) -> f64 {
        self.t_min + y * (self.t_max - self.t_min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub category: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `hidden_dim × input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub activation: Activation,
    pub norm: Normalization,
}

impl MlpModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("model", reason));
        let (i, h) = (self.input_dim, self.hidden_dim);
        if i == 0 || h == 0 {
            return bad(format!("input_dim and hidden_dim must be positive, got {i} and {h}"));
        }
        if self.w1.len() != h * i || self.b1.len() != h || self.w2.len() != h {
            return bad(format!(
                "weight shapes w1={}, b1={}, w2={} do not match {h}x{i}",
                self.w1.len(),
                self.b1.len(),
                self.w2.len()
            ));
        }
        if self.norm.x_min.len() != i || self.norm.x_max.len() != i {
            return bad("normalization ranges do not match input_dim".into());
        }
        let params = self.w1.iter().chain(&self.b1).chain(&self.w2).chain([&self.b2]);
        if params.into_iter().any(|v| !v.is_finite()) {
            return bad("non-finite weights".into());
        }
        for (lo, hi) in self.norm.x_min.iter().zip(&self.norm.x_max) {
            if !(hi > lo && lo.is_finite() && hi.is_finite()) {
                return bad(format!("input range [{lo}, {hi}] is empty"));
            }
        }
        if !(self.norm.t_max > self.norm.t_min && self.norm.t_min.is_finite() && self.norm.t_max.is_finite()) {
            return bad(format!("target range [{}, {}] is empty", self.norm.t_min, self.norm.t_max));
        }
        Ok(())
    }

    fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Parameters in the order `w1, b1, w2, b2`.
    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    fn set_params(&mut self, p: &[f64]) {
        let (n1, h) = (self.w1.len(), self.hidden_dim);
        self.w1.copy_from_slice(&p[..n1]);
        self.b1.copy_from_slice(&p[n1..n1 + h]);
        self.w2.copy_from_slice(&p[n1 + h..n1 + 2 * h]);
        self.b2 = p[n1 + 2 * h];
    }

    /// Hidden activations and normalized output for a normalized input.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let hidden: Vec<f64> = (0..self.hidden_dim)
            .map(|j| {
                let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
                let z = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[j];
                self.activation.apply(z)
            })
            .collect();
        let y = hidden.iter().zip(&self.w2).map(|(h, w)| h * w).sum::<f64>() + self.b2;
        (hidden, y)
    }
}

/// Predicted threshold, in the units of the training targets. Inputs outside
/// the training range are extrapolated, not clamped.
pub fn mlp_predict(model: &MlpModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: (model.input_dim, 1),
            found: (features.len(), 1),
        });
    }
    let (_, y) = model.forward(&model.norm.input(features));
    Ok(model.norm.denormalize(y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub frame_id: String,
    /// `features[0]` is the average intensity of the response map.
    pub features: Vec<f64>,
    pub manual_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub init_scale: f64,
    pub hidden_dim: usize,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5000,
            learning_rate: 0.05,
            seed: 0,
            init_scale: 0.5,
            hidden_dim: 8,
            activation: Activation::Sigmoid,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("train config", "epochs must be > 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("train config", "learning_rate must be > 0"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("train config", "init_scale must be >= 0"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::invalid("train config", "hidden_dim must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Mean squared error in normalized units before the first step.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Root mean squared error in threshold units.
    pub final_rmse: f64,
    /// Learning rate after all halvings.
    pub final_learning_rate: f64,
}

/// Mean squared error (normalized units) over `data` and its gradient with
/// respect to the parameters in `w1, b1, w2, b2` order.
fn loss_and_grad(model: &MlpModel, data: &[(Vec<f64>, f64)]) -> (f64, Vec<f64>) {
    let (n1, h) = (model.w1.len(), model.hidden_dim);
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    let scale = 1.0 / data.len() as f64;
    for (x, t) in data {
        let (hidden, y) = model.forward(x);
        let err = y - t;
        loss += err * err * scale;
        let dy = 2.0 * err * scale;
        for j in 0..h {
            let dz = dy * model.w2[j] * model.activation.slope(hidden[j]);
            for (k, &xk) in x.iter().enumerate() {
                grad[j * model.input_dim + k] += dz * xk;
            }
            grad[n1 + j] += dz;
            grad[n1 + h + j] += dy * hidden[j];
        }
        grad[n1 + 2 * h] += dy;
    }
    (loss, grad)
}

fn loss_only(model: &MlpModel, data: &[(Vec<f64>, f64)]) -> f64 {
    let scale = 1.0 / data.len() as f64;
    data.iter()
        .map(|(x, t)| (model.forward(x).1 - t).powi(2) * scale)
        .sum()
}

fn normalized_data(model: &MlpModel, records: &[TrainingRecord]) -> Vec<(Vec<f64>, f64)> {
    records
        .iter()
        .map(|r| (model.norm.input(&r.features), model.norm.target(r.manual_threshold)))
        .collect()
}

/// Full-batch gradient descent on the mean squared error in normalized space.
///
/// A step that would increase the loss is discarded and the learning rate
/// halved, so the loss never goes up.
pub fn mlp_train(category: &str, records: &[TrainingRecord], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if records.len() < 2 {
        return Err(Error::TooFewRecords {
            required: 2,
            found: records.len(),
        });
    }
    let input_dim = records[0].features.len();
    if input_dim == 0 {
        return Err(Error::invalid("training records", "empty feature vectors"));
    }
    for r in records {
        if r.features.len() != input_dim {
            return Err(Error::DimensionMismatch {
                expected: (input_dim, 1),
                found: (r.features.len(), 1),
            });
        }
        if !r.manual_threshold.is_finite() || r.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("training records", format!("non-finite values in '{}'", r.frame_id)));
        }
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, get: &dyn Fn(&TrainingRecord) -> f64| {
        records.iter().map(get).fold(init, f)
    };
    let t_min = fold(f64::min, f64::INFINITY, &|r| r.manual_threshold);
    let t_max = fold(f64::max, f64::NEG_INFINITY, &|r| r.manual_threshold);
    if t_max <= t_min {
        return Err(Error::Degenerate("training targets"));
    }
    let mut x_min = Vec::with_capacity(input_dim);
    let mut x_max = Vec::with_capacity(input_dim);
    for k in 0..input_dim {
        let lo = fold(f64::min, f64::INFINITY, &|r| r.features[k]);
        let hi = fold(f64::max, f64::NEG_INFINITY, &|r| r.features[k]);
        if hi <= lo {
            return Err(Error::Degenerate("training features"));
        }
        x_min.push(lo);
        x_max.push(hi);
    }

    let h = cfg.hidden_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = cfg.init_scale;
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| (2.0 * rng.random::<f64>() - 1.0) * s).collect() };
    let w1 = draw(h * input_dim);
    let b1 = draw(h);
    let w2 = draw(h);
    let b2 = draw(1)[0];
    let mut model = MlpModel {
        category: category.to_string(),
        input_dim,
        hidden_dim: h,
        w1,
        b1,
        w2,
        b2,
        activation: cfg.activation,
        norm: Normalization {
            x_min,
            x_max,
            t_min,
            t_max,
        },
    };

    let data = normalized_data(&model, records);
    let mut params = model.params();
    let mut lr = cfg.learning_rate;
    let (initial_loss, mut grad) = loss_and_grad(&model, &data);
    let mut loss = initial_loss;
    let mut trial = model.clone();
    for _ in 0..cfg.epochs {
        let next: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - lr * g).collect();
        trial.set_params(&next);
        let (next_loss, next_grad) = loss_and_grad(&trial, &data);
        if next_loss > loss || !next_loss.is_finite() {
            lr /= 2.0;
            continue;
        }
        params = next;
        loss = next_loss;
        grad = next_grad;
    }
    model.set_params(&params);
    model.validate()?;
    let range = t_max - t_min;
    Ok(TrainOutcome {
        final_rmse: loss.sqrt() * range,
        model,
        initial_loss,
        final_loss: loss,
        final_learning_rate: lr,
    })
}

/// Root mean squared error of `model` over `records`, in threshold units.
pub fn rmse(model: &MlpModel, records: &[TrainingRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::TooFewRecords { required: 1, found: 0 });
    }
    let mut sum = 0.0;
    for r in records {
        sum += (mlp_predict(model, &r.features)? - r.manual_threshold).powi(2);
    }
    Ok((sum / records.len() as f64).sqrt())
}

/// Per-parameter comparison of the analytic loss gradient for one record
/// against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `max |a − n| / max(|a|, |n|, 1e-4)`; the floor keeps near-zero
    /// gradients from inflating the ratio.
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

pub fn gradient_check_detail(model: &MlpModel, record: &TrainingRecord, eps: f64) -> Result<GradientCheck> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::invalid("eps", format!("must be in (0, 1e-3], got {eps}")));
    }
    model.validate()?;
    if record.features.len() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: (model.input_dim, 1),
            found: (record.features.len(), 1),
        });
    }
    let data = normalized_data(model, std::slice::from_ref(record));
    let (_, analytic) = loss_and_grad(model, &data);
    let base = model.params();
    let mut probe = model.clone();
    let numeric: Vec<f64> = (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + eps;
            probe.set_params(&p);
            let up = loss_only(&probe, &data);
            p[i] = base[i] - eps;
            probe.set_params(&p);
            let down = loss_only(&probe, &data);
            (up - down) / (2.0 * eps)
        })
        .collect();
    let (mut rel, mut abs) = (0.0f64, 0.0f64);
    for (a, n) in analytic.iter().zip(&numeric) {
        let d = (a - n).abs();
        abs = abs.max(d);
        rel = rel.max(d / a.abs().max(n.abs()).max(1e-4));
    }
    Ok(GradientCheck {
        analytic,
        numeric,
        max_relative_error: rel,
        max_absolute_error: abs,
    })
}

/// Largest relative disagreement between analytic and finite-difference
/// gradients; see [`GradientCheck`].
pub fn gradient_check(model: &MlpModel, record: &TrainingRecord, eps: f64) -> Result<f64> {
    gradient_check_detail(model, record, eps).map(|g| g.max_relative_error)
}

/// `k = mean(manual_threshold / features[0])`.
pub fn linear_baseline_fit(records: &[TrainingRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::TooFewRecords { required: 1, found: 0 });
    }
    let mut sum = 0.0;
    for r in records {
        let mu = r.features.first().copied().unwrap_or(0.0);
        if !(mu > 0.0) {
            return Err(Error::invalid(
                "training records",
                format!("frame '{}' has non-positive average intensity {mu}", r.frame_id),
            ));
        }
        sum += r.manual_threshold / mu;
    }
    Ok(sum / records.len() as f64)
}

pub fn linear_baseline_predict(k: f64, features: &[f64]) -> f64 {
    k * features.first().copied().unwrap_or(0.0)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    #[serde(flatten)]
    model: MlpModel,
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    model.validate()?;
    write_json(
        path.as_ref(),
        &ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            model: model.clone(),
        },
    )
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let file: ModelFile = read_json(path)?;
    if file.schema_version != MODEL_SCHEMA_VERSION {
        return Err(Error::format(
            path,
            format!(
                "model schema_version {} (expected {MODEL_SCHEMA_VERSION})",
                file.schema_version
            ),
        ));
    }
    file.model
        .validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(file.model)
}

/// Directory of models, one `{category}.json` per category.
#[derive(Clone, Debug)]
pub struct ModelRegistry {
    dir: PathBuf,
}

impl ModelRegistry {
    pub fn open(dir: impl Into<PathBuf>) -> Self {
        ModelRegistry { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, category: &str) -> PathBuf {
        self.dir.join(format!("{category}.json"))
    }

    pub fn contains(&self, category: &str) -> bool {
        self.path(category).is_file()
    }

    pub fn save(&self, model: &MlpModel) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path(&model.category);
        save_model(model, &path)?;
        Ok(path)
    }

    pub fn load(&self, category: &str) -> Result<MlpModel> {
        let path = self.path(category);
        if !path.is_file() {
            return Err(Error::NoModel(category.to_string()));
        }
        load_model(path)
    }
}
