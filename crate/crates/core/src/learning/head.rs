//! Fully connected classification head: standardised input, one ReLU hidden
//! layer with dropout, two-way softmax; trained with RMSprop.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{QcError, Result};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub hidden_units: usize,
    pub dropout_rate: f64,
    pub output_classes: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden_units: 256,
            dropout_rate: 0.5,
            output_classes: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassBalance {
    None,
    #[default]
    Weighted,
    Oversample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub class_balance: ClassBalance,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 2e-4,
            rho: 0.9,
            epsilon: 1e-7,
            batch_size: 32,
            class_balance: ClassBalance::Weighted,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(QcError::Config("epochs and batch size must be >= 1 and learning rate > 0".into()));
        }
        if !(0.0..1.0).contains(&self.rho) || !(self.epsilon > 0.0) {
            return Err(QcError::Config("RMSprop rho must be in [0, 1) and epsilon > 0".into()));
        }
        Ok(())
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 || self.output_classes != 2 || !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(QcError::Config("head needs >= 1 hidden unit, 2 classes and dropout in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    mean: Array1<f64>,
    scale: Array1<f64>,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTrainLog {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Requires at least `min` samples of each class.
pub(crate) fn check_classes(y: &[usize], min: usize) -> Result<[usize; 2]> {
    let mut counts = [0usize; 2];
    for &c in y {
        if c > 1 {
            return Err(QcError::Labels(format!("class index {c} out of range")));
        }
        counts[c] += 1;
    }
    if counts[0] < min || counts[1] < min {
        return Err(QcError::SingleClass(format!(
            "need at least {min} samples per class, got {} artifact-free and {} artifactual",
            counts[0], counts[1]
        )));
    }
    Ok(counts)
}

struct Grads {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

impl Mlp {
    fn init(x: ArrayView2<f64>, hidden: usize, seed: u64) -> Self {
        let d = x.ncols();
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-8 { s } else { 1.0 });
        let mut rng = stream(seed, "head-init");
        let n1 = Normal::new(0.0, (2.0 / d as f64).sqrt()).expect("valid sigma");
        let n2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("valid sigma");
        Mlp {
            mean,
            scale,
            w1: Array2::from_shape_simple_fn((d, hidden), || n1.sample(&mut rng)),
            b1: Array1::zeros(hidden),
            w2: Array2::from_shape_simple_fn((hidden, 2), || n2.sample(&mut rng)),
            b2: Array1::zeros(2),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    fn standardize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }

    /// `P(artifactual)` per row; dropout is inactive.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(QcError::invalid(format!(
                "head expects {} features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let h = (self.standardize(x).dot(&self.w1) + &self.b1).mapv(|v| v.max(0.0));
        let z = h.dot(&self.w2) + &self.b2;
        Ok(z.rows().into_iter().map(|r| sigmoid(r[1] - r[0])).collect())
    }

    fn step<R: Rng>(
        &self,
        xb: &Array2<f64>,
        yb: &[usize],
        wb: &[f64],
        dropout: f64,
        rng: &mut R,
    ) -> (f64, Grads) {
        let n = xb.nrows();
        let pre = xb.dot(&self.w1) + &self.b1;
        let keep = 1.0 - dropout;
        let mask = Array2::from_shape_simple_fn(pre.dim(), || {
            if dropout == 0.0 || rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let h = pre.mapv(|v| v.max(0.0)) * &mask;
        let z = h.dot(&self.w2) + &self.b2;
        let wsum: f64 = wb.iter().sum();
        let mut dz = Array2::<f64>::zeros((n, 2));
        let mut loss = 0.0;
        for i in 0..n {
            let p1 = sigmoid(z[(i, 1)] - z[(i, 0)]);
            let p = [1.0 - p1, p1];
            let py = p[yb[i]];
            loss -= wb[i] * if py.is_nan() { f64::NAN } else { py.max(1e-300).ln() };
            for c in 0..2 {
                let target = if c == yb[i] { 1.0 } else { 0.0 };
                dz[(i, c)] = wb[i] * (p[c] - target) / wsum;
            }
        }
        let dh = dz.dot(&self.w2.t()) * &mask;
        let dpre = ndarray::Zip::from(&dh).and(&pre).map_collect(|&g, &v| if v > 0.0 { g } else { 0.0 });
        let grads = Grads {
            w1: xb.t().dot(&dpre),
            b1: dpre.sum_axis(Axis(0)),
            w2: h.t().dot(&dz),
            b2: dz.sum_axis(Axis(0)),
        };
        (loss / wsum, grads)
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

struct RmsProp {
    s: Grads,
    lr: f64,
    rho: f64,
    eps: f64,
}

impl RmsProp {
    fn new(m: &Mlp, cfg: &TrainConfig) -> Self {
        RmsProp {
            s: Grads {
                w1: Array2::zeros(m.w1.dim()),
                b1: Array1::zeros(m.b1.len()),
                w2: Array2::zeros(m.w2.dim()),
                b2: Array1::zeros(2),
            },
            lr: cfg.learning_rate,
            rho: cfg.rho,
            eps: cfg.epsilon,
        }
    }

    fn apply(&mut self, m: &mut Mlp, g: &Grads) {
        let (lr, rho, eps) = (self.lr, self.rho, self.eps);
        let upd = |p: &mut f64, s: &mut f64, g: f64| {
            *s = rho * *s + (1.0 - rho) * g * g;
            *p -= lr * g / (s.sqrt() + eps);
        };
        ndarray::Zip::from(&mut m.w1).and(&mut self.s.w1).and(&g.w1).for_each(|p, s, &g| upd(p, s, g));
        ndarray::Zip::from(&mut m.b1).and(&mut self.s.b1).and(&g.b1).for_each(|p, s, &g| upd(p, s, g));
        ndarray::Zip::from(&mut m.w2).and(&mut self.s.w2).and(&g.w2).for_each(|p, s, &g| upd(p, s, g));
        ndarray::Zip::from(&mut m.b2).and(&mut self.s.b2).and(&g.b2).for_each(|p, s, &g| upd(p, s, g));
    }
}

/// Trains a head on feature rows `x` with class indices `y`. With `warm`,
/// training continues from those parameters and their input scaling.
pub fn train_head(
    x: ArrayView2<f64>,
    y: &[usize],
    head: &HeadConfig,
    train: &TrainConfig,
    warm: Option<&Mlp>,
) -> Result<(Mlp, HeadTrainLog)> {
    head.validate()?;
    train.validate()?;
    if x.nrows() != y.len() {
        return Err(QcError::invalid("feature rows and labels differ in length"));
    }
    let counts = check_classes(y, 2)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(QcError::invalid("non-finite training features"));
    }
    let mut model = match warm {
        Some(m) if m.input_dim() == x.ncols() => m.clone(),
        Some(m) => {
            return Err(QcError::invalid(format!(
                "warm start expects {} features, got {}",
                m.input_dim(),
                x.ncols()
            )))
        }
        None => Mlp::init(x, head.hidden_units, train.seed),
    };
    let xs = model.standardize(x);
    let n = y.len();
    let class_weight = match train.class_balance {
        ClassBalance::Weighted => [n as f64 / (2.0 * counts[0] as f64), n as f64 / (2.0 * counts[1] as f64)],
        _ => [1.0, 1.0],
    };
    let mut rng = stream(train.seed, "head-train");
    let mut opt = RmsProp::new(&model, train);
    let mut epoch_losses = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if train.class_balance == ClassBalance::Oversample {
            let minority = if counts[0] < counts[1] { 0 } else { 1 };
            let pool: Vec<usize> = (0..n).filter(|&i| y[i] == minority).collect();
            let extra = counts[1 - minority] - counts[minority];
            order.extend((0..extra).map(|_| pool[rng.random_range(0..pool.len())]));
        }
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for (b, chunk) in order.chunks(train.batch_size).enumerate() {
            let xb = xs.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let wb: Vec<f64> = yb.iter().map(|&c| class_weight[c]).collect();
            let (loss, grads) = model.step(&xb, &yb, &wb, head.dropout_rate, &mut rng);
            if !loss.is_finite() {
                return Err(QcError::Diverged(format!(
                    "loss became {loss} at epoch {}, batch {b} (lr {})",
                    epoch + 1,
                    train.learning_rate
                )));
            }
            opt.apply(&mut model, &grads);
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        epoch_losses.push(total / seen as f64);
        log::debug!("epoch {}/{}: loss {:.5}", epoch + 1, train.epochs, epoch_losses[epoch]);
    }
    let probs = model.predict_proba(x)?;
    let correct = probs.iter().zip(y).filter(|(&p, &c)| usize::from(p > 0.5) == c).count();
    Ok((
        model,
        HeadTrainLog {
            epoch_losses,
            train_accuracy: correct as f64 / n as f64,
        },
    ))
}
