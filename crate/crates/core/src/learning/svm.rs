//! Two-class C-SVM trained by SMO with second-order working-set selection,
//! with Platt-scaled probabilities.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::head::check_classes;
use crate::error::{QcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Rbf,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub kernel: Kernel,
    pub c: f64,
    /// RBF width; `None` uses `1 / (d * var(X))`.
    pub gamma: Option<f64>,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            kernel: Kernel::Rbf,
            c: 1.0,
            gamma: None,
            tolerance: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Svm {
    kernel: Kernel,
    gamma: f64,
    support: Array2<f64>,
    /// `alpha_i * y_i` per support vector.
    coef: Array1<f64>,
    rho: f64,
    platt: (f64, f64),
    pub iterations: usize,
}

fn kernel_value(kernel: Kernel, gamma: f64, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    match kernel {
        Kernel::Linear => a.dot(&b),
        Kernel::Rbf => {
            let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            (-gamma * d2).exp()
        }
    }
}

const TAU: f64 = 1e-12;

impl Svm {
    pub fn fit(x: ArrayView2<f64>, labels: &[usize], config: &SvmConfig) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(QcError::invalid("feature rows and labels differ in length"));
        }
        if !(config.c > 0.0) || !(config.tolerance > 0.0) {
            return Err(QcError::Config("SVM needs C > 0 and tolerance > 0".into()));
        }
        check_classes(labels, 2)?;
        let (n, d) = x.dim();
        let gamma = match config.gamma {
            Some(g) if g > 0.0 => g,
            Some(g) => return Err(QcError::Config(format!("gamma {g} must be positive"))),
            None => {
                let m = x.mean().unwrap_or(0.0);
                let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64;
                if var > 0.0 {
                    1.0 / (d as f64 * var)
                } else {
                    1.0
                }
            }
        };
        let y: Vec<f64> = labels.iter().map(|&c| if c == 1 { 1.0 } else { -1.0 }).collect();
        let k = Array2::from_shape_fn((n, n), |(i, j)| kernel_value(config.kernel, gamma, x.row(i), x.row(j)));
        let q = |i: usize, j: usize| y[i] * y[j] * k[(i, j)];
        let c = config.c;
        let mut alpha = vec![0.0; n];
        let mut grad = vec![-1.0; n];
        let is_upper = |a: f64| a >= c;
        let is_lower = |a: f64| a <= 0.0;
        let mut iterations = 0;
        while iterations < config.max_iter {
            let mut gmax = f64::NEG_INFINITY;
            let mut i_sel = None;
            for t in 0..n {
                let v = if y[t] > 0.0 {
                    (!is_upper(alpha[t])).then_some(-grad[t])
                } else {
                    (!is_lower(alpha[t])).then_some(grad[t])
                };
                if let Some(v) = v {
                    if v >= gmax {
                        gmax = v;
                        i_sel = Some(t);
                    }
                }
            }
            let Some(i) = i_sel else { break };
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j_sel = None;
            let mut obj_min = f64::INFINITY;
            for t in 0..n {
                let (eligible, grad_diff, g2) = if y[t] > 0.0 {
                    (!is_lower(alpha[t]), gmax + grad[t], grad[t])
                } else {
                    (!is_upper(alpha[t]), gmax - grad[t], -grad[t])
                };
                if !eligible {
                    continue;
                }
                gmax2 = gmax2.max(g2);
                if grad_diff > 0.0 {
                    let quad = k[(i, i)] + k[(t, t)] - 2.0 * k[(i, t)];
                    let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = Some(t);
                    }
                }
            }
            let Some(j) = j_sel.filter(|_| gmax + gmax2 >= config.tolerance) else { break };
            iterations += 1;

            let (old_i, old_j) = (alpha[i], alpha[j]);
            if y[i] != y[j] {
                let quad = (k[(i, i)] + k[(j, j)] + 2.0 * q(i, j)).max(TAU);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = (k[(i, i)] + k[(j, j)] - 2.0 * q(i, j)).max(TAU);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            for t in 0..n {
                grad[t] += q(i, t) * di + q(j, t) * dj;
            }
        }

        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free, mut sum_free) = (0usize, 0.0);
        for t in 0..n {
            let yg = y[t] * grad[t];
            if is_upper(alpha[t]) {
                if y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if is_lower(alpha[t]) {
                if y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum_free += yg;
            }
        }
        let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };

        let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
        let support = x.select(ndarray::Axis(0), &sv);
        let coef: Array1<f64> = sv.iter().map(|&t| alpha[t] * y[t]).collect();
        let decision: Vec<f64> = (0..n)
            .map(|r| sv.iter().zip(coef.iter()).map(|(&t, a)| a * k[(t, r)]).sum::<f64>() - rho)
            .collect();
        let platt = platt_fit(&decision, labels);
        Ok(Svm {
            kernel: config.kernel,
            gamma,
            support,
            coef,
            rho,
            platt,
            iterations,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.support.ncols()
    }

    pub fn decision_function(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(QcError::invalid(format!("SVM expects {} features, got {}", self.input_dim(), x.ncols())));
        }
        Ok(x.rows()
            .into_iter()
            .map(|r| {
                self.support
                    .rows()
                    .into_iter()
                    .zip(self.coef.iter())
                    .map(|(s, a)| a * kernel_value(self.kernel, self.gamma, s, r))
                    .sum::<f64>()
                    - self.rho
            })
            .collect())
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let (a, b) = self.platt;
        Ok(self
            .decision_function(x)?
            .into_iter()
            .map(|f| {
                let z = a * f + b;
                if z >= 0.0 {
                    (-z).exp() / (1.0 + (-z).exp())
                } else {
                    1.0 / (1.0 + z.exp())
                }
            })
            .collect())
    }
}

/// Sigmoid `P(y=1|f) = 1 / (1 + exp(A f + B))` fitted by regularised
/// maximum likelihood with Newton steps and backtracking.
fn platt_fit(dec: &[f64], labels: &[usize]) -> (f64, f64) {
    let prior1 = labels.iter().filter(|&&c| c == 1).count() as f64;
    let prior0 = labels.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = labels.iter().map(|&c| if c == 1 { hi } else { lo }).collect();
    let (max_iter, min_step, sigma, eps) = (100, 1e-10, 1e-12, 1e-5);
    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let objective = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (1.0 + (-z).exp()).ln()
                } else {
                    (ti - 1.0) * z + (1.0 + z.exp()).ln()
                }
            })
            .sum()
    };
    let mut fval = objective(a, b);
    for _ in 0..max_iter {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
        for (&f, &ti) in dec.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                ((-z).exp() / (1.0 + (-z).exp()), 1.0 / (1.0 + (-z).exp()))
            } else {
                (1.0 / (1.0 + z.exp()), z.exp() / (1.0 + z.exp()))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < eps && g2.abs() < eps {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= min_step {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < min_step {
            break;
        }
    }
    (a, b)
}
