//! Per-bin predictor: logistic regression or one rectified hidden layer,
//! trained by mini-batch gradient descent on class-weighted cross-entropy
//! with L2 on the weights (biases are not penalized).

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub width: usize,
    pub data: Vec<f64>,
}

impl Design {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            data: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.width);
        self.data.extend_from_slice(row);
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub inputs: usize,
    pub hidden: usize,
}

impl Shape {
    pub fn param_count(&self) -> usize {
        if self.hidden == 0 {
            self.inputs + 1
        } else {
            self.hidden * self.inputs + 2 * self.hidden + 1
        }
    }

    /// Whether parameter `i` is a weight (penalized) rather than a bias.
    fn is_weight(&self, i: usize) -> bool {
        if self.hidden == 0 {
            i < self.inputs
        } else {
            let w1 = self.hidden * self.inputs;
            i < w1 || (w1 + self.hidden..w1 + 2 * self.hidden).contains(&i)
        }
    }

    /// Zero logistic weights; uniform Glorot-style draws for the hidden layer.
    pub fn initial_params(&self, rng: &mut SplitMix64) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        if self.hidden > 0 {
            let w1 = self.hidden * self.inputs;
            let limit_in = (6.0 / (self.inputs + self.hidden) as f64).sqrt();
            for p in &mut params[..w1] {
                *p = (2.0 * rng.next_f64() - 1.0) * limit_in;
            }
            let limit_out = (6.0 / (self.hidden + 1) as f64).sqrt();
            for p in &mut params[w1 + self.hidden..w1 + 2 * self.hidden] {
                *p = (2.0 * rng.next_f64() - 1.0) * limit_out;
            }
        }
        params
    }

    fn logit(&self, params: &[f64], x: &[f64], hidden_out: &mut [f64]) -> f64 {
        if self.hidden == 0 {
            dot(&params[..self.inputs], x) + params[self.inputs]
        } else {
            let w1 = self.hidden * self.inputs;
            let (b1, rest) = params[w1..].split_at(self.hidden);
            let (w2, b2) = rest.split_at(self.hidden);
            let mut z = b2[0];
            for h in 0..self.hidden {
                let pre = dot(&params[h * self.inputs..(h + 1) * self.inputs], x) + b1[h];
                let a = pre.max(0.0);
                hidden_out[h] = pre;
                z += w2[h] * a;
            }
            z
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Training objective on `subset` rows and its gradient:
/// `sum_i s_i * CE_i / sum_i s_i + l2/2 * |weights|^2`, where `s_i` is
/// `positive_weight` for positive rows and 1 otherwise.
pub fn objective(
    shape: Shape,
    params: &[f64],
    design: &Design,
    subset: &[usize],
    labels: &[bool],
    positive_weight: f64,
    l2: f64,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let mut pre = vec![0.0; shape.hidden];
    let mut loss = 0.0;
    let mut total_weight = 0.0;
    for &i in subset {
        let x = design.row(i);
        let y = labels[i];
        let s = if y { positive_weight } else { 1.0 };
        let z = shape.logit(params, x, &mut pre);
        let y_f = if y { 1.0 } else { 0.0 };
        loss += s * (softplus(z) - y_f * z);
        total_weight += s;
        let g = s * (sigmoid(z) - y_f);
        if shape.hidden == 0 {
            for (gw, xj) in grad[..shape.inputs].iter_mut().zip(x) {
                *gw += g * xj;
            }
            grad[shape.inputs] += g;
        } else {
            let w1 = shape.hidden * shape.inputs;
            let w2_off = w1 + shape.hidden;
            for h in 0..shape.hidden {
                let a = pre[h].max(0.0);
                grad[w2_off + h] += g * a;
                if pre[h] > 0.0 {
                    let d = g * params[w2_off + h];
                    for (gw, xj) in grad[h * shape.inputs..(h + 1) * shape.inputs]
                        .iter_mut()
                        .zip(x)
                    {
                        *gw += d * xj;
                    }
                    grad[w1 + h] += d;
                }
            }
            grad[w2_off + shape.hidden] += g;
        }
    }
    if total_weight > 0.0 {
        loss /= total_weight;
        for g in &mut grad {
            *g /= total_weight;
        }
    }
    for (i, (g, p)) in grad.iter_mut().zip(params).enumerate() {
        if shape.is_weight(i) {
            loss += 0.5 * l2 * p * p;
            *g += l2 * p;
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub epochs: u32,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub positive_weight: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: Vec<f64>,
    pub epochs: u32,
    /// Full training-split loss before training and after every epoch.
    pub loss_history: Vec<f64>,
}

/// Mini-batch descent. After each epoch the full training loss is
/// recomputed; an epoch that raises it is rolled back and the step halved.
pub fn fit(
    shape: Shape,
    design: &Design,
    labels: &[bool],
    train: &[usize],
    options: &FitOptions,
    rng: &mut SplitMix64,
) -> FitOutcome {
    let mut params = shape.initial_params(rng);
    let mut lr = options.learning_rate;
    let full_loss = |p: &[f64]| {
        objective(shape, p, design, train, labels, options.positive_weight, options.l2).0
    };
    let mut best_loss = full_loss(&params);
    let mut history = vec![best_loss];
    let mut order = train.to_vec();
    let batch = options.batch_size.max(1);

    for _ in 0..options.epochs {
        let snapshot = params.clone();
        rng.shuffle(&mut order);
        for chunk in order.chunks(batch) {
            let (_, grad) = objective(
                shape,
                &params,
                design,
                chunk,
                labels,
                options.positive_weight,
                options.l2,
            );
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
        }
        let loss = full_loss(&params);
        if loss.is_finite() && loss <= best_loss {
            best_loss = loss;
        } else {
            params = snapshot;
            lr *= 0.5;
        }
        history.push(best_loss);
    }
    FitOutcome {
        params,
        epochs: options.epochs,
        loss_history: history,
    }
}

/// Stored form of a trained predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum Network {
    Logistic {
        weights: Vec<f64>,
        bias: f64,
    },
    Hidden {
        input_weights: Vec<Vec<f64>>,
        hidden_bias: Vec<f64>,
        output_weights: Vec<f64>,
        bias: f64,
    },
}

impl Network {
    pub fn from_params(shape: Shape, params: &[f64]) -> Self {
        assert_eq!(params.len(), shape.param_count());
        if shape.hidden == 0 {
            Network::Logistic {
                weights: params[..shape.inputs].to_vec(),
                bias: params[shape.inputs],
            }
        } else {
            let w1 = shape.hidden * shape.inputs;
            Network::Hidden {
                input_weights: params[..w1]
                    .chunks(shape.inputs.max(1))
                    .map(<[f64]>::to_vec)
                    .collect(),
                hidden_bias: params[w1..w1 + shape.hidden].to_vec(),
                output_weights: params[w1 + shape.hidden..w1 + 2 * shape.hidden].to_vec(),
                bias: params[w1 + 2 * shape.hidden],
            }
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            Network::Logistic { weights, .. } => weights.len(),
            Network::Hidden { input_weights, .. } => input_weights.first().map_or(0, Vec::len),
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        match self {
            Network::Logistic { weights, bias } => dot(weights, x) + bias,
            Network::Hidden {
                input_weights,
                hidden_bias,
                output_weights,
                bias,
            } => {
                let mut z = *bias;
                for ((w, b), v) in input_weights.iter().zip(hidden_bias).zip(output_weights) {
                    z += v * (dot(w, x) + b).max(0.0);
                }
                z
            }
        }
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Mean absolute first-layer weight per input feature.
    pub fn input_magnitudes(&self) -> Vec<f64> {
        match self {
            Network::Logistic { weights, .. } => weights.iter().map(|w| w.abs()).collect(),
            Network::Hidden { input_weights, .. } => {
                let n = self.inputs();
                let mut out = vec![0.0; n];
                for row in input_weights {
                    for (o, w) in out.iter_mut().zip(row) {
                        *o += w.abs();
                    }
                }
                let units = input_weights.len().max(1) as f64;
                out.iter_mut().for_each(|o| *o /= units);
                out
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Network::Logistic { weights, bias } => {
                bias.is_finite() && weights.iter().all(|w| w.is_finite())
            }
            Network::Hidden {
                input_weights,
                hidden_bias,
                output_weights,
                bias,
            } => {
                bias.is_finite()
                    && input_weights.iter().flatten().all(|w| w.is_finite())
                    && hidden_bias.iter().all(|w| w.is_finite())
                    && output_weights.iter().all(|w| w.is_finite())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(rows: usize, width: usize, seed: u64) -> (Design, Vec<bool>) {
        let mut rng = SplitMix64::new(seed);
        let mut d = Design::new(width);
        let mut labels = Vec::new();
        for _ in 0..rows {
            let row: Vec<f64> = (0..width).map(|_| rng.next_f64()).collect();
            labels.push(row[0] > 0.5);
            d.push_row(&row);
        }
        (d, labels)
    }

    #[test]
    fn params_map_onto_network_and_back() {
        for hidden in [0, 3] {
            let shape = Shape { inputs: 4, hidden };
            let params: Vec<f64> = (0..shape.param_count()).map(|i| i as f64 * 0.01 - 0.1).collect();
            let net = Network::from_params(shape, &params);
            let x = [0.2, 0.4, 0.6, 0.8];
            let mut scratch = vec![0.0; hidden];
            assert!((net.logit(&x) - shape.logit(&params, &x, &mut scratch)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_model_predicts_one_half() {
        let net = Network::Logistic {
            weights: vec![0.0; 3],
            bias: 0.0,
        };
        assert_eq!(net.probability(&[0.3, 0.1, 0.9]), 0.5);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!((softplus(-800.0)).abs() < 1e-300);
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn hidden_gradient_matches_finite_differences() {
        let (design, labels) = toy(40, 3, 5);
        let shape = Shape { inputs: 3, hidden: 4 };
        let subset: Vec<usize> = (0..40).collect();
        let mut rng = SplitMix64::new(11);
        let params = shape.initial_params(&mut rng);
        let (_, grad) = objective(shape, &params, &design, &subset, &labels, 2.0, 1e-3);
        let h = 1e-6;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus[i] += h;
            let mut minus = params.clone();
            minus[i] -= h;
            let fd = (objective(shape, &plus, &design, &subset, &labels, 2.0, 1e-3).0
                - objective(shape, &minus, &design, &subset, &labels, 2.0, 1e-3).0)
                / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn fit_never_increases_recorded_loss() {
        let (design, labels) = toy(200, 2, 9);
        let train: Vec<usize> = (0..200).collect();
        let opts = FitOptions {
            epochs: 50,
            learning_rate: 5.0,
            l2: 1e-4,
            batch_size: 32,
            positive_weight: 1.0,
        };
        let out = fit(Shape { inputs: 2, hidden: 0 }, &design, &labels, &train, &opts, &mut SplitMix64::new(1));
        assert!(out.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.loss_history.last().unwrap() < &out.loss_history[0]);
    }
}
