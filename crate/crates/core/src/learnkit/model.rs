//! The 60-20-10 feedforward classifier, its logistic-regression cousin for
//! convex sanity checks, and exact analytic gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Network shape; parameters travel as flat `Vec<f64>` everywhere else.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelArch {
    Mlp {
        input: usize,
        hidden: usize,
        classes: usize,
        activation: Activation,
    },
    Logistic {
        input: usize,
        classes: usize,
    },
}

impl ModelArch {
    pub fn mlp_default() -> Self {
        ModelArch::Mlp {
            input: 60,
            hidden: 20,
            classes: 10,
            activation: Activation::Tanh,
        }
    }

    pub fn logistic_default() -> Self {
        ModelArch::Logistic {
            input: 60,
            classes: 10,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            ModelArch::Mlp {
                input,
                hidden,
                classes,
                ..
            } => hidden * input + hidden + classes * hidden + classes,
            ModelArch::Logistic { input, classes } => classes * input + classes,
        }
    }

    pub fn input(&self) -> usize {
        match *self {
            ModelArch::Mlp { input, .. } | ModelArch::Logistic { input, .. } => input,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            ModelArch::Mlp { classes, .. } | ModelArch::Logistic { classes, .. } => classes,
        }
    }

    /// Gaussian N(0, 0.05^2) initialization, reproducible from the seed.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.dim())
            .map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn loss_grad(&self, params: &[f64], x: ArrayView2<f64>, y: &[u8]) -> Result<(f64, Vec<f64>)> {
        self.forward(params, x, y, true)
            .map(|(loss, grad)| (loss, grad.expect("gradient requested")))
    }

    /// Mean cross-entropy only.
    pub fn loss(&self, params: &[f64], x: ArrayView2<f64>, y: &[u8]) -> Result<f64> {
        self.forward(params, x, y, false).map(|(loss, _)| loss)
    }

    pub fn predict_batch(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Vec<u8>> {
        let logits = self.logits(params, x)?;
        Ok(logits
            .axis_iter(Axis(0))
            .map(|row| {
                let mut best = 0usize;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best as u8
            })
            .collect())
    }

    fn check_batch(&self, params: &[f64], x: ArrayView2<f64>, y: &[u8]) -> Result<()> {
        if params.len() != self.dim() {
            return Err(SimError::LengthMismatch(format!(
                "parameter vector has {} entries, expected {}",
                params.len(),
                self.dim()
            )));
        }
        if x.nrows() == 0 {
            return Err(SimError::Degenerate("empty batch".into()));
        }
        if x.ncols() != self.input() {
            return Err(SimError::LengthMismatch(format!(
                "batch has {} features, expected {}",
                x.ncols(),
                self.input()
            )));
        }
        if y.len() != x.nrows() {
            return Err(SimError::LengthMismatch(format!(
                "{} labels for {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if let Some(bad) = y.iter().position(|&c| c as usize >= self.classes()) {
            return Err(SimError::Domain(format!(
                "label {} at batch index {bad} exceeds {} classes",
                y[bad],
                self.classes()
            )));
        }
        Ok(())
    }

    fn logits(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match *self {
            ModelArch::Mlp {
                input,
                hidden,
                classes,
                activation,
            } => {
                let p = MlpParams::unflatten(params, input, hidden, classes)?;
                let z1 = x.dot(&p.w1.t()) + &p.b1;
                let h = z1.mapv(|v| activation.apply(v));
                Ok(h.dot(&p.w2.t()) + &p.b2)
            }
            ModelArch::Logistic { input, classes } => {
                let w = ArrayView2::from_shape((classes, input), &params[..classes * input])
                    .expect("checked dims");
                let b = &params[classes * input..];
                let mut z = x.dot(&w.t());
                for mut row in z.axis_iter_mut(Axis(0)) {
                    for (v, bj) in row.iter_mut().zip(b) {
                        *v += bj;
                    }
                }
                Ok(z)
            }
        }
    }

    fn forward(
        &self,
        params: &[f64],
        x: ArrayView2<f64>,
        y: &[u8],
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>)> {
        self.check_batch(params, x, y)?;
        let batch = x.nrows();
        let classes = self.classes();

        // Hidden pre-activation is kept for the backward pass.
        let (z1, h, z2) = match *self {
            ModelArch::Mlp {
                input,
                hidden,
                classes,
                activation,
            } => {
                let p = MlpParams::unflatten(params, input, hidden, classes)?;
                let z1 = x.dot(&p.w1.t()) + &p.b1;
                let h = z1.mapv(|v| activation.apply(v));
                let z2 = h.dot(&p.w2.t()) + &p.b2;
                (Some(z1), Some(h), z2)
            }
            ModelArch::Logistic { .. } => (None, None, self.logits(params, x)?),
        };

        // Log-sum-exp stabilized softmax cross-entropy.
        let mut loss = 0.0;
        let mut probs = Array2::<f64>::zeros((batch, classes));
        for (i, row) in z2.axis_iter(Axis(0)).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let sample_loss = lse - row[y[i] as usize];
            if !sample_loss.is_finite() {
                return Err(SimError::NonFinite(format!(
                    "loss diverged at batch index {i}"
                )));
            }
            loss += sample_loss;
            for (j, v) in row.iter().enumerate() {
                probs[(i, j)] = (v - lse).exp();
            }
        }
        loss /= batch as f64;

        if !want_grad {
            return Ok((loss, None));
        }

        // dL/dz2 = (softmax - onehot) / batch.
        let mut dz2 = probs;
        for (i, &label) in y.iter().enumerate() {
            dz2[(i, label as usize)] -= 1.0;
        }
        dz2.mapv_inplace(|v| v / batch as f64);

        let grad = match *self {
            ModelArch::Mlp {
                input,
                hidden,
                classes,
                activation,
            } => {
                let p = MlpParams::unflatten(params, input, hidden, classes)?;
                let z1 = z1.expect("mlp forward keeps z1");
                let h = h.expect("mlp forward keeps h");
                let gw2 = dz2.t().dot(&h);
                let gb2 = dz2.sum_axis(Axis(0));
                let dh = dz2.dot(&p.w2);
                let dz1 = &dh * &z1.mapv(|v| activation.derivative(v));
                let gw1 = dz1.t().dot(&x);
                let gb1 = dz1.sum_axis(Axis(0));
                MlpParams {
                    w1: gw1,
                    b1: gb1,
                    w2: gw2,
                    b2: gb2,
                }
                .flatten()
            }
            ModelArch::Logistic { .. } => {
                let gw = dz2.t().dot(&x);
                let gb = dz2.sum_axis(Axis(0));
                let mut grad = Vec::with_capacity(self.dim());
                grad.extend(gw.iter());
                grad.extend(gb.iter());
                grad
            }
        };
        if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
            return Err(SimError::NonFinite(format!(
                "gradient entry {i} is not finite"
            )));
        }
        Ok((loss, Some(grad)))
    }
}

/// Structured view of the two-layer network's parameters.
/// `flatten` and `unflatten` are exact inverses.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpParams {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len());
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out
    }

    pub fn unflatten(flat: &[f64], input: usize, hidden: usize, classes: usize) -> Result<Self> {
        let expected = hidden * input + hidden + classes * hidden + classes;
        if flat.len() != expected {
            return Err(SimError::LengthMismatch(format!(
                "flat vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let mut at = 0;
        let w1 = Array2::from_shape_vec((hidden, input), flat[at..at + hidden * input].to_vec())
            .expect("shape checked");
        at += hidden * input;
        let b1 = Array1::from_vec(flat[at..at + hidden].to_vec());
        at += hidden;
        let w2 = Array2::from_shape_vec((classes, hidden), flat[at..at + classes * hidden].to_vec())
            .expect("shape checked");
        at += classes * hidden;
        let b2 = Array1::from_vec(flat[at..].to_vec());
        Ok(Self { w1, b1, w2, b2 })
    }
}
