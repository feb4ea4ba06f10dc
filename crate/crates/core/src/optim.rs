//! First-order optimizers: plain SGD and Adam.
//!
//! `opt_step` mutates the model in place. A non-finite gradient entry aborts
//! the step with a numeric error before any parameter is touched.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Gradients, MlpModel};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    w_m: Matrix,
    w_v: Matrix,
    b_m: Vec<f64>,
    b_v: Vec<f64>,
}

/// Optimizer buffers. SGD keeps none; Adam keeps first and second moments plus
/// the step counter used for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    optimizer: Optimizer,
    step: u64,
    moments: Vec<Moments>,
}

impl OptState {
    pub fn new(optimizer: Optimizer, model: &MlpModel) -> Self {
        let moments = match optimizer {
            Optimizer::Sgd => Vec::new(),
            Optimizer::Adam => model
                .layers()
                .iter()
                .map(|l| Moments {
                    w_m: Matrix::zeros(l.in_dim(), l.out_dim()),
                    w_v: Matrix::zeros(l.in_dim(), l.out_dim()),
                    b_m: vec![0.0; l.out_dim()],
                    b_v: vec![0.0; l.out_dim()],
                })
                .collect(),
        };
        OptState {
            optimizer,
            step: 0,
            moments,
        }
    }

    pub fn optimizer(&self) -> Optimizer {
        self.optimizer
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// Applies one update: `W -= lr * G` for SGD, bias-corrected moment update for
/// Adam (betas 0.9/0.999, eps 1e-8).
pub fn opt_step(
    model: &mut MlpModel,
    grads: &Gradients,
    state: &mut OptState,
    lr: f64,
) -> Result<()> {
    if grads.layers.len() != model.layers().len() {
        return Err(Error::Shape(format!(
            "opt_step: {} gradient layers for {} model layers",
            grads.layers.len(),
            model.layers().len()
        )));
    }
    for (l, (ml, gl)) in model.layers().iter().zip(&grads.layers).enumerate() {
        if ml.weights.rows() != gl.weights.rows()
            || ml.weights.cols() != gl.weights.cols()
            || ml.bias.len() != gl.bias.len()
        {
            return Err(Error::Shape(format!(
                "opt_step: gradient shape mismatch at layer {l}"
            )));
        }
    }
    if !grads.is_finite() {
        return Err(Error::Numeric(
            "opt_step: non-finite gradient entry, step aborted".into(),
        ));
    }

    state.step += 1;
    match state.optimizer {
        Optimizer::Sgd => {
            for (ml, gl) in model.layers_mut().iter_mut().zip(&grads.layers) {
                for (w, &g) in ml.weights.data_mut().iter_mut().zip(gl.weights.data()) {
                    *w -= lr * g;
                }
                for (b, &g) in ml.bias.iter_mut().zip(&gl.bias) {
                    *b -= lr * g;
                }
            }
        }
        Optimizer::Adam => {
            let t = state.step as f64;
            let bc1 = 1.0 - ADAM_BETA1.powf(t);
            let bc2 = 1.0 - ADAM_BETA2.powf(t);
            for ((ml, gl), mom) in model
                .layers_mut()
                .iter_mut()
                .zip(&grads.layers)
                .zip(&mut state.moments)
            {
                adam_update(
                    ml.weights.data_mut(),
                    gl.weights.data(),
                    mom.w_m.data_mut(),
                    mom.w_v.data_mut(),
                    lr,
                    bc1,
                    bc2,
                );
                adam_update(
                    &mut ml.bias,
                    &gl.bias,
                    &mut mom.b_m,
                    &mut mom.b_v,
                    lr,
                    bc1,
                    bc2,
                );
            }
        }
    }
    Ok(())
}

fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer, MlpModel};

    fn tiny_model() -> MlpModel {
        MlpModel::from_parts(
            vec![Layer {
                weights: Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
                bias: vec![0.5, -0.5],
            }],
            Activation::Relu,
            0.0,
            2,
        )
        .unwrap()
    }

    fn const_grads(model: &MlpModel, value: f64) -> Gradients {
        let mut g = Gradients::zeros_like(model);
        for l in &mut g.layers {
            for v in l.weights.data_mut() {
                *v = value;
            }
            for v in &mut l.bias {
                *v = value;
            }
        }
        g
    }

    #[test]
    fn sgd_step_is_w_minus_lr_g() {
        let mut model = tiny_model();
        let grads = const_grads(&model, 2.0);
        let mut state = OptState::new(Optimizer::Sgd, &model);
        opt_step(&mut model, &grads, &mut state, 0.1).unwrap();
        assert_eq!(model.layers()[0].weights.data(), &[0.8, 1.8, 2.8, 3.8]);
        assert_eq!(model.layers()[0].bias, vec![0.3, -0.7]);
    }

    #[test]
    fn zero_grad_leaves_model_unchanged() {
        let mut model = tiny_model();
        let before = model.clone();
        let grads = Gradients::zeros_like(&model);
        for opt in [Optimizer::Sgd, Optimizer::Adam] {
            let mut state = OptState::new(opt, &model);
            opt_step(&mut model, &grads, &mut state, 0.1).unwrap();
            assert_eq!(model, before, "{opt:?} moved params on zero grad");
        }
    }

    #[test]
    fn adam_constant_grad_moves_monotonically() {
        // Scalar simulation: with a constant positive gradient every Adam step
        // must decrease the parameter.
        let mut model = tiny_model();
        let grads = const_grads(&model, 0.7);
        let mut state = OptState::new(Optimizer::Adam, &model);
        let mut prev = model.layers()[0].weights.get(0, 0);
        for _ in 0..100 {
            opt_step(&mut model, &grads, &mut state, 0.01).unwrap();
            let cur = model.layers()[0].weights.get(0, 0);
            assert!(cur < prev, "parameter failed to decrease: {cur} >= {prev}");
            prev = cur;
        }
        // With bias correction the very first step is almost exactly lr.
        let first_step_model = {
            let mut m = tiny_model();
            let mut s = OptState::new(Optimizer::Adam, &m);
            opt_step(&mut m, &grads, &mut s, 0.01).unwrap();
            m
        };
        let moved = 1.0 - first_step_model.layers()[0].weights.get(0, 0);
        assert!((moved - 0.01).abs() < 1e-6, "first Adam step {moved}");
    }

    #[test]
    fn non_finite_grad_aborts_without_mutation() {
        let mut model = tiny_model();
        let before = model.clone();
        let mut grads = const_grads(&model, 1.0);
        grads.layers[0].weights.data_mut()[1] = f64::NAN;
        let mut state = OptState::new(Optimizer::Adam, &model);
        let err = opt_step(&mut model, &grads, &mut state, 0.1).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(model, before);
        assert_eq!(state.steps_taken(), 0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut model = tiny_model();
        let other = MlpModel::init(3, &[4], 2, Activation::Relu, 0.0, 1).unwrap();
        let grads = Gradients::zeros_like(&other);
        let mut state = OptState::new(Optimizer::Sgd, &model);
        let err = opt_step(&mut model, &grads, &mut state, 0.1).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }
}
