//! Minimal feed-forward network with explicit, seedable dropout masks and
//! analytic backpropagation.
//!
//! Layers are dense affine maps `h = act(x W + b)` with weights stored as
//! `in x out` row-major matrices. Dropout applies to hidden activations only,
//! never to the input or the logits, and uses inverted scaling: kept units are
//! multiplied by `1/(1-d)` at train time so evaluation-mode forward needs no
//! correction. All arithmetic is `f64`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_from;

/// Hidden-layer nonlinearity. The output layer is always linear (logits).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a = act(z)`.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidInput(format!(
                "unknown activation {other:?} (expected relu, tanh, or identity)"
            ))),
        }
    }
}

/// One dense layer: weights `in x out`, bias of length `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Feed-forward classifier: a stack of dense layers, one shared hidden
/// activation, a dropout rate, and the class count of the final logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    activation: Activation,
    dropout_rate: f64,
    n_classes: usize,
}

impl MlpModel {
    /// Initializes a model with Glorot-uniform weights (`+-sqrt(6/(fan_in+fan_out))`)
    /// and zero biases, drawn deterministically from `seed`.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        n_classes: usize,
        activation: Activation,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidInput("input_dim must be >= 1".into()));
        }
        if hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidInput("hidden widths must be >= 1".into()));
        }
        let mut rng = rng_from(seed);
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(n_classes);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut weights = Matrix::zeros(fan_in, fan_out);
            for v in weights.data_mut() {
                *v = (2.0 * rng.random::<f64>() - 1.0) * bound;
            }
            layers.push(Layer {
                weights,
                bias: vec![0.0; fan_out],
            });
        }
        MlpModel::from_parts(layers, activation, dropout_rate, n_classes)
    }

    /// Assembles a model from explicit layers, validating the structural invariants.
    pub fn from_parts(
        layers: Vec<Layer>,
        activation: Activation,
        dropout_rate: f64,
        n_classes: usize,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("model needs at least one layer".into()));
        }
        if n_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "n_classes must be >= 2, got {n_classes}"
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidInput(format!(
                "dropout_rate must be in [0,1), got {dropout_rate}"
            )));
        }
        for i in 1..layers.len() {
            if layers[i - 1].out_dim() != layers[i].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} units but layer {} expects {}",
                    i - 1,
                    layers[i - 1].out_dim(),
                    i,
                    layers[i].in_dim()
                )));
            }
        }
        let last = layers.last().unwrap();
        if last.out_dim() != n_classes {
            return Err(Error::Shape(format!(
                "final layer outputs {} units but n_classes is {}",
                last.out_dim(),
                n_classes
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape(format!(
                    "layer {} bias length {} does not match out dim {}",
                    i,
                    l.bias.len(),
                    l.out_dim()
                )));
            }
        }
        Ok(MlpModel {
            layers,
            activation,
            dropout_rate,
            n_classes,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, d: f64) -> Result<()> {
        if !(0.0..1.0).contains(&d) {
            return Err(Error::InvalidInput(format!(
                "dropout_rate must be in [0,1), got {d}"
            )));
        }
        self.dropout_rate = d;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Widths of the hidden activations, in order.
    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Layer::out_dim)
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_dim() * l.out_dim() + l.out_dim())
            .sum()
    }
}

/// Per-hidden-layer dropout masks for one batch.
///
/// Entries are `0` (dropped) or `1/(1-d)` (kept, inverted scaling), so the
/// expected masked activation equals the unmasked one. The same
/// `(shapes, rate, seed)` triple always reproduces the same mask bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    layers: Vec<Matrix>,
    seed: u64,
    rate: f64,
}

impl DropoutMask {
    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Samples a dropout mask for `batch_rows` rows using the model's own rate.
pub fn sample_mask(model: &MlpModel, batch_rows: usize, seed: u64) -> DropoutMask {
    sample_mask_rate(model, batch_rows, model.dropout_rate, seed)
}

/// As [`sample_mask`] but with an explicit rate, independent of the model's.
pub fn sample_mask_rate(model: &MlpModel, batch_rows: usize, rate: f64, seed: u64) -> DropoutMask {
    debug_assert!((0.0..1.0).contains(&rate));
    let scale = 1.0 / (1.0 - rate);
    let mut rng = rng_from(seed);
    let layers = model
        .hidden_dims()
        .iter()
        .map(|&w| {
            let mut m = Matrix::zeros(batch_rows, w);
            for v in m.data_mut() {
                // random::<f64>() < 0.0 is never true, so rate 0 keeps everything.
                *v = if rng.random::<f64>() < rate { 0.0 } else { scale };
            }
            m
        })
        .collect();
    DropoutMask {
        layers,
        seed,
        rate,
    }
}

/// Gradients w.r.t. every parameter; shapes mirror the model's layers exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerGrads {
                    weights: Matrix::zeros(l.in_dim(), l.out_dim()),
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    /// `self += scale * other`, entry-wise.
    pub fn axpy(&mut self, scale: f64, other: &Gradients) {
        debug_assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.data_mut().iter_mut().zip(b.weights.data()) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for v in l.weights.data_mut() {
                *v *= s;
            }
            for v in &mut l.bias {
                *v *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }
}

/// Activations recorded during a forward pass, as needed by backprop.
pub(crate) struct ForwardTrace {
    /// Per hidden layer: activation before the mask was applied.
    pre_mask: Vec<Matrix>,
    /// Per hidden layer: activation after the mask (the next layer's input).
    post_mask: Vec<Matrix>,
}

fn check_forward_shapes(model: &MlpModel, x: &Matrix, mask: Option<&DropoutMask>) -> Result<()> {
    if x.cols() != model.input_dim() {
        return Err(Error::Shape(format!(
            "forward: layer 0 expects input width {}, got {}",
            model.input_dim(),
            x.cols()
        )));
    }
    if let Some(m) = mask {
        let hidden = model.hidden_dims();
        if m.layers().len() != hidden.len() {
            return Err(Error::Shape(format!(
                "forward: mask covers {} hidden layers, model has {}",
                m.layers().len(),
                hidden.len()
            )));
        }
        for (l, (mm, &w)) in m.layers().iter().zip(&hidden).enumerate() {
            if mm.rows() != x.rows() || mm.cols() != w {
                return Err(Error::Shape(format!(
                    "forward: mask for hidden layer {} is {}x{}, expected {}x{}",
                    l,
                    mm.rows(),
                    mm.cols(),
                    x.rows(),
                    w
                )));
            }
        }
    }
    Ok(())
}

/// `out = x . W + b` (row-major, cache-friendly accumulation).
fn affine(x: &Matrix, layer: &Layer) -> Matrix {
    let (n, in_dim, out_dim) = (x.rows(), layer.in_dim(), layer.out_dim());
    let mut out = Matrix::zeros(n, out_dim);
    for i in 0..n {
        let xi = x.row(i);
        let oi = out.row_mut(i);
        oi.copy_from_slice(&layer.bias);
        for (p, &xv) in xi.iter().enumerate().take(in_dim) {
            if xv == 0.0 {
                continue;
            }
            let wrow = layer.weights.row(p);
            for (o, &w) in oi.iter_mut().zip(wrow) {
                *o += xv * w;
            }
        }
    }
    out
}

pub(crate) fn forward_trace(
    model: &MlpModel,
    x: &Matrix,
    mask: Option<&DropoutMask>,
) -> Result<(Matrix, ForwardTrace)> {
    check_forward_shapes(model, x, mask)?;
    let n_layers = model.layers().len();
    let mut pre_mask = Vec::with_capacity(n_layers - 1);
    let mut post_mask = Vec::with_capacity(n_layers - 1);

    let mut cur = x;
    let mut logits = None;
    for (l, layer) in model.layers().iter().enumerate() {
        let mut z = affine(cur, layer);
        if l + 1 == n_layers {
            logits = Some(z);
            break;
        }
        for v in z.data_mut() {
            *v = model.activation.apply(*v);
        }
        let masked = match mask {
            Some(m) => {
                let mut h = z.clone();
                for (hv, &mv) in h.data_mut().iter_mut().zip(m.layers()[l].data()) {
                    *hv *= mv;
                }
                h
            }
            None => z.clone(),
        };
        pre_mask.push(z);
        post_mask.push(masked);
        cur = post_mask.last().unwrap();
    }
    Ok((
        logits.unwrap(),
        ForwardTrace {
            pre_mask,
            post_mask,
        },
    ))
}

/// Evaluates the model on a batch, returning `n x k` logits.
///
/// With `mask` absent this is evaluation-mode forward: no dropout, no scaling.
pub fn forward(model: &MlpModel, x: &Matrix, mask: Option<&DropoutMask>) -> Result<Matrix> {
    Ok(forward_trace(model, x, mask)?.0)
}

/// Row-wise softmax probabilities (numerically stabilized).
pub(crate) fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    p
}

/// Softmax cross-entropy against integer class labels.
///
/// Returns the batch mean and the per-sample losses
/// `-log softmax(logits_i)[y_i]`.
pub fn softmax_ce(logits: &Matrix, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (n, k) = (logits.rows(), logits.cols());
    if labels.len() != n {
        return Err(Error::InvalidInput(format!(
            "softmax_ce: {} labels for {} rows",
            labels.len(),
            n
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("softmax_ce: empty batch".into()));
    }
    let mut per = Vec::with_capacity(n);
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidInput(format!(
                "softmax_ce: label {y} out of range for {k} classes (sample {i})"
            )));
        }
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        per.push(lse - row[y]);
    }
    let mean = per.iter().sum::<f64>() / n as f64;
    Ok((mean, per))
}

/// Backpropagates an arbitrary loss gradient w.r.t. the logits through the
/// network, under the same mask that produced `trace`.
pub(crate) fn backprop_from_logit_grad(
    model: &MlpModel,
    x: &Matrix,
    trace: &ForwardTrace,
    mask: Option<&DropoutMask>,
    dlogits: Matrix,
) -> Gradients {
    let n_layers = model.layers().len();
    let mut grads = Gradients::zeros_like(model);
    let mut delta = dlogits; // gradient w.r.t. the current layer's affine output

    for l in (0..n_layers).rev() {
        let input: &Matrix = if l == 0 { x } else { &trace.post_mask[l - 1] };
        let layer = &model.layers()[l];
        let g = &mut grads.layers[l];

        // dW = input^T . delta; db = column sums of delta.
        for i in 0..input.rows() {
            let xi = input.row(i);
            let di = delta.row(i);
            for (p, &xv) in xi.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let grow = g.weights.row_mut(p);
                for (gv, &dv) in grow.iter_mut().zip(di) {
                    *gv += xv * dv;
                }
            }
            for (bv, &dv) in g.bias.iter_mut().zip(di) {
                *bv += dv;
            }
        }

        if l == 0 {
            break;
        }

        // d(post-mask) = delta . W^T, then through mask and activation.
        let n = delta.rows();
        let mut prev = Matrix::zeros(n, layer.in_dim());
        for i in 0..n {
            let di = delta.row(i);
            let pi = prev.row_mut(i);
            for (p, pv) in pi.iter_mut().enumerate() {
                let wrow = layer.weights.row(p);
                *pv = wrow.iter().zip(di).map(|(&w, &d)| w * d).sum();
            }
        }
        // The mask multiplies after the activation, so
        // d(affine) = d(post-mask) * mask * act'(affine), with act' read off
        // the stored activation output.
        match mask {
            Some(m) => {
                let mv = m.layers()[l - 1].data();
                for ((pv, &a), &mk) in prev
                    .data_mut()
                    .iter_mut()
                    .zip(trace.pre_mask[l - 1].data())
                    .zip(mv)
                {
                    *pv *= mk * model.activation.grad_from_output(a);
                }
            }
            None => {
                for (pv, &a) in prev.data_mut().iter_mut().zip(trace.pre_mask[l - 1].data()) {
                    *pv *= model.activation.grad_from_output(a);
                }
            }
        }
        delta = prev;
    }
    grads
}

/// Loss and exact analytic gradients of `softmax_ce(forward(model, x, mask), y)`.
pub fn backward(
    model: &MlpModel,
    x: &Matrix,
    labels: &[usize],
    mask: Option<&DropoutMask>,
) -> Result<(f64, Gradients)> {
    let (logits, trace) = forward_trace(model, x, mask)?;
    let (loss, _) = softmax_ce(&logits, labels)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    let n = x.rows() as f64;
    let mut dlogits = softmax_rows(&logits);
    for (i, &y) in labels.iter().enumerate() {
        let row = dlogits.row_mut(i);
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    let grads = backprop_from_logit_grad(model, x, &trace, mask, dlogits);
    Ok((loss, grads))
}

/// Argmax of one logit row; ties break toward the smallest class index.
pub(crate) fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Evaluation-mode classification accuracy on a labeled batch.
pub fn accuracy(model: &MlpModel, x: &Matrix, labels: &[usize]) -> Result<f64> {
    if x.rows() == 0 {
        return Err(Error::InvalidInput("accuracy: empty batch".into()));
    }
    if labels.len() != x.rows() {
        return Err(Error::InvalidInput(format!(
            "accuracy: {} labels for {} rows",
            labels.len(),
            x.rows()
        )));
    }
    let logits = forward(model, x, None)?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax_row(logits.row(i)) == y)
        .count();
    Ok(correct as f64 / x.rows() as f64)
}
