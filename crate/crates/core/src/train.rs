//! Base trainers: pooled ERM, IRM with the dummy-classifier gradient penalty,
//! and GroupDRO with exponentiated group reweighting.
//!
//! All three run the same step loop: shuffle pooled indices, gather the batch,
//! one forward pass, build the per-sample logit gradient for the method, one
//! backward pass, one optimizer step. Sharing the path is what makes the
//! reductions exact: IRM with lambda 0 skips the penalty branch entirely and
//! is bit-identical to ERM; GroupDRO with eta 0 keeps uniform weights whose
//! per-row scale equals ERM's on equal-size full batches.

use rand::seq::SliceRandom;

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{
    backprop_from_logit_grad, forward, forward_trace, sample_mask, softmax_ce, softmax_rows,
    Activation, MlpModel,
};
use crate::optim::{opt_step, OptState, Optimizer};
use crate::rng::{derive_seed, rng_from, TAG_INIT, TAG_SHUFFLE, TAG_TRAIN};

/// Shared knobs for every trainer. Methods read only the fields they use:
/// `lambda`/`penalty_warmup` drive IRM, `dro_eta` drives GroupDRO.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    /// IRM penalty weight after warmup.
    pub lambda: f64,
    /// Epochs with penalty weight 1 before `lambda` kicks in.
    pub penalty_warmup: usize,
    /// GroupDRO group-weight step size; 0 freezes the weights at uniform.
    pub dro_eta: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub n_classes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 300,
            batch_size: 0,
            lambda: 1e4,
            penalty_warmup: 75,
            dro_eta: 0.01,
            optimizer: Optimizer::Adam,
            seed: 0,
            hidden: vec![32, 32],
            activation: Activation::Relu,
            dropout: 0.0,
            n_classes: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.dro_eta >= 0.0 && self.dro_eta.is_finite()) {
            return Err(Error::Config(format!(
                "dro_eta must be >= 0, got {}",
                self.dro_eta
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "n_classes must be >= 2, got {}",
                self.n_classes
            )));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-domain risks and penalties under one penalty weight, plus the combined
/// total `sum(risks) + lambda * sum(penalties)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RiskReport {
    pub domain_ids: Vec<String>,
    pub risks: Vec<f64>,
    pub penalties: Vec<f64>,
    pub lambda: f64,
    pub total: f64,
}

/// Concatenates domains into one matrix plus labels and a per-row domain index
/// (domains keep their input order).
pub(crate) fn pool_domains(
    domains: &[DomainDataset],
) -> Result<(Matrix, Vec<usize>, Vec<usize>)> {
    if domains.is_empty() {
        return Err(Error::InvalidInput("no domains given".into()));
    }
    let d = domains[0].spec.feature_dim();
    let mut n = 0;
    for (e, ds) in domains.iter().enumerate() {
        if ds.spec.feature_dim() != d {
            return Err(Error::Shape(format!(
                "domain {} has feature dim {}, expected {}",
                e,
                ds.spec.feature_dim(),
                d
            )));
        }
        n += ds.len();
    }
    if n == 0 {
        return Err(Error::InvalidInput("all domains are empty".into()));
    }
    let mut x = Matrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    let mut dom = Vec::with_capacity(n);
    let mut row = 0;
    for (e, ds) in domains.iter().enumerate() {
        for s in &ds.samples {
            x.row_mut(row).copy_from_slice(&s.x);
            y.push(s.y);
            dom.push(e);
            row += 1;
        }
    }
    Ok((x, y, dom))
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Method {
    Erm,
    Irm { lambda: f64, warmup: usize },
    GroupDro { eta: f64 },
}

/// Multiplies group weights by `exp(eta * risk)` (absent risks leave the
/// weight untouched) and renormalizes to the simplex.
pub(crate) fn dro_reweight(q: &mut [f64], risks: &[Option<f64>], eta: f64) {
    debug_assert_eq!(q.len(), risks.len());
    for (w, r) in q.iter_mut().zip(risks) {
        if let Some(r) = r {
            *w *= (eta * r).exp();
        }
    }
    let sum: f64 = q.iter().sum();
    for w in q.iter_mut() {
        *w /= sum;
    }
}

/// The shared training loop. Deterministic in `seed`; returns the model and
/// the final group weights (uniform unless the method is GroupDRO).
pub(crate) fn fit(
    x: &Matrix,
    y: &[usize],
    domain_of_row: &[usize],
    n_domains: usize,
    cfg: &TrainConfig,
    seed: u64,
    method: Method,
) -> Result<(MlpModel, Vec<f64>)> {
    cfg.validate()?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::InvalidInput("fit: empty training set".into()));
    }
    if y.len() != n || domain_of_row.len() != n {
        return Err(Error::InvalidInput(format!(
            "fit: {} rows but {} labels / {} domain tags",
            n,
            y.len(),
            domain_of_row.len()
        )));
    }

    let mut model = MlpModel::init(
        x.cols(),
        &cfg.hidden,
        cfg.n_classes,
        cfg.activation,
        cfg.dropout,
        derive_seed(seed, TAG_INIT),
    )?;
    let mut shuffle_rng = rng_from(derive_seed(seed, TAG_SHUFFLE));
    let mask_stream = derive_seed(seed, TAG_TRAIN);
    let mut opt = OptState::new(cfg.optimizer, &model);
    let mut q = vec![1.0 / n_domains as f64; n_domains];
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size };
    let mut indices: Vec<usize> = (0..n).collect();
    let mut step: u64 = 0;

    // scratch for per-domain row grouping within a batch
    let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); n_domains];

    for epoch in 0..cfg.epochs {
        let lambda_t = match method {
            Method::Irm { lambda, warmup } => {
                if epoch < warmup {
                    1.0
                } else {
                    lambda
                }
            }
            _ => 0.0,
        };
        indices.shuffle(&mut shuffle_rng);
        for chunk in indices.chunks(batch) {
            let xb = x.gather_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let nb = xb.rows();
            let mask = if model.dropout_rate() > 0.0 {
                Some(sample_mask(&model, nb, derive_seed(mask_stream, step)))
            } else {
                None
            };
            let (logits, trace) = forward_trace(&model, &xb, mask.as_ref())?;
            let (mean_ce, per_ce) = softmax_ce(&logits, &yb)?;
            if !mean_ce.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {mean_ce} at epoch {epoch}"
                )));
            }
            let probs = softmax_rows(&logits);

            // per-row weight on the cross-entropy gradient
            let mut weights = vec![1.0 / nb as f64; nb];
            if let Method::GroupDro { eta } = method {
                for r in &mut rows_of {
                    r.clear();
                }
                for (j, &i) in chunk.iter().enumerate() {
                    rows_of[domain_of_row[i]].push(j);
                }
                // group weights move before the descent step
                let risks: Vec<Option<f64>> = rows_of
                    .iter()
                    .map(|rows| {
                        if rows.is_empty() {
                            None
                        } else {
                            Some(rows.iter().map(|&j| per_ce[j]).sum::<f64>() / rows.len() as f64)
                        }
                    })
                    .collect();
                dro_reweight(&mut q, &risks, eta);
                for (j, &i) in chunk.iter().enumerate() {
                    let e = domain_of_row[i];
                    weights[j] = q[e] / rows_of[e].len() as f64;
                }
            }

            let mut dlogits = Matrix::zeros(nb, cfg.n_classes);
            for j in 0..nb {
                let w = weights[j];
                let drow = dlogits.row_mut(j);
                let prow = probs.row(j);
                for (c, dv) in drow.iter_mut().enumerate() {
                    let indicator = if c == yb[j] { 1.0 } else { 0.0 };
                    *dv = w * (prow[c] - indicator);
                }
            }

            if let Method::Irm { .. } = method {
                if lambda_t != 0.0 {
                    for r in &mut rows_of {
                        r.clear();
                    }
                    for (j, &i) in chunk.iter().enumerate() {
                        rows_of[domain_of_row[i]].push(j);
                    }
                    // objective adds (lambda_t / n_domains) * penalty_e per domain
                    let pen_w = lambda_t / n_domains as f64;
                    for rows in rows_of.iter().filter(|r| !r.is_empty()) {
                        let ne = rows.len() as f64;
                        let mut g = 0.0;
                        let mut s = vec![0.0; rows.len()];
                        for (jj, &j) in rows.iter().enumerate() {
                            let (zr, pr) = (logits.row(j), probs.row(j));
                            let sj: f64 = zr.iter().zip(pr).map(|(&z, &p)| z * p).sum();
                            s[jj] = sj;
                            g += sj - zr[yb[j]];
                        }
                        g /= ne;
                        let coef = pen_w * 2.0 * g / ne;
                        for (jj, &j) in rows.iter().enumerate() {
                            let (zr, pr) = (logits.row(j), probs.row(j));
                            let sj = s[jj];
                            let yj = yb[j];
                            let drow = dlogits.row_mut(j);
                            for (c, dv) in drow.iter_mut().enumerate() {
                                let indicator = if c == yj { 1.0 } else { 0.0 };
                                *dv += coef * ((pr[c] - indicator) + pr[c] * (zr[c] - sj));
                            }
                        }
                    }
                }
            }

            let mut grads = backprop_from_logit_grad(&model, &xb, &trace, mask.as_ref(), dlogits);
            if lambda_t > 1.0 {
                grads.scale(1.0 / lambda_t);
            }
            opt_step(&mut model, &grads, &mut opt, cfg.lr)?;
            step += 1;
        }
    }
    Ok((model, q))
}

/// Pools all domains and minimizes average cross-entropy by mini-batch descent.
pub fn train_erm(train: &[DomainDataset], cfg: &TrainConfig) -> Result<MlpModel> {
    let (x, y, _) = pool_domains(train)?;
    let dom = vec![0; y.len()];
    Ok(fit(&x, &y, &dom, 1, cfg, cfg.seed, Method::Erm)?.0)
}

/// ERM directly on a feature matrix and labels (used for distillation).
pub(crate) fn fit_pooled(
    x: &Matrix,
    y: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<MlpModel> {
    let dom = vec![0; y.len()];
    Ok(fit(x, y, &dom, 1, cfg, seed, Method::Erm)?.0)
}

/// The dummy-classifier penalty: squared derivative of
/// `w -> mean CE(w * logits, y)` at `w = 1`, on evaluation-mode logits.
pub fn irm_penalty(model: &MlpModel, x: &Matrix, y: &[usize]) -> Result<f64> {
    let logits = forward(model, x, None)?;
    irm_penalty_on_logits(&logits, y)
}

pub(crate) fn irm_penalty_on_logits(logits: &Matrix, y: &[usize]) -> Result<f64> {
    let n = logits.rows();
    if n == 0 {
        return Err(Error::InvalidInput("irm_penalty: empty batch".into()));
    }
    if y.len() != n {
        return Err(Error::InvalidInput(format!(
            "irm_penalty: {} labels for {} rows",
            y.len(),
            n
        )));
    }
    let probs = softmax_rows(logits);
    let mut g = 0.0;
    for i in 0..n {
        let (zr, pr) = (logits.row(i), probs.row(i));
        if y[i] >= logits.cols() {
            return Err(Error::InvalidInput(format!(
                "irm_penalty: label {} out of range for {} classes",
                y[i],
                logits.cols()
            )));
        }
        let s: f64 = zr.iter().zip(pr).map(|(&z, &p)| z * p).sum();
        g += s - zr[y[i]];
    }
    g /= n as f64;
    Ok(g * g)
}

/// IRM: each step descends pooled cross-entropy plus the per-domain penalty
/// scaled by the current weight (1 during warmup, `cfg.lambda` after); when
/// that weight exceeds 1 the whole step gradient is divided by it.
pub fn train_irm(train: &[DomainDataset], cfg: &TrainConfig) -> Result<MlpModel> {
    let (x, y, dom) = pool_domains(train)?;
    Ok(fit(
        &x,
        &y,
        &dom,
        train.len(),
        cfg,
        cfg.seed,
        Method::Irm {
            lambda: cfg.lambda,
            warmup: cfg.penalty_warmup,
        },
    )?
    .0)
}

/// GroupDRO: group weights take an exponentiated-gradient step on per-domain
/// risks before each descent step on the weighted risk.
pub fn train_groupdro(train: &[DomainDataset], cfg: &TrainConfig) -> Result<MlpModel> {
    if train.len() < 2 {
        return Err(Error::InvalidInput(
            "train_groupdro needs at least 2 domains".into(),
        ));
    }
    let (x, y, dom) = pool_domains(train)?;
    Ok(fit(
        &x,
        &y,
        &dom,
        train.len(),
        cfg,
        cfg.seed,
        Method::GroupDro { eta: cfg.dro_eta },
    )?
    .0)
}

/// Evaluation-mode per-domain risks and penalties under `lambda`, with
/// `total = sum(risks) + lambda * sum(penalties)`.
pub fn risk_report(model: &MlpModel, train: &[DomainDataset], lambda: f64) -> Result<RiskReport> {
    if train.is_empty() {
        return Err(Error::InvalidInput("risk_report: no domains".into()));
    }
    let mut domain_ids = Vec::with_capacity(train.len());
    let mut risks = Vec::with_capacity(train.len());
    let mut penalties = Vec::with_capacity(train.len());
    for ds in train {
        if ds.is_empty() {
            return Err(Error::InvalidInput(format!(
                "risk_report: domain {} is empty",
                ds.spec.domain_id
            )));
        }
        let x = ds.features();
        let y = ds.labels();
        let logits = forward(model, &x, None)?;
        let (risk, _) = softmax_ce(&logits, &y)?;
        let pen = irm_penalty_on_logits(&logits, &y)?;
        domain_ids.push(ds.spec.domain_id.clone());
        risks.push(risk);
        penalties.push(pen);
    }
    let total = risks.iter().sum::<f64>() + lambda * penalties.iter().sum::<f64>();
    Ok(RiskReport {
        domain_ids,
        risks,
        penalties,
        lambda,
        total,
    })
}
