//! Teacher/student adaptation to an unlabeled target domain.
//!
//! One iteration: the teacher pseudo-labels the target via repeated dropout
//! forward passes, votes are fused by majority with a negative-variance
//! confidence, the most confident fraction is kept, a fresh student distills
//! from it, and the student replaces the teacher only if its distance from
//! chance accuracy on the training domains grows. Target labels never enter
//! this module; the target is a bare feature matrix.

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{accuracy, argmax_row, forward, sample_mask_rate, MlpModel};
use crate::rng::{derive_seed, TAG_ADAPT, TAG_MC, TAG_STUDENT};
use crate::train::{fit_pooled, pool_domains, TrainConfig};

/// How vote scatter maps to a confidence score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaMode {
    /// Negative population variance of the vote values.
    Variance,
    /// Negative disagreement rate `-(1 - mode_count / m)`; unlike variance it
    /// ignores how class indices happen to be numbered.
    Disagreement,
}

/// Adaptation knobs. `student` configures each distilled model; its `seed`
/// field is ignored (per-iteration seeds are derived from `seed` here).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    /// Confirmations: dropout forward passes per sample.
    pub m: usize,
    /// Dropout rate for the pseudo-labeling passes.
    pub dropout: f64,
    /// Fraction of target samples kept, by confidence.
    pub select_fraction: f64,
    /// Mixing weight: 1 trains the student on pseudo-labels alone, lower
    /// values blend in source cross-entropy.
    pub alpha: f64,
    /// Maximum distillation iterations.
    pub deepness: usize,
    /// Consecutive rejections before stopping early; 0 disables.
    pub patience: usize,
    pub kappa: KappaMode,
    pub seed: u64,
    pub student: TrainConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            m: 10,
            dropout: 0.2,
            select_fraction: 0.5,
            alpha: 1.0,
            deepness: 10,
            patience: 3,
            kappa: KappaMode::Variance,
            seed: 0,
            student: TrainConfig {
                epochs: 80,
                batch_size: 128,
                dropout: 0.1,
                ..TrainConfig::default()
            },
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        if !(self.select_fraction > 0.0 && self.select_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "select_fraction must be in (0,1], got {}",
                self.select_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must be in [0,1], got {}",
                self.alpha
            )));
        }
        if self.deepness == 0 {
            return Err(Error::Config("deepness must be >= 1".into()));
        }
        self.student.validate()
    }
}

/// One target sample's pseudo-labeling outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelRecord {
    pub sample_index: usize,
    pub votes: Vec<usize>,
    pub label: usize,
    pub kappa: f64,
}

/// The confident subset handed to distillation, sorted by sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedBatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

impl SelectedBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// One adaptation iteration as recorded in the history.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub d_rand: f64,
    pub accepted: bool,
    pub n_selected: usize,
    /// Mean confidence over the selected records (0.0 at t = 0).
    pub mean_kappa: f64,
    /// Pooled evaluation-mode accuracy on the training domains.
    pub train_acc: f64,
}

/// Where the loop ended up: last iteration index, the retained teacher, its
/// gate value, and the full per-iteration history.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationState {
    pub t: usize,
    pub teacher: MlpModel,
    pub best_d_rand: f64,
    pub history: Vec<IterationRecord>,
}

/// Majority class among `votes`; ties break toward the smallest class index.
pub fn majority_vote(votes: &[usize], k: usize) -> Result<usize> {
    if votes.is_empty() {
        return Err(Error::InvalidInput("majority_vote: empty votes".into()));
    }
    let mut counts = vec![0usize; k];
    for &v in votes {
        if v >= k {
            return Err(Error::InvalidInput(format!(
                "majority_vote: vote {v} out of range for {k} classes"
            )));
        }
        counts[v] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    Ok(best)
}

/// Negative population variance of the votes treated as integers.
pub fn confidence(votes: &[usize]) -> Result<f64> {
    if votes.is_empty() {
        return Err(Error::InvalidInput("confidence: empty votes".into()));
    }
    let m = votes.len() as f64;
    let mean = votes.iter().sum::<usize>() as f64 / m;
    let var = votes
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / m;
    Ok(-var)
}

/// Negative disagreement rate: `-(1 - mode_count / m)`.
pub fn confidence_disagreement(votes: &[usize]) -> Result<f64> {
    if votes.is_empty() {
        return Err(Error::InvalidInput("confidence: empty votes".into()));
    }
    let k = votes.iter().max().unwrap() + 1;
    let mut counts = vec![0usize; k];
    for &v in votes {
        counts[v] += 1;
    }
    let mode = counts.iter().max().copied().unwrap_or(0);
    Ok(-(1.0 - mode as f64 / votes.len() as f64))
}

/// Pseudo-labels every target row with `m` dropout forward passes at rate `d`,
/// one independently seeded mask per pass. Votes are hard argmax labels.
pub fn mc_pseudo_label(
    model: &MlpModel,
    x_target: &Matrix,
    m: usize,
    d: f64,
    seed: u64,
) -> Result<Vec<PseudoLabelRecord>> {
    mc_pseudo_label_mode(model, x_target, m, d, seed, KappaMode::Variance)
}

/// [`mc_pseudo_label`] with an explicit confidence mode.
pub fn mc_pseudo_label_mode(
    model: &MlpModel,
    x_target: &Matrix,
    m: usize,
    d: f64,
    seed: u64,
    mode: KappaMode,
) -> Result<Vec<PseudoLabelRecord>> {
    if m == 0 {
        return Err(Error::InvalidInput("mc_pseudo_label: m must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&d) {
        return Err(Error::InvalidInput(format!(
            "mc_pseudo_label: dropout must be in [0,1), got {d}"
        )));
    }
    let n = x_target.rows();
    if n == 0 {
        return Err(Error::InvalidInput("mc_pseudo_label: empty target".into()));
    }
    let k = model.n_classes();
    let mut votes = vec![Vec::with_capacity(m); n];
    for pass in 0..m {
        let mask = sample_mask_rate(model, n, d, derive_seed(seed, pass as u64));
        let logits = forward(model, x_target, Some(&mask))?;
        for (j, v) in votes.iter_mut().enumerate() {
            v.push(argmax_row(logits.row(j)));
        }
    }
    votes
        .into_iter()
        .enumerate()
        .map(|(j, v)| {
            let label = majority_vote(&v, k)?;
            let kappa = match mode {
                KappaMode::Variance => confidence(&v)?,
                KappaMode::Disagreement => confidence_disagreement(&v)?,
            };
            Ok(PseudoLabelRecord {
                sample_index: j,
                votes: v,
                label,
                kappa,
            })
        })
        .collect()
}

/// Keeps the `ceil(q * n)` most confident records (ties broken by ascending
/// sample index), returned in sample-index order with their features.
pub fn select_top(
    records: &[PseudoLabelRecord],
    x_target: &Matrix,
    q: f64,
) -> Result<SelectedBatch> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "select_top: q must be in (0,1], got {q}"
        )));
    }
    let n = records.len();
    let n_sel = (q * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        records[b]
            .kappa
            .partial_cmp(&records[a].kappa)
            .expect("kappa is finite")
            .then(records[a].sample_index.cmp(&records[b].sample_index))
    });
    let mut picked: Vec<usize> = order.into_iter().take(n_sel).collect();
    picked.sort_by_key(|&i| records[i].sample_index);

    let indices: Vec<usize> = picked.iter().map(|&i| records[i].sample_index).collect();
    let labels: Vec<usize> = picked.iter().map(|&i| records[i].label).collect();
    let features = x_target.gather_rows(&indices);
    Ok(SelectedBatch {
        features,
        labels,
        indices,
    })
}

/// Trains a fresh student on `alpha`-weighted pseudo-label loss plus
/// `(1-alpha)`-weighted source loss. With `alpha = 1` or no source the run is
/// plain ERM on the selected batch; with `alpha = 0` it is plain ERM on the
/// source, bit-identical to `train_erm` at the same seed.
pub fn distill_student(
    selected: &SelectedBatch,
    source: Option<&[DomainDataset]>,
    alpha: f64,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<MlpModel> {
    if selected.is_empty() {
        return Err(Error::InvalidInput("distill_student: empty selection".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!(
            "distill_student: alpha must be in [0,1], got {alpha}"
        )));
    }
    match source {
        None => fit_pooled(&selected.features, &selected.labels, cfg, seed),
        Some(_) if alpha == 1.0 => fit_pooled(&selected.features, &selected.labels, cfg, seed),
        Some(src) if alpha == 0.0 => {
            let (x, y, _) = pool_domains(src)?;
            fit_pooled(&x, &y, cfg, seed)
        }
        Some(src) => fit_mixed(selected, src, alpha, cfg, seed),
    }
}

/// Mixed-loss distillation: target batches drive the schedule, source batches
/// cycle alongside, and the step gradient is the alpha-weighted sum.
fn fit_mixed(
    selected: &SelectedBatch,
    source: &[DomainDataset],
    alpha: f64,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<MlpModel> {
    use crate::nn::{backward, sample_mask};
    use crate::optim::{opt_step, OptState};
    use crate::rng::{rng_from, TAG_INIT, TAG_SHUFFLE, TAG_TRAIN};
    use rand::seq::SliceRandom;

    cfg.validate()?;
    let (sx, sy, _) = pool_domains(source)?;
    let tx = &selected.features;
    let ty = &selected.labels;
    let nt = tx.rows();
    let ns = sx.rows();

    let mut model = MlpModel::init(
        tx.cols(),
        &cfg.hidden,
        cfg.n_classes,
        cfg.activation,
        cfg.dropout,
        derive_seed(seed, TAG_INIT),
    )?;
    if sx.cols() != tx.cols() {
        return Err(Error::Shape(format!(
            "distill_student: source dim {} vs target dim {}",
            sx.cols(),
            tx.cols()
        )));
    }
    let mut shuffle_rng = rng_from(derive_seed(seed, TAG_SHUFFLE));
    let mask_stream = derive_seed(seed, TAG_TRAIN);
    let mut opt = OptState::new(cfg.optimizer, &model);
    let batch = if cfg.batch_size == 0 { nt } else { cfg.batch_size };
    let mut t_idx: Vec<usize> = (0..nt).collect();
    let mut s_idx: Vec<usize> = (0..ns).collect();
    let mut s_cursor = ns; // force a reshuffle on first use
    let mut step: u64 = 0;

    for _epoch in 0..cfg.epochs {
        t_idx.shuffle(&mut shuffle_rng);
        for chunk in t_idx.chunks(batch) {
            let xb = tx.gather_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| ty[i]).collect();
            let step_seed = derive_seed(mask_stream, step);
            let t_mask = if model.dropout_rate() > 0.0 {
                Some(sample_mask(&model, xb.rows(), derive_seed(step_seed, 1)))
            } else {
                None
            };
            let (_, mut grads) = backward(&model, &xb, &yb, t_mask.as_ref())?;
            grads.scale(alpha);

            // matching-size source batch, cycling through a shuffled order
            let mut src_rows = Vec::with_capacity(chunk.len());
            for _ in 0..chunk.len() {
                if s_cursor >= ns {
                    s_idx.shuffle(&mut shuffle_rng);
                    s_cursor = 0;
                }
                src_rows.push(s_idx[s_cursor]);
                s_cursor += 1;
            }
            let sxb = sx.gather_rows(&src_rows);
            let syb: Vec<usize> = src_rows.iter().map(|&i| sy[i]).collect();
            let s_mask = if model.dropout_rate() > 0.0 {
                Some(sample_mask(&model, sxb.rows(), derive_seed(step_seed, 2)))
            } else {
                None
            };
            let (_, s_grads) = backward(&model, &sxb, &syb, s_mask.as_ref())?;
            grads.axpy(1.0 - alpha, &s_grads);

            opt_step(&mut model, &grads, &mut opt, cfg.lr)?;
            step += 1;
        }
    }
    Ok(model)
}

/// Distance from chance: `|pooled train accuracy - 1/k|`, evaluation mode.
pub fn d_rand(model: &MlpModel, train: &[DomainDataset], k: usize) -> Result<f64> {
    if k != model.n_classes() {
        return Err(Error::InvalidInput(format!(
            "d_rand: k = {k} but model has {} classes",
            model.n_classes()
        )));
    }
    let (x, y, _) = pool_domains(train)?;
    let acc = accuracy(model, &x, &y)?;
    Ok((acc - 1.0 / k as f64).abs())
}

/// The adaptation loop: pseudo-label, select, distill, gate on d_rand.
///
/// Iteration 0 records the base model; iterations 1..=deepness propose a
/// student and accept it as the new teacher only if its d_rand strictly
/// exceeds the best so far. Stops early after `patience` consecutive
/// rejections. Returns the teacher at the best gate value with full history.
pub fn simprov_adapt(
    base: &MlpModel,
    train: &[DomainDataset],
    x_target: &Matrix,
    cfg: &AdaptConfig,
) -> Result<(MlpModel, AdaptationState)> {
    simprov_adapt_observed(base, train, x_target, cfg, |_, _| {})
}

/// [`simprov_adapt`] with a per-iteration callback receiving each history
/// record and the model it describes (the candidate student, or the base at
/// t = 0). The callback exists for metrics capture; the loop never reads
/// anything back from it.
pub fn simprov_adapt_observed(
    base: &MlpModel,
    train: &[DomainDataset],
    x_target: &Matrix,
    cfg: &AdaptConfig,
    mut observer: impl FnMut(&IterationRecord, &MlpModel),
) -> Result<(MlpModel, AdaptationState)> {
    cfg.validate()?;
    if x_target.rows() == 0 {
        return Err(Error::InvalidInput("simprov_adapt: empty target".into()));
    }
    let k = base.n_classes();
    let adapt_seed = derive_seed(cfg.seed, TAG_ADAPT);
    let mc_stream = derive_seed(adapt_seed, TAG_MC);
    let student_stream = derive_seed(adapt_seed, TAG_STUDENT);

    let (train_x, train_y, _) = pool_domains(train)?;
    let eval = |model: &MlpModel| -> Result<(f64, f64)> {
        let acc = accuracy(model, &train_x, &train_y)?;
        Ok((acc, (acc - 1.0 / k as f64).abs()))
    };

    let mut teacher = base.clone();
    let (acc0, d0) = eval(&teacher)?;
    let mut best_d_rand = d0;
    let mut history = Vec::with_capacity(cfg.deepness + 1);
    let record0 = IterationRecord {
        t: 0,
        d_rand: d0,
        accepted: true,
        n_selected: 0,
        mean_kappa: 0.0,
        train_acc: acc0,
    };
    observer(&record0, &teacher);
    history.push(record0);

    let mut last_t = 0;
    let mut consecutive_rejections = 0;
    for t in 1..=cfg.deepness {
        last_t = t;
        let records = mc_pseudo_label_mode(
            &teacher,
            x_target,
            cfg.m,
            cfg.dropout,
            derive_seed(mc_stream, t as u64),
            cfg.kappa,
        )?;
        let selected = select_top(&records, x_target, cfg.select_fraction)?;
        let mean_kappa = selected
            .indices
            .iter()
            .map(|&i| records[i].kappa)
            .sum::<f64>()
            / selected.len() as f64;

        // the student must answer in the teacher's label space
        let mut student_cfg = cfg.student.clone();
        if student_cfg.n_classes != k {
            student_cfg.n_classes = k;
        }
        let student = distill_student(
            &selected,
            Some(train),
            cfg.alpha,
            &student_cfg,
            derive_seed(student_stream, t as u64),
        )?;

        let (train_acc, d_t) = eval(&student)?;
        let accepted = d_t > best_d_rand;
        let record = IterationRecord {
            t,
            d_rand: d_t,
            accepted,
            n_selected: selected.len(),
            mean_kappa,
            train_acc,
        };
        observer(&record, &student);
        history.push(record);

        if accepted {
            teacher = student;
            best_d_rand = d_t;
            consecutive_rejections = 0;
        } else {
            consecutive_rejections += 1;
            if cfg.patience > 0 && consecutive_rejections >= cfg.patience {
                break;
            }
        }
    }

    let state = AdaptationState {
        t: last_t,
        teacher: teacher.clone(),
        best_d_rand,
        history,
    };
    Ok((teacher, state))
}
