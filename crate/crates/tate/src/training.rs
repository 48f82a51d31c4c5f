//! Adam optimization, teacher pre-training, the two-branch student training
//! loop, and evaluation under simulated missing modalities.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    encode_tag, mask_missing, sample_missing_pattern, Dataset, MissingMode, MissingPattern,
};
use crate::graph::Graph;
use crate::losses::{
    backward_loss, cls_loss, forward_loss, tag_loss, total_loss, LossKind, LossWeights,
};
use crate::metrics::{ConfusionMatrix, Metrics};
use crate::model::{
    collect_grads, student_forward, teacher_forward, BoundParams, Dropout, ModelConfig,
    ModelError, StudentParams, TeacherParams,
};
use crate::tensor::Tensor;

// Seed offsets so pattern sampling, shuffling and dropout draw from
// independent streams of the same user seed.
const SEED_SHUFFLE: u64 = 0x01;
const SEED_PATTERN: u64 = 0x02;
const SEED_DROPOUT: u64 = 0x03;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] crate::tensor::NumericsError),
    #[error("non-finite gradient in parameter '{0}'; aborting")]
    NanGradient(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub eta: f64,
    pub mode: MissingMode,
    pub weights: LossWeights,
    pub seed: u64,
    pub forward_kind: LossKind,
    pub backward_kind: LossKind,
    pub tag_kind: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch: 32,
            epochs: 20,
            eta: 0.0,
            mode: MissingMode::Single,
            weights: LossWeights::default(),
            seed: 0,
            forward_kind: LossKind::Js,
            backward_kind: LossKind::Js,
            tag_kind: LossKind::Mae,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if self.batch == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(TrainError::Config("eta must be in [0, 1]".into()));
        }
        let w = &self.weights;
        if [w.lambda1, w.lambda2, w.lambda3]
            .iter()
            .any(|l| !l.is_finite() || *l < 0.0)
        {
            return Err(TrainError::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates per parameter plus the shared step counter.
#[derive(Default)]
pub struct AdamState {
    moments: BTreeMap<String, (Tensor, Tensor)>,
    step: usize,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> usize {
        self.step
    }
}

/// One bias-corrected Adam update over aligned (parameter, gradient) pairs.
/// Parameters absent from `grads` are left untouched.
pub fn adam_step(
    params: &mut [(String, &mut Tensor)],
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, param) in params.iter_mut() {
        let Some(grad) = grads.get(name) else {
            continue;
        };
        if !grad.all_finite() {
            return Err(TrainError::NanGradient(name.clone()));
        }
        let (m, v) = state.moments.entry(name.clone()).or_insert_with(|| {
            (
                Tensor::zeros(param.shape().to_vec()),
                Tensor::zeros(param.shape().to_vec()),
            )
        });
        for ((p, &g), (mi, vi)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Per-epoch mean loss terms and training accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub cls: f64,
    pub forward: f64,
    pub backward: f64,
    pub tag: f64,
    pub total: f64,
    pub train_acc: f64,
}

/// History CSV: epoch, cls, forward, backward, tag, total, train_acc.
pub fn history_to_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,cls,forward,backward,tag,total,train_acc\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            h.epoch, h.cls, h.forward, h.backward, h.tag, h.total, h.train_acc
        ));
    }
    out
}

fn accumulate_grads(acc: &mut BTreeMap<String, Tensor>, grads: Vec<(String, Tensor)>) {
    for (name, g) in grads {
        match acc.get_mut(&name) {
            Some(t) => t.add_assign(&g).expect("aligned gradient shapes"),
            None => {
                acc.insert(name, g);
            }
        }
    }
}

fn scale_grads(acc: &mut BTreeMap<String, Tensor>, factor: f64) {
    for g in acc.values_mut() {
        *g = g.scale(factor);
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Trains the teacher on complete-modality data with cross-entropy only.
/// Zero epochs returns the seeded initialization untouched.
pub fn pretrain_teacher(
    dataset: &Dataset,
    cfg: &ModelConfig,
    train: &TrainConfig,
) -> Result<(TeacherParams, Vec<EpochStats>)> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    train.validate()?;
    cfg.validate()?;
    let mut params = TeacherParams::init(cfg, train.seed)?;
    let mut adam = AdamState::new();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train.seed.wrapping_add(SEED_SHUFFLE));
    let mut history = Vec::with_capacity(train.epochs);
    let n = dataset.len();
    for epoch in 0..train.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(train.batch) {
            let mut grads = BTreeMap::new();
            for &i in chunk {
                let seg = &dataset.segments[i];
                let mut g = Graph::new();
                let named = params.named();
                let bound = BoundParams::bind(&mut g, &named);
                let (_, probs) = teacher_forward(&mut g, &bound, seg, &MissingPattern::none())?;
                let loss = cls_loss(&mut g, probs, seg.label)?;
                g.backward(loss)?;
                accumulate_grads(&mut grads, collect_grads(&g, &bound));
                loss_sum += g.value(loss).item()?;
                if argmax(g.value(probs).data()) == seg.label {
                    correct += 1;
                }
            }
            scale_grads(&mut grads, 1.0 / chunk.len() as f64);
            let mut named_mut = params.named_mut();
            adam_step(&mut named_mut, &grads, &mut adam, train.lr)?;
        }
        let cls = loss_sum / n as f64;
        history.push(EpochStats {
            epoch,
            cls,
            forward: 0.0,
            backward: 0.0,
            tag: 0.0,
            total: cls,
            train_acc: correct as f64 / n as f64,
        });
    }
    Ok((params, history))
}

/// Computes the frozen teacher representation E_pre for every segment once.
fn teacher_representations(
    dataset: &Dataset,
    teacher: &TeacherParams,
) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(dataset.len());
    for seg in &dataset.segments {
        let mut g = Graph::new();
        let named = teacher.named();
        let bound = BoundParams::bind(&mut g, &named);
        let (e_pre, _) = teacher_forward(&mut g, &bound, seg, &MissingPattern::none())?;
        out.push(g.value(e_pre).clone());
    }
    Ok(out)
}

/// Draws one missing pattern per segment for a whole run (stable within the
/// run, reproducible across runs with the same seed).
pub fn assign_patterns(
    n: usize,
    eta: f64,
    mode: MissingMode,
    seed: u64,
) -> Vec<MissingPattern> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(SEED_PATTERN));
    (0..n)
        .map(|_| sample_missing_pattern(&mut rng, eta, mode))
        .collect()
}

/// The two-branch training loop: for every sample, the masked segment feeds
/// the student encoder branch while the complete segment feeds the frozen
/// teacher; Adam updates the student only.
pub fn train(
    dataset: &Dataset,
    teacher: &TeacherParams,
    cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(StudentParams, Vec<EpochStats>)> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    train_cfg.validate()?;
    cfg.validate()?;
    if teacher.lift_w.cols() != cfg.joint_width() {
        return Err(TrainError::Config(format!(
            "teacher width {} does not match student joint width {}",
            teacher.lift_w.cols(),
            cfg.joint_width()
        )));
    }
    let n = dataset.len();
    let w = &train_cfg.weights;
    let use_forward = w.lambda1 > 0.0;
    let use_backward = w.lambda2 > 0.0;
    let use_tag_loss = w.lambda3 > 0.0 && cfg.use_tag;

    let patterns = assign_patterns(n, train_cfg.eta, train_cfg.mode, train_cfg.seed);
    let e_pre = if use_forward {
        teacher_representations(dataset, teacher)?
    } else {
        Vec::new()
    };

    let mut params = StudentParams::init(cfg, train_cfg.seed)?;
    let mut adam = AdamState::new();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed.wrapping_add(SEED_SHUFFLE));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed.wrapping_add(SEED_DROPOUT));
    let mut history = Vec::with_capacity(train_cfg.epochs);

    for epoch in 0..train_cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        let (mut s_cls, mut s_fwd, mut s_bwd, mut s_tag, mut s_total) =
            (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut correct = 0usize;
        for chunk in order.chunks(train_cfg.batch) {
            let mut grads = BTreeMap::new();
            for &i in chunk {
                let seg = &dataset.segments[i];
                let pattern = &patterns[i];
                let tag = encode_tag(pattern);
                let masked = mask_missing(seg, pattern);
                let mut g = Graph::new();
                let named = params.named();
                let bound = BoundParams::bind(&mut g, &named);
                let mut dropout = Dropout {
                    p: cfg.dropout,
                    rng: Some(&mut dropout_rng),
                };
                let trace = student_forward(&mut g, cfg, &bound, &masked, &tag, &mut dropout)?;
                let cls = cls_loss(&mut g, trace.probs, seg.label)?;
                let fwd = if use_forward {
                    Some(forward_loss(
                        &mut g,
                        train_cfg.forward_kind,
                        trace.e_out,
                        &e_pre[i],
                    )?)
                } else {
                    None
                };
                let bwd = if use_backward {
                    Some(backward_loss(
                        &mut g,
                        train_cfg.backward_kind,
                        trace.d_out,
                        trace.e_all,
                    )?)
                } else {
                    None
                };
                let tg = if use_tag_loss {
                    Some(tag_loss(
                        &mut g,
                        train_cfg.tag_kind,
                        &tag.as_floats(),
                        trace.d_out,
                    )?)
                } else {
                    None
                };
                let total = total_loss(&mut g, cls, fwd, bwd, tg, w)?;
                g.backward(total)?;
                accumulate_grads(&mut grads, collect_grads(&g, &bound));

                s_cls += g.value(cls).item()?;
                s_fwd += fwd.map(|t| g.value(t).item()).transpose()?.unwrap_or(0.0);
                s_bwd += bwd.map(|t| g.value(t).item()).transpose()?.unwrap_or(0.0);
                s_tag += tg.map(|t| g.value(t).item()).transpose()?.unwrap_or(0.0);
                s_total += g.value(total).item()?;
                if argmax(g.value(trace.probs).data()) == seg.label {
                    correct += 1;
                }
            }
            scale_grads(&mut grads, 1.0 / chunk.len() as f64);
            let mut named_mut = params.named_mut();
            adam_step(&mut named_mut, &grads, &mut adam, train_cfg.lr)?;
        }
        let nf = n as f64;
        history.push(EpochStats {
            epoch,
            cls: s_cls / nf,
            forward: s_fwd / nf,
            backward: s_bwd / nf,
            tag: s_tag / nf,
            total: s_total / nf,
            train_acc: correct as f64 / nf,
        });
    }
    Ok((params, history))
}

/// Deterministic masked evaluation: patterns from the seed, argmax
/// classification, confusion-matrix metrics.
pub fn evaluate(
    cfg: &ModelConfig,
    params: &StudentParams,
    dataset: &Dataset,
    eta: f64,
    mode: MissingMode,
    seed: u64,
) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let patterns = assign_patterns(dataset.len(), eta, mode, seed);
    let mut confusion = ConfusionMatrix::new(cfg.classes);
    for (seg, pattern) in dataset.segments.iter().zip(&patterns) {
        let tag = encode_tag(pattern);
        let masked = mask_missing(seg, pattern);
        let mut g = Graph::new();
        let named = params.named();
        let bound = BoundParams::bind(&mut g, &named);
        let trace = student_forward(&mut g, cfg, &bound, &masked, &tag, &mut Dropout::off())?;
        confusion.record(seg.label, argmax(g.value(trace.probs).data()));
    }
    Ok(Metrics::from_confusion(confusion))
}

/// Encoder outputs for export: one row per segment.
pub struct EmbeddingRow {
    pub id: String,
    pub label: usize,
    pub pattern: String,
    pub e_out: Vec<f64>,
}

pub fn export_embeddings(
    cfg: &ModelConfig,
    params: &StudentParams,
    dataset: &Dataset,
    eta: f64,
    mode: MissingMode,
    seed: u64,
) -> Result<Vec<EmbeddingRow>> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let patterns = assign_patterns(dataset.len(), eta, mode, seed);
    let mut rows = Vec::with_capacity(dataset.len());
    for (seg, pattern) in dataset.segments.iter().zip(&patterns) {
        let tag = encode_tag(pattern);
        let masked = mask_missing(seg, pattern);
        let mut g = Graph::new();
        let named = params.named();
        let bound = BoundParams::bind(&mut g, &named);
        let trace = student_forward(&mut g, cfg, &bound, &masked, &tag, &mut Dropout::off())?;
        rows.push(EmbeddingRow {
            id: seg.id.clone(),
            label: seg.label,
            pattern: tag.as_string(),
            e_out: g.value(trace.e_out).data().to_vec(),
        });
    }
    Ok(rows)
}
