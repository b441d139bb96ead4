//! Pairwise reference-game training with AdamW, linear warmup and
//! best-validation checkpoint selection.

pub mod loss;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{ArrayViewD, ArrayViewMutD, Zip};
use thiserror::Error;

use crate::dataset::{batch_iterator, ReferenceInstance, Split};
use crate::evaluation::{evaluate, CategoryAccuracy};
use crate::features::FeatureArchive;
use crate::model::{
    gradients, init_params, save_checkpoint, Checkpoint, ModelConfig, ModelError, ParameterSet,
};
use loss::{LossConfig, LossKind};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(Split),
    #[error("non-finite gradient in {tensor} at step {step}; update refused")]
    NonFiniteGradient { tensor: String, step: u64 },
    #[error("non-finite parameter in {tensor} after step {step}")]
    NonFiniteParameter { tensor: String, step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps, mid-epoch if need be.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-3,
            warmup_steps: 10_000,
            epochs: 75,
            batch_size: 32,
            loss: LossConfig::default(),
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(0.0..0.5).contains(&self.loss.smoothing) {
            return fail("smoothing must lie in [0, 0.5)");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return fail("base_lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 || !self.weight_decay.is_finite() {
            return fail("eps must be positive and weight_decay finite");
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("base_lr", self.base_lr.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("loss", self.loss.kind.to_string()),
            ("smoothing", self.loss.smoothing.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("seed", self.seed.to_string()),
        ];
        if let Some(m) = self.max_steps {
            kv.push(("max_steps", m.to_string()));
        }
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Applies one `key=value` setting (key without the `train.` prefix).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse()
                .map_err(|_| format!("train.{key}: cannot parse {v:?}"))
        }
        match key {
            "base_lr" => self.base_lr = parse(key, value)?,
            "warmup_steps" => self.warmup_steps = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "loss" => self.loss.kind = value.parse::<LossKind>()?,
            "smoothing" => self.loss.smoothing = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "max_steps" => self.max_steps = Some(parse(key, value)?),
            other => return Err(format!("unknown key train.{other}")),
        }
        Ok(())
    }
}

/// `base_lr · min(1, step / warmup_steps)`; no decay afterwards.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    if cfg.warmup_steps == 0 {
        return cfg.base_lr;
    }
    cfg.base_lr * (step as f64 / cfg.warmup_steps as f64).min(1.0)
}

/// AdamW moments, one tensor per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParameterSet,
    pub v: ParameterSet,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One AdamW update of a single tensor at 1-based `step`:
/// `θ ← θ − lr·(m̂/(√v̂ + eps) + weight_decay·θ)`.
pub fn adamw_tensor(
    mut theta: ArrayViewMutD<f64>,
    grad: ArrayViewD<f64>,
    mut m: ArrayViewMutD<f64>,
    mut v: ArrayViewMutD<f64>,
    lr: f64,
    cfg: &TrainConfig,
    step: u64,
) {
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(step as f64);
    let c2 = 1.0 - b2.powf(step as f64);
    Zip::from(&mut theta)
        .and(&grad)
        .and(&mut m)
        .and(&mut v)
        .for_each(|t, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *t -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *t);
        });
}

/// Updates every tensor. A non-finite gradient anywhere refuses the whole
/// step and leaves `params` and `state` untouched.
pub fn adamw_step(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    state: &mut AdamState,
    cfg: &TrainConfig,
    step: u64,
) -> Result<(), TrainError> {
    assert!(step >= 1, "optimizer steps are 1-based");
    if let Some((name, _)) = grads
        .named_tensors()
        .into_iter()
        .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
    {
        return Err(TrainError::NonFiniteGradient { tensor: name, step });
    }
    let lr = lr_at(step, cfg);
    let grads = grads.named_tensors();
    let m = state.m.named_tensors_mut();
    let v = state.v.named_tensors_mut();
    for ((((_, theta), (_, g)), (_, m)), (_, v)) in
        params.named_tensors_mut().into_iter().zip(grads).zip(m).zip(v)
    {
        adamw_tensor(theta, g, m, v, lr, cfg, step);
    }
    if let Some((name, _)) = params
        .named_tensors()
        .into_iter()
        .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
    {
        return Err(TrainError::NonFiniteParameter { tensor: name, step });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub steps: u64,
    /// Mean of the batch losses in this epoch.
    pub train_loss: f64,
    pub lr: f64,
    pub valid: CategoryAccuracy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the highest validation "all" accuracy; the
    /// earliest wins a tie.
    pub best_epoch: usize,
    pub checkpoint: Option<PathBuf>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_string(), |v| format!("{v:.4}"))
}

impl RunRecord {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// `key=value` header lines, then one row per epoch.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed={}", self.seed);
        for (k, v) in self.model.to_key_values() {
            let _ = writeln!(out, "model.{k}={v}");
        }
        for (k, v) in self.train.to_key_values() {
            let _ = writeln!(out, "train.{k}={v}");
        }
        let _ = writeln!(out, "best_epoch={}", self.best_epoch);
        let best = self.best();
        let _ = writeln!(out, "best_valid_visual={}", fmt_opt(best.valid.visual));
        let _ = writeln!(out, "best_valid_blind={}", fmt_opt(best.valid.blind));
        let _ = writeln!(out, "best_valid_all={:.4}", best.valid.all);
        if let Some(p) = &self.checkpoint {
            let _ = writeln!(out, "checkpoint={}", p.display());
        }
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "epoch={} steps={} train_loss={:.17e} lr={:e} valid_visual={} valid_blind={} valid_all={:.4}",
                e.epoch,
                e.steps,
                e.train_loss,
                e.lr,
                fmt_opt(e.valid.visual),
                fmt_opt(e.valid.blind),
                e.valid.all
            );
        }
        out
    }
}

/// A finished run: its record plus the best (f32-rounded, as checkpointed)
/// and final parameters.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub best: ParameterSet,
    pub last: ParameterSet,
}

/// Trains from a fresh initialisation seeded by `train_cfg.seed`.
///
/// Validation runs after every epoch on the parameters rounded to f32, which
/// is exactly what a checkpoint stores. With `out_dir` set, the best epoch is
/// saved as `best.vlgc` there.
pub fn train(
    train_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    instances: &[ReferenceInstance],
    archive: &FeatureArchive,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    train_with_progress(train_cfg, model_cfg, instances, archive, out_dir, |_| {})
}

/// [`train`], calling `progress` after each epoch.
pub fn train_with_progress(
    train_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    instances: &[ReferenceInstance],
    archive: &FeatureArchive,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    train_cfg.validate()?;
    let valid: Vec<ReferenceInstance> = instances
        .iter()
        .filter(|i| i.split == Split::Valid)
        .cloned()
        .collect();
    if !instances.iter().any(|i| i.split == Split::Train) {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if valid.is_empty() {
        return Err(TrainError::EmptySplit(Split::Valid));
    }

    let mut params = init_params(model_cfg, train_cfg.seed)?;
    let mut state = AdamState::new(&params);
    let checkpoint = out_dir.map(|d| d.join("best.vlgc"));
    let mut step: u64 = 0;
    let mut epochs = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(usize, f64, ParameterSet)> = None;

    'epochs: for epoch in 1..=train_cfg.epochs {
        let batches = batch_iterator(
            instances,
            Split::Train,
            train_cfg.seed,
            epoch as u64 - 1,
            train_cfg.batch_size,
        )
        .map_err(|e| TrainError::Config(e.to_string()))?;
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        let mut stop = false;
        for batch in &batches {
            if train_cfg.max_steps.is_some_and(|m| step >= m) {
                stop = true;
                break;
            }
            let (loss, grads) = gradients(&params, batch, archive, &train_cfg.loss)?;
            step += 1;
            adamw_step(&mut params, &grads, &mut state, train_cfg, step)?;
            loss_sum += loss;
            n_batches += 1;
        }
        if n_batches == 0 {
            break 'epochs;
        }
        let rounded = params.rounded_to_f32();
        let acc = evaluate(&valid, archive, &rounded)?;
        let record = EpochRecord {
            epoch,
            steps: step,
            train_loss: loss_sum / n_batches as f64,
            lr: lr_at(step, train_cfg),
            valid: acc,
        };
        log::debug!(
            "epoch {epoch}: steps={step} loss={:.6} valid_all={:.2}",
            record.train_loss,
            record.valid.all
        );
        progress(&record);
        if best.as_ref().is_none_or(|(_, b, _)| record.valid.all > *b) {
            if let Some(path) = &checkpoint {
                save_checkpoint(
                    &Checkpoint {
                        params: rounded.clone(),
                        step,
                        moments: None,
                    },
                    path,
                )?;
            }
            best = Some((epoch, record.valid.all, rounded));
        }
        epochs.push(record);
        if stop || train_cfg.max_steps.is_some_and(|m| step >= m) {
            break;
        }
    }

    let (best_epoch, _, best_params) = best.ok_or(TrainError::EmptySplit(Split::Train))?;
    Ok(TrainOutcome {
        record: RunRecord {
            seed: train_cfg.seed,
            model: model_cfg.clone(),
            train: train_cfg.clone(),
            epochs,
            best_epoch,
            checkpoint,
        },
        best: best_params,
        last: params,
    })
}
