//! Supervised fine-tuning with gradient accumulation, either of low-rank
//! adapters on a frozen base or of every base parameter.

pub mod optim;
pub mod toy;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::gpt2::causal_lm_loss;
use crate::nn::io::{save_adapters, save_model, ADAPTER_FILE};
use crate::nn::{AdapterConfig, AdapterSet, ComputeWeights, DropoutSpec, Gpt2Config, Gpt2Model, NnError, Precision, QuantOutcome};
use crate::prompts::{EncodedExample, MAX_LENGTH};

pub use optim::{lr_at, AdamW, AdamWConfig};

pub const SNAPSHOT_FILE: &str = "config_snapshot.json";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const VAL_LOG_FILE: &str = "val_loss.csv";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite at step {step}; parameters restored to {}", restored_from.as_deref().map(|p| p.display().to_string()).unwrap_or_else(|| "their initial values".into()))]
    DivergenceDetected { step: usize, restored_from: Option<PathBuf> },
    #[error("estimated {required} bytes exceed the {budget}-byte budget; {}", match suggested_micro_batch { Some(m) => format!("try micro_batch {m}"), None => "even micro_batch 1 does not fit".into() })]
    OutOfMemory {
        required: u64,
        budget: u64,
        suggested_micro_batch: Option<usize>,
    },
    #[error("frozen base parameters changed during training")]
    FrozenBaseModified,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |e| TrainError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Update adapter weights only; the base stays frozen.
    #[default]
    Adapters,
    /// Update every base parameter (used to pretrain small bases).
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub effective_batch: usize,
    pub micro_batch: usize,
    pub grad_accumulation: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub warmup_steps: usize,
    pub precision: Precision,
    pub seed: u64,
    pub max_length: usize,
    pub optimizer: AdamWConfig,
    /// Always `"linear"`: warmup then linear decay to zero.
    pub schedule: String,
    /// Gradient clipping is not applied; kept explicit for the snapshot.
    pub grad_clip: Option<f32>,
    pub mode: TrainMode,
    /// Refuse to start when the activation estimate exceeds this many bytes.
    pub memory_budget_bytes: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            effective_batch: 64,
            micro_batch: 8,
            grad_accumulation: 8,
            epochs: 13,
            learning_rate: 3e-4,
            warmup_steps: 2,
            precision: Precision::F16,
            seed: 42,
            max_length: MAX_LENGTH,
            optimizer: AdamWConfig::default(),
            schedule: "linear".into(),
            grad_clip: None,
            mode: TrainMode::Adapters,
            memory_budget_bytes: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.micro_batch == 0 || self.grad_accumulation == 0 {
            return Err(TrainError::Config("micro_batch and grad_accumulation must be positive".into()));
        }
        if self.effective_batch != self.micro_batch * self.grad_accumulation {
            return Err(TrainError::Config(format!(
                "effective_batch {} != micro_batch {} x grad_accumulation {}",
                self.effective_batch, self.micro_batch, self.grad_accumulation
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TrainError::Config("learning rate must be finite and non-negative".into()));
        }
        if self.schedule != "linear" {
            return Err(TrainError::Config(format!("unknown schedule {:?}", self.schedule)));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.effective_batch)
    }

    pub fn total_steps(&self, n: usize) -> usize {
        self.epochs * self.steps_per_epoch(n)
    }
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub train: TrainConfig,
    pub adapter: Option<AdapterConfig>,
    pub quant: Option<QuantOutcome>,
    pub base_id: String,
    pub base_config: Gpt2Config,
    pub tokenizer: String,
    pub optimizer: String,
    pub dataset_fingerprint: String,
    pub train_examples: usize,
    pub val_examples: usize,
    pub total_steps: usize,
}

impl ConfigSnapshot {
    pub fn read(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| TrainError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValPoint {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArtifact {
    pub snapshot: ConfigSnapshot,
    pub loss_log: Vec<LossPoint>,
    pub val_log: Vec<ValPoint>,
    pub out_dir: Option<PathBuf>,
}

impl TrainArtifact {
    pub fn initial_loss(&self) -> Option<f64> {
        self.loss_log.first().map(|p| p.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_log.last().map(|p| p.loss)
    }
}

/// Provenance recorded alongside the weights.
#[derive(Debug, Clone, Default)]
pub struct RunInfo {
    pub base_id: String,
    pub tokenizer: String,
    pub quant: Option<QuantOutcome>,
    pub out_dir: Option<PathBuf>,
}

/// What the optimizer updates.
pub enum Trainable<'a> {
    Adapters { base: &'a Gpt2Model, adapters: &'a mut AdapterSet },
    Full(&'a mut Gpt2Model),
}

impl Trainable<'_> {
    fn base(&self) -> &Gpt2Model {
        match self {
            Trainable::Adapters { base, .. } => base,
            Trainable::Full(m) => m,
        }
    }

    fn adapters(&self) -> Option<&AdapterSet> {
        match self {
            Trainable::Adapters { adapters, .. } => Some(adapters),
            Trainable::Full(_) => None,
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        match self {
            Trainable::Adapters { adapters, .. } => adapters.params_mut(),
            Trainable::Full(m) => m.params_mut(),
        }
    }

    fn snapshot_params(&mut self) -> Vec<Vec<f32>> {
        self.params_mut().into_iter().map(|p| p.clone()).collect()
    }

    fn restore_params(&mut self, saved: &[Vec<f32>]) {
        for (p, s) in self.params_mut().into_iter().zip(saved) {
            p.clone_from(s);
        }
    }

    fn save(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        match self {
            Trainable::Adapters { base, adapters } => save_adapters(adapters, &base.config, &dir.join(ADAPTER_FILE))?,
            Trainable::Full(m) => save_model(m, dir)?,
        }
        Ok(())
    }
}

/// SHA-256 over the token ids and labels of both splits.
pub fn dataset_fingerprint(train: &[EncodedExample], val: &[EncodedExample]) -> String {
    let mut h = Sha256::new();
    for (tag, set) in [(b"train", train), (b"valid", val)] {
        h.update(tag);
        h.update((set.len() as u64).to_le_bytes());
        for ex in set {
            for &t in &ex.token_ids {
                h.update(t.to_le_bytes());
            }
            h.update(&ex.attention_mask);
            for &l in &ex.label_ids {
                h.update(l.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Rough peak-memory estimate in bytes for one micro-batch of `seq_len`
/// tokens: weights, per-sequence activations and gradients.
pub fn estimate_memory(cfg: &Gpt2Config, adapters: Option<&AdapterSet>, mode: TrainMode, micro_batch: usize, seq_len: usize) -> u64 {
    let (t, d, v, l, h) = (seq_len as u64, cfg.n_embd as u64, cfg.vocab_size as u64, cfg.n_layer as u64, cfg.n_head as u64);
    let weights = (v * d + cfg.n_positions as u64 * d + l * 12 * d * d) * 4;
    let per_layer = t * (16 * d + h * t);
    let per_seq_acts = (l * per_layer + 2 * t * v + 4 * t * d) * 4;
    let per_seq_grads = match mode {
        TrainMode::Full => weights,
        TrainMode::Adapters => adapters.map_or(0, |a| a.num_trainable() as u64 * 4),
    };
    let optimizer = 3 * per_seq_grads;
    weights + optimizer + micro_batch as u64 * (per_seq_acts + per_seq_grads)
}

struct StepResult {
    loss_sum: f64,
    tokens: usize,
    grads: Vec<Vec<f32>>,
}

/// Loss and summed gradients over one accumulation window. Every sequence's
/// loss is divided by the window's supervised-token count, so splitting the
/// window into micro-batches does not change the result.
fn window_gradients(
    trainable: &Trainable<'_>,
    w: &ComputeWeights,
    window: &[(usize, &EncodedExample)],
    micro_batch: usize,
    dropout: Option<(f32, u64)>,
) -> Result<StepResult, TrainError> {
    let base = trainable.base();
    let adapters = trainable.adapters();
    let full = matches!(trainable, Trainable::Full(_));
    let tokens: usize = window.iter().map(|(_, ex)| ex.supervised_tokens()).sum();
    let scale = if tokens > 0 { 1.0 / tokens as f32 } else { 0.0 };
    let mut acc: Option<Vec<Vec<f32>>> = None;
    let mut loss_sum = 0.0;
    for micro in window.chunks(micro_batch) {
        let per_seq: Vec<Result<(f64, Vec<Vec<f32>>), NnError>> = micro
            .par_iter()
            .map(|&(idx, ex)| {
                let n = ex.len();
                let ids = &ex.token_ids[..n];
                let spec = dropout.map(|(p, seed)| DropoutSpec {
                    p,
                    seed: splitmix(seed ^ splitmix(idx as u64)),
                });
                let (logits, tape) = base.forward_train(w, adapters, ids, spec)?;
                let (loss, _, dlogits) = causal_lm_loss(&logits, &ex.label_ids[..n], scale);
                let (ag, mg) = base.backward(w, adapters, &tape, &dlogits, full)?;
                let grads = match (ag, mg) {
                    (_, Some(g)) => g,
                    (Some(a), None) => a.params().into_iter().cloned().collect(),
                    (None, None) => Vec::new(),
                };
                Ok((loss, grads))
            })
            .collect();
        for r in per_seq {
            let (loss, grads) = r?;
            loss_sum += loss;
            match acc.as_mut() {
                None => acc = Some(grads),
                Some(a) => {
                    for (dst, src) in a.iter_mut().zip(&grads) {
                        for (x, y) in dst.iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                }
            }
        }
    }
    Ok(StepResult {
        loss_sum,
        tokens,
        grads: acc.unwrap_or_default(),
    })
}

/// Mean per-token loss over `examples` without dropout.
pub fn evaluate_loss(base: &Gpt2Model, adapters: Option<&AdapterSet>, precision: Precision, examples: &[EncodedExample]) -> Result<Option<f64>, TrainError> {
    let w = base.compute_weights(precision);
    let parts: Vec<Result<(f64, usize), NnError>> = examples
        .par_iter()
        .map(|ex| {
            let n = ex.len();
            let logits = base.logits(&w, adapters, &ex.token_ids[..n])?;
            let (loss, count, _) = causal_lm_loss(&logits, &ex.label_ids[..n], 0.0);
            Ok((loss, count))
        })
        .collect();
    let mut loss = 0.0;
    let mut count = 0;
    for p in parts {
        let (l, c) = p?;
        loss += l;
        count += c;
    }
    Ok((count > 0).then(|| loss / count as f64))
}

fn base_fingerprint(m: &Gpt2Model) -> [u8; 32] {
    let mut h = Sha256::new();
    for x in &m.wte.data {
        h.update(x.to_le_bytes());
    }
    for b in [m.blocks.first(), m.blocks.last()].into_iter().flatten() {
        for lin in [&b.c_attn, &b.c_fc] {
            for x in lin.weight.dense().data.iter().chain(&lin.bias) {
                h.update(x.to_le_bytes());
            }
        }
    }
    h.finalize().into()
}

/// Runs `epochs × ⌈N / effective_batch⌉` optimizer steps.
pub fn train(
    mut trainable: Trainable<'_>,
    train_set: &[EncodedExample],
    val_set: &[EncodedExample],
    cfg: &TrainConfig,
    info: &RunInfo,
) -> Result<TrainArtifact, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let expected_mode = match trainable {
        Trainable::Adapters { .. } => TrainMode::Adapters,
        Trainable::Full(_) => TrainMode::Full,
    };
    if cfg.mode != expected_mode {
        return Err(TrainError::Config(format!("config mode {:?} does not match the trainable {:?}", cfg.mode, expected_mode)));
    }
    let base_cfg = trainable.base().config.clone();
    if let Some(budget) = cfg.memory_budget_bytes {
        let seq_len = train_set.iter().map(EncodedExample::len).max().unwrap_or(0);
        let need = |m| estimate_memory(&base_cfg, trainable.adapters(), cfg.mode, m, seq_len);
        let required = need(cfg.micro_batch);
        if required > budget {
            let suggested_micro_batch = (1..cfg.micro_batch).rev().find(|&m| need(m) <= budget);
            return Err(TrainError::OutOfMemory {
                required,
                budget,
                suggested_micro_batch,
            });
        }
    }

    let total_steps = cfg.total_steps(train_set.len());
    let fingerprint = dataset_fingerprint(train_set, val_set);
    let adapter_cfg = trainable.adapters().map(|a| a.config.clone());
    let dropout = adapter_cfg.as_ref().map(|a| a.dropout).filter(|&p| p > 0.0);
    let snapshot = ConfigSnapshot {
        train: cfg.clone(),
        adapter: adapter_cfg,
        quant: info.quant.clone(),
        base_id: info.base_id.clone(),
        base_config: base_cfg.clone(),
        tokenizer: info.tokenizer.clone(),
        optimizer: "adamw".into(),
        dataset_fingerprint: fingerprint,
        train_examples: train_set.len(),
        val_examples: val_set.len(),
        total_steps,
    };
    if let Some(dir) = &info.out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_json(&dir.join(SNAPSHOT_FILE), &snapshot)?;
    }

    let frozen = matches!(trainable, Trainable::Adapters { .. }).then(|| base_fingerprint(trainable.base()));
    let sizes: Vec<usize> = trainable.params_mut().iter().map(|p| p.len()).collect();
    let mut opt = AdamW::new(cfg.optimizer, sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut loss_log = Vec::with_capacity(total_steps);
    let mut val_log = Vec::new();
    let mut last_good = (trainable.snapshot_params(), None::<PathBuf>);
    let mut best_val = f64::INFINITY;
    let mut step = 0usize;
    // The frozen base is decoded once; full training re-decodes every step.
    let weights = (expected_mode == TrainMode::Adapters).then(|| trainable.base().compute_weights(cfg.precision));

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for window in order.chunks(cfg.effective_batch) {
            let batch: Vec<(usize, &EncodedExample)> = window.iter().map(|&i| (i, &train_set[i])).collect();
            let owned;
            let w = match &weights {
                Some(w) => w,
                None => {
                    owned = trainable.base().compute_weights(cfg.precision);
                    &owned
                }
            };
            let drop = dropout.map(|p| (p, splitmix(cfg.seed ^ ((step as u64) << 20))));
            let res = window_gradients(&trainable, w, &batch, cfg.micro_batch, drop)?;
            let loss = if res.tokens > 0 { res.loss_sum / res.tokens as f64 } else { 0.0 };
            let grads_finite = res.grads.iter().all(|g| g.iter().all(|x| x.is_finite()));
            if !loss.is_finite() || !grads_finite {
                trainable.restore_params(&last_good.0);
                tracing::error!(step = step + 1, "non-finite loss, aborting");
                return Err(TrainError::DivergenceDetected {
                    step: step + 1,
                    restored_from: last_good.1,
                });
            }
            let lr = lr_at(step, total_steps, cfg.warmup_steps, cfg.learning_rate);
            if res.tokens > 0 {
                opt.step(trainable.params_mut(), &res.grads, lr);
            }
            step += 1;
            tracing::debug!(step, loss, lr, "optimizer step");
            loss_log.push(LossPoint { step, loss });
        }
        if let Some(expected) = frozen {
            if base_fingerprint(trainable.base()) != expected {
                return Err(TrainError::FrozenBaseModified);
            }
        }
        let val = evaluate_loss(trainable.base(), trainable.adapters(), cfg.precision, val_set)?;
        if let Some(v) = val {
            val_log.push(ValPoint { epoch, step, loss: v });
        }
        tracing::info!(epoch, step, train_loss = loss_log.last().map(|p| p.loss), val_loss = val, "epoch done");

        let mut checkpoint = None;
        if let Some(dir) = &info.out_dir {
            let last = dir.join("checkpoints").join("last");
            trainable.save(&last)?;
            write_json(&last.join("state.json"), &serde_json::json!({ "epoch": epoch, "step": step, "val_loss": val }))?;
            checkpoint = Some(last);
            let score = val.unwrap_or_else(|| loss_log.last().map_or(f64::INFINITY, |p| p.loss));
            if score < best_val {
                best_val = score;
                let best = dir.join("checkpoints").join("best");
                trainable.save(&best)?;
                write_json(&best.join("state.json"), &serde_json::json!({ "epoch": epoch, "step": step, "val_loss": val }))?;
            }
        }
        last_good = (trainable.snapshot_params(), checkpoint);
    }
    if let Some(dir) = &info.out_dir {
        trainable.save(dir)?;
        write_loss_logs(dir, &loss_log, &val_log)?;
    }
    Ok(TrainArtifact {
        snapshot,
        loss_log,
        val_log,
        out_dir: info.out_dir.clone(),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), TrainError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(io_err(path))
}

fn write_loss_logs(dir: &Path, loss: &[LossPoint], val: &[ValPoint]) -> Result<(), TrainError> {
    let csv_err = |path: &Path| {
        let path = path.to_path_buf();
        move |e: csv::Error| TrainError::Io {
            path,
            message: e.to_string(),
        }
    };
    let path = dir.join(LOSS_LOG_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for p in loss {
        w.serialize(p).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    let path = dir.join(VAL_LOG_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for p in val {
        w.serialize(p).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))
}

/// Reads a `step,loss` CSV written by [`train`].
pub fn read_loss_log(path: &Path) -> Result<Vec<LossPoint>, TrainError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| TrainError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    r.deserialize()
        .collect::<Result<Vec<LossPoint>, _>>()
        .map_err(|e| TrainError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// One accumulation window's mean loss and gradients with the given
/// micro-batch size; exposed for equivalence checks.
pub fn probe_window(
    base: &Gpt2Model,
    adapters: &AdapterSet,
    examples: &[EncodedExample],
    micro_batch: usize,
    precision: Precision,
) -> Result<(f64, Vec<Vec<f32>>), TrainError> {
    let mut adapters = adapters.clone();
    let trainable = Trainable::Adapters {
        base,
        adapters: &mut adapters,
    };
    let w = base.compute_weights(precision);
    let batch: Vec<(usize, &EncodedExample)> = examples.iter().enumerate().collect();
    let res = window_gradients(&trainable, &w, &batch, micro_batch.max(1), None)?;
    let loss = if res.tokens > 0 { res.loss_sum / res.tokens as f64 } else { 0.0 };
    Ok((loss, res.grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::IGNORE_INDEX;

    fn example(seed: u32, len: usize, max: usize) -> EncodedExample {
        let mut token_ids: Vec<u32> = (0..len as u32).map(|i| 3 + (i * 7 + seed * 5) % 17).collect();
        let mut label_ids: Vec<i64> = token_ids.iter().enumerate().map(|(i, &t)| if i < 3 { IGNORE_INDEX } else { t as i64 }).collect();
        let mut attention_mask = vec![1u8; len];
        token_ids.resize(max, 0);
        label_ids.resize(max, IGNORE_INDEX);
        attention_mask.resize(max, 0);
        EncodedExample {
            token_ids,
            attention_mask,
            label_ids,
        }
    }

    fn tiny() -> Gpt2Config {
        Gpt2Config {
            vocab_size: 24,
            n_positions: 32,
            n_embd: 16,
            n_layer: 2,
            n_head: 2,
            layer_norm_epsilon: 1e-5,
        }
    }

    fn cfg(n_epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs: n_epochs,
            max_length: 32,
            ..Default::default()
        }
    }

    #[test]
    fn effective_batch_must_match() {
        let bad = TrainConfig {
            micro_batch: 4,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        assert_eq!(TrainConfig::default().steps_per_epoch(65), 2);
        assert_eq!(TrainConfig::default().total_steps(64), 13);
    }

    #[test]
    fn one_step_per_64_examples() {
        let base = Gpt2Model::random(tiny(), 1).unwrap();
        let mut adapters = AdapterSet::attach(&base.config, &AdapterConfig::default(), 1).unwrap();
        let data: Vec<_> = (0..130).map(|i| example(i, 10, 32)).collect();
        let art = train(
            Trainable::Adapters {
                base: &base,
                adapters: &mut adapters,
            },
            &data,
            &[],
            &cfg(2),
            &RunInfo::default(),
        )
        .unwrap();
        assert_eq!(art.loss_log.len(), 2 * 3);
        assert_eq!(art.snapshot.total_steps, 6);
    }

    #[test]
    fn base_is_frozen_and_runs_are_deterministic() {
        let base = Gpt2Model::random(tiny(), 2).unwrap();
        let before = base.clone();
        let data: Vec<_> = (0..20).map(|i| example(i, 12, 32)).collect();
        let run = || {
            let mut adapters = AdapterSet::attach(&base.config, &AdapterConfig::default(), 2).unwrap();
            let art = train(
                Trainable::Adapters {
                    base: &base,
                    adapters: &mut adapters,
                },
                &data,
                &data[..4],
                &cfg(3),
                &RunInfo::default(),
            )
            .unwrap();
            (art.loss_log, adapters)
        };
        let (a, ad_a) = run();
        let (b, ad_b) = run();
        assert_eq!(a, b);
        assert_eq!(ad_a, ad_b);
        assert_eq!(base, before);
    }

    #[test]
    fn non_finite_loss_is_divergence() {
        let base = Gpt2Model::random(tiny(), 3).unwrap();
        let mut adapters = AdapterSet::attach(&base.config, &AdapterConfig::default(), 3).unwrap();
        adapters.params_mut()[0][0] = f32::NAN;
        adapters.params_mut()[1][0] = 1.0;
        let data: Vec<_> = (0..8).map(|i| example(i, 8, 32)).collect();
        let err = train(
            Trainable::Adapters {
                base: &base,
                adapters: &mut adapters,
            },
            &data,
            &[],
            &cfg(1),
            &RunInfo::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::DivergenceDetected { step: 1, restored_from: None }));
    }

    #[test]
    fn memory_budget_suggests_smaller_micro_batch() {
        let base = Gpt2Model::random(tiny(), 4).unwrap();
        let mut adapters = AdapterSet::attach(&base.config, &AdapterConfig::default(), 4).unwrap();
        let data: Vec<_> = (0..8).map(|i| example(i, 30, 32)).collect();
        let need2 = estimate_memory(&base.config, Some(&adapters), TrainMode::Adapters, 2, 30);
        let c = TrainConfig {
            memory_budget_bytes: Some(need2),
            ..cfg(1)
        };
        let err = train(
            Trainable::Adapters {
                base: &base,
                adapters: &mut adapters,
            },
            &data,
            &[],
            &c,
            &RunInfo::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::OutOfMemory { suggested_micro_batch: Some(2), .. }), "{err}");
    }

    #[test]
    fn accumulation_matches_single_batch() {
        let base = Gpt2Model::random(tiny(), 5).unwrap();
        let mut adapters = AdapterSet::attach(&base.config, &AdapterConfig::default(), 5).unwrap();
        for p in adapters.params_mut() {
            p.iter_mut().enumerate().for_each(|(i, x)| *x += 0.01 * ((i % 5) as f32 - 2.0));
        }
        let data: Vec<_> = (0..64).map(|i| example(i, 6 + (i as usize % 9), 32)).collect();
        let (l8, g8) = probe_window(&base, &adapters, &data, 8, Precision::F16).unwrap();
        let (l64, g64) = probe_window(&base, &adapters, &data, 64, Precision::F16).unwrap();
        assert_eq!(l8, l64);
        assert_eq!(g8, g64);
    }
}
