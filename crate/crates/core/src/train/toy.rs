//! Desk-scale end-to-end run: a small corpus subset, a small base model and
//! the full adapter recipe, scored before and after training.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::{train, RunInfo, TrainArtifact, TrainConfig, TrainError, TrainMode, Trainable};
use crate::corpus::Act;
use crate::eval::{evaluate_model, EvalResult};
use crate::nn::{quantize_base, AdapterConfig, AdapterSet, Gpt2Config, Gpt2Model, QuantConfig, QuantOutcome, QuantSupport};
use crate::prompts::{build_qa_records, encode, PromptRecord, MAX_LENGTH};
use crate::serve::generate::{generate, GenerationParams};
use crate::tokenizer::{Tokenizer, WordTokenizer};

#[derive(Debug, Clone)]
pub struct ToyOptions {
    pub records: usize,
    pub epochs: usize,
    pub model: Gpt2Config,
    pub seed: u64,
    /// Full-parameter epochs over the corpus text before adapters are
    /// attached; zero keeps the randomly initialized base.
    pub pretrain_epochs: usize,
    pub pretrain_lr: f32,
    pub quant: Option<QuantConfig>,
    pub train: TrainConfig,
    pub adapter: AdapterConfig,
}

impl ToyOptions {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            records: 50,
            epochs: 30,
            model: Gpt2Config::tiny(vocab_size),
            seed: 42,
            pretrain_epochs: 0,
            pretrain_lr: 3e-3,
            quant: Some(QuantConfig::default()),
            train: TrainConfig::default(),
            adapter: AdapterConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyReport {
    pub records: Vec<PromptRecord>,
    pub artifact: TrainArtifact,
    pub quant: Option<QuantOutcome>,
    pub base_eval: EvalResult,
    pub tuned_eval: EvalResult,
    pub base_outputs: BTreeMap<String, String>,
    pub tuned_outputs: BTreeMap<String, String>,
    pub elapsed: Duration,
}

impl ToyReport {
    pub fn loss_ratio(&self) -> f64 {
        match (self.artifact.initial_loss(), self.artifact.final_loss()) {
            (Some(a), Some(b)) if a > 0.0 => b / a,
            _ => f64::NAN,
        }
    }

    pub fn cosine_gain(&self) -> f64 {
        self.tuned_eval.mean_cosine - self.base_eval.mean_cosine
    }
}

/// The first `n` records in build order, with a word tokenizer fitted on them.
pub fn toy_records(corpus: &[Act], n: usize) -> (Vec<PromptRecord>, WordTokenizer) {
    let mut records = build_qa_records(corpus).records;
    records.truncate(n);
    let tok = WordTokenizer::fit(records.iter().flat_map(|r| [r.prompt.as_str(), r.response.as_str()]), 1, usize::MAX);
    (records, tok)
}

/// Greedy answers for every record, keyed by record key.
pub fn answer_all(
    model: &Gpt2Model,
    adapters: Option<&AdapterSet>,
    tok: &WordTokenizer,
    records: &[PromptRecord],
    precision: crate::nn::Precision,
) -> Result<BTreeMap<String, String>, TrainError> {
    let w = model.compute_weights(precision);
    records
        .par_iter()
        .map(|r| {
            let ids = tok.encode(&r.prompt).map_err(|e| TrainError::Config(e.to_string()))?;
            let g = generate(model, &w, adapters, &ids, &GenerationParams::default(), tok.eos_id())?;
            let text = tok.decode(&g.tokens).map_err(|e| TrainError::Config(e.to_string()))?;
            Ok((r.key(), text))
        })
        .collect()
}

fn score(name: &str, outputs: &BTreeMap<String, String>, records: &[PromptRecord]) -> EvalResult {
    let refs: Vec<(String, String)> = records.iter().map(|r| (r.key(), r.response.clone())).collect();
    let outs: Vec<(String, String)> = outputs.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    evaluate_model(name, &outs, &refs).expect("outputs cover every record")
}

pub fn run_toy(corpus: &[Act], opts: &ToyOptions) -> Result<ToyReport, TrainError> {
    let start = Instant::now();
    let (records, tok) = toy_records(corpus, opts.records);
    let model_cfg = Gpt2Config {
        vocab_size: tok.vocab_size(),
        ..opts.model.clone()
    };
    let encoded = records
        .iter()
        .map(|r| encode(r, &tok, opts.train.max_length.min(MAX_LENGTH)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| TrainError::Config(e.to_string()))?;

    let mut base = Gpt2Model::random(model_cfg, opts.seed)?;
    if opts.pretrain_epochs > 0 {
        // Plain language modelling on the corpus text: every token supervised.
        let lm: Vec<_> = encoded
            .iter()
            .map(|ex| {
                let mut ex = ex.clone();
                for (l, (&t, &m)) in ex.label_ids.iter_mut().zip(ex.token_ids.iter().zip(&ex.attention_mask)) {
                    if m == 1 {
                        *l = t as i64;
                    }
                }
                ex
            })
            .collect();
        let cfg = TrainConfig {
            epochs: opts.pretrain_epochs,
            learning_rate: opts.pretrain_lr,
            mode: TrainMode::Full,
            effective_batch: 8,
            micro_batch: 8,
            grad_accumulation: 1,
            warmup_steps: 0,
            ..opts.train.clone()
        };
        train(Trainable::Full(&mut base), &lm, &[], &cfg, &RunInfo::default())?;
    }

    let quant = opts.quant.as_ref().map(|q| quantize_base(&mut base, q, &QuantSupport::detect()));
    let precision = opts.train.precision;
    let base_outputs = answer_all(&base, None, &tok, &records, precision)?;
    let base_eval = score("base", &base_outputs, &records);

    let mut adapters = AdapterSet::attach(&base.config, &opts.adapter, opts.seed)?;
    let cfg = TrainConfig {
        epochs: opts.epochs,
        seed: opts.seed,
        ..opts.train.clone()
    };
    let info = RunInfo {
        base_id: "toy".into(),
        tokenizer: "word".into(),
        quant: quant.clone(),
        out_dir: None,
    };
    let artifact = train(
        Trainable::Adapters {
            base: &base,
            adapters: &mut adapters,
        },
        &encoded,
        &[],
        &cfg,
        &info,
    )?;
    let tuned_outputs = answer_all(&base, Some(&adapters), &tok, &records, precision)?;
    let tuned_eval = score("tuned", &tuned_outputs, &records);
    Ok(ToyReport {
        records,
        artifact,
        quant,
        base_eval,
        tuned_eval,
        base_outputs,
        tuned_outputs,
        elapsed: start.elapsed(),
    })
}
