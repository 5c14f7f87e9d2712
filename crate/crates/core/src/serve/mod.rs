//! Loading a base model with its adapter, answering questions, the bundled
//! case studies and the HTTP service.

pub mod generate;
pub mod http;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::io::{load_adapters, load_model, ADAPTER_FILE, MODEL_FILE};
use crate::nn::{quantize_base, AdapterSet, ComputeWeights, Gpt2Model, NnError, Precision, QuantConfig, QuantOutcome, QuantSupport};
use crate::tokenizer::{Tokenizer, WordTokenizer};
use crate::train::{ConfigSnapshot, SNAPSHOT_FILE};

pub use generate::{generate, Generation, GenerationParams, Strategy};

pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const DISCLAIMER: &str = "This answer is generated by a language model for research use. It is not legal advice.";

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("adapter does not fit the base model: {0}")]
    AdapterMismatch(String),
    #[error("cannot load {path}: {message}")]
    LoadError { path: PathBuf, message: String },
    #[error("question is empty")]
    EmptyQuestion,
    #[error("prompt has {tokens} tokens but the context window is {window}")]
    PromptTooLong { tokens: usize, window: usize },
    #[error("generation failed: {0}")]
    GenerationError(String),
    #[error("no cases to run")]
    EmptyCases,
    #[error("cannot bind {addr}: {message}")]
    BindError { addr: String, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub case_id: u32,
    pub difficulty: Difficulty,
    pub title: String,
    pub narrative: String,
    pub question: String,
}

impl CaseStudy {
    /// Narrative followed by the question on its own line.
    pub fn prompt(&self) -> String {
        format!("{}\n{}", self.narrative, self.question)
    }
}

const BUNDLED_CASES: &str = include_str!("../../data/cases.json");

/// The three expert-review cases shipped with the crate.
pub fn bundled_cases() -> Vec<CaseStudy> {
    serde_json::from_str(BUNDLED_CASES).expect("bundled cases are valid JSON")
}

pub fn read_cases(path: &Path) -> Result<Vec<CaseStudy>, ServeError> {
    let text = fs::read_to_string(path).map_err(|e| ServeError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| ServeError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub truncated: bool,
}

/// Anything that can answer a question; the HTTP layer only sees this.
pub trait Answerer: Send + Sync {
    fn answer(&self, question: &str, params: &GenerationParams) -> Result<Answer, ServeError>;
    fn fingerprint(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub case_id: Option<u32>,
    pub question: String,
    pub answer: String,
    pub truncated: bool,
    pub latency_ms: f64,
    pub model_fingerprint: String,
}

/// Times one answer and wraps it in a transcript.
pub fn ask(answerer: &dyn Answerer, question: &str, params: &GenerationParams) -> Result<Transcript, ServeError> {
    if question.trim().is_empty() {
        return Err(ServeError::EmptyQuestion);
    }
    let start = Instant::now();
    let answer = answerer.answer(question, params)?;
    Ok(Transcript {
        case_id: None,
        question: question.to_string(),
        answer: answer.text,
        truncated: answer.truncated,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
        model_fingerprint: answerer.fingerprint(),
    })
}

/// A loaded base model, optional adapters and tokenizer, read-only once built.
pub struct ModelHandle {
    pub model: Gpt2Model,
    pub adapters: Option<AdapterSet>,
    pub tokenizer: Arc<dyn Tokenizer + Send + Sync>,
    pub quant: Option<QuantOutcome>,
    weights: ComputeWeights,
    fingerprint: String,
}

impl ModelHandle {
    pub fn new(
        model: Gpt2Model,
        adapters: Option<AdapterSet>,
        tokenizer: Arc<dyn Tokenizer + Send + Sync>,
        precision: Precision,
        quant: Option<QuantOutcome>,
    ) -> Self {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&model.config).expect("serializable"));
        for x in model.wte.data.iter().step_by(97) {
            h.update(x.to_le_bytes());
        }
        if let Some(a) = &adapters {
            for p in a.params() {
                for x in p {
                    h.update(x.to_le_bytes());
                }
            }
        }
        let fingerprint = hex::encode(&h.finalize()[..8]);
        let weights = model.compute_weights(precision);
        Self {
            model,
            adapters,
            tokenizer,
            quant,
            weights,
            fingerprint,
        }
    }
}

impl Answerer for ModelHandle {
    fn answer(&self, question: &str, params: &GenerationParams) -> Result<Answer, ServeError> {
        if question.trim().is_empty() {
            return Err(ServeError::EmptyQuestion);
        }
        let ids = self.tokenizer.encode(question).map_err(|e| ServeError::GenerationError(e.to_string()))?;
        let window = self.model.config.n_positions;
        if ids.len() >= window {
            return Err(ServeError::PromptTooLong { tokens: ids.len(), window });
        }
        let g = generate(&self.model, &self.weights, self.adapters.as_ref(), &ids, params, self.tokenizer.eos_id())
            .map_err(|e| ServeError::GenerationError(e.to_string()))?;
        let text = self.tokenizer.decode(&g.tokens).map_err(|e| ServeError::GenerationError(e.to_string()))?;
        Ok(Answer {
            text,
            truncated: g.truncated,
        })
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}

fn load_err(path: &Path, e: impl std::fmt::Display) -> ServeError {
    ServeError::LoadError {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Loads `base_dir` (`config.json`, `model.safetensors`, `tokenizer.json`),
/// optionally quantizes it, and attaches the adapter at `adapter` (a file or
/// a training output directory).
pub fn load(base_dir: &Path, adapter: Option<&Path>, quant: Option<&QuantConfig>) -> Result<ModelHandle, ServeError> {
    if !base_dir.join(MODEL_FILE).is_file() {
        return Err(load_err(&base_dir.join(MODEL_FILE), "no such file"));
    }
    let mut model = load_model(base_dir).map_err(|e| load_err(base_dir, e))?;
    let tok_path = base_dir.join(TOKENIZER_FILE);
    let tokenizer = WordTokenizer::load(&tok_path).map_err(|e| load_err(&tok_path, e))?;
    if tokenizer.vocab_size() != model.config.vocab_size {
        return Err(load_err(
            &tok_path,
            format!("tokenizer has {} entries, model vocabulary is {}", tokenizer.vocab_size(), model.config.vocab_size),
        ));
    }

    let adapters = match adapter {
        None => None,
        Some(path) => {
            let (file, snapshot) = if path.is_dir() {
                (path.join(ADAPTER_FILE), Some(path.join(SNAPSHOT_FILE)))
            } else {
                (path.to_path_buf(), path.parent().map(|p| p.join(SNAPSHOT_FILE)))
            };
            if !file.is_file() {
                return Err(load_err(&file, "no such file"));
            }
            if let Some(snap) = snapshot.filter(|p| p.is_file()) {
                let snap = ConfigSnapshot::read(&snap).map_err(|e| load_err(&snap, e))?;
                let (a, b) = (&snap.base_config, &model.config);
                if a.n_embd != b.n_embd || a.n_layer != b.n_layer || a.vocab_size != b.vocab_size {
                    return Err(ServeError::AdapterMismatch(format!(
                        "trained on {} layers x {} hidden, vocabulary {}; base has {} x {}, vocabulary {}",
                        a.n_layer, a.n_embd, a.vocab_size, b.n_layer, b.n_embd, b.vocab_size
                    )));
                }
            }
            Some(load_adapters(&file, &model.config).map_err(|e| match e {
                NnError::Mismatch(m) | NnError::ModuleNotFound(m) => ServeError::AdapterMismatch(m),
                other => load_err(&file, other),
            })?)
        }
    };

    let (precision, outcome) = match quant {
        Some(q) => (q.compute_precision, Some(quantize_base(&mut model, q, &QuantSupport::detect()))),
        None => (Precision::F32, None),
    };
    Ok(ModelHandle::new(model, adapters, Arc::new(tokenizer), precision, outcome))
}

/// Answers every case with default parameters and writes one JSON
/// transcript per case plus `transcripts.json` into `out_dir`.
pub fn run_cases(answerer: &dyn Answerer, cases: &[CaseStudy], out_dir: Option<&Path>) -> Result<Vec<Transcript>, ServeError> {
    if cases.is_empty() {
        return Err(ServeError::EmptyCases);
    }
    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        let mut t = ask(answerer, &case.prompt(), &GenerationParams::default())?;
        t.case_id = Some(case.case_id);
        tracing::info!(case = case.case_id, truncated = t.truncated, latency_ms = t.latency_ms, "case answered");
        out.push(t);
    }
    if let Some(dir) = out_dir {
        let io = |path: &Path, e: std::io::Error| ServeError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        for t in &out {
            let path = dir.join(format!("case-{}.json", t.case_id.unwrap_or_default()));
            fs::write(&path, serde_json::to_string_pretty(t).expect("serializable")).map_err(|e| io(&path, e))?;
        }
        let path = dir.join("transcripts.json");
        fs::write(&path, serde_json::to_string_pretty(&out).expect("serializable")).map_err(|e| io(&path, e))?;
    }
    Ok(out)
}
