//! A small CPU transformer engine: GPT-2 architecture, low-rank adapters,
//! NF4 weight storage, emulated 16-bit compute and safetensors I/O.

pub mod gpt2;
pub mod io;
pub mod lora;
pub mod matrix;
pub mod nf4;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use gpt2::{ComputeWeights, DecodeState, DropoutSpec, Gpt2Config, Gpt2Model, Tape, Weight};
pub use lora::{expected_trainable, AdapterConfig, AdapterSet, BiasMode, LoraPair, TargetModule};
pub use matrix::{Matrix, Precision};
pub use nf4::Nf4Matrix;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model has no module named {0:?}")]
    ModuleNotFound(String),
    #[error("shape mismatch: {0}")]
    Mismatch(String),
    #[error("sequence of {len} tokens exceeds the context window of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad tensor file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantScheme {
    #[default]
    Nf4DoubleQuantization,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub scheme: QuantScheme,
    pub compute_precision: Precision,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            scheme: QuantScheme::Nf4DoubleQuantization,
            compute_precision: Precision::F16,
        }
    }
}

/// Whether the runtime can hold 4-bit weights. Setting `UKIL_NO_4BIT`
/// forces the unsupported branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuantSupport {
    Available,
    Unavailable(String),
}

pub const NO_4BIT_ENV: &str = "UKIL_NO_4BIT";

impl QuantSupport {
    pub fn detect() -> Self {
        match std::env::var(NO_4BIT_ENV) {
            Ok(v) if !v.is_empty() && v != "0" => Self::Unavailable(format!("{NO_4BIT_ENV}={v}")),
            _ => Self::Available,
        }
    }
}

/// What [`quantize_base`] actually did; stored in the run's config snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantOutcome {
    pub requested: QuantConfig,
    pub quantized: bool,
    pub fallback_reason: Option<String>,
}

/// Stores the base projections as NF4. Without 4-bit support the model stays
/// dense and the fallback is reported instead of failing.
pub fn quantize_base(model: &mut Gpt2Model, cfg: &QuantConfig, support: &QuantSupport) -> QuantOutcome {
    match support {
        QuantSupport::Available => {
            model.quantize_nf4();
            QuantOutcome {
                requested: cfg.clone(),
                quantized: true,
                fallback_reason: None,
            }
        }
        QuantSupport::Unavailable(reason) => {
            tracing::warn!(%reason, "4-bit weights unsupported, keeping the base model unquantized");
            QuantOutcome {
                requested: cfg.clone(),
                quantized: false,
                fallback_reason: Some(format!("unsupported hardware: {reason}")),
            }
        }
    }
}
