use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{AdapterSet, ComputeWeights, Gpt2Model, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Greedy,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub strategy: Strategy,
    /// Defaults to the context window minus the prompt length.
    pub max_new_tokens: Option<usize>,
    pub temperature: f32,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            max_new_tokens: None,
            temperature: 1.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub tokens: Vec<u32>,
    /// The token budget ran out before end-of-sequence.
    pub truncated: bool,
}

fn argmax(xs: &[f32]) -> u32 {
    // First maximum wins, so ties resolve the same way every time.
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best as u32
}

/// Autoregressive decoding with a key/value cache. Stops at `eos` (not
/// included in the output) or when the budget is exhausted. The budget is
/// clamped so prompt plus output never exceeds the context window.
pub fn generate(
    model: &Gpt2Model,
    weights: &ComputeWeights,
    adapters: Option<&AdapterSet>,
    prompt: &[u32],
    params: &GenerationParams,
    eos: u32,
) -> Result<Generation, NnError> {
    let window = model.config.n_positions;
    if prompt.is_empty() || prompt.len() >= window {
        return Err(NnError::SequenceTooLong {
            len: prompt.len(),
            max: window,
        });
    }
    let room = window - prompt.len();
    let budget = params.max_new_tokens.unwrap_or(room).min(room);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut state = model.start_decoding();
    let mut logits = model.decode(weights, adapters, &mut state, prompt)?;
    let mut tokens = Vec::new();
    while tokens.len() < budget {
        let next = match params.strategy {
            Strategy::Greedy => argmax(&logits),
            Strategy::Sampled => {
                let t = params.temperature.max(1e-4);
                let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
                let probs: Vec<f32> = logits.iter().map(|&l| ((l - max) / t).exp()).collect();
                let dist = WeightedIndex::new(&probs).map_err(|e| NnError::Config(e.to_string()))?;
                dist.sample(&mut rng) as u32
            }
        };
        if next == eos {
            return Ok(Generation { tokens, truncated: false });
        }
        tokens.push(next);
        if tokens.len() == budget {
            break;
        }
        logits = model.decode(weights, adapters, &mut state, &[next])?;
    }
    Ok(Generation { tokens, truncated: true })
}
