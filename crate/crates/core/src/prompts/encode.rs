use serde::{Deserialize, Serialize};

use super::{PromptError, PromptRecord};
use crate::tokenizer::Tokenizer;

pub const MAX_LENGTH: usize = 768;

/// Label value excluded from the loss.
pub const IGNORE_INDEX: i64 = -100;

/// A fixed-length causal training example. Labels are aligned with
/// `token_ids` (the model shifts them), and prompt and padding positions
/// carry [`IGNORE_INDEX`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub label_ids: Vec<i64>,
}

impl EncodedExample {
    /// Number of non-padding positions.
    pub fn len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn supervised_tokens(&self) -> usize {
        self.label_ids.iter().filter(|&&l| l != IGNORE_INDEX).count()
    }
}

/// Tokenizes prompt then response as one sequence (the response followed by
/// end-of-sequence when it is non-empty), truncates to `max_length` and pads
/// on the right.
pub fn encode(record: &PromptRecord, tokenizer: &dyn Tokenizer, max_length: usize) -> Result<EncodedExample, PromptError> {
    let prompt = tokenizer.encode(&record.prompt)?;
    let mut response = tokenizer.encode(&record.response)?;
    if !response.is_empty() {
        response.push(tokenizer.eos_id());
    }
    let mut token_ids = Vec::with_capacity(max_length);
    let mut label_ids = Vec::with_capacity(max_length);
    for &t in &prompt {
        token_ids.push(t);
        label_ids.push(IGNORE_INDEX);
    }
    for &t in &response {
        token_ids.push(t);
        label_ids.push(t as i64);
    }
    token_ids.truncate(max_length);
    label_ids.truncate(max_length);
    let real = token_ids.len();
    let mut attention_mask = vec![1u8; real];
    token_ids.resize(max_length, tokenizer.pad_id());
    label_ids.resize(max_length, IGNORE_INDEX);
    attention_mask.resize(max_length, 0);
    Ok(EncodedExample {
        token_ids,
        attention_mask,
        label_ids,
    })
}
