//! Instruction-tuning records rendered from the curated corpus.

mod encode;
mod records;
mod split;

pub use encode::{encode, EncodedExample, IGNORE_INDEX, MAX_LENGTH};
pub use records::{
    build_qa_records, read_jsonl, render_act_prompt, render_section_prompt, write_jsonl, BuildIssue, PromptKind,
    PromptRecord, QaBuild,
};
pub use split::{split, SplitSpec};

/// Prompt count reported for the full published corpus.
pub const PUBLISHED_PROMPT_COUNT: usize = 18_488;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("act {act_id} section {section_id} has an empty name")]
    EmptySectionName { act_id: u64, section_id: u64 },
    #[error("validation size {requested} must be between 1 and {available} - 1")]
    SplitTooLarge { requested: usize, available: usize },
    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
