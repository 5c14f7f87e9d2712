//! Tools for building a legal question-answering assistant over a corpus of
//! statutes: corpus ingestion, instruction-dataset construction, low-rank
//! adapter fine-tuning of a small causal language model, similarity
//! evaluation, an HTTP answering service and expert-survey analytics.

pub mod corpus;
pub mod nn;
pub mod prompts;
pub mod tokenizer;
pub mod train;
pub mod eval;
pub mod serve;
pub mod survey;
