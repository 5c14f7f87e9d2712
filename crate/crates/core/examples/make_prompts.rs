//! Turn a corpus into question/answer records, split them with the fixed
//! seed and encode a few into fixed-length training examples.
//!
//!     cargo run --example make_prompts

use std::path::Path;

use anyhow::Result;
use sha2::{Digest, Sha256};
use ukil::corpus::read_corpus;
use ukil::prompts::{build_qa_records, encode, split, SplitSpec, MAX_LENGTH, PUBLISHED_PROMPT_COUNT};
use ukil::tokenizer::{Tokenizer, WordTokenizer};

fn main() -> Result<()> {
    let corpus = read_corpus(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy_corpus.json"))?;
    let build = build_qa_records(&corpus);
    let sections: usize = corpus.iter().map(|a| a.sections.len()).sum();
    println!(
        "{} acts + {} sections -> {} records (the full published corpus gave {PUBLISHED_PROMPT_COUNT})",
        corpus.len(),
        sections,
        build.records.len()
    );
    for issue in &build.issues {
        println!("  {} act {}: {}", if issue.error { "error" } else { "warning" }, issue.act_id, issue.message);
    }

    for r in build.records.iter().take(2) {
        println!("\n[{}]\nQ: {}\nA: {}", r.key(), r.prompt, r.response.chars().take(120).collect::<String>());
    }

    // Same seed, same partition, byte for byte.
    let spec = SplitSpec {
        validation_size: 10,
        seed: 42,
    };
    let (train, val) = split(&build.records, spec)?;
    let digest = |recs: &[ukil::prompts::PromptRecord]| {
        let mut h = Sha256::new();
        for r in recs {
            h.update(r.key());
            h.update([0]);
        }
        hex::encode(&h.finalize()[..8])
    };
    println!("\ntrain {} ({})  validation {} ({})", train.len(), digest(&train), val.len(), digest(&val));

    let tok = WordTokenizer::fit(build.records.iter().flat_map(|r| [r.prompt.as_str(), r.response.as_str()]), 1, usize::MAX);
    let ex = encode(&train[0], &tok, MAX_LENGTH)?;
    println!(
        "vocabulary {}; first example: {} positions, {} real tokens, {} supervised",
        tok.vocab_size(),
        ex.token_ids.len(),
        ex.len(),
        ex.supervised_tokens()
    );
    Ok(())
}
