//! Answer the three bundled case studies and keep the transcripts.
//!
//!     cargo run --example case_studies -- [base-dir adapter]
//!
//! With no arguments a small untrained model stands in, which exercises
//! the plumbing but produces noise.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Result;
use ukil::nn::{Gpt2Config, Gpt2Model, Precision, QuantConfig};
use ukil::serve::{bundled_cases, load, run_cases, ModelHandle};
use ukil::tokenizer::{Tokenizer, WordTokenizer};

fn main() -> Result<()> {
    let cases = bundled_cases();
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let handle = match args.as_slice() {
        [base, adapter] => load(base, Some(adapter), Some(&QuantConfig::default()))?,
        _ => {
            let tok = WordTokenizer::fit(cases.iter().map(|c| c.narrative.as_str()), 1, usize::MAX);
            let model = Gpt2Model::random(Gpt2Config::tiny(tok.vocab_size()), 7)?;
            ModelHandle::new(model, None, Arc::new(tok), Precision::F32, None)
        }
    };

    let out = std::env::temp_dir().join("ukil-cases");
    for t in run_cases(&handle, &cases, Some(&out))? {
        let case = &cases[t.case_id.unwrap_or(1) as usize - 1];
        println!("case {} [{:?}] {}", case.case_id, case.difficulty, case.title);
        println!("  Q: {}", case.question);
        println!("  A: {}{}", t.answer.chars().take(100).collect::<String>(), if t.truncated { " [truncated]" } else { "" });
        println!("  {:.0} ms, model {}", t.latency_ms, t.model_fingerprint);
    }
    println!("transcripts in {}", out.display());
    Ok(())
}
