//! The adapter recipe end to end at desk scale: 50 records, a small GPT-2
//! shaped model, a 4-bit base with rank-3 adapters, batch 64 as 8 x 8, and a
//! before/after similarity comparison.
//!
//!     cargo run --release --example finetune_toy -- [epochs] [pretrain-epochs]
//!
//! With `pretrain-epochs` > 0 the small model is first trained as a plain
//! language model on the same text, which gives the adapters something to
//! steer; with 0 the base stays randomly initialized.

use std::path::Path;

use anyhow::Result;
use ukil::corpus::read_corpus;
use ukil::train::toy::{run_toy, ToyOptions};

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_env_filter("warn").init();
    let corpus = read_corpus(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy_corpus.json"))?;
    let mut args = std::env::args().skip(1);
    let mut opts = ToyOptions::new(0);
    if let Some(e) = args.next() {
        opts.epochs = e.parse()?;
    }
    if let Some(p) = args.next() {
        opts.pretrain_epochs = p.parse()?;
    }

    let report = run_toy(&corpus, &opts)?;
    if let Some(q) = &report.quant {
        println!("base quantized: {} {}", q.quantized, q.fallback_reason.as_deref().unwrap_or(""));
    }
    let log = &report.artifact.loss_log;
    for p in log.iter().step_by((log.len() / 10).max(1)) {
        println!("step {:>3}  loss {:.4}", p.step, p.loss);
    }
    println!(
        "loss {:.4} -> {:.4} (ratio {:.3}) over {} steps",
        report.artifact.initial_loss().unwrap_or(f64::NAN),
        report.artifact.final_loss().unwrap_or(f64::NAN),
        report.loss_ratio(),
        log.len()
    );
    println!(
        "cosine {:.3} -> {:.3} (gain {:+.3}), jaccard {:.3} -> {:.3}",
        report.base_eval.mean_cosine,
        report.tuned_eval.mean_cosine,
        report.cosine_gain(),
        report.base_eval.mean_jaccard,
        report.tuned_eval.mean_jaccard
    );
    let key = report.records[0].key();
    println!("\n{}", report.records[0].prompt);
    println!("  base : {}", report.base_outputs[&key].chars().take(160).collect::<String>());
    println!("  tuned: {}", report.tuned_outputs[&key].chars().take(160).collect::<String>());
    println!("\nelapsed {:.1?}", report.elapsed);
    Ok(())
}
