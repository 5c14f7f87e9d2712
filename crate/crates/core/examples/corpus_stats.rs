//! Statistics and validation for a corpus file.
//!
//! With no argument this reads the bundled toy corpus. Pass the path of the
//! published act dataset (exported as a JSON array of acts) to compare its
//! figures with the published ones.
//!
//!     cargo run --example corpus_stats -- path/to/acts.json

use std::path::{Path, PathBuf};

use anyhow::Result;
use ukil::corpus::{corpus_stats, read_corpus, validate_corpus};

// Published descriptive statistics of the act dataset.
const PUBLISHED_ACTS: usize = 595;
const PUBLISHED_MEANS: [(&str, f64); 4] = [
    ("act name", 50.30),
    ("act text", 438.37),
    ("section name", 38.07),
    ("section text", 736.69),
];

fn main() -> Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy_corpus.json"));
    let corpus = read_corpus(&path)?;
    let report = validate_corpus(&corpus);
    println!("{}: {} acts, {} errors, {} warnings", path.display(), report.checked_acts, report.errors.len(), report.warnings.len());
    for v in report.errors.iter().take(10) {
        println!("  {} act {} section {:?}: {}", v.rule.as_str(), v.act_id, v.section_id, v.message);
    }

    let s = corpus_stats(&corpus)?;
    let ours = [s.mean_act_name_len, s.mean_act_detail_len, s.mean_section_name_len, s.mean_section_detail_len];
    println!("acts {:>6}   published {PUBLISHED_ACTS}", s.act_count);
    println!("sections {:>2}   ({:.2} per act)", s.section_count, s.mean_sections_per_act);
    for ((label, published), value) in PUBLISHED_MEANS.iter().zip(ours) {
        println!("mean {label:<13} {value:>8.2}   published {published:>7.2}   diff {:+.2}", value - published);
    }
    Ok(())
}
