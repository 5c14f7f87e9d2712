//! Similarity metrics, a per-model evaluation, the comparison table and an
//! error-analysis dossier, written to a temporary report directory.
//!
//!     cargo run --example evaluate

use anyhow::Result;
use ukil::eval::{
    comparison_report, cosine_similarity, error_case, evaluate_model, jaccard, published_reference_rows, write_report, ComparisonRow,
    IdfTable,
};

/// The error-analysis triple for the "Power to make rules" section.
const ERROR_CASE: &str = include_str!("../tests/fixtures/error_case.json");

fn main() -> Result<()> {
    println!("jaccard(\"a b c\", \"b c d\") = {}", jaccard("a b c", "b c d"));
    println!("cosine(\"x y\", \"x z\"), raw tf = {}", cosine_similarity("x y", "x z", &IdfTable::uniform()));

    let triple: serde_json::Value = serde_json::from_str(ERROR_CASE)?;
    let refs = vec![
        ("act-31".to_string(), "The Pensions Act, 1871 consolidates the law on pensions.".to_string()),
        ("act-31/section-303".to_string(), triple["expected"].as_str().unwrap_or_default().to_string()),
    ];
    let base = vec![
        ("act-31".to_string(), "The the the of of".to_string()),
        ("act-31/section-303".to_string(), "Bangladesh".to_string()),
    ];
    let tuned = vec![
        ("act-31".to_string(), "The Pensions Act 1871 consolidates the law relating to pensions.".to_string()),
        ("act-31/section-303".to_string(), triple["actual"].as_str().unwrap_or_default().to_string()),
    ];
    let base_result = evaluate_model("base", &base, &refs)?;
    let tuned_result = evaluate_model("tuned", &tuned, &refs)?;
    for r in [&base_result, &tuned_result] {
        println!("{:<6} cosine {:.3}  jaccard {:.3}", r.model_name, r.mean_cosine, r.mean_jaccard);
    }

    let mut rows = vec![
        ComparisonRow::from_result(&base_result, "0.4M", false),
        ComparisonRow::from_result(&tuned_result, "0.4M", true),
    ];
    rows.extend(published_reference_rows());
    let comparison = comparison_report(&rows)?;
    println!("\n{}", comparison.to_text());

    let field = |k: &str| triple[k].as_str().unwrap_or_default();
    let case = error_case(field("question"), field("expected"), field("actual"));
    println!("error case: cosine {:.3}, jaccard {:.3}", case.cosine, case.jaccard);

    let dir = tempfile::tempdir()?;
    write_report(dir.path(), &[base_result, tuned_result], &comparison, &[case])?;
    for entry in std::fs::read_dir(dir.path())? {
        println!("  wrote {}", entry?.file_name().to_string_lossy());
    }
    Ok(())
}
