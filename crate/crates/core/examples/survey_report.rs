//! Recompute the expert-panel score tables from the transcribed answer
//! histograms and reconcile them with the published means.
//!
//!     cargo run --example survey_report

use anyhow::Result;
use ukil::survey::{bundled_counts, bundled_published, case_average, consistency_report, statement_cross_case_average, statement_mean};

fn main() -> Result<()> {
    let matrix = bundled_counts();
    let published = bundled_published();

    print!("{:<4}", "");
    for c in &matrix.cases {
        print!("  case {c} (pub)   ");
    }
    println!("  average");
    for (i, text) in matrix.statements.iter().enumerate() {
        let s = i + 1;
        print!("S{s:<3}");
        for &c in &matrix.cases {
            let m = statement_mean(matrix.histogram(c, s).expect("complete table"))?;
            print!("  {m:.2}   ({:.2})  ", published.statement_means[&(c, s)]);
        }
        println!("  {:.2}   {text}", statement_cross_case_average(&matrix, s)?);
    }
    print!("avg ");
    for &c in &matrix.cases {
        print!("  {:.2}   ({:.2})  ", case_average(&matrix, c)?, published.case_averages[&c]);
    }
    println!();
    if let Some(o) = published.recomputed_overall() {
        println!("overall from the published per-case values: {o:.2}");
    }

    let report = consistency_report(&matrix, &published);
    println!("\nexpected panel size {}", report.expected_panel_size);
    for r in &report.rows_off_count {
        println!("  case {} statement {}: {} responses", r.case_id, r.statement, r.n);
    }
    for m in &report.published_vs_computed {
        println!(
            "  case {} statement {}: published {:.2}, histogram gives {:.2} ({:+.2})",
            m.case_id, m.statement, m.published, m.computed, m.delta
        );
    }
    for a in &report.aggregates {
        println!("  {}: published {:.2}, mean of published parts {:.3}", a.label, a.published, a.recomputed);
    }
    Ok(())
}
