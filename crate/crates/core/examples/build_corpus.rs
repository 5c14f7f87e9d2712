//! Scrape the bundled fixture portal into a raw cache, parse it into a
//! corpus, validate it and print the descriptive statistics.
//!
//! Point `UKIL_PORTAL_URL` at a live portal (or a mirror) to scrape it
//! instead; the cache directory makes reruns free.
//!
//!     cargo run --example build_corpus

use std::path::Path;
use std::time::Duration;

use anyhow::Result;
use ukil::corpus::{
    build_corpus, corpus_from_json, corpus_stats, corpus_to_json, filter_repealed, scrape, split_title_year, validate_corpus,
    CachePolicy, Fetcher, HtmlLayout, HtmlLayoutAdapter, RateLimiter, RawCache, RetryPolicy, PORTAL_URL_ENV,
};

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_env_filter("info").init();

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/portal");
    let base_url = std::env::var(PORTAL_URL_ENV).unwrap_or_else(|_| format!("file://{}", fixtures.display()));
    let work = tempfile::tempdir()?;

    let fetcher = Fetcher::new(
        RawCache::open(work.path().join("raw"))?,
        RateLimiter::new(2.0, 2.0, Duration::from_secs(10)),
        RetryPolicy::default(),
    );
    let adapter = HtmlLayoutAdapter::new(HtmlLayout::default())?;
    let summary = scrape(&fetcher, &adapter, &base_url, "index.html", CachePolicy::PreferCache)?;
    println!("listed {} act pages, fetched {}, failed {}", summary.listed, summary.fetched, summary.failed.len());

    let corpus = build_corpus(fetcher.cache(), &adapter)?;
    for act in &corpus {
        let (title, year) = split_title_year(&act.name);
        println!(
            "  act {:>3}  {:<42} year {:<5} sections {}  repealed {}",
            act.id,
            title,
            year.unwrap_or("-"),
            act.num_of_sections,
            act.repealed()
        );
    }

    // The JSON form is the interchange format; it must round-trip exactly.
    let json = corpus_to_json(&corpus)?;
    assert_eq!(corpus_to_json(&corpus_from_json(&json)?)?, json);

    let report = validate_corpus(&corpus);
    println!("validation: {} errors, {} warnings", report.errors.len(), report.warnings.len());
    for w in &report.warnings {
        println!("  warning: act {} {}", w.act_id, w.message);
    }

    let in_force = filter_repealed(&corpus);
    let stats = corpus_stats(&in_force)?;
    println!("{} acts in force, {} sections", stats.act_count, stats.section_count);
    println!(
        "mean lengths: act name {:.2}, act text {:.2}, section name {:.2}, section text {:.2}",
        stats.mean_act_name_len, stats.mean_act_detail_len, stats.mean_section_name_len, stats.mean_section_detail_len
    );
    Ok(())
}
