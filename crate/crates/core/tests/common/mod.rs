#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use ukil::corpus::{
    build_corpus, scrape, Act, CachePolicy, Fetcher, HtmlLayout, HtmlLayoutAdapter, RateLimiter, RawCache, RetryPolicy, Rule, Section,
};

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn portal_url() -> String {
    format!("file://{}", manifest_dir().join("tests/fixtures/portal").display())
}

/// Scrapes the fixture portal into a fresh cache under `work` and parses it.
pub fn scrape_fixture_portal(work: &Path) -> Vec<Act> {
    let fetcher = Fetcher::new(
        RawCache::open(work.join("raw")).unwrap(),
        RateLimiter::new(1000.0, 1000.0, Duration::from_secs(1)),
        RetryPolicy::default(),
    );
    let adapter = HtmlLayoutAdapter::new(HtmlLayout::default()).unwrap();
    let summary = scrape(&fetcher, &adapter, &portal_url(), "index.html", CachePolicy::PreferCache).unwrap();
    assert!(summary.failed.is_empty(), "{:?}", summary.failed);
    build_corpus(fetcher.cache(), &adapter).unwrap()
}

pub fn toy_corpus() -> Vec<Act> {
    ukil::corpus::read_corpus(&manifest_dir().join("data/toy_corpus.json")).unwrap()
}

pub fn section(act_id: u64, section_id: u64) -> Section {
    Section {
        section_id,
        name: format!("Section {section_id}"),
        details: format!("Provision {section_id} of act {act_id} applies to every district."),
        related_acts: vec![],
        act_id,
    }
}

pub fn act(id: u64, n_sections: u64) -> Act {
    let sections: Vec<Section> = (1..=n_sections).map(|s| section(id, s)).collect();
    Act {
        id,
        name: format!("The Sample Act {id}, {}", 1900 + id),
        repelled: false,
        text: format!("An Act to provide for sample matters number {id}."),
        published_date: None,
        related_act: vec![],
        lower_text: vec![],
        num_of_sections: sections.len(),
        sections,
    }
}

/// Synthetic corpus of `n_acts` acts with 1..=5 sections each.
pub fn synthetic_corpus(n_acts: u64) -> Vec<Act> {
    (1..=n_acts).map(|id| act(id, 1 + id % 5)).collect()
}

/// One small corpus per error rule, each valid except for that rule.
pub fn violation_fixtures() -> Vec<(Rule, Vec<Act>)> {
    let base = || vec![act(1, 2), act(2, 1)];
    let mut out = Vec::new();

    let mut c = base();
    c[1].id = 1;
    for s in &mut c[1].sections {
        s.act_id = 1;
        s.section_id += 10;
    }
    out.push((Rule::DuplicateActId, c));

    let mut c = base();
    c[0].sections[1].section_id = 1;
    out.push((Rule::DuplicateSectionId, c));

    let mut c = base();
    c[0].sections[0].act_id = 2;
    out.push((Rule::SectionActMismatch, c));

    let mut c = base();
    c[0].num_of_sections = 5;
    out.push((Rule::SectionCountMismatch, c));

    let mut c = base();
    c[0].related_act = vec![99];
    out.push((Rule::UnresolvedRelatedAct, c));

    let mut c = base();
    c[1].sections[0].related_acts = vec![77];
    out.push((Rule::UnresolvedRelatedAct, c));

    let mut c = base();
    c[0].name = "  ".into();
    out.push((Rule::EmptyActName, c));

    let mut c = base();
    c[1].sections[0].details = "\n".into();
    out.push((Rule::EmptySectionDetails, c));

    let mut c = base();
    c[0].sections[0].name = String::new();
    out.push((Rule::EmptySectionName, c));

    out
}

/// Question, expected answer and model answer from the published error analysis.
pub fn error_case_triple() -> (String, String, String) {
    let v: serde_json::Value = serde_json::from_str(include_str!("../fixtures/error_case.json")).unwrap();
    let f = |k: &str| v[k].as_str().unwrap().to_string();
    (f("question"), f("expected"), f("actual"))
}

/// Char-by-char scanner: lowercase alphanumeric runs.
pub fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Nested-loop set construction and intersection.
pub fn oracle_jaccard(a: &str, b: &str) -> f64 {
    let mut sa: Vec<String> = Vec::new();
    for t in oracle_tokens(a) {
        if !sa.contains(&t) {
            sa.push(t);
        }
    }
    let mut sb: Vec<String> = Vec::new();
    for t in oracle_tokens(b) {
        if !sb.contains(&t) {
            sb.push(t);
        }
    }
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let mut inter = 0;
    for x in &sa {
        for y in &sb {
            if x == y {
                inter += 1;
            }
        }
    }
    let mut union = sa.clone();
    for y in &sb {
        if !union.contains(y) {
            union.push(y.clone());
        }
    }
    inter as f64 / union.len() as f64
}

/// Dense-vector cosine over the joint vocabulary with idf recomputed from
/// `refs` term by term; `None` weights every term 1.
pub fn oracle_cosine(a: &str, b: &str, refs: Option<&[&str]>) -> f64 {
    let (ta, tb) = (oracle_tokens(a), oracle_tokens(b));
    let mut vocab: Vec<String> = Vec::new();
    for t in ta.iter().chain(&tb) {
        if !vocab.contains(t) {
            vocab.push(t.clone());
        }
    }
    let weight = |term: &str| match refs {
        None => 1.0,
        Some(docs) => {
            let df = docs.iter().filter(|d| oracle_tokens(d).iter().any(|t| t == term)).count();
            ((1.0 + docs.len() as f64) / (1.0 + df as f64)).ln() + 1.0
        }
    };
    let va: Vec<f64> = vocab.iter().map(|v| ta.iter().filter(|t| *t == v).count() as f64 * weight(v)).collect();
    let vb: Vec<f64> = vocab.iter().map(|v| tb.iter().filter(|t| *t == v).count() as f64 * weight(v)).collect();
    let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
    let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Random text over a small vocabulary with mixed case and separators.
pub fn random_text(rng: &mut impl rand::Rng) -> String {
    const WORDS: [&str; 8] = ["act", "Section", "RULES", "court", "1871", "board", "may", "x"];
    const SEPS: [&str; 5] = [" ", ", ", "\n", "--", ". "];
    let n = rng.random_range(0..9);
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s.push_str(SEPS[rng.random_range(0..SEPS.len())]);
        }
        s.push_str(WORDS[rng.random_range(0..WORDS.len())]);
    }
    s
}
