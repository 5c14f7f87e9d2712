//! Text-similarity scoring of model outputs against reference answers,
//! comparison tables and error-case dossiers.

pub mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{cosine_similarity, jaccard, metric_tokens, IdfTable, TOKENIZATION};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("output and reference keys differ (missing outputs: {missing:?}; unknown outputs: {unexpected:?})")]
    KeyMismatch { missing: Vec<String>, unexpected: Vec<String> },
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("comparison needs at least one result")]
    EmptyReport,
    #[error("{model}: missing {metric}")]
    MissingMetric { model: String, metric: &'static str },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |e| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub key: String,
    pub cosine: f64,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub model_name: String,
    pub mean_cosine: f64,
    pub mean_jaccard: f64,
    pub per_example: Vec<ExampleScore>,
    pub n: usize,
    pub tokenization: String,
}

fn keyed(pairs: &[(String, String)]) -> Result<BTreeMap<&str, &str>, EvalError> {
    let mut out = BTreeMap::new();
    for (k, v) in pairs {
        if out.insert(k.as_str(), v.as_str()).is_some() {
            return Err(EvalError::DuplicateKey(k.clone()));
        }
    }
    Ok(out)
}

/// Scores each output against the reference with the same key. The idf
/// table is fitted on the references.
pub fn evaluate_model(model_name: &str, outputs: &[(String, String)], references: &[(String, String)]) -> Result<EvalResult, EvalError> {
    let refs = keyed(references)?;
    let idf = IdfTable::fit(refs.values().copied());
    evaluate_with_idf(model_name, outputs, references, &idf)
}

pub fn evaluate_with_idf(
    model_name: &str,
    outputs: &[(String, String)],
    references: &[(String, String)],
    idf: &IdfTable,
) -> Result<EvalResult, EvalError> {
    let outs = keyed(outputs)?;
    let refs = keyed(references)?;
    let ok: BTreeSet<&str> = outs.keys().copied().collect();
    let rk: BTreeSet<&str> = refs.keys().copied().collect();
    if ok != rk {
        return Err(EvalError::KeyMismatch {
            missing: rk.difference(&ok).map(|s| s.to_string()).collect(),
            unexpected: ok.difference(&rk).map(|s| s.to_string()).collect(),
        });
    }
    let per_example: Vec<ExampleScore> = refs
        .par_iter()
        .map(|(key, reference)| {
            let out = outs[key];
            ExampleScore {
                key: key.to_string(),
                cosine: cosine_similarity(out, reference, idf),
                jaccard: jaccard(out, reference),
            }
        })
        .collect();
    let n = per_example.len();
    let mean = |f: fn(&ExampleScore) -> f64| if n == 0 { 0.0 } else { per_example.iter().map(f).sum::<f64>() / n as f64 };
    Ok(EvalResult {
        model_name: model_name.to_string(),
        mean_cosine: mean(|e| e.cosine),
        mean_jaccard: mean(|e| e.jaccard),
        per_example,
        n,
        tokenization: TOKENIZATION.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub parameters: String,
    pub fine_tuned: bool,
    pub cosine: Option<f64>,
    pub jaccard: Option<f64>,
}

impl ComparisonRow {
    pub fn from_result(result: &EvalResult, parameters: &str, fine_tuned: bool) -> Self {
        Self {
            model: result.model_name.clone(),
            parameters: parameters.to_string(),
            fine_tuned,
            cosine: Some(result.mean_cosine),
            jaccard: Some(result.mean_jaccard),
        }
    }
}

/// The four rows of the reference comparison table reported for the
/// original full-scale run, for side-by-side rendering with local results.
pub fn published_reference_rows() -> Vec<ComparisonRow> {
    let row = |model: &str, parameters: &str, fine_tuned, cosine, jaccard| ComparisonRow {
        model: model.to_string(),
        parameters: parameters.to_string(),
        fine_tuned,
        cosine: Some(cosine),
        jaccard: Some(jaccard),
    };
    vec![
        row("Mistral-7b", "7B", false, 0.446, 0.122),
        row("Gemma-2b", "2B", false, 0.436, 0.113),
        row("GPT-2 Medium", "0.345B", false, 0.178, 0.062),
        row("GPT2-UKIL-EN (Ours)", "0.345B", true, 0.515, 0.133),
    ]
}

/// One generated answer, keyed like the reference record it answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub key: String,
    pub output: String,
}

pub fn write_outputs(path: &Path, outputs: &[ModelOutput]) -> Result<(), EvalError> {
    let mut text = String::new();
    for o in outputs {
        text.push_str(&serde_json::to_string(o).expect("serializable"));
        text.push('\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_outputs(path: &Path) -> Result<Vec<ModelOutput>, EvalError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Io {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    cells: Vec<[String; 5]>,
}

const HEADER: [&str; 5] = ["Model", "Parameters", "Fine-tuned", "Cosine Sim.", "Jaccard Sim."];

/// Rows in the order given, metrics to three decimals.
pub fn comparison_report(rows: &[ComparisonRow]) -> Result<Comparison, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let cells = rows
        .iter()
        .map(|r| {
            let metric = |v: Option<f64>, name| {
                v.map(|x| format!("{x:.3}")).ok_or_else(|| EvalError::MissingMetric {
                    model: r.model.clone(),
                    metric: name,
                })
            };
            Ok([
                r.model.clone(),
                r.parameters.clone(),
                if r.fine_tuned { "Yes" } else { "No" }.to_string(),
                metric(r.cosine, "cosine")?,
                metric(r.jaccard, "jaccard")?,
            ])
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(Comparison { cells })
}

impl Comparison {
    pub fn rows(&self) -> &[[String; 5]] {
        &self.cells
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for row in &self.cells {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 input")
    }

    pub fn to_text(&self) -> String {
        let mut widths = HEADER.map(|h| h.chars().count());
        for row in &self.cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: [&str; 5]| {
            cells
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i >= 3 { format!("{c:>w$}") } else { format!("{c:<w$}") })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = vec![line(HEADER)];
        out.push(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
        for row in &self.cells {
            out.push(line([&row[0], &row[1], &row[2], &row[3], &row[4]]));
        }
        out.join("\n") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCase {
    pub question: String,
    pub expected: String,
    pub actual: String,
    pub cosine: f64,
    pub jaccard: f64,
    pub annotations: String,
}

/// Bundles a question/expected/actual triple with both scores. Cosine uses
/// idf fitted on the expected answer alone.
pub fn error_case(question: &str, expected: &str, actual: &str) -> ErrorCase {
    let idf = IdfTable::fit([expected]);
    ErrorCase {
        question: question.to_string(),
        expected: expected.to_string(),
        actual: actual.to_string(),
        cosine: cosine_similarity(actual, expected, &idf),
        jaccard: jaccard(actual, expected),
        annotations: String::new(),
    }
}

/// Writes `scores.csv` (one row per model and example), `comparison.csv`,
/// `comparison.txt` and `errorcases/NNN.json`.
pub fn write_report(dir: &Path, results: &[EvalResult], comparison: &Comparison, error_cases: &[ErrorCase]) -> Result<(), EvalError> {
    let cases_dir = dir.join("errorcases");
    fs::create_dir_all(&cases_dir).map_err(io_err(&cases_dir))?;
    let scores = dir.join("scores.csv");
    let csv_err = |e: csv::Error| EvalError::Io {
        path: dir.join("scores.csv"),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(&scores).map_err(csv_err)?;
    w.write_record(["model", "key", "cosine", "jaccard"]).map_err(csv_err)?;
    for r in results {
        for e in &r.per_example {
            w.write_record([r.model_name.as_str(), &e.key, &format!("{:.6}", e.cosine), &format!("{:.6}", e.jaccard)])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(&scores))?;
    let path = dir.join("comparison.csv");
    fs::write(&path, comparison.to_csv()).map_err(io_err(&path))?;
    let path = dir.join("comparison.txt");
    fs::write(&path, comparison.to_text()).map_err(io_err(&path))?;
    for (i, case) in error_cases.iter().enumerate() {
        let path = cases_dir.join(format!("{:03}.json", i + 1));
        fs::write(&path, serde_json::to_string_pretty(case).expect("serializable")).map_err(io_err(&path))?;
    }
    Ok(())
}

/// The `k` lowest-cosine examples as error cases.
pub fn worst_cases(result: &EvalResult, questions: &BTreeMap<String, String>, outputs: &BTreeMap<String, String>, references: &BTreeMap<String, String>, k: usize) -> Vec<ErrorCase> {
    let mut scored: Vec<&ExampleScore> = result.per_example.iter().collect();
    scored.sort_by(|a, b| a.cosine.total_cmp(&b.cosine).then_with(|| a.key.cmp(&b.key)));
    scored
        .into_iter()
        .take(k)
        .map(|e| ErrorCase {
            question: questions.get(&e.key).cloned().unwrap_or_default(),
            expected: references.get(&e.key).cloned().unwrap_or_default(),
            actual: outputs.get(&e.key).cloned().unwrap_or_default(),
            cosine: e.cosine,
            jaccard: e.jaccard,
            annotations: format!("lowest-cosine example for {}", result.model_name),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn identical_outputs_score_one() {
        let refs = pairs(&[("k1", "the pawnee may retain goods"), ("k2", "public accountant security")]);
        let r = evaluate_model("m", &refs, &refs).unwrap();
        assert!((r.mean_cosine - 1.0).abs() < 1e-12);
        assert_eq!(r.mean_jaccard, 1.0);
        assert_eq!(r.n, 2);
    }

    #[test]
    fn key_mismatch() {
        let refs = pairs(&[("k1", "a")]);
        let outs = pairs(&[("k2", "a")]);
        let err = evaluate_model("m", &outs, &refs).unwrap_err();
        assert!(matches!(err, EvalError::KeyMismatch { ref missing, ref unexpected } if missing == &["k1"] && unexpected == &["k2"]));
        assert!(matches!(evaluate_model("m", &pairs(&[("k", "a"), ("k", "b")]), &refs), Err(EvalError::DuplicateKey(_))));
    }

    #[test]
    fn means_compose_hand_examples() {
        // jaccard 0.5 and 1.0
        let refs = pairs(&[("a", "a b c"), ("b", "x y")]);
        let outs = pairs(&[("a", "b c d"), ("b", "y x")]);
        let r = evaluate_model("m", &outs, &refs).unwrap();
        assert!((r.mean_jaccard - 0.75).abs() < 1e-12);
    }

    #[test]
    fn comparison_rendering() {
        let rows = vec![ComparisonRow {
            model: "m".into(),
            parameters: "1B".into(),
            fine_tuned: true,
            cosine: Some(0.5),
            jaccard: Some(0.25),
        }];
        let c = comparison_report(&rows).unwrap();
        assert_eq!(c.to_csv(), "Model,Parameters,Fine-tuned,Cosine Sim.,Jaccard Sim.\nm,1B,Yes,0.500,0.250\n");
        assert_eq!(c.to_text().lines().count(), 3);
        assert!(matches!(comparison_report(&[]), Err(EvalError::EmptyReport)));
        let missing = ComparisonRow { cosine: None, ..rows[0].clone() };
        assert!(matches!(comparison_report(&[missing]), Err(EvalError::MissingMetric { metric: "cosine", .. })));
    }

    #[test]
    fn error_case_edges() {
        let same = error_case("q", "a b", "a b");
        assert!((same.cosine - 1.0).abs() < 1e-12);
        assert_eq!(same.jaccard, 1.0);
        let empty = error_case("q", "a b", "");
        assert_eq!((empty.cosine, empty.jaccard), (0.0, 0.0));
    }
}
