//! Likert survey aggregation for the expert case-study panel.
//!
//! Ratings run from 1 (strongly disagree) to 7 (strongly agree). Inputs are
//! per-statement histograms; means are unweighted at every level.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const RATINGS: usize = 7;
pub const EXPECTED_PANEL_SIZE: u32 = 4;
/// Two published figures agree when they differ by at most this much.
pub const TOLERANCE: f64 = 0.005;

pub const STATEMENTS: [&str; 7] = [
    "I think the response provided by the tool is accurate.",
    "I think the answer given by the tool is clear and precise.",
    "The tool reasons well with the given context.",
    "I believe the tool's approach and reasoning are commendable.",
    "I feel that the response addressed the question effectively.",
    "The tool accurately processes relevant acts and sections.",
    "The approach and style of the tool's output are good.",
];

pub const BUNDLED_COUNTS: &str = include_str!("../data/table5_counts.csv");
pub const BUNDLED_PUBLISHED: &str = include_str!("../data/table2_published.csv");

#[derive(Debug, thiserror::Error)]
pub enum SurveyError {
    #[error("{source_name}:{line}: {message}")]
    Format {
        source_name: String,
        line: u64,
        message: String,
    },
    #[error("histogram has no responses")]
    EmptyHistogram,
    #[error("case {case} has no statement {statement}")]
    MissingStatement { case: u32, statement: usize },
    #[error("statement {statement} is missing for case {case}")]
    MissingCase { case: u32, statement: usize },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Counts for ratings 1..=7; index 0 is rating 1.
pub type Histogram = [u32; RATINGS];

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResponseMatrix {
    pub cases: Vec<u32>,
    pub statements: Vec<String>,
    /// Keyed by (case, 1-based statement index).
    pub counts: BTreeMap<(u32, usize), Histogram>,
}

impl ResponseMatrix {
    pub fn histogram(&self, case: u32, statement: usize) -> Option<&Histogram> {
        self.counts.get(&(case, statement))
    }

    pub fn insert(&mut self, case: u32, statement: usize, hist: Histogram) {
        if !self.cases.contains(&case) {
            self.cases.push(case);
            self.cases.sort_unstable();
        }
        while self.statements.len() < statement {
            let i = self.statements.len();
            self.statements.push(STATEMENTS.get(i).map(|s| s.to_string()).unwrap_or_default());
        }
        self.counts.insert((case, statement), hist);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementSummary {
    pub case_id: u32,
    pub statement: usize,
    pub mean: f64,
    pub n_responses: u32,
}

pub fn statement_mean(hist: &Histogram) -> Result<f64, SurveyError> {
    let n: u64 = hist.iter().map(|&c| c as u64).sum();
    if n == 0 {
        return Err(SurveyError::EmptyHistogram);
    }
    let total: u64 = hist.iter().enumerate().map(|(i, &c)| (i as u64 + 1) * c as u64).sum();
    Ok(total as f64 / n as f64)
}

pub fn summarize(matrix: &ResponseMatrix) -> Result<Vec<StatementSummary>, SurveyError> {
    matrix
        .counts
        .iter()
        .map(|(&(case_id, statement), h)| {
            Ok(StatementSummary {
                case_id,
                statement,
                mean: statement_mean(h)?,
                n_responses: h.iter().sum(),
            })
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean of the case's seven statement means.
pub fn case_average(matrix: &ResponseMatrix, case: u32) -> Result<f64, SurveyError> {
    let means = (1..=STATEMENTS.len())
        .map(|s| {
            let h = matrix.histogram(case, s).ok_or(SurveyError::MissingStatement { case, statement: s })?;
            statement_mean(h)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean(&means))
}

/// Mean of one statement's per-case means over every case in the matrix.
pub fn statement_cross_case_average(matrix: &ResponseMatrix, statement: usize) -> Result<f64, SurveyError> {
    if matrix.cases.is_empty() {
        return Err(SurveyError::MissingCase { case: 0, statement });
    }
    let means = matrix
        .cases
        .iter()
        .map(|&case| {
            let h = matrix.histogram(case, statement).ok_or(SurveyError::MissingCase { case, statement })?;
            statement_mean(h)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean(&means))
}

fn format_err(source_name: &str, line: u64, message: impl Into<String>) -> SurveyError {
    SurveyError::Format {
        source_name: source_name.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_field<T: std::str::FromStr>(src: &str, line: u64, name: &str, raw: &str) -> Result<T, SurveyError> {
    raw.trim()
        .parse()
        .map_err(|_| format_err(src, line, format!("{name} must be a non-negative integer, got {raw:?}")))
}

/// Reads either the wide histogram format
/// (`case,statement,count_1,...,count_7`) or the long per-expert format
/// (`case,statement,expert,rating`), which is collapsed into histograms.
pub fn ingest_star_table_from(reader: impl Read, source_name: &str) -> Result<ResponseMatrix, SurveyError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = match rdr.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.iter().map(str::to_string).collect(),
        Ok(_) => return Err(format_err(source_name, 1, "empty file")),
        Err(e) => return Err(format_err(source_name, 1, e.to_string())),
    };
    let wide: Vec<String> = ["case", "statement"]
        .into_iter()
        .map(String::from)
        .chain((1..=RATINGS).map(|r| format!("count_{r}")))
        .collect();
    let long = ["case", "statement", "expert", "rating"];
    let is_wide = header == wide;
    if !is_wide && header != long {
        return Err(format_err(
            source_name,
            1,
            format!("expected header {} or {}", wide.join(","), long.join(",")),
        ));
    }

    let mut matrix = ResponseMatrix::default();
    let mut seen_rows = BTreeSet::new();
    let mut seen_votes = BTreeSet::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            format_err(source_name, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows += 1;
        let case: u32 = parse_field(source_name, line, "case", &rec[0])?;
        let statement: usize = parse_field(source_name, line, "statement", &rec[1])?;
        if statement == 0 || statement > STATEMENTS.len() {
            return Err(format_err(source_name, line, format!("statement must be in 1..={}, got {statement}", STATEMENTS.len())));
        }
        if is_wide {
            if !seen_rows.insert((case, statement)) {
                return Err(format_err(source_name, line, format!("duplicate row for case {case} statement {statement}")));
            }
            let mut hist = [0u32; RATINGS];
            for (r, slot) in hist.iter_mut().enumerate() {
                let raw = &rec[2 + r];
                if raw.starts_with('-') {
                    return Err(format_err(source_name, line, format!("count_{} is negative: {raw}", r + 1)));
                }
                *slot = parse_field(source_name, line, &format!("count_{}", r + 1), raw)?;
            }
            matrix.insert(case, statement, hist);
        } else {
            let expert = rec[2].to_string();
            if !seen_votes.insert((case, statement, expert.clone())) {
                return Err(format_err(source_name, line, format!("expert {expert} rated case {case} statement {statement} twice")));
            }
            let rating: usize = parse_field(source_name, line, "rating", &rec[3])?;
            if !(1..=RATINGS).contains(&rating) {
                return Err(format_err(source_name, line, format!("rating must be in 1..=7, got {rating}")));
            }
            let mut hist = matrix.histogram(case, statement).copied().unwrap_or_default();
            hist[rating - 1] += 1;
            matrix.insert(case, statement, hist);
        }
    }
    if rows == 0 {
        return Err(format_err(source_name, 1, "no data rows"));
    }
    Ok(matrix)
}

pub fn ingest_star_table(path: &Path) -> Result<ResponseMatrix, SurveyError> {
    let file = std::fs::File::open(path).map_err(|e| SurveyError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    ingest_star_table_from(file, &path.display().to_string())
}

/// The published summary table: statement means per case, the per-statement
/// average column and the per-case average row (whose last cell is the
/// overall average).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PublishedTable {
    pub cases: Vec<u32>,
    pub statement_means: BTreeMap<(u32, usize), f64>,
    pub statement_averages: BTreeMap<usize, f64>,
    pub case_averages: BTreeMap<u32, f64>,
    pub overall: Option<f64>,
}

impl PublishedTable {
    /// Mean of the published statement means for `case`.
    pub fn recomputed_case_average(&self, case: u32) -> Option<f64> {
        let parts: Vec<f64> = self.statement_means.iter().filter(|((c, _), _)| *c == case).map(|(_, &v)| v).collect();
        (!parts.is_empty()).then(|| mean(&parts))
    }

    /// Mean of the published per-case means for `statement`.
    pub fn recomputed_statement_average(&self, statement: usize) -> Option<f64> {
        let parts: Vec<f64> = self.statement_means.iter().filter(|((_, s), _)| *s == statement).map(|(_, &v)| v).collect();
        (!parts.is_empty()).then(|| mean(&parts))
    }

    /// Mean of the published per-case averages.
    pub fn recomputed_overall(&self) -> Option<f64> {
        let parts: Vec<f64> = self.case_averages.values().copied().collect();
        (!parts.is_empty()).then(|| mean(&parts))
    }
}

/// Reads `statement,case_1,...,case_k,average` with rows 1..=7 followed by an
/// optional `case_average` row.
pub fn read_published_from(reader: impl Read, source_name: &str) -> Result<PublishedTable, SurveyError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| format_err(source_name, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 3 || header[0] != "statement" || header.last().map(String::as_str) != Some("average") {
        return Err(format_err(source_name, 1, "expected header statement,case_1,...,average"));
    }
    let cases = header[1..header.len() - 1]
        .iter()
        .map(|h| {
            h.strip_prefix("case_")
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| format_err(source_name, 1, format!("bad case column {h:?}")))
        })
        .collect::<Result<Vec<u32>, _>>()?;

    let mut table = PublishedTable {
        cases: cases.clone(),
        ..Default::default()
    };
    let number = |line: u64, raw: &str| -> Result<f64, SurveyError> {
        raw.parse::<f64>()
            .map_err(|_| format_err(source_name, line, format!("not a number: {raw:?}")))
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| format_err(source_name, e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let avg = number(line, &rec[rec.len() - 1])?;
        let values = (0..cases.len()).map(|i| number(line, &rec[1 + i])).collect::<Result<Vec<_>, _>>()?;
        if &rec[0] == "case_average" {
            for (&c, v) in cases.iter().zip(values) {
                table.case_averages.insert(c, v);
            }
            table.overall = Some(avg);
        } else {
            let s: usize = parse_field(source_name, line, "statement", &rec[0])?;
            for (&c, v) in cases.iter().zip(values) {
                table.statement_means.insert((c, s), v);
            }
            table.statement_averages.insert(s, avg);
        }
    }
    Ok(table)
}

pub fn read_published(path: &Path) -> Result<PublishedTable, SurveyError> {
    let file = std::fs::File::open(path).map_err(|e| SurveyError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    read_published_from(file, &path.display().to_string())
}

pub fn bundled_counts() -> ResponseMatrix {
    ingest_star_table_from(BUNDLED_COUNTS.as_bytes(), "table5_counts.csv").expect("bundled counts parse")
}

pub fn bundled_published() -> PublishedTable {
    read_published_from(BUNDLED_PUBLISHED.as_bytes(), "table2_published.csv").expect("bundled table parses")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMismatch {
    pub case_id: u32,
    pub statement: usize,
    pub n: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMismatch {
    pub case_id: u32,
    pub statement: usize,
    pub published: f64,
    pub computed: f64,
    pub delta: f64,
}

/// A published aggregate checked against the mean of the published values
/// it summarizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMismatch {
    pub label: String,
    pub published: f64,
    pub recomputed: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub expected_panel_size: u32,
    pub rows_off_count: Vec<CountMismatch>,
    pub published_vs_computed: Vec<MeanMismatch>,
    pub aggregates: Vec<AggregateMismatch>,
}

impl ConsistencyReport {
    pub fn is_clean(&self) -> bool {
        self.rows_off_count.is_empty() && self.published_vs_computed.is_empty() && self.aggregates.is_empty()
    }

    /// Short labels such as `C2S2 n=5`, `C1S5 mean`, `case 1 average`.
    pub fn flags(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .rows_off_count
            .iter()
            .map(|r| format!("C{}S{} n={}", r.case_id, r.statement, r.n))
            .collect();
        out.extend(self.published_vs_computed.iter().map(|m| format!("C{}S{} mean", m.case_id, m.statement)));
        out.extend(self.aggregates.iter().map(|a| a.label.clone()));
        out
    }
}

pub fn consistency_report(matrix: &ResponseMatrix, published: &PublishedTable) -> ConsistencyReport {
    consistency_report_with(matrix, published, EXPECTED_PANEL_SIZE)
}

pub fn consistency_report_with(matrix: &ResponseMatrix, published: &PublishedTable, expected_panel_size: u32) -> ConsistencyReport {
    let rows_off_count = matrix
        .counts
        .iter()
        .filter_map(|(&(case_id, statement), h)| {
            let n = h.iter().sum();
            (n != expected_panel_size).then_some(CountMismatch { case_id, statement, n })
        })
        .collect();

    let published_vs_computed = matrix
        .counts
        .iter()
        .filter_map(|(&(case_id, statement), h)| {
            let p = *published.statement_means.get(&(case_id, statement))?;
            let c = statement_mean(h).ok()?;
            let delta = c - p;
            (delta.abs() > TOLERANCE).then_some(MeanMismatch {
                case_id,
                statement,
                published: p,
                computed: c,
                delta,
            })
        })
        .collect();

    let mut aggregates = Vec::new();
    let mut check = |label: String, published: f64, recomputed: Option<f64>| {
        let Some(recomputed) = recomputed else { return };
        let delta = recomputed - published;
        if delta.abs() > TOLERANCE {
            aggregates.push(AggregateMismatch {
                label,
                published,
                recomputed,
                delta,
            });
        }
    };
    for (&case, &avg) in &published.case_averages {
        check(format!("case {case} average"), avg, published.recomputed_case_average(case));
    }
    for (&s, &avg) in &published.statement_averages {
        check(format!("statement {s} average"), avg, published.recomputed_statement_average(s));
    }
    if let Some(overall) = published.overall {
        check("overall average".to_string(), overall, published.recomputed_overall());
    }

    ConsistencyReport {
        expected_panel_size,
        rows_off_count,
        published_vs_computed,
        aggregates,
    }
}

/// Everything `ukil survey` writes: recomputed tables and the reconciliation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyReport {
    pub statements: Vec<String>,
    pub summaries: Vec<StatementSummary>,
    pub case_averages: BTreeMap<u32, f64>,
    pub statement_averages: BTreeMap<usize, f64>,
    /// Mean of the recomputed per-case averages.
    pub overall: f64,
    /// Mean of the published per-case averages, when a published table is given.
    pub overall_from_published: Option<f64>,
    pub consistency: Option<ConsistencyReport>,
}

pub fn survey_report(matrix: &ResponseMatrix, published: Option<&PublishedTable>) -> Result<SurveyReport, SurveyError> {
    let case_averages = matrix
        .cases
        .iter()
        .map(|&c| Ok((c, case_average(matrix, c)?)))
        .collect::<Result<BTreeMap<_, _>, SurveyError>>()?;
    let statement_averages = (1..=matrix.statements.len())
        .map(|s| Ok((s, statement_cross_case_average(matrix, s)?)))
        .collect::<Result<BTreeMap<_, _>, SurveyError>>()?;
    let overall = mean(&case_averages.values().copied().collect::<Vec<_>>());
    Ok(SurveyReport {
        statements: matrix.statements.clone(),
        summaries: summarize(matrix)?,
        case_averages,
        statement_averages,
        overall,
        overall_from_published: published.and_then(PublishedTable::recomputed_overall),
        consistency: published.map(|p| consistency_report(matrix, p)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hist(pairs: &[(usize, u32)]) -> Histogram {
        let mut h = [0; RATINGS];
        for &(r, c) in pairs {
            h[r - 1] = c;
        }
        h
    }

    #[test]
    fn means_of_worked_rows() {
        assert_eq!(statement_mean(&hist(&[(2, 1), (4, 1), (5, 1), (6, 1)])).unwrap(), 4.25);
        assert_eq!(statement_mean(&hist(&[(1, 1), (2, 1), (3, 2)])).unwrap(), 2.25);
        assert_eq!(statement_mean(&hist(&[(5, 4)])).unwrap(), 5.0);
        assert!(matches!(statement_mean(&[0; 7]), Err(SurveyError::EmptyHistogram)));
    }

    #[test]
    fn format_errors_carry_line_numbers() {
        let neg = "case,statement,count_1,count_2,count_3,count_4,count_5,count_6,count_7\n1,1,0,0,0,0,4,0,0\n1,2,0,-1,0,0,4,0,0\n";
        match ingest_star_table_from(neg.as_bytes(), "x.csv") {
            Err(SurveyError::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(ingest_star_table_from("".as_bytes(), "x"), Err(SurveyError::Format { .. })));
        let short = "case,statement,count_1,count_2,count_3,count_4,count_5,count_6,count_7\n1,1,0,0\n";
        assert!(matches!(ingest_star_table_from(short.as_bytes(), "x"), Err(SurveyError::Format { line: 2, .. })));
    }

    #[test]
    fn long_format_collapses() {
        let csv = "case,statement,expert,rating\n1,1,E1,2\n1,1,E2,4\n1,1,E3,5\n1,1,E5,6\n";
        let m = ingest_star_table_from(csv.as_bytes(), "x").unwrap();
        assert_eq!(m.histogram(1, 1), Some(&hist(&[(2, 1), (4, 1), (5, 1), (6, 1)])));
        let dup = "case,statement,expert,rating\n1,1,E1,2\n1,1,E1,4\n";
        assert!(ingest_star_table_from(dup.as_bytes(), "x").is_err());
        let range = "case,statement,expert,rating\n1,1,E1,8\n";
        assert!(ingest_star_table_from(range.as_bytes(), "x").is_err());
    }

    #[test]
    fn missing_pieces() {
        let mut m = ResponseMatrix::default();
        m.insert(1, 1, hist(&[(5, 4)]));
        m.insert(2, 2, hist(&[(5, 4)]));
        assert!(matches!(case_average(&m, 1), Err(SurveyError::MissingStatement { case: 1, statement: 2 })));
        assert!(matches!(statement_cross_case_average(&m, 1), Err(SurveyError::MissingCase { case: 2, statement: 1 })));
    }

    #[test]
    fn constructed_panel_violation() {
        let mut m = ResponseMatrix::default();
        m.insert(1, 1, hist(&[(5, 5)]));
        let r = consistency_report(&m, &PublishedTable::default());
        assert_eq!(r.rows_off_count, vec![CountMismatch { case_id: 1, statement: 1, n: 5 }]);
    }

    fn histogram() -> impl Strategy<Value = Histogram> {
        proptest::array::uniform7(0u32..6).prop_filter("non-empty", |h| h.iter().sum::<u32>() > 0)
    }

    proptest! {
        #[test]
        fn mean_matches_expanded_ratings(h in histogram(), k in 1u32..5) {
            let expanded: Vec<f64> = h.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i as f64 + 1.0, c as usize)).collect();
            let m = statement_mean(&h).unwrap();
            prop_assert!((m - expanded.iter().sum::<f64>() / expanded.len() as f64).abs() < 1e-12);
            prop_assert!((1.0..=7.0).contains(&m));
            let scaled = h.map(|c| c * k);
            prop_assert!((statement_mean(&scaled).unwrap() - m).abs() < 1e-12);
        }

        #[test]
        fn averages_ignore_case_order(hs in proptest::collection::vec(histogram(), 3), perm in Just([2usize, 0, 1])) {
            let mut a = ResponseMatrix::default();
            let mut b = ResponseMatrix::default();
            for (i, h) in hs.iter().enumerate() {
                a.insert(i as u32 + 1, 1, *h);
                b.insert(perm[i] as u32 + 1, 1, *h);
            }
            let x = statement_cross_case_average(&a, 1).unwrap();
            let y = statement_cross_case_average(&b, 1).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
