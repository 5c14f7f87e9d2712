use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

/// Description stored with every result so scores can be traced to the
/// tokenization that produced them.
pub const TOKENIZATION: &str = "lowercase; split on maximal runs of non-alphanumeric characters";

/// Lowercased alphanumeric runs, in order, duplicates kept.
pub fn metric_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    metric_tokens(text).into_iter().collect()
}

/// Intersection over union of the two token sets. Two empty texts are
/// identical (1.0); exactly one empty text shares nothing (0.0).
pub fn jaccard(a: &str, b: &str) -> f64 {
    let (sa, sb) = (token_set(a), token_set(b));
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    inter as f64 / union as f64
}

/// Inverse document frequencies, `ln((1 + n) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    n_docs: usize,
    df: HashMap<String, usize>,
    uniform: bool,
}

impl IdfTable {
    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut df = HashMap::new();
        let mut n_docs = 0;
        for doc in docs {
            n_docs += 1;
            for term in token_set(doc) {
                *df.entry(term).or_insert(0) += 1;
            }
        }
        Self { n_docs, df, uniform: false }
    }

    /// Every term weighted 1, i.e. raw term-frequency cosine.
    pub fn uniform() -> Self {
        Self {
            n_docs: 0,
            df: HashMap::new(),
            uniform: true,
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        if self.uniform {
            return 1.0;
        }
        let df = self.df.get(term).copied().unwrap_or(0);
        ((1 + self.n_docs) as f64 / (1 + df) as f64).ln() + 1.0
    }

    pub fn vector(&self, text: &str) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for t in metric_tokens(text) {
            *tf.entry(t).or_insert(0.0) += 1.0;
        }
        for (term, w) in tf.iter_mut() {
            *w *= self.idf(term);
        }
        tf
    }
}

/// Cosine of the tf-idf vectors; 0.0 when either vector is zero.
pub fn cosine_similarity(a: &str, b: &str, idf: &IdfTable) -> f64 {
    let (va, vb) = (idf.vector(a), idf.vector(b));
    let dot: f64 = va.iter().filter_map(|(t, x)| vb.get(t).map(|y| x * y)).sum();
    let na = va.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = vb.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenization() {
        assert_eq!(metric_tokens("The Act, 1871 -- s.3(b)"), vec!["the", "act", "1871", "s", "3", "b"]);
        assert!(metric_tokens("").is_empty());
        assert!(metric_tokens(" ,.; ").is_empty());
    }

    #[test]
    fn hand_examples() {
        assert_eq!(jaccard("a b c", "b c d"), 0.5);
        assert_eq!(jaccard("", ""), 1.0);
        assert_eq!(jaccard("a", ""), 0.0);
        assert_eq!(jaccard("a b", "c d"), 0.0);
        let u = IdfTable::uniform();
        assert!((cosine_similarity("x y", "x z", &u) - 0.5).abs() < 1e-12);
        assert_eq!(cosine_similarity("", "x", &u), 0.0);
    }

    #[test]
    fn smoothed_idf_values() {
        let idf = IdfTable::fit(["a b", "a c"]);
        assert!((idf.idf("a") - 1.0).abs() < 1e-12);
        assert!((idf.idf("b") - ((3.0f64 / 2.0).ln() + 1.0)).abs() < 1e-12);
        assert!((idf.idf("zzz") - (3.0f64.ln() + 1.0)).abs() < 1e-12);
    }

    fn text() -> impl Strategy<Value = String> {
        proptest::collection::vec(prop_oneof!["a", "b", "c", "d", "e", "A", "B"], 0..8).prop_map(|v| v.join(" "))
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in text(), b in text()) {
            let idf = IdfTable::fit([a.as_str(), b.as_str()]);
            let j = jaccard(&a, &b);
            let c = cosine_similarity(&a, &b, &idf);
            prop_assert_eq!(j, jaccard(&b, &a));
            prop_assert!((c - cosine_similarity(&b, &a, &idf)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&j));
            prop_assert!((0.0..=1.0).contains(&c));
        }

        #[test]
        fn cosine_ignores_order_and_spacing(words in proptest::collection::vec("[a-d]", 1..8)) {
            let idf = IdfTable::uniform();
            let a = words.join(" ");
            let mut rev = words.clone();
            rev.reverse();
            let b = rev.join("   ");
            prop_assert!((cosine_similarity(&a, &b, &idf) - 1.0).abs() < 1e-9);
        }
    }
}
