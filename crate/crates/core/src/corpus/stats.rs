use serde::{Deserialize, Serialize};

use super::clean::clean_text;
use super::schema::Act;
use super::CorpusError;

/// Corpus size and mean character lengths (Unicode code points of cleaned text).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub act_count: usize,
    pub section_count: usize,
    pub mean_sections_per_act: f64,
    pub mean_act_name_len: f64,
    pub mean_act_detail_len: f64,
    pub mean_section_name_len: f64,
    pub mean_section_detail_len: f64,
}

fn chars(s: &str) -> usize {
    clean_text(s).chars().count()
}

fn mean(total: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

pub fn corpus_stats(corpus: &[Act]) -> Result<CorpusStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let act_count = corpus.len();
    let sections = || corpus.iter().flat_map(|a| a.sections.iter());
    let section_count = sections().count();
    Ok(CorpusStats {
        act_count,
        section_count,
        mean_sections_per_act: mean(section_count, act_count),
        mean_act_name_len: mean(corpus.iter().map(|a| chars(&a.name)).sum(), act_count),
        mean_act_detail_len: mean(corpus.iter().map(|a| chars(&a.text)).sum(), act_count),
        mean_section_name_len: mean(sections().map(|s| chars(&s.name)).sum(), section_count),
        mean_section_detail_len: mean(sections().map(|s| chars(&s.details)).sum(), section_count),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::schema::Section;

    fn act(id: u64, names: &[&str]) -> Act {
        Act {
            id,
            name: "Näme".into(),
            repelled: false,
            text: "a  b".into(),
            published_date: None,
            related_act: vec![],
            lower_text: vec![],
            num_of_sections: names.len(),
            sections: names
                .iter()
                .enumerate()
                .map(|(i, n)| Section {
                    section_id: i as u64 + 1,
                    name: n.to_string(),
                    details: "xyz".into(),
                    related_acts: vec![],
                    act_id: id,
                })
                .collect(),
        }
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(matches!(corpus_stats(&[]), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn counts_and_means() {
        let corpus = [act(1, &["a", "b", "c"]), act(2, &["a", "b", "c", "d", "e"])];
        let s = corpus_stats(&corpus).unwrap();
        assert_eq!((s.act_count, s.section_count), (2, 8));
        assert_eq!(s.mean_sections_per_act, 4.0);
    }

    #[test]
    fn section_name_mean() {
        let s = corpus_stats(&[act(1, &["ab", "abcd"])]).unwrap();
        assert_eq!(s.mean_section_name_len, 3.0);
    }

    #[test]
    fn singleton_reproduces_measurements() {
        let s = corpus_stats(&[act(1, &["ab"])]).unwrap();
        // code points, measured after cleaning: "Näme" is 4, "a  b" cleans to "a b"
        assert_eq!(s.mean_act_name_len, 4.0);
        assert_eq!(s.mean_act_detail_len, 3.0);
        assert_eq!(s.mean_section_detail_len, 3.0);
    }
}
