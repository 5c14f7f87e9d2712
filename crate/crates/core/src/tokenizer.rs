//! Tokenizers shared by dataset encoding, training and generation.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("tokenizer file {0}: {1}")]
    Load(String, String),
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(u32),
}

pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Result<Vec<u32>, TokenizerError>;
    fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError>;
    fn vocab_size(&self) -> usize;
    fn pad_id(&self) -> u32;
    fn eos_id(&self) -> u32;
}

pub const PAD: &str = "<pad>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

static PIECES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\w+|[^\w\s]").unwrap());

/// Word-level tokenizer: words and single punctuation marks, case preserved.
/// Ids 0..3 are `<pad>`, `<eos>`, `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordTokenizer {
    vocab: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl WordTokenizer {
    pub fn from_vocab(vocab: Vec<String>) -> Self {
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self { vocab, index }
    }

    /// Builds a vocabulary from `texts`, keeping pieces seen at least
    /// `min_count` times, most frequent first (ties broken alphabetically),
    /// capped at `max_size` entries including the special tokens.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize, max_size: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in texts {
            for m in PIECES.find_iter(text) {
                *counts.entry(m.as_str()).or_default() += 1;
            }
        }
        let mut pieces: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        pieces.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut vocab: Vec<String> = [PAD, EOS, UNK].iter().map(|s| s.to_string()).collect();
        vocab.extend(pieces.into_iter().take(max_size.saturating_sub(3)).map(|(w, _)| w.to_string()));
        Self::from_vocab(vocab)
    }

    pub fn unk_id(&self) -> u32 {
        2
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let json = serde_json::to_string(self).expect("vocabulary serializes");
        fs::write(path, json).map_err(|e| TokenizerError::Load(path.display().to_string(), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let err = |e: String| TokenizerError::Load(path.display().to_string(), e);
        let raw = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let parsed: WordTokenizer = serde_json::from_str(&raw).map_err(|e| err(e.to_string()))?;
        Ok(Self::from_vocab(parsed.vocab))
    }
}

fn attaches_left(piece: &str) -> bool {
    matches!(piece, "," | "." | ";" | ":" | ")" | "?" | "!" | "]" | "'" | "%")
}

impl Tokenizer for WordTokenizer {
    fn encode(&self, text: &str) -> Result<Vec<u32>, TokenizerError> {
        Ok(PIECES
            .find_iter(text)
            .map(|m| self.index.get(m.as_str()).copied().unwrap_or(self.unk_id()))
            .collect())
    }

    fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        let mut prev = "";
        for &id in ids {
            let piece = self.vocab.get(id as usize).ok_or(TokenizerError::UnknownId(id))?;
            if id == self.pad_id() || id == self.eos_id() {
                continue;
            }
            if !out.is_empty() && !attaches_left(piece) && !matches!(prev, "(" | "[" | "'") {
                out.push(' ');
            }
            out.push_str(piece);
            prev = piece;
        }
        Ok(out)
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn pad_id(&self) -> u32 {
        0
    }

    fn eos_id(&self) -> u32 {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_orders_by_frequency() {
        let tok = WordTokenizer::fit(["b a b", "c b a"], 1, 100);
        assert_eq!(tok.vocab[3..], ["b", "a", "c"]);
        let capped = WordTokenizer::fit(["b a b", "c b a"], 2, 4);
        assert_eq!(capped.vocab_size(), 4);
    }

    #[test]
    fn encode_decode() {
        let tok = WordTokenizer::fit(["The Court may, if it thinks fit."], 1, 100);
        let ids = tok.encode("The Court may, if it thinks fit.").unwrap();
        assert_eq!(ids.len(), 9);
        assert_eq!(tok.decode(&ids).unwrap(), "The Court may, if it thinks fit.");
        assert_eq!(tok.encode("Unseen").unwrap(), vec![tok.unk_id()]);
        assert!(tok.decode(&[10_000]).is_err());
    }

    #[test]
    fn save_load() {
        let dir = tempfile::tempdir().unwrap();
        let tok = WordTokenizer::fit(["x y z"], 1, 10);
        let path = dir.path().join("tok.json");
        tok.save(&path).unwrap();
        assert_eq!(WordTokenizer::load(&path).unwrap(), tok);
    }
}
