//! The hierarchical act/section records as they are stored on disk.
//!
//! Field names match the published dataset exactly, including the historical
//! `repelled` spelling of the repealed flag.

use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::CorpusError;

pub type ActId = u64;
pub type SectionId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Act {
    pub id: ActId,
    pub name: String,
    /// Repealed flag. Serialized under the dataset's own field name.
    pub repelled: bool,
    pub text: String,
    pub published_date: Option<NaiveDate>,
    pub related_act: Vec<ActId>,
    pub lower_text: Vec<String>,
    pub num_of_sections: usize,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub section_id: SectionId,
    pub name: String,
    pub details: String,
    #[serde(default)]
    pub related_acts: Vec<ActId>,
    pub act_id: ActId,
}

impl Act {
    /// Whether the act has been repealed (stored as `repelled`).
    pub fn repealed(&self) -> bool {
        self.repelled
    }

    /// Sections sorted by ascending `section_id`.
    pub fn sections_in_order(&self) -> Vec<&Section> {
        let mut sections: Vec<&Section> = self.sections.iter().collect();
        sections.sort_by_key(|s| s.section_id);
        sections
    }

    /// All section details joined by a single blank line, ascending `section_id`.
    pub fn joined_details(&self) -> String {
        self.sections_in_order()
            .iter()
            .map(|s| s.details.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

pub fn corpus_to_json(corpus: &[Act]) -> Result<String, CorpusError> {
    Ok(serde_json::to_string_pretty(corpus)?)
}

pub fn corpus_from_json(json: &str) -> Result<Vec<Act>, CorpusError> {
    Ok(serde_json::from_str(json)?)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Act>, CorpusError> {
    let json = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    corpus_from_json(&json)
}

pub fn write_corpus(path: &Path, corpus: &[Act]) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
    }
    fs::write(path, corpus_to_json(corpus)?).map_err(|e| CorpusError::io(path, e))
}
