use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::corpus::{split_title_year, Act, Section};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Act,
    Section,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt: String,
    pub response: String,
    pub kind: PromptKind,
    pub act_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section_id: Option<u64>,
}

impl PromptRecord {
    /// Stable key: `act-<id>` or `act-<id>/section-<id>`.
    pub fn key(&self) -> String {
        match self.section_id {
            Some(sid) => format!("act-{}/section-{sid}", self.act_id),
            None => format!("act-{}", self.act_id),
        }
    }
}

/// `What do you know about "NAME", "YEAR", Bangladesh?`
///
/// `YEAR` is the trailing `, YYYY` of the act name and is left empty when the
/// name carries none.
pub fn render_act_prompt(act: &Act) -> String {
    let (title, year) = split_title_year(&act.name);
    format!("What do you know about \"{title}\", \"{}\", Bangladesh?", year.unwrap_or(""))
}

/// `What do you know about "SECTION" from "ACT", "YEAR", Bangladesh?`
pub fn render_section_prompt(section: &Section, act: &Act) -> Result<String, PromptError> {
    let name = section.name.trim();
    if name.is_empty() {
        return Err(PromptError::EmptySectionName {
            act_id: act.id,
            section_id: section.section_id,
        });
    }
    let (title, year) = split_title_year(&act.name);
    Ok(format!(
        "What do you know about \"{name}\" from \"{title}\", \"{}\", Bangladesh?",
        year.unwrap_or("")
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildIssue {
    pub error: bool,
    pub act_id: u64,
    pub section_id: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct QaBuild {
    pub records: Vec<PromptRecord>,
    pub issues: Vec<BuildIssue>,
}

impl QaBuild {
    pub fn warnings(&self) -> impl Iterator<Item = &BuildIssue> {
        self.issues.iter().filter(|i| !i.error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &BuildIssue> {
        self.issues.iter().filter(|i| i.error)
    }
}

/// One act record per act followed by one record per section, acts by
/// ascending id and sections by ascending section id. Expects a corpus that
/// has already had repealed acts removed.
pub fn build_qa_records(corpus: &[Act]) -> QaBuild {
    let mut acts: Vec<&Act> = corpus.iter().collect();
    acts.sort_by_key(|a| a.id);
    let mut out = QaBuild::default();
    for act in acts {
        if split_title_year(&act.name).1.is_none() {
            out.issues.push(BuildIssue {
                error: false,
                act_id: act.id,
                section_id: None,
                message: format!("no year in act name {:?}; rendered with an empty year", act.name),
            });
        }
        if act.sections.is_empty() {
            out.issues.push(BuildIssue {
                error: false,
                act_id: act.id,
                section_id: None,
                message: "act has no sections; response is empty".into(),
            });
        }
        out.records.push(PromptRecord {
            prompt: render_act_prompt(act),
            response: act.joined_details(),
            kind: PromptKind::Act,
            act_id: act.id,
            section_id: None,
        });
        for section in act.sections_in_order() {
            match render_section_prompt(section, act) {
                Ok(prompt) => out.records.push(PromptRecord {
                    prompt,
                    response: section.details.clone(),
                    kind: PromptKind::Section,
                    act_id: act.id,
                    section_id: Some(section.section_id),
                }),
                Err(e) => out.issues.push(BuildIssue {
                    error: true,
                    act_id: act.id,
                    section_id: Some(section.section_id),
                    message: e.to_string(),
                }),
            }
        }
    }
    out
}

pub fn write_jsonl(path: &Path, records: &[PromptRecord]) -> Result<(), PromptError> {
    let io = |e: std::io::Error| PromptError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("records serialize");
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PromptRecord>, PromptError> {
    let err = |line: usize, message: String| PromptError::Io {
        path: format!("{}:{line}", path.display()),
        message,
    };
    let file = fs::File::open(path).map_err(|e| err(0, e.to_string()))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| err(i + 1, e.to_string()))?);
    }
    Ok(records)
}
