use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::schema::{Act, ActId, SectionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DuplicateActId,
    DuplicateSectionId,
    SectionActMismatch,
    SectionCountMismatch,
    UnresolvedRelatedAct,
    EmptyActName,
    EmptySectionDetails,
    EmptySectionName,
    MissingYear,
    NoSections,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::DuplicateActId => "duplicate_act_id",
            Rule::DuplicateSectionId => "duplicate_section_id",
            Rule::SectionActMismatch => "section_act_mismatch",
            Rule::SectionCountMismatch => "section_count_mismatch",
            Rule::UnresolvedRelatedAct => "unresolved_related_act",
            Rule::EmptyActName => "empty_act_name",
            Rule::EmptySectionDetails => "empty_section_details",
            Rule::EmptySectionName => "empty_section_name",
            Rule::MissingYear => "missing_year",
            Rule::NoSections => "no_sections",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub act_id: ActId,
    pub section_id: Option<SectionId>,
    pub rule: Rule,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Violation>,
    pub warnings: Vec<Violation>,
    pub checked_acts: usize,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn errors_for(&self, rule: Rule) -> usize {
        self.errors.iter().filter(|v| v.rule == rule).count()
    }
}

/// Checks every hard rule over the corpus and lists each violation.
pub fn validate_corpus(corpus: &[Act]) -> ValidationReport {
    let mut report = ValidationReport {
        checked_acts: corpus.len(),
        ..Default::default()
    };
    let mut error = |act_id, section_id, rule: Rule, message: String| {
        report.errors.push(Violation {
            act_id,
            section_id,
            rule,
            message,
        })
    };

    let mut seen: BTreeMap<ActId, usize> = BTreeMap::new();
    for act in corpus {
        *seen.entry(act.id).or_default() += 1;
    }
    let known: BTreeSet<ActId> = seen.keys().copied().collect();
    for (&id, &n) in seen.iter().filter(|(_, &n)| n > 1) {
        error(id, None, Rule::DuplicateActId, format!("act id {id} appears {n} times"));
    }

    for act in corpus {
        if act.name.trim().is_empty() {
            error(act.id, None, Rule::EmptyActName, "act has no name".into());
        }
        if act.num_of_sections != act.sections.len() {
            error(
                act.id,
                None,
                Rule::SectionCountMismatch,
                format!(
                    "num_of_sections is {} but {} sections are present",
                    act.num_of_sections,
                    act.sections.len()
                ),
            );
        }
        for rel in act.related_act.iter().filter(|r| !known.contains(r)) {
            error(
                act.id,
                None,
                Rule::UnresolvedRelatedAct,
                format!("related_act {rel} is not in the corpus"),
            );
        }
        let mut section_ids = BTreeSet::new();
        for s in &act.sections {
            let sid = Some(s.section_id);
            if !section_ids.insert(s.section_id) {
                error(
                    act.id,
                    sid,
                    Rule::DuplicateSectionId,
                    format!("section id {} repeated", s.section_id),
                );
            }
            if s.act_id != act.id {
                error(
                    act.id,
                    sid,
                    Rule::SectionActMismatch,
                    format!("section act_id {} does not match owning act {}", s.act_id, act.id),
                );
            }
            if s.details.trim().is_empty() {
                error(act.id, sid, Rule::EmptySectionDetails, "section details are empty".into());
            }
            if s.name.trim().is_empty() {
                error(act.id, sid, Rule::EmptySectionName, "section has no name".into());
            }
            for rel in s.related_acts.iter().filter(|r| !known.contains(r)) {
                error(
                    act.id,
                    sid,
                    Rule::UnresolvedRelatedAct,
                    format!("related_acts entry {rel} is not in the corpus"),
                );
            }
        }
    }

    for act in corpus {
        if crate::corpus::split_title_year(&act.name).1.is_none() {
            report.warnings.push(Violation {
                act_id: act.id,
                section_id: None,
                rule: Rule::MissingYear,
                message: format!("no trailing year in {:?}", act.name),
            });
        }
        if act.sections.is_empty() {
            report.warnings.push(Violation {
                act_id: act.id,
                section_id: None,
                rule: Rule::NoSections,
                message: "act has no sections".into(),
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::schema::Section;

    fn act(id: ActId, n: usize) -> Act {
        Act {
            id,
            name: format!("Act {id}, 2001"),
            repelled: false,
            text: "preamble".into(),
            published_date: None,
            related_act: vec![],
            lower_text: vec![],
            num_of_sections: n,
            sections: (1..=n as u64)
                .map(|sid| Section {
                    section_id: sid,
                    name: format!("s{sid}"),
                    details: "body".into(),
                    related_acts: vec![],
                    act_id: id,
                })
                .collect(),
        }
    }

    #[test]
    fn well_formed_pair_passes() {
        let mut a = act(1, 2);
        a.related_act = vec![2];
        let report = validate_corpus(&[a, act(2, 1)]);
        assert!(report.is_ok(), "{report:?}");
        assert_eq!(report.checked_acts, 2);
    }

    #[test]
    fn count_mismatch_is_one_error() {
        let mut a = act(1, 2);
        a.num_of_sections = 3;
        let report = validate_corpus(&[a]);
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].rule, Rule::SectionCountMismatch);
    }

    #[test]
    fn dangling_section_owner_is_one_error() {
        let mut a = act(1, 2);
        a.sections[1].act_id = 99;
        let report = validate_corpus(&[a]);
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].rule, Rule::SectionActMismatch);
        assert_eq!(report.errors[0].section_id, Some(2));
    }

    #[test]
    fn every_violation_class() {
        let mut a = act(1, 2);
        a.related_act = vec![42];
        a.sections[0].details = "  ".into();
        a.sections[1].section_id = 1;
        let dup = act(1, 0);
        let report = validate_corpus(&[a, dup]);
        for rule in [
            Rule::DuplicateActId,
            Rule::DuplicateSectionId,
            Rule::UnresolvedRelatedAct,
            Rule::EmptySectionDetails,
        ] {
            assert!(report.errors_for(rule) >= 1, "{rule:?} not reported");
        }
        assert!(report.warnings.iter().any(|w| w.rule == Rule::NoSections));
    }
}
