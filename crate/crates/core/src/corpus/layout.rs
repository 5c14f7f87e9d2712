//! Page-layout adapters that turn fetched portal pages into [`Act`] records.
//!
//! The portal's markup is not documented anywhere, so the HTML adapter is
//! driven entirely by CSS selectors and an act-link pattern. The defaults
//! describe the print-view layout used by the bundled fixtures; a different
//! portal revision needs only a new [`HtmlLayout`] value.

use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;
use scraper::{ElementRef, Html, Selector};

use super::clean::clean_text;
use super::fetch::RawDocument;
use super::schema::{Act, ActId, Section};
use super::CorpusError;

pub trait LayoutAdapter: Send + Sync {
    fn name(&self) -> &str;

    /// Locators of act pages linked from a listing page, in page order.
    fn act_links(&self, doc: &RawDocument, base_url: &str) -> Result<Vec<String>, CorpusError>;

    fn parse_act(&self, doc: &RawDocument) -> Result<Act, CorpusError>;
}

/// Selector configuration for an HTML act page.
#[derive(Debug, Clone)]
pub struct HtmlLayout {
    pub act: String,
    pub act_id_attr: String,
    pub repealed_attr: String,
    pub title: String,
    pub published: String,
    pub details: String,
    pub section: String,
    pub section_id_attr: String,
    pub section_title: String,
    pub section_body: String,
    pub footnote: String,
    pub listing_link: String,
    /// Captures the numeric act id from an `href`.
    pub act_href_pattern: String,
}

impl Default for HtmlLayout {
    fn default() -> Self {
        Self {
            act: "div.act".into(),
            act_id_attr: "data-act-id".into(),
            repealed_attr: "data-repealed".into(),
            title: "h1.act-title".into(),
            published: ".publish-date".into(),
            details: ".act-details".into(),
            section: "div.section".into(),
            section_id_attr: "data-section-id".into(),
            section_title: ".section-title".into(),
            section_body: ".section-body".into(),
            footnote: ".footnotes .footnote".into(),
            listing_link: "a.act-link".into(),
            act_href_pattern: r"act-details-(\d+)".into(),
        }
    }
}

struct Compiled {
    act: Selector,
    title: Selector,
    published: Selector,
    details: Selector,
    section: Selector,
    section_title: Selector,
    section_body: Selector,
    footnote: Selector,
    listing_link: Selector,
    link: Selector,
    act_href: Regex,
}

pub struct HtmlLayoutAdapter {
    layout: HtmlLayout,
    compiled: Compiled,
}

fn selector(s: &str) -> Result<Selector, CorpusError> {
    Selector::parse(s).map_err(|e| CorpusError::Parse {
        locator: String::new(),
        message: format!("bad selector {s:?}: {e}"),
    })
}

impl HtmlLayoutAdapter {
    pub fn new(layout: HtmlLayout) -> Result<Self, CorpusError> {
        let compiled = Compiled {
            act: selector(&layout.act)?,
            title: selector(&layout.title)?,
            published: selector(&layout.published)?,
            details: selector(&layout.details)?,
            section: selector(&layout.section)?,
            section_title: selector(&layout.section_title)?,
            section_body: selector(&layout.section_body)?,
            footnote: selector(&layout.footnote)?,
            listing_link: selector(&layout.listing_link)?,
            link: selector("a[href]")?,
            act_href: Regex::new(&layout.act_href_pattern).map_err(|e| CorpusError::Parse {
                locator: String::new(),
                message: e.to_string(),
            })?,
        };
        Ok(Self { layout, compiled })
    }

    fn text_of(el: ElementRef<'_>) -> String {
        clean_text(&el.text().collect::<String>())
    }

    fn first_text(scope: ElementRef<'_>, sel: &Selector) -> Option<String> {
        scope.select(sel).next().map(Self::text_of)
    }

    fn linked_acts(&self, scope: ElementRef<'_>, own: ActId) -> Vec<ActId> {
        let mut ids = Vec::new();
        for a in scope.select(&self.compiled.link) {
            let href = a.value().attr("href").unwrap_or_default();
            if let Some(id) = self
                .compiled
                .act_href
                .captures(href)
                .and_then(|c| c.get(1))
                .and_then(|m| m.as_str().parse::<ActId>().ok())
            {
                if id != own && !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }
        ids
    }
}

impl LayoutAdapter for HtmlLayoutAdapter {
    fn name(&self) -> &str {
        "html"
    }

    fn act_links(&self, doc: &RawDocument, base_url: &str) -> Result<Vec<String>, CorpusError> {
        let html = Html::parse_document(&decode_body(doc)?);
        let base = base_url.trim_end_matches('/');
        let mut links = Vec::new();
        for a in html.select(&self.compiled.listing_link) {
            let Some(href) = a.value().attr("href") else { continue };
            let url = if href.contains("://") {
                href.to_string()
            } else {
                format!("{base}/{}", href.trim_start_matches('/'))
            };
            if !links.contains(&url) {
                links.push(url);
            }
        }
        Ok(links)
    }

    fn parse_act(&self, doc: &RawDocument) -> Result<Act, CorpusError> {
        let parse_err = |message: String| CorpusError::Parse {
            locator: doc.locator.clone(),
            message,
        };
        let text = decode_body(doc)?;
        if text.trim().is_empty() {
            return Err(parse_err("empty document".into()));
        }
        let html = Html::parse_document(&text);
        let root = html
            .select(&self.compiled.act)
            .next()
            .ok_or_else(|| parse_err(format!("no element matches {:?}", self.layout.act)))?;

        let id: ActId = root
            .value()
            .attr(&self.layout.act_id_attr)
            .and_then(|v| v.trim().parse().ok())
            .or_else(|| id_from_locator(&self.compiled.act_href, &doc.locator))
            .ok_or_else(|| parse_err("act id not found".into()))?;
        let name = Self::first_text(root, &self.compiled.title)
            .filter(|n| !n.is_empty())
            .ok_or_else(|| parse_err("act title not found".into()))?;
        let repelled = root
            .value()
            .attr(&self.layout.repealed_attr)
            .map(|v| matches!(v.trim().to_ascii_lowercase().as_str(), "true" | "1" | "yes"))
            .unwrap_or(false);
        let published_date = Self::first_text(root, &self.compiled.published).and_then(|s| parse_portal_date(&s));
        let details = Self::first_text(root, &self.compiled.details).unwrap_or_default();

        let mut sections = Vec::new();
        for (pos, el) in root.select(&self.compiled.section).enumerate() {
            let section_id = el
                .value()
                .attr(&self.layout.section_id_attr)
                .and_then(|v| v.trim().parse().ok())
                .unwrap_or(pos as u64 + 1);
            let name = Self::first_text(el, &self.compiled.section_title).unwrap_or_default();
            let body = el
                .select(&self.compiled.section_body)
                .next()
                .ok_or_else(|| parse_err(format!("section {section_id} has no body")))?;
            sections.push(Section {
                section_id,
                name,
                details: Self::text_of(body),
                related_acts: self.linked_acts(body, id),
                act_id: id,
            });
        }

        let mut related_act = Vec::new();
        for rel in self
            .linked_acts(root, id)
            .into_iter()
            .chain(sections.iter().flat_map(|s| s.related_acts.iter().copied()))
        {
            if !related_act.contains(&rel) {
                related_act.push(rel);
            }
        }
        let lower_text = root
            .select(&self.compiled.footnote)
            .map(Self::text_of)
            .filter(|t| !t.is_empty())
            .collect();

        Ok(Act {
            id,
            name,
            repelled,
            text: details,
            published_date,
            related_act,
            lower_text,
            num_of_sections: sections.len(),
            sections,
        })
    }
}

/// Reads act records that a portal (or the published dataset) already serves
/// as JSON, one act object per document.
#[derive(Debug, Default)]
pub struct JsonLayoutAdapter;

impl LayoutAdapter for JsonLayoutAdapter {
    fn name(&self) -> &str {
        "json"
    }

    fn act_links(&self, doc: &RawDocument, _base_url: &str) -> Result<Vec<String>, CorpusError> {
        let text = decode_body(doc)?;
        serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
            locator: doc.locator.clone(),
            message: e.to_string(),
        })
    }

    fn parse_act(&self, doc: &RawDocument) -> Result<Act, CorpusError> {
        let text = decode_body(doc)?;
        let mut act: Act = serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
            locator: doc.locator.clone(),
            message: e.to_string(),
        })?;
        act.name = clean_text(&act.name);
        act.text = clean_text(&act.text);
        for s in &mut act.sections {
            s.name = clean_text(&s.name);
            s.details = clean_text(&s.details);
        }
        Ok(act)
    }
}

/// Parses an act page with the default HTML layout.
pub fn parse_act(doc: &RawDocument) -> Result<Act, CorpusError> {
    static DEFAULT: LazyLock<HtmlLayoutAdapter> =
        LazyLock::new(|| HtmlLayoutAdapter::new(HtmlLayout::default()).expect("default layout compiles"));
    DEFAULT.parse_act(doc)
}

fn decode_body(doc: &RawDocument) -> Result<String, CorpusError> {
    String::from_utf8(doc.body.clone()).map_err(|e| CorpusError::Encoding {
        locator: doc.locator.clone(),
        message: e.to_string(),
    })
}

fn id_from_locator(pattern: &Regex, locator: &str) -> Option<ActId> {
    pattern.captures(locator)?.get(1)?.as_str().parse().ok()
}

/// Accepts ISO dates and the portal's "[8th August, 1871]" style.
pub fn parse_portal_date(raw: &str) -> Option<NaiveDate> {
    static ORDINAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\d{1,2})(st|nd|rd|th)\b").unwrap());
    let trimmed = raw.trim().trim_matches(|c| c == '[' || c == ']' || c == '(' || c == ')').trim();
    if let Ok(d) = NaiveDate::parse_from_str(trimmed, "%Y-%m-%d") {
        return Some(d);
    }
    let plain = ORDINAL.replace_all(trimmed, "$1").replace(',', "");
    ["%d %B %Y", "%B %d %Y", "%d %b %Y"]
        .iter()
        .find_map(|fmt| NaiveDate::parse_from_str(&plain, fmt).ok())
}
