//! Text normalization applied to every scraped string.

/// Decodes HTML character references (`&amp;`, `&nbsp;`, `&#8217;`, ...).
pub fn decode_entities(raw: &str) -> String {
    html_escape::decode_html_entities(raw).into_owned()
}

/// Normalizes scraped text.
///
/// Control and zero-width format characters are dropped, non-breaking spaces
/// count as whitespace, every whitespace run becomes a single space (or a
/// single newline when the run spans a line break) and the ends are trimmed.
/// The function is idempotent.
pub fn clean_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending: Option<char> = None;
    for ch in raw.chars() {
        if is_whitespace(ch) {
            let sep = if matches!(ch, '\n' | '\r' | '\u{0b}' | '\u{0c}' | '\u{2028}' | '\u{2029}') {
                '\n'
            } else {
                ' '
            };
            pending = match pending {
                Some('\n') => Some('\n'),
                _ => Some(sep),
            };
            continue;
        }
        if is_dropped(ch) {
            continue;
        }
        if let Some(sep) = pending.take() {
            if !out.is_empty() {
                out.push(sep);
            }
        }
        out.push(ch);
    }
    out
}

fn is_whitespace(ch: char) -> bool {
    ch.is_whitespace() || ch == '\u{a0}'
}

fn is_dropped(ch: char) -> bool {
    ch.is_control() || matches!(ch, '\u{200b}' | '\u{200c}' | '\u{200d}' | '\u{2060}' | '\u{feff}' | '\u{ad}')
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn collapses_nbsp_runs() {
        assert_eq!(clean_text("a\u{a0}\u{a0} b"), "a b");
    }

    #[test]
    fn newline_runs_become_one_newline() {
        assert_eq!(clean_text("  first block \n\n\t second\r\n"), "first block\nsecond");
    }

    #[test]
    fn entity_residue() {
        let decoded = decode_entities("&nbsp;Act&amp;");
        assert_eq!(decoded, "\u{a0}Act&");
        assert_eq!(clean_text(&decoded), "Act&");
    }

    #[test]
    fn drops_controls_and_zero_width() {
        assert_eq!(clean_text("Sec\u{0}tion\u{200b} 1\u{7}"), "Section 1");
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,40}|[ a\u{a0}\n\t\r\u{1}\u{200b}b]{0,40}") {
            let once = clean_text(&s);
            prop_assert_eq!(clean_text(&once), once.clone());
            prop_assert!(!once.chars().any(|c| c.is_control() && c != '\n'));
            prop_assert!(!once.contains("  ") && !once.contains("\n\n"));
            prop_assert!(once.chars().count() <= s.chars().count());
        }
    }
}
