//! Description normalization.

/// Language-specific post-processing (lemmatization, transliteration)
/// applied after the built-in rules.
pub trait NormalizerHook: Send + Sync {
    fn apply(&self, text: &str) -> String;
}

impl<F> NormalizerHook for F
where
    F: Fn(&str) -> String + Send + Sync,
{
    fn apply(&self, text: &str) -> String {
        self(text)
    }
}

fn is_latin_letter(c: char) -> bool {
    c.is_ascii_lowercase()
        || c.is_ascii_uppercase()
        || (matches!(c, '\u{00C0}'..='\u{024F}') && c != '\u{00D7}' && c != '\u{00F7}')
        || matches!(c, '\u{1E00}'..='\u{1EFF}')
}

fn is_cyrillic_letter(c: char) -> bool {
    matches!(c, '\u{0400}'..='\u{052F}') && c.is_alphabetic()
}

/// Lowercases, collapses each digit run to `0`, drops everything that is not
/// a Latin or Cyrillic letter, `0` or whitespace, collapses whitespace runs
/// to one space and trims. The hook, if any, runs last.
pub fn normalize_text(raw: &str, hook: Option<&dyn NormalizerHook>) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut in_digits = false;
    let mut pending_space = false;
    for c in raw.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_digit() {
            if !in_digits {
                if pending_space && !out.is_empty() {
                    out.push(' ');
                }
                pending_space = false;
                out.push('0');
            }
            in_digits = true;
            continue;
        }
        in_digits = false;
        if c.is_whitespace() {
            pending_space = true;
        } else if is_latin_letter(c) || is_cyrillic_letter(c) {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        }
    }
    match hook {
        Some(h) => h.apply(&out),
        None => out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases() {
        assert_eq!(normalize_text("ABC", None), "abc");
    }

    #[test]
    fn digits_and_punctuation() {
        assert_eq!(normalize_text("цена 100!", None), "цена 0");
        assert_eq!(normalize_text("a1b22c", None), "a0b0c");
        assert_eq!(normalize_text("1.5", None), "00");
    }

    #[test]
    fn whitespace_collapse() {
        assert_eq!(normalize_text("  a \n b ", None), "a b");
        assert_eq!(normalize_text("\t\n", None), "");
        assert_eq!(normalize_text("a - b", None), "a b");
    }

    #[test]
    fn foreign_scripts_removed() {
        assert_eq!(normalize_text("Ёлка tree 木 δ", None), "ёлка tree");
        assert_eq!(normalize_text("café", None), "café");
    }

    #[test]
    fn hook_runs_last() {
        let upper = |s: &str| s.to_uppercase();
        assert_eq!(normalize_text("Hello 42", Some(&upper)), "HELLO 0");
    }
}
