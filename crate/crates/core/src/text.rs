//! Tokenizers shared across the pipeline.
//!
//! Two flavours exist:
//!
//! * [`model_tokens`] feeds the reference scorer. It lowercases, splits on
//!   whitespace, splits punctuation into separate tokens and keeps reserved
//!   `<#...#>` markers (prompt tokens, the joint separator) atomic and
//!   case-preserved.
//! * [`metric_tokens`] feeds the NLG metrics and embedding lookup. It
//!   lowercases, strips punctuation and optionally drops English articles.

/// Returns the byte length of a reserved `<#NAME#>` marker at the start of
/// `s`, if one is present. Names are ASCII alphanumerics or `_`.
fn reserved_marker_len(s: &str) -> Option<usize> {
    let rest = s.strip_prefix("<#")?;
    let name_len = rest
        .bytes()
        .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
        .count();
    if name_len == 0 {
        return None;
    }
    rest[name_len..].starts_with("#>").then_some(name_len + 4)
}

/// True for strings of the form `<#NAME#>`.
pub fn is_reserved_marker(s: &str) -> bool {
    reserved_marker_len(s) == Some(s.len())
}

/// Tokenizer used by the reference n-gram scorer and the decoders.
pub fn model_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut i = 0;
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    while i < text.len() {
        let rest = &text[i..];
        if let Some(len) = reserved_marker_len(rest) {
            flush(&mut word, &mut out);
            out.push(rest[..len].to_string());
            i += len;
            continue;
        }
        let ch = rest.chars().next().expect("non-empty remainder");
        if ch.is_whitespace() {
            flush(&mut word, &mut out);
        } else if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else {
            flush(&mut word, &mut out);
            out.push(ch.to_lowercase().collect());
        }
        i += ch.len_utf8();
    }
    flush(&mut word, &mut out);
    out
}

/// Joins model tokens back into display text.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let parts: Vec<&str> = tokens.iter().map(|t| t.as_ref()).collect();
    parts.join(" ")
}

/// Normalization options for metric-time tokenization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MetricTokenizer {
    /// Drop the articles "a", "an" and "the".
    #[serde(default)]
    pub strip_articles: bool,
}

impl MetricTokenizer {
    pub fn new(strip_articles: bool) -> Self {
        Self { strip_articles }
    }

    /// Lowercase, strip punctuation, split on whitespace.
    ///
    /// Apostrophes are deleted (`it's` becomes `its`); every other
    /// punctuation character acts as a word boundary.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut cleaned = String::with_capacity(text.len());
        for ch in text.chars() {
            if ch == '\'' || ch == '\u{2019}' {
                continue;
            }
            if ch.is_alphanumeric() {
                cleaned.extend(ch.to_lowercase());
            } else {
                cleaned.push(' ');
            }
        }
        cleaned
            .split_whitespace()
            .filter(|w| !(self.strip_articles && matches!(*w, "a" | "an" | "the")))
            .map(str::to_string)
            .collect()
    }
}

/// Metric tokenization with default options.
pub fn metric_tokens(text: &str) -> Vec<String> {
    MetricTokenizer::default().tokenize(text)
}
