//! Requirements-document ingestion: deterministic statement splitting,
//! normative-strength classification, and vague-term detection.
//!
//! Splitting is sentence/bullet granular. Sentence terminators are `.`, `;`,
//! `?`, `!` outside common abbreviations and numeric literals; one enumerated
//! list bullet (or table row) is one statement.

use std::collections::BTreeSet;
use std::path::Path;

use crate::model::{LineSpan, NormativeStrength, RequirementItem, SourceRef};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} is not valid UTF-8 at byte offset {offset}")]
    Undecodable { path: String, offset: usize },
    #[error("cannot read lexicon {path}: {source}")]
    Lexicon {
        path: String,
        source: std::io::Error,
    },
}

/// A loaded requirements document: raw lines plus, after splitting, the
/// extracted statement items in document order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequirementsDocument {
    pub path: String,
    pub doc_id: String,
    pub lines: Vec<String>,
    pub items: Vec<RequirementItem>,
}

/// Case-insensitive whole-token lexicon of vague terms.
///
/// The built-in defaults are non-removable; an extension file (one term per
/// line, `#` comments) can only add terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VagueTermLexicon {
    terms: BTreeSet<String>,
}

pub const DEFAULT_VAGUE_TERMS: [&str; 4] = ["random", "strong", "lowest", "instantly"];

impl Default for VagueTermLexicon {
    fn default() -> Self {
        Self {
            terms: DEFAULT_VAGUE_TERMS.iter().map(|t| t.to_string()).collect(),
        }
    }
}

impl VagueTermLexicon {
    pub fn with_extension_file(path: &Path) -> Result<Self, IngestError> {
        let mut lex = Self::default();
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Lexicon {
            path: path.display().to_string(),
            source,
        })?;
        for line in text.lines() {
            let term = line.split('#').next().unwrap_or("").trim().to_lowercase();
            if !term.is_empty() {
                lex.terms.insert(term);
            }
        }
        Ok(lex)
    }

    pub fn with_terms<I: IntoIterator<Item = String>>(extra: I) -> Self {
        let mut lex = Self::default();
        lex.terms.extend(extra.into_iter().map(|t| t.to_lowercase()));
        lex
    }

    pub fn contains(&self, token: &str) -> bool {
        self.terms.contains(&token.to_lowercase())
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|s| s.as_str())
    }
}

/// A whole-token lexicon match with its character offset in the statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VagueHit {
    pub term: String,
    pub offset: usize,
}

/// Loads a requirements file, normalizing line endings to `\n`.
pub fn load_document(path: &Path) -> Result<RequirementsDocument, IngestError> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|e| IngestError::Undecodable {
        path: path.display().to_string(),
        offset: e.utf8_error().valid_up_to(),
    })?;
    let doc_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "doc".to_string());
    Ok(document_from_text(&path.display().to_string(), &doc_id, &text))
}

/// Builds a document from in-memory text (used by tests and the harness).
pub fn document_from_text(path: &str, doc_id: &str, text: &str) -> RequirementsDocument {
    let normalized = text.replace("\r\n", "\n").replace('\r', "\n");
    let lines: Vec<String> = if normalized.is_empty() {
        Vec::new()
    } else {
        normalized
            .strip_suffix('\n')
            .unwrap_or(&normalized)
            .split('\n')
            .map(|s| s.to_string())
            .collect()
    };
    RequirementsDocument {
        path: path.to_string(),
        doc_id: doc_id.to_string(),
        lines,
        items: Vec::new(),
    }
}

/// Splits a loaded document into statements and classifies each one.
///
/// Ids are assigned sequentially as `<doc_id>-<seq>`; vague_terms are left
/// empty until [`annotate_vague_terms`] runs.
pub fn split_statements(doc: &RequirementsDocument) -> Vec<RequirementItem> {
    let mut splitter = Splitter::new(&doc.path);
    for (idx, raw) in doc.lines.iter().enumerate() {
        splitter.feed_line(idx as u32 + 1, raw);
    }
    splitter.flush();
    splitter
        .statements
        .into_iter()
        .enumerate()
        .map(|(i, (text, span))| {
            let strength = classify_strength(&text);
            RequirementItem {
                id: format!("{}-{:03}", doc.doc_id, i + 1),
                text,
                source: SourceRef {
                    path: doc.path.clone(),
                    line_span: span,
                },
                strength,
                vague_terms: Vec::new(),
            }
        })
        .collect()
}

/// Annotates items with their lexicon hits (unique terms, first-hit order).
pub fn annotate_vague_terms(items: &mut [RequirementItem], lexicon: &VagueTermLexicon) {
    for item in items {
        let mut seen = Vec::new();
        for hit in detect_vague_terms(&item.text, lexicon) {
            if !seen.contains(&hit.term) {
                seen.push(hit.term);
            }
        }
        item.vague_terms = seen;
    }
}

/// Full ingestion: load, split, classify, annotate.
pub fn ingest_file(
    path: &Path,
    lexicon: &VagueTermLexicon,
) -> Result<RequirementsDocument, IngestError> {
    let mut doc = load_document(path)?;
    let mut items = split_statements(&doc);
    annotate_vague_terms(&mut items, lexicon);
    doc.items = items;
    Ok(doc)
}

/// Deterministic keyword classification, first match in priority order:
/// shall/must, should, may/can, else informative.
pub fn classify_strength(text: &str) -> NormativeStrength {
    let mut has_should = false;
    let mut has_may = false;
    for token in tokens(text) {
        match token.text.to_lowercase().as_str() {
            "shall" | "must" => return NormativeStrength::Shall,
            "should" => has_should = true,
            "may" | "can" => has_may = true,
            _ => {}
        }
    }
    if has_should {
        NormativeStrength::Should
    } else if has_may {
        NormativeStrength::May
    } else {
        NormativeStrength::Informative
    }
}

/// Case-insensitive whole-token lexicon matches with character offsets.
pub fn detect_vague_terms(text: &str, lexicon: &VagueTermLexicon) -> Vec<VagueHit> {
    tokens(text)
        .filter(|t| lexicon.contains(t.text))
        .map(|t| VagueHit {
            term: t.text.to_lowercase(),
            offset: t.offset,
        })
        .collect()
}

struct Token<'a> {
    text: &'a str,
    offset: usize,
}

fn tokens(text: &str) -> impl Iterator<Item = Token<'_>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        let is_word = ch.is_alphanumeric() || ch == '_';
        match (is_word, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.len()));
    }
    // Byte offsets are converted to character offsets for reporting.
    let char_offsets: Vec<usize> = {
        let mut map = vec![0usize; text.len() + 1];
        for (chars, (bytes, _)) in text.char_indices().enumerate() {
            map[bytes] = chars;
        }
        map[text.len()] = text.chars().count();
        map
    };
    out.into_iter().map(move |(s, e)| Token {
        text: &text[s..e],
        offset: char_offsets[s],
    })
}

// --- statement splitter ----------------------------------------------------

const MULTI_DOT_ABBREVIATIONS: [&str; 4] = ["e.g.", "i.e.", "p.m.", "a.m."];
const ABBREVIATIONS: [&str; 10] = [
    "etc", "vs", "cf", "fig", "eq", "no", "approx", "resp", "incl", "rev",
];

struct Splitter {
    path: String,
    // flow buffer characters with the line each came from
    buf: Vec<(char, u32)>,
    statements: Vec<(String, LineSpan)>,
}

impl Splitter {
    fn new(path: &str) -> Self {
        Self {
            path: path.to_string(),
            buf: Vec::new(),
            statements: Vec::new(),
        }
    }

    fn feed_line(&mut self, line_no: u32, raw: &str) {
        let _ = &self.path;
        let stripped = strip_inline_markup(raw);
        let trimmed = stripped.trim();
        if trimmed.is_empty() {
            self.flush();
            return;
        }
        if let Some(heading) = heading_text(trimmed) {
            self.flush();
            self.emit(&heading, line_no, line_no);
            return;
        }
        if trimmed.starts_with('|') {
            self.flush();
            if let Some(row) = table_row_text(trimmed) {
                self.emit(&row, line_no, line_no);
            }
            return;
        }
        if let Some(content) = bullet_text(trimmed) {
            self.flush();
            let cleaned = trim_terminator(content);
            if !cleaned.is_empty() {
                self.emit(&cleaned, line_no, line_no);
            }
            return;
        }
        if !self.buf.is_empty() {
            self.buf.push((' ', line_no));
        }
        for ch in trimmed.chars() {
            self.buf.push((ch, line_no));
        }
        self.drain_complete_sentences();
    }

    /// Emits every sentence in the buffer whose terminator is already
    /// followed by whitespace; the tail stays buffered for the next line.
    fn drain_complete_sentences(&mut self) {
        loop {
            let text: String = self.buf.iter().map(|(c, _)| *c).collect();
            let Some(end) = find_sentence_end(&text, false) else {
                return;
            };
            let chars_end = text[..end].chars().count();
            self.emit_from_buf(chars_end);
        }
    }

    fn flush(&mut self) {
        loop {
            let text: String = self.buf.iter().map(|(c, _)| *c).collect();
            if text.trim().is_empty() {
                self.buf.clear();
                return;
            }
            match find_sentence_end(&text, true) {
                Some(end) => {
                    let chars_end = text[..end].chars().count();
                    self.emit_from_buf(chars_end);
                }
                None => {
                    let chars_end = text.chars().count();
                    self.emit_from_buf(chars_end);
                }
            }
        }
    }

    /// Removes the first `chars_end` characters from the buffer and records
    /// them as one statement, tracking the contributing line span.
    fn emit_from_buf(&mut self, chars_end: usize) {
        let head: Vec<(char, u32)> = self.buf.drain(..chars_end).collect();
        let text: String = head.iter().map(|(c, _)| *c).collect();
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return;
        }
        let leading = text.len() - text.trim_start().len();
        let leading_chars = text[..leading].chars().count();
        let trimmed_chars = trimmed.chars().count();
        let lines: Vec<u32> = head
            .iter()
            .skip(leading_chars)
            .take(trimmed_chars)
            .map(|(_, l)| *l)
            .collect();
        let start = lines.iter().copied().min().unwrap_or(1);
        let end = lines.iter().copied().max().unwrap_or(start);
        self.statements.push((trimmed.to_string(), LineSpan::new(start, end)));
        // drop spacing left at the head of the buffer
        while matches!(self.buf.first(), Some((c, _)) if c.is_whitespace()) {
            self.buf.remove(0);
        }
    }

    fn emit(&mut self, text: &str, start: u32, end: u32) {
        self.statements
            .push((text.trim().to_string(), LineSpan::new(start, end)));
    }
}

/// Finds the byte offset one past the first sentence terminator, or None.
///
/// With `at_flush` the terminator may sit at the very end of the text;
/// otherwise it must be followed by whitespace so that decimals split across
/// appends are never cut.
fn find_sentence_end(text: &str, at_flush: bool) -> Option<usize> {
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        let ch = b as char;
        if !matches!(ch, '.' | ';' | '?' | '!') {
            continue;
        }
        let next = bytes.get(i + 1).map(|&b| b as char);
        let followed_ok = match next {
            None => at_flush,
            Some(c) => c.is_whitespace(),
        };
        if !followed_ok {
            continue;
        }
        if ch == '.' && is_non_terminal_period(text, i) {
            continue;
        }
        return Some(i + 1);
    }
    None
}

fn is_non_terminal_period(text: &str, idx: usize) -> bool {
    let bytes = text.as_bytes();
    let prev = if idx > 0 { Some(bytes[idx - 1] as char) } else { None };
    let next = bytes.get(idx + 1).map(|&b| b as char);
    // numeric literal: digit on both sides
    if prev.map(|c| c.is_ascii_digit()).unwrap_or(false)
        && next.map(|c| c.is_ascii_digit()).unwrap_or(false)
    {
        return true;
    }
    let head = &text[..=idx];
    let lower = head.to_lowercase();
    for abbr in MULTI_DOT_ABBREVIATIONS {
        if lower.ends_with(abbr) {
            return true;
        }
    }
    // single word before the period
    let word: String = head[..idx]
        .chars()
        .rev()
        .take_while(|c| c.is_alphabetic())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

fn strip_inline_markup(line: &str) -> String {
    line.replace("**", "").replace('`', "")
}

fn heading_text(trimmed: &str) -> Option<String> {
    let hashes = trimmed.chars().take_while(|&c| c == '#').count();
    if hashes == 0 {
        return None;
    }
    let rest = trimmed[hashes..].trim();
    if rest.is_empty() {
        None
    } else {
        Some(rest.to_string())
    }
}

fn table_row_text(trimmed: &str) -> Option<String> {
    let is_separator = trimmed
        .chars()
        .all(|c| matches!(c, '|' | '-' | ':' | ' ' | '+'));
    if is_separator {
        return None;
    }
    let cells: Vec<&str> = trimmed
        .trim_matches('|')
        .split('|')
        .map(|c| c.trim())
        .filter(|c| !c.is_empty())
        .collect();
    if cells.is_empty() {
        None
    } else {
        Some(cells.join(" "))
    }
}

/// Returns the content after a bullet marker (`-`, `*`, `•`, `1.`, `2)`).
fn bullet_text(trimmed: &str) -> Option<&str> {
    if let Some(rest) = trimmed
        .strip_prefix("- ")
        .or_else(|| trimmed.strip_prefix("* "))
        .or_else(|| trimmed.strip_prefix("• "))
    {
        return Some(rest.trim_start());
    }
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &trimmed[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if r.starts_with(' ') {
                return Some(r.trim_start());
            }
        }
    }
    None
}

fn trim_terminator(text: &str) -> String {
    text.trim().trim_end_matches(['.', ';']).trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> RequirementsDocument {
        document_from_text("reqs.txt", "reqs", text)
    }

    #[test]
    fn three_line_file_preserves_spans() {
        let d = doc("First statement here.\nSecond statement here.\nThird statement here.\n");
        assert_eq!(d.lines.len(), 3);
        let items = split_statements(&d);
        assert_eq!(items.len(), 3);
        for (i, item) in items.iter().enumerate() {
            assert_eq!(item.source.line_span, LineSpan::new(i as u32 + 1, i as u32 + 1));
        }
    }

    #[test]
    fn mixed_line_endings_are_normalized() {
        let a = doc("one.\r\ntwo.\rthree.\n");
        let b = doc("one.\ntwo.\nthree.\n");
        assert_eq!(a.lines, b.lines);
        assert_eq!(split_statements(&a), split_statements(&b));
    }

    #[test]
    fn empty_file_yields_zero_items() {
        let d = doc("");
        assert!(split_statements(&d).is_empty());
    }

    #[test]
    fn two_terminated_sentences_split() {
        let d = doc("The password shall contain digits. It shall be rotated monthly.\n");
        let items = split_statements(&d);
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].text, "The password shall contain digits.");
        assert_eq!(items[1].text, "It shall be rotated monthly.");
    }

    #[test]
    fn decimal_points_do_not_split() {
        let d = doc("Value range is 0.5 to 1.5.\n");
        let items = split_statements(&d);
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].text, "Value range is 0.5 to 1.5.");
    }

    #[test]
    fn abbreviations_do_not_split() {
        let d = doc("Use approved ciphers, e.g. AES, for storage.\n");
        let items = split_statements(&d);
        assert_eq!(items.len(), 1);
    }

    #[test]
    fn bullet_list_of_four_shall_lines_without_periods() {
        let d = doc(
            "- The hotspot shall use WPA2\n- The hotspot shall disable WPS\n- The hotspot shall log failures\n- The hotspot shall isolate clients\n",
        );
        let items = split_statements(&d);
        assert_eq!(items.len(), 4);
        assert!(items
            .iter()
            .all(|i| i.strength == NormativeStrength::Shall));
    }

    #[test]
    fn statement_spanning_lines_records_full_span() {
        let d = doc("The hotspot password shall be at least\n10 characters long.\n");
        let items = split_statements(&d);
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].source.line_span, LineSpan::new(1, 2));
        assert_eq!(
            items[0].text,
            "The hotspot password shall be at least 10 characters long."
        );
    }

    #[test]
    fn splitting_is_deterministic() {
        let d = doc("One statement. Another; and a third?\nFinal without terminator\n");
        assert_eq!(split_statements(&d), split_statements(&d));
    }

    #[test]
    fn strength_classification_examples() {
        assert_eq!(
            classify_strength("The system shall disable the hotspot"),
            NormativeStrength::Shall
        );
        assert_eq!(
            classify_strength("Passwords should be strong"),
            NormativeStrength::Should
        );
        assert_eq!(
            classify_strength("This section describes the WiFi subsystem"),
            NormativeStrength::Informative
        );
        assert_eq!(
            classify_strength("The gateway may cache results"),
            NormativeStrength::May
        );
        assert_eq!(
            classify_strength("Records must be retained"),
            NormativeStrength::Shall
        );
        // priority: shall wins over should in the same statement
        assert_eq!(
            classify_strength("It shall log, and should also alert"),
            NormativeStrength::Shall
        );
    }

    #[test]
    fn strength_is_stable_under_whitespace_and_case() {
        for text in ["  THE SYSTEM SHALL STOP.  ", "the system shall stop."] {
            assert_eq!(classify_strength(text), NormativeStrength::Shall);
        }
    }

    #[test]
    fn strength_partition_is_total() {
        let d = doc("A shall. B should. C may. D is text.\n");
        let items = split_statements(&d);
        let count: usize = [
            NormativeStrength::Shall,
            NormativeStrength::Should,
            NormativeStrength::May,
            NormativeStrength::Informative,
        ]
        .iter()
        .map(|s| items.iter().filter(|i| i.strength == *s).count())
        .sum();
        assert_eq!(count, items.len());
    }

    #[test]
    fn vague_term_detection_examples() {
        let lex = VagueTermLexicon::default();
        let hits = detect_vague_terms("Passwords should be strong", &lex);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].term, "strong");
        assert_eq!(hits[0].offset, 20);

        let hits = detect_vague_terms("Respond instantly after reboot", &lex);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].term, "instantly");

        assert!(detect_vague_terms("Use a strongbox identifier", &lex).is_empty());
    }

    #[test]
    fn lexicon_defaults_are_present_and_extension_only_adds() {
        let lex = VagueTermLexicon::with_terms(vec!["appropriately".to_string()]);
        for term in DEFAULT_VAGUE_TERMS {
            assert!(lex.contains(term));
        }
        assert!(lex.contains("APPROPRIATELY"));
    }

    #[test]
    fn table_rows_become_statements() {
        let d = doc("| Req | Text |\n|-----|------|\n| R1 | The system shall halt |\n");
        let items = split_statements(&d);
        assert_eq!(items.len(), 2);
        assert_eq!(items[1].text, "R1 The system shall halt");
    }

    #[test]
    fn headings_are_single_statements() {
        let d = doc("# Password Policy\nThe password shall be long.\n");
        let items = split_statements(&d);
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].text, "Password Policy");
        assert_eq!(items[0].strength, NormativeStrength::Informative);
    }
}
