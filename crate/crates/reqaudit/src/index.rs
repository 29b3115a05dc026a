//! Lexical code indexing and per-rule context assembly.
//!
//! Indexing is lexical, not syntactic: identifiers, string and numeric
//! literals, heuristic definition sites, and cross-file reference edges are
//! extracted uniformly across languages. No compilation, execution, or type
//! resolution is involved. Context assembly retrieves budget-bounded verbatim
//! file slices ranked by token overlap with the rule, boosted by the
//! traceability map, and expanded one hop along cross-file edges.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{LineSpan, TraceabilityMap, VerifiableRule};

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid glob pattern '{pattern}': {message}")]
    BadGlob { pattern: String, message: String },
    #[error("malformed traceability entry at {path}:{line}")]
    MalformedTraceEntry { path: String, line: usize },
}

/// Include/exclude globs for the tree walk.
#[derive(Debug, Clone)]
pub struct IndexConfig {
    pub include: Vec<String>,
    pub exclude: Vec<String>,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            include: vec!["**/*".into()],
            exclude: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub path: String,
    pub language: String,
    pub line_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occurrence {
    pub file: String,
    pub line: u32,
    pub is_definition: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantOccurrence {
    pub file: String,
    pub line: u32,
}

/// Cross-file reference edge: `from` references an identifier defined in `to`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub via: String,
}

/// The lexical index of a source tree. Texts are held in memory for chunk
/// extraction and are not part of the persisted document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CodeBaseIndex {
    pub files: Vec<FileEntry>,
    pub symbols: BTreeMap<String, Vec<Occurrence>>,
    pub constants: BTreeMap<String, Vec<ConstantOccurrence>>,
    pub edges: Vec<Edge>,
    pub skipped: Vec<String>,
    texts: BTreeMap<String, Vec<String>>,
}

/// Persisted form of the index (paths relative to the scanned root).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexDocument {
    pub schema_version: String,
    pub kind: String,
    pub files: Vec<FileEntry>,
    pub symbols: BTreeMap<String, Vec<Occurrence>>,
    pub constants: BTreeMap<String, Vec<ConstantOccurrence>>,
    pub edges: Vec<Edge>,
    pub skipped: Vec<String>,
}

impl CodeBaseIndex {
    pub fn to_document(&self) -> IndexDocument {
        IndexDocument {
            schema_version: crate::document::SCHEMA_VERSION.into(),
            kind: "index".into(),
            files: self.files.clone(),
            symbols: self.symbols.clone(),
            constants: self.constants.clone(),
            edges: self.edges.clone(),
            skipped: self.skipped.clone(),
        }
    }

    pub fn from_document(doc: IndexDocument) -> Self {
        Self {
            files: doc.files,
            symbols: doc.symbols,
            constants: doc.constants,
            edges: doc.edges,
            skipped: doc.skipped,
            texts: BTreeMap::new(),
        }
    }

    /// Re-reads the indexed files under `root` so chunk extraction works on
    /// an index loaded from its persisted document.
    pub fn hydrate_texts(&mut self, root: &Path) -> Result<(), IndexError> {
        for entry in &self.files {
            if self.texts.contains_key(&entry.path) {
                continue;
            }
            let full = root.join(&entry.path);
            let bytes = std::fs::read(&full).map_err(|source| IndexError::Io {
                path: full.display().to_string(),
                source,
            })?;
            if let Ok(text) = String::from_utf8(bytes) {
                self.texts.insert(entry.path.clone(), split_lines(&text));
            }
        }
        Ok(())
    }

    pub fn lines(&self, file: &str) -> Option<&[String]> {
        self.texts.get(file).map(|v| v.as_slice())
    }

    /// Verbatim slice of an indexed file (1-based inclusive line span).
    pub fn slice(&self, file: &str, span: LineSpan) -> Option<String> {
        let lines = self.texts.get(file)?;
        if span.start == 0 || span.end as usize > lines.len() || !span.is_valid() {
            return None;
        }
        Some(lines[(span.start as usize - 1)..span.end as usize].join("\n"))
    }

    pub fn has_file(&self, path: &str) -> bool {
        self.files.iter().any(|f| f.path == path)
    }
}

fn split_lines(text: &str) -> Vec<String> {
    let normalized = text.replace("\r\n", "\n").replace('\r', "\n");
    normalized
        .strip_suffix('\n')
        .unwrap_or(&normalized)
        .split('\n')
        .map(|s| s.to_string())
        .collect()
}

/// Scans a source tree into a lexical index. Deterministic: files are walked
/// in sorted order and all maps are ordered. Binary files are skipped with a
/// note, not an error.
pub fn scan(root: &Path, config: &IndexConfig) -> Result<CodeBaseIndex, IndexError> {
    let include = build_globset(&config.include)?;
    let exclude = build_globset(&config.exclude)?;
    let mut index = CodeBaseIndex::default();

    let mut paths: Vec<std::path::PathBuf> = Vec::new();
    for entry in walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
    {
        if entry.file_type().is_file() {
            paths.push(entry.path().to_path_buf());
        }
    }
    paths.sort();

    for full in paths {
        let rel = full
            .strip_prefix(root)
            .unwrap_or(&full)
            .to_string_lossy()
            .replace('\\', "/");
        if !include.is_match(&rel) || exclude.is_match(&rel) {
            continue;
        }
        let bytes = std::fs::read(&full).map_err(|source| IndexError::Io {
            path: full.display().to_string(),
            source,
        })?;
        if bytes.contains(&0) {
            index.skipped.push(format!("{rel}: binary file skipped"));
            continue;
        }
        let Ok(text) = String::from_utf8(bytes) else {
            index.skipped.push(format!("{rel}: non-UTF-8 file skipped"));
            continue;
        };
        let lines = split_lines(&text);
        index.files.push(FileEntry {
            path: rel.clone(),
            language: language_tag(&rel).to_string(),
            line_count: lines.len() as u32,
        });
        scan_file(&rel, &lines, &mut index);
        index.texts.insert(rel, lines);
    }

    index.edges = build_edges(&index.symbols);
    Ok(index)
}

fn build_globset(patterns: &[String]) -> Result<globset::GlobSet, IndexError> {
    let mut builder = globset::GlobSetBuilder::new();
    for pattern in patterns {
        let glob = globset::Glob::new(pattern).map_err(|e| IndexError::BadGlob {
            pattern: pattern.clone(),
            message: e.to_string(),
        })?;
        builder.add(glob);
    }
    builder.build().map_err(|e| IndexError::BadGlob {
        pattern: "<set>".into(),
        message: e.to_string(),
    })
}

fn language_tag(path: &str) -> &'static str {
    match path.rsplit('.').next().unwrap_or("") {
        "c" | "h" => "c",
        "cc" | "cpp" | "hpp" | "cxx" => "cpp",
        "rs" => "rust",
        "py" => "python",
        "js" | "jsx" => "javascript",
        "ts" | "tsx" => "typescript",
        "java" => "java",
        "go" => "go",
        "sh" => "shell",
        "toml" => "toml",
        "yaml" | "yml" => "yaml",
        "json" => "json",
        "conf" | "cfg" | "ini" | "properties" => "config",
        "md" => "markdown",
        "txt" => "text",
        _ => "unknown",
    }
}

const DEF_KEYWORDS: [&str; 6] = ["fn", "def", "function", "func", "define", "macro"];
const STMT_KEYWORDS: [&str; 16] = [
    "return", "if", "while", "for", "switch", "else", "case", "goto", "do", "new", "throw",
    "await", "yield", "assert", "not", "sizeof",
];

/// Tokenizes one file: identifiers (with def/ref flags), numeric literals,
/// and string literals.
///
/// Definition heuristics are lexical: `name =` (not `==`), `name:` followed
/// by whitespace (config keys), `name(` introduced by a definition keyword,
/// or `name(` after a plain type-word prefix such as `static int`.
fn scan_file(path: &str, lines: &[String], index: &mut CodeBaseIndex) {
    for (line_idx, line) in lines.iter().enumerate() {
        let line_no = line_idx as u32 + 1;
        let toks = lex_line(line);
        for (t_idx, tok) in toks.iter().enumerate() {
            match tok.kind {
                TokKind::Ident => {
                    let is_definition = ident_is_definition(line, &toks, t_idx);
                    index
                        .symbols
                        .entry(tok.text.clone())
                        .or_default()
                        .push(Occurrence {
                            file: path.to_string(),
                            line: line_no,
                            is_definition,
                        });
                }
                TokKind::Number | TokKind::Str => {
                    index
                        .constants
                        .entry(tok.text.clone())
                        .or_default()
                        .push(ConstantOccurrence {
                            file: path.to_string(),
                            line: line_no,
                        });
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokKind {
    Ident,
    Number,
    Str,
}

#[derive(Debug, Clone)]
struct Tok {
    text: String,
    kind: TokKind,
    start: usize,
    end: usize,
}

fn lex_line(line: &str) -> Vec<Tok> {
    let bytes = line.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c == '"' || c == '\'' {
            let quote = c;
            let mut j = i + 1;
            while j < bytes.len() {
                let cj = bytes[j] as char;
                if cj == '\\' {
                    j += 2;
                    continue;
                }
                if cj == quote {
                    break;
                }
                j += 1;
            }
            if j < bytes.len() {
                let inner = &line[i + 1..j];
                if !inner.is_empty() {
                    toks.push(Tok {
                        text: inner.to_string(),
                        kind: TokKind::Str,
                        start: i,
                        end: j + 1,
                    });
                }
                i = j + 1;
                continue;
            }
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut j = i + 1;
            while j < bytes.len() {
                let cj = bytes[j] as char;
                if cj.is_ascii_alphanumeric() || cj == '_' {
                    j += 1;
                } else {
                    break;
                }
            }
            toks.push(Tok {
                text: line[i..j].to_string(),
                kind: TokKind::Ident,
                start: i,
                end: j,
            });
            i = j;
            continue;
        }
        if c.is_ascii_digit() {
            let mut j = i + 1;
            while j < bytes.len() {
                let cj = bytes[j] as char;
                if cj.is_ascii_alphanumeric() || cj == '.' || cj == '_' {
                    j += 1;
                } else {
                    break;
                }
            }
            let text = line[i..j].trim_end_matches('.').to_string();
            toks.push(Tok {
                text,
                kind: TokKind::Number,
                start: i,
                end: j,
            });
            i = j;
            continue;
        }
        i += 1;
    }
    toks
}

fn ident_is_definition(line: &str, toks: &[Tok], idx: usize) -> bool {
    let tok = &toks[idx];
    if idx > 0 {
        let prev = toks[idx - 1].text.to_lowercase();
        if DEF_KEYWORDS.contains(&prev.as_str()) {
            return true;
        }
    }
    let bytes = line.as_bytes();
    let mut after = tok.end;
    while after < bytes.len() && (bytes[after] as char) == ' ' {
        after += 1;
    }
    let next = bytes.get(after).map(|&b| b as char);
    let next2 = bytes.get(after + 1).map(|&b| b as char);
    match next {
        Some('=') if next2 != Some('=') => return true,
        Some(':') if next2 != Some(':') => {
            if next2.map(|c| c == ' ' || c == '\t').unwrap_or(true) {
                return true;
            }
        }
        Some('(') => {
            // type-word prefix: everything before the identifier is plain
            // identifier words (e.g. "static void"), none of them statement
            // keywords
            let prefix = &line[..tok.start];
            let prefix_ok = !prefix.trim().is_empty()
                && prefix
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ' ' || c == '*' || c == '\t');
            if prefix_ok {
                let no_stmt_kw = prefix
                    .split_whitespace()
                    .all(|w| !STMT_KEYWORDS.contains(&w.to_lowercase().trim_matches('*')));
                if no_stmt_kw {
                    return true;
                }
            }
        }
        _ => {}
    }
    false
}

/// Splits an identifier into lowercase segments on `_` and camel-case
/// boundaries; `wifi_idleTimeout` becomes `wifi`, `idle`, `timeout`.
pub fn split_segments(identifier: &str) -> Vec<String> {
    let mut segments = Vec::new();
    for part in identifier.split(['_', '-', '.']) {
        if part.is_empty() {
            continue;
        }
        let chars: Vec<char> = part.chars().collect();
        let mut current = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let boundary = i > 0
                && ((c.is_ascii_uppercase() && chars[i - 1].is_ascii_lowercase())
                    || (c.is_ascii_digit() != chars[i - 1].is_ascii_digit()));
            if boundary && !current.is_empty() {
                segments.push(current.to_lowercase());
                current = String::new();
            }
            current.push(c);
        }
        if !current.is_empty() {
            segments.push(current.to_lowercase());
        }
    }
    segments
}

fn build_edges(symbols: &BTreeMap<String, Vec<Occurrence>>) -> Vec<Edge> {
    let mut edges = BTreeSet::new();
    for (identifier, occurrences) in symbols {
        let def_files: BTreeSet<&str> = occurrences
            .iter()
            .filter(|o| o.is_definition)
            .map(|o| o.file.as_str())
            .collect();
        if def_files.is_empty() {
            continue;
        }
        for occ in occurrences.iter().filter(|o| !o.is_definition) {
            for def_file in &def_files {
                if *def_file != occ.file {
                    edges.insert(Edge {
                        from: occ.file.clone(),
                        to: def_file.to_string(),
                        via: identifier.clone(),
                    });
                }
            }
        }
    }
    edges.into_iter().collect()
}

// --- traceability map ------------------------------------------------------

/// Parses `REQ-ID<TAB>path[,path...]` lines; `#` comments and blanks allowed.
pub fn parse_tracemap(path: &Path) -> Result<TraceabilityMap, IndexError> {
    let text = std::fs::read_to_string(path).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_tracemap_text(&text, &path.display().to_string())
}

pub fn parse_tracemap_text(text: &str, origin: &str) -> Result<TraceabilityMap, IndexError> {
    let mut map = TraceabilityMap::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (req, paths) = line
            .split_once('\t')
            .ok_or(IndexError::MalformedTraceEntry {
                path: origin.to_string(),
                line: i + 1,
            })?;
        let req = req.trim();
        let paths: Vec<String> = paths
            .split(',')
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect();
        if req.is_empty() || paths.is_empty() {
            return Err(IndexError::MalformedTraceEntry {
                path: origin.to_string(),
                line: i + 1,
            });
        }
        map.entries.entry(req.to_string()).or_default().extend(paths);
    }
    Ok(map)
}

/// Trace entries whose paths resolve to nothing in the index are stale.
pub fn stale_trace_paths(map: &TraceabilityMap, index: &CodeBaseIndex) -> Vec<(String, String)> {
    let mut stale = Vec::new();
    for (req, paths) in &map.entries {
        for path in paths {
            let resolves = index
                .files
                .iter()
                .any(|f| &f.path == path || f.path.starts_with(&format!("{path}/")));
            if !resolves {
                stale.push((req.clone(), path.clone()));
            }
        }
    }
    stale
}

// --- context assembly ------------------------------------------------------

/// One verbatim file slice with its relevance score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub file: String,
    pub span: LineSpan,
    pub text: String,
    pub score: u32,
}

/// The evidence context handed to the auditor for one rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextBundle {
    pub rule_id: String,
    pub chunks: Vec<Chunk>,
    pub traceability_used: bool,
    pub trace_entry_present: bool,
    pub byte_budget: usize,
}

impl ContextBundle {
    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn total_bytes(&self) -> usize {
        self.chunks.iter().map(|c| c.text.len()).sum()
    }

    /// True when the excerpt appears verbatim in some chunk.
    pub fn contains_verbatim(&self, excerpt: &str) -> bool {
        !excerpt.is_empty() && self.chunks.iter().any(|c| c.text.contains(excerpt))
    }

    pub fn has_file(&self, file: &str) -> bool {
        self.chunks.iter().any(|c| c.file == file)
    }
}

const WINDOW_BEFORE: u32 = 19;
const WINDOW_AFTER: u32 = 20;
const TRACE_BONUS: u32 = 100;

const QUERY_STOPWORDS: [&str; 24] = [
    "the", "a", "an", "be", "is", "are", "to", "of", "in", "on", "for", "and", "or", "it",
    "with", "by", "as", "shall", "should", "must", "may", "can", "will", "not",
];

/// Tokens that drive retrieval for a rule: statement words plus point
/// subjects and parameters, lowercased, minus stopwords and one-letter noise.
pub fn rule_query_tokens(rule: &VerifiableRule) -> BTreeSet<String> {
    let mut text = rule.statement.clone();
    for point in &rule.points {
        text.push(' ');
        text.push_str(&point.subject);
        if let Some(param) = &point.parameter {
            text.push(' ');
            text.push_str(&param.to_string());
        }
    }
    let mut tokens = BTreeSet::new();
    for raw in text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_')) {
        if raw.is_empty() {
            continue;
        }
        for segment in split_segments(raw) {
            let is_numeric = segment.chars().all(|c| c.is_ascii_digit());
            if is_numeric {
                tokens.insert(segment);
            } else if segment.len() >= 3 && !QUERY_STOPWORDS.contains(&segment.as_str()) {
                tokens.insert(segment);
            }
        }
    }
    tokens
}

/// Scores chunks by lexical overlap, applies the traceability bonus, pulls
/// one hop of cross-file definitions, and truncates to the byte budget.
pub fn assemble_context(
    rule: &VerifiableRule,
    index: &CodeBaseIndex,
    tracemap: &TraceabilityMap,
    budget: usize,
) -> ContextBundle {
    let query = rule_query_tokens(rule);
    let traced_paths: BTreeSet<String> = rule
        .source_requirements
        .iter()
        .flat_map(|id| tracemap.paths_for(id).iter().cloned())
        .collect();
    let trace_entry_present = rule
        .source_requirements
        .iter()
        .any(|id| tracemap.has_entry(id));
    let file_is_traced = |file: &str| {
        traced_paths
            .iter()
            .any(|p| file == p || file.starts_with(&format!("{p}/")))
    };

    // hit lines per file from symbol and constant matches
    let mut hits: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
    for (identifier, occurrences) in &index.symbols {
        if !identifier_matches(identifier, &query) {
            continue;
        }
        for occ in occurrences {
            hits.entry(occ.file.clone()).or_default().insert(occ.line);
        }
    }
    for (literal, occurrences) in &index.constants {
        if !literal_matches(literal, &query) {
            continue;
        }
        for occ in occurrences {
            hits.entry(occ.file.clone()).or_default().insert(occ.line);
        }
    }

    // merge hit windows into chunks and score them
    let mut chunks: Vec<Chunk> = Vec::new();
    for (file, lines) in &hits {
        let Some(text_lines) = index.lines(file) else {
            continue;
        };
        let line_count = text_lines.len() as u32;
        for span in merge_windows(lines, line_count) {
            let text = index.slice(file, span).unwrap_or_default();
            let mut score = overlap_score(&text, &query);
            if file_is_traced(file) {
                score += TRACE_BONUS;
            }
            chunks.push(Chunk {
                file: file.clone(),
                span,
                text,
                score,
            });
        }
    }

    // one hop of cross-file edges: pull the referenced definition chunk
    let mut pulled: Vec<Chunk> = Vec::new();
    for chunk in &chunks {
        for edge in index.edges.iter().filter(|e| e.from == chunk.file) {
            let in_chunk = index
                .symbols
                .get(&edge.via)
                .map(|occs| {
                    occs.iter().any(|o| {
                        o.file == chunk.file
                            && o.line >= chunk.span.start
                            && o.line <= chunk.span.end
                    })
                })
                .unwrap_or(false);
            if !in_chunk {
                continue;
            }
            let def_line = index
                .symbols
                .get(&edge.via)
                .and_then(|occs| {
                    occs.iter()
                        .find(|o| o.file == edge.to && o.is_definition)
                        .map(|o| o.line)
                });
            let Some(def_line) = def_line else { continue };
            let Some(def_lines) = index.lines(&edge.to) else {
                continue;
            };
            let span = window_around(def_line, def_lines.len() as u32);
            let text = index.slice(&edge.to, span).unwrap_or_default();
            pulled.push(Chunk {
                file: edge.to.clone(),
                span,
                text,
                score: chunk.score.saturating_sub(1),
            });
        }
    }
    chunks.extend(pulled);

    let mut merged = merge_same_file_overlaps(chunks, index);
    merged.sort_by(|a, b| {
        b.score
            .cmp(&a.score)
            .then_with(|| a.file.cmp(&b.file))
            .then_with(|| a.span.start.cmp(&b.span.start))
    });

    // strict-prefix byte budget
    let mut selected = Vec::new();
    let mut used = 0usize;
    for chunk in merged {
        if used + chunk.text.len() > budget {
            break;
        }
        used += chunk.text.len();
        selected.push(chunk);
    }

    let traceability_used =
        trace_entry_present && selected.iter().any(|c| file_is_traced(&c.file));
    ContextBundle {
        rule_id: rule.rule_id.clone(),
        chunks: selected,
        traceability_used,
        trace_entry_present,
        byte_budget: budget,
    }
}

fn identifier_matches(identifier: &str, query: &BTreeSet<String>) -> bool {
    if query.contains(&identifier.to_lowercase()) {
        return true;
    }
    split_segments(identifier)
        .into_iter()
        .any(|s| query.contains(&s))
}

fn literal_matches(literal: &str, query: &BTreeSet<String>) -> bool {
    let lower = literal.to_lowercase();
    if query.contains(&lower) {
        return true;
    }
    // words inside string literals count too
    lower
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .any(|w| !w.is_empty() && query.contains(w))
}

fn overlap_score(text: &str, query: &BTreeSet<String>) -> u32 {
    let mut found: BTreeSet<&String> = BTreeSet::new();
    for raw in text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_')) {
        if raw.is_empty() {
            continue;
        }
        for segment in split_segments(raw) {
            if let Some(q) = query.get(&segment) {
                found.insert(q);
            }
        }
        if let Some(q) = query.get(&raw.to_lowercase()) {
            found.insert(q);
        }
    }
    found.len() as u32
}

fn window_around(line: u32, line_count: u32) -> LineSpan {
    let start = line.saturating_sub(WINDOW_BEFORE).max(1);
    let end = (line + WINDOW_AFTER).min(line_count);
    LineSpan::new(start, end)
}

fn merge_windows(hit_lines: &BTreeSet<u32>, line_count: u32) -> Vec<LineSpan> {
    let mut spans: Vec<LineSpan> = Vec::new();
    for &line in hit_lines {
        let w = window_around(line, line_count);
        match spans.last_mut() {
            Some(last) if w.start <= last.end + 1 => {
                if w.end > last.end {
                    last.end = w.end;
                }
            }
            _ => spans.push(w),
        }
    }
    spans
}

fn merge_same_file_overlaps(chunks: Vec<Chunk>, index: &CodeBaseIndex) -> Vec<Chunk> {
    let mut by_file: BTreeMap<String, Vec<Chunk>> = BTreeMap::new();
    for c in chunks {
        by_file.entry(c.file.clone()).or_default().push(c);
    }
    let mut out = Vec::new();
    for (file, mut group) in by_file {
        group.sort_by(|a, b| a.span.start.cmp(&b.span.start).then(a.span.end.cmp(&b.span.end)));
        let mut merged: Vec<Chunk> = Vec::new();
        for c in group {
            match merged.last_mut() {
                Some(last) if c.span.start <= last.span.end + 1 => {
                    let span = LineSpan::new(last.span.start, last.span.end.max(c.span.end));
                    let score = last.score.max(c.score);
                    let text = index.slice(&file, span).unwrap_or_else(|| {
                        if c.span.end > last.span.end {
                            c.text.clone()
                        } else {
                            last.text.clone()
                        }
                    });
                    last.span = span;
                    last.score = score;
                    last.text = text;
                }
                _ => merged.push(c),
            }
        }
        out.extend(merged);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PointKind, PointParameter, RuleConfidence, VerificationPoint};

    fn write_tree(files: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (path, content) in files {
            let full = dir.path().join(path);
            if let Some(parent) = full.parent() {
                std::fs::create_dir_all(parent).unwrap();
            }
            std::fs::write(full, content).unwrap();
        }
        dir
    }

    #[test]
    fn empty_directory_scans_to_empty_index() {
        let dir = tempfile::tempdir().unwrap();
        let index = scan(dir.path(), &IndexConfig::default()).unwrap();
        assert!(index.files.is_empty());
        assert!(index.symbols.is_empty());
        assert!(index.edges.is_empty());
    }

    #[test]
    fn rescanning_unchanged_tree_is_byte_identical() {
        let dir = write_tree(&[
            ("a.c", "int limit = 5;\nvoid check(void) { if (x > limit) stop(); }\n"),
            ("b.c", "void stop(void) { halt(); }\n"),
        ]);
        let a = scan(dir.path(), &IndexConfig::default()).unwrap();
        let b = scan(dir.path(), &IndexConfig::default()).unwrap();
        let doc_a = serde_json::to_string(&a.to_document()).unwrap();
        let doc_b = serde_json::to_string(&b.to_document()).unwrap();
        assert_eq!(doc_a, doc_b);
    }

    // 5-file synthetic fixture with a hand-drawn reference graph.
    #[test]
    fn cross_file_edges_match_hand_drawn_graph() {
        let dir = write_tree(&[
            (
                "src/main.c",
                "int main(void) {\n  start_engine();\n  read_config();\n  return 0;\n}\n",
            ),
            (
                "src/engine.c",
                "void start_engine(void) {\n  int r = read_config();\n  spin(r);\n}\n",
            ),
            ("src/config.c", "int read_config(void) {\n  return 7;\n}\n"),
            ("src/spin.c", "void spin(int n) {\n  (void)n;\n}\n"),
            ("docs/notes.txt", "unrelated prose with no identifiers shared\n"),
        ]);
        let index = scan(dir.path(), &IndexConfig::default()).unwrap();
        let expected: BTreeSet<(String, String, String)> = [
            ("src/main.c", "src/engine.c", "start_engine"),
            ("src/main.c", "src/config.c", "read_config"),
            ("src/engine.c", "src/config.c", "read_config"),
            ("src/engine.c", "src/spin.c", "spin"),
        ]
        .iter()
        .map(|(f, t, v)| (f.to_string(), t.to_string(), v.to_string()))
        .collect();
        let got: BTreeSet<(String, String, String)> = index
            .edges
            .iter()
            .map(|e| (e.from.clone(), e.to.clone(), e.via.clone()))
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn binary_files_are_skipped_with_a_note() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("blob.bin"), [0u8, 159, 146, 150]).unwrap();
        std::fs::write(dir.path().join("ok.c"), "int x = 1;\n").unwrap();
        let index = scan(dir.path(), &IndexConfig::default()).unwrap();
        assert_eq!(index.files.len(), 1);
        assert_eq!(index.skipped.len(), 1);
        assert!(index.skipped[0].contains("blob.bin"));
    }

    #[test]
    fn definition_heuristics() {
        let dir = write_tree(&[(
            "x.c",
            "#define MAX_TRIES 5\nstatic void handler(int n) {\n  retry();\n}\nlimit = 10\ntimeout: 30\n",
        )]);
        let index = scan(dir.path(), &IndexConfig::default()).unwrap();
        let defined = |name: &str| {
            index.symbols[name]
                .iter()
                .any(|o| o.is_definition)
        };
        assert!(defined("MAX_TRIES"));
        assert!(defined("handler"));
        assert!(defined("limit"));
        assert!(defined("timeout"));
        assert!(!defined("retry"));
    }

    fn rule_about(statement: &str, subject: &str) -> VerifiableRule {
        VerifiableRule {
            rule_id: "P-001".into(),
            statement: statement.into(),
            points: vec![VerificationPoint {
                kind: PointKind::OperationalTrigger,
                subject: subject.into(),
                parameter: Some(PointParameter::Text(subject.into())),
            }],
            source_requirements: vec!["req-001".into()],
            confidence: RuleConfidence::High,
            provenance: vec!["run-1".into()],
        }
    }

    #[test]
    fn sole_lexical_match_ranks_first() {
        let dir = write_tree(&[
            ("src/hotspot.c", "void hotspot_disable(void) {\n  radio_off();\n}\n"),
            ("src/other.c", "int unrelated_counter = 0;\n"),
        ]);
        let index = scan(dir.path(), &IndexConfig::default()).unwrap();
        let rule = rule_about("The hotspot shall be disabled.", "hotspot");
        let bundle = assemble_context(&rule, &index, &TraceabilityMap::default(), 24 * 1024);
        assert!(!bundle.is_empty());
        assert_eq!(bundle.chunks[0].file, "src/hotspot.c");
        assert!(!bundle.traceability_used);
    }

    #[test]
    fn traced_file_outranks_equal_match() {
        let dir = write_tree(&[
            ("wifi/hotspot.c", "void hotspot_handler(void) {}\n"),
            ("misc/hotspot_notes.c", "void hotspot_helper(void) {}\n"),
        ]);
        let index = scan(dir.path(), &IndexConfig::default()).unwrap();
        let rule = rule_about("The hotspot shall be disabled.", "hotspot");
        let mut tracemap = TraceabilityMap::default();
        tracemap
            .entries
            .insert("req-001".into(), vec!["wifi/hotspot.c".into()]);
        let bundle = assemble_context(&rule, &index, &tracemap, 24 * 1024);
        assert!(bundle.traceability_used);
        assert_eq!(bundle.chunks[0].file, "wifi/hotspot.c");
        assert!(bundle.chunks[0].score > bundle.chunks[1].score);
    }

    #[test]
    fn no_token_overlap_gives_empty_bundle() {
        let dir = write_tree(&[("src/other.c", "int unrelated_counter = 0;\n")]);
        let index = scan(dir.path(), &IndexConfig::default()).unwrap();
        let rule = rule_about("Group keys shall be renewed periodically.", "group key renewal");
        let bundle = assemble_context(&rule, &index, &TraceabilityMap::default(), 24 * 1024);
        assert!(bundle.is_empty());
        assert!(!bundle.trace_entry_present);
    }

    #[test]
    fn chunks_are_verbatim_slices_and_respect_budget() {
        let body: String = (0..120)
            .map(|i| format!("int hotspot_val_{i} = {i};\n"))
            .collect();
        let dir = write_tree(&[("big.c", body.as_str())]);
        let index = scan(dir.path(), &IndexConfig::default()).unwrap();
        let rule = rule_about("The hotspot value shall be bounded.", "hotspot");
        let bundle = assemble_context(&rule, &index, &TraceabilityMap::default(), 24 * 1024);
        assert!(bundle.total_bytes() <= 24 * 1024);
        for chunk in &bundle.chunks {
            let reread = index.slice(&chunk.file, chunk.span).unwrap();
            assert_eq!(chunk.text, reread);
        }
        // tiny budget cuts chunks, never splits them
        let small = assemble_context(&rule, &index, &TraceabilityMap::default(), 10);
        assert!(small.total_bytes() <= 10);
    }

    #[test]
    fn one_hop_edge_pulls_definition_chunk() {
        let dir = write_tree(&[
            (
                "src/hotspot.c",
                "void hotspot_check(void) {\n  int idle = wifi_idle_minutes();\n  (void)idle;\n}\n",
            ),
            (
                "src/wifi_state.c",
                "int wifi_idle_minutes(void) {\n  return counter;\n}\n",
            ),
        ]);
        let index = scan(dir.path(), &IndexConfig::default()).unwrap();
        let rule = rule_about("The hotspot shall be disabled when idle.", "hotspot");
        let bundle = assemble_context(&rule, &index, &TraceabilityMap::default(), 24 * 1024);
        assert!(
            bundle.has_file("src/wifi_state.c"),
            "expected one-hop pull of the referenced definition: {:?}",
            bundle.chunks
        );
    }

    #[test]
    fn adding_an_unrelated_file_changes_nothing() {
        let base = [
            (
                "src/hotspot.c",
                "void hotspot_check(void) {\n  int idle = wifi_idle_minutes();\n}\n",
            ),
            (
                "src/wifi_state.c",
                "int wifi_idle_minutes(void) {\n  return 3;\n}\n",
            ),
        ];
        let dir = write_tree(&base);
        let index = scan(dir.path(), &IndexConfig::default()).unwrap();
        let rule = rule_about("The hotspot shall be disabled when idle.", "hotspot");
        let before = assemble_context(&rule, &index, &TraceabilityMap::default(), 24 * 1024);

        std::fs::write(
            dir.path().join("zz_extra.c"),
            "int bland_counter = 99;\nvoid bland_rotor(void) {}\n",
        )
        .unwrap();
        let index2 = scan(dir.path(), &IndexConfig::default()).unwrap();
        let after = assemble_context(&rule, &index2, &TraceabilityMap::default(), 24 * 1024);
        assert_eq!(before.chunks, after.chunks);
    }

    #[test]
    fn tracemap_parsing_and_stale_detection() {
        let text = "# comment\nreq-001\tsrc/a.c,src/b.c\nreq-002\tmissing/dir\n";
        let map = parse_tracemap_text(text, "trace.tsv").unwrap();
        assert_eq!(map.paths_for("req-001").len(), 2);
        let dir = write_tree(&[("src/a.c", "int x = 1;\n"), ("src/b.c", "int y = 2;\n")]);
        let index = scan(dir.path(), &IndexConfig::default()).unwrap();
        let stale = stale_trace_paths(&map, &index);
        assert_eq!(stale, vec![("req-002".to_string(), "missing/dir".to_string())]);

        assert!(matches!(
            parse_tracemap_text("no-tab-here\n", "trace.tsv"),
            Err(IndexError::MalformedTraceEntry { line: 1, .. })
        ));
    }

    #[test]
    fn include_exclude_globs_are_honored() {
        let dir = write_tree(&[
            ("src/a.c", "int x = 1;\n"),
            ("target/gen.c", "int y = 2;\n"),
        ]);
        let config = IndexConfig {
            include: vec!["**/*.c".into()],
            exclude: vec!["target/**".into()],
        };
        let index = scan(dir.path(), &config).unwrap();
        assert_eq!(index.files.len(), 1);
        assert_eq!(index.files[0].path, "src/a.c");
    }

    #[test]
    fn index_document_round_trips_and_hydrates() {
        let dir = write_tree(&[("src/a.c", "int alpha_limit = 5;\n")]);
        let index = scan(dir.path(), &IndexConfig::default()).unwrap();
        let doc = index.to_document();
        let json = crate::document::to_document_string(&doc);
        let parsed: IndexDocument = serde_json::from_str(&json).unwrap();
        let mut restored = CodeBaseIndex::from_document(parsed);
        assert!(restored.lines("src/a.c").is_none());
        restored.hydrate_texts(dir.path()).unwrap();
        assert_eq!(
            restored.slice("src/a.c", LineSpan::new(1, 1)).unwrap(),
            "int alpha_limit = 5;"
        );
    }

    #[test]
    fn segment_splitting() {
        assert_eq!(split_segments("wifi_idle_minutes"), vec!["wifi", "idle", "minutes"]);
        assert_eq!(split_segments("HotspotTimeout"), vec!["hotspot", "timeout"]);
        assert_eq!(split_segments("TLS12"), vec!["tls", "12"]);
    }
}
