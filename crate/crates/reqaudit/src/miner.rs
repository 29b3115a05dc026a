//! The rule-mining agent: prompt construction, response parsing, and the
//! deterministic sanitization gate.
//!
//! The gate is enforced in code, layered over whatever the model returns:
//! rules sourced only from informative or permissive statements are demoted,
//! ungrounded vague terms become ambiguity issues, ungrounded should-rules
//! are demoted, and every kept rule tainted by a vague term or an associated
//! issue is marked low-confidence. Demotion conserves content — each demoted
//! rule reappears as exactly one issue carrying the rule's id.

use crate::backend::{sha256_hex, Backend, BackendRequest};
use crate::ingest::{detect_vague_terms, VagueTermLexicon};
use crate::model::{
    IssueKind, NormativeStrength, PipelineRunMeta, PointParameter, RequirementItem,
    RequirementsSpecsIssue, RuleConfidence, RuleSet, VerifiableRule, VerificationPoint,
};

pub const MINING_TEMPLATE: &str = include_str!("../templates/mining.txt");

/// Mining-stage knobs; `batch_size` bounds statements per prompt.
#[derive(Debug, Clone)]
pub struct MinerConfig {
    pub model: String,
    pub temperature: f64,
    pub max_output: u32,
    pub batch_size: usize,
    pub security_relevant: bool,
    pub max_runs: u32,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self {
            model: "offline".into(),
            temperature: 0.0,
            max_output: 4096,
            batch_size: 40,
            security_relevant: false,
            max_runs: 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MinerError {
    #[error("mining batch is empty")]
    EmptyBatch,
    #[error("mining batch of {got} statements exceeds the configured limit of {limit}")]
    OversizeBatch { got: usize, limit: usize },
    #[error("run_count {0} outside the allowed range 1..={1}")]
    InvalidRunCount(u32, u32),
    #[error("no structured block found in mining response")]
    NoStructuredBlock,
    #[error("all {0} mining runs failed")]
    AllRunsFailed(u32),
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
}

/// A rule as proposed by the backend, before ids and sanitization.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposedRule {
    pub statement: String,
    pub points: Vec<VerificationPoint>,
    pub source_requirements: Vec<String>,
    pub confidence: RuleConfidence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposedIssue {
    pub kind: IssueKind,
    pub source_requirements: Vec<String>,
    pub excerpt: String,
    pub rationale: String,
}

/// Parsed and referentially-validated mining response.
#[derive(Debug, Clone, Default)]
pub struct MiningResponse {
    pub rules: Vec<ProposedRule>,
    pub issues: Vec<ProposedIssue>,
    pub unparsed_remainder: Option<String>,
    pub diagnostics: Vec<String>,
}

/// Builds the mining prompt: instructions, schema, and every item verbatim
/// with its id, strength, and vague-term annotations. Byte-identical for
/// identical inputs.
pub fn build_mining_prompt(
    items: &[RequirementItem],
    config: &MinerConfig,
    lexicon: &VagueTermLexicon,
) -> Result<String, MinerError> {
    if items.is_empty() {
        return Err(MinerError::EmptyBatch);
    }
    if items.len() > config.batch_size {
        return Err(MinerError::OversizeBatch {
            got: items.len(),
            limit: config.batch_size,
        });
    }
    let mut block = String::new();
    for item in items {
        let vague = if item.vague_terms.is_empty() {
            String::new()
        } else {
            format!("; vague: {}", item.vague_terms.join(", "))
        };
        block.push_str(&format!(
            "[{}] ({}{}) {}\n",
            item.id, item.strength, vague, item.text
        ));
    }
    let terms: Vec<&str> = lexicon.terms().collect();
    Ok(MINING_TEMPLATE
        .replace("{{vague_terms}}", &terms.join(", "))
        .replace(
            "{{security_relevant}}",
            if config.security_relevant { "yes" } else { "no" },
        )
        .replace("{{items}}", block.trim_end()))
}

pub fn mining_template_hash() -> String {
    sha256_hex(MINING_TEMPLATE.as_bytes())
}

/// Extracts the structured block from raw response text: a fenced code block
/// if present, otherwise the first balanced JSON object. Text around the
/// block is preserved as the unparsed remainder.
pub(crate) fn extract_structured_block(raw: &str) -> Option<(serde_json::Value, Option<String>)> {
    if let Some(fence_start) = raw.find("```") {
        let after = &raw[fence_start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        if let Some(fence_end) = after[body_start..].find("```") {
            let body = &after[body_start..body_start + fence_end];
            if let Ok(value) = serde_json::from_str::<serde_json::Value>(body.trim()) {
                let mut remainder = String::new();
                remainder.push_str(raw[..fence_start].trim());
                let tail = after[body_start + fence_end + 3..].trim();
                if !tail.is_empty() {
                    if !remainder.is_empty() {
                        remainder.push('\n');
                    }
                    remainder.push_str(tail);
                }
                let remainder = (!remainder.is_empty()).then_some(remainder);
                return Some((value, remainder));
            }
        }
    }
    // first balanced brace run that parses
    let bytes = raw.as_bytes();
    for start in 0..bytes.len() {
        if bytes[start] != b'{' {
            continue;
        }
        if let Some(end) = balanced_end(raw, start) {
            let candidate = &raw[start..end];
            if let Ok(value) = serde_json::from_str::<serde_json::Value>(candidate) {
                let mut remainder = String::new();
                remainder.push_str(raw[..start].trim());
                let tail = raw[end..].trim();
                if !tail.is_empty() {
                    if !remainder.is_empty() {
                        remainder.push('\n');
                    }
                    remainder.push_str(tail);
                }
                let remainder = (!remainder.is_empty()).then_some(remainder);
                return Some((value, remainder));
            }
        }
    }
    None
}

/// Byte offset one past the brace that closes the object opening at `start`,
/// honoring JSON string and escape rules.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0i32;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses a raw mining response against the batch. Malformed entries are
/// dropped with a diagnostic, never coerced; unknown requirement references
/// drop the entry.
pub fn parse_mining_response(
    raw: &str,
    batch: &[RequirementItem],
) -> Result<MiningResponse, MinerError> {
    let (value, unparsed_remainder) =
        extract_structured_block(raw).ok_or(MinerError::NoStructuredBlock)?;
    let mut out = MiningResponse {
        unparsed_remainder,
        ..Default::default()
    };
    let known_id = |id: &str| batch.iter().any(|item| item.id == id);

    for (i, entry) in array_field(&value, "rules").iter().enumerate() {
        match parse_rule_entry(entry) {
            Ok(rule) => {
                if let Some(bad) = rule
                    .source_requirements
                    .iter()
                    .find(|id| !known_id(id))
                {
                    out.diagnostics.push(format!(
                        "rules[{i}] dropped: unknown requirement id {bad}"
                    ));
                } else {
                    out.rules.push(rule);
                }
            }
            Err(msg) => out.diagnostics.push(format!("rules[{i}] dropped: {msg}")),
        }
    }
    for (i, entry) in array_field(&value, "issues").iter().enumerate() {
        match parse_issue_entry(entry) {
            Ok(issue) => {
                if let Some(bad) = issue
                    .source_requirements
                    .iter()
                    .find(|id| !known_id(id))
                {
                    out.diagnostics.push(format!(
                        "issues[{i}] dropped: unknown requirement id {bad}"
                    ));
                } else {
                    out.issues.push(issue);
                }
            }
            Err(msg) => out.diagnostics.push(format!("issues[{i}] dropped: {msg}")),
        }
    }
    Ok(out)
}

fn array_field<'a>(value: &'a serde_json::Value, name: &str) -> Vec<&'a serde_json::Value> {
    value
        .get(name)
        .and_then(|v| v.as_array())
        .map(|a| a.iter().collect())
        .unwrap_or_default()
}

fn parse_rule_entry(entry: &serde_json::Value) -> Result<ProposedRule, String> {
    let statement = entry
        .get("statement")
        .and_then(|v| v.as_str())
        .filter(|s| !s.trim().is_empty())
        .ok_or("missing or empty statement")?
        .to_string();
    let sources = string_array(entry.get("source_requirements"))
        .ok_or("missing source_requirements")?;
    if sources.is_empty() {
        return Err("empty source_requirements".into());
    }
    let confidence = match entry.get("confidence").and_then(|v| v.as_str()) {
        Some("low") => RuleConfidence::Low,
        Some("high") | None => RuleConfidence::High,
        Some(other) => return Err(format!("invalid confidence '{other}'")),
    };
    let mut points = Vec::new();
    if let Some(raw_points) = entry.get("points").and_then(|v| v.as_array()) {
        for (i, p) in raw_points.iter().enumerate() {
            let point = parse_point(p).map_err(|msg| format!("points[{i}]: {msg}"))?;
            points.push(point);
        }
    }
    Ok(ProposedRule {
        statement,
        points,
        source_requirements: sources,
        confidence,
    })
}

fn parse_point(value: &serde_json::Value) -> Result<VerificationPoint, String> {
    let kind = value
        .get("kind")
        .cloned()
        .ok_or("missing kind")
        .and_then(|k| {
            serde_json::from_value(k).map_err(|_| "invalid point kind")
        })
        .map_err(|e| e.to_string())?;
    let subject = value
        .get("subject")
        .and_then(|v| v.as_str())
        .filter(|s| !s.trim().is_empty())
        .ok_or("missing subject")?
        .to_string();
    let parameter = match value.get("parameter") {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::Number(n)) => Some(PointParameter::Count(
            n.as_u64().ok_or("parameter must be a non-negative integer")?,
        )),
        Some(serde_json::Value::String(s)) => Some(PointParameter::Text(s.clone())),
        Some(_) => return Err("parameter must be a number, string, or null".into()),
    };
    let point = VerificationPoint {
        kind,
        subject,
        parameter,
    };
    point.validate().map_err(|e| e.to_string())?;
    Ok(point)
}

fn parse_issue_entry(entry: &serde_json::Value) -> Result<ProposedIssue, String> {
    let kind = entry
        .get("kind")
        .cloned()
        .ok_or_else(|| "missing kind".to_string())
        .and_then(|k| {
            serde_json::from_value(k).map_err(|_| "invalid issue kind".to_string())
        })?;
    let sources = string_array(entry.get("source_requirements"))
        .ok_or("missing source_requirements")?;
    if sources.is_empty() {
        return Err("empty source_requirements".into());
    }
    let excerpt = entry
        .get("excerpt")
        .and_then(|v| v.as_str())
        .ok_or("missing excerpt")?
        .to_string();
    let rationale = entry
        .get("rationale")
        .and_then(|v| v.as_str())
        .unwrap_or("")
        .to_string();
    Ok(ProposedIssue {
        kind,
        source_requirements: sources,
        excerpt,
        rationale,
    })
}

fn string_array(value: Option<&serde_json::Value>) -> Option<Vec<String>> {
    let arr = value?.as_array()?;
    let mut out = Vec::with_capacity(arr.len());
    for v in arr {
        out.push(v.as_str()?.to_string());
    }
    Some(out)
}

/// The deterministic sanitization gate. Total and idempotent: it never
/// increases rule count, and every demoted rule appears as exactly one issue
/// (reusing the rule's id).
pub fn sanitize(
    rules: Vec<VerifiableRule>,
    issues: Vec<RequirementsSpecsIssue>,
    items: &[RequirementItem],
    lexicon: &VagueTermLexicon,
    security_relevant: bool,
) -> (Vec<VerifiableRule>, Vec<RequirementsSpecsIssue>) {
    let find_item = |id: &str| items.iter().find(|it| it.id == id);
    let mut kept: Vec<VerifiableRule> = Vec::new();
    let mut out_issues: Vec<RequirementsSpecsIssue> = Vec::new();

    // (e) incoming issues pass through with excerpts re-verified
    for mut issue in issues {
        if !issue.excerpt_is_verbatim(items) {
            if let Some(item) = issue.source_requirements.first().and_then(|id| find_item(id)) {
                issue.excerpt = item.text.clone();
            }
        }
        out_issues.push(issue);
    }

    for rule in rules {
        let sources: Vec<&RequirementItem> = rule
            .source_requirements
            .iter()
            .filter_map(|id| find_item(id))
            .collect();
        let strongest = sources
            .iter()
            .map(|s| s.strength)
            .max()
            .unwrap_or(NormativeStrength::Informative);
        let has_measurable_parameter = rule
            .points
            .iter()
            .any(|p| matches!(p.parameter, Some(PointParameter::Count(_))));
        let has_concrete_parameter = rule.points.iter().any(|p| match &p.parameter {
            Some(PointParameter::Count(_)) => true,
            Some(PointParameter::Text(s)) => !s.trim().is_empty(),
            None => false,
        });
        let statement_vague: Vec<String> = detect_vague_terms(&rule.statement, lexicon)
            .into_iter()
            .map(|h| h.term)
            .collect();

        let demotion: Option<(IssueKind, String)> = if rule.points.is_empty() {
            Some((
                IssueKind::NonVerifiable,
                "proposed rule carries no verification points".into(),
            ))
        } else if strongest <= NormativeStrength::May {
            Some((
                IssueKind::NonVerifiable,
                "sourced only from informative or permissive statements".into(),
            ))
        } else if !statement_vague.is_empty() && !has_measurable_parameter {
            Some((
                IssueKind::Ambiguity,
                format!(
                    "vague term '{}' is not grounded in a measurable verification condition",
                    statement_vague.join("', '")
                ),
            ))
        } else if strongest == NormativeStrength::Should
            && !security_relevant
            && !has_concrete_parameter
        {
            Some((
                IssueKind::NonVerifiable,
                "should-statement without security-relevant context or a concrete parameter"
                    .into(),
            ))
        } else {
            None
        };

        match demotion {
            Some((kind, reason)) => {
                // the demoted issue keeps the rule's id if it is not already
                // present, so repeated sanitization is a fixpoint
                if !out_issues.iter().any(|i| i.issue_id == rule.rule_id) {
                    let excerpt = sources
                        .first()
                        .map(|s| s.text.clone())
                        .unwrap_or_else(|| rule.statement.clone());
                    out_issues.push(RequirementsSpecsIssue {
                        issue_id: rule.rule_id.clone(),
                        kind,
                        source_requirements: rule.source_requirements.clone(),
                        excerpt,
                        rationale: format!(
                            "{reason} (demoted rule statement: \"{}\")",
                            rule.statement
                        ),
                    });
                }
            }
            None => kept.push(rule),
        }
    }

    // (d) low confidence for rules with vague-term sources or associated issues
    for rule in &mut kept {
        let tainted_source = rule.source_requirements.iter().any(|id| {
            find_item(id)
                .map(|item| !item.vague_terms.is_empty())
                .unwrap_or(false)
        });
        let associated_issue = out_issues.iter().any(|issue| {
            issue
                .source_requirements
                .iter()
                .any(|id| rule.source_requirements.contains(id))
        });
        if tainted_source || associated_issue {
            rule.confidence = RuleConfidence::Low;
        }
    }

    (kept, out_issues)
}

/// Outcome of `mine`: one rule set per successful run.
#[derive(Debug)]
pub struct MineOutcome {
    pub rulesets: Vec<RuleSet>,
    pub failed_runs: Vec<(String, String)>,
    pub diagnostics: Vec<String>,
}

/// Performs `run_count` independent mining passes over the items.
///
/// Each pass batches the items, calls the backend (with one retry when a
/// response has no parseable structured block), sanitizes, and assembles a
/// rule set stamped with a distinct run id. Pooling can proceed if at least
/// one run succeeded.
pub fn mine(
    items: &[RequirementItem],
    backend: &dyn Backend,
    run_count: u32,
    config: &MinerConfig,
    lexicon: &VagueTermLexicon,
    timestamp: &str,
) -> Result<MineOutcome, MinerError> {
    if run_count < 1 || run_count > config.max_runs {
        return Err(MinerError::InvalidRunCount(run_count, config.max_runs));
    }
    let mut outcome = MineOutcome {
        rulesets: Vec::new(),
        failed_runs: Vec::new(),
        diagnostics: Vec::new(),
    };
    let batches: Vec<&[RequirementItem]> = if items.is_empty() {
        Vec::new()
    } else {
        items.chunks(config.batch_size.max(1)).collect()
    };

    for run_index in 1..=run_count {
        let run_id = format!("run-{run_index}");
        match mine_single_run(&batches, backend, config, lexicon, items) {
            Ok((proposed_rules, proposed_issues, mut diagnostics)) => {
                outcome.diagnostics.append(&mut diagnostics);
                let rules: Vec<VerifiableRule> = proposed_rules
                    .into_iter()
                    .enumerate()
                    .map(|(i, p)| VerifiableRule {
                        rule_id: format!("R{run_index}-{:03}", i + 1),
                        statement: p.statement,
                        points: p.points,
                        source_requirements: p.source_requirements,
                        confidence: p.confidence,
                        provenance: vec![run_id.clone()],
                    })
                    .collect();
                let issues: Vec<RequirementsSpecsIssue> = proposed_issues
                    .into_iter()
                    .enumerate()
                    .map(|(i, p)| RequirementsSpecsIssue {
                        issue_id: format!("I{run_index}-{:03}", i + 1),
                        kind: p.kind,
                        source_requirements: p.source_requirements,
                        excerpt: p.excerpt,
                        rationale: p.rationale,
                    })
                    .collect();
                let (kept, issues) =
                    sanitize(rules, issues, items, lexicon, config.security_relevant);
                outcome.rulesets.push(RuleSet {
                    rules: kept,
                    issues,
                    run_meta: PipelineRunMeta {
                        run_id,
                        timestamp: timestamp.to_string(),
                        backend: backend.name().to_string(),
                        temperature: config.temperature,
                        run_count,
                        template_hash: Some(mining_template_hash()),
                    },
                });
            }
            Err(e) => outcome.failed_runs.push((run_id, e.to_string())),
        }
    }

    if outcome.rulesets.is_empty() && run_count > 0 && !batches.is_empty() {
        return Err(MinerError::AllRunsFailed(run_count));
    }
    if batches.is_empty() {
        // an empty document mines to empty rule sets, one per run
        for run_index in 1..=run_count {
            if outcome.rulesets.len() < run_count as usize {
                outcome.rulesets.push(RuleSet {
                    rules: vec![],
                    issues: vec![],
                    run_meta: PipelineRunMeta {
                        run_id: format!("run-{run_index}"),
                        timestamp: timestamp.to_string(),
                        backend: backend.name().to_string(),
                        temperature: config.temperature,
                        run_count,
                        template_hash: Some(mining_template_hash()),
                    },
                });
            }
        }
    }
    Ok(outcome)
}

type RunProposals = (Vec<ProposedRule>, Vec<ProposedIssue>, Vec<String>);

fn mine_single_run(
    batches: &[&[RequirementItem]],
    backend: &dyn Backend,
    config: &MinerConfig,
    lexicon: &VagueTermLexicon,
    items: &[RequirementItem],
) -> Result<RunProposals, MinerError> {
    let _ = items;
    let mut rules = Vec::new();
    let mut issues = Vec::new();
    let mut diagnostics = Vec::new();
    let responses = run_batches(batches, backend, config, lexicon)?;
    for mut response in responses {
        rules.append(&mut response.rules);
        issues.append(&mut response.issues);
        diagnostics.append(&mut response.diagnostics);
    }
    Ok((rules, issues, diagnostics))
}

/// Mines the batches, concurrently when the backend permits, preserving
/// batch order in the collected output.
fn run_batches(
    batches: &[&[RequirementItem]],
    backend: &dyn Backend,
    config: &MinerConfig,
    lexicon: &VagueTermLexicon,
) -> Result<Vec<MiningResponse>, MinerError> {
    let bound = backend.parallelism().max(1);
    let mine_one = |batch: &[RequirementItem]| -> Result<MiningResponse, MinerError> {
        let prompt = build_mining_prompt(batch, config, lexicon)?;
        let request = BackendRequest {
            model: config.model.clone(),
            temperature: config.temperature,
            prompt,
            max_output: config.max_output,
        };
        let first = backend.send(&request)?;
        match parse_mining_response(&first.text, batch) {
            Ok(resp) => Ok(resp),
            Err(MinerError::NoStructuredBlock) => {
                // one retry for transient formatting noise, then hard error
                let second = backend.send(&request)?;
                parse_mining_response(&second.text, batch)
            }
            Err(e) => Err(e),
        }
    };

    if bound <= 1 || batches.len() <= 1 {
        batches.iter().map(|b| mine_one(b)).collect()
    } else {
        let mut results: Vec<Option<Result<MiningResponse, MinerError>>> =
            (0..batches.len()).map(|_| None).collect();
        for wave in (0..batches.len()).collect::<Vec<_>>().chunks(bound) {
            std::thread::scope(|scope| {
                let mut handles = Vec::new();
                for &idx in wave {
                    let batch = batches[idx];
                    handles.push((idx, scope.spawn(move || mine_one(batch))));
                }
                for (idx, handle) in handles {
                    results[idx] = Some(handle.join().expect("mining thread panicked"));
                }
            });
        }
        results
            .into_iter()
            .map(|r| r.expect("every batch produced a result"))
            .collect()
    }
}
