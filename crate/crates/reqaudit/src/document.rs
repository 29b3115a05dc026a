//! Versioned document formats and closed-schema validation.
//!
//! Every artifact the pipeline emits is a JSON document with a fixed
//! `schema_version` and a `kind` discriminator. Schemas are closed: unknown
//! fields are violations, missing required fields are violations, and a
//! document with zero violations round-trips losslessly through the typed
//! representation.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{AuditFinding, PipelineRunMeta, RequirementsSpecsIssue, VerifiableRule};
use crate::pooling::ConflictRecord;
use crate::report::ReportSummary;

pub const SCHEMA_VERSION: &str = "1";

/// One schema problem, addressed by a JSON-path-like string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DocumentError {
    #[error("document is not parseable: {0}")]
    Parse(String),
    #[error("document failed schema validation: {}", format_violations(.0))]
    Schema(Vec<Violation>),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Per-run rules document: the product of one mining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulesDocument {
    pub schema_version: String,
    pub kind: String,
    pub run_meta: PipelineRunMeta,
    pub rules: Vec<VerifiableRule>,
    pub issues: Vec<RequirementsSpecsIssue>,
}

/// Pooled rules document with conflict records and the agreement score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PooledRulesDocument {
    pub schema_version: String,
    pub kind: String,
    pub run_meta: PipelineRunMeta,
    pub agreement: f64,
    pub rules: Vec<VerifiableRule>,
    pub issues: Vec<RequirementsSpecsIssue>,
    pub conflicts: Vec<ConflictRecord>,
}

/// Standalone issues document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssuesDocument {
    pub schema_version: String,
    pub kind: String,
    pub run_meta: PipelineRunMeta,
    pub issues: Vec<RequirementsSpecsIssue>,
}

/// Verdict counts attached to a findings document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSummary {
    pub pass: u32,
    pub fail: u32,
    pub unknown: u32,
    pub fail_unknown_total: u32,
    pub traceability_gap_count: u32,
}

/// Findings document: one finding per audited rule plus the verdict histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindingsDocument {
    pub schema_version: String,
    pub kind: String,
    pub run_meta: PipelineRunMeta,
    pub findings: Vec<AuditFinding>,
    pub summary: AuditSummary,
}

/// Report document wrapping the run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDocument {
    pub schema_version: String,
    pub kind: String,
    pub summary: ReportSummary,
}

/// Serializes any document value in the canonical on-disk form.
pub fn to_document_string<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("document serialization cannot fail");
    s.push('\n');
    s
}

/// Validates a serialized document against its closed schema.
///
/// Returns the violation list (empty means the document round-trips
/// losslessly). A parse failure is a distinct error, not a violation.
pub fn validate_document(text: &str) -> Result<Vec<Violation>, DocumentError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| DocumentError::Parse(e.to_string()))?;
    Ok(validate_value(&value))
}

/// Validates an already-parsed document value.
pub fn validate_value(value: &Value) -> Vec<Violation> {
    let mut v = Vec::new();
    let Some(obj) = value.as_object() else {
        v.push(Violation {
            path: "$".into(),
            message: "document must be a JSON object".into(),
        });
        return v;
    };
    match obj.get("kind").and_then(Value::as_str) {
        Some(kind) => {
            let spec = match kind {
                "rules" => rules_document_spec(),
                "pooled_rules" => pooled_rules_document_spec(),
                "issues" => issues_document_spec(),
                "findings" => findings_document_spec(),
                "report" => report_document_spec(),
                other => {
                    v.push(Violation {
                        path: "kind".into(),
                        message: format!("unknown document kind '{other}'"),
                    });
                    return v;
                }
            };
            check_object("", value, &spec, &mut v);
        }
        None => v.push(Violation {
            path: "kind".into(),
            message: "missing required field".into(),
        }),
    }
    v
}

/// Parses, validates, and deserializes a document in one step.
pub fn load_document<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, DocumentError> {
    let violations = validate_document(text)?;
    if !violations.is_empty() {
        return Err(DocumentError::Schema(violations));
    }
    serde_json::from_str(text).map_err(|e| DocumentError::Parse(e.to_string()))
}

pub fn read_document<T: for<'de> Deserialize<'de>>(
    path: &std::path::Path,
) -> Result<T, DocumentError> {
    let text = std::fs::read_to_string(path).map_err(|source| DocumentError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_document(&text)
}

// --- schema checker -------------------------------------------------------

type Checker = fn(&str, &Value, &mut Vec<Violation>);

struct Field {
    name: &'static str,
    required: bool,
    check: Checker,
}

const fn req(name: &'static str, check: Checker) -> Field {
    Field {
        name,
        required: true,
        check,
    }
}

fn join(path: &str, name: &str) -> String {
    if path.is_empty() {
        name.to_string()
    } else {
        format!("{path}.{name}")
    }
}

fn check_object(path: &str, value: &Value, fields: &[Field], v: &mut Vec<Violation>) {
    let here = if path.is_empty() { "$" } else { path };
    let Some(obj) = value.as_object() else {
        v.push(Violation {
            path: here.into(),
            message: "expected an object".into(),
        });
        return;
    };
    for field in fields {
        match obj.get(field.name) {
            Some(val) => (field.check)(&join(path, field.name), val, v),
            None if field.required => v.push(Violation {
                path: join(path, field.name),
                message: "missing required field".into(),
            }),
            None => {}
        }
    }
    for key in obj.keys() {
        if !fields.iter().any(|f| f.name == key) {
            v.push(Violation {
                path: join(path, key),
                message: format!("unknown field '{key}'"),
            });
        }
    }
}

fn check_string(path: &str, value: &Value, v: &mut Vec<Violation>) {
    if !value.is_string() {
        v.push(Violation {
            path: path.into(),
            message: "expected a string".into(),
        });
    }
}

fn check_nullable_string(path: &str, value: &Value, v: &mut Vec<Violation>) {
    if !value.is_string() && !value.is_null() {
        v.push(Violation {
            path: path.into(),
            message: "expected a string or null".into(),
        });
    }
}

fn check_bool(path: &str, value: &Value, v: &mut Vec<Violation>) {
    if !value.is_boolean() {
        v.push(Violation {
            path: path.into(),
            message: "expected a boolean".into(),
        });
    }
}

fn check_uint(path: &str, value: &Value, v: &mut Vec<Violation>) {
    if value.as_u64().is_none() {
        v.push(Violation {
            path: path.into(),
            message: "expected a non-negative integer".into(),
        });
    }
}

fn check_number(path: &str, value: &Value, v: &mut Vec<Violation>) {
    if value.as_f64().is_none() {
        v.push(Violation {
            path: path.into(),
            message: "expected a number".into(),
        });
    }
}

fn check_schema_version(path: &str, value: &Value, v: &mut Vec<Violation>) {
    if value.as_str() != Some(SCHEMA_VERSION) {
        v.push(Violation {
            path: path.into(),
            message: format!("expected schema_version \"{SCHEMA_VERSION}\""),
        });
    }
}

fn check_enum(path: &str, value: &Value, allowed: &[&str], v: &mut Vec<Violation>) {
    match value.as_str() {
        Some(s) if allowed.contains(&s) => {}
        _ => v.push(Violation {
            path: path.into(),
            message: format!("expected one of {allowed:?}"),
        }),
    }
}

fn check_string_array(path: &str, value: &Value, v: &mut Vec<Violation>) {
    match value.as_array() {
        Some(items) => {
            for (i, item) in items.iter().enumerate() {
                check_string(&format!("{path}[{i}]"), item, v);
            }
        }
        None => v.push(Violation {
            path: path.into(),
            message: "expected an array".into(),
        }),
    }
}

fn check_array_of(
    path: &str,
    value: &Value,
    v: &mut Vec<Violation>,
    item_check: impl Fn(&str, &Value, &mut Vec<Violation>),
) {
    match value.as_array() {
        Some(items) => {
            for (i, item) in items.iter().enumerate() {
                item_check(&format!("{path}[{i}]"), item, v);
            }
        }
        None => v.push(Violation {
            path: path.into(),
            message: "expected an array".into(),
        }),
    }
}

fn run_meta_fields() -> Vec<Field> {
    vec![
        req("run_id", check_string),
        req("timestamp", check_string),
        req("backend", check_string),
        req("temperature", check_number),
        req("run_count", check_uint),
        req("template_hash", check_nullable_string),
    ]
}

fn check_run_meta(path: &str, value: &Value, v: &mut Vec<Violation>) {
    check_object(path, value, &run_meta_fields(), v);
}

fn check_line_span(path: &str, value: &Value, v: &mut Vec<Violation>) {
    check_object(
        path,
        value,
        &[req("start", check_uint), req("end", check_uint)],
        v,
    );
    if let (Some(start), Some(end)) = (
        value.get("start").and_then(Value::as_u64),
        value.get("end").and_then(Value::as_u64),
    ) {
        if start > end {
            v.push(Violation {
                path: path.into(),
                message: "degenerate line span (start > end)".into(),
            });
        }
    }
}

fn check_point(path: &str, value: &Value, v: &mut Vec<Violation>) {
    check_object(
        path,
        value,
        &[
            req("kind", |p, val, v| {
                check_enum(
                    p,
                    val,
                    &[
                        "allowed_value",
                        "prohibited_value",
                        "min_length",
                        "threshold_count",
                        "uniqueness",
                        "operational_trigger",
                    ],
                    v,
                )
            }),
            req("subject", check_string),
            req("parameter", |p, val, v| {
                if !val.is_null() && !val.is_string() && val.as_u64().is_none() {
                    v.push(Violation {
                        path: p.into(),
                        message: "expected a string, non-negative integer, or null".into(),
                    });
                }
            }),
        ],
        v,
    );
    let kind = value.get("kind").and_then(Value::as_str).unwrap_or("");
    let param = value.get("parameter").unwrap_or(&Value::Null);
    match kind {
        "min_length" | "threshold_count" => {
            if param.as_u64().is_none() {
                v.push(Violation {
                    path: join(path, "parameter"),
                    message: format!("{kind} requires a non-negative integer parameter"),
                });
            }
        }
        "allowed_value" | "prohibited_value" => {
            let ok = param.as_u64().is_some()
                || param.as_str().map(|s| !s.trim().is_empty()).unwrap_or(false);
            if !ok {
                v.push(Violation {
                    path: join(path, "parameter"),
                    message: format!("{kind} requires a non-empty parameter"),
                });
            }
        }
        "operational_trigger" => {
            let ok = param.as_str().map(|s| !s.trim().is_empty()).unwrap_or(false);
            if !ok {
                v.push(Violation {
                    path: join(path, "parameter"),
                    message: "operational_trigger requires non-empty condition text".into(),
                });
            }
        }
        _ => {}
    }
}

fn check_rule(path: &str, value: &Value, v: &mut Vec<Violation>) {
    check_object(
        path,
        value,
        &[
            req("rule_id", check_string),
            req("statement", check_string),
            req("points", |p, val, v| check_array_of(p, val, v, check_point)),
            req("source_requirements", check_string_array),
            req("confidence", |p, val, v| {
                check_enum(p, val, &["high", "low"], v)
            }),
            req("provenance", check_string_array),
        ],
        v,
    );
    if let Some(points) = value.get("points").and_then(Value::as_array) {
        if points.is_empty() {
            v.push(Violation {
                path: join(path, "points"),
                message: "a rule must carry at least one verification point".into(),
            });
        }
    }
    if let Some(sources) = value.get("source_requirements").and_then(Value::as_array) {
        if sources.is_empty() {
            v.push(Violation {
                path: join(path, "source_requirements"),
                message: "a rule must cite at least one source requirement".into(),
            });
        }
    }
}

fn check_issue(path: &str, value: &Value, v: &mut Vec<Violation>) {
    check_object(
        path,
        value,
        &[
            req("issue_id", check_string),
            req("kind", |p, val, v| {
                check_enum(
                    p,
                    val,
                    &[
                        "ambiguity",
                        "self_contradiction",
                        "unclear_wording",
                        "undefined_operational_state",
                        "incomplete_acceptance_criteria",
                        "non_verifiable",
                    ],
                    v,
                )
            }),
            req("source_requirements", check_string_array),
            req("excerpt", check_string),
            req("rationale", check_string),
        ],
        v,
    );
    if let Some(sources) = value.get("source_requirements").and_then(Value::as_array) {
        if sources.is_empty() {
            v.push(Violation {
                path: join(path, "source_requirements"),
                message: "an issue must cite at least one source requirement".into(),
            });
        }
    }
}

fn check_evidence(path: &str, value: &Value, v: &mut Vec<Violation>) {
    check_object(
        path,
        value,
        &[
            req("file", check_string),
            req("line_span", check_line_span),
            req("excerpt", check_string),
            req("role", |p, val, v| {
                check_enum(
                    p,
                    val,
                    &[
                        "enabling_path",
                        "constraint",
                        "constant",
                        "configuration",
                        "validation_logic",
                        "cross_file_edge",
                        "suggestive_identifier_only",
                    ],
                    v,
                )
            }),
        ],
        v,
    );
}

fn check_finding(path: &str, value: &Value, v: &mut Vec<Violation>) {
    check_object(
        path,
        value,
        &[
            req("rule_id", check_string),
            req("verdict", |p, val, v| {
                check_enum(p, val, &["pass", "fail", "unknown"], v)
            }),
            req("confidence", |p, val, v| {
                check_enum(p, val, &["high", "low"], v)
            }),
            req("evidence", |p, val, v| {
                check_array_of(p, val, v, check_evidence)
            }),
            req("rationale", check_string),
            req("traceability_gap", check_bool),
        ],
        v,
    );
    let is_fail = value.get("verdict").and_then(Value::as_str) == Some("fail");
    let empty_evidence = value
        .get("evidence")
        .and_then(Value::as_array)
        .map(|a| a.is_empty())
        .unwrap_or(false);
    if is_fail && empty_evidence {
        v.push(Violation {
            path: join(path, "evidence"),
            message: "a fail verdict requires evidence".into(),
        });
    }
}

fn check_conflict(path: &str, value: &Value, v: &mut Vec<Violation>) {
    check_object(
        path,
        value,
        &[
            req("canonical_key", check_string),
            req("variants", |p, val, v| {
                check_array_of(p, val, v, |p, val, v| {
                    check_object(
                        p,
                        val,
                        &[req("run_id", check_string), req("rule", check_rule)],
                        v,
                    )
                })
            }),
            req("resolution", |p, val, v| {
                check_object(
                    p,
                    val,
                    &[
                        req("chosen_rule_id", check_string),
                        req("reason", check_string),
                    ],
                    v,
                )
            }),
        ],
        v,
    );
}

fn check_audit_summary(path: &str, value: &Value, v: &mut Vec<Violation>) {
    check_object(
        path,
        value,
        &[
            req("pass", check_uint),
            req("fail", check_uint),
            req("unknown", check_uint),
            req("fail_unknown_total", check_uint),
            req("traceability_gap_count", check_uint),
        ],
        v,
    );
}

fn check_report_summary(path: &str, value: &Value, v: &mut Vec<Violation>) {
    check_object(
        path,
        value,
        &[
            req("items_analyzed", check_uint),
            req("issues_found", check_uint),
            req("issue_rate", check_number),
            req("rules_total", check_uint),
            req("verdicts", check_audit_summary_verdicts),
            req("fail_unknown_total", check_uint),
            req("traceability_gap_count", check_uint),
            req("agreement", check_number),
            req("run_meta", check_run_meta),
        ],
        v,
    );
}

fn check_audit_summary_verdicts(path: &str, value: &Value, v: &mut Vec<Violation>) {
    check_object(
        path,
        value,
        &[
            req("pass", check_uint),
            req("fail", check_uint),
            req("unknown", check_uint),
        ],
        v,
    );
}

fn kind_field(expected: &'static str) -> Field {
    // The closure cannot capture, so each expected kind gets its own checker.
    match expected {
        "rules" => req("kind", |p, val, v| check_enum(p, val, &["rules"], v)),
        "pooled_rules" => req("kind", |p, val, v| check_enum(p, val, &["pooled_rules"], v)),
        "issues" => req("kind", |p, val, v| check_enum(p, val, &["issues"], v)),
        "findings" => req("kind", |p, val, v| check_enum(p, val, &["findings"], v)),
        "report" => req("kind", |p, val, v| check_enum(p, val, &["report"], v)),
        _ => unreachable!("unknown document kind spec"),
    }
}

fn rules_document_spec() -> Vec<Field> {
    vec![
        req("schema_version", check_schema_version),
        kind_field("rules"),
        req("run_meta", check_run_meta),
        req("rules", |p, val, v| check_array_of(p, val, v, check_rule)),
        req("issues", |p, val, v| check_array_of(p, val, v, check_issue)),
    ]
}

fn pooled_rules_document_spec() -> Vec<Field> {
    vec![
        req("schema_version", check_schema_version),
        kind_field("pooled_rules"),
        req("run_meta", check_run_meta),
        req("agreement", check_number),
        req("rules", |p, val, v| check_array_of(p, val, v, check_rule)),
        req("issues", |p, val, v| check_array_of(p, val, v, check_issue)),
        req("conflicts", |p, val, v| {
            check_array_of(p, val, v, check_conflict)
        }),
    ]
}

fn issues_document_spec() -> Vec<Field> {
    vec![
        req("schema_version", check_schema_version),
        kind_field("issues"),
        req("run_meta", check_run_meta),
        req("issues", |p, val, v| check_array_of(p, val, v, check_issue)),
    ]
}

fn findings_document_spec() -> Vec<Field> {
    vec![
        req("schema_version", check_schema_version),
        kind_field("findings"),
        req("run_meta", check_run_meta),
        req("findings", |p, val, v| {
            check_array_of(p, val, v, check_finding)
        }),
        req("summary", check_audit_summary),
    ]
}

fn report_document_spec() -> Vec<Field> {
    vec![
        req("schema_version", check_schema_version),
        kind_field("report"),
        req("summary", check_report_summary),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    fn sample_meta() -> PipelineRunMeta {
        PipelineRunMeta {
            run_id: "run-1".into(),
            timestamp: "1970-01-01T00:00:00Z".into(),
            backend: "scripted".into(),
            temperature: 0.0,
            run_count: 1,
            template_hash: None,
        }
    }

    fn sample_rules_doc() -> RulesDocument {
        RulesDocument {
            schema_version: SCHEMA_VERSION.into(),
            kind: "rules".into(),
            run_meta: sample_meta(),
            rules: vec![VerifiableRule {
                rule_id: "R1-001".into(),
                statement: "The password shall be at least 8 characters long.".into(),
                points: vec![VerificationPoint {
                    kind: PointKind::MinLength,
                    subject: "password".into(),
                    parameter: Some(PointParameter::Count(8)),
                }],
                source_requirements: vec!["doc-001".into()],
                confidence: RuleConfidence::High,
                provenance: vec!["run-1".into()],
            }],
            issues: vec![RequirementsSpecsIssue {
                issue_id: "I1-001".into(),
                kind: IssueKind::Ambiguity,
                source_requirements: vec!["doc-002".into()],
                excerpt: "should be strong".into(),
                rationale: "vague term without measurable grounding".into(),
            }],
        }
    }

    #[test]
    fn valid_document_round_trips_with_no_violations() {
        let doc = sample_rules_doc();
        let text = to_document_string(&doc);
        let violations = validate_document(&text).unwrap();
        assert!(violations.is_empty(), "unexpected: {violations:?}");
        let back: RulesDocument = load_document(&text).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn empty_points_is_a_violation_at_the_right_path() {
        let mut doc = sample_rules_doc();
        doc.rules[0].points.clear();
        let text = to_document_string(&doc);
        let violations = validate_document(&text).unwrap();
        assert!(
            violations.iter().any(|v| v.path == "rules[0].points"),
            "got {violations:?}"
        );
    }

    #[test]
    fn unknown_top_level_field_is_named() {
        let doc = sample_rules_doc();
        let mut value = serde_json::to_value(&doc).unwrap();
        value
            .as_object_mut()
            .unwrap()
            .insert("extra".into(), serde_json::json!(1));
        let text = serde_json::to_string(&value).unwrap();
        let violations = validate_document(&text).unwrap();
        assert!(
            violations
                .iter()
                .any(|v| v.path == "extra" && v.message.contains("extra")),
            "got {violations:?}"
        );
    }

    #[test]
    fn parse_failure_is_distinct_from_schema_violation() {
        let err = validate_document("{not json").unwrap_err();
        assert!(matches!(err, DocumentError::Parse(_)));
    }

    #[test]
    fn findings_document_fail_requires_evidence() {
        let doc = FindingsDocument {
            schema_version: SCHEMA_VERSION.into(),
            kind: "findings".into(),
            run_meta: sample_meta(),
            findings: vec![AuditFinding {
                rule_id: "P-001".into(),
                verdict: Verdict::Fail,
                confidence: RuleConfidence::High,
                evidence: vec![],
                rationale: "mismatch".into(),
                traceability_gap: false,
            }],
            summary: AuditSummary {
                pass: 0,
                fail: 1,
                unknown: 0,
                fail_unknown_total: 1,
                traceability_gap_count: 0,
            },
        };
        let text = to_document_string(&doc);
        let violations = validate_document(&text).unwrap();
        assert!(violations
            .iter()
            .any(|v| v.path == "findings[0].evidence"));
    }
}
