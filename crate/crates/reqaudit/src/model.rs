//! Shared domain types: requirement items, verifiable rules, quarantined
//! requirement issues, audit findings, and the verdict algebra.
//!
//! All values are immutable after construction and safe to share across
//! threads; the operations here are pure functions.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A half-open reference into a text document, 1-based and inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpan {
    pub start: u32,
    pub end: u32,
}

impl LineSpan {
    pub fn new(start: u32, end: u32) -> Self {
        Self { start, end }
    }

    /// A span is degenerate when start > end.
    pub fn is_valid(&self) -> bool {
        self.start <= self.end
    }
}

/// Location of a requirement statement inside its source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceRef {
    pub path: String,
    pub line_span: LineSpan,
}

/// Normative force of a requirement statement, ascending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormativeStrength {
    Informative,
    May,
    Should,
    Shall,
}

impl fmt::Display for NormativeStrength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NormativeStrength::Informative => "informative",
            NormativeStrength::May => "may",
            NormativeStrength::Should => "should",
            NormativeStrength::Shall => "shall",
        };
        f.write_str(s)
    }
}

/// One normative-candidate statement extracted from a requirements document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequirementItem {
    pub id: String,
    pub text: String,
    pub source: SourceRef,
    pub strength: NormativeStrength,
    pub vague_terms: Vec<String>,
}

impl RequirementItem {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.text.trim().is_empty() {
            return Err(ModelError::Invariant(format!(
                "requirement {} has empty text",
                self.id
            )));
        }
        if !self.source.line_span.is_valid() {
            return Err(ModelError::Invariant(format!(
                "requirement {} has degenerate line span",
                self.id
            )));
        }
        Ok(())
    }
}

/// The machine-checkable facet kinds a rule can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    AllowedValue,
    ProhibitedValue,
    MinLength,
    ThresholdCount,
    Uniqueness,
    OperationalTrigger,
}

impl PointKind {
    pub const ALL: [PointKind; 6] = [
        PointKind::AllowedValue,
        PointKind::ProhibitedValue,
        PointKind::MinLength,
        PointKind::ThresholdCount,
        PointKind::Uniqueness,
        PointKind::OperationalTrigger,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PointKind::AllowedValue => "allowed_value",
            PointKind::ProhibitedValue => "prohibited_value",
            PointKind::MinLength => "min_length",
            PointKind::ThresholdCount => "threshold_count",
            PointKind::Uniqueness => "uniqueness",
            PointKind::OperationalTrigger => "operational_trigger",
        }
    }
}

/// Scalar or textual payload of a verification point.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointParameter {
    Count(u64),
    Text(String),
}

impl PointParameter {
    pub fn as_count(&self) -> Option<u64> {
        match self {
            PointParameter::Count(n) => Some(*n),
            PointParameter::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            PointParameter::Count(_) => None,
            PointParameter::Text(s) => Some(s),
        }
    }
}

impl fmt::Display for PointParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointParameter::Count(n) => write!(f, "{n}"),
            PointParameter::Text(s) => f.write_str(s),
        }
    }
}

/// A concrete, checkable facet of a verifiable rule.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationPoint {
    pub kind: PointKind,
    pub subject: String,
    pub parameter: Option<PointParameter>,
}

impl VerificationPoint {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: &str| {
            Err(ModelError::Invariant(format!(
                "{} point on '{}': {msg}",
                self.kind.name(),
                self.subject
            )))
        };
        match self.kind {
            PointKind::MinLength | PointKind::ThresholdCount => match &self.parameter {
                Some(PointParameter::Count(_)) => Ok(()),
                _ => fail("requires a non-negative integer parameter"),
            },
            PointKind::AllowedValue | PointKind::ProhibitedValue => match &self.parameter {
                Some(PointParameter::Text(s)) if !s.trim().is_empty() => Ok(()),
                Some(PointParameter::Count(_)) => Ok(()),
                _ => fail("requires a non-empty parameter"),
            },
            PointKind::OperationalTrigger => match &self.parameter {
                Some(PointParameter::Text(s)) if !s.trim().is_empty() => Ok(()),
                _ => fail("requires non-empty condition text"),
            },
            PointKind::Uniqueness => Ok(()),
        }
    }
}

/// Binary rule confidence; Low marks rules tainted by vague terms or issues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleConfidence {
    High,
    Low,
}

impl RuleConfidence {
    /// Pessimistic combination: any Low wins.
    pub fn join(self, other: RuleConfidence) -> RuleConfidence {
        if self == RuleConfidence::Low || other == RuleConfidence::Low {
            RuleConfidence::Low
        } else {
            RuleConfidence::High
        }
    }
}

impl fmt::Display for RuleConfidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleConfidence::High => "high",
            RuleConfidence::Low => "low",
        })
    }
}

/// An enforceable, falsifiable obligation mined from requirements text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifiableRule {
    pub rule_id: String,
    pub statement: String,
    pub points: Vec<VerificationPoint>,
    pub source_requirements: Vec<String>,
    pub confidence: RuleConfidence,
    pub provenance: Vec<String>,
}

impl VerifiableRule {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.points.is_empty() {
            return Err(ModelError::Invariant(format!(
                "rule {} has no verification points",
                self.rule_id
            )));
        }
        if self.source_requirements.is_empty() {
            return Err(ModelError::Invariant(format!(
                "rule {} has no source requirements",
                self.rule_id
            )));
        }
        for p in &self.points {
            p.validate()?;
        }
        Ok(())
    }
}

/// Categories of quarantined requirement defects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    Ambiguity,
    SelfContradiction,
    UnclearWording,
    UndefinedOperationalState,
    IncompleteAcceptanceCriteria,
    NonVerifiable,
}

impl IssueKind {
    pub const ALL: [IssueKind; 6] = [
        IssueKind::Ambiguity,
        IssueKind::SelfContradiction,
        IssueKind::UnclearWording,
        IssueKind::UndefinedOperationalState,
        IssueKind::IncompleteAcceptanceCriteria,
        IssueKind::NonVerifiable,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            IssueKind::Ambiguity => "ambiguity",
            IssueKind::SelfContradiction => "self_contradiction",
            IssueKind::UnclearWording => "unclear_wording",
            IssueKind::UndefinedOperationalState => "undefined_operational_state",
            IssueKind::IncompleteAcceptanceCriteria => "incomplete_acceptance_criteria",
            IssueKind::NonVerifiable => "non_verifiable",
        }
    }
}

/// A requirement defect that must never be converted into a rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequirementsSpecsIssue {
    pub issue_id: String,
    pub kind: IssueKind,
    pub source_requirements: Vec<String>,
    pub excerpt: String,
    pub rationale: String,
}

impl RequirementsSpecsIssue {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.source_requirements.is_empty() {
            return Err(ModelError::Invariant(format!(
                "issue {} has no source requirements",
                self.issue_id
            )));
        }
        Ok(())
    }

    /// Checks that the excerpt is verbatim within its sources' concatenated text.
    pub fn excerpt_is_verbatim(&self, items: &[RequirementItem]) -> bool {
        let concatenated = self
            .source_requirements
            .iter()
            .filter_map(|id| items.iter().find(|it| &it.id == id))
            .map(|it| it.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        concatenated.contains(&self.excerpt)
    }
}

/// Metadata stamped onto every produced document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineRunMeta {
    pub run_id: String,
    pub timestamp: String,
    pub backend: String,
    pub temperature: f64,
    pub run_count: u32,
    pub template_hash: Option<String>,
}

/// Product of one mining run: kept rules plus quarantined issues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    pub rules: Vec<VerifiableRule>,
    pub issues: Vec<RequirementsSpecsIssue>,
    pub run_meta: PipelineRunMeta,
}

/// Audit outcome for one rule. Ordering is the verdict lattice:
/// Pass < Unknown < Fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Unknown,
    Fail,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::Pass, Verdict::Unknown, Verdict::Fail];

    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Unknown => "unknown",
            Verdict::Fail => "fail",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pessimistic lattice join over Pass < Unknown < Fail.
///
/// Commutative, associative, idempotent, with Pass as identity; merging
/// chunked audit results through it can never hide a Fail.
pub fn verdict_join(a: Verdict, b: Verdict) -> Verdict {
    a.max(b)
}

/// How a cited code excerpt supports a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceRole {
    EnablingPath,
    Constraint,
    Constant,
    Configuration,
    ValidationLogic,
    CrossFileEdge,
    SuggestiveIdentifierOnly,
}

impl EvidenceRole {
    pub fn name(&self) -> &'static str {
        match self {
            EvidenceRole::EnablingPath => "enabling_path",
            EvidenceRole::Constraint => "constraint",
            EvidenceRole::Constant => "constant",
            EvidenceRole::Configuration => "configuration",
            EvidenceRole::ValidationLogic => "validation_logic",
            EvidenceRole::CrossFileEdge => "cross_file_edge",
            EvidenceRole::SuggestiveIdentifierOnly => "suggestive_identifier_only",
        }
    }
}

/// One cited code location backing a finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceItem {
    pub file: String,
    pub line_span: LineSpan,
    pub excerpt: String,
    pub role: EvidenceRole,
}

/// Per-rule audit verdict with its supporting evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditFinding {
    pub rule_id: String,
    pub verdict: Verdict,
    pub confidence: RuleConfidence,
    pub evidence: Vec<EvidenceItem>,
    pub rationale: String,
    pub traceability_gap: bool,
}

impl AuditFinding {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.verdict == Verdict::Fail && self.evidence.is_empty() {
            return Err(ModelError::Invariant(format!(
                "finding for {} is Fail with no evidence",
                self.rule_id
            )));
        }
        Ok(())
    }
}

/// Requirement-id to code-path mapping supplied by the project.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceabilityMap {
    pub entries: BTreeMap<String, Vec<String>>,
}

impl TraceabilityMap {
    pub fn paths_for(&self, requirement_id: &str) -> &[String] {
        self.entries
            .get(requirement_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn has_entry(&self, requirement_id: &str) -> bool {
        self.entries.contains_key(requirement_id)
    }
}

/// Errors raised by domain-type invariant checks.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invariant violation: {0}")]
    Invariant(String),
}

/// Canonical identity of a rule: normalized statement text plus the sorted
/// multiset of (kind, normalized subject) pairs. Numeric parameters are
/// excluded so conflicting bounds from different runs collide on one key and
/// surface as explicit conflicts instead of silently coexisting.
pub fn canonical_rule_key(rule: &VerifiableRule) -> String {
    let mut pairs: Vec<String> = rule
        .points
        .iter()
        .map(|p| format!("{}:{}", p.kind.name(), normalize_text(&p.subject)))
        .collect();
    pairs.sort();
    let mut key = normalize_text(&rule.statement);
    for pair in pairs {
        key.push('|');
        key.push_str(&pair);
    }
    key
}

/// Lowercases, strips punctuation, and collapses whitespace.
fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = true;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                out.push(lc);
            }
            last_space = false;
        } else if !last_space {
            out.push(' ');
            last_space = true;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(statement: &str, points: Vec<VerificationPoint>) -> VerifiableRule {
        VerifiableRule {
            rule_id: "r-test".into(),
            statement: statement.into(),
            points,
            source_requirements: vec!["req-001".into()],
            confidence: RuleConfidence::High,
            provenance: vec!["run-1".into()],
        }
    }

    fn min_length(subject: &str, n: u64) -> VerificationPoint {
        VerificationPoint {
            kind: PointKind::MinLength,
            subject: subject.into(),
            parameter: Some(PointParameter::Count(n)),
        }
    }

    #[test]
    fn key_is_deterministic_on_identical_input() {
        let r = rule(
            "Password shall be at least 8 characters",
            vec![min_length("password", 8)],
        );
        assert_eq!(canonical_rule_key(&r), canonical_rule_key(&r));
    }

    #[test]
    fn key_normalizes_case_whitespace_and_punctuation() {
        let a = rule(
            "Password shall be at least 8 characters",
            vec![min_length("password", 8)],
        );
        let b = rule(
            "  password SHALL be at least 8 characters. ",
            vec![min_length("password", 8)],
        );
        assert_eq!(canonical_rule_key(&a), canonical_rule_key(&b));
    }

    #[test]
    fn key_excludes_numeric_parameters() {
        let a = rule(
            "Password shall be at least 8 characters",
            vec![min_length("password", 8)],
        );
        let b = rule(
            "Password shall be at least 8 characters",
            vec![min_length("password", 10)],
        );
        assert_eq!(canonical_rule_key(&a), canonical_rule_key(&b));
    }

    // Brute-force pairwise comparison over a synthetic 20-rule set: two keys
    // are equal exactly when the rules land in the same hand-assigned class.
    #[test]
    fn key_equality_classes_match_bruteforce_expectation() {
        let mut rules: Vec<(u32, VerifiableRule)> = Vec::new();
        // class 0: parameter variants of the same min-length rule
        for n in [6u64, 8, 10, 12] {
            rules.push((
                0,
                rule(
                    "Password shall be at least 8 characters",
                    vec![min_length("password", n)],
                ),
            ));
        }
        // class 1: same statement, different subject
        for n in [8u64, 10] {
            rules.push((
                1,
                rule(
                    "Password shall be at least 8 characters",
                    vec![min_length("passphrase", n)],
                ),
            ));
        }
        // class 2: same statement, different kind
        for n in [8u64, 10] {
            rules.push((
                2,
                rule(
                    "Password shall be at least 8 characters",
                    vec![VerificationPoint {
                        kind: PointKind::ThresholdCount,
                        subject: "password".into(),
                        parameter: Some(PointParameter::Count(n)),
                    }],
                ),
            ));
        }
        // class 3: punctuation/case variants collapse together
        for s in [
            "The hotspot shall be disabled when idle.",
            "the hotspot SHALL be disabled when idle",
            "The hotspot shall be disabled, when idle!",
        ] {
            rules.push((
                3,
                rule(
                    s,
                    vec![VerificationPoint {
                        kind: PointKind::OperationalTrigger,
                        subject: "hotspot".into(),
                        parameter: Some(PointParameter::Text("idle".into())),
                    }],
                ),
            ));
        }
        // class 4: multi-point rules, point order irrelevant
        let p1 = VerificationPoint {
            kind: PointKind::AllowedValue,
            subject: "encryption".into(),
            parameter: Some(PointParameter::Text("WPA2".into())),
        };
        let p2 = VerificationPoint {
            kind: PointKind::AllowedValue,
            subject: "cipher".into(),
            parameter: Some(PointParameter::Text("AES".into())),
        };
        rules.push((4, rule("Encryption shall use WPA2", vec![p1.clone(), p2.clone()])));
        rules.push((4, rule("Encryption shall use WPA2", vec![p2.clone(), p1.clone()])));
        // class 5: textual allowed-value parameter variants still collide
        for v in ["WPA2", "WPA3"] {
            rules.push((
                5,
                rule(
                    "The hotspot shall use approved encryption",
                    vec![VerificationPoint {
                        kind: PointKind::AllowedValue,
                        subject: "encryption mode".into(),
                        parameter: Some(PointParameter::Text(v.into())),
                    }],
                ),
            ));
        }
        // classes 6..: distinct singleton rules
        for (i, s) in [
            "Sessions shall be unique",
            "WPS shall be disabled",
            "Logging shall record failures",
            "Updates shall use TLS",
            "Diagnostics shall be off in production",
        ]
        .iter()
        .enumerate()
        {
            rules.push((
                6 + i as u32,
                rule(
                    s,
                    vec![VerificationPoint {
                        kind: PointKind::Uniqueness,
                        subject: format!("subject-{i}"),
                        parameter: None,
                    }],
                ),
            ));
        }
        assert_eq!(rules.len(), 20);
        for (ca, ra) in &rules {
            for (cb, rb) in &rules {
                let same_key = canonical_rule_key(ra) == canonical_rule_key(rb);
                assert_eq!(
                    same_key,
                    ca == cb,
                    "key relation mismatch between {:?} and {:?}",
                    ra.statement,
                    rb.statement
                );
            }
        }
    }

    #[test]
    fn verdict_join_lattice_examples() {
        use Verdict::*;
        assert_eq!(verdict_join(Pass, Pass), Pass);
        assert_eq!(verdict_join(Fail, Unknown), Fail);
        let folded = [Pass, Unknown, Pass]
            .into_iter()
            .fold(Pass, verdict_join);
        assert_eq!(folded, Unknown);
    }

    #[test]
    fn verdict_join_all_27_triples() {
        for a in Verdict::ALL {
            for b in Verdict::ALL {
                assert_eq!(verdict_join(a, b), verdict_join(b, a));
                assert_eq!(verdict_join(a, a), a);
                assert_eq!(verdict_join(Verdict::Pass, a), a);
                for c in Verdict::ALL {
                    assert_eq!(
                        verdict_join(verdict_join(a, b), c),
                        verdict_join(a, verdict_join(b, c))
                    );
                }
            }
        }
    }

    #[test]
    fn point_invariants_enforced() {
        let bad = VerificationPoint {
            kind: PointKind::MinLength,
            subject: "password".into(),
            parameter: Some(PointParameter::Text("eight".into())),
        };
        assert!(bad.validate().is_err());
        let empty = VerificationPoint {
            kind: PointKind::OperationalTrigger,
            subject: "hotspot".into(),
            parameter: Some(PointParameter::Text("  ".into())),
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn issue_excerpt_verbatim_check() {
        let item = RequirementItem {
            id: "req-001".into(),
            text: "Passwords should be strong.".into(),
            source: SourceRef {
                path: "reqs.txt".into(),
                line_span: LineSpan::new(1, 1),
            },
            strength: NormativeStrength::Should,
            vague_terms: vec!["strong".into()],
        };
        let issue = RequirementsSpecsIssue {
            issue_id: "i-001".into(),
            kind: IssueKind::Ambiguity,
            source_requirements: vec!["req-001".into()],
            excerpt: "should be strong".into(),
            rationale: "vague".into(),
        };
        assert!(issue.excerpt_is_verbatim(std::slice::from_ref(&item)));
        let fabricated = RequirementsSpecsIssue {
            excerpt: "must be strong".into(),
            ..issue
        };
        assert!(!fabricated.excerpt_is_verbatim(std::slice::from_ref(&item)));
    }
}
