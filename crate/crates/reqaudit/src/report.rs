//! Run statistics and report rendering.

use serde::{Deserialize, Serialize};

use crate::model::{
    AuditFinding, PipelineRunMeta, RequirementItem, RequirementsSpecsIssue, RuleConfidence,
    IssueKind, Verdict, VerifiableRule,
};
use crate::pooling::PooledRuleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictHistogram {
    pub pass: u32,
    pub fail: u32,
    pub unknown: u32,
}

impl VerdictHistogram {
    pub fn total(&self) -> u32 {
        self.pass + self.fail + self.unknown
    }
}

/// The statistics block of the final report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSummary {
    pub items_analyzed: u32,
    pub issues_found: u32,
    pub issue_rate: f64,
    pub rules_total: u32,
    pub verdicts: VerdictHistogram,
    pub fail_unknown_total: u32,
    pub traceability_gap_count: u32,
    pub agreement: f64,
    pub run_meta: PipelineRunMeta,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("finding references unknown rule id {0}")]
    DanglingRuleId(String),
    #[error("rule {0} has no finding")]
    MissingFinding(String),
}

/// Computes all summary fields. Inputs must be consistent: exactly one
/// finding per pooled rule.
pub fn summarize(
    items: &[RequirementItem],
    pooled: &PooledRuleSet,
    findings: &[AuditFinding],
) -> Result<ReportSummary, ReportError> {
    for finding in findings {
        if !pooled.rules.iter().any(|r| r.rule_id == finding.rule_id) {
            return Err(ReportError::DanglingRuleId(finding.rule_id.clone()));
        }
    }
    for rule in &pooled.rules {
        if !findings.iter().any(|f| f.rule_id == rule.rule_id) {
            return Err(ReportError::MissingFinding(rule.rule_id.clone()));
        }
    }
    let verdicts = VerdictHistogram {
        pass: count_verdict(findings, Verdict::Pass),
        fail: count_verdict(findings, Verdict::Fail),
        unknown: count_verdict(findings, Verdict::Unknown),
    };
    let items_analyzed = items.len() as u32;
    let issues_found = pooled.issues.len() as u32;
    Ok(ReportSummary {
        items_analyzed,
        issues_found,
        issue_rate: issue_rate(items_analyzed, issues_found),
        rules_total: pooled.rules.len() as u32,
        verdicts,
        fail_unknown_total: verdicts.fail + verdicts.unknown,
        traceability_gap_count: findings.iter().filter(|f| f.traceability_gap).count() as u32,
        agreement: pooled.agreement,
        run_meta: pooled.run_meta.clone(),
    })
}

/// issues / items, with the degenerate zero-item case defined as 0.
pub fn issue_rate(items_analyzed: u32, issues_found: u32) -> f64 {
    if items_analyzed == 0 {
        0.0
    } else {
        issues_found as f64 / items_analyzed as f64
    }
}

fn count_verdict(findings: &[AuditFinding], verdict: Verdict) -> u32 {
    findings.iter().filter(|f| f.verdict == verdict).count() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Structured,
    HumanReadable,
}

/// Renders the report. Structured output is the versioned report document;
/// human-readable output is sectioned text with stable ordering, so both
/// render byte-identically for identical inputs.
pub fn render(
    summary: &ReportSummary,
    rules: &[VerifiableRule],
    issues: &[RequirementsSpecsIssue],
    findings: &[AuditFinding],
    format: RenderFormat,
) -> String {
    match format {
        RenderFormat::Structured => {
            let doc = crate::document::ReportDocument {
                schema_version: crate::document::SCHEMA_VERSION.into(),
                kind: "report".into(),
                summary: summary.clone(),
            };
            crate::document::to_document_string(&doc)
        }
        RenderFormat::HumanReadable => render_text(summary, rules, issues, findings),
    }
}

fn render_text(
    summary: &ReportSummary,
    rules: &[VerifiableRule],
    issues: &[RequirementsSpecsIssue],
    findings: &[AuditFinding],
) -> String {
    let mut out = String::new();
    let line = "=".repeat(70);
    out.push_str(&line);
    out.push_str("\nREQUIREMENTS-VS-CODE CONSISTENCY REPORT\n");
    out.push_str(&line);
    out.push('\n');
    out.push_str(&format!("run:                 {}\n", summary.run_meta.run_id));
    out.push_str(&format!("backend:             {}\n", summary.run_meta.backend));
    out.push_str(&format!("items analyzed:      {}\n", summary.items_analyzed));
    out.push_str(&format!(
        "requirement issues:  {} (rate {:.4})\n",
        summary.issues_found, summary.issue_rate
    ));
    out.push_str(&format!("rules audited:       {}\n", summary.rules_total));
    out.push_str(&format!(
        "verdicts:            pass {} / fail {} / unknown {}\n",
        summary.verdicts.pass, summary.verdicts.fail, summary.verdicts.unknown
    ));
    out.push_str(&format!(
        "fail/unknown total:  {}\n",
        summary.fail_unknown_total
    ));
    out.push_str(&format!(
        "traceability gaps:   {}\n",
        summary.traceability_gap_count
    ));
    out.push_str(&format!("run agreement:       {:.4}\n", summary.agreement));

    out.push_str("\nREQUIREMENT ISSUES\n");
    out.push_str(&"-".repeat(70));
    out.push('\n');
    let mut any_issue = false;
    for kind in IssueKind::ALL {
        let mut group: Vec<&RequirementsSpecsIssue> =
            issues.iter().filter(|i| i.kind == kind).collect();
        if group.is_empty() {
            continue;
        }
        any_issue = true;
        group.sort_by(|a, b| a.issue_id.cmp(&b.issue_id));
        out.push_str(&format!("[{}]\n", kind.name()));
        for issue in group {
            out.push_str(&format!(
                "  {} ({}): \"{}\"\n",
                issue.issue_id,
                issue.source_requirements.join(", "),
                first_line(&issue.excerpt)
            ));
            out.push_str(&format!("      {}\n", first_line(&issue.rationale)));
        }
    }
    if !any_issue {
        out.push_str("(none)\n");
    }

    out.push_str("\nAUDIT FINDINGS\n");
    out.push_str(&"-".repeat(70));
    out.push('\n');
    for verdict in [Verdict::Fail, Verdict::Unknown, Verdict::Pass] {
        let mut group: Vec<&AuditFinding> =
            findings.iter().filter(|f| f.verdict == verdict).collect();
        if group.is_empty() {
            continue;
        }
        group.sort_by(|a, b| a.rule_id.cmp(&b.rule_id));
        out.push_str(&format!("[{}]\n", verdict.name()));
        for finding in group {
            let statement = rules
                .iter()
                .find(|r| r.rule_id == finding.rule_id)
                .map(|r| r.statement.as_str())
                .unwrap_or("(unknown rule)");
            let gap = if finding.traceability_gap {
                " [traceability gap]"
            } else {
                ""
            };
            out.push_str(&format!(
                "  {} ({} confidence){}: {}\n",
                finding.rule_id,
                confidence_name(finding.confidence),
                gap,
                first_line(statement)
            ));
            out.push_str(&format!("      {}\n", first_line(&finding.rationale)));
            for ev in &finding.evidence {
                out.push_str(&format!(
                    "      evidence {}:{}-{} ({}): {}\n",
                    ev.file,
                    ev.line_span.start,
                    ev.line_span.end,
                    ev.role.name(),
                    first_line(&ev.excerpt)
                ));
            }
        }
    }
    if findings.is_empty() {
        out.push_str("(none)\n");
    }
    out
}

fn confidence_name(c: RuleConfidence) -> &'static str {
    match c {
        RuleConfidence::High => "high",
        RuleConfidence::Low => "low",
    }
}

fn first_line(text: &str) -> String {
    let line = text.lines().next().unwrap_or("");
    let mut s: String = line.chars().take(100).collect();
    if line.chars().count() > 100 || text.lines().count() > 1 {
        s.push('…');
    }
    s
}
