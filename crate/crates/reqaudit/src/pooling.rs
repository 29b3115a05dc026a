//! Pooling: reconciles and merges per-run rule sets into one pooled set.
//!
//! Merging is union-biased — a rule found by any run survives — with
//! deterministic conflict resolution: strictest numeric parameter wins,
//! value-set points union, lowest confidence wins. Disagreements are never
//! silent; each one is preserved as a [`ConflictRecord`] for human review.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{
    canonical_rule_key, PipelineRunMeta, PointKind, PointParameter, RequirementsSpecsIssue,
    RuleConfidence, RuleSet, VerifiableRule, VerificationPoint,
};

/// One rule snapshot as produced by a specific run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConflictVariant {
    pub run_id: String,
    pub rule: VerifiableRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConflictResolution {
    /// rule_id of the winning variant; always one of the listed variants.
    pub chosen_rule_id: String,
    pub reason: String,
}

/// Rules from different runs that collide on one canonical key but disagree
/// in parameters or confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConflictRecord {
    pub canonical_key: String,
    pub variants: Vec<ConflictVariant>,
    pub resolution: ConflictResolution,
}

/// Result of pooling one or more per-run rule sets.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledRuleSet {
    pub rules: Vec<VerifiableRule>,
    pub issues: Vec<RequirementsSpecsIssue>,
    pub conflicts: Vec<ConflictRecord>,
    pub agreement: f64,
    pub run_meta: PipelineRunMeta,
}

#[derive(Debug, thiserror::Error)]
pub enum PoolingError {
    #[error("merge requires at least one rule set")]
    EmptyInput,
}

/// Merges per-run rule sets. The result is independent of input ordering:
/// groups are keyed and sorted by canonical rule key before ids are assigned.
pub fn merge(rulesets: &[RuleSet]) -> Result<PooledRuleSet, PoolingError> {
    if rulesets.is_empty() {
        return Err(PoolingError::EmptyInput);
    }

    let mut groups: BTreeMap<String, Vec<ConflictVariant>> = BTreeMap::new();
    for set in rulesets {
        for rule in &set.rules {
            groups
                .entry(canonical_rule_key(rule))
                .or_default()
                .push(ConflictVariant {
                    run_id: set.run_meta.run_id.clone(),
                    rule: rule.clone(),
                });
        }
    }

    let mut rules = Vec::new();
    let mut conflicts = Vec::new();
    for (index, (key, mut variants)) in groups.into_iter().enumerate() {
        variants.sort_by(|a, b| {
            (&a.run_id, &a.rule.rule_id).cmp(&(&b.run_id, &b.rule.rule_id))
        });
        let rule_id = format!("P-{:03}", index + 1);
        let (pooled, conflict) = resolve_group(rule_id, &key, &variants);
        rules.push(pooled);
        if let Some(c) = conflict {
            conflicts.push(c);
        }
    }

    let issues = dedup_issues(rulesets);
    let agreement = agreement_score(rulesets);
    let run_meta = pooled_meta(rulesets);

    Ok(PooledRuleSet {
        rules,
        issues,
        conflicts,
        agreement,
        run_meta,
    })
}

/// Mean pairwise Jaccard similarity over the runs' canonical-key sets.
/// A single run scores 1.0; two empty sets count as identical.
pub fn agreement_score(rulesets: &[RuleSet]) -> f64 {
    if rulesets.len() < 2 {
        return 1.0;
    }
    let key_sets: Vec<BTreeSet<String>> = rulesets
        .iter()
        .map(|s| s.rules.iter().map(canonical_rule_key).collect())
        .collect();
    let mut scores = Vec::new();
    for i in 0..key_sets.len() {
        for j in (i + 1)..key_sets.len() {
            scores.push(jaccard(&key_sets[i], &key_sets[j]));
        }
    }
    // Summation in sorted order keeps the mean invariant under input
    // permutation despite float non-associativity.
    scores.sort_by(f64::total_cmp);
    let total: f64 = scores.iter().sum();
    total / scores.len() as f64
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let intersection = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    intersection / union
}

fn resolve_group(
    rule_id: String,
    key: &str,
    variants: &[ConflictVariant],
) -> (VerifiableRule, Option<ConflictRecord>) {
    let statement = variants
        .iter()
        .map(|v| v.rule.statement.clone())
        .min()
        .expect("groups are non-empty");
    let mut sources: BTreeSet<String> = BTreeSet::new();
    let mut provenance: BTreeSet<String> = BTreeSet::new();
    let mut confidence = RuleConfidence::High;
    for v in variants {
        sources.extend(v.rule.source_requirements.iter().cloned());
        provenance.extend(v.rule.provenance.iter().cloned());
        confidence = confidence.join(v.rule.confidence);
    }
    let points = resolve_points(variants);

    let agree = variants.iter().all(|v| {
        normalized_points(&v.rule.points) == normalized_points(&variants[0].rule.points)
            && v.rule.confidence == variants[0].rule.confidence
    });
    let conflict = if agree {
        None
    } else {
        let chosen = choose_strictest(variants);
        Some(ConflictRecord {
            canonical_key: key.to_string(),
            variants: variants.to_vec(),
            resolution: ConflictResolution {
                chosen_rule_id: chosen.rule.rule_id.clone(),
                reason: "strictest numeric parameter wins, value sets union, lowest confidence adopted".into(),
            },
        })
    };

    let pooled = VerifiableRule {
        rule_id,
        statement,
        points,
        source_requirements: sources.into_iter().collect(),
        confidence,
        provenance: provenance.into_iter().collect(),
    };
    (pooled, conflict)
}

/// Comparable view of a point list: sorted, with subjects normalized the same
/// way the canonical key normalizes them.
fn normalized_points(points: &[VerificationPoint]) -> BTreeSet<(PointKind, String, Option<PointParameter>)> {
    points
        .iter()
        .map(|p| (p.kind, normalize_subject(&p.subject), p.parameter.clone()))
        .collect()
}

fn normalize_subject(subject: &str) -> String {
    subject
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Union of all variants' points with strictest numeric parameters: for
/// min_length/threshold_count cells the maximum bound wins; every other kind
/// keeps all distinct (subject, parameter) combinations.
fn resolve_points(variants: &[ConflictVariant]) -> Vec<VerificationPoint> {
    let mut numeric: BTreeMap<(PointKind, String), (String, u64)> = BTreeMap::new();
    let mut textual: BTreeMap<(PointKind, String, Option<PointParameter>), String> =
        BTreeMap::new();
    for v in variants {
        for p in &v.rule.points {
            let norm = normalize_subject(&p.subject);
            match p.kind {
                PointKind::MinLength | PointKind::ThresholdCount => {
                    let bound = p.parameter.as_ref().and_then(|q| q.as_count()).unwrap_or(0);
                    numeric
                        .entry((p.kind, norm))
                        .and_modify(|(subject, existing)| {
                            if bound > *existing {
                                *existing = bound;
                            }
                            if p.subject < *subject {
                                *subject = p.subject.clone();
                            }
                        })
                        .or_insert((p.subject.clone(), bound));
                }
                _ => {
                    textual
                        .entry((p.kind, norm, p.parameter.clone()))
                        .and_modify(|subject| {
                            if p.subject < *subject {
                                *subject = p.subject.clone();
                            }
                        })
                        .or_insert(p.subject.clone());
                }
            }
        }
    }
    let mut out: Vec<VerificationPoint> = Vec::new();
    for ((kind, _), (subject, bound)) in numeric {
        out.push(VerificationPoint {
            kind,
            subject,
            parameter: Some(PointParameter::Count(bound)),
        });
    }
    for ((kind, _, parameter), subject) in textual {
        out.push(VerificationPoint {
            kind,
            subject,
            parameter,
        });
    }
    out.sort();
    out
}

/// Deterministic winner: highest numeric bound, then Low confidence (the
/// conservative reading), then smallest (run_id, rule_id).
fn choose_strictest(variants: &[ConflictVariant]) -> &ConflictVariant {
    variants
        .iter()
        .min_by(|a, b| {
            let bound = |v: &ConflictVariant| {
                v.rule
                    .points
                    .iter()
                    .filter_map(|p| p.parameter.as_ref().and_then(|q| q.as_count()))
                    .max()
                    .unwrap_or(0)
            };
            bound(b)
                .cmp(&bound(a))
                .then_with(|| a.rule.confidence.cmp(&b.rule.confidence).reverse())
                .then_with(|| (&a.run_id, &a.rule.rule_id).cmp(&(&b.run_id, &b.rule.rule_id)))
        })
        .expect("groups are non-empty")
}

fn dedup_issues(rulesets: &[RuleSet]) -> Vec<RequirementsSpecsIssue> {
    let mut map: BTreeMap<(u8, Vec<String>, String), RequirementsSpecsIssue> = BTreeMap::new();
    for set in rulesets {
        for issue in &set.issues {
            let mut sources = issue.source_requirements.clone();
            sources.sort();
            let kind_order = issue.kind as u8;
            let key = (kind_order, sources, issue.excerpt.clone());
            map.entry(key)
                .and_modify(|existing| {
                    if issue.rationale < existing.rationale {
                        existing.rationale = issue.rationale.clone();
                    }
                })
                .or_insert_with(|| issue.clone());
        }
    }
    map.into_values()
        .enumerate()
        .map(|(i, mut issue)| {
            issue.issue_id = format!("PI-{:03}", i + 1);
            issue
        })
        .collect()
}

fn pooled_meta(rulesets: &[RuleSet]) -> PipelineRunMeta {
    let mut backends: BTreeSet<&str> = BTreeSet::new();
    let mut timestamps: Vec<&str> = Vec::new();
    let mut template_hashes: BTreeSet<Option<&String>> = BTreeSet::new();
    let mut temperature = f64::INFINITY;
    for set in rulesets {
        backends.insert(set.run_meta.backend.as_str());
        timestamps.push(set.run_meta.timestamp.as_str());
        template_hashes.insert(set.run_meta.template_hash.as_ref());
        if set.run_meta.temperature < temperature {
            temperature = set.run_meta.temperature;
        }
    }
    let template_hash = if template_hashes.len() == 1 {
        template_hashes
            .into_iter()
            .next()
            .flatten()
            .cloned()
    } else {
        None
    };
    PipelineRunMeta {
        run_id: "pooled".into(),
        timestamp: timestamps.iter().max().unwrap_or(&"").to_string(),
        backend: backends.into_iter().collect::<Vec<_>>().join("+"),
        temperature,
        run_count: rulesets.len() as u32,
        template_hash,
    }
}
