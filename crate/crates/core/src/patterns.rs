//! Rule-based typing for pattern-friendly categories such as file types,
//! operating systems and version strings, and merging of rule output with
//! model predictions.

use std::collections::{HashMap, HashSet};
use std::str::FromStr;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::corpus::{InstanceId, LabelSet, TypingInstance};
use crate::error::{Error, Result};
use crate::evaluation::CategoryScore;

pub const DEFAULT_RULES: &str = include_str!("../data/default_rules.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Regex,
    Gazetteer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRule {
    pub category: String,
    pub kind: RuleKind,
    pub body: String,
    pub priority: i64,
    pub case_sensitive: bool,
}

#[derive(Debug, Clone)]
enum Matcher {
    Regex(Regex),
    Gazetteer(HashSet<String>),
}

#[derive(Debug, Clone)]
pub struct CompiledRule {
    pub rule: PatternRule,
    matcher: Matcher,
}

impl CompiledRule {
    pub fn matches(&self, surface: &str) -> bool {
        let surface = surface.trim();
        match &self.matcher {
            Matcher::Regex(re) => re.is_match(surface),
            Matcher::Gazetteer(words) if self.rule.case_sensitive => words.contains(surface),
            Matcher::Gazetteer(words) => words.contains(&surface.to_lowercase()),
        }
    }
}

/// Compiled rules, highest priority first.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    pub rules: Vec<CompiledRule>,
}

impl RuleSet {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Distinct categories in priority order.
    pub fn categories(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.rules
            .iter()
            .filter(|r| seen.insert(r.rule.category.as_str()))
            .map(|r| r.rule.category.clone())
            .collect()
    }

    pub fn default_set() -> Self {
        compile_rules(DEFAULT_RULES).expect("bundled rules compile")
    }
}

fn compile_one(rule: PatternRule, line: usize) -> Result<CompiledRule> {
    let bad = |reason: String| Error::BadPattern { line, reason };
    let matcher = match rule.kind {
        RuleKind::Regex => Matcher::Regex(
            RegexBuilder::new(&rule.body)
                .case_insensitive(!rule.case_sensitive)
                .build()
                .map_err(|e| bad(e.to_string()))?,
        ),
        RuleKind::Gazetteer => {
            let words: HashSet<String> = rule
                .body
                .split(',')
                .map(str::trim)
                .filter(|w| !w.is_empty())
                .map(|w| if rule.case_sensitive { w.to_string() } else { w.to_lowercase() })
                .collect();
            if words.is_empty() {
                return Err(bad("gazetteer has no words".into()));
            }
            Matcher::Gazetteer(words)
        }
    };
    Ok(CompiledRule { rule, matcher })
}

/// Parses `<category>\t<kind>\t<body>\t<priority>[\tci|cs]` lines. Lines
/// without tabs are split on whitespace instead. Blank lines and `#`
/// comments are skipped.
pub fn compile_rules(text: &str) -> Result<RuleSet> {
    let mut rules = Vec::new();
    let mut priorities: HashMap<i64, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if trimmed.contains('\t') {
            trimmed.split('\t').map(str::trim).collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        let bad = |reason: String| Error::BadPattern { line, reason };
        if !(4..=5).contains(&fields.len()) {
            return Err(bad(format!("expected 4 or 5 fields, found {}", fields.len())));
        }
        let kind = match fields[1] {
            "regex" => RuleKind::Regex,
            "gazetteer" => RuleKind::Gazetteer,
            other => return Err(bad(format!("unknown rule kind `{other}`"))),
        };
        let priority: i64 = fields[3].parse().map_err(|_| bad(format!("priority `{}` is not an integer", fields[3])))?;
        let case_sensitive = match fields.get(4) {
            None | Some(&"ci") => false,
            Some(&"cs") => true,
            Some(other) => return Err(bad(format!("case flag must be ci or cs, found `{other}`"))),
        };
        if fields[0].is_empty() {
            return Err(bad("empty category".into()));
        }
        if priorities.insert(priority, line).is_some() {
            return Err(Error::DuplicatePriority { line, priority });
        }
        let rule = PatternRule {
            category: fields[0].to_string(),
            kind,
            body: fields[2].to_string(),
            priority,
            case_sensitive,
        };
        rules.push(compile_one(rule, line)?);
    }
    rules.sort_by_key(|r| std::cmp::Reverse(r.rule.priority));
    Ok(RuleSet { rules })
}

/// Category of the highest-priority rule matching the mention surface.
/// `_context` is the sentence around the mention; the bundled rule kinds
/// look at the surface only.
pub fn classify_mention<'r>(mention: &str, _context: &[String], rules: &'r RuleSet) -> Option<&'r str> {
    rules.rules.iter().find(|r| r.matches(mention)).map(|r| r.rule.category.as_str())
}

pub fn classify_instances(instances: &[TypingInstance], rules: &RuleSet) -> Vec<(InstanceId, Option<String>)> {
    instances
        .iter()
        .map(|inst| (inst.id(), classify_mention(&inst.mention(), &inst.tokens, rules).map(str::to_string)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MergePolicy {
    PatternWins,
    ModelWins,
    PatternOnlyFor(Vec<String>),
}

impl MergePolicy {
    /// Patterns override the model only for rule categories that are also
    /// in `labels`.
    pub fn for_rules(rules: &RuleSet, labels: &LabelSet) -> Self {
        MergePolicy::PatternOnlyFor(rules.categories().into_iter().filter(|c| labels.contains(c)).collect())
    }

    fn allows(&self, label: &str) -> bool {
        match self {
            MergePolicy::PatternWins => true,
            MergePolicy::ModelWins => false,
            MergePolicy::PatternOnlyFor(only) => only.iter().any(|l| l == label),
        }
    }
}

impl FromStr for MergePolicy {
    type Err = Error;

    /// `pattern_wins`, `model_wins` or `pattern_only_for=A,B`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('=') {
            None if s == "pattern_wins" => Ok(MergePolicy::PatternWins),
            None if s == "model_wins" => Ok(MergePolicy::ModelWins),
            Some(("pattern_only_for", list)) => {
                let labels: Vec<String> =
                    list.split(',').map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
                if labels.is_empty() {
                    return Err(Error::InvalidConfig("pattern_only_for needs at least one label".into()));
                }
                Ok(MergePolicy::PatternOnlyFor(labels))
            }
            _ => Err(Error::InvalidConfig(format!("unknown merge policy `{s}`"))),
        }
    }
}

/// Replaces model predictions by pattern predictions where the policy
/// allows. Pattern labels outside `labels` are ignored.
pub fn merge_predictions(
    model: &[(InstanceId, String)],
    patterns: &[(InstanceId, Option<String>)],
    policy: &MergePolicy,
    labels: &LabelSet,
) -> Result<Vec<(InstanceId, String)>> {
    if model.len() != patterns.len() {
        return Err(Error::AlignmentMismatch(format!(
            "{} model predictions and {} pattern predictions",
            model.len(),
            patterns.len()
        )));
    }
    if let MergePolicy::PatternOnlyFor(only) = policy {
        if let Some(l) = only.iter().find(|l| !labels.contains(l)) {
            return Err(Error::UnknownLabel(l.clone()));
        }
    }
    model
        .iter()
        .zip(patterns)
        .map(|((mid, mlabel), (pid, plabel))| {
            if mid != pid {
                return Err(Error::AlignmentMismatch(format!("instance {mid} aligned with {pid}")));
            }
            let label = match plabel {
                Some(p) if labels.contains(p) && policy.allows(p) => p.clone(),
                _ => mlabel.clone(),
            };
            Ok((*mid, label))
        })
        .collect()
}

/// Scores rule output on its own. Instances where no rule fires are
/// abstentions: they cost recall but not precision.
pub fn pattern_scores(
    patterns: &[(InstanceId, Option<String>)],
    golds: &[(InstanceId, String)],
    categories: &[String],
) -> Result<Vec<(String, CategoryScore)>> {
    if patterns.len() != golds.len() {
        return Err(Error::AlignmentMismatch(format!("{} pattern predictions for {} gold instances", patterns.len(), golds.len())));
    }
    if golds.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut out = Vec::with_capacity(categories.len());
    for cat in categories {
        let (mut tp, mut fired, mut support) = (0usize, 0usize, 0usize);
        for ((pid, pred), (gid, gold)) in patterns.iter().zip(golds) {
            if pid != gid {
                return Err(Error::AlignmentMismatch(format!("instance {pid} aligned with {gid}")));
            }
            let hit = pred.as_deref() == Some(cat.as_str());
            fired += hit as usize;
            support += (gold == cat) as usize;
            tp += (hit && gold == cat) as usize;
        }
        let precision = if fired == 0 { 0.0 } else { tp as f64 / fired as f64 };
        let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        out.push((cat.clone(), CategoryScore { precision, recall, f1, support }));
    }
    Ok(out)
}
