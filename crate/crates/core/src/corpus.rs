//! CoNLL-style BIO corpora and the entity-typing instances extracted from them.
//!
//! Files carry one `<token> <tag>` (or tab-separated) pair per line, with a
//! blank line between sentences. Lines starting with `-DOCSTART-` are skipped.
//! An `I-L` tag without a compatible predecessor is rewritten to `B-L` and a
//! diagnostic is recorded instead of failing the whole file.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    /// 1-based line number of the first token in the source text.
    pub line: usize,
}

/// Non-fatal issue found while parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCorpus {
    pub sentences: Vec<LabeledSentence>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Identity of a mention inside a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceId {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}-{}", self.sentence, self.start, self.end)
    }
}

/// A sentence, a marked mention span (inclusive bounds) and its gold label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypingInstance {
    pub sentence: usize,
    pub tokens: Arc<[String]>,
    pub span_start: usize,
    pub span_end: usize,
    pub label: String,
}

impl TypingInstance {
    pub fn new(
        sentence: usize,
        tokens: Arc<[String]>,
        span_start: usize,
        span_end: usize,
        label: impl Into<String>,
    ) -> Result<Self> {
        if span_start > span_end || span_end >= tokens.len() {
            return Err(Error::DimensionMismatch(format!(
                "span {span_start}..={span_end} outside sentence of {} tokens",
                tokens.len()
            )));
        }
        Ok(Self { sentence, tokens, span_start, span_end, label: label.into() })
    }

    pub fn id(&self) -> InstanceId {
        InstanceId { sentence: self.sentence, start: self.span_start, end: self.span_end }
    }

    pub fn mention_tokens(&self) -> &[String] {
        &self.tokens[self.span_start..=self.span_end]
    }

    pub fn mention(&self) -> String {
        self.mention_tokens().join(" ")
    }

    pub fn sentence_text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Key used for duplicate-surface detection.
    pub fn surface_key(&self) -> String {
        self.mention().to_lowercase()
    }
}

/// Ordered set of category names; the order fixes label-distribution indexing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = LabelSet::default();
        for name in names {
            let name = name.into();
            if set.index.contains_key(&name) {
                return Err(Error::DuplicateLabel(name));
            }
            set.index.insert(name.clone(), set.names.len());
            set.names.push(name);
        }
        Ok(set)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_tag(tag: &str) -> Option<Tag<'_>> {
    if tag == "O" {
        return Some(Tag::Outside);
    }
    let (prefix, label) = tag.split_once('-')?;
    if label.is_empty() {
        return None;
    }
    match prefix {
        "B" => Some(Tag::Begin(label)),
        "I" => Some(Tag::Inside(label)),
        _ => None,
    }
}

/// Parses CoNLL text into sentences. Empty input yields an empty corpus.
pub fn parse_conll(text: &str) -> Result<ParsedCorpus> {
    let mut out = ParsedCorpus::default();
    let mut tokens = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    let mut first_line = 0;

    let flush = |tokens: &mut Vec<String>, tags: &mut Vec<String>, first_line: usize, out: &mut ParsedCorpus| {
        if tokens.is_empty() {
            return;
        }
        let diagnostics = repair_bio(tags, first_line);
        out.diagnostics.extend(diagnostics);
        out.sentences.push(LabeledSentence {
            tokens: std::mem::take(tokens),
            tags: std::mem::take(tags),
            line: first_line,
        });
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            flush(&mut tokens, &mut tags, first_line, &mut out);
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::MalformedLine {
                line: line_no,
                reason: format!("expected 2 fields, found {}", fields.len()),
            });
        }
        if parse_tag(fields[1]).is_none() {
            return Err(Error::MalformedLine {
                line: line_no,
                reason: format!("unrecognised tag `{}`", fields[1]),
            });
        }
        if tokens.is_empty() {
            first_line = line_no;
        }
        tokens.push(fields[0].to_string());
        tags.push(fields[1].to_string());
    }
    flush(&mut tokens, &mut tags, first_line, &mut out);

    for d in &out.diagnostics {
        log::warn!("{d}");
    }
    Ok(out)
}

/// Rewrites orphan `I-L` tags to `B-L`, returning one diagnostic per repair.
fn repair_bio(tags: &mut [String], first_line: usize) -> Vec<Diagnostic> {
    let mut diagnostics = Vec::new();
    let mut prev: Option<String> = None;
    for (i, tag) in tags.iter_mut().enumerate() {
        let repaired = match parse_tag(tag) {
            Some(Tag::Inside(label)) if prev.as_deref() != Some(label) => {
                let fixed = format!("B-{label}");
                diagnostics.push(Diagnostic {
                    line: first_line + i,
                    message: format!("repaired orphan `{tag}` to `{fixed}`"),
                });
                Some(fixed)
            }
            _ => None,
        };
        if let Some(fixed) = repaired {
            *tag = fixed;
        }
        prev = match parse_tag(tag) {
            Some(Tag::Begin(l)) | Some(Tag::Inside(l)) => Some(l.to_string()),
            _ => None,
        };
    }
    diagnostics
}

/// Serialises sentences back to tab-separated CoNLL text.
pub fn to_conll(sentences: &[LabeledSentence]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, tag) in s.tokens.iter().zip(&s.tags) {
            out.push_str(tok);
            out.push('\t');
            out.push_str(tag);
            out.push('\n');
        }
    }
    out
}

/// One instance per maximal B-/I- run, ordered by span start.
pub fn extract_mentions(s: &LabeledSentence, sentence_index: usize) -> Vec<TypingInstance> {
    let tokens: Arc<[String]> = s.tokens.clone().into();
    let mut out = Vec::new();
    let mut open: Option<(usize, &str)> = None;

    let close = |open: &mut Option<(usize, &str)>, end: usize, out: &mut Vec<TypingInstance>| {
        if let Some((start, label)) = open.take() {
            out.push(TypingInstance {
                sentence: sentence_index,
                tokens: tokens.clone(),
                span_start: start,
                span_end: end,
                label: label.to_string(),
            });
        }
    };

    for (i, tag) in s.tags.iter().enumerate() {
        match parse_tag(tag) {
            Some(Tag::Begin(label)) => {
                close(&mut open, i.wrapping_sub(1), &mut out);
                open = Some((i, label));
            }
            Some(Tag::Inside(label)) => match open {
                Some((_, l)) if l == label => {}
                // Unrepaired input: treat like a begin.
                _ => {
                    close(&mut open, i.wrapping_sub(1), &mut out);
                    open = Some((i, label));
                }
            },
            _ => close(&mut open, i.wrapping_sub(1), &mut out),
        }
    }
    close(&mut open, s.tags.len() - 1, &mut out);
    out
}

/// All instances of a corpus, sentence indices taken from corpus order.
pub fn corpus_instances(sentences: &[LabeledSentence]) -> Vec<TypingInstance> {
    sentences
        .iter()
        .enumerate()
        .flat_map(|(i, s)| extract_mentions(s, i))
        .collect()
}

/// Unique labels in first-appearance order.
pub fn build_label_set(instances: &[TypingInstance]) -> Result<LabelSet> {
    if instances.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut seen = indexmap::IndexSet::new();
    for inst in instances {
        seen.insert(inst.label.as_str());
    }
    LabelSet::new(seen)
}

/// Writes each instance as its own sentence with only the mention tagged.
pub fn instances_to_conll(instances: &[TypingInstance]) -> String {
    let sentences: Vec<LabeledSentence> = instances
        .iter()
        .map(|inst| {
            let tags = (0..inst.tokens.len())
                .map(|i| {
                    if i == inst.span_start {
                        format!("B-{}", inst.label)
                    } else if i > inst.span_start && i <= inst.span_end {
                        format!("I-{}", inst.label)
                    } else {
                        "O".to_string()
                    }
                })
                .collect();
            LabeledSentence { tokens: inst.tokens.to_vec(), tags, line: 0 }
        })
        .collect();
    to_conll(&sentences)
}

/// Per-label instance counts in label-set order.
pub fn label_counts(instances: &[TypingInstance], labels: &LabelSet) -> Vec<(String, usize)> {
    let mut counts = vec![0usize; labels.len()];
    for inst in instances {
        if let Some(i) = labels.index_of(&inst.label) {
            counts[i] += 1;
        }
    }
    labels.names().iter().cloned().zip(counts).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sentence(tags: &[&str]) -> LabeledSentence {
        LabeledSentence {
            tokens: (0..tags.len()).map(|i| format!("t{i}")).collect(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            line: 1,
        }
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        let parsed = parse_conll("").unwrap();
        assert!(parsed.sentences.is_empty());
    }

    #[test]
    fn parses_table_example() {
        let parsed = parse_conll("JSP B-Library\ncode O\nis O\n. O").unwrap();
        assert_eq!(parsed.sentences.len(), 1);
        let s = &parsed.sentences[0];
        assert_eq!(s.tokens, ["JSP", "code", "is", "."]);
        assert_eq!(s.tags, ["B-Library", "O", "O", "O"]);
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn repairs_orphan_inside_tag() {
        let parsed = parse_conll("a B-X\nb I-Y").unwrap();
        assert_eq!(parsed.sentences[0].tags, ["B-X", "B-Y"]);
        assert_eq!(parsed.diagnostics.len(), 1);
        assert_eq!(parsed.diagnostics[0].line, 2);
    }

    #[test]
    fn leading_inside_tag_is_repaired() {
        let parsed = parse_conll("a I-X\nb I-X\nc O\nd I-X").unwrap();
        assert_eq!(parsed.sentences[0].tags, ["B-X", "I-X", "O", "B-X"]);
        assert_eq!(parsed.diagnostics.len(), 2);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        match parse_conll("a O\nb c O\n") {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_conll("a\n"), Err(Error::MalformedLine { line: 1, .. })));
        assert!(matches!(parse_conll("a E-PER\n"), Err(Error::MalformedLine { line: 1, .. })));
        assert!(matches!(parse_conll("a B-\n"), Err(Error::MalformedLine { line: 1, .. })));
    }

    #[test]
    fn docstart_and_tabs_and_blank_runs() {
        let text = "-DOCSTART- O\n\nfoo\tB-User_Name\nbar\tO\n\n\n\nbaz O\n";
        let parsed = parse_conll(text).unwrap();
        assert_eq!(parsed.sentences.len(), 2);
        assert_eq!(parsed.sentences[0].tags[0], "B-User_Name");
        assert_eq!(parsed.sentences[0].line, 3);
        assert_eq!(parsed.sentences[1].line, 8);
    }

    #[test]
    fn mentions_follow_bio_runs() {
        let m = extract_mentions(&sentence(&["B-Library", "I-Library", "O"]), 0);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].span_start, m[0].span_end), (0, 1));
        assert_eq!(m[0].label, "Library");

        assert!(extract_mentions(&sentence(&["O", "O", "O"]), 0).is_empty());

        let m = extract_mentions(&sentence(&["B-OS", "B-OS"]), 3);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].span_start, m[0].span_end), (0, 0));
        assert_eq!((m[1].span_start, m[1].span_end), (1, 1));
        assert_eq!(m[1].id(), InstanceId { sentence: 3, start: 1, end: 1 });
    }

    #[test]
    fn label_set_keeps_first_appearance_order() {
        let s = sentence(&["B-Library", "O", "B-OS", "B-Library"]);
        let labels = build_label_set(&extract_mentions(&s, 0)).unwrap();
        assert_eq!(labels.names(), ["Library", "OS"]);
        assert!(matches!(build_label_set(&[]), Err(Error::EmptyCorpus)));
        assert!(matches!(LabelSet::new(["a", "a"]), Err(Error::DuplicateLabel(_))));
    }

    fn arb_sentence() -> impl Strategy<Value = LabeledSentence> {
        let tag = prop_oneof![
            Just("O".to_string()),
            "[AB]".prop_map(|l| format!("B-{l}")),
            "[AB]".prop_map(|l| format!("I-{l}")),
        ];
        prop::collection::vec(("[a-z]{1,4}", tag), 1..12).prop_map(|pairs| {
            let (tokens, tags) = pairs.into_iter().unzip();
            LabeledSentence { tokens, tags, line: 0 }
        })
    }

    proptest! {
        #[test]
        fn conll_round_trip(sents in prop::collection::vec(arb_sentence(), 1..5)) {
            let repaired = parse_conll(&to_conll(&sents)).unwrap().sentences;
            let again = parse_conll(&to_conll(&repaired)).unwrap();
            prop_assert!(again.diagnostics.is_empty());
            prop_assert_eq!(
                again.sentences.iter().map(|s| (&s.tokens, &s.tags)).collect::<Vec<_>>(),
                repaired.iter().map(|s| (&s.tokens, &s.tags)).collect::<Vec<_>>()
            );
        }

        #[test]
        fn mentions_tile_non_outside_positions(s in arb_sentence()) {
            let s = parse_conll(&to_conll(&[s])).unwrap().sentences.remove(0);
            let mentions = extract_mentions(&s, 0);
            let mut covered = vec![false; s.tags.len()];
            let mut last_end: Option<usize> = None;
            for m in &mentions {
                if let Some(e) = last_end { prop_assert!(m.span_start > e); }
                last_end = Some(m.span_end);
                for c in covered.iter_mut().take(m.span_end + 1).skip(m.span_start) {
                    *c = true;
                }
            }
            for (i, tag) in s.tags.iter().enumerate() {
                prop_assert_eq!(covered[i], tag != "O");
            }
            if !mentions.is_empty() {
                let labels = build_label_set(&mentions).unwrap();
                prop_assert!(mentions.iter().all(|m| labels.contains(&m.label)));
            }
        }
    }
}
