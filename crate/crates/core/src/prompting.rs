//! Masked prompts and the verbalizer that maps vocabulary predictions to labels.
//!
//! An instance `(x, m, y)` is rendered through a [`Template`] such as
//! `"{x} . {m} is a {MASK} ."`, tokenized, and fed to the backend. The MLM
//! head's word distribution at the mask is reduced to a label distribution by
//! averaging weighted verbalizer-word probabilities per label and
//! renormalising across labels.

use std::collections::HashMap;
use std::fmt::Write as _;

use indexmap::IndexMap;

use crate::corpus::{InstanceId, LabelSet, TypingInstance};
use crate::dual::{softmax, Scalar};
use crate::error::{Error, Result};

pub const DEFAULT_TEMPLATE: &str = "{x} . {m} is a {MASK} .";
pub const DEFAULT_VERBALIZER: &str = include_str!("../data/default_verbalizer.tsv");

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const MASK_TOKEN: &str = "[MASK]";

pub trait Tokenizer: Send + Sync {
    /// Token ids for one pre-split surface token or a run of literal text.
    fn tokenize(&self, text: &str) -> Vec<u32>;
    /// Id of `word` if it is a single vocabulary item.
    fn token_id(&self, word: &str) -> Option<u32>;
    fn mask_token(&self) -> &str;
    fn mask_token_id(&self) -> u32;
    fn vocab_size(&self) -> usize;
}

/// Lowercased whitespace word vocabulary with `[PAD]`, `[UNK]`, `[MASK]` at ids 0..3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordVocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl WordVocab {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = WordVocab { words: Vec::new(), index: HashMap::new() };
        for special in [PAD_TOKEN, UNK_TOKEN, MASK_TOKEN] {
            vocab.push(special.to_string());
        }
        for w in words {
            let w = w.as_ref();
            let key = if is_special(w) { w.to_string() } else { w.to_lowercase() };
            vocab.push(key);
        }
        vocab
    }

    fn push(&mut self, word: String) {
        if !self.index.contains_key(&word) {
            self.index.insert(word.clone(), self.words.len() as u32);
            self.words.push(word);
        }
    }

    /// Builds a vocabulary of at most `max_size` entries: the special tokens,
    /// then every `required` word, then corpus tokens by descending frequency
    /// (ties broken lexicographically).
    pub fn build<'a, I, R>(corpus_tokens: I, required: R, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
        R: IntoIterator<Item = &'a str>,
    {
        let mut vocab = WordVocab::from_words(required);
        if vocab.len() > max_size {
            return Err(Error::InvalidConfig(format!(
                "vocabulary needs {} required entries but vocab_size is {max_size}",
                vocab.len()
            )));
        }
        let mut freq: HashMap<String, usize> = HashMap::new();
        for tok in corpus_tokens {
            *freq.entry(tok.to_lowercase()).or_default() += 1;
        }
        let mut ranked: Vec<(String, usize)> =
            freq.into_iter().filter(|(w, _)| !vocab.index.contains_key(w)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (w, _) in ranked {
            if vocab.len() >= max_size {
                break;
            }
            vocab.push(w);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let words: Vec<&str> = text.lines().collect();
        if words.len() < 3 || words[..3] != [PAD_TOKEN, UNK_TOKEN, MASK_TOKEN] {
            return Err(Error::Checkpoint("vocabulary must start with [PAD], [UNK], [MASK]".into()));
        }
        Ok(WordVocab::from_words(&words[3..]))
    }
}

fn is_special(w: &str) -> bool {
    matches!(w, PAD_TOKEN | UNK_TOKEN | MASK_TOKEN)
}

impl Tokenizer for WordVocab {
    fn tokenize(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|w| {
                let key = if is_special(w) { w.to_string() } else { w.to_lowercase() };
                self.index.get(&key).copied().unwrap_or(1)
            })
            .collect()
    }

    fn token_id(&self, word: &str) -> Option<u32> {
        if word.split_whitespace().count() != 1 {
            return None;
        }
        self.index.get(&word.to_lowercase()).copied()
    }

    fn mask_token(&self) -> &str {
        MASK_TOKEN
    }

    fn mask_token_id(&self) -> u32 {
        2
    }

    fn vocab_size(&self) -> usize {
        self.words.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Sentence,
    Mention,
    Mask,
}

/// Prompt pattern with `{x}` (sentence), `{m}` (mention) and one `{MASK}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pattern: String,
    segments: Vec<Segment>,
}

impl Default for Template {
    fn default() -> Self {
        Template::parse(DEFAULT_TEMPLATE).expect("default template is valid")
    }
}

impl Template {
    pub fn parse(pattern: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut rest = pattern;
        let mut literal = String::new();
        while !rest.is_empty() {
            let found = [("{x}", Segment::Sentence), ("{m}", Segment::Mention), ("{MASK}", Segment::Mask)]
                .into_iter()
                .find(|(p, _)| rest.starts_with(p));
            match found {
                Some((p, seg)) => {
                    if !literal.trim().is_empty() {
                        segments.push(Segment::Literal(literal.trim().to_string()));
                    }
                    literal.clear();
                    segments.push(seg);
                    rest = &rest[p.len()..];
                }
                None => {
                    let c = rest.chars().next().unwrap();
                    literal.push(c);
                    rest = &rest[c.len_utf8()..];
                }
            }
        }
        if !literal.trim().is_empty() {
            segments.push(Segment::Literal(literal.trim().to_string()));
        }

        let count = |s: &Segment| segments.iter().filter(|x| *x == s).count();
        if count(&Segment::Mask) != 1 {
            return Err(Error::InvalidTemplate(format!("`{pattern}` must contain exactly one {{MASK}}")));
        }
        if count(&Segment::Mention) == 0 {
            return Err(Error::InvalidTemplate(format!("`{pattern}` must contain {{m}}")));
        }
        if count(&Segment::Sentence) > 1 {
            return Err(Error::InvalidTemplate(format!("`{pattern}` may contain {{x}} at most once")));
        }
        Ok(Template { pattern: pattern.to_string(), segments })
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// Literal words of the pattern, which a word vocabulary must contain.
    pub fn literal_words(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().flat_map(|s| match s {
            Segment::Literal(t) => t.split_whitespace().collect::<Vec<_>>(),
            _ => Vec::new(),
        })
    }

    /// The prompt as text, with `mask` substituted for `{MASK}`.
    pub fn render(&self, inst: &TypingInstance, mask: &str) -> String {
        let parts: Vec<String> = self
            .segments
            .iter()
            .map(|s| match s {
                Segment::Literal(t) => t.clone(),
                Segment::Sentence => inst.sentence_text(),
                Segment::Mention => inst.mention(),
                Segment::Mask => mask.to_string(),
            })
            .collect();
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptedInput {
    pub token_ids: Vec<u32>,
    pub mask_position: usize,
    pub instance: InstanceId,
}

/// Tokenizes the templated instance. When the prompt is too long, tokens are
/// dropped from the end of the sentence copy only.
pub fn apply_template(
    inst: &TypingInstance,
    tpl: &Template,
    tokenizer: &dyn Tokenizer,
    max_seq_len: usize,
) -> Result<PromptedInput> {
    let sentence: Vec<u32> = inst.tokens.iter().flat_map(|t| tokenizer.tokenize(t)).collect();
    let mention: Vec<u32> = inst.mention_tokens().iter().flat_map(|t| tokenizer.tokenize(t)).collect();

    let mut pieces: Vec<Vec<u32>> = Vec::with_capacity(tpl.segments.len());
    let mut overhead = 0;
    for seg in &tpl.segments {
        let ids = match seg {
            Segment::Literal(t) => tokenizer.tokenize(t),
            Segment::Mention => mention.clone(),
            Segment::Mask => vec![tokenizer.mask_token_id()],
            Segment::Sentence => Vec::new(),
        };
        overhead += ids.len();
        pieces.push(ids);
    }
    if overhead > max_seq_len {
        return Err(Error::MentionTooLong { need: overhead, max: max_seq_len });
    }
    let keep = sentence.len().min(max_seq_len - overhead);

    let mut token_ids = Vec::with_capacity(overhead + keep);
    let mut mask_position = 0;
    for (seg, ids) in tpl.segments.iter().zip(pieces) {
        match seg {
            Segment::Sentence => token_ids.extend_from_slice(&sentence[..keep]),
            Segment::Mask => {
                mask_position = token_ids.len();
                token_ids.extend(ids);
            }
            _ => token_ids.extend(ids),
        }
    }
    Ok(PromptedInput { token_ids, mask_position, instance: inst.id() })
}

/// Per-label weighted word lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Verbalizer {
    pub entries: IndexMap<String, Vec<(String, f64)>>,
}

impl Verbalizer {
    /// Parses `<label>\t<word>[:<weight>][,<word>[:<weight>]...]` lines.
    /// Blank lines and `#` comments are ignored; missing weights are 1.0.
    pub fn parse(text: &str) -> Result<Self> {
        let mut v = Verbalizer::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| Error::MalformedLine { line: line_no, reason };
            let (label, words) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected `<label>\\t<words>`".into()))?;
            let label = label.trim();
            let mut list = Vec::new();
            for item in words.split(',') {
                let item = item.trim();
                let (word, weight) = match item.split_once(':') {
                    Some((w, x)) => {
                        let x: f64 = x.trim().parse().map_err(|_| bad(format!("bad weight in `{item}`")))?;
                        (w.trim(), x)
                    }
                    None => (item, 1.0),
                };
                if word.is_empty() {
                    return Err(bad("empty verbalizer word".into()));
                }
                if !(weight.is_finite() && weight > 0.0) {
                    return Err(bad(format!("weight for `{word}` must be positive")));
                }
                list.push((word.to_string(), weight));
            }
            if v.entries.insert(label.to_string(), list).is_some() {
                return Err(bad(format!("label `{label}` listed twice")));
            }
        }
        Ok(v)
    }

    pub fn default_set() -> Self {
        Verbalizer::parse(DEFAULT_VERBALIZER).expect("shipped verbalizer parses")
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.values().flatten().map(|(w, _)| w.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (label, words) in &self.entries {
            let items: Vec<String> = words.iter().map(|(w, x)| format!("{w}:{x}")).collect();
            let _ = writeln!(out, "{label}\t{}", items.join(","));
        }
        out
    }

    /// Resolves words to vocabulary ids in label-set order.
    pub fn compile(&self, labels: &LabelSet, tokenizer: &dyn Tokenizer) -> Result<CompiledVerbalizer> {
        let mut words = Vec::with_capacity(labels.len());
        for label in labels.names() {
            let entry = self
                .entries
                .get(label)
                .filter(|e| !e.is_empty())
                .ok_or_else(|| Error::MissingVerbalizerEntry(label.clone()))?;
            let mut resolved = Vec::with_capacity(entry.len());
            for (word, weight) in entry {
                let id = tokenizer
                    .token_id(word)
                    .ok_or_else(|| Error::UnknownWord { label: label.clone(), word: word.clone() })?;
                resolved.push((id as usize, *weight));
            }
            words.push(resolved);
        }
        Ok(CompiledVerbalizer { words })
    }
}

/// Verbalizer resolved against a label set and vocabulary: for each label
/// index, the `(word id, weight)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledVerbalizer {
    pub words: Vec<Vec<(usize, f64)>>,
}

impl CompiledVerbalizer {
    pub fn num_labels(&self) -> usize {
        self.words.len()
    }

    fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        for words in &self.words {
            if let Some((id, _)) = words.iter().find(|(id, _)| *id >= vocab_size) {
                return Err(Error::UnknownWord { label: String::new(), word: format!("#{id}") });
            }
        }
        Ok(())
    }
}

/// Unnormalised label scores `(1/|V_y|) Σ η_i p(w_i)`.
pub fn label_scores<T: Scalar>(pw: &[T], verbalizer: &CompiledVerbalizer) -> Vec<T> {
    verbalizer
        .words
        .iter()
        .map(|words| {
            let mut s = T::zero();
            for &(id, eta) in words {
                s += pw[id].scale(eta);
            }
            s.scale(1.0 / words.len() as f64)
        })
        .collect()
}

/// Scores renormalised to a distribution; all-zero scores give the uniform one.
pub fn normalize_scores<T: Scalar>(scores: &[T]) -> Vec<T> {
    let mut total = T::zero();
    for &s in scores {
        total += s;
    }
    if total.value() == 0.0 {
        let u = T::from_f64(1.0 / scores.len() as f64);
        return vec![u; scores.len()];
    }
    scores.iter().map(|&s| s / total).collect()
}

pub fn label_distribution(pw: &[f64], verbalizer: &CompiledVerbalizer) -> Result<Vec<f64>> {
    verbalizer.check_vocab(pw.len())?;
    Ok(normalize_scores(&label_scores(pw, verbalizer)))
}

/// Borrowed view of the MLM head: the `|V| x h` embedding matrix `E` and the
/// transform `W1` (`h x h`, row-major) with bias `b1`.
#[derive(Debug, Clone, Copy)]
pub struct MlmHead<'a> {
    pub embed: &'a [f64],
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub vocab_size: usize,
    pub hidden: usize,
}

/// `softmax(E · tanh(W1 h + b1))` over the whole vocabulary.
pub fn word_distribution(h: &[f64], head: &MlmHead<'_>) -> Result<Vec<f64>> {
    let d = head.hidden;
    if h.len() != d
        || head.w1.len() != d * d
        || head.b1.len() != d
        || head.embed.len() != head.vocab_size * d
    {
        return Err(Error::DimensionMismatch(format!(
            "h has {} entries, head expects hidden {d} and vocab {}",
            h.len(),
            head.vocab_size
        )));
    }
    let z: Vec<f64> = (0..d)
        .map(|i| {
            let row = &head.w1[i * d..(i + 1) * d];
            (row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + head.b1[i]).tanh()
        })
        .collect();
    let logits: Vec<f64> = head
        .embed
        .chunks_exact(d)
        .map(|e| e.iter().zip(&z).map(|(a, b)| a * b).sum())
        .collect();
    Ok(softmax(&logits))
}
