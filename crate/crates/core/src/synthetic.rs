//! Seeded synthetic corpora for desk-scale experiments and tests.
//!
//! * [`uniform_corpus`]: many labels with plenty of distinct mentions.
//! * [`cue_corpus`]: every sentence opens with the verbalizer word of its
//!   label, so a model that learned to copy that word transfers to label
//!   sets it has never seen.
//! * [`skewed_corpus`]: a few mention surfaces dominate each label and some
//!   surfaces occur under several labels.
//! * [`pattern_corpus`]: 200 mentions of which exactly 40 are covered by
//!   the bundled file-type and OS rules.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{corpus_instances, to_conll, LabelSet, LabeledSentence, TypingInstance};
use crate::prompting::Verbalizer;

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub sentences: Vec<LabeledSentence>,
    pub labels: LabelSet,
    pub verbalizer: Verbalizer,
}

impl SyntheticCorpus {
    pub fn instances(&self) -> Vec<TypingInstance> {
        corpus_instances(&self.sentences)
    }

    pub fn conll(&self) -> String {
        to_conll(&self.sentences)
    }

    /// Every token of the corpus, for vocabulary building.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flat_map(|s| s.tokens.iter().map(String::as_str))
    }
}

/// Filler words shared by every generator.
pub fn filler(i: usize) -> String {
    format!("w{i:02}")
}

pub const FILLERS: usize = 24;

fn labeled(tokens: Vec<String>, span: usize, label: &str) -> LabeledSentence {
    let tags = (0..tokens.len()).map(|i| if i == span { format!("B-{label}") } else { "O".to_string() }).collect();
    LabeledSentence { tokens, tags, line: 0 }
}

fn fillers(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| filler(rng.random_range(0..FILLERS))).collect()
}

fn verbalizer_for(labels: &[String], word: impl Fn(usize) -> String) -> Verbalizer {
    let mut v = Verbalizer::default();
    for (i, l) in labels.iter().enumerate() {
        v.entries.insert(l.clone(), vec![(word(i), 1.0)]);
    }
    v
}

/// `n_labels` labels named `L00..`, `per_label` single-token mentions each,
/// all surfaces distinct. Sentences are shuffled.
pub fn uniform_corpus(n_labels: usize, per_label: usize, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..n_labels).map(|i| format!("L{i:02}")).collect();
    let mut sentences = Vec::with_capacity(n_labels * per_label);
    for (li, label) in names.iter().enumerate() {
        for j in 0..per_label {
            let mut tokens = fillers(&mut rng, 4);
            let span = rng.random_range(0..=tokens.len());
            tokens.insert(span, format!("m{li:02}x{j:03}"));
            sentences.push(labeled(tokens, span, label));
        }
    }
    shuffle(&mut sentences, &mut rng);
    let verbalizer = verbalizer_for(&names, |i| format!("label{i:02}"));
    SyntheticCorpus { labels: LabelSet::new(names).expect("distinct names"), sentences, verbalizer }
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    items.shuffle(rng);
}

/// Cue-copy corpus. Labels are `{prefix}00..`, the verbalizer word of label
/// `i` is `cue{prefix}{i}` in lowercase, and every sentence reads
/// `<cue> w w <mention> w` with a mention drawn from a pool of names shared
/// by all labels. With probability `noise` the cue is swapped for another
/// label's word.
pub fn cue_corpus(prefix: &str, n_labels: usize, per_label: usize, noise: f64, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..n_labels).map(|i| format!("{prefix}{i:02}")).collect();
    let cue = |i: usize| format!("cue{}{i:02}", prefix.to_lowercase());
    let mut sentences = Vec::with_capacity(n_labels * per_label);
    for (li, label) in names.iter().enumerate() {
        for _ in 0..per_label {
            let shown = if n_labels > 1 && rng.random_bool(noise) {
                (li + rng.random_range(1..n_labels)) % n_labels
            } else {
                li
            };
            let mut tokens = vec![cue(shown)];
            tokens.extend(fillers(&mut rng, 2));
            tokens.push(format!("n{:03}", rng.random_range(0..200)));
            tokens.extend(fillers(&mut rng, 1));
            sentences.push(labeled(tokens, 3, label));
        }
    }
    shuffle(&mut sentences, &mut rng);
    let verbalizer = verbalizer_for(&names, cue);
    SyntheticCorpus { labels: LabelSet::new(names).expect("distinct names"), sentences, verbalizer }
}

/// Shape of a [`skewed_corpus`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewSpec {
    pub labels: usize,
    pub per_label: usize,
    /// Mention words owned by each label.
    pub surfaces: usize,
    /// Probability of the first surface of a label.
    pub head_share: f64,
    /// Surfaces shared by two labels each.
    pub ambiguous: usize,
    /// Filler words around each mention.
    pub context: usize,
}

impl Default for SkewSpec {
    fn default() -> Self {
        SkewSpec { labels: 6, per_label: 60, surfaces: 8, head_share: 0.6, ambiguous: 2, context: 2 }
    }
}

/// Skewed-surface corpus. The first surface of each label accounts for about
/// `head_share` of its instances and the rest share the remainder evenly;
/// about one instance in ten of a label owning an ambiguous surface uses it.
/// Only the surface carries the label.
pub fn skewed_corpus(spec: &SkewSpec, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.labels;
    let names: Vec<String> = (0..n).map(|i| format!("T{i:02}")).collect();
    let mut sentences = Vec::with_capacity(n * spec.per_label);
    let amb_owner: Vec<[usize; 2]> = (0..spec.ambiguous)
        .map(|a| {
            let first = a % n;
            [first, (first + 1 + a / n) % n]
        })
        .collect();
    for (li, label) in names.iter().enumerate() {
        let mine: Vec<usize> = (0..spec.ambiguous).filter(|&a| amb_owner[a].contains(&li)).collect();
        for _ in 0..spec.per_label {
            let surface = if !mine.is_empty() && rng.random_bool(0.1) {
                format!("amb{:02}", mine.choose(&mut rng).expect("non-empty"))
            } else if spec.surfaces == 1 || rng.random_bool(spec.head_share) {
                format!("s{li:02}x00")
            } else {
                format!("s{li:02}x{:02}", rng.random_range(1..spec.surfaces))
            };
            let mut tokens = fillers(&mut rng, spec.context);
            let span = rng.random_range(0..=tokens.len());
            tokens.insert(span, surface);
            sentences.push(labeled(tokens, span, label));
        }
    }
    shuffle(&mut sentences, &mut rng);
    let verbalizer = verbalizer_for(&names, |i| format!("type{i:02}"));
    SyntheticCorpus { labels: LabelSet::new(names).expect("distinct names"), sentences, verbalizer }
}

pub const PATTERN_LABELS: [&str; 6] = ["File_Type", "Operating_System", "Class", "Function", "Variable", "Library"];

/// 200 single-mention sentences. Sentence `i` is rule-covered iff
/// `i % 5 == 0`; covered mentions alternate between a file-type word and an
/// OS name, all others are identifiers no bundled rule matches.
pub fn pattern_corpus() -> SyntheticCorpus {
    const FILE_TYPES: [&str; 8] = ["csv", "XLSX", "pdf", "png", "json", "docx", "jpg", "zip"];
    const SYSTEMS: [&str; 5] = ["windows", "linux", "ubuntu", "android", "macOS"];
    let mut sentences = Vec::with_capacity(200);
    for i in 0..200 {
        let (label, surface) = if i % 5 == 0 {
            let k = i / 5;
            if k % 2 == 0 {
                ("File_Type", FILE_TYPES[k / 2 % FILE_TYPES.len()].to_string())
            } else {
                ("Operating_System", SYSTEMS[k / 2 % SYSTEMS.len()].to_string())
            }
        } else {
            match i % 4 {
                0 => ("Class", format!("Widget{i}")),
                1 => ("Function", format!("getValue{i}")),
                2 => ("Variable", format!("count_{i}")),
                _ => ("Library", format!("libfoo{i}")),
            }
        };
        let tokens = vec![filler(i % FILLERS), surface, filler((i + 7) % FILLERS)];
        sentences.push(labeled(tokens, 1, label));
    }
    let labels = LabelSet::new(PATTERN_LABELS).expect("distinct names");
    let names = labels.names().to_vec();
    let verbalizer = verbalizer_for(&names, |i| format!("kind{i}"));
    SyntheticCorpus { sentences, labels, verbalizer }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_label_set, label_counts, parse_conll};

    #[test]
    fn uniform_counts_and_round_trip() {
        let c = uniform_corpus(27, 20, 3);
        let inst = c.instances();
        assert_eq!(inst.len(), 540);
        assert!(label_counts(&inst, &c.labels).iter().all(|(_, n)| *n == 20));
        let reparsed = parse_conll(&c.conll()).unwrap();
        for (a, b) in reparsed.sentences.iter().zip(&c.sentences) {
            assert_eq!((&a.tokens, &a.tags), (&b.tokens, &b.tags));
        }
        assert_eq!(reparsed.sentences.len(), c.sentences.len());
        assert!(reparsed.diagnostics.is_empty());
    }

    #[test]
    fn cue_sentences_open_with_label_word() {
        let c = cue_corpus("Gen", 4, 10, 0.0, 1);
        for inst in c.instances() {
            let word = &c.verbalizer.entries[&inst.label][0].0;
            assert_eq!(&inst.tokens[0], word);
            assert_eq!((inst.span_start, inst.span_end), (3, 3));
        }
        assert_eq!(build_label_set(&c.instances()).unwrap().len(), 4);
    }

    #[test]
    fn skewed_corpus_is_dominated_by_head_surfaces() {
        let spec = SkewSpec { labels: 4, per_label: 100, ..Default::default() };
        let c = skewed_corpus(&spec, 0);
        let inst = c.instances();
        let head = inst.iter().filter(|i| i.mention().ends_with("x00")).count();
        assert!(head > 150 && head < 300, "{head}");
        assert!(inst.iter().any(|i| i.mention().starts_with("amb")));
    }

    #[test]
    fn pattern_corpus_shape() {
        let c = pattern_corpus();
        let inst = c.instances();
        assert_eq!(inst.len(), 200);
        let covered = inst.iter().filter(|i| i.label == "File_Type" || i.label == "Operating_System").count();
        assert_eq!(covered, 40);
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(cue_corpus("A", 3, 5, 0.2, 9).sentences, cue_corpus("A", 3, 5, 0.2, 9).sentences);
        let spec = SkewSpec::default();
        assert_eq!(skewed_corpus(&spec, 2).sentences, skewed_corpus(&spec, 2).sentences);
    }
}
