//! K-shot-N-way episode sampling and curated support sets.
//!
//! Instance identity is `(sentence index, span_start, span_end)`; the
//! duplicate key is the lowercased mention surface. All sampling goes through
//! a ChaCha8 generator seeded from the config, so every output is a pure
//! function of `(instances, config, seed)`.

use std::collections::{HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_label_set, parse_conll, corpus_instances, LabelSet, TypingInstance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub k_shot: usize,
    pub n_way: usize,
    pub dedup_surface: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { k_shot: 5, n_way: 27, dedup_surface: false, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_shot < 1 {
            return Err(Error::InvalidConfig("k_shot must be >= 1".into()));
        }
        if self.n_way < 2 {
            return Err(Error::InvalidConfig("n_way must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: Vec<TypingInstance>,
    pub query: Vec<TypingInstance>,
    pub k_support: usize,
    pub k_query: usize,
    pub labels: LabelSet,
}

/// Groups instances by label, preserving corpus order inside each group.
fn group_by_label(instances: &[TypingInstance]) -> HashMap<&str, Vec<&TypingInstance>> {
    let mut groups: HashMap<&str, Vec<&TypingInstance>> = HashMap::new();
    for inst in instances {
        groups.entry(inst.label.as_str()).or_default().push(inst);
    }
    groups
}

fn usable_count(candidates: &[&TypingInstance], dedup: bool) -> usize {
    if dedup {
        candidates.iter().map(|c| c.surface_key()).collect::<HashSet<_>>().len()
    } else {
        candidates.len()
    }
}

/// Draws `need` instances of one label without replacement.
fn draw(
    label: &str,
    candidates: &[&TypingInstance],
    need: usize,
    dedup: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TypingInstance>> {
    let have = usable_count(candidates, dedup);
    if have < need {
        return Err(Error::InsufficientInstances { label: label.to_string(), have, need });
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(rng);
    let mut seen = HashSet::new();
    let mut picked = Vec::with_capacity(need);
    for i in order {
        if picked.len() == need {
            break;
        }
        let inst = candidates[i];
        if dedup && !seen.insert(inst.surface_key()) {
            continue;
        }
        picked.push(inst.clone());
    }
    Ok(picked)
}

/// Samples exactly `k_shot` instances for every label in `labels`.
pub fn sample_support(
    instances: &[TypingInstance],
    labels: &LabelSet,
    cfg: &SamplerConfig,
) -> Result<Vec<TypingInstance>> {
    cfg.validate()?;
    let groups = group_by_label(instances);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(labels.len() * cfg.k_shot);
    for label in labels.names() {
        let candidates = groups.get(label.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        out.extend(draw(label, candidates, cfg.k_shot, cfg.dedup_surface, &mut rng)?);
    }
    Ok(out)
}

/// Samples `n_way` labels from the corpus inventory, then `k_shot + k_query`
/// instances per label, split into support and query.
///
/// When `n_way` covers the whole inventory every label must have enough
/// instances. Otherwise the labels are drawn from those that do.
pub fn sample_episode(instances: &[TypingInstance], cfg: &SamplerConfig, k_query: usize) -> Result<Episode> {
    cfg.validate()?;
    let inventory = build_label_set(instances)?;
    let groups = group_by_label(instances);
    let need = cfg.k_shot + k_query;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let chosen: Vec<&str> = if cfg.n_way >= inventory.len() {
        if cfg.n_way > inventory.len() {
            return Err(Error::InsufficientLabels { have: inventory.len(), need: cfg.n_way });
        }
        inventory.names().iter().map(String::as_str).collect()
    } else {
        let eligible: Vec<&str> = inventory
            .names()
            .iter()
            .map(String::as_str)
            .filter(|l| usable_count(&groups[l], cfg.dedup_surface) >= need)
            .collect();
        if eligible.len() < cfg.n_way {
            return Err(Error::InsufficientLabels { have: eligible.len(), need: cfg.n_way });
        }
        let picked: HashSet<&str> = eligible.choose_multiple(&mut rng, cfg.n_way).copied().collect();
        eligible.into_iter().filter(|l| picked.contains(l)).collect()
    };

    let mut support = Vec::with_capacity(cfg.k_shot * chosen.len());
    let mut query = Vec::with_capacity(k_query * chosen.len());
    for &label in &chosen {
        let mut drawn = draw(label, &groups[label], need, cfg.dedup_surface, &mut rng)?;
        let rest = drawn.split_off(cfg.k_shot);
        support.extend(drawn);
        query.extend(rest);
    }
    Ok(Episode {
        support,
        query,
        k_support: cfg.k_shot,
        k_query,
        labels: LabelSet::new(chosen)?,
    })
}

/// `n_tasks` independent episodes; task `i` uses seed `seed + i`.
pub fn make_task_stream(
    instances: &[TypingInstance],
    cfg: &SamplerConfig,
    k_query: usize,
    n_tasks: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    (0..n_tasks)
        .map(|i| {
            let task_cfg = SamplerConfig { seed: seed.wrapping_add(i as u64), ..cfg.clone() };
            sample_episode(instances, &task_cfg, k_query)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateSurface {
    pub label: String,
    pub surface: String,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SupportReport {
    pub counts: Vec<(String, usize)>,
    pub duplicates: Vec<DuplicateSurface>,
}

/// Loads a hand-curated support set and checks it holds exactly `k` instances
/// per label. Duplicate surfaces within a label are reported, not rejected.
pub fn load_manual_support(
    text: &str,
    labels: &LabelSet,
    k: usize,
) -> Result<(Vec<TypingInstance>, SupportReport)> {
    let parsed = parse_conll(text)?;
    let instances = corpus_instances(&parsed.sentences);
    if let Some(bad) = instances.iter().find(|i| !labels.contains(&i.label)) {
        return Err(Error::UnknownLabel(bad.label.clone()));
    }

    let mut report = SupportReport::default();
    for label in labels.names() {
        let of_label: Vec<&TypingInstance> = instances.iter().filter(|i| &i.label == label).collect();
        if of_label.len() != k {
            return Err(Error::CountMismatch { label: label.clone(), have: of_label.len(), need: k });
        }
        report.counts.push((label.clone(), k));

        let mut surfaces: indexmap::IndexMap<String, usize> = indexmap::IndexMap::new();
        for inst in of_label {
            *surfaces.entry(inst.surface_key()).or_default() += 1;
        }
        for (surface, count) in surfaces {
            if count > 1 {
                log::warn!("support label `{label}` repeats surface `{surface}` {count} times");
                report.duplicates.push(DuplicateSurface { label: label.clone(), surface, count });
            }
        }
    }
    Ok((instances, report))
}
