//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any gating criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fsner::backend::{Backend, Objective, TinyBackend, TinyConfig, TrainExample};
use fsner::corpus::{InstanceId, LabelSet, TypingInstance};
use fsner::episodes::{make_task_stream, sample_episode, sample_support, SamplerConfig};
use fsner::evaluation::{evaluate, EvalReport};
use fsner::metalearn::{meta_step, meta_test, meta_train, prepare_episode, MetaConfig, MetaTask, PromptLoss, TaskLoss};
use fsner::params::{ParamSet, Tensor};
use fsner::patterns::{classify_mention, merge_predictions, MergePolicy, RuleSet};
use fsner::prompting::{Template, Verbalizer, WordVocab};
use fsner::synthetic::{cue_corpus, pattern_corpus, skewed_corpus, uniform_corpus, SkewSpec, SyntheticCorpus, PATTERN_LABELS};
use fsner::training::{kl_loss, KlDirection, TrainConfig, TypingTask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn vocab_for(corpora: &[&SyntheticCorpus], tpl: &Template) -> WordVocab {
    let tokens: Vec<&str> = corpora.iter().flat_map(|c| c.tokens()).collect();
    let mut required: Vec<&str> = tpl.literal_words().collect();
    for c in corpora {
        required.extend(c.verbalizer.words());
    }
    WordVocab::build(tokens, required, 4000).unwrap()
}

// 1. Gradient correctness ---------------------------------------------------

const FD_EPS: f64 = 1e-4;
const FD_REL_TOL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero and must agree in
/// absolute terms instead.
const FD_ZERO: f64 = 1e-6;
const FD_ZERO_ABS_TOL: f64 = 1e-9;
const FD_COORDS: usize = 5;

fn gradient_check() -> Check {
    let t0 = Instant::now();
    let corpus = cue_corpus("Gen", 4, 3, 0.2, 11);
    let tpl = Template::default();
    let backend = TinyBackend::new(vocab_for(&[&corpus], &tpl), TinyConfig::default()).unwrap();
    let task = TypingTask::new(&backend, tpl, &corpus.verbalizer, corpus.labels.clone()).unwrap();
    let instances = corpus.instances();
    let mut checked = 0;
    for (direction, smoothing) in [(KlDirection::TargetToPred, 0.0), (KlDirection::PredToTarget, 0.2)] {
        let batch: Vec<TrainExample> = task.examples(&backend, &instances[..4], smoothing).unwrap();
        let objective = Objective { verbalizer: &task.verbalizer, direction };
        let params = backend.init_params(5);
        let (_, grad) = backend.loss_and_grad(&params, &batch, &objective).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for (name, g) in grad.iter() {
            let active: Vec<usize> = (0..g.len()).filter(|&i| g.data[i].abs() >= FD_ZERO).collect();
            ensure(active.len() >= FD_COORDS, || format!("{name}: only {} non-zero gradient entries", active.len()))?;
            let mut coords: Vec<usize> = (0..FD_COORDS).map(|_| rng.random_range(0..g.len())).collect();
            coords.extend((0..FD_COORDS).map(|_| active[rng.random_range(0..active.len())]));
            for i in coords {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    p.get_mut(name).unwrap().data[i] += delta;
                    backend.loss(&p, &batch, &objective).unwrap()
                };
                let fd = (eval(FD_EPS) - eval(-FD_EPS)) / (2.0 * FD_EPS);
                let an = g.data[i];
                let scale = an.abs().max(fd.abs());
                if scale < FD_ZERO {
                    ensure((an - fd).abs() < FD_ZERO_ABS_TOL, || format!("{name}[{i}]: {an:e} vs {fd:e}"))?;
                } else {
                    let rel = (an - fd).abs() / scale;
                    ensure(rel < FD_REL_TOL, || format!("{name}[{i}] ({direction:?}): rel error {rel:e}"))?;
                }
                checked += 1;
            }
        }
    }
    within(t0.elapsed(), Duration::from_secs(30))?;
    Ok(format!("{checked} coordinates over 8 arrays and both KL directions"))
}

// 2. MAML algebra -------------------------------------------------------------

/// `L(θ) = ½ θ²` on a single scalar.
struct HalfSquare;

fn scalar(x: f64) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("theta", Tensor::scalar(x));
    p
}

impl TaskLoss for HalfSquare {
    type Data = ();

    fn loss_and_grad(&self, params: &ParamSet, _: &()) -> fsner::Result<(f64, ParamSet)> {
        let x = params.values("theta")?[0];
        Ok((0.5 * x * x, scalar(x)))
    }

    fn hessian_vector_product(&self, _: &ParamSet, _: &(), v: &ParamSet) -> fsner::Result<ParamSet> {
        Ok(v.clone())
    }
}

const MAML_TOL: f64 = 1e-6;

fn maml_algebra() -> Check {
    let t0 = Instant::now();
    let (theta, alpha, beta) = (1.0, 0.1, 1.0);
    let task = MetaTask { support: (), query: () };
    let cfg = |first_order| MetaConfig { inner_lr: alpha, meta_lr: beta, first_order, ..Default::default() };
    let value = |p: &ParamSet| p.values("theta").unwrap()[0];

    let (fo, _) = meta_step(&HalfSquare, &scalar(theta), &[&task], &cfg(true)).unwrap();
    ensure((value(&fo) - 0.1).abs() < MAML_TOL, || format!("first-order θ' = {}", value(&fo)))?;
    let (exact, _) = meta_step(&HalfSquare, &scalar(theta), &[&task], &cfg(false)).unwrap();
    ensure((value(&exact) - 0.19).abs() < MAML_TOL, || format!("exact θ' = {}", value(&exact)))?;

    // g(θ) = L(θ − α∇L(θ)), differentiated numerically.
    let composed = |t: f64| {
        let phi = t - alpha * t;
        0.5 * phi * phi
    };
    let h = 1e-5;
    let fd_grad = (composed(theta + h) - composed(theta - h)) / (2.0 * h);
    let fd_theta = theta - beta * fd_grad;
    ensure((value(&exact) - fd_theta).abs() < MAML_TOL, || format!("exact {} vs finite differences {fd_theta}", value(&exact)))?;
    within(t0.elapsed(), Duration::from_secs(1))?;
    Ok(format!("first-order θ'={:.6}, exact θ'={:.6}, finite differences {fd_theta:.6}", value(&fo), value(&exact)))
}

// 3. KL identities -------------------------------------------------------------

const KL_TOL: f64 = 1e-9;

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(1e-3..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn kl_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let uniform = vec![1.0 / 27.0; 27];
    let mut onehot = vec![0.0; 27];
    onehot[13] = 1.0;
    let v = kl_loss(&uniform, &onehot).unwrap();
    ensure((v - 27f64.ln()).abs() < KL_TOL, || format!("uniform vs one-hot: {v}"))?;
    for case in 0..1000 {
        let n = rng.random_range(2..=30);
        let p = random_distribution(&mut rng, n);
        let self_kl = kl_loss(&p, &p).unwrap();
        ensure(self_kl == 0.0, || format!("case {case}: kl(p, p) = {self_kl:e}"))?;
        let gold = rng.random_range(0..n);
        let mut t = vec![0.0; n];
        t[gold] = 1.0;
        let ce = -p[gold].ln();
        let kl = kl_loss(&p, &t).unwrap();
        ensure((kl - ce).abs() < KL_TOL, || format!("case {case}: kl {kl} vs cross-entropy {ce}"))?;
    }
    Ok(format!("kl(uniform27, one-hot) = {v:.9}; 1000 cross-entropy cases"))
}

// 4. Sampler invariants ---------------------------------------------------------

fn sampler_invariants() -> Check {
    let corpus = uniform_corpus(27, 25, 4);
    let instances = corpus.instances();
    for seed in 0..1000u64 {
        let cfg = SamplerConfig { k_shot: 5, n_way: 27, dedup_surface: false, seed };
        let ep = sample_episode(&instances, &cfg, 15).unwrap();
        ensure(ep.support.len() == 135 && ep.query.len() == 405, || {
            format!("seed {seed}: {} support, {} query", ep.support.len(), ep.query.len())
        })?;
        for label in corpus.labels.names() {
            let s = ep.support.iter().filter(|i| &i.label == label).count();
            let q = ep.query.iter().filter(|i| &i.label == label).count();
            ensure((s, q) == (5, 15), || format!("seed {seed}, {label}: {s}/{q}"))?;
        }
        let support_ids: HashSet<InstanceId> = ep.support.iter().map(TypingInstance::id).collect();
        ensure(support_ids.len() == 135, || format!("seed {seed}: repeated support instance"))?;
        ensure(ep.query.iter().all(|i| !support_ids.contains(&i.id())), || format!("seed {seed}: support and query overlap"))?;
        let again = sample_episode(&instances, &cfg, 15).unwrap();
        let ids = |v: &[TypingInstance]| v.iter().map(TypingInstance::id).collect::<Vec<_>>();
        ensure(ids(&again.support) == ids(&ep.support) && ids(&again.query) == ids(&ep.query), || {
            format!("seed {seed}: not deterministic")
        })?;
    }
    Ok("1000 seeds: 135/405 split, 5/15 per label, disjoint, deterministic".into())
}

// 5. Evaluator oracle ------------------------------------------------------------

struct OracleScore {
    p: f64,
    r: f64,
    f1: f64,
    support: usize,
}

/// Direct per-instance counting.
fn oracle(golds: &[usize], preds: &[usize], n_labels: usize) -> (f64, f64, BTreeMap<usize, OracleScore>) {
    let mut per = BTreeMap::new();
    let mut f1s = Vec::new();
    for l in 0..n_labels {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&g, &p) in golds.iter().zip(preds) {
            match (g == l, p == l) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        if tp + fp + fn_ == 0 {
            continue;
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        if tp + fn_ > 0 {
            f1s.push(f1);
        }
        per.insert(l, OracleScore { p, r, f1, support: tp + fn_ });
    }
    let correct = golds.iter().zip(preds).filter(|(g, p)| g == p).count();
    let micro = correct as f64 / golds.len() as f64;
    let macro_f1 = f1s.iter().sum::<f64>() / f1s.len() as f64;
    (micro, macro_f1, per)
}

fn report_for(golds: &[usize], preds: &[usize], labels: &LabelSet, order: &[usize]) -> EvalReport {
    let id = |i: usize| InstanceId { sentence: i, start: 0, end: 0 };
    let g: Vec<_> = order.iter().map(|&i| (id(i), labels.name(golds[i]).to_string())).collect();
    let p: Vec<_> = order.iter().rev().map(|&i| (id(i), labels.name(preds[i]).to_string())).collect();
    evaluate(&p, &g, labels).unwrap()
}

fn evaluator_oracle() -> Check {
    let worked = LabelSet::new(["A", "B"]).unwrap();
    let r = report_for(&[0, 0, 1, 1], &[0, 1, 1, 1], &worked, &[0, 1, 2, 3]);
    ensure(r.micro_f1 == 0.75, || format!("worked example micro {}", r.micro_f1))?;
    ensure((r.macro_f1 - 0.7333333333333333).abs() < 1e-9, || format!("worked example macro {}", r.macro_f1))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let n_labels = rng.random_range(1..=6);
        let n = rng.random_range(1..=50);
        let names: Vec<String> = (0..n_labels).map(|i| format!("c{i}")).collect();
        let labels = LabelSet::new(names).unwrap();
        let golds: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_labels)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_labels)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let r = report_for(&golds, &preds, &labels, &order);
        let (micro, macro_f1, per) = oracle(&golds, &preds, n_labels);
        ensure(r.micro_f1 == micro, || format!("case {case}: micro {} vs {micro}", r.micro_f1))?;
        ensure(r.macro_f1 == macro_f1, || format!("case {case}: macro {} vs {macro_f1}", r.macro_f1))?;
        ensure(r.per_category.len() == per.len(), || format!("case {case}: category sets differ"))?;
        for (l, o) in &per {
            let s = &r.per_category[labels.name(*l)];
            ensure((s.precision, s.recall, s.f1, s.support) == (o.p, o.r, o.f1, o.support), || {
                format!("case {case}, label {l}: scores differ")
            })?;
        }
        ensure(r.total() == n, || format!("case {case}: confusion total {}", r.total()))?;
        ensure((0.0..=1.0).contains(&r.micro_f1) && (0.0..=1.0).contains(&r.macro_f1), || format!("case {case}: out of range"))?;
    }
    Ok("worked example micro 0.75 / macro 0.7333; 1000 random cases identical to direct counting".into())
}

// 6. Learn-to-learn --------------------------------------------------------------

const PAIRED_SEEDS: u64 = 10;

struct CueRun {
    meta: f64,
    random: f64,
}

/// Meta-trains on a 24-label cue family, then fine-tunes 5-shot on an
/// unseen 6-label family from the meta-trained and from the random
/// initialization.
fn cue_experiment(seed: u64) -> CueRun {
    let general = cue_corpus("Gen", 24, 30, 0.1, seed);
    let target = cue_corpus("Tgt", 6, 30, 0.1, seed + 1000);
    let tpl = Template::default();
    let backend =
        TinyBackend::new(vocab_for(&[&general, &target], &tpl), TinyConfig { hidden_dim: 16, max_seq_len: 32, ..Default::default() })
            .unwrap();
    let theta0 = backend.init_params(seed);

    let sampler = SamplerConfig { k_shot: 5, n_way: 6, dedup_surface: false, seed };
    let episodes = make_task_stream(&general.instances(), &sampler, 5, 40, seed * 7919).unwrap();
    let pool: Vec<_> = episodes.iter().map(|e| prepare_episode(&backend, e, &tpl, &general.verbalizer, 0.0).unwrap()).collect();
    let meta_cfg = MetaConfig { inner_lr: 0.5, meta_lr: 0.5, outer_batch_size: 8, max_meta_steps: 100, seed, ..Default::default() };
    let theta = meta_train(&PromptLoss::new(&backend), &theta0, &pool, &meta_cfg, |_, _| Ok(())).unwrap();

    let instances = target.instances();
    let support = sample_support(&instances, &target.labels, &SamplerConfig { k_shot: 5, n_way: 6, dedup_surface: false, seed }).unwrap();
    let held: HashSet<InstanceId> = support.iter().map(TypingInstance::id).collect();
    let test: Vec<_> = instances.into_iter().filter(|i| !held.contains(&i.id())).collect();
    let task = TypingTask::new(&backend, tpl, &target.verbalizer, target.labels.clone()).unwrap();
    let train = TrainConfig { lr: 0.5, epochs: 10, seed, ..Default::default() };
    let score = |init: &ParamSet| meta_test(&backend, init, &support, &test, &task, &train).unwrap().report.micro_f1;
    CueRun { meta: score(&theta), random: score(&theta0) }
}

fn learn_to_learn() -> Check {
    let t0 = Instant::now();
    let runs: Vec<CueRun> = (0..PAIRED_SEEDS).map(cue_experiment).collect();
    let n = runs.len() as f64;
    let meta = runs.iter().map(|r| r.meta).sum::<f64>() / n;
    let random = runs.iter().map(|r| r.random).sum::<f64>() / n;
    let delta = runs.iter().map(|r| r.meta - r.random).sum::<f64>() / n;
    let summary = format!("meta-init {meta:.4} vs random-init {random:.4}, paired delta {delta:+.4} over {PAIRED_SEEDS} seeds");
    ensure(meta >= random && delta > 0.0, || summary.clone())?;
    within(t0.elapsed(), Duration::from_secs(600))?;
    Ok(format!("{summary}, {:.1?}", t0.elapsed()))
}

// 7. Support-set curation ------------------------------------------------------------

/// Pool where one surface per label dominates; the test corpus draws
/// surfaces evenly.
fn curation_experiment(seed: u64) -> (f64, f64) {
    let spec = SkewSpec::default();
    let pool = skewed_corpus(&spec, seed);
    let test = skewed_corpus(&SkewSpec { head_share: 1.0 / spec.surfaces as f64, ..spec }, seed + 5000);
    let tpl = Template::default();
    let backend =
        TinyBackend::new(vocab_for(&[&pool, &test], &tpl), TinyConfig { hidden_dim: 16, max_seq_len: 32, ..Default::default() }).unwrap();
    let init = backend.init_params(seed);
    let task = TypingTask::new(&backend, tpl, &pool.verbalizer, pool.labels.clone()).unwrap();
    let train = TrainConfig { lr: 0.5, epochs: 30, seed, ..Default::default() };
    let (pool_inst, test_inst) = (pool.instances(), test.instances());
    let score = |dedup_surface| {
        let cfg = SamplerConfig { k_shot: 5, n_way: spec.labels, dedup_surface, seed };
        let support = sample_support(&pool_inst, &pool.labels, &cfg).unwrap();
        meta_test(&backend, &init, &support, &test_inst, &task, &train).unwrap().report.micro_f1
    };
    (score(true), score(false))
}

fn support_curation() -> Check {
    let runs: Vec<(f64, f64)> = (0..PAIRED_SEEDS).map(curation_experiment).collect();
    let n = runs.len() as f64;
    let dedup = runs.iter().map(|r| r.0).sum::<f64>() / n;
    let naive = runs.iter().map(|r| r.1).sum::<f64>() / n;
    let summary = format!("dedup {dedup:.4} vs naive {naive:.4} over {PAIRED_SEEDS} seeds");
    ensure(dedup >= naive, || summary.clone())?;
    Ok(summary)
}

// 8. Pattern extraction ----------------------------------------------------------------

fn pattern_extraction() -> Check {
    let corpus = pattern_corpus();
    let instances = corpus.instances();
    let rules = RuleSet::default_set();
    let labels = LabelSet::new(PATTERN_LABELS).unwrap();

    let fired: Vec<(InstanceId, Option<String>)> = instances
        .iter()
        .map(|i| (i.id(), classify_mention(&i.mention(), &i.tokens, &rules).map(String::from)))
        .collect();
    let covered: Vec<usize> = (0..instances.len()).filter(|i| i % 5 == 0).collect();
    let hits: Vec<usize> = (0..instances.len()).filter(|&i| fired[i].1.is_some()).collect();
    ensure(hits == covered, || format!("rules fired on {} instances, expected the 40 covered ones", hits.len()))?;
    let correct = hits.iter().filter(|&&i| fired[i].1.as_deref() == Some(instances[i].label.as_str())).count();
    let precision = correct as f64 / hits.len() as f64;
    ensure(precision == 1.0, || format!("rule precision {precision}"))?;

    // A fixed stand-in model that is wrong on every fourth instance.
    let model: Vec<(InstanceId, String)> = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let gold = labels.index_of(&inst.label).unwrap();
            let pred = if i % 4 == 0 { (gold + 1) % labels.len() } else { gold };
            (inst.id(), labels.name(pred).to_string())
        })
        .collect();
    let golds: Vec<_> = instances.iter().map(|i| (i.id(), i.label.clone())).collect();
    let before = evaluate(&model, &golds, &labels).unwrap().micro_f1;
    let merged = merge_predictions(&model, &fired, &MergePolicy::for_rules(&rules, &labels), &labels).unwrap();
    let after = evaluate(&merged, &golds, &labels).unwrap().micro_f1;

    // 50 model errors, 10 of them on covered instances (i % 20 == 0):
    // 150/200 correct before merging, 160/200 after.
    let (expect_before, expect_after) = (150.0 / 200.0, 160.0 / 200.0);
    ensure(before == expect_before && after == expect_after, || format!("micro-F1 {before} -> {after}"))?;
    ensure(after - before == expect_after - expect_before, || "improvement differs".into())?;
    Ok(format!("40/40 covered, precision {precision}, micro-F1 {before} -> {after} (+{})", after - before))
}

// 9. Reproducibility -----------------------------------------------------------------

fn fsner(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fsner")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("fsner {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn reproducibility() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let general = cue_corpus("Gen", 8, 20, 0.1, 1);
    let train = cue_corpus("Tgt", 4, 20, 0.1, 2);
    let test = cue_corpus("Tgt", 4, 10, 0.1, 3);
    let mut verbalizer = Verbalizer::default();
    verbalizer.entries.extend(general.verbalizer.entries.clone());
    verbalizer.entries.extend(train.verbalizer.entries.clone());
    std::fs::write(d.join("general.conll"), general.conll()).unwrap();
    std::fs::write(d.join("train.conll"), train.conll()).unwrap();
    std::fs::write(d.join("test.conll"), test.conll()).unwrap();
    std::fs::write(d.join("verbalizer.tsv"), verbalizer.to_text()).unwrap();
    let config = format!(
        "seed = 17\ngeneral_corpus = {0}/general.conll\ntarget_train = {0}/train.conll\ntarget_test = {0}/test.conll\n\
         verbalizer = {0}/verbalizer.tsv\nn_way = 4\nk_query = 5\nn_tasks = 6\nouter_batch = 4\nmax_meta_steps = 3\n\
         hidden_dim = 8\nmax_seq_len = 32\ninner_lr = 0.5\nmeta_lr = 0.5\nfinetune_lr = 0.5\nmeta_test_epochs = 3\n",
        d.display()
    );
    let cfg_path = d.join("run.cfg");
    std::fs::write(&cfg_path, config).unwrap();
    let cfg = cfg_path.to_str().unwrap();

    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let meta_out = d.join(format!("meta-{name}"));
        fsner(&["meta-train", "--config", cfg, "--out", meta_out.to_str().unwrap()])?;
        let run_out = d.join(format!("run-{name}"));
        let ckpt = meta_out.join("checkpoint");
        fsner(&["run", "--config", cfg, "--out", run_out.to_str().unwrap(), "--init", ckpt.to_str().unwrap()])?;
        let mut meta_tree = tree_bytes(&meta_out);
        meta_tree.remove("config.txt");
        let mut run_tree = tree_bytes(&run_out);
        run_tree.remove("config.txt");
        trees.push((meta_tree, run_tree));
    }
    let (a, b) = (&trees[0], &trees[1]);
    ensure(a.0.keys().any(|k| k.ends_with(".f32")), || "no checkpoint files written".into())?;
    ensure(a.0 == b.0, || "meta-train outputs differ between invocations".into())?;
    ensure(a.1.contains_key("report.json"), || "no report written".into())?;
    ensure(a.1 == b.1, || "run outputs differ between invocations".into())?;
    Ok(format!("{} meta-train files and {} run files byte-identical", a.0.len(), a.1.len()))
}

// ---------------------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "gradient correctness", gradient_check),
        (2, "MAML algebra", maml_algebra),
        (3, "KL identities", kl_identities),
        (4, "sampler invariants", sampler_invariants),
        (5, "evaluator oracle", evaluator_oracle),
        (6, "learn-to-learn", learn_to_learn),
        (7, "support-set curation", support_curation),
        (8, "pattern extraction", pattern_extraction),
        (9, "reproducibility", reproducibility),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {id} ({name}): PASS  {detail}  [{:.2?}]", t0.elapsed()),
            Err(why) => {
                println!("criterion {id} ({name}): FAIL  {why}  [{:.2?}]", t0.elapsed());
                failed.push(id);
            }
        }
    }
    println!("criterion 10 (full-scale hook): NOT RUN  non-gating; needs a pretrained-transformer backend and the real corpora");
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
