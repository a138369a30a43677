//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Pass criterion numbers as arguments to
//! run a subset: `cargo test --release --test acceptance -- 3 5`.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;

use jket_cli::archive::Archive;
use jket_cli::commands;
use jket_cli::config::{RunConfig, TaskName};
use jket_cli::models::{self, Loaded};
use jket_core::experiment::{run_kge_lm, JointData, KgeLmOutcome, KgeLmSettings, RunKind};
use jket_core::gradcheck;
use jket_core::joint::{train_epochs, Interval, SharingPlan};
use jket_core::kge::{corrupt_negatives, evaluate_scored, fit_thresholds, score_triples, KgeConfig, KgeModel, KgeTrainer, Triple};
use jket_core::lm::{LmConfig, LmModel, LmTrainer};
use jket_core::metrics::{accuracy, aucpr, auroc, precision_recall_f1, typing_scores};
use jket_core::optim::{Optimizer, OptimizerKind};
use jket_core::rng;
use jket_core::synth::{self, WorldSize};
use jket_core::typer::{self, TypeInventory, TyperConfig, TyperModel, TyperTrainer};
use jket_core::vocab::{tokenize_triple, Vocabulary};
use jket_core::{ParamStore, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- 1

fn gradient_oracle() -> Outcome {
    let t = Instant::now();
    let results = gradcheck::run_suite(50, 1).expect("gradient checks run");
    let secs = t.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failing: Vec<&str> = results
        .iter()
        .filter(|r| !(r.max_rel_error < 1e-4) || r.instances < 50)
        .map(|r| r.name.as_str())
        .collect();
    let losses = ["kge_loss", "typing_hinge_loss", "lm_nll"].iter().all(|l| results.iter().any(|r| r.name == *l));
    outcome(
        failing.is_empty() && losses && secs < 60.0,
        format!(
            "{} checks x 50 instances, max rel error {worst:.2e} (< 1e-4), failing {failing:?}, {secs:.1}s (< 60s)",
            results.len()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn oracle_prf(pred: &[bool], gold: &[bool]) -> (f64, f64, f64) {
    let p: BTreeSet<usize> = (0..pred.len()).filter(|&i| pred[i]).collect();
    let g: BTreeSet<usize> = (0..gold.len()).filter(|&i| gold[i]).collect();
    let tp = p.intersection(&g).count() as f64;
    let precision = if p.is_empty() { 0.0 } else { tp / p.len() as f64 };
    let recall = if g.is_empty() { 0.0 } else { tp / g.len() as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}

fn oracle_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn oracle_aucpr(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let (mut area, mut prev_recall) = (0.0, 0.0);
    for t in thresholds {
        let picked: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = picked.iter().filter(|&&i| labels[i]).count() as f64;
        let recall = tp / positives;
        area += (recall - prev_recall) * (tp / picked.len() as f64);
        prev_recall = recall;
    }
    area
}

fn set_f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// (strict f1, macro p, macro r, macro f1, micro p, micro r, micro f1).
fn oracle_typing(pred: &[BTreeSet<usize>], gold: &[BTreeSet<usize>]) -> [f64; 7] {
    let n = gold.len() as f64;
    let strict = pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / n;
    let ratio = |num: usize, den: usize, other_empty: bool| {
        if den == 0 {
            if other_empty {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    };
    let mut mp = 0.0;
    let mut mr = 0.0;
    let (mut inter, mut np, mut ng) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let i = p.intersection(g).count();
        mp += ratio(i, p.len(), g.is_empty());
        mr += ratio(i, g.len(), p.is_empty());
        inter += i;
        np += p.len();
        ng += g.len();
    }
    let (mp, mr) = (mp / n, mr / n);
    let up = ratio(inter, np, ng == 0);
    let ur = ratio(inter, ng, np == 0);
    [strict, mp, mr, set_f1(mp, mr), up, ur, set_f1(up, ur)]
}

fn metric_oracles() -> Outcome {
    let mut r = rng::stream(2, "acceptance-metrics");
    let instances = 50;
    let mut mismatches: Vec<String> = Vec::new();
    let mut worst: f64 = 0.0;
    // Absolute deviation for bounded metrics, relative for perplexity.
    let mut check = |name: &str, got: f64, want: f64, scale: f64| {
        worst = worst.max((got - want).abs() / scale);
        if !close(got / scale, want / scale) {
            mismatches.push(format!("{name}: {got} vs {want}"));
        }
    };
    for k in 0..instances {
        let n = r.gen_range(4..40);
        // Half the instances draw from a coarse grid to force ties.
        let scores: Vec<f64> = (0..n)
            .map(|_| if k % 2 == 0 { r.gen_range(0..5) as f64 / 4.0 } else { r.gen::<f64>() })
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let pred: Vec<bool> = (0..n).map(|_| r.gen_bool(0.4)).collect();
        let (p, rc, f) = oracle_prf(&pred, &labels);
        let prf = precision_recall_f1(&pred, &labels);
        check("precision", prf.precision, p, 1.0);
        check("recall", prf.recall, rc, 1.0);
        check("f1", prf.f1, f, 1.0);
        let hits = pred.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64;
        check("accuracy", accuracy(&pred, &labels), hits / n as f64, 1.0);
        check("auroc", auroc(&scores, &labels).unwrap(), oracle_auroc(&scores, &labels), 1.0);
        check("aucpr", aucpr(&scores, &labels).unwrap(), oracle_aucpr(&scores, &labels), 1.0);

        let m = r.gen_range(1..30);
        let draw = |r: &mut rng::Rng, allow_empty: bool| -> BTreeSet<usize> {
            let lo = if allow_empty { 0 } else { 1 };
            let size = r.gen_range(lo..4);
            (0..size).map(|_| r.gen_range(0..6)).collect()
        };
        let gold: Vec<BTreeSet<usize>> = (0..m).map(|_| draw(&mut r, false)).collect();
        let predicted: Vec<BTreeSet<usize>> = gold
            .iter()
            .map(|g| if r.gen_bool(0.3) { g.clone() } else { draw(&mut r, true) })
            .collect();
        let want = oracle_typing(&predicted, &gold);
        let p_vec: Vec<Vec<usize>> = predicted.iter().map(|s| s.iter().copied().collect()).collect();
        let g_vec: Vec<Vec<usize>> = gold.iter().map(|s| s.iter().copied().collect()).collect();
        let s = typing_scores(&p_vec, &g_vec).unwrap();
        let got = [
            s.strict.f1,
            s.loose_macro.precision,
            s.loose_macro.recall,
            s.loose_macro.f1,
            s.loose_micro.precision,
            s.loose_micro.recall,
            s.loose_micro.f1,
        ];
        for (i, name) in ["strict_f1", "macro_p", "macro_r", "macro_f1", "micro_p", "micro_r", "micro_f1"]
            .iter()
            .enumerate()
        {
            check(name, got[i], want[i], 1.0);
        }

        // Perplexity of a random small LM against token-by-token scalar
        // accumulation of next-token probabilities.
        let vocab_size = r.gen_range(6..15);
        let mut store = ParamStore::<f64>::new();
        let cfg = LmConfig {
            embed_dim: 4,
            hidden: 5,
            ..LmConfig::default()
        };
        let lm = LmModel::new(&mut store, "lm", vocab_size, &cfg, None, &mut r).unwrap();
        let sentences: Vec<Vec<usize>> = (0..r.gen_range(1..5))
            .map(|_| {
                let len = r.gen_range(1..6);
                let mut s = vec![2];
                s.extend((0..len).map(|_| r.gen_range(5..vocab_size)));
                s.push(3);
                s
            })
            .collect();
        let (mut total, mut count) = (0.0, 0usize);
        for s in &sentences {
            for pos in 1..s.len() {
                let dist = lm.next_distribution(&store, &s[1..pos]).unwrap();
                total += -dist[s[pos]].ln();
                count += 1;
            }
        }
        let want = (total / count as f64).exp();
        let got = lm.perplexity(&store, &sentences).unwrap();
        check("perplexity", got, want, want);
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "{instances} random instances per metric, worst deviation {worst:.1e} (<= 1e-9), mismatches {}",
            mismatches.len()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn kge_overfit() -> Outcome {
    let t = Instant::now();
    let seed = 3;
    let kg = synth::separable_kg(seed, 10, 500);
    let relations: BTreeSet<&str> = kg.positives.iter().map(|p| p.relation.as_str()).collect();
    let streams: Vec<Vec<String>> = kg
        .positives
        .iter()
        .map(|p| {
            let tt = tokenize_triple(&p.head, &p.relation, &p.tail).unwrap();
            tt.sequence().into_iter().map(String::from).collect()
        })
        .collect();
    let vocab = Vocabulary::build(streams, 70_000).unwrap();
    let cfg = KgeConfig {
        embed_dim: 16,
        hidden: 16,
        head_hidden: [32, 32],
        ..KgeConfig::default()
    };
    let mut store = ParamStore::<f32>::new();
    let model = KgeModel::new(&mut store, "kge", vocab.len(), &cfg, None, &mut rng::stream(seed, "kge-init")).unwrap();
    let opt = Optimizer::new(OptimizerKind::adam(), 0.005, 0.0).unwrap();
    let mut trainer = KgeTrainer::new(model.clone(), opt, &vocab, &kg.positives, &[], 1, 32, seed).unwrap();
    let known = kg.truth_keys();
    let pool = kg.entities.clone();
    let negatives = corrupt_negatives(&kg.positives, &pool, 1, &known, &mut rng::stream(seed, "eval-negatives")).unwrap();
    let train_set: Vec<Triple> = kg.positives.iter().cloned().chain(negatives).collect();
    let (mut best, mut epochs) = (0.0, 0);
    while epochs < 200 {
        train_epochs(&mut store, &mut trainer, 5).unwrap();
        epochs += 5;
        let scored = score_triples(&model, &store, &vocab, &train_set).unwrap();
        let thresholds = fit_thresholds(&scored).unwrap();
        best = evaluate_scored(&scored, &thresholds).unwrap().get("accuracy").unwrap();
        if best >= 0.95 {
            break;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        best >= 0.95 && epochs <= 200 && secs < 120.0,
        format!(
            "{} entities, {} relations, {} positives, 1:1 corruption: training accuracy {best:.4} (>= 0.95) after {epochs} epochs (<= 200), {secs:.1}s (< 120s)",
            kg.entities.len(),
            relations.len(),
            kg.positives.len()
        ),
    )
}

// ---------------------------------------------------------------- 4

fn typer_overfit() -> Outcome {
    let t = Instant::now();
    let seed = 4;
    let records = synth::typing_corpus(seed, 300);
    let inv = TypeInventory::build(records.iter().flat_map(|r| r.types.iter().map(String::as_str)));
    let vocab = Vocabulary::build(records.iter().map(|r| r.tokens.iter().map(|t| t.to_lowercase()).collect::<Vec<_>>()), 70_000)
        .unwrap();
    let data: Vec<_> = records.iter().map(|r| r.to_instance(&vocab, &inv).unwrap()).collect();
    let cfg = TyperConfig {
        embed_dim: 16,
        hidden: 16,
        attention_dim: 16,
        head_hidden: [32, 32, 32],
        ..TyperConfig::default()
    };
    let mut store = ParamStore::<f32>::new();
    let model =
        TyperModel::new(&mut store, "et", vocab.len(), inv.len(), &cfg, None, &mut rng::stream(seed, "et-init")).unwrap();
    let opt = Optimizer::new(OptimizerKind::adam(), 0.005, 0.0).unwrap();
    let mut trainer = TyperTrainer::new(model.clone(), opt, data.clone(), 16, seed).unwrap();
    let (mut best, mut epochs) = (0.0, 0);
    while epochs < 200 {
        train_epochs(&mut store, &mut trainer, 5).unwrap();
        epochs += 5;
        best = typer::evaluate(&model, &store, &data).unwrap().get("strict_f1").unwrap();
        if best >= 0.95 {
            break;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        best >= 0.95 && epochs <= 200 && secs < 120.0,
        format!(
            "{} mentions, {} types: training strict F1 {best:.4} (>= 0.95) after {epochs} epochs (<= 200), {secs:.1}s (< 120s)",
            data.len(),
            inv.len()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn lm_sanity() -> Outcome {
    let seed = 5;
    let small = WorldSize {
        persons: 12,
        cities: 6,
        companies: 5,
        countries: 3,
        rivers: 4,
    };
    let records = synth::wikifacts_with(seed, 200, &small);
    let sentences: Vec<&Vec<String>> = records.iter().map(|r| &r.tokens).filter(|t| !t.is_empty()).collect();
    let vocab = Vocabulary::build(sentences.iter().map(|s| s.iter()), 70_000).unwrap();
    let encoded: Vec<Vec<usize>> = sentences.iter().map(|s| vocab.encode_sentence(s.iter())).collect();
    let cfg = LmConfig {
        embed_dim: 16,
        hidden: 16,
        ..LmConfig::default()
    };

    // Zero output weights and bias give uniform logits.
    let mut store = ParamStore::<f64>::new();
    let lm = LmModel::new(&mut store, "lm", vocab.len(), &cfg, None, &mut rng::stream(seed, "lm-init")).unwrap();
    for id in [lm.out_w.unwrap(), lm.out_b] {
        let shape = store.value(id).shape().to_vec();
        store.set(id, Tensor::zeros(&shape)).unwrap();
    }
    let uniform = lm.perplexity(&store, &encoded).unwrap();
    let v = vocab.len() as f64;
    let uniform_ok = ((uniform - v) / v).abs() < 1e-3;

    let mut store = ParamStore::<f32>::new();
    let lm = LmModel::new(&mut store, "lm", vocab.len(), &cfg, None, &mut rng::stream(seed, "lm-init")).unwrap();
    let start = lm.perplexity(&store, &encoded).unwrap();
    let opt = Optimizer::new(OptimizerKind::adam(), 0.01, 0.0).unwrap();
    let mut trainer = LmTrainer::new(lm.clone(), opt, encoded.clone(), 16, seed).unwrap();
    let (mut ppl, mut epochs) = (start, 0);
    while epochs < 50 && ppl > 0.5 * start {
        train_epochs(&mut store, &mut trainer, 1).unwrap();
        epochs += 1;
        ppl = lm.perplexity(&store, &encoded).unwrap();
    }
    let reduced = ppl <= 0.5 * start;
    outcome(
        uniform_ok && reduced && vocab.len() <= 200,
        format!(
            "uniform-logit perplexity {uniform:.6} vs V = {v} (rel err {:.1e} < 1e-3); toy LM (V = {v}) train perplexity {start:.2} -> {ppl:.2} ({:.1}% reduction, >= 50%) after {epochs} epochs (<= 50)",
            ((uniform - v) / v).abs(),
            100.0 * (1.0 - ppl / start)
        ),
    )
}

// ---------------------------------------------------------------- 6, 7, 8

const JOINT_SEEDS: [u64; 3] = [1, 2, 3];

fn joint_settings() -> KgeLmSettings {
    KgeLmSettings {
        kge: KgeConfig {
            embed_dim: 32,
            hidden: 32,
            head_hidden: [64, 64],
            ..KgeConfig::default()
        },
        lm: LmConfig {
            embed_dim: 32,
            hidden: 32,
            ..LmConfig::default()
        },
        optimizer: OptimizerKind::adam(),
        learning_rate: 0.005,
        weight_decay: 0.0,
        batch_size: 16,
        epochs: 300,
        interval: Interval::Steps(5),
        negative_ratio: 1,
    }
}

fn corpus(seed: u64) -> (Vec<jket_core::joint::JointRecord>, JointData) {
    let records = synth::wikifacts(seed, 600);
    let data = JointData::prepare(&records, 70_000, seed).unwrap();
    (records, data)
}

#[derive(Default)]
struct AliasLog {
    intervals: usize,
    pairs_checked: usize,
    violations: usize,
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Joint run that compares every aliased tensor bit for bit after each
/// interval.
fn joint_run(data: &JointData, plan: &SharingPlan, seed: u64, log: &mut AliasLog) -> KgeLmOutcome<f32> {
    run_kge_lm::<f32>(data, plan, &joint_settings(), RunKind::Joint, None, seed, |_, store| {
        let pairs = plan.aliased_pairs(store);
        if pairs.is_empty() {
            log.violations += 1;
        }
        for (alias, canonical, _) in pairs {
            let a = store.id(&alias).map(|id| bits(store.value(id)));
            let b = store.id(&canonical).map(|id| bits(store.value(id)));
            log.pairs_checked += 1;
            if a.is_none() || a != b {
                log.violations += 1;
            }
        }
        log.intervals += 1;
        Ok(())
    })
    .unwrap()
}

struct JointResults {
    c6: Outcome,
    c7: Outcome,
    aliases: AliasLog,
}

fn metric(o: &KgeLmOutcome<f32>, task: &str, name: &str) -> f64 {
    let r = if task == "lm" { &o.lm_report } else { &o.kge_report };
    r.as_ref().unwrap().get(name).unwrap()
}

fn joint_directional() -> JointResults {
    let settings = joint_settings();
    let mut aliases = AliasLog::default();
    let t = Instant::now();
    let shared = SharingPlan::kge_lm_shared_forward_cell();
    let (mut rel, mut acc_drop, mut lines) = (0.0, 0.0, Vec::new());
    for seed in JOINT_SEEDS {
        let (records, data) = corpus(seed);
        assert!(records.iter().filter(|r| !r.tokens.is_empty()).count() >= 500);
        assert!(records.iter().filter(|r| !r.tokens.is_empty()).all(|r| (1..=3).contains(&r.triples.len())));
        let lm = run_kge_lm::<f32>(&data, &shared, &settings, RunKind::LmOnly, None, seed, |_, _| Ok(())).unwrap();
        let kge = run_kge_lm::<f32>(&data, &shared, &settings, RunKind::KgeOnly, None, seed, |_, _| Ok(())).unwrap();
        let joint = joint_run(&data, &shared, seed, &mut aliases);
        let (p0, p1) = (metric(&lm, "lm", "perplexity"), metric(&joint, "lm", "perplexity"));
        let (a0, a1) = (metric(&kge, "kge", "accuracy"), metric(&joint, "kge", "accuracy"));
        rel += (p0 - p1) / p0;
        acc_drop += a0 - a1;
        lines.push(format!("seed {seed}: ppl {p0:.3} -> {p1:.3}, acc {a0:.4} -> {a1:.4}"));
    }
    let n = JOINT_SEEDS.len() as f64;
    let (rel, acc_drop) = (rel / n, acc_drop / n);
    let secs6 = t.elapsed().as_secs_f64();
    let c6 = outcome(
        rel >= 0.05 && acc_drop <= 0.02 && secs6 < 600.0,
        format!(
            "mean LM perplexity reduction {:.2}% (>= 5%), mean KGE accuracy drop {:.2} points (<= 2), {secs6:.0}s (< 600s) [{}]",
            100.0 * rel,
            100.0 * acc_drop,
            lines.join("; ")
        ),
    );

    let full = SharingPlan::kge_lm_fully_shared_lstm();
    let (mut standalone, mut jointly, mut lines) = (0.0, 0.0, Vec::new());
    for seed in JOINT_SEEDS {
        let (_, data) = corpus(seed);
        let kge = run_kge_lm::<f32>(&data, &full, &settings, RunKind::KgeOnly, None, seed, |_, _| Ok(())).unwrap();
        let joint = joint_run(&data, &full, seed, &mut aliases);
        let (a0, a1) = (metric(&kge, "kge", "accuracy"), metric(&joint, "kge", "accuracy"));
        standalone += a0;
        jointly += a1;
        lines.push(format!("seed {seed}: acc {a0:.4} -> {a1:.4}"));
    }
    let c7 = outcome(
        jointly / n >= standalone / n,
        format!(
            "mean KGE accuracy joint {:.4} >= standalone LSTM-KGE {:.4} [{}]",
            jointly / n,
            standalone / n,
            lines.join("; ")
        ),
    );
    JointResults { c6, c7, aliases }
}

/// Names and bit patterns of every tensor under `prefix`.
fn tensors_under(store: &ParamStore<f32>, prefix: &str) -> Vec<(String, Vec<u32>)> {
    store
        .entries()
        .filter(|(_, name, _)| name.starts_with(prefix))
        .map(|(_, name, t)| (name.to_string(), bits(t)))
        .collect()
}

fn sharing_invariants(aliases: &AliasLog) -> Outcome {
    // Empty plan: interleaved joint training against independent runs.
    let seed = 8;
    let (_, data) = corpus(seed);
    let mut settings = joint_settings();
    settings.epochs = 10;
    let none = SharingPlan::none();
    let joint = run_kge_lm::<f32>(&data, &none, &settings, RunKind::Joint, None, seed, |_, _| Ok(())).unwrap();
    let kge = run_kge_lm::<f32>(&data, &none, &settings, RunKind::KgeOnly, None, seed, |_, _| Ok(())).unwrap();
    let lm = run_kge_lm::<f32>(&data, &none, &settings, RunKind::LmOnly, None, seed, |_, _| Ok(())).unwrap();
    let same_kge = tensors_under(&joint.store, "kge.") == tensors_under(&kge.store, "kge.");
    let same_lm = tensors_under(&joint.store, "lm.") == tensors_under(&lm.store, "lm.");
    let same_reports = joint.kge_report == kge.kge_report && joint.lm_report == lm.lm_report;
    let checked = aliases.intervals > 0 && aliases.pairs_checked > 0;
    outcome(
        checked && aliases.violations == 0 && same_kge && same_lm && same_reports,
        format!(
            "{} intervals of the joint runs, {} aliased-tensor comparisons, {} mismatches; empty plan vs independent: kge tensors {}, lm tensors {}, reports {}",
            aliases.intervals,
            aliases.pairs_checked,
            aliases.violations,
            if same_kge { "bit-identical" } else { "DIFFER" },
            if same_lm { "bit-identical" } else { "DIFFER" },
            if same_reports { "equal" } else { "DIFFER" },
        ),
    )
}

// ---------------------------------------------------------------- 9, 10

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) {
    let mut text = String::new();
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn triple_line(t: &Triple) -> String {
    match t.label {
        Some(l) => format!("{}\t{}\t{}\t{}", t.head, t.relation, t.tail, if l { 1 } else { 0 }),
        None => format!("{}\t{}\t{}", t.head, t.relation, t.tail),
    }
}

/// Small data files and one config per train command.
fn fixtures(dir: &Path) -> Vec<(&'static str, TaskName)> {
    let kg = synth::separable_kg(9, 6, 120);
    let (train, rest) = kg.positives.split_at(96);
    write_lines(&dir.join("kge_train.tsv"), train.iter().map(triple_line));
    let mut r = rng::stream(9, "fixtures");
    let negatives = corrupt_negatives(rest, &kg.entities, 1, &kg.truth_keys(), &mut r).unwrap();
    let mut held: Vec<Triple> = rest.iter().cloned().chain(negatives).collect();
    held.shuffle(&mut r);
    let (dev, test) = held.split_at(held.len() / 2);
    write_lines(&dir.join("kge_dev.tsv"), dev.iter().map(triple_line));
    write_lines(&dir.join("kge_test.tsv"), test.iter().map(triple_line));
    let typing = synth::typing_corpus(9, 120);
    let json = |r: &jket_core::typer::TypingRecord| {
        serde_json::json!({"tokens": r.tokens, "start": r.start, "end": r.end, "types": r.types}).to_string()
    };
    write_lines(&dir.join("et_train.jsonl"), typing[..96].iter().map(json));
    write_lines(&dir.join("et_test.jsonl"), typing[96..].iter().map(json));
    let small = WorldSize {
        persons: 20,
        cities: 10,
        companies: 8,
        countries: 3,
        rivers: 6,
    };
    let records = synth::wikifacts_with(9, 150, &small);
    let sentences: Vec<String> = records.iter().filter(|r| !r.tokens.is_empty()).map(|r| r.tokens.join(" ")).collect();
    write_lines(&dir.join("lm_train.txt"), sentences[..120].iter().cloned());
    write_lines(&dir.join("lm_test.txt"), sentences[120..].iter().cloned());
    write_lines(
        &dir.join("joint.jsonl"),
        records.iter().map(|r| {
            let triples: Vec<[&str; 3]> = r.triples.iter().map(|t| [t.head.as_str(), t.relation.as_str(), t.tail.as_str()]).collect();
            serde_json::json!({"tokens": r.tokens, "triples": triples}).to_string()
        }),
    );
    let base = serde_json::json!({
        "seed": 21, "embed_dim": 8, "hidden": 8, "attention_dim": 8,
        "kge_head": [8, 8], "typer_head": [8, 8, 8], "epochs": 3, "batch_size": 16,
        "learning_rate": 0.005
    });
    let with = |extra: serde_json::Value| {
        let mut v = base.clone();
        for (k, x) in extra.as_object().unwrap() {
            v[k] = x.clone();
        }
        v.to_string()
    };
    let configs = [
        ("kge.json", TaskName::Kge, serde_json::json!({"data": {"train": "kge_train.tsv", "dev": "kge_dev.tsv", "test": "kge_test.tsv"}})),
        ("et.json", TaskName::Et, serde_json::json!({"data": {"train": "et_train.jsonl", "test": "et_test.jsonl"}})),
        ("lm.json", TaskName::Lm, serde_json::json!({"data": {"train": "lm_train.txt", "test": "lm_test.txt"}})),
        (
            "joint_kge_et.json",
            TaskName::JointKgeEt,
            serde_json::json!({"data": {"train": "kge_train.tsv", "dev": "kge_dev.tsv", "test": "kge_test.tsv",
                "typing_train": "et_train.jsonl", "typing_test": "et_test.jsonl"}, "baselines": true}),
        ),
        (
            "joint_kge_lm.json",
            TaskName::JointKgeLm,
            serde_json::json!({"data": {"train": "joint.jsonl"}, "interval": {"steps": 5}, "epochs": 6, "baselines": true}),
        ),
    ];
    configs
        .into_iter()
        .map(|(name, task, extra)| {
            fs::write(dir.join(name), with(extra)).unwrap();
            (name, task)
        })
        .collect()
}

fn persistence() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let out = dir.path().join("out");
    let cfg = RunConfig::load(&dir.path().join("kge.json"), TaskName::Kge, None, Some(&out)).unwrap();
    let trained = commands::train_kge(&cfg, false).unwrap();
    let (c, vocab, aux, store) = trained.archive.unwrap();
    let path = models::save(&out, &c, &vocab, &aux, &store).unwrap();
    let loaded = Loaded::read(&path).unwrap();
    let mut tensors_equal = store.len() == loaded.store.len();
    for (_, name, t) in store.entries() {
        let other = loaded.store.id(name).map(|id| bits(loaded.store.value(id)));
        tensors_equal &= other == Some(bits(t));
    }
    // Ten random triples over the training entities.
    let kg = synth::separable_kg(9, 6, 120);
    let mut r = rng::stream(10, "persistence");
    let relations: Vec<&str> = kg.positives.iter().map(|p| p.relation.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let sample: Vec<Triple> = (0..10)
        .map(|_| {
            Triple::new(
                kg.entities.choose(&mut r).unwrap(),
                relations.choose(&mut r).unwrap(),
                kg.entities.choose(&mut r).unwrap(),
            )
        })
        .collect();
    let model = models::build(&mut ParamStore::new(), &cfg, vocab.len(), 0, None).unwrap().kge.unwrap();
    let before = commands::kge_scores(&model, &store, &vocab, &sample).unwrap();
    let after = commands::kge_scores(loaded.kge().unwrap(), &loaded.store, &loaded.vocab, &sample).unwrap();
    let scores_equal = before.iter().map(|s| s.to_bits()).eq(after.iter().map(|s| s.to_bits()));
    let mut bytes = fs::read(&path).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    let bad_magic = Archive::from_bytes(&bytes, &path).map(|_| ()).unwrap_err().kind() == "FormatError";
    outcome(
        tensors_equal && scores_equal && bad_magic,
        format!(
            "{} tensors round-tripped {}; 10 random triple scores {}; bad magic -> FormatError: {bad_magic}",
            store.len(),
            if tensors_equal { "bit-exact" } else { "WITH DIFFERENCES" },
            if scores_equal { "exactly equal after reload" } else { "DIFFER after reload" },
        ),
    )
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let configs = fixtures(dir.path());
    let mut problems = Vec::new();
    for (name, task) in &configs {
        let cmd = format!("train-{}", task.as_str());
        let mut runs = Vec::new();
        for (run, threads) in [("a", "1"), ("b", "3")] {
            std::env::set_var("JKET_THREADS", threads);
            let out = dir.path().join(format!("{}-{run}", task.as_str()));
            let argv = ["jket", cmd.as_str(), "--config", &dir.path().join(name).display().to_string(), "--out", &out.display().to_string()];
            let mut stdout = Vec::new();
            let code = jket_cli::run(argv, &mut stdout);
            if code != 0 {
                problems.push(format!("{cmd} exited with {code}"));
            }
            runs.push((
                fs::read(out.join("reports.jsonl")).unwrap_or_default(),
                fs::read(out.join("model.jket")).unwrap_or_default(),
                stdout,
            ));
        }
        std::env::remove_var("JKET_THREADS");
        let (a, b) = (&runs[0], &runs[1]);
        if a.0.is_empty() || a.0 != b.0 || a.2 != b.2 {
            problems.push(format!("{cmd}: reports differ"));
        }
        if a.1.is_empty() || a.1 != b.1 {
            problems.push(format!("{cmd}: archives differ"));
        }
    }
    outcome(
        problems.is_empty(),
        format!(
            "{} train commands run twice (1 and 3 evaluation threads): {}",
            configs.len(),
            if problems.is_empty() { "identical reports and bit-identical archives".to_string() } else { problems.join("; ") }
        ),
    )
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        }
    }
}

fn main() {
    // Fixed report timestamps for the reproducibility check.
    std::env::set_var("SOURCE_DATE_EPOCH", "1700000000");
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let names = [
        "gradient oracle",
        "metric oracles",
        "KGE overfit",
        "typer overfit",
        "LM sanity",
        "joint LM + bi-LSTM KGE",
        "joint LM + LSTM KGE, fully shared",
        "sharing invariants",
        "persistence",
        "reproducibility",
    ];
    let mut results: Vec<(u32, Outcome, f64)> = Vec::new();
    let timed = |n: u32, f: &mut dyn FnMut() -> Outcome, results: &mut Vec<(u32, Outcome, f64)>| {
        let t = Instant::now();
        let o = guarded(AssertUnwindSafe(f));
        let secs = t.elapsed().as_secs_f64();
        println!(
            "criterion {n:>2} {:<36} {} | {} | {secs:.1}s",
            names[n as usize - 1],
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, o, secs));
    };
    let simple: [(u32, fn() -> Outcome); 5] =
        [(1, gradient_oracle), (2, metric_oracles), (3, kge_overfit), (4, typer_overfit), (5, lm_sanity)];
    for (n, f) in simple {
        if run(n) {
            timed(n, &mut || f(), &mut results);
        }
    }
    if run(6) || run(7) || run(8) {
        let t = Instant::now();
        let joint = panic::catch_unwind(joint_directional);
        let secs = t.elapsed().as_secs_f64();
        match joint {
            Ok(j) => {
                for (n, o) in [(6u32, j.c6), (7, j.c7)] {
                    if run(n) {
                        println!(
                            "criterion {n:>2} {:<36} {} | {} | {secs:.1}s for 6 and 7 together",
                            names[n as usize - 1],
                            if o.pass { "PASS" } else { "FAIL" },
                            o.detail
                        );
                        results.push((n, o, secs));
                    }
                }
                if run(8) {
                    timed(8, &mut || sharing_invariants(&j.aliases), &mut results);
                }
            }
            Err(_) => {
                for n in [6u32, 7, 8] {
                    if run(n) {
                        println!("criterion {n:>2} {:<36} FAIL | joint runs panicked", names[n as usize - 1]);
                        results.push((n, outcome(false, String::new()), secs));
                    }
                }
            }
        }
    }
    for (n, f) in [(9u32, persistence as fn() -> Outcome), (10, reproducibility)] {
        if run(n) {
            timed(n, &mut || f(), &mut results);
        }
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
