//! Training, evaluation and inference entry points behind the subcommands.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use jket_core::experiment::{run_kge_lm, JointData, KgeLmSettings, RunKind};
use jket_core::gradcheck;
use jket_core::joint::{train_alternating, train_epochs, with_baseline, AlternationSchedule, Task};
use jket_core::kge::{
    corrupt_negatives, entity_pool, evaluate_scored, fit_thresholds, KgeModel, KgeTrainer, ScoredTriple,
    ThresholdTable, Triple, TripleKey,
};
use jket_core::lm::{Decoding, LmModel, LmTrainer, NllTotals};
use jket_core::metrics::EvalReport;
use jket_core::rng;
use jket_core::typer::{self, TypeInventory, TyperModel, TyperTrainer, TypingInstance, TypingRecord};
use jket_core::vocab::{tokenize_triple, Vocabulary};
use jket_core::{ParamStore, Tensor};

use crate::config::{RunConfig, TaskName};
use crate::error::{CliError, CoreContext, Result};
use crate::glove::load_pretrained;
use crate::models::{self, Aux, Loaded, Models, Thresholds};
use crate::parallel::map_chunks;
use crate::readers;
use crate::report::{self, ReportRecord};

/// Items per evaluation work unit.
const EVAL_CHUNK: usize = 64;
/// Sentences held in memory at once while streaming an LM evaluation file.
const LM_EVAL_BLOCK: usize = 4096;

/// Outcome of a training run before anything is written.
#[derive(Debug)]
pub struct Trained {
    pub reports: Vec<ReportRecord>,
    pub archive: Option<(RunConfig, Vocabulary, Aux, ParamStore<f32>)>,
}

fn display(paths: &[&Option<PathBuf>]) -> Vec<String> {
    paths.iter().filter_map(|p| p.as_ref()).map(|p| p.display().to_string()).collect()
}

fn required(p: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    p.clone().ok_or_else(|| CliError::Usage(format!("{name} is required")))
}

fn read_triples(p: &Option<PathBuf>, lenient: bool) -> Result<Vec<Triple>> {
    match p {
        Some(p) => readers::collect(readers::triples(p, lenient)?),
        None => Ok(Vec::new()),
    }
}

fn read_typing(p: &Option<PathBuf>, lenient: bool) -> Result<Vec<TypingRecord>> {
    match p {
        Some(p) => readers::collect(readers::typing(p, lenient)?),
        None => Ok(Vec::new()),
    }
}

fn triple_tokens(triples: &[Triple]) -> Result<Vec<Vec<String>>> {
    triples
        .iter()
        .map(|t| {
            tokenize_triple(&t.head, &t.relation, &t.tail)
                .map(|tt| tt.sequence().into_iter().map(String::from).collect())
                .during("tokenize")
        })
        .collect()
}

fn typing_tokens(records: &[TypingRecord]) -> Vec<Vec<String>> {
    records.iter().map(|r| r.tokens.iter().map(|t| t.to_lowercase()).collect()).collect()
}

fn embeddings(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Option<Tensor<f32>>> {
    match &cfg.embeddings {
        Some(p) => {
            let table = load_pretrained(p, vocab, cfg.embed_dim, cfg.seed())?;
            eprintln!("pretrained vectors cover {:.1}% of the vocabulary", 100.0 * table.coverage());
            Ok(Some(table.matrix))
        }
        None => Ok(None),
    }
}

fn positives(triples: &[Triple]) -> Vec<Triple> {
    triples.iter().filter(|t| t.is_positive()).cloned().collect()
}

/// `triples` as given when they carry both labels. Otherwise the distinct
/// positives plus one seeded corruption each, avoiding `known` facts.
pub fn labelled_set(
    triples: &[Triple],
    pool: &[String],
    known: &BTreeSet<TripleKey>,
    rng: &mut rng::Rng,
) -> Result<Vec<Triple>> {
    let labelled = triples.iter().all(|t| t.label.is_some());
    if labelled && triples.iter().any(|t| t.label == Some(true)) && triples.iter().any(|t| t.label == Some(false)) {
        return Ok(triples.to_vec());
    }
    let mut seen = BTreeSet::new();
    let pos: Vec<Triple> = triples
        .iter()
        .filter(|t| t.is_positive() && seen.insert(t.key()))
        .map(|t| Triple::labeled(&t.head, &t.relation, &t.tail, true))
        .collect();
    if pos.is_empty() {
        return Err(CliError::Usage("evaluation triples contain no positives".into()));
    }
    let neg = corrupt_negatives(&pos, pool, 1, known, rng).during("eval_negatives")?;
    Ok(pos.into_iter().chain(neg).collect())
}

/// Model scores, computed in parallel over fixed chunks.
pub fn kge_scores(model: &KgeModel, store: &ParamStore<f32>, vocab: &Vocabulary, triples: &[Triple]) -> Result<Vec<f64>> {
    let seqs = triples.iter().map(|t| t.ids(vocab)).collect::<jket_core::Result<Vec<_>>>().during("tokenize")?;
    map_chunks(&seqs, EVAL_CHUNK, |c| {
        Ok(model.score_many(store, c, EVAL_CHUNK).during("score")?.into_iter().map(f64::from).collect())
    })
}

fn scored(model: &KgeModel, store: &ParamStore<f32>, vocab: &Vocabulary, triples: &[Triple]) -> Result<Vec<ScoredTriple>> {
    let scores = kge_scores(model, store, vocab, triples)?;
    Ok(triples
        .iter()
        .zip(scores)
        .map(|(t, score)| ScoredTriple {
            relation: t.relation.clone(),
            score,
            label: t.label.unwrap_or(true),
        })
        .collect())
}

/// Fit thresholds on dev (or train when there is no dev file) and evaluate
/// on test (or the first of dev, train that exists).
fn kge_fit_and_evaluate(
    model: &KgeModel,
    store: &ParamStore<f32>,
    vocab: &Vocabulary,
    train: &[Triple],
    dev: &[Triple],
    test: &[Triple],
    seed: u64,
) -> Result<(EvalReport, ThresholdTable)> {
    let all: Vec<Triple> = train.iter().chain(dev).chain(test).cloned().collect();
    let facts = positives(&all);
    let known: BTreeSet<TripleKey> = facts.iter().map(Triple::key).collect();
    let pool = entity_pool(&all);
    let mut rng = rng::stream(seed, "eval-negatives");
    let fit_on = if dev.is_empty() { train } else { dev };
    let fit_set = labelled_set(fit_on, &pool, &known, &mut rng)?;
    let thresholds = fit_thresholds(&scored(model, store, vocab, &fit_set)?).during("fit_thresholds")?;
    let eval_on = [test, dev, train].into_iter().find(|s| !s.is_empty()).unwrap_or(train);
    let eval_set = labelled_set(eval_on, &pool, &known, &mut rng)?;
    let report = evaluate_scored(&scored(model, store, vocab, &eval_set)?, &thresholds).during("evaluate")?;
    Ok((report, thresholds))
}

fn typing_predictions(model: &TyperModel, store: &ParamStore<f32>, data: &[TypingInstance]) -> Result<Vec<typer::TypePrediction>> {
    map_chunks(data, EVAL_CHUNK, |c| {
        c.iter().map(|inst| model.predict(store, inst).during("predict")).collect()
    })
}

fn typing_report(model: &TyperModel, store: &ParamStore<f32>, data: &[TypingInstance]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(CliError::Usage("no typing records to evaluate".into()));
    }
    let preds: Vec<Vec<usize>> = typing_predictions(model, store, data)?.into_iter().map(|p| p.types).collect();
    let gold: Vec<&[usize]> = data.iter().map(|i| i.types.as_slice()).collect();
    typer::evaluate_typing(&preds, &gold).during("evaluate")
}

fn instances(records: &[TypingRecord], vocab: &Vocabulary, inv: &TypeInventory) -> Result<Vec<TypingInstance>> {
    records.iter().map(|r| r.to_instance(vocab, inv).during("encode_typing")).collect()
}

/// Vocabulary of an LM training file, built in one streaming pass.
pub fn lm_vocabulary(path: &Path, max_vocab: usize, lenient: bool) -> Result<Vocabulary> {
    let mut records = readers::sentences(path, lenient)?;
    let mut failure = None;
    let stream = records.by_ref().map_while(|r| match r {
        Ok(s) => Some(s),
        Err(e) => {
            failure = Some(e);
            None
        }
    });
    let vocab = Vocabulary::build(stream, max_vocab);
    if let Some(e) = failure {
        return Err(e);
    }
    vocab.during("build_vocabulary")
}

fn nll_block(model: &LmModel, store: &ParamStore<f32>, block: &[Vec<usize>]) -> Result<NllTotals> {
    let parts = map_chunks(block, EVAL_CHUNK, |c| {
        let mut acc = NllTotals::default();
        for s in c {
            acc.add(model.sentence_nll(store, s).during("perplexity")?);
        }
        Ok(vec![acc])
    })?;
    let mut acc = NllTotals::default();
    for p in parts {
        acc.add(p);
    }
    Ok(acc)
}

/// Corpus perplexity of a sentence file, streamed in blocks. Per-chunk
/// totals are summed in file order, so the result does not depend on the
/// thread count.
pub fn lm_file_perplexity(
    model: &LmModel,
    store: &ParamStore<f32>,
    vocab: &Vocabulary,
    path: &Path,
    lenient: bool,
) -> Result<f64> {
    let mut records = readers::sentences(path, lenient)?;
    let mut acc = NllTotals::default();
    let mut block = Vec::with_capacity(LM_EVAL_BLOCK);
    loop {
        block.clear();
        for r in records.by_ref().take(LM_EVAL_BLOCK) {
            block.push(vocab.encode_sentence(&r?));
        }
        if block.is_empty() {
            break;
        }
        acc.add(nll_block(model, store, &block)?);
    }
    if records.skipped() > 0 {
        eprintln!("warning: skipped {} malformed lines in {}", records.skipped(), path.display());
    }
    acc.perplexity().during("perplexity")
}

fn record(report: &EvalReport, task: &str, datasets: Vec<String>, seed: u64) -> Result<ReportRecord> {
    let mut r = ReportRecord::new(report, &[], seed)?;
    r.task = task.to_string();
    r.datasets = datasets;
    Ok(r)
}

pub fn train_kge(cfg: &RunConfig, lenient: bool) -> Result<Trained> {
    let seed = cfg.seed();
    let train = read_triples(&cfg.data.train, lenient)?;
    let dev = read_triples(&cfg.data.dev, lenient)?;
    let test = read_triples(&cfg.data.test, lenient)?;
    let vocab = Vocabulary::build(triple_tokens(&train)?, cfg.max_vocab).during("build_vocabulary")?;
    let emb = embeddings(cfg, &vocab)?;
    let mut store = ParamStore::new();
    let model = models::build(&mut store, cfg, vocab.len(), 0, emb)?.kge.expect("kge model");
    let known: Vec<Triple> = dev.iter().chain(&test).cloned().collect();
    let mut trainer = KgeTrainer::new(
        model.clone(),
        cfg.optimizer()?,
        &vocab,
        &train,
        &known,
        cfg.negative_ratio,
        cfg.batch_size,
        seed,
    )
    .during("train_kge")?;
    train_epochs(&mut store, &mut trainer, cfg.epochs).during("train_kge")?;
    let (report, thresholds) = kge_fit_and_evaluate(&model, &store, &vocab, &train, &dev, &test, seed)?;
    let d = &cfg.data;
    let rec = record(&report, "kge", display(&[&d.train, &d.dev, &d.test]), seed)?;
    let aux = Aux {
        tasks: vec!["kge".into()],
        thresholds: Some(Thresholds::from(&thresholds)),
        types: Vec::new(),
    };
    Ok(Trained {
        reports: vec![rec],
        archive: Some((cfg.clone(), vocab, aux, store)),
    })
}

pub fn train_et(cfg: &RunConfig, lenient: bool) -> Result<Trained> {
    let seed = cfg.seed();
    let train = read_typing(&cfg.data.train, lenient)?;
    let dev = read_typing(&cfg.data.dev, lenient)?;
    let test = read_typing(&cfg.data.test, lenient)?;
    let inv = TypeInventory::build(train.iter().chain(&dev).chain(&test).flat_map(|r| r.types.iter().map(String::as_str)));
    let vocab = Vocabulary::build(typing_tokens(&train), cfg.max_vocab).during("build_vocabulary")?;
    let emb = embeddings(cfg, &vocab)?;
    let mut store = ParamStore::new();
    let model = models::build(&mut store, cfg, vocab.len(), inv.len(), emb)?.et.expect("typer model");
    let train_inst = instances(&train, &vocab, &inv)?;
    let mut trainer =
        TyperTrainer::new(model.clone(), cfg.optimizer()?, train_inst.clone(), cfg.batch_size, seed).during("train_et")?;
    train_epochs(&mut store, &mut trainer, cfg.epochs).during("train_et")?;
    let eval = [&test, &dev].into_iter().find(|s| !s.is_empty());
    let eval_inst = match eval {
        Some(recs) => instances(recs, &vocab, &inv)?,
        None => train_inst,
    };
    let report = typing_report(&model, &store, &eval_inst)?;
    let d = &cfg.data;
    let rec = record(&report, "et", display(&[&d.train, &d.dev, &d.test]), seed)?;
    let aux = Aux {
        tasks: vec!["et".into()],
        thresholds: None,
        types: inv.names().to_vec(),
    };
    Ok(Trained {
        reports: vec![rec],
        archive: Some((cfg.clone(), vocab, aux, store)),
    })
}

pub fn train_lm(cfg: &RunConfig, lenient: bool) -> Result<Trained> {
    let seed = cfg.seed();
    let train_path = required(&cfg.data.train, "data.train")?;
    let vocab = lm_vocabulary(&train_path, cfg.max_vocab, lenient)?;
    let sentences: Vec<Vec<usize>> = readers::collect(readers::sentences(&train_path, lenient)?)?
        .iter()
        .map(|s| vocab.encode_sentence(s))
        .collect();
    let emb = embeddings(cfg, &vocab)?;
    let mut store = ParamStore::new();
    let model = models::build(&mut store, cfg, vocab.len(), 0, emb)?.lm.expect("lm model");
    let mut trainer = LmTrainer::new(model.clone(), cfg.optimizer()?, sentences, cfg.batch_size, seed).during("train_lm")?;
    train_epochs(&mut store, &mut trainer, cfg.epochs).during("train_lm")?;
    let d = &cfg.data;
    let eval = d.test.as_ref().or(d.dev.as_ref()).unwrap_or(&train_path);
    let mut report = EvalReport::new("lm");
    report.set("perplexity", Some(lm_file_perplexity(&model, &store, &vocab, eval, lenient)?));
    if let (Some(dev), Some(_)) = (&d.dev, &d.test) {
        report.set("dev_perplexity", Some(lm_file_perplexity(&model, &store, &vocab, dev, lenient)?));
    }
    let rec = record(&report, "lm", display(&[&d.train, &d.dev, &d.test]), seed)?;
    let aux = Aux {
        tasks: vec!["lm".into()],
        ..Aux::default()
    };
    Ok(Trained {
        reports: vec![rec],
        archive: Some((cfg.clone(), vocab, aux, store)),
    })
}

fn standalone(cfg: &RunConfig, task: TaskName) -> RunConfig {
    let mut c = cfg.clone();
    c.task = Some(task);
    c.plan = Some("none".into());
    c.baselines = false;
    if task == TaskName::Et {
        c.data.train = cfg.data.typing_train.clone();
        c.data.dev = cfg.data.typing_dev.clone();
        c.data.test = cfg.data.typing_test.clone();
    }
    c.data.typing_train = None;
    c.data.typing_dev = None;
    c.data.typing_test = None;
    c
}

/// Attach the most recent matching standalone report from `out` (plus any
/// computed in this run) as `baseline_*` metrics.
fn joint_record(
    out: &Path,
    earlier: &[ReportRecord],
    joint_task: TaskName,
    report: &EvalReport,
    datasets: Vec<String>,
    seed: u64,
) -> Result<ReportRecord> {
    let baseline = match earlier.iter().rev().find(|r| r.task == report.task && r.datasets == datasets) {
        Some(r) => Some(r.to_report()),
        None => report::latest(out, &report.task, &datasets)?,
    };
    if baseline.is_none() {
        eprintln!(
            "note: no standalone {} report for these datasets in {}; baseline metrics are null",
            report.task,
            out.display()
        );
    }
    let joined = with_baseline(report, baseline.as_ref());
    record(&joined, &format!("{}:{}", joint_task.as_str(), report.task), datasets, seed)
}

pub fn train_joint_kge_et(cfg: &RunConfig, lenient: bool) -> Result<Trained> {
    let seed = cfg.seed();
    let d = &cfg.data;
    let mut baselines = Vec::new();
    if cfg.baselines {
        baselines.extend(train_kge(&standalone(cfg, TaskName::Kge), lenient)?.reports);
        baselines.extend(train_et(&standalone(cfg, TaskName::Et), lenient)?.reports);
    }
    let train = read_triples(&d.train, lenient)?;
    let dev = read_triples(&d.dev, lenient)?;
    let test = read_triples(&d.test, lenient)?;
    let ty_train = read_typing(&d.typing_train, lenient)?;
    let ty_dev = read_typing(&d.typing_dev, lenient)?;
    let ty_test = read_typing(&d.typing_test, lenient)?;
    let inv = TypeInventory::build(
        ty_train.iter().chain(&ty_dev).chain(&ty_test).flat_map(|r| r.types.iter().map(String::as_str)),
    );
    let vocab = Vocabulary::build(triple_tokens(&train)?.into_iter().chain(typing_tokens(&ty_train)), cfg.max_vocab)
        .during("build_vocabulary")?;
    let emb = embeddings(cfg, &vocab)?;
    let mut store = ParamStore::new();
    let Models { kge, et, .. } = models::build(&mut store, cfg, vocab.len(), inv.len(), emb)?;
    let (kge, et) = (kge.expect("kge model"), et.expect("typer model"));
    let known: Vec<Triple> = dev.iter().chain(&test).cloned().collect();
    let mut kge_task = KgeTrainer::new(
        kge.clone(),
        cfg.optimizer()?,
        &vocab,
        &train,
        &known,
        cfg.negative_ratio,
        cfg.batch_size,
        seed,
    )
    .during("train_joint")?;
    let ty_train_inst = instances(&ty_train, &vocab, &inv)?;
    let mut et_task =
        TyperTrainer::new(et.clone(), cfg.optimizer()?, ty_train_inst.clone(), cfg.batch_size, seed).during("train_joint")?;
    let schedule = AlternationSchedule {
        unit: cfg.interval(),
        order: vec![0, 1],
        rounds: cfg.epochs,
    };
    let mut tasks: [&mut dyn Task<f32>; 2] = [&mut kge_task, &mut et_task];
    train_alternating(&mut store, &mut tasks, &schedule, |_, _| Ok(())).during("train_joint")?;
    let (kge_report, thresholds) = kge_fit_and_evaluate(&kge, &store, &vocab, &train, &dev, &test, seed)?;
    let ty_eval = match [&ty_test, &ty_dev].into_iter().find(|s| !s.is_empty()) {
        Some(recs) => instances(recs, &vocab, &inv)?,
        None => ty_train_inst,
    };
    let et_report = typing_report(&et, &store, &ty_eval)?;
    let out = cfg.output_dir();
    let mut reports = baselines.clone();
    reports.push(joint_record(out, &baselines, cfg.task(), &kge_report, display(&[&d.train, &d.dev, &d.test]), seed)?);
    reports.push(joint_record(
        out,
        &baselines,
        cfg.task(),
        &et_report,
        display(&[&d.typing_train, &d.typing_dev, &d.typing_test]),
        seed,
    )?);
    let aux = Aux {
        tasks: vec!["kge".into(), "et".into()],
        thresholds: Some(Thresholds::from(&thresholds)),
        types: inv.names().to_vec(),
    };
    Ok(Trained {
        reports,
        archive: Some((cfg.clone(), vocab, aux, store)),
    })
}

pub fn kge_lm_settings(cfg: &RunConfig) -> Result<KgeLmSettings> {
    let optimizer = cfg.optimizer()?;
    Ok(KgeLmSettings {
        kge: cfg.kge_config(),
        lm: cfg.lm_config(),
        optimizer: optimizer.kind,
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        interval: cfg.interval(),
        negative_ratio: cfg.negative_ratio,
    })
}

pub fn train_joint_kge_lm(cfg: &RunConfig, lenient: bool) -> Result<Trained> {
    let seed = cfg.seed();
    let train_path = required(&cfg.data.train, "data.train")?;
    let records = readers::collect(readers::joint(&train_path, lenient)?)?;
    let data = JointData::prepare(&records, cfg.max_vocab, seed).during("prepare_corpus")?;
    let emb = embeddings(cfg, &data.vocab)?;
    let plan = cfg.sharing_plan()?;
    let settings = kge_lm_settings(cfg)?;
    let datasets = display(&[&cfg.data.train]);
    let mut baselines = Vec::new();
    if cfg.baselines {
        for kind in [RunKind::KgeOnly, RunKind::LmOnly] {
            let o = run_kge_lm(&data, &plan, &settings, kind, emb.clone(), seed, |_, _| Ok(())).during("train_baseline")?;
            for r in o.kge_report.iter().chain(&o.lm_report) {
                baselines.push(record(r, &r.task, datasets.clone(), seed)?);
            }
        }
    }
    let o = run_kge_lm(&data, &plan, &settings, RunKind::Joint, emb, seed, |_, _| Ok(())).during("train_joint")?;
    let out = cfg.output_dir();
    let mut reports = baselines.clone();
    for r in o.kge_report.iter().chain(&o.lm_report) {
        reports.push(joint_record(out, &baselines, cfg.task(), r, datasets.clone(), seed)?);
    }
    let aux = Aux {
        tasks: vec!["kge".into(), "lm".into()],
        thresholds: o.thresholds.as_ref().map(Thresholds::from),
        types: Vec::new(),
    };
    Ok(Trained {
        reports,
        archive: Some((cfg.clone(), data.vocab, aux, o.store)),
    })
}

/// Run the training command for `cfg.task()`, then write the archive and
/// append the reports in the output directory.
pub fn train(cfg: &RunConfig, lenient: bool, stdout: &mut dyn Write) -> Result<PathBuf> {
    let trained = match cfg.task() {
        TaskName::Kge => train_kge(cfg, lenient)?,
        TaskName::Et => train_et(cfg, lenient)?,
        TaskName::Lm => train_lm(cfg, lenient)?,
        TaskName::JointKgeEt => train_joint_kge_et(cfg, lenient)?,
        TaskName::JointKgeLm => train_joint_kge_lm(cfg, lenient)?,
    };
    let out = cfg.output_dir();
    let (c, vocab, aux, store) = trained.archive.expect("training produces a model");
    let path = models::save(out, &c, &vocab, &aux, &store)?;
    report::append(out, &trained.reports)?;
    for r in &trained.reports {
        writeln!(stdout, "{}", r.to_json()).map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    }
    Ok(path)
}

fn kge_eval_triples(loaded: &Loaded, data: &Path, lenient: bool) -> Result<Vec<Triple>> {
    let triples = readers::collect(readers::triples(data, lenient)?)?;
    let known: BTreeSet<TripleKey> = positives(&triples).iter().map(Triple::key).collect();
    let pool = entity_pool(&triples);
    labelled_set(&triples, &pool, &known, &mut rng::stream(loaded.cfg.seed(), "eval-negatives"))
}

/// Evaluate an archived model on one file.
pub fn evaluate(loaded: &Loaded, task: &str, data: &Path, lenient: bool) -> Result<EvalReport> {
    match task {
        "kge" => {
            let triples = kge_eval_triples(loaded, data, lenient)?;
            let s = scored(loaded.kge()?, &loaded.store, &loaded.vocab, &triples)?;
            evaluate_scored(&s, &loaded.thresholds()?).during("evaluate")
        }
        "et" => {
            let inv = loaded.inventory()?;
            let recs = readers::collect(readers::typing(data, lenient)?)?;
            let inst = instances(&recs, &loaded.vocab, &inv)?;
            typing_report(loaded.typer()?, &loaded.store, &inst)
        }
        "lm" => {
            let mut r = EvalReport::new("lm");
            r.set("perplexity", Some(lm_file_perplexity(loaded.lm()?, &loaded.store, &loaded.vocab, data, lenient)?));
            Ok(r)
        }
        other => Err(CliError::Usage(format!("unknown task {other}"))),
    }
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::io(Path::new("<stdout>"), e)
}

/// KGE lines are `head \t relation \t tail \t score \t true|false`; typing
/// lines are JSON objects with the predicted type names and all scores.
pub fn predict(loaded: &Loaded, task: &str, data: &Path, lenient: bool, stdout: &mut dyn Write) -> Result<()> {
    match task {
        "kge" => {
            let triples = readers::collect(readers::triples(data, lenient)?)?;
            let thresholds = loaded.thresholds()?;
            let scores = kge_scores(loaded.kge()?, &loaded.store, &loaded.vocab, &triples)?;
            for (t, s) in triples.iter().zip(scores) {
                writeln!(stdout, "{}\t{}\t{}\t{s}\t{}", t.head, t.relation, t.tail, thresholds.predict(&t.relation, s))
                    .map_err(out_err)?;
            }
        }
        "et" => {
            let inv = loaded.inventory()?;
            let recs = readers::collect(readers::typing(data, lenient)?)?;
            let inst: Vec<TypingInstance> = recs
                .iter()
                .map(|r| {
                    let tokens = r.tokens.iter().map(|t| loaded.vocab.lookup(&t.to_lowercase())).collect();
                    TypingInstance::new(tokens, r.start, r.end, Vec::new()).during("encode_typing")
                })
                .collect::<Result<_>>()?;
            let preds = typing_predictions(loaded.typer()?, &loaded.store, &inst)?;
            for (r, p) in recs.iter().zip(preds) {
                let types: Vec<&str> = p.types.iter().map(|&t| inv.name(t).unwrap_or("?")).collect();
                let line = serde_json::json!({
                    "mention": r.tokens[r.start..r.end].join(" "),
                    "start": r.start,
                    "end": r.end,
                    "types": types,
                    "scores": p.scores,
                });
                writeln!(stdout, "{line}").map_err(out_err)?;
            }
        }
        other => return Err(CliError::Usage(format!("predict supports kge and et, not {other}"))),
    }
    Ok(())
}

/// Continuation of `prompt`, as space-separated tokens.
pub fn generate(loaded: &Loaded, prompt: &str, max_len: usize, decoding: Decoding) -> Result<String> {
    let lm = loaded.lm()?;
    let ids = loaded.vocab.encode(jket_core::vocab::words(prompt));
    let out = lm.generate(&loaded.store, &ids, max_len, decoding).during("generate")?;
    Ok(out
        .iter()
        .map(|&i| loaded.vocab.token(i).unwrap_or("<unk>"))
        .collect::<Vec<_>>()
        .join(" "))
}

/// Print one line per check; true when all pass.
pub fn gradcheck(instances: usize, seed: u64, stdout: &mut dyn Write) -> Result<bool> {
    let mut all = true;
    for (name, build) in gradcheck::suite() {
        let r = gradcheck::run_check(name, build, instances, seed).during("gradcheck")?;
        all &= r.passed;
        writeln!(
            stdout,
            "{:<20} instances={} max_rel_error={:.3e} {}",
            r.name,
            r.instances,
            r.max_rel_error,
            if r.passed { "PASS" } else { "FAIL" }
        )
        .map_err(out_err)?;
    }
    Ok(all)
}
