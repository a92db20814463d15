use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use super::{Cli, CliError, CliResult, Command, Global, ModelOpts};
use crate::data::{
    apply_corrections, generate_neither, generate_synthetic, load_corrections, load_documents, parse_tsv, tokenize,
    write_documents, write_tsv, Document, GapSample, NeitherConfig, SynthConfig, SyntheticSample, Vocab,
};
use crate::evidence::{
    load_evidence, parse_evidence, run_providers, Corrupt, EvidenceSet, Heuristic, Oracle, Provider, ProviderInput,
};
use crate::manifest::{ManifestBuilder, RunManifest};
use crate::model::{EvidenceTrace, Model};
use crate::service::{Corpus, Service};
use crate::tensor::Archive;
use crate::train::{
    assign_folds, confusion_compare, ensemble_mean, gap_f1, golds, kfold_ensemble, logloss, predict, prepare_examples,
    prob_histograms, read_predictions_csv, train, write_history_csv, write_predictions_csv, Example, Gold,
    ScoreReport, TrainConfig,
};

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn create_dir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).map_err(|e| internal(format!("{}: {e}", p.display())))
}

fn write_text(p: &Path, text: &str) -> CliResult<()> {
    fs::write(p, text).map_err(|e| internal(format!("{}: {e}", p.display())))
}

fn manifest_path(g: &Global, cmd: &str, out: Option<&Path>) -> PathBuf {
    if let Some(m) = &g.manifest {
        return m.clone();
    }
    match out {
        Some(o) if o.is_dir() => o.join("manifest.json"),
        Some(o) => {
            let mut s = o.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
        None => PathBuf::from(format!("{cmd}.manifest.json")),
    }
}

struct Run<'a> {
    g: &'a Global,
    m: ManifestBuilder,
}

impl Run<'_> {
    fn samples(&mut self, p: &Path) -> CliResult<Vec<GapSample>> {
        let p = self.input(p)?;
        Ok(parse_tsv(&p)?)
    }

    fn input(&mut self, p: &Path) -> CliResult<PathBuf> {
        let p = self.g.resolve(p);
        self.m.input(&p).map_err(invalid)?;
        Ok(p)
    }

    fn evidence(&mut self, p: Option<&Path>, samples: &[GapSample], providers: &[String]) -> CliResult<Option<EvidenceSet>> {
        let Some(p) = p else { return Ok(None) };
        let p = self.input(p)?;
        let sel = (!providers.is_empty()).then_some(providers);
        let (set, report) = load_evidence(&p, samples, sel)?;
        log::info!("evidence {}: {report:?}", p.display());
        Ok(Some(set))
    }
}

pub(super) fn execute(cli: &Cli, argv: Vec<String>, out: &mut dyn Write) -> CliResult<()> {
    let name = cli.command.name();
    let mut run = Run { g: &cli.global, m: ManifestBuilder::new(name, argv) };
    let out_path = dispatch(&cli.command, &mut run, out)?;
    let manifest: RunManifest = run.m.finish();
    manifest.write_atomic(&manifest_path(&cli.global, name, out_path.as_deref()))?;
    Ok(())
}

fn say(out: &mut dyn Write, text: impl std::fmt::Display) -> CliResult<()> {
    writeln!(out, "{text}").map_err(internal)
}

fn dispatch(cmd: &Command, run: &mut Run, out: &mut dyn Write) -> CliResult<Option<PathBuf>> {
    match cmd {
        Command::Preprocess { data, corrections, vocab_size, max_len, out: dir } => {
            run.m.config(&json!({"corrections": corrections, "vocab_size": vocab_size, "max_len": max_len}));
            run.m.phase("parse");
            let mut samples = run.samples(data)?;
            say(out, format!("parsed {}: {}", data.display(), class_line(&samples)))?;
            create_dir(dir)?;
            if let Some(c) = corrections {
                let c = run.input(c)?;
                let records = load_corrections(&c)?;
                let (fixed, report) = apply_corrections(&samples, &records)?;
                samples = fixed;
                say(out, &report)?;
                let delta = dir.join("delta.tsv");
                write_text(&delta, &format!("{report}\n"))?;
                run.m.output(&delta);
            }
            run.m.phase("tokenize");
            let vocab = Vocab::build(samples.iter().map(|s| s.text.as_str()), *vocab_size)?;
            let mut quarantine = String::from("id\treason\n");
            let mut kept = 0;
            for s in &samples {
                match tokenize(s, &vocab, *max_len) {
                    Ok(_) => kept += 1,
                    Err(e) => quarantine.push_str(&format!("{}\t{e}\n", s.id)),
                }
            }
            let corpus = dir.join("corpus.tsv");
            write_tsv(&corpus, &samples)?;
            let vpath = dir.join("vocab.json");
            write_text(&vpath, &serde_json::to_string(&vocab).map_err(internal)?)?;
            let qpath = dir.join("quarantine.tsv");
            write_text(&qpath, &quarantine)?;
            for p in [&corpus, &vpath, &qpath] {
                run.m.output(p);
            }
            say(out, format!("{kept} tokenized, {} quarantined, vocabulary {}", samples.len() - kept, vocab.len()))?;
            Ok(Some(dir.clone()))
        }
        Command::GenSynth { size, insufficient, seed, prefix, out: dir } => {
            let cfg = SynthConfig {
                size: *size,
                insufficient_fraction: *insufficient,
                seed: *seed,
                id_prefix: prefix.clone(),
                ..SynthConfig::default()
            };
            run.m.config(&cfg).seed(*seed);
            let corpus = generate_synthetic(&cfg)?;
            create_dir(dir)?;
            let tsv = dir.join("synth.tsv");
            write_tsv(&tsv, &corpus.gap_samples())?;
            let gold = dir.join("gold.jsonl");
            let lines: Vec<String> = corpus
                .samples
                .iter()
                .map(|s| serde_json::to_string(s).map_err(internal))
                .collect::<CliResult<_>>()?;
            write_text(&gold, &(lines.join("\n") + "\n"))?;
            let docs = dir.join("documents.jsonl");
            write_documents(&docs, &Document::from_synthetic(&corpus))?;
            for p in [&tsv, &gold, &docs] {
                run.m.output(p);
            }
            say(out, format!("generated {}: {}", corpus.samples.len(), class_line(&corpus.gap_samples())))?;
            Ok(Some(dir.clone()))
        }
        Command::GenNeither { documents, quota_m, quota_f, seed, out: path } => {
            let cfg = NeitherConfig { quota_m: *quota_m, quota_f: *quota_f, seed: *seed, ..NeitherConfig::default() };
            run.m.config(&cfg).seed(*seed);
            let p = run.input(documents)?;
            let docs = load_documents(&p)?;
            let samples = generate_neither(&docs, &cfg);
            write_tsv(path, &samples)?;
            run.m.output(path);
            let (m, f) = samples.iter().fold((0, 0), |(m, f), s| match s.gender {
                crate::data::Gender::M => (m + 1, f),
                crate::data::Gender::F => (m, f + 1),
            });
            say(out, format!("{} NEITHER samples ({m} masculine, {f} feminine) from {} documents", samples.len(), docs.len()))?;
            Ok(Some(path.clone()))
        }
        Command::Evidence { data, providers, gold, import, seed, out: path } => {
            run.m.config(&json!({"providers": providers, "gold": gold, "import": import})).seed(*seed);
            let samples = run.samples(data)?;
            let gold_map = match gold {
                Some(p) => load_gold(&run.input(p)?)?,
                None => HashMap::new(),
            };
            let provs = build_providers(providers, *seed)?;
            let inputs: Vec<ProviderInput> = samples
                .iter()
                .map(|s| ProviderInput { sample: s, gold: gold_map.get(&s.id).map(Vec::as_slice) })
                .collect();
            let mut set = run_providers(&provs, &inputs)?;
            if let Some(p) = import {
                let p = run.input(p)?;
                let raw = fs::read_to_string(&p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
                let (imported, report) = parse_evidence(&raw, &samples, None)?;
                say(out, format!("imported {} clusters ({} spans dropped)", imported.len(), report.dropped_spans))?;
                for s in &samples {
                    for c in imported.get(&s.id) {
                        set.insert(c.clone());
                    }
                }
            }
            set.save(path)?;
            run.m.output(path);
            say(out, format!("{} clusters from {} providers over {} samples", set.len(), set.providers.len(), set.num_samples()))?;
            Ok(Some(path.clone()))
        }
        Command::Train { data, val, evidence, providers, model, seed, folds, out: dir } => {
            run.m.phase("load");
            let all = run.samples(data)?;
            let (train_s, val_s) = match val {
                Some(v) => (all, run.samples(v)?),
                None => {
                    let ids: Vec<&str> = all.iter().map(|s| s.id.as_str()).collect();
                    let f = assign_folds(&ids, (*folds).max(2), *seed);
                    let (mut tr, mut va) = (Vec::new(), Vec::new());
                    for (s, &k) in all.iter().zip(&f) {
                        if k == 0 { va.push(s.clone()) } else { tr.push(s.clone()) }
                    }
                    (tr, va)
                }
            };
            let both: Vec<GapSample> = train_s.iter().chain(&val_s).cloned().collect();
            let ev = run.evidence(evidence.as_deref(), &both, providers)?;
            let (mut cfg, vocab_size) = train_config(model, *seed, *folds)?;
            let vocab = Vocab::build(train_s.iter().map(|s| s.text.as_str()), vocab_size)?;
            cfg.model.encoder.vocab_size = vocab.len();
            run.m.config(&json!({"train": cfg, "providers": ev.as_ref().map(|e| &e.providers)})).seed(*seed);
            let tr = examples(&train_s, &vocab, &cfg, ev.as_ref(), out)?;
            let va = examples(&val_s, &vocab, &cfg, ev.as_ref(), out)?;
            run.m.phase("train");
            let outcome = train(&cfg, &tr, &va)?;
            run.m.phase("write");
            create_dir(dir)?;
            let ckpt = dir.join("model.ckpt");
            let meta = checkpoint_meta(&vocab, &cfg, ev.as_ref());
            outcome.model.save(&ckpt, meta)?;
            let hist = dir.join("history.csv");
            write_history_csv(&hist, &outcome.history)?;
            let preds = predict(&outcome.model, &va)?;
            let vp = dir.join("val_predictions.csv");
            write_predictions_csv(&vp, &preds)?;
            for p in [&ckpt, &hist, &vp] {
                run.m.output(p);
            }
            say(out, format!("{} steps, best step {} (validation log loss {:.4})", outcome.steps, outcome.best_step, outcome.best_val_loss))?;
            say(out, ScoreReport::HEADER)?;
            say(out, gap_f1(&preds, &golds(&va)).row())?;
            Ok(Some(dir.clone()))
        }
        Command::CvEnsemble { data, test, evidence, providers, model, seed, folds, seeds, out: dir } => {
            run.m.phase("load");
            let data_s = run.samples(data)?;
            let test_s = run.samples(test)?;
            let both: Vec<GapSample> = data_s.iter().chain(&test_s).cloned().collect();
            let ev = run.evidence(evidence.as_deref(), &both, providers)?;
            let (mut cfg, vocab_size) = train_config(model, *seed, *folds)?;
            let vocab = Vocab::build(data_s.iter().map(|s| s.text.as_str()), vocab_size)?;
            cfg.model.encoder.vocab_size = vocab.len();
            run.m.config(&json!({"train": cfg, "seeds": seeds, "providers": ev.as_ref().map(|e| &e.providers)})).seed(*seed);
            let tr = examples(&data_s, &vocab, &cfg, ev.as_ref(), out)?;
            let te = examples(&test_s, &vocab, &cfg, ev.as_ref(), out)?;
            run.m.phase("train");
            let result = kfold_ensemble(&cfg, &tr, &te, seeds)?;
            run.m.phase("write");
            create_dir(dir)?;
            say(out, format!("trained {} models ({} folds x {} seeds)", result.runs.len(), folds, seeds.len()))?;
            let data_gold = golds(&tr);
            let test_gold = golds(&te);
            say(out, format!("set\t{}", ScoreReport::HEADER))?;
            for (s, oof) in seeds.iter().zip(result.oof_sets(seeds)) {
                let p = dir.join(format!("oof_seed{s}.csv"));
                write_predictions_csv(&p, &oof)?;
                run.m.output(&p);
                say(out, format!("oof seed {s}\t{}", gap_f1(&oof, &data_gold).row()))?;
            }
            let members = result.test_sets();
            let mut member_losses = Vec::new();
            for r in &result.runs {
                let p = dir.join(format!("test_seed{}_fold{}.csv", r.seed, r.fold));
                write_predictions_csv(&p, &r.test)?;
                run.m.output(&p);
                member_losses.push(logloss(&r.test, &test_gold)?);
            }
            let ens = ensemble_mean(&members)?;
            let p = dir.join("test_ensemble.csv");
            write_predictions_csv(&p, &ens)?;
            run.m.output(&p);
            let ens_report = gap_f1(&ens, &test_gold);
            say(out, format!("test ensemble\t{}", ens_report.row()))?;
            let mean = member_losses.iter().sum::<f64>() / member_losses.len().max(1) as f64;
            say(out, format!("member log loss mean {mean:.4}, ensemble {:.4}", ens_report.logloss))?;
            let summary = dir.join("summary.json");
            write_text(
                &summary,
                &serde_json::to_string_pretty(&json!({
                    "test_ensemble": ens_report,
                    "member_logloss": member_losses,
                    "best_steps": result.runs.iter().map(|r| r.best_step).collect::<Vec<_>>(),
                }))
                .map_err(internal)?,
            )?;
            run.m.output(&summary);
            Ok(Some(dir.clone()))
        }
        Command::Score { preds, gold, out: path } => {
            let gold_s = run.samples(gold)?;
            let g: Vec<Gold> = gold_s.iter().map(Gold::from).collect();
            let mut reports = Vec::new();
            for p in preds {
                let pp = run.input(p)?;
                let r = gap_f1(&read_predictions_csv(&pp)?, &g);
                if r.missing > 0 {
                    log::warn!("{}: {} gold samples without a prediction", p.display(), r.missing);
                }
                say(out, format!("{}\n{r}", p.display()))?;
                reports.push(json!({"pred": p, "report": r}));
            }
            if let Some(path) = path {
                write_text(path, &serde_json::to_string_pretty(&reports).map_err(internal)?)?;
                run.m.output(path);
            }
            Ok(path.clone())
        }
        Command::Compare { preds, gold, names, out: path } => {
            if names.len() != 2 || preds.len() != 2 {
                return Err(invalid("compare takes exactly two --pred files and two --names"));
            }
            let g: Vec<Gold> = run.samples(gold)?.iter().map(Gold::from).collect();
            let a = read_predictions_csv(&run.input(&preds[0])?)?;
            let b = read_predictions_csv(&run.input(&preds[1])?)?;
            let c = confusion_compare(&a, &b, &g, [names[0].as_str(), names[1].as_str()])?;
            say(out, &c)?;
            if let Some(path) = path {
                write_text(path, &format!("{c}\n"))?;
                run.m.output(path);
            }
            Ok(path.clone())
        }
        Command::Histograms { pred, gold, bins, out: path } => {
            run.m.config(&json!({"bins": bins}));
            let g: Vec<Gold> = run.samples(gold)?.iter().map(Gold::from).collect();
            let p = read_predictions_csv(&run.input(pred)?)?;
            let h = prob_histograms(&p, &g, *bins)?;
            let mut text = String::from("bin\tA\tB\tNEITHER\n");
            for i in 0..h.bins {
                let lo = i as f64 / h.bins as f64;
                let hi = (i + 1) as f64 / h.bins as f64;
                text.push_str(&format!("{lo:.2}-{hi:.2}\t{}\t{}\t{}\n", h.counts[0][i], h.counts[1][i], h.counts[2][i]));
            }
            say(out, text.trim_end())?;
            if let Some(path) = path {
                write_text(path, &text)?;
                run.m.output(path);
            }
            Ok(path.clone())
        }
        Command::ExportAttention { checkpoint, data, evidence, out: path } => {
            let ck = run.input(checkpoint)?;
            let (model, vocab, providers) = load_checkpoint(&ck)?;
            run.m.config(&json!({"model": model.config, "providers": providers}));
            let samples = run.samples(data)?;
            let ev = run.evidence(evidence.as_deref(), &samples, &providers)?;
            let cfg = TrainConfig { model: model.config.clone(), ..TrainConfig::default() };
            let ex = examples(&samples, &vocab, &cfg, ev.as_ref(), out)?;
            let mut text = String::new();
            let mut worst: f64 = 0.0;
            for e in &ex {
                let t = model.predict_traced(&e.input())?;
                worst = worst.max(t.max_normalization_error());
                text.push_str(&serde_json::to_string(&t).map_err(internal)?);
                text.push('\n');
            }
            write_text(path, &text)?;
            run.m.output(path);
            say(out, format!("{} traces, largest normalization error {worst:.2e}", ex.len()))?;
            Ok(Some(path.clone()))
        }
        Command::Serve { data, evidence, providers, traces, preds, corrections, host, port } => {
            let samples = run.samples(data)?;
            let ev = run.evidence(evidence.as_deref(), &samples, providers)?.unwrap_or_default();
            let traces = match traces {
                Some(p) => load_traces(&run.input(p)?)?,
                None => HashMap::new(),
            };
            let mut predictions = Vec::new();
            for spec in preds {
                let (name, p) = spec
                    .split_once('=')
                    .ok_or_else(|| invalid(format!("--pred {spec:?}: expected name=path")))?;
                predictions.push((name.to_string(), read_predictions_csv(&run.input(Path::new(p))?)?));
            }
            run.m.config(&json!({"host": host, "port": port, "corrections": corrections}));
            let service = Service::new(Corpus { samples, evidence: ev, traces, predictions }, corrections.clone())?;
            let addr: std::net::SocketAddr = format!("{host}:{port}").parse().map_err(invalid)?;
            let rt = tokio::runtime::Runtime::new().map_err(internal)?;
            say(out, format!("serving on http://{addr}"))?;
            rt.block_on(crate::service::serve(service, addr)).map_err(internal)?;
            run.m.output(corrections);
            Ok(None)
        }
    }
}

fn class_line(samples: &[GapSample]) -> String {
    let mut c = [0usize; 3];
    for s in samples {
        c[s.label().index()] += 1;
    }
    format!("A {} / B {} / NEITHER {} / total {}", c[0], c[1], c[2], samples.len())
}

fn load_gold(path: &Path) -> CliResult<HashMap<String, Vec<(usize, usize)>>> {
    let raw = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let s: SyntheticSample = serde_json::from_str(l).map_err(|e| invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
            Ok((s.sample.id, s.gold_cluster))
        })
        .collect()
}

fn load_traces(path: &Path) -> CliResult<HashMap<String, EvidenceTrace>> {
    let raw = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let t: EvidenceTrace = serde_json::from_str(l).map_err(|e| invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
            Ok((t.sample_id.clone(), t))
        })
        .collect()
}

/// `name` or `name=kind`, kind being heuristic, oracle or corrupt:RATE
/// (corrupting oracle clusters).
pub fn build_providers(specs: &[String], seed: u64) -> CliResult<Vec<Box<dyn Provider>>> {
    specs
        .iter()
        .map(|spec| {
            let (name, kind) = spec.split_once('=').unwrap_or((spec, spec));
            let p: Box<dyn Provider> = match kind.split_once(':') {
                None if kind == "heuristic" || kind == "parallelism" => Box::new(Heuristic::new(name)),
                None if kind == "oracle" => Box::new(Oracle::new(name)),
                Some(("corrupt", rate)) => {
                    let rate: f64 = rate.parse().map_err(|_| invalid(format!("provider {spec:?}: bad rate")))?;
                    Box::new(Corrupt::new(name, Box::new(Oracle::new(name)), rate, seed)?)
                }
                _ => return Err(invalid(format!("unknown provider kind in {spec:?}"))),
            };
            Ok(p)
        })
        .collect()
}

fn train_config(o: &ModelOpts, seed: u64, folds: usize) -> CliResult<(TrainConfig, usize)> {
    let mut cfg = match &o.config {
        Some(p) => {
            let raw = fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<TrainConfig>(&raw).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => {
            let mut c = TrainConfig::for_kind(o.model);
            let e = &mut c.model.encoder;
            e.hidden = o.hidden;
            e.layers = o.layers;
            e.heads = o.heads;
            e.max_len = o.max_len;
            e.vocab_size = o.vocab_size;
            e.dropout = o.dropout;
            c.model.ep.dropout = o.dropout;
            c.max_steps = o.max_steps;
            c.eval_every = o.eval_every;
            c.patience = o.patience;
            c.workers = o.workers;
            if let Some(lr) = o.lr {
                c.adam.lr = lr;
            }
            if let Some(b) = o.batch_size {
                c.batch_size = b;
            }
            c
        }
    };
    cfg.seed = seed;
    cfg.folds = folds;
    cfg.validate()?;
    let vocab_size = cfg.model.encoder.vocab_size;
    Ok((cfg, vocab_size))
}

fn examples(samples: &[GapSample], vocab: &Vocab, cfg: &TrainConfig, ev: Option<&EvidenceSet>, out: &mut dyn Write) -> CliResult<Vec<Example>> {
    let (ex, report) = prepare_examples(samples, vocab, cfg.model.encoder.max_len, ev, cfg.model.ep.keep_pronoun, None)?;
    if !report.quarantined.is_empty() {
        say(out, format!("skipped {} samples that do not fit the window", report.quarantined.len()))?;
    }
    if ex.is_empty() {
        return Err(invalid("no usable samples"));
    }
    Ok(ex)
}

fn checkpoint_meta(vocab: &Vocab, cfg: &TrainConfig, ev: Option<&EvidenceSet>) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("vocab".into(), json!(vocab));
    m.insert("train".into(), json!(cfg));
    m.insert("providers".into(), json!(ev.map(|e| e.providers.clone()).unwrap_or_default()));
    m
}

pub fn load_checkpoint(path: &Path) -> CliResult<(Model, Vocab, Vec<String>)> {
    let a = Archive::load(path).map_err(invalid)?;
    let model = Model::from_archive(&a)?;
    let vocab: Vocab = a
        .metadata
        .get("vocab")
        .cloned()
        .ok_or_else(|| invalid(format!("{}: checkpoint has no vocabulary", path.display())))
        .and_then(|v| serde_json::from_value(v).map_err(invalid))?;
    let providers: Vec<String> = a
        .metadata
        .get("providers")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(invalid)?
        .unwrap_or_default();
    Ok((model, vocab, providers))
}
