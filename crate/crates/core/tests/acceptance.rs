//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion fails. Training-based checks use fixed seeds and a fixed protocol.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gpr_core::data::{
    append_correction, apply_corrections, generate_synthetic, insert_mention_tags, load_corrections, parse_tsv,
    CorrectionRecord, GapSample, Gender, Label, SynthConfig, SyntheticCorpus, TokenizedExample, Vocab,
};
use gpr_core::evidence::{run_providers, AlignedCluster, AlignedEvidence, Corrupt, Oracle, Provider, ProviderInput, Span};
use gpr_core::model::{pool_range, EncoderConfig, EpConfig, Model, ModelConfig, ModelInput, ModelKind};
use gpr_core::tensor::{
    cross_entropy, grad_check, multi_head_attention, tanh_affine, GradCheckOptions, Graph, Mode, MhaParams, ParamStore,
    Tensor, TensorError, Var,
};
use gpr_core::train::{
    ensemble_mean, gap_f1, golds, logloss, predict, prepare_examples, train, Example, Gold, PredictionRecord,
    ScoreReport, TrainConfig, TrainOutcome,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Criterion = fn() -> Vec<(&'static str, Outcome)>;

fn single(name: &'static str, f: fn() -> Outcome) -> Vec<(&'static str, Outcome)> {
    vec![(name, f())]
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        || single("gradient integrity", gradient_integrity),
        || single("evidence pooling invariants", ep_invariants),
        || single("scorer oracle", scorer_oracle),
        || single("pipeline fidelity", pipeline_fidelity),
        || single("ensembling", ensembling),
        evidence_and_signals,
    ];
    let mut failed = 0;
    for f in criteria {
        let t = Instant::now();
        let results = match std::panic::catch_unwind(f) {
            Ok(r) => r,
            Err(e) => {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                vec![("criterion", outcome(false, format!("panicked: {}", msg.unwrap_or_default())))]
            }
        };
        let secs = t.elapsed().as_secs_f64();
        for (name, o) in results {
            for (i, line) in o.detail.lines().enumerate() {
                if i == 0 {
                    println!("{} {name} ({secs:.1}s): {line}", if o.pass { "PASS" } else { "FAIL" });
                } else {
                    println!("     {line}");
                }
            }
            failed += (!o.pass) as usize;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}

fn tensor_err(e: impl std::fmt::Display) -> TensorError {
    TensorError::InvalidArgument(e.to_string())
}

fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

// ---------------------------------------------------------------------------

struct Fixture {
    toks: Vec<TokenizedExample>,
    evidence: Vec<AlignedEvidence>,
    vocab_size: usize,
}

impl Fixture {
    fn new(n: usize, providers: &[Box<dyn Provider>], seed: u64) -> Self {
        let corpus = generate_synthetic(&SynthConfig { size: n.max(6), seed, ..SynthConfig::default() }).unwrap();
        let samples: Vec<GapSample> = corpus.gap_samples().into_iter().take(n).collect();
        let vocab = Vocab::build(samples.iter().map(|s| s.text.as_str()), 400).unwrap();
        let (ex, _) = prepare_examples(&samples, &vocab, 96, Some(&oracle_evidence(&corpus, providers, n)), true, None).unwrap();
        let (toks, evidence) = ex.into_iter().map(|e| (e.tok, e.evidence)).unzip();
        Fixture { toks, evidence, vocab_size: vocab.len() }
    }

    fn input(&self, i: usize) -> ModelInput<'_> {
        ModelInput { tok: &self.toks[i], evidence: &self.evidence[i], embeddings: None }
    }
}

fn oracle_evidence(corpus: &SyntheticCorpus, providers: &[Box<dyn Provider>], n: usize) -> gpr_core::evidence::EvidenceSet {
    let inputs: Vec<ProviderInput> = corpus
        .samples
        .iter()
        .take(n)
        .map(|s| ProviderInput { sample: &s.sample, gold: Some(&s.gold_cluster) })
        .collect();
    run_providers(providers, &inputs).unwrap()
}

fn config(kind: ModelKind, vocab_size: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        kind,
        encoder: EncoderConfig { vocab_size, hidden, layers: 1, heads: 2, max_len: 96, ffn_mult: 2, ..EncoderConfig::default() },
        ep: EpConfig { heads: 2, ..EpConfig::default() },
        ..ModelConfig::default()
    }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let tight = GradCheckOptions { step: 1e-5, ..GradCheckOptions::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: Vec<(String, f64)> = Vec::new();

    // every primitive op in one scalar graph
    let mut s = ParamStore::new();
    let shapes: [(&str, &[usize]); 10] = [
        ("a", &[3, 4]),
        ("b", &[4, 4]),
        ("c", &[3, 4]),
        ("v", &[4]),
        ("table", &[6, 4]),
        ("gamma", &[4]),
        ("beta", &[4]),
        ("r", &[8, 4]),
        ("w", &[4, 3]),
        ("wb", &[3]),
    ];
    let ids: Vec<_> = shapes.iter().map(|(n, sh)| s.insert(*n, rand_tensor(&mut rng, sh)).unwrap()).collect();
    let rep = grad_check(
        &mut s,
        |g| {
            let p: Vec<Var> = ids.iter().map(|&i| g.param(i)).collect();
            let ab = g.matmul(p[0], p[1])?;
            let abt = g.matmul_t(p[0], p[2])?;
            let sm = g.softmax(abt, 1, Some(&[true, false, true]))?;
            let mixed = g.matmul(sm, p[2])?;
            let x = g.add(ab, mixed)?;
            let x = g.add_row(x, p[3])?;
            let x = g.gelu(x);
            let x = g.layer_norm(x, p[5], p[6], 1e-12)?;
            let x = g.mul(x, p[2])?;
            let t = g.transpose(x)?;
            let t = g.transpose(t)?;
            let sm0 = g.softmax(t, 0, None)?;
            let rows = g.gather_rows(p[4], &[1, 4, 1])?;
            let y = g.add(sm0, rows)?;
            let y = g.tanh(y);
            let y = g.dropout(y, 0.3)?;
            let top = g.slice_rows(y, 0, 2)?;
            let left = g.slice_cols(y, 1, 2)?;
            let left = g.reshape(left, &[2, 3])?;
            let left = g.transpose(left)?;
            let right = g.slice_cols(y, 0, 2)?;
            let lr = g.concat_cols(&[left, right])?;
            let stacked = g.concat_rows(&[top, lr, y])?;
            let stacked = g.scale(stacked, 0.7);
            let stacked = g.mask_scale(stacked, (0..32).map(|i| (i % 3) as f64).collect());
            let z = g.mul(stacked, p[7])?;
            let head = g.slice_rows(z, 0, 2)?;
            let logits = tanh_affine(g, head, p[8], p[9])?;
            let probs = g.softmax(logits, 1, None)?;
            let ce = cross_entropy(g, probs, &[0, 2])?;
            let rest = g.sum(z);
            let rest = g.scale(rest, 0.1);
            let total = g.concat_cols(&[ce, rest])?;
            Ok(g.sum(total))
        },
        tight,
    )
    .unwrap();
    worst.push(("primitives".into(), rep.max_rel_error));

    // multi-head attention with a key mask
    let mut s = ParamStore::new();
    let mha = MhaParams::new(&mut s, "mha", 8, 2, &mut rng).unwrap();
    let q = s.insert("q", rand_tensor(&mut rng, &[2, 8])).unwrap();
    let kv = s.insert("kv", rand_tensor(&mut rng, &[5, 8])).unwrap();
    let r = s.insert("r", rand_tensor(&mut rng, &[2, 8])).unwrap();
    let rep = grad_check(
        &mut s,
        |g| {
            let (q, kv, r) = (g.param(q), g.param(kv), g.param(r));
            let out = multi_head_attention(g, &mha, q, kv, kv, Some(&[true, true, false, true, true]), 0.0)?.output;
            let y = g.mul(out, r)?;
            Ok(g.sum(y))
        },
        tight,
    )
    .unwrap();
    worst.push(("attention".into(), rep.max_rel_error));

    // full graphs: 2 samples, 2 providers, H = 16
    let providers: Vec<Box<dyn Provider>> = vec![
        Box::new(Oracle::new("oracle")),
        Box::new(Corrupt::new("noisy", Box::new(Oracle::new("o")), 0.5, 4).unwrap()),
    ];
    let fx = Fixture::new(2, &providers, 17);
    let inputs = [fx.input(0), fx.input(1)];
    let gold: Vec<usize> = inputs.iter().map(|i| i.tok.label.index()).collect();
    for kind in [ModelKind::Probert, ModelKind::Grep] {
        let mut model = Model::new(config(kind, fx.vocab_size, 16), 9).unwrap();
        let shell = model.clone();
        let rep = grad_check(
            &mut model.store,
            |g| {
                let (probs, _) = shell.forward_batch(g, &inputs).map_err(tensor_err)?;
                cross_entropy(g, probs, &gold)
            },
            GradCheckOptions { step: 1e-5, max_elements: 800, ..GradCheckOptions::default() },
        )
        .unwrap();
        worst.push((format!("{kind} full graph ({} params checked)", rep.checked), rep.max_rel_error));
    }

    let elapsed = start.elapsed();
    let ok = worst.iter().all(|(_, e)| *e < 1e-4) && elapsed < Duration::from_secs(60);
    let mut detail = format!("max rel err < 1e-4 everywhere, {:.1}s < 60s", elapsed.as_secs_f64());
    for (n, e) in worst {
        detail.push_str(&format!("\n{n}: {e:.2e}"));
    }
    outcome(ok, detail)
}

// ---------------------------------------------------------------------------

/// Random clusters over the window, some mentions dropped (no range).
fn random_evidence(rng: &mut impl Rng, tok: &TokenizedExample, max_providers: usize) -> AlignedEvidence {
    let (lo, hi) = (tok.window.start.max(1), tok.len().max(2));
    let providers = rng.random_range(0..=max_providers);
    let clusters = (0..providers)
        .map(|p| {
            let n = rng.random_range(0..5);
            let ranges: Vec<Option<std::ops::Range<usize>>> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.15) {
                        return None;
                    }
                    let s = rng.random_range(lo..hi);
                    let e = (s + rng.random_range(1..4)).min(hi);
                    Some(s..e.max(s + 1))
                })
                .collect();
            AlignedCluster {
                provider: format!("p{p}"),
                spans: (0..ranges.len()).map(|k| Span::new(k * 10, 3)).collect(),
                ranges,
                dropped: 0,
            }
        })
        .collect();
    AlignedEvidence { clusters, dropped: 0 }
}

fn shuffled(ev: &AlignedEvidence, rng: &mut impl Rng) -> AlignedEvidence {
    let mut out = ev.clone();
    out.clusters.shuffle(rng);
    for c in &mut out.clusters {
        let mut idx: Vec<usize> = (0..c.ranges.len()).collect();
        idx.shuffle(rng);
        c.spans = idx.iter().map(|&i| c.spans[i]).collect();
        c.ranges = idx.iter().map(|&i| c.ranges[i].clone()).collect();
    }
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Pronoun-only classifier computed outside the evidence path.
fn pronoun_block(model: &Model, input: &ModelInput) -> [f64; 3] {
    let p = model.grep.as_ref().unwrap();
    let h = model.config.hidden();
    let mut g = Graph::new(&model.store, Mode::Eval);
    let emb = model.embed(&mut g, input).unwrap();
    let pool = p.entity_pool.as_ref().unwrap_or(&model.mention_pool);
    let e_p = pool_range(&mut g, pool, emb, input.tok.mentions[0].clone()).unwrap().output;
    let e_p = g.value(e_p).data().to_vec();
    let w = model.store.get(p.classifier.w).tensor();
    let b = model.store.get(p.classifier.b.unwrap()).tensor();
    let logits: Vec<f64> = (0..3).map(|j| b.data()[j] + (0..h).map(|k| e_p[k] * w.get2(k, j)).sum::<f64>()).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    std::array::from_fn(|j| (logits[j] - m).exp() / z)
}

fn ep_invariants() -> Outcome {
    const TRIALS: usize = 10_000;
    let fx = Fixture::new(40, &[Box::new(Oracle::new("oracle")) as Box<dyn Provider>], 5);
    let models: Vec<Model> = (0..8)
        .map(|k| {
            let mut cfg = config(ModelKind::Grep, fx.vocab_size, 8);
            cfg.ep.raw_token_keys = k % 2 == 1;
            Model::new(cfg, 100 + k as u64).unwrap()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut norm, mut perm, mut pad, mut block) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let empty = AlignedEvidence::default();
    for t in 0..TRIALS {
        let model = &models[t % models.len()];
        let i = rng.random_range(0..fx.toks.len());
        let tok = &fx.toks[i];
        let ev = random_evidence(&mut rng, tok, 4);
        let input = ModelInput { tok, evidence: &ev, embeddings: None };

        let tr = model.predict_traced(&input).unwrap();
        norm = norm.max(tr.max_normalization_error());

        let sh = shuffled(&ev, &mut rng);
        let p = model.predict(&ModelInput { evidence: &sh, ..input }).unwrap();
        perm = perm.max(max_diff(&p, &tr.probs));

        // padding: dropped mentions added to every cluster, and a batch neighbour
        let mut padded = ev.clone();
        for c in &mut padded.clusters {
            c.ranges.push(None);
            c.spans.push(Span::new(999, 1));
        }
        let j = rng.random_range(0..fx.toks.len());
        let other = fx.input(j);
        let mut g = Graph::new(&model.store, Mode::Eval);
        let (probs, _) = model.forward_batch(&mut g, &[ModelInput { evidence: &padded, ..input }, other]).unwrap();
        pad = pad.max(max_diff(&g.value(probs).data()[..3], &tr.probs));

        if t % 4 == 0 {
            let zero = ModelInput { evidence: &empty, ..input };
            block = block.max(max_diff(&model.predict(&zero).unwrap(), &pronoun_block(model, &zero)));
        }
    }
    let ok = norm <= 1e-9 && perm <= 1e-10 && pad <= 1e-10 && block <= 1e-10;
    outcome(
        ok,
        format!(
            "{TRIALS} trials\nnormalization {norm:.1e} (<= 1e-9)\npermutation {perm:.1e} (<= 1e-10)\npadding {pad:.1e} (<= 1e-10)\nN=0 pronoun block {block:.1e} (<= 1e-10)"
        ),
    )
}

// ---------------------------------------------------------------------------

/// Independent GAP scorer: two binary decisions per sample, micro F1 from
/// raw counts.
fn reference_f1(pred: &[Label], gold: &[Gold], gender: Option<Gender>) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
    for (p, g) in pred.iter().zip(gold) {
        if gender.is_some_and(|x| x != g.gender) {
            continue;
        }
        for (pp, gg) in [(*p == Label::A, g.label == Label::A), (*p == Label::B, g.label == Label::B)] {
            tp += (pp && gg) as u32;
            fp += (pp && !gg) as u32;
            fn_ += (!pp && gg) as u32;
        }
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

fn one_hot(id: &str, l: Label) -> PredictionRecord {
    let mut p = [0.0; 3];
    p[l.index()] = 1.0;
    PredictionRecord::new(id, p)
}

fn scorer_oracle() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |cond: bool, what: String| {
        ok &= cond;
        notes.push(format!("{} {what}", if cond { "ok" } else { "MISMATCH" }));
    };

    let corpus = generate_synthetic(&SynthConfig { size: 300, seed: 8, ..SynthConfig::default() }).unwrap();
    let gold: Vec<Gold> = corpus.samples.iter().map(|s| Gold::from(&s.sample)).collect();
    let preds: Vec<_> = gold.iter().map(|g| one_hot(&g.id, g.label)).collect();
    let r = gap_f1(&preds, &gold);
    check(
        r.f1_m == 1.0 && r.f1_f == 1.0 && r.f1_overall == 1.0 && r.bias == 1.0,
        format!("gold as predictions: M {} F {} O {} bias {}", r.f1_m, r.f1_f, r.f1_overall, r.bias),
    );

    // hand-built: M has tp 1 fp 2 fn 1 (F1 0.4), F has tp 2 fp 1 (F1 0.8)
    let rows = [
        (Gender::M, Label::A, Label::A),
        (Gender::M, Label::B, Label::A),
        (Gender::M, Label::Neither, Label::B),
        (Gender::F, Label::A, Label::A),
        (Gender::F, Label::B, Label::B),
        (Gender::F, Label::Neither, Label::A),
    ];
    let gold: Vec<Gold> = rows.iter().enumerate().map(|(i, &(gender, label, _))| Gold { id: format!("h{i}"), label, gender }).collect();
    let pred: Vec<Label> = rows.iter().map(|r| r.2).collect();
    let preds: Vec<_> = gold.iter().zip(&pred).map(|(g, &p)| one_hot(&g.id, p)).collect();
    let r = gap_f1(&preds, &gold);
    let want = [
        (r.f1_m, 0.4, reference_f1(&pred, &gold, Some(Gender::M))),
        (r.f1_f, 0.8, reference_f1(&pred, &gold, Some(Gender::F))),
        (r.f1_overall, 0.6, reference_f1(&pred, &gold, None)),
    ];
    let exact = want.iter().all(|(got, hand, reference)| got == reference && (got - hand).abs() < 1e-15);
    check(exact && (r.bias - 2.0).abs() < 1e-15, format!("6-sample fixture: M {} F {} O {} bias {}", r.f1_m, r.f1_f, r.f1_overall, r.bias));

    let gold: Vec<Gold> = corpus.samples.iter().map(|s| Gold::from(&s.sample)).collect();
    let uniform: Vec<_> = gold.iter().map(|g| PredictionRecord::new(g.id.clone(), [1.0 / 3.0; 3])).collect();
    let ll = logloss(&uniform, &gold).unwrap();
    check((ll - 3f64.ln()).abs() <= 1e-9, format!("uniform log loss {ll:.12} vs ln 3 {:.12}", 3f64.ln()));

    let table = ScoreReport {
        f1_m: 0.940,
        f1_f: 0.911,
        bias: 0.911 / 0.940,
        f1_overall: 0.925,
        logloss: 0.317,
        counts_m: Default::default(),
        counts_f: Default::default(),
        class_counts: [0; 3],
        missing: 0,
        accuracy: 0.0,
    };
    check(table.row() == "94.0\t91.1\t0.97\t92.5\t.317", format!("bias 0.911/0.940 row: {}", table.row().replace('\t', " ")));

    outcome(ok, notes.join("\n"))
}

// ---------------------------------------------------------------------------

const SUTER: &str = "... NHLer Gary Suter and Olympic-medalist Bob Suter are Dehner's uncles. His cousin is Minnesota Wild's alternate captain Ryan ...";
const SUTER_TAGGED: &str = "... NHLer Gary Suter and Olympic-medalist <A> Bob Suter <A> are <B> Dehner <B>'s uncles. <P> His <P> cousin is Minnesota Wild's alternate captain Ryan ...";
const DEV_ROW: &str = "gap-development\t874\t925\t201\t857(-37)(+20)\t919(-32)(+26)\t224(-4)(+27)\t2000";

fn pipeline_fidelity() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let at = |s: &str| SUTER[..SUTER.find(s).unwrap()].chars().count();
    let sample = GapSample::new("suter", SUTER, ("His", at("His")), ("Bob Suter", at("Bob Suter")), ("Dehner", at("Dehner")), false, false, "")
        .unwrap();
    let tagged = insert_mention_tags(&sample).unwrap();
    let tag_ok = tagged.text == SUTER_TAGGED;
    ok &= tag_ok;
    notes.push(format!("{} tagged snippet byte-exact", if tag_ok { "ok" } else { "MISMATCH" }));

    // 2000 samples with 874/925/201 labels; the ledger moves
    // A->B 24, A->N 13, B->A 18, B->N 14, N->A 2, N->B 2.
    let corpus = generate_synthetic(&SynthConfig { size: 2000, seed: 21, ..SynthConfig::default() }).unwrap();
    let mut samples = corpus.gap_samples();
    let labels: Vec<Label> = [(Label::A, 874), (Label::B, 925), (Label::Neither, 201)]
        .iter()
        .flat_map(|&(l, n)| std::iter::repeat_n(l, n))
        .collect();
    for (s, &l) in samples.iter_mut().zip(&labels) {
        s.set_label(l);
    }
    let moves = [
        (Label::A, Label::B, 24),
        (Label::A, Label::Neither, 13),
        (Label::B, Label::A, 18),
        (Label::B, Label::Neither, 14),
        (Label::Neither, Label::A, 2),
        (Label::Neither, Label::B, 2),
    ];
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("corrections.jsonl");
    let mut next: HashMap<Label, usize> = HashMap::new();
    for (from, to, n) in moves {
        for _ in 0..n {
            let cursor = next.entry(from).or_insert(0);
            let i = samples.iter().enumerate().filter(|(_, s)| s.label() == from).nth(*cursor).unwrap().0;
            *cursor += 1;
            let rec = CorrectionRecord {
                sample_id: samples[i].id.clone(),
                old_label: from,
                new_label: to,
                note: "fixture".into(),
                timestamp: String::new(),
            };
            append_correction(&ledger, &rec).unwrap();
        }
    }
    let records = load_corrections(&ledger).unwrap();
    let (_, report) = apply_corrections(&samples, &records).unwrap();
    let row = report.row("gap-development");
    let row_ok = row == DEV_ROW;
    ok &= row_ok;
    notes.push(format!("{} delta report: {}", if row_ok { "ok" } else { "MISMATCH" }, row.replace('\t', " ")));

    match std::env::var_os("GREP_DATA_DIR").map(|d| PathBuf::from(d).join("gap-development.tsv")).filter(|p| p.exists()) {
        Some(path) => {
            let dev = parse_tsv(&path).unwrap();
            let m = dev.iter().filter(|s| s.gender == Gender::M).count();
            let counts = (m, dev.len() - m, dev.len());
            let c_ok = counts == (1000, 1000, 2000);
            ok &= c_ok;
            notes.push(format!("{} gap-development M/F/total {:?}", if c_ok { "ok" } else { "MISMATCH" }, counts));
        }
        None => notes.push("skipped gap-development parse (GREP_DATA_DIR/gap-development.tsv not present)".into()),
    }
    outcome(ok, notes.join("\n"))
}

// ---------------------------------------------------------------------------

struct Split {
    corpus: SyntheticCorpus,
    train: Vec<Example>,
    val: Vec<Example>,
    test: Vec<Example>,
    vocab_size: usize,
}

fn split(size: usize, n_train: usize, n_val: usize, seed: u64, providers: &[Box<dyn Provider>]) -> Split {
    let corpus = generate_synthetic(&SynthConfig { size, seed, insufficient_fraction: 0.5, ..SynthConfig::default() }).unwrap();
    let samples = corpus.gap_samples();
    let vocab = Vocab::build(samples[..n_train].iter().map(|s| s.text.as_str()), 1000).unwrap();
    let evidence = oracle_evidence(&corpus, providers, size);
    let (mut ex, _) = prepare_examples(&samples, &vocab, 128, Some(&evidence), true, None).unwrap();
    let test = ex.split_off(n_train + n_val);
    let val = ex.split_off(n_train);
    Split { corpus, train: ex, val, test, vocab_size: vocab.len() }
}

fn train_cfg(kind: ModelKind, vocab_size: usize, hidden: usize, max_steps: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::for_kind(kind);
    cfg.model.encoder = EncoderConfig { vocab_size, hidden, max_len: 128, ..cfg.model.encoder };
    cfg.adam.lr = 1e-3;
    cfg.eval_every = 100;
    cfg.max_steps = max_steps;
    cfg.seed = seed;
    cfg
}

fn ensembling() -> Outcome {
    let s = split(1000, 600, 100, 31, &[Box::new(Oracle::new("oracle")) as Box<dyn Provider>]);
    let gold = golds(&s.test);
    let seeds = [42, 59, 75, 46, 91];
    let mut sets = Vec::new();
    let mut losses = Vec::new();
    for seed in seeds {
        let cfg = train_cfg(ModelKind::Probert, s.vocab_size, 16, 400, seed);
        let out = train(&cfg, &s.train, &s.val).unwrap();
        let p = predict(&out.model, &s.test).unwrap();
        losses.push(logloss(&p, &gold).unwrap());
        sets.push(p);
    }
    let ens = logloss(&ensemble_mean(&sets).unwrap(), &gold).unwrap();
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let ok = ens < mean && ens <= min;
    let members: Vec<String> = losses.iter().map(|l| format!("{l:.4}")).collect();
    outcome(
        ok,
        format!(
            "ensemble {ens:.4} < member mean {mean:.4}: {}; <= best member {min:.4}: {}\nmembers {}",
            ens < mean,
            ens <= min,
            members.join(" ")
        ),
    )
}

// ---------------------------------------------------------------------------

struct Eval {
    acc: f64,
    acc_insufficient: f64,
    neither_recall: f64,
}

fn evaluate(out: &TrainOutcome, s: &Split) -> Eval {
    let preds = predict(&out.model, &s.test).unwrap();
    let gold = golds(&s.test);
    let offset = s.train.len() + s.val.len();
    let hit = |i: usize| preds[i].predicted() == gold[i].label;
    let frac = |idx: Vec<usize>| idx.iter().filter(|&&i| hit(i)).count() as f64 / idx.len().max(1) as f64;
    Eval {
        acc: frac((0..gold.len()).collect()),
        acc_insufficient: frac((0..gold.len()).filter(|&i| s.corpus.samples[offset + i].insufficient).collect()),
        neither_recall: frac((0..gold.len()).filter(|&i| gold[i].label == Label::Neither).collect()),
    }
}

fn mean_provider_weights(model: &Model, examples: &[Example]) -> HashMap<String, f64> {
    let mut acc: HashMap<String, (f64, usize)> = HashMap::new();
    for e in examples {
        for p in model.predict_traced(&e.input()).unwrap().providers {
            let x = acc.entry(p.provider).or_default();
            x.0 += p.provider_weight;
            x.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn evidence_and_signals() -> Vec<(&'static str, Outcome)> {
    const STEPS: usize = 2000;
    let start = Instant::now();
    let oracle_only: Vec<Box<dyn Provider>> = vec![Box::new(Oracle::new("oracle"))];
    let s = split(2800, 2000, 300, 1, &oracle_only);

    let grep = train(&train_cfg(ModelKind::Grep, s.vocab_size, 32, STEPS, 42), &s.train, &s.val).unwrap();
    let probert = train(&train_cfg(ModelKind::Probert, s.vocab_size, 32, STEPS, 42), &s.train, &s.val).unwrap();
    let (g, p) = (evaluate(&grep, &s), evaluate(&probert, &s));
    let utility_time = start.elapsed();
    let gap = g.neither_recall - p.neither_recall;
    let utility = g.acc_insufficient >= 0.90 && p.acc_insufficient <= 0.70 && gap >= 0.15 && utility_time <= Duration::from_secs(900);

    let mixed: Vec<Box<dyn Provider>> = vec![
        Box::new(Oracle::new("oracle")),
        Box::new(Corrupt::new("adversarial", Box::new(Oracle::new("o")), 1.0, 3).unwrap()),
    ];
    let sm = split(2800, 2000, 300, 1, &mixed);
    let both = train(&train_cfg(ModelKind::Grep, sm.vocab_size, 32, STEPS, 42), &sm.train, &sm.val).unwrap();
    let b = evaluate(&both, &sm);
    let w = mean_provider_weights(&both.model, &sm.test);
    let (wo, wa) = (w["oracle"], w["adversarial"]);
    let signals = (g.acc - b.acc).abs() <= 0.03 && wa < wo;

    let utility_detail = format!(
        "insufficient-context accuracy GREP {:.3} (>= 0.90), ProBERT {:.3} (<= 0.70)\n\
         NEITHER recall GREP {:.3}, ProBERT {:.3}, gap {:.3} (>= 0.15)\n\
         training + evaluation {:.0}s (<= 900s)",
        g.acc_insufficient,
        p.acc_insufficient,
        g.neither_recall,
        p.neither_recall,
        gap,
        utility_time.as_secs_f64(),
    );
    let signal_detail = format!(
        "test accuracy oracle-only {:.3}, oracle+adversarial {:.3} (within 0.03)\n\
         mean provider weight oracle {wo:.3}, adversarial {wa:.3}",
        g.acc, b.acc,
    );
    vec![
        ("evidence utility", outcome(utility, utility_detail)),
        ("signal discrimination", outcome(signals, signal_detail)),
    ]
}
