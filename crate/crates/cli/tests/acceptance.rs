//! Acceptance gate: nine end-to-end checks, one test per criterion, each
//! printing a single pass/fail line (visible with `--nocapture`; the test
//! harness line itself carries the verdict either way).

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use metadialog_core::assemble::{self, MetaContext, TrainingInstance};
use metadialog_core::bpe::{train_bpe, EOS_ID, SEP_ID};
use metadialog_core::eval::{self, eval_tokenize};
use metadialog_core::lm::{
    prepare_dataset, Decoding, MaskMode, ModelConfig, TrainConfig, Trainer, TransformerLM,
};
use metadialog_core::query::{self, LexicalRuleSet, QueryFlags};
use metadialog_core::topic::{self, Documents};

fn verdict(n: usize, name: &str, ok: bool, detail: &str) {
    let status = if ok { "pass" } else { "FAIL" };
    println!("criterion {n} ({name}): {status} — {detail}");
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn tiny_model(vocab_size: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        d_ff: 64,
        max_seq_len: 96,
        dropout_rate: 0.0,
        vocab_size,
        seed,
    }
}

// ---------------------------------------------------------------------------
// 1. Gradient check

#[test]
fn criterion_1_gradient_check() {
    let started = Instant::now();
    let config = ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        d_ff: 64,
        max_seq_len: 32,
        dropout_rate: 0.0,
        vocab_size: 80,
        seed: 7,
    };
    let model = TransformerLM::new(config).unwrap();
    let mut ids: Vec<u32> = (0..14).map(|i| 7 + (i * 5 + 3) % 70).collect();
    ids.push(SEP_ID);
    let sep_pos = ids.len() - 1;
    ids.extend([21, 34, 55, EOS_ID]);

    let (_, grads) = model.loss_and_grad(&ids, sep_pos, MaskMode::ResponseOnly, None).unwrap();
    let total = model.params().param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let step = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let idx = rng.gen_range(0..total);
        let analytic = grads.get_flat(idx);
        let mut plus = model.clone();
        plus.params_mut().add_flat(idx, step);
        let up = plus.nll_loss(&ids, sep_pos, MaskMode::ResponseOnly).unwrap();
        let mut minus = model.clone();
        minus.params_mut().add_flat(idx, -step);
        let down = minus.nll_loss(&ids, sep_pos, MaskMode::ResponseOnly).unwrap();
        let numeric = (up - down) / (2.0 * step);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    let elapsed = started.elapsed();
    verdict(
        1,
        "gradient check",
        worst <= 1e-3 && elapsed.as_secs() < 60,
        &format!("50 sampled params, worst relative error {worst:.2e}, {elapsed:.1?}"),
    );
}

// ---------------------------------------------------------------------------
// 2. Causality

#[test]
fn criterion_2_causality() {
    let started = Instant::now();
    let model = TransformerLM::new(tiny_model(64, 3)).unwrap();
    let base_ids: Vec<u32> = (0..20).map(|i| 7 + (i * 11 + 2) % 50).collect();
    let base = model.forward(&base_ids).unwrap();
    let mut ok = true;
    for &w in &[3usize, 10, 19] {
        let mut perturbed = base_ids.clone();
        perturbed[w] = 7 + (perturbed[w] - 7 + 13) % 50;
        let out = model.forward(&perturbed).unwrap();
        for t in 0..w {
            for v in 0..base.cols {
                if base.get(t, v).to_bits() != out.get(t, v).to_bits() {
                    ok = false;
                }
            }
        }
    }
    let elapsed = started.elapsed();
    verdict(
        2,
        "causality",
        ok && elapsed.as_secs() < 10,
        &format!("rows before each perturbed position bitwise equal, {elapsed:.1?}"),
    );
}

// ---------------------------------------------------------------------------
// 3. Overfit memorization

#[test]
fn criterion_3_overfit_memorization() {
    let started = Instant::now();
    let mut data = Vec::new();
    for i in 0..50u32 {
        // First token encodes the instance index, so every context is unique.
        let mut ids: Vec<u32> = vec![7 + i];
        ids.extend((0..5).map(|j| 7 + (i * 3 + j * 7) % 60));
        ids.push(SEP_ID);
        let sep_pos = ids.len() - 1;
        ids.extend([
            7 + (i * 5 + 1) % 60,
            7 + (i * 11 + 29) % 60,
            7 + (i * 17 + 13) % 60,
            EOS_ID,
        ]);
        data.push(metadialog_core::lm::EncodedInstance { ids, sep_pos });
    }

    let config = ModelConfig {
        n_layers: 2,
        n_heads: 4,
        d_model: 64,
        d_ff: 128,
        max_seq_len: 32,
        dropout_rate: 0.0,
        vocab_size: 70,
        seed: 17,
    };
    let train_cfg = TrainConfig {
        lr: 3e-3,
        batch_size: 4,
        epochs: 200,
        seed: 17,
        grad_clip: 1.0,
        mask_mode: MaskMode::ResponseOnly,
    };
    let model = TransformerLM::new(config).unwrap();
    let mut trainer = Trainer::new(model, train_cfg, data.len()).unwrap();
    trainer.run_to_completion(&data).unwrap();
    let model = trainer.model;

    let mut nll = 0.0;
    let mut exact = 0usize;
    for inst in &data {
        nll += model.nll_loss(&inst.ids, inst.sep_pos, MaskMode::ResponseOnly).unwrap();
        let prefix = &inst.ids[..=inst.sep_pos];
        let gold = &inst.ids[inst.sep_pos + 1..];
        let out = model.generate(prefix, &Decoding::Greedy, gold.len() + 2).unwrap();
        if out == gold {
            exact += 1;
        }
    }
    nll /= data.len() as f64;
    let elapsed = started.elapsed();
    verdict(
        3,
        "overfit memorization",
        nll <= 0.1 && exact >= 45 && elapsed.as_secs() < 900,
        &format!("200 epochs: response NLL {nll:.4}, {exact}/50 exact greedy matches, {elapsed:.1?}"),
    );
}

// ---------------------------------------------------------------------------
// 4. Meta-context ablation trend

const ABLATION_ENTITIES: usize = 40;

fn ablation_instances(with_terms: bool) -> Vec<String> {
    let entity = |e: usize| format!("pkg{e:02}");
    let mut lines = Vec::with_capacity(2000);
    for i in 0..2000usize {
        let a = i % ABLATION_ENTITIES;
        let mut b = (i * 17 + 3) % ABLATION_ENTITIES;
        if b == a {
            b = (b + 1) % ABLATION_ENTITIES;
        }
        // The gold entity depends on the instance index, which never
        // appears in the serialized text: without the attribute terms the
        // prompt is genuinely ambiguous between the two mentions.
        let gold = if i % 2 == 0 { a } else { b };
        let inst = TrainingInstance {
            context: vec![
                format!("the {} service fails on start", entity(a)),
                "nothing changed since the last update".to_string(),
                format!("the {} module loaded fine", entity(b)),
            ],
            meta: MetaContext {
                query_flags: QueryFlags(vec![false, false, false]),
                attribute_terms: if with_terms { vec![entity(gold)] } else { Vec::new() },
            },
            response: format!("please reinstall the {} package now", entity(gold)),
            conversation_id: format!("abl-{i}"),
            window_start: 0,
        };
        lines.push(assemble::serialize(&inst));
    }
    lines
}

fn ablation_run(lines: &[String], seed: u64) -> (f64, f64) {
    let vocab = train_bpe(lines, 600).unwrap();
    let prepared = prepare_dataset(lines, &vocab, 96).unwrap();
    assert_eq!(prepared.dropped, 0, "ablation instances must all fit");
    let mut config = tiny_model(vocab.len(), seed);
    config.max_seq_len = 96;
    let train_cfg = TrainConfig {
        lr: 2e-3,
        batch_size: 8,
        epochs: 4,
        seed,
        grad_clip: 1.0,
        mask_mode: MaskMode::ResponseOnly,
    };
    let model = TransformerLM::new(config).unwrap();
    let mut trainer = Trainer::new(model, train_cfg, prepared.instances.len()).unwrap();
    trainer.run_to_completion(&prepared.instances).unwrap();
    let model = trainer.model;

    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    let mut hits = 0usize;
    let mut scored = 0usize;
    for (i, inst) in prepared.instances.iter().enumerate().step_by(5) {
        let prefix = &inst.ids[..=inst.sep_pos];
        let out = model.generate(prefix, &Decoding::Greedy, 24).unwrap();
        let text = vocab.decode_lossy(&out).unwrap();
        let gold_ids = &inst.ids[inst.sep_pos + 1..];
        let gold_text = vocab.decode(gold_ids).unwrap();
        let gold_entity = format!("pkg{:02}", {
            let line_no = i; // instances are in corpus order, nothing dropped
            let a = line_no % ABLATION_ENTITIES;
            let mut b = (line_no * 17 + 3) % ABLATION_ENTITIES;
            if b == a {
                b = (b + 1) % ABLATION_ENTITIES;
            }
            if line_no % 2 == 0 {
                a
            } else {
                b
            }
        });
        if text.split_whitespace().any(|t| t == gold_entity) {
            hits += 1;
        }
        scored += 1;
        hyps.push(eval_tokenize(&text));
        refs.push(eval_tokenize(&gold_text));
    }
    let bleu = eval::bleu(&hyps, &refs, 4).unwrap();
    (bleu, hits as f64 / scored as f64)
}

#[test]
fn criterion_4_meta_context_ablation() {
    let started = Instant::now();
    let qstn_lines = ablation_instances(false);
    let ent_lines = ablation_instances(true);
    let seeds = [5u64, 6, 7];
    let (mut bleu_q, mut bleu_e, mut hit_q, mut hit_e) = (0.0, 0.0, 0.0, 0.0);
    for &seed in &seeds {
        let (b, h) = ablation_run(&qstn_lines, seed);
        bleu_q += b;
        hit_q += h;
        let (b, h) = ablation_run(&ent_lines, seed);
        bleu_e += b;
        hit_e += h;
    }
    let n = seeds.len() as f64;
    let (bleu_q, bleu_e, hit_q, hit_e) = (bleu_q / n, bleu_e / n, hit_q / n, hit_e / n);
    let elapsed = started.elapsed();
    verdict(
        4,
        "meta-context ablation",
        bleu_e > bleu_q && hit_e > hit_q && elapsed.as_secs() < 3600,
        &format!(
            "3-seed means — BLEU with terms {bleu_e:.4} vs without {bleu_q:.4}, \
             entity hit-rate {hit_e:.3} vs {hit_q:.3}, {elapsed:.1?}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. Metric oracles

fn toks(lines: &[&str]) -> Vec<Vec<String>> {
    lines.iter().map(|l| l.split_whitespace().map(String::from).collect()).collect()
}

/// Clipped pooled n-gram counts by explicit enumeration, no shared code
/// with the library implementation.
fn brute_counts(hyps: &[Vec<String>], refs: &[Vec<String>], n: usize) -> (u64, u64) {
    let mut matched = 0u64;
    let mut total = 0u64;
    for (h, r) in hyps.iter().zip(refs) {
        let hgrams: Vec<&[String]> = if h.len() >= n { h.windows(n).collect() } else { vec![] };
        let rgrams: Vec<&[String]> = if r.len() >= n { r.windows(n).collect() } else { vec![] };
        let mut seen: Vec<&[String]> = Vec::new();
        for g in &hgrams {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            let in_h = hgrams.iter().filter(|x| x == &g).count() as u64;
            let in_r = rgrams.iter().filter(|x| x == &g).count() as u64;
            matched += in_h.min(in_r);
        }
        total += hgrams.len() as u64;
    }
    (matched, total)
}

fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            table[i][j] = if a[i - 1] == b[j - 1] {
                table[i - 1][j - 1] + 1
            } else {
                table[i - 1][j].max(table[i][j - 1])
            };
        }
    }
    table[a.len()][b.len()]
}

#[test]
fn criterion_5_metric_oracles() {
    // Hand-computed fixtures, to 1e-9.
    let identical = toks(&["the driver loads fine", "try the other cable"]);
    assert!((eval::bleu(&identical, &identical, 4).unwrap() - 1.0).abs() < 1e-9);
    assert!((eval::rouge_l(&identical, &identical).unwrap() - 1.0).abs() < 1e-9);

    let h = toks(&["a b c d"]);
    let r = toks(&["a c d"]);
    assert!((eval::rouge_l(&h, &r).unwrap() - 6.0 / 7.0).abs() < 1e-9);

    // p1 = 1/4 clipped, p2 = 1/3 and p3 = 1/2 smoothed, p4 neutral; bp = 1.
    let h = toks(&["a a b", "c"]);
    let r = toks(&["a x", "y z"]);
    let expected = (1.0f64 / 24.0).powf(0.25);
    assert!((eval::bleu(&h, &r, 4).unwrap() - expected).abs() < 1e-9);

    assert!((eval::distinct(&toks(&["a b c"])).unwrap() - 1.0).abs() < 1e-9);
    assert!((eval::distinct(&toks(&["a a a"])).unwrap() - 5.0 / 12.0).abs() < 1e-9);
    assert!((eval::distinct(&toks(&["a b", "a b"])).unwrap() - 0.5).abs() < 1e-9);

    // Brute-force equivalence on fuzzed mini-corpora.
    let alphabet = ["a", "b", "c", "d", "e"];
    let mut rng = ChaCha8Rng::seed_from_u64(98);
    for case in 0..100 {
        let n_pairs = rng.gen_range(1..=10);
        let mut hyps = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..n_pairs {
            let hl = rng.gen_range(0..=8);
            let rl = rng.gen_range(0..=8);
            hyps.push((0..hl).map(|_| alphabet[rng.gen_range(0..5)].to_string()).collect());
            refs.push((0..rl).map(|_| alphabet[rng.gen_range(0..5)].to_string()).collect());
        }
        for n in 1..=4usize {
            let brute: Vec<(u64, u64)> = (1..=n).map(|k| brute_counts(&hyps, &refs, k)).collect();
            let lib = eval::modified_precisions(&hyps, &refs, n);
            assert_eq!(lib, brute, "case {case}: pooled counts diverge at max_n={n}");
        }
        let lib_rouge = eval::rouge_l(&hyps, &refs).unwrap();
        let mut mean = 0.0;
        for (h, r) in hyps.iter().zip(&refs) {
            let l = brute_lcs(h, r) as f64;
            if l > 0.0 {
                let p = l / h.len() as f64;
                let rec = l / r.len() as f64;
                mean += 2.0 * p * rec / (p + rec);
            }
        }
        mean /= hyps.len() as f64;
        assert!((lib_rouge - mean).abs() < 1e-12, "case {case}: rouge");

        if hyps.iter().any(|h| !h.is_empty()) {
            let lib_distinct = eval::distinct(&hyps).unwrap();
            let mut parts = [0.0f64; 2];
            for (slot, n) in [(0usize, 1usize), (1, 2)] {
                let mut uniq: BTreeSet<Vec<String>> = BTreeSet::new();
                let mut total = 0usize;
                for h in &hyps {
                    if h.len() >= n {
                        for g in h.windows(n) {
                            uniq.insert(g.to_vec());
                            total += 1;
                        }
                    }
                }
                parts[slot] = if total == 0 { 0.0 } else { uniq.len() as f64 / total as f64 };
            }
            let brute_distinct = (parts[0] + parts[1]) / 2.0;
            assert!((lib_distinct - brute_distinct).abs() < 1e-12, "case {case}: distinct");
        }
    }
    verdict(5, "metric oracles", true, "hand fixtures at 1e-9; 100 fuzzed corpora match brute force");
}

// ---------------------------------------------------------------------------
// 6. LDA planted-topic recovery

#[test]
fn criterion_6_lda_planted_topics() {
    let started = Instant::now();
    let n_topics = 3usize;
    let words_per = 10usize;
    let vocab: Vec<String> = (0..n_topics)
        .flat_map(|t| (0..words_per).map(move |w| format!("t{t}w{w}")))
        .collect();
    // Within a topic, word w gets weight 10-w, so the planted top-5 set is
    // its first five words.
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut docs = Vec::new();
    for d in 0..200usize {
        let t = d % n_topics;
        let mut doc = Vec::with_capacity(50);
        for _ in 0..50 {
            let mut draw = rng.gen_range(0..55u32) as i64;
            let mut w = 0usize;
            while w < words_per {
                draw -= (10 - w) as i64;
                if draw < 0 {
                    break;
                }
                w += 1;
            }
            doc.push(t * words_per + w.min(words_per - 1));
        }
        docs.push(doc);
    }
    let documents = Documents { docs, vocab };

    let model = topic::fit(&documents, 3, topic::default_alpha(3), 0.01, 300, 29).unwrap();
    let mut matched = [false; 3];
    let mut ok = true;
    for learned in 0..3 {
        let top: BTreeSet<usize> = topic::top_word_ids(&model, learned, 5).into_iter().collect();
        let planted: Vec<BTreeSet<usize>> = (0..n_topics)
            .map(|t| (0..5).map(|w| t * words_per + w).collect())
            .collect();
        match planted.iter().position(|p| *p == top) {
            Some(t) if !matched[t] => matched[t] = true,
            _ => ok = false,
        }
    }
    ok &= matched.iter().all(|&m| m);

    let c3 = topic::coherence(&model, &documents, 5).unwrap();
    let model40 = topic::fit(&documents, 40, topic::default_alpha(40), 0.01, 300, 29).unwrap();
    let c40 = topic::coherence(&model40, &documents, 5).unwrap();
    let elapsed = started.elapsed();
    verdict(
        6,
        "LDA planted topics",
        ok && c3 > c40 && elapsed.as_secs() < 300,
        &format!("3 planted top-5 sets recovered; coherence K=3 {c3:.3} > K=40 {c40:.3}, {elapsed:.1?}"),
    );
}

// ---------------------------------------------------------------------------
// 7. Query miner

#[test]
fn criterion_7_query_miner() {
    let data = query::bundled_labeled_set().unwrap();
    let split = query::BUNDLED_TRAIN_ROWS;
    let (clf, _) = query::train_classifier(
        &data[..split],
        query::DEFAULT_EPOCHS,
        query::DEFAULT_LR,
        query::DEFAULT_REG,
        query::DEFAULT_SEED,
    )
    .unwrap();
    let rules = LexicalRuleSet::default();

    // The combination rule, exhaustively over the (lexical, classifier)
    // outcome table: every combination must occur in the probe pool, and
    // the miner's decision must equal lexical OR classifier on every probe.
    let probes = [
        "what is the latest ubuntu version?",
        "how do i configure the sound card",
        "can of worms opened after the update yesterday",
        "did gold prices rise again yesterday",
        "anyone know a mirror that still carries warty",
        "i was wondering if the new kernel fixes that",
        "the install worked fine yesterday",
        "leave the settings alone for now",
        "that driver crashed again this morning",
        "please check the cable first",
    ];
    let mut combos = BTreeSet::new();
    let mut rule_ok = true;
    for probe in probes {
        let lex = query::lexical_decide(probe, &rules);
        let svm = clf.decide(probe);
        combos.insert((lex, svm));
        if query::decide(probe, &rules, &clf) != (lex || svm) {
            rule_ok = false;
        }
    }
    let table_ok = combos.len() == 4;

    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (text, label) in &data[split..] {
        match (query::decide(text, &rules, &clf), *label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let (_, _, f1) = query::prf(tp, fp, fn_);

    let explicit = "What is the latest Ubuntu version?";
    let implicit = "I was wondering what is the latest Ubuntu version released.";
    let examples_ok =
        query::decide(explicit, &rules, &clf) && query::decide(implicit, &rules, &clf);

    verdict(
        7,
        "query miner",
        rule_ok && table_ok && f1 >= 0.80 && examples_ok,
        &format!(
            "combination table covered ({} combos), held-out F1 {f1:.3}, both worked examples Y",
            combos.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Assembler round-trip

#[test]
fn criterion_8_assembler_round_trip() {
    let words = ["update", "driver", "fails", "apt-get", "13.04", "ok?", "the", "sound"];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let word = |rng: &mut ChaCha8Rng| words[rng.gen_range(0..words.len())].to_string();
    let phrase = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| {
        let n = rng.gen_range(lo..=hi);
        (0..n).map(|_| word(rng)).collect::<Vec<_>>().join(" ")
    };
    for case in 0..1000 {
        let n_ctx = rng.gen_range(1..=4);
        let context: Vec<String> = (0..n_ctx).map(|_| phrase(&mut rng, 1, 6)).collect();
        let flags = QueryFlags((0..n_ctx).map(|_| rng.gen_bool(0.5)).collect());
        let n_terms = rng.gen_range(0..=5);
        let terms: Vec<String> = (0..n_terms).map(|_| phrase(&mut rng, 1, 3)).collect();
        let inst = TrainingInstance {
            context,
            meta: MetaContext { query_flags: flags, attribute_terms: terms },
            response: phrase(&mut rng, 1, 8),
            conversation_id: format!("fuzz-{case}"),
            window_start: case,
        };
        let line = assemble::serialize(&inst);
        let back = assemble::parse(&line).unwrap_or_else(|e| panic!("case {case}: {e}\n{line}"));
        assert_eq!(back.payload(), inst.payload(), "case {case}: {line}");
    }

    // Published-style fixture lines parse into the documented fields.
    let ubuntu = "how do i upgrade from 13.04 to 13.10? [eos] sudo update-manager -d [eos] \
                  that wants to reinstall everything [eos] [eoc] Y-N-N [eoq] ubuntu 13.04, \
                  upgrade, update-manager [eot] [sep] use apt-get dist-upgrade instead [eos]";
    let inst = assemble::parse(ubuntu).unwrap();
    assert_eq!(inst.context.len(), 3);
    assert_eq!(inst.meta.query_flags, QueryFlags(vec![true, false, false]));
    assert_eq!(inst.meta.attribute_terms[0], "ubuntu 13.04");
    assert_eq!(inst.response, "use apt-get dist-upgrade instead");

    let no_terms = "it boots fine now [eos] great, what changed? [eos][eoc] N-Y [eoq] [eot] \
                    [sep] nothing, i swear [eos]";
    let inst = assemble::parse(no_terms).unwrap();
    assert_eq!(inst.context.len(), 2);
    assert!(inst.meta.attribute_terms.is_empty());

    // Window-count formula over a fixture set of conversation lengths.
    let lengths = [1usize, 3, 4, 5, 10];
    let total: usize = lengths
        .iter()
        .map(|&l| {
            let conv = metadialog_core::corpus::Conversation {
                id: format!("len-{l}"),
                source: metadialog_core::corpus::Source::Ubuntu2,
                utterances: (0..l)
                    .map(|i| metadialog_core::corpus::Utterance {
                        text: format!("utterance number {i}"),
                        speaker: None,
                        turn_index: i,
                    })
                    .collect(),
            };
            assemble::window(&conv).len()
        })
        .sum();
    let expected: usize = lengths.iter().map(|&l| l.saturating_sub(3)).sum();
    assert_eq!(total, expected);

    verdict(
        8,
        "assembler round-trip",
        true,
        "1000 fuzzed instances round-trip; fixture lines parse; window formula holds",
    );
}

// ---------------------------------------------------------------------------
// 9. Pipeline determinism

#[test]
fn criterion_9_pipeline_determinism() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    let corpus =
        PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/corpus_small.jsonl"));
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "paths.corpus = {}\npaths.workdir = {}\nmode = qstn_ent\n\
             model.n_layers = 2\nmodel.n_heads = 2\nmodel.d_model = 32\nmodel.d_ff = 64\n\
             model.max_seq_len = 128\nmodel.dropout = 0.0\nmodel.vocab_size = 600\n\
             train.lr = 1e-3\ntrain.batch_size = 8\ntrain.epochs = 2\n\
             decode.max_new_tokens = 25\nseed = 11\n",
            corpus.display(),
            work.display(),
        ),
    )
    .unwrap();

    let run = |force: bool| {
        let mut args = vec!["pipeline", "--config", cfg.to_str().unwrap()];
        if force {
            args.push("--force");
        }
        let out = Command::new(env!("CARGO_BIN_EXE_metadialog")).args(&args).output().unwrap();
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    };

    let artifacts = [
        "corpus/clean.v1.jsonl",
        "models/query_clf.v1.json",
        "models/entities.v1.tsv",
        "models/bpe.v1.txt",
        "models/lm.v1.ckpt",
        "datasets/instances.v1.txt",
        "reports/train_lm.v1.json",
        "reports/generations.v1.txt",
        "reports/references.v1.txt",
        "reports/eval.v1.json",
    ];
    run(false);
    let first: Vec<Vec<u8>> = artifacts.iter().map(|a| fs::read(work.join(a)).unwrap()).collect();
    run(true);
    let mut identical = true;
    for (a, before) in artifacts.iter().zip(&first) {
        if &fs::read(work.join(a)).unwrap() != before {
            identical = false;
            println!("  differs: {a}");
        }
    }
    let elapsed = started.elapsed();
    verdict(
        9,
        "pipeline determinism",
        identical,
        &format!("{} artifacts byte-identical across a forced rerun, {elapsed:.1?}", artifacts.len()),
    );
}
