//! Query detection: lexical rules plus a hinge-loss linear classifier over
//! hashed n-gram features, combined under the both-negative rule — an
//! utterance is non-query only when both detectors say so.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::text::{fnv1a, words};
use crate::{Error, Result};

/// Feature space dimension: hashed unigrams and bigrams.
pub const FEATURE_DIM: usize = 1 << 18;

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_LR: f64 = 0.1;
pub const DEFAULT_REG: f64 = 1e-4;
pub const DEFAULT_SEED: u64 = 13;

#[derive(Debug, Clone)]
pub struct LexicalRuleSet {
    pub wh_words: Vec<&'static str>,
    pub aux_cues: Vec<&'static str>,
}

impl Default for LexicalRuleSet {
    fn default() -> Self {
        LexicalRuleSet {
            wh_words: vec!["what", "who", "when", "where", "why", "how"],
            aux_cues: vec![
                "could", "did", "kindly", "please", "can", "would", "should", "is", "are",
                "do", "does",
            ],
        }
    }
}

impl LexicalRuleSet {
    fn is_wh(&self, token: &str) -> bool {
        self.wh_words.contains(&token)
    }

    fn is_aux(&self, token: &str) -> bool {
        self.aux_cues.contains(&token)
    }
}

/// Lexical query decision: a question mark anywhere, a sentence-initial
/// cue word, or a wh-word immediately followed by an aux cue (embedded
/// questions like "tell me what is wrong").
pub fn lexical_decide(utterance: &str, rules: &LexicalRuleSet) -> bool {
    if utterance.contains('?') {
        return true;
    }
    let tokens = words(utterance);
    match tokens.first() {
        Some(first) if rules.is_wh(first) || rules.is_aux(first) => return true,
        _ => {}
    }
    tokens.windows(2).any(|w| rules.is_wh(&w[0]) && rules.is_aux(&w[1]))
}

/// Sparse hashed features: unigram and bigram counts over lowercased word
/// tokens, folded into `FEATURE_DIM` buckets with FNV-1a.
pub fn features(utterance: &str) -> Vec<(usize, f64)> {
    let tokens = words(utterance);
    let mut idx: Vec<usize> = Vec::with_capacity(tokens.len() * 2);
    for t in &tokens {
        idx.push(fnv1a(t.as_bytes()) as usize % FEATURE_DIM);
    }
    for pair in tokens.windows(2) {
        let joined = format!("{}\u{1f}{}", pair[0], pair[1]);
        idx.push(fnv1a(joined.as_bytes()) as usize % FEATURE_DIM);
    }
    idx.sort_unstable();
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(idx.len());
    for i in idx {
        match out.last_mut() {
            Some((j, c)) if *j == i => *c += 1.0,
            _ => out.push((i, 1.0)),
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearQueryClassifier {
    pub version: String,
    pub dim: usize,
    pub bias: f64,
    /// Non-zero weights only, sorted by index.
    pub weights: Vec<(usize, f64)>,
}

impl LinearQueryClassifier {
    pub fn score(&self, utterance: &str) -> f64 {
        let feats = features(utterance);
        let mut s = self.bias;
        let mut wi = 0;
        for &(i, x) in &feats {
            while wi < self.weights.len() && self.weights[wi].0 < i {
                wi += 1;
            }
            if wi < self.weights.len() && self.weights[wi].0 == i {
                s += self.weights[wi].1 * x;
            }
        }
        s
    }

    /// Positive decision on a strictly positive margin; sign(0) is negative.
    pub fn decide(&self, utterance: &str) -> bool {
        self.score(utterance) > 0.0
    }
}

/// Per-epoch averaged hinge objective, recorded during training.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
}

/// L2-regularized hinge loss by seeded stochastic subgradient descent with
/// a 1/t step-size decay. Deterministic for a given seed.
pub fn train_classifier(
    labeled: &[(String, bool)],
    epochs: usize,
    lr: f64,
    reg: f64,
    seed: u64,
) -> Result<(LinearQueryClassifier, TrainReport)> {
    let n_pos = labeled.iter().filter(|(_, y)| *y).count();
    if n_pos == 0 || n_pos == labeled.len() {
        return Err(Error::data(
            "classifier training needs both positive and negative examples",
        ));
    }
    let feats: Vec<Vec<(usize, f64)>> =
        labeled.iter().map(|(text, _)| features(text)).collect();
    let ys: Vec<f64> = labeled.iter().map(|(_, y)| if *y { 1.0 } else { -1.0 }).collect();
    let n = labeled.len() as f64;

    let mut w = vec![0.0; FEATURE_DIM];
    // Keep the L2 decay O(active features) with a global scale factor.
    let mut scale = 1.0f64;
    let mut bias = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut step = 0usize;
    let mut epoch_loss = Vec::with_capacity(epochs);

    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            step += 1;
            let eta = lr / (1.0 + step as f64 / n);
            let margin = ys[i]
                * (scale * feats[i].iter().map(|&(j, x)| w[j] * x).sum::<f64>() + bias);
            let decay = 1.0 - 2.0 * eta * reg;
            if decay > 1e-12 {
                scale *= decay;
            }
            if margin < 1.0 {
                for &(j, x) in &feats[i] {
                    w[j] += eta * ys[i] * x / scale;
                }
                bias += eta * ys[i];
            }
            if scale < 1e-9 {
                for v in w.iter_mut() {
                    *v *= scale;
                }
                scale = 1.0;
            }
        }
        let norm2: f64 = w.iter().map(|v| (v * scale) * (v * scale)).sum();
        let hinge: f64 = feats
            .iter()
            .zip(&ys)
            .map(|(f, &y)| {
                let s = scale * f.iter().map(|&(j, x)| w[j] * x).sum::<f64>() + bias;
                (1.0 - y * s).max(0.0)
            })
            .sum::<f64>()
            / n;
        epoch_loss.push(hinge + reg * norm2);
    }

    let mut weights: Vec<(usize, f64)> = w
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, &v)| (i, v * scale))
        .collect();
    weights.sort_unstable_by_key(|&(i, _)| i);
    Ok((
        LinearQueryClassifier { version: "1".into(), dim: FEATURE_DIM, bias, weights },
        TrainReport { epoch_loss },
    ))
}

/// The both-negative combination: non-query only when the lexical rules
/// and the classifier both say negative.
pub fn decide(utterance: &str, rules: &LexicalRuleSet, clf: &LinearQueryClassifier) -> bool {
    lexical_decide(utterance, rules) || clf.decide(utterance)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryFlags(pub Vec<bool>);

impl QueryFlags {
    pub fn to_flag_string(&self) -> String {
        self.0.iter().map(|&q| if q { "Y" } else { "N" }).collect::<Vec<_>>().join("-")
    }

    pub fn from_flag_string(s: &str) -> Result<QueryFlags> {
        let mut flags = Vec::new();
        for part in s.split('-') {
            match part {
                "Y" => flags.push(true),
                "N" => flags.push(false),
                other => {
                    return Err(Error::data(format!(
                        "query flag must be Y or N, got `{other}` in `{s}`"
                    )))
                }
            }
        }
        if flags.is_empty() {
            return Err(Error::data("empty query flag string"));
        }
        Ok(QueryFlags(flags))
    }
}

/// Per-utterance flags for a context window of the expected length.
pub fn flags_for_context(
    context: &[&str],
    expected_len: usize,
    rules: &LexicalRuleSet,
    clf: &LinearQueryClassifier,
) -> Result<QueryFlags> {
    if context.len() != expected_len {
        return Err(Error::data(format!(
            "context has {} utterances, expected {expected_len}",
            context.len()
        )));
    }
    Ok(QueryFlags(context.iter().map(|u| decide(u, rules, clf)).collect()))
}

/// Precision/recall/F1 from raw counts; components are 0 when undefined.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

pub fn save(clf: &LinearQueryClassifier, path: &Path) -> Result<()> {
    let json = serde_json::to_string(clf).map_err(|e| Error::data(e.to_string()))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<LinearQueryClassifier> {
    let raw = fs::read_to_string(path)?;
    let clf: LinearQueryClassifier = serde_json::from_str(&raw)
        .map_err(|e| Error::malformed(path.display().to_string(), e.to_string()))?;
    if clf.version != "1" {
        return Err(Error::data(format!("unsupported classifier version {}", clf.version)));
    }
    Ok(clf)
}

/// Parse the bundled labeled-set format: TSV lines `label<TAB>text` with
/// labels `Q` (query) or `O` (other).
pub fn parse_labeled_tsv(raw: &str, location: &str) -> Result<Vec<(String, bool)>> {
    let mut out = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, text) = line.split_once('\t').ok_or_else(|| {
            Error::malformed(format!("{location}:{}", lineno + 1), "expected `label<TAB>text`")
        })?;
        let is_query = match label {
            "Q" => true,
            "O" => false,
            other => {
                return Err(Error::malformed(
                    format!("{location}:{}", lineno + 1),
                    format!("label must be Q or O, got `{other}`"),
                ))
            }
        };
        out.push((text.to_string(), is_query));
    }
    Ok(out)
}

/// The bundled NPS-chat-style mini-set (150 train / 50 test rows).
pub fn bundled_labeled_set() -> Result<Vec<(String, bool)>> {
    parse_labeled_tsv(include_str!("../assets/nps_mini.tsv"), "assets/nps_mini.tsv")
}

pub const BUNDLED_TRAIN_ROWS: usize = 150;
