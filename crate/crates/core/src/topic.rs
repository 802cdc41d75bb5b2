//! Collapsed-Gibbs LDA over conversations-as-documents, with UMass
//! coherence for picking K and fold-in inference for per-context dominant
//! topics.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Conversation;
use crate::lexicon::stopwords;
use crate::text::{fnv1a, words};
use crate::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.01;
pub const DEFAULT_SWEEPS: usize = 500;
const FOLD_IN_SWEEPS: usize = 20;

/// `alpha = 50 / K`, the conventional symmetric document prior.
pub fn default_alpha(k: usize) -> f64 {
    50.0 / k as f64
}

/// A document is a bag of vocab indices; ids index into `Documents::vocab`.
#[derive(Debug, Clone)]
pub struct Documents {
    pub docs: Vec<Vec<usize>>,
    pub vocab: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicModel {
    pub version: String,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub vocab: Vec<String>,
    /// K x V topic-word probabilities; each row sums to 1.
    pub phi: Vec<Vec<f64>>,
    /// Total token mass per topic from the final Gibbs state, used to pick
    /// a fallback topic for contexts with no in-vocab tokens.
    pub topic_mass: Vec<f64>,
}

/// Tokenize, stem, and index the corpus: one bag per conversation, minus
/// stopwords and tokens seen in fewer than two documents. The `<bw>`
/// placeholder and reserved markers never survive (their cores are either
/// stopword-free non-words or filtered here explicitly).
pub fn build_documents<F>(corpus: &[Conversation], stemmer: F) -> Result<Documents>
where
    F: Fn(&str) -> String,
{
    if corpus.is_empty() {
        return Err(Error::data("cannot build topic documents from an empty corpus"));
    }
    let stop = stopwords();
    let mut raw_docs: Vec<Vec<String>> = Vec::with_capacity(corpus.len());
    for conv in corpus {
        let mut doc = Vec::new();
        for utt in &conv.utterances {
            for tok in words(&utt.text) {
                if tok.len() < 2 || tok == "bw" || stop.contains(&tok) {
                    continue;
                }
                if crate::MARKERS.iter().any(|m| m.trim_matches(['[', ']']) == tok) {
                    continue;
                }
                doc.push(stemmer(&tok));
            }
        }
        raw_docs.push(doc);
    }

    let mut doc_freq: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in &raw_docs {
        let uniq: BTreeSet<&str> = doc.iter().map(String::as_str).collect();
        for t in uniq {
            *doc_freq.entry(t).or_insert(0) += 1;
        }
    }
    let vocab: Vec<String> = doc_freq
        .iter()
        .filter(|(_, &df)| df >= 2)
        .map(|(t, _)| t.to_string())
        .collect();
    let index: BTreeMap<&str, usize> =
        vocab.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();

    let docs = raw_docs
        .iter()
        .map(|doc| doc.iter().filter_map(|t| index.get(t.as_str()).copied()).collect())
        .collect();
    Ok(Documents { docs, vocab })
}

struct GibbsState {
    z: Vec<Vec<usize>>,
    n_dk: Vec<Vec<u32>>,
    n_kw: Vec<Vec<u32>>,
    n_k: Vec<u32>,
}

impl GibbsState {
    fn init(docs: &[Vec<usize>], k: usize, v: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut state = GibbsState {
            z: docs.iter().map(|d| vec![0; d.len()]).collect(),
            n_dk: vec![vec![0; k]; docs.len()],
            n_kw: vec![vec![0; v]; k],
            n_k: vec![0; k],
        };
        for (d, doc) in docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let topic = rng.gen_range(0..k);
                state.z[d][i] = topic;
                state.n_dk[d][topic] += 1;
                state.n_kw[topic][w] += 1;
                state.n_k[topic] += 1;
            }
        }
        state
    }

    fn total_assigned(&self) -> u64 {
        self.n_k.iter().map(|&n| n as u64).sum()
    }
}

fn sample_discrete(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Collapsed Gibbs sampling. Deterministic for a given seed.
pub fn fit(
    documents: &Documents,
    k: usize,
    alpha: f64,
    beta: f64,
    sweeps: usize,
    seed: u64,
) -> Result<TopicModel> {
    if k == 0 {
        return Err(Error::config("topic count K must be at least 1"));
    }
    if sweeps == 0 {
        return Err(Error::config("sweep count must be at least 1"));
    }
    let v = documents.vocab.len();
    if v == 0 {
        return Err(Error::data("topic model vocabulary is empty"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = GibbsState::init(&documents.docs, k, v, &mut rng);
    let corpus_tokens: u64 = documents.docs.iter().map(|d| d.len() as u64).sum();
    let v_beta = v as f64 * beta;
    let mut weights = vec![0.0; k];

    for _ in 0..sweeps {
        for (d, doc) in documents.docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = state.z[d][i];
                state.n_dk[d][old] -= 1;
                state.n_kw[old][w] -= 1;
                state.n_k[old] -= 1;

                for t in 0..k {
                    weights[t] = (state.n_dk[d][t] as f64 + alpha)
                        * (state.n_kw[t][w] as f64 + beta)
                        / (state.n_k[t] as f64 + v_beta);
                }
                let new = sample_discrete(&weights, &mut rng);

                state.z[d][i] = new;
                state.n_dk[d][new] += 1;
                state.n_kw[new][w] += 1;
                state.n_k[new] += 1;
            }
        }
        debug_assert_eq!(state.total_assigned(), corpus_tokens);
    }

    let phi = (0..k)
        .map(|t| {
            let denom = state.n_k[t] as f64 + v_beta;
            (0..v).map(|w| (state.n_kw[t][w] as f64 + beta) / denom).collect()
        })
        .collect();
    Ok(TopicModel {
        version: "1".into(),
        k,
        alpha,
        beta,
        vocab: documents.vocab.clone(),
        phi,
        topic_mass: state.n_k.iter().map(|&n| n as f64).collect(),
    })
}

/// Indices of a topic's `n` highest-phi words (ties toward the smaller,
/// i.e. lexicographically earlier, vocab id).
pub fn top_word_ids(model: &TopicModel, topic: usize, n: usize) -> Vec<usize> {
    let row = &model.phi[topic];
    let mut ids: Vec<usize> = (0..row.len()).collect();
    ids.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    ids.truncate(n);
    ids
}

/// Mean UMass coherence across topics: for each topic's top-`top_n` words,
/// sum log((D(w_i, w_j) + 1) / D(w_j)) over ranked pairs i < j, where D
/// counts (co-)occurrence in documents.
pub fn coherence(model: &TopicModel, documents: &Documents, top_n: usize) -> Result<f64> {
    let v = model.vocab.len();
    if top_n > v {
        return Err(Error::config(format!("top_n {top_n} exceeds vocabulary size {v}")));
    }
    let mut doc_sets: Vec<BTreeSet<usize>> = Vec::with_capacity(documents.docs.len());
    for doc in &documents.docs {
        doc_sets.push(doc.iter().copied().collect());
    }
    let d_single = |w: usize| doc_sets.iter().filter(|s| s.contains(&w)).count() as f64;
    let d_joint = |a: usize, b: usize| {
        doc_sets.iter().filter(|s| s.contains(&a) && s.contains(&b)).count() as f64
    };

    let mut total = 0.0;
    for t in 0..model.k {
        let top = top_word_ids(model, t, top_n);
        let mut score = 0.0;
        for i in 0..top.len() {
            for j in (i + 1)..top.len() {
                let dj = d_single(top[j]);
                if dj > 0.0 {
                    score += ((d_joint(top[i], top[j]) + 1.0) / dj).ln();
                }
            }
        }
        total += score;
    }
    Ok(total / model.k as f64)
}

/// Fit one model per candidate K (same seed) and return the K with the
/// best coherence; ties go to the smaller K.
pub fn select_k(
    documents: &Documents,
    candidates: &[usize],
    alpha_for: impl Fn(usize) -> f64,
    beta: f64,
    sweeps: usize,
    seed: u64,
    top_n: usize,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::config("select_k requires at least one candidate"));
    }
    let mut ordered: Vec<usize> = candidates.to_vec();
    ordered.sort_unstable();
    ordered.dedup();
    let mut best: Option<(usize, f64)> = None;
    for &k in &ordered {
        let model = fit(documents, k, alpha_for(k), beta, sweeps, seed)?;
        let c = coherence(&model, documents, top_n.min(documents.vocab.len()))?;
        if best.map_or(true, |(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    Ok(best.unwrap().0)
}

/// Tokenize a context the same way documents were built and map into the
/// model vocabulary.
pub fn context_token_ids<F>(model: &TopicModel, context_texts: &[&str], stemmer: F) -> Vec<usize>
where
    F: Fn(&str) -> String,
{
    let index: BTreeMap<&str, usize> =
        model.vocab.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let stop = stopwords();
    let mut ids = Vec::new();
    for text in context_texts {
        for tok in words(text) {
            if tok.len() < 2 || tok == "bw" || stop.contains(&tok) {
                continue;
            }
            if let Some(&id) = index.get(stemmer(&tok).as_str()) {
                ids.push(id);
            }
        }
    }
    ids
}

/// Dominant topic of a context by fold-in Gibbs over fixed phi. The seed
/// is derived from the context tokens so inference is reproducible without
/// carrying extra state.
pub fn dominant_topic(model: &TopicModel, context_ids: &[usize]) -> usize {
    if context_ids.is_empty() {
        return argmax(&model.topic_mass);
    }
    let seed = fnv1a(
        context_ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",").as_bytes(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = model.k;
    let mut n_dk = vec![0u32; k];
    let mut z: Vec<usize> = Vec::with_capacity(context_ids.len());
    for _ in context_ids {
        let t = rng.gen_range(0..k);
        n_dk[t] += 1;
        z.push(t);
    }
    let mut weights = vec![0.0; k];
    for _ in 0..FOLD_IN_SWEEPS {
        for (i, &w) in context_ids.iter().enumerate() {
            let old = z[i];
            n_dk[old] -= 1;
            for t in 0..k {
                weights[t] = (n_dk[t] as f64 + model.alpha) * model.phi[t][w];
            }
            let new = sample_discrete(&weights, &mut rng);
            z[i] = new;
            n_dk[new] += 1;
        }
    }
    argmax(&n_dk.iter().map(|&n| n as f64).collect::<Vec<_>>())
}

/// Top-`n` keywords of the context's dominant topic.
pub fn dominant_topic_keywords<F>(
    model: &TopicModel,
    context_texts: &[&str],
    n: usize,
    stemmer: F,
) -> Vec<String>
where
    F: Fn(&str) -> String,
{
    let ids = context_token_ids(model, context_texts, stemmer);
    let topic = dominant_topic(model, &ids);
    top_word_ids(model, topic, n).into_iter().map(|i| model.vocab[i].clone()).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn save(model: &TopicModel, path: &Path) -> Result<()> {
    let json = serde_json::to_string(model).map_err(|e| Error::data(e.to_string()))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TopicModel> {
    let raw = fs::read_to_string(path)?;
    let model: TopicModel = serde_json::from_str(&raw)
        .map_err(|e| Error::malformed(path.display().to_string(), e.to_string()))?;
    if model.version != "1" {
        return Err(Error::data(format!("unsupported topic model version {}", model.version)));
    }
    Ok(model)
}
