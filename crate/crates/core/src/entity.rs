//! Entity mining: POS-pattern noun chunks plus technical tokens, ranked by
//! tf-idf against a conversation-level document-frequency table. This is a
//! declared substitute for the external weakly-supervised extractor the
//! source method relies on; it reproduces the observable behavior (short
//! lowercase domain noun phrases).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::corpus::Conversation;
use crate::lexicon::{pos_tag, PosTag};
use crate::text::word_core;
use crate::Result;

pub const DEFAULT_MAX_ENTITIES: usize = 12;
/// Chunks longer than this keep their trailing tokens (the phrase head).
const MAX_PHRASE_TOKENS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntitySet {
    pub entities: Vec<String>,
    pub source_context_id: String,
}

/// Conversation-level document frequencies for candidate phrases.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DfTable {
    pub n_docs: usize,
    pub counts: BTreeMap<String, u32>,
}

impl DfTable {
    pub fn df(&self, phrase: &str) -> u32 {
        self.counts.get(phrase).copied().unwrap_or(0)
    }

    pub fn idf(&self, phrase: &str) -> f64 {
        ((self.n_docs as f64 + 1.0) / (self.df(phrase) as f64 + 1.0)).ln() + 1.0
    }
}

/// Lowercased word cores of one utterance.
fn cores(utterance: &str) -> Vec<String> {
    utterance.split_whitespace().filter_map(word_core).collect()
}

fn is_technical(core: &str) -> bool {
    core.chars().any(|c| c.is_ascii_digit()) || core.contains('.') || core.contains('-')
}

/// Candidate phrases of one utterance: maximal (ADJ)* (NOUN)+ chunks
/// (trimmed to their final `MAX_PHRASE_TOKENS` tokens) plus technical
/// singletons. Order follows first appearance.
fn utterance_candidates(utterance: &str) -> Vec<String> {
    let toks = cores(utterance);
    let tags: Vec<PosTag> = toks.iter().map(|t| pos_tag(t)).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let start = i;
        while i < toks.len() && tags[i] == PosTag::Adj {
            i += 1;
        }
        let noun_start = i;
        while i < toks.len() && tags[i] == PosTag::Noun {
            i += 1;
        }
        if i > noun_start {
            let from = if i - start > MAX_PHRASE_TOKENS { i - MAX_PHRASE_TOKENS } else { start };
            out.push(toks[from..i].join(" "));
        } else if i == start {
            i += 1;
        }
    }
    for t in &toks {
        if is_technical(t) {
            out.push(t.clone());
        }
    }
    out
}

/// Count token-aligned occurrences of `phrase` in an utterance.
fn ngram_count(utterance_cores: &[String], phrase: &[&str]) -> usize {
    if phrase.is_empty() || utterance_cores.len() < phrase.len() {
        return 0;
    }
    utterance_cores
        .windows(phrase.len())
        .filter(|w| w.iter().zip(phrase).all(|(a, b)| a == b))
        .count()
}

/// Extract up to `max_entities` entity phrases from a context, ranked by
/// tf-idf (ties: longer phrase, then earlier first occurrence).
pub fn mine_entities(
    context: &[&str],
    context_id: &str,
    stats: &DfTable,
    max_entities: usize,
) -> EntitySet {
    let utt_cores: Vec<Vec<String>> = context.iter().map(|u| cores(u)).collect();

    let mut seen = BTreeSet::new();
    let mut ordered: Vec<String> = Vec::new();
    for utt in context {
        for cand in utterance_candidates(utt) {
            if seen.insert(cand.clone()) {
                ordered.push(cand);
            }
        }
    }

    let mut scored: Vec<(String, f64, usize, usize)> = Vec::new();
    for cand in ordered {
        let parts: Vec<&str> = cand.split(' ').collect();
        let mut tf = 0;
        let mut first = usize::MAX;
        let mut offset = 0;
        for uc in &utt_cores {
            tf += ngram_count(uc, &parts);
            if first == usize::MAX && uc.len() >= parts.len() {
                if let Some(at) = uc
                    .windows(parts.len())
                    .position(|w| w.iter().zip(&parts).all(|(a, b)| a == *b))
                {
                    first = offset + at;
                }
            }
            offset += uc.len();
        }
        if tf == 0 {
            continue;
        }
        let score = tf as f64 * stats.idf(&cand);
        let n_parts = parts.len();
        scored.push((cand, score, n_parts, first));
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then(b.2.cmp(&a.2))
            .then(a.3.cmp(&b.3))
    });
    scored.truncate(max_entities);

    EntitySet {
        entities: scored.into_iter().map(|(p, _, _, _)| p).collect(),
        source_context_id: context_id.to_string(),
    }
}

/// Build the conversation-level df table: every candidate phrase mapped to
/// the number of conversations that contain it token-aligned.
pub fn build_df_table(corpus: &[Conversation]) -> DfTable {
    let mut phrases: BTreeSet<String> = BTreeSet::new();
    let mut conv_cores: Vec<Vec<Vec<String>>> = Vec::with_capacity(corpus.len());
    for conv in corpus {
        for utt in &conv.utterances {
            phrases.extend(utterance_candidates(&utt.text));
        }
        conv_cores.push(conv.utterances.iter().map(|u| cores(&u.text)).collect());
    }

    let mut counts = BTreeMap::new();
    for phrase in phrases {
        let parts: Vec<&str> = phrase.split(' ').collect();
        let df = conv_cores
            .iter()
            .filter(|utts| utts.iter().any(|uc| ngram_count(uc, &parts) > 0))
            .count() as u32;
        if df > 0 {
            counts.insert(phrase, df);
        }
    }
    DfTable { n_docs: corpus.len(), counts }
}

const TOTAL_DOCS_KEY: &str = "__total_docs__";

pub fn save(table: &DfTable, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{TOTAL_DOCS_KEY}\t{}\n", table.n_docs));
    for (phrase, count) in &table.counts {
        out.push_str(&format!("{phrase}\t{count}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<DfTable> {
    let raw = fs::read_to_string(path)?;
    let mut table = DfTable::default();
    for (lineno, line) in raw.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (phrase, count) = line.split_once('\t').ok_or_else(|| {
            crate::Error::malformed(
                format!("{}:{}", path.display(), lineno + 1),
                "expected `phrase<TAB>count`",
            )
        })?;
        let count: u32 = count.parse().map_err(|_| {
            crate::Error::malformed(
                format!("{}:{}", path.display(), lineno + 1),
                "count must be an integer",
            )
        })?;
        if phrase == TOTAL_DOCS_KEY {
            table.n_docs = count as usize;
        } else {
            table.counts.insert(phrase.to_string(), count);
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Source, Utterance};

    fn conv(id: &str, texts: &[&str]) -> Conversation {
        Conversation {
            id: id.into(),
            source: Source::Ubuntu2,
            utterances: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Utterance { text: t.to_string(), speaker: None, turn_index: i })
                .collect(),
        }
    }

    #[test]
    fn table_one_ubuntu_context() {
        let context = [
            "I already do",
            "Ok, goto the /root folder and control+hThat'll show the hidden foldersThat'll \
             show the hidden foldersand the trash folder should be in a .gnome folder",
            "so how do I get permissions to open root?",
        ];
        let set = mine_entities(&context, "c0", &DfTable::default(), DEFAULT_MAX_ENTITIES);
        assert!(set.entities.iter().any(|e| e == "root"), "{:?}", set.entities);
        assert!(set.entities.iter().any(|e| e == "trash folder"), "{:?}", set.entities);
    }

    #[test]
    fn empty_context_is_empty() {
        let set = mine_entities(&[], "c0", &DfTable::default(), DEFAULT_MAX_ENTITIES);
        assert!(set.entities.is_empty());
    }

    #[test]
    fn tf_idf_ranking_hand_computed() {
        // df table over three conversations.
        let corpus = vec![
            conv("a", &["the quick brown fox saw the old barn", "the old barn again"]),
            conv("b", &["an old barn and nothing else stands there"]),
            conv("c", &["a plain field with no barn at all"]),
        ];
        let table = build_df_table(&corpus);
        assert_eq!(table.n_docs, 3);
        assert_eq!(table.df("old barn"), 2);
        assert_eq!(table.df("quick brown fox"), 1);
        assert_eq!(table.df("missing phrase"), 0);

        let context = ["the quick brown fox saw the quick brown fox near the old barn"];
        let set = mine_entities(&context, "ctx", &table, DEFAULT_MAX_ENTITIES);
        // tf("quick brown fox") = 2, idf = ln(4/2)+1; tf("old barn") = 1,
        // idf = ln(4/3)+1 — so the fox phrase must rank first.
        let fox_score = 2.0 * ((4.0f64 / 2.0).ln() + 1.0);
        let barn_score = 1.0 * ((4.0f64 / 3.0).ln() + 1.0);
        assert!(fox_score > barn_score);
        assert_eq!(set.entities[0], "quick brown fox");
        assert!(set.entities.contains(&"old barn".to_string()));
    }

    #[test]
    fn entities_occur_verbatim_and_respect_cap() {
        let context = [
            "the old server rack holds the backup disk array and the spare power supply",
            "its raid controller card manages the boot volume and the swap volume there",
        ];
        let set = mine_entities(&context, "ctx", &DfTable::default(), 3);
        assert!(set.entities.len() <= 3);
        let all_cores: Vec<Vec<String>> = context.iter().map(|u| cores(u)).collect();
        for e in &set.entities {
            let parts: Vec<&str> = e.split(' ').collect();
            assert!(
                all_cores.iter().any(|uc| ngram_count(uc, &parts) > 0),
                "{e:?} not found in context"
            );
        }
    }

    #[test]
    fn technical_tokens_are_candidates() {
        let context = ["upgrade from ubuntu 13.04 with apt-get failed twice"];
        let set = mine_entities(&context, "ctx", &DfTable::default(), DEFAULT_MAX_ENTITIES);
        assert!(set.entities.iter().any(|e| e == "13.04"), "{:?}", set.entities);
        assert!(set.entities.iter().any(|e| e == "apt-get"), "{:?}", set.entities);
        assert!(set.entities.iter().any(|e| e == "ubuntu 13.04"), "{:?}", set.entities);
    }

    #[test]
    fn df_table_round_trip() {
        let corpus = vec![
            conv("a", &["the disk cache failed", "the disk cache failed again"]),
            conv("b", &["a fresh disk cache works"]),
        ];
        let table = build_df_table(&corpus);
        assert_eq!(table.df("disk cache"), 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("df.tsv");
        save(&table, &path).unwrap();
        assert_eq!(load(&path).unwrap(), table);
    }

    #[test]
    fn longer_phrase_wins_ties() {
        // Equal tf and df for both phrases: the longer one must come first,
        // and equally long phrases fall back to first occurrence.
        let context = ["the spare disk and the kernel stack trace differ"];
        let set = mine_entities(&context, "ctx", &DfTable::default(), DEFAULT_MAX_ENTITIES);
        assert_eq!(set.entities, ["kernel stack trace", "spare disk"]);
    }
}
