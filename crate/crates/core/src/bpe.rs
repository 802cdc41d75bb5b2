//! Byte-level byte-pair-encoding tokenizer with reserved special tokens.
//!
//! Id layout: `<pad>`=0, `<unk>`=1, `[eos]`=2, `[eoc]`=3, `[eoq]`=4,
//! `[eot]`=5, `[sep]`=6, raw bytes 7..=262, learned merges from 263 up.
//! Specials are matched as atomic units before byte-level BPE runs, both
//! during training and during encoding, so no merge can ever span or
//! reproduce a marker.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const SPECIALS: [&str; 7] = ["<pad>", "<unk>", "[eos]", "[eoc]", "[eoq]", "[eot]", "[sep]"];
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const EOC_ID: u32 = 3;
pub const EOQ_ID: u32 = 4;
pub const EOT_ID: u32 = 5;
pub const SEP_ID: u32 = 6;
pub const BYTE_BASE: u32 = 7;
/// Smallest trainable vocabulary: the specials plus all 256 bytes.
pub const MIN_VOCAB_SIZE: usize = SPECIALS.len() + 256;
pub const DEFAULT_VOCAB_SIZE: usize = 8000;

const MAGIC: &str = "metadialog-bpe-v1";

#[derive(Debug, Clone)]
pub struct BpeVocab {
    /// Merge i combines two existing ids into id `MIN_VOCAB_SIZE + i`.
    merges: Vec<(u32, u32)>,
    /// Byte string for every id, specials included as their literal text.
    token_bytes: Vec<Vec<u8>>,
    pair_to_id: HashMap<(u32, u32), u32>,
}

fn base_token_bytes() -> Vec<Vec<u8>> {
    let mut t: Vec<Vec<u8>> = SPECIALS.iter().map(|s| s.as_bytes().to_vec()).collect();
    t.extend((0u16..256).map(|b| vec![b as u8]));
    t
}

/// Split text into pieces that merges never cross: a piece is either a
/// word with one optional leading space, or a run of other whitespace.
/// Pieces concatenate back to the input exactly.
fn pretokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_len = text.len();
    let end_of = |ci: usize| if ci + 1 < chars.len() { chars[ci + 1].0 } else { byte_len };
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].1.is_whitespace() {
            let mut j = i;
            while j < chars.len() && chars[j].1.is_whitespace() {
                j += 1;
            }
            // A single trailing space binds to the following word.
            if j < chars.len() && chars[j - 1].1 == ' ' {
                if j - 1 > i {
                    pieces.push(&text[chars[i].0..chars[j - 1].0]);
                }
                let mut k = j;
                while k < chars.len() && !chars[k].1.is_whitespace() {
                    k += 1;
                }
                pieces.push(&text[chars[j - 1].0..end_of(k - 1)]);
                i = k;
            } else {
                pieces.push(&text[chars[i].0..end_of(j - 1)]);
                i = j;
            }
        } else {
            let mut j = i;
            while j < chars.len() && !chars[j].1.is_whitespace() {
                j += 1;
            }
            pieces.push(&text[chars[i].0..end_of(j - 1)]);
            i = j;
        }
    }
    pieces
}

/// Split text around special-token literals, leftmost match first.
fn split_specials(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    loop {
        let hit = SPECIALS
            .iter()
            .enumerate()
            .filter_map(|(id, s)| rest.find(s).map(|at| (at, id as u32, s.len())))
            .min_by_key(|&(at, id, _)| (at, id));
        match hit {
            Some((at, id, len)) => {
                if at > 0 {
                    out.push(Segment::Text(&rest[..at]));
                }
                out.push(Segment::Special(id));
                rest = &rest[at + len..];
            }
            None => {
                if !rest.is_empty() {
                    out.push(Segment::Text(rest));
                }
                return out;
            }
        }
    }
}

enum Segment<'a> {
    Text(&'a str),
    Special(u32),
}

/// Train a vocabulary of at most `vocab_size` ids by greedy
/// highest-frequency pair merging; frequency ties pick the
/// lexicographically smallest (left bytes, right bytes) pair. Stops early
/// if the corpus runs out of repeated pairs.
pub fn train_bpe(corpus_lines: &[String], vocab_size: usize) -> Result<BpeVocab> {
    if vocab_size < MIN_VOCAB_SIZE {
        return Err(Error::config(format!(
            "vocab_size {vocab_size} is below the {MIN_VOCAB_SIZE} base ids (7 specials + 256 bytes)"
        )));
    }
    if corpus_lines.iter().all(|l| l.trim().is_empty()) {
        return Err(Error::data("tokenizer training corpus is empty"));
    }

    // Weighted unique pieces, markers cut out first.
    let mut piece_weights: BTreeMap<&str, u64> = BTreeMap::new();
    for line in corpus_lines {
        for seg in split_specials(line) {
            if let Segment::Text(t) = seg {
                for piece in pretokenize(t) {
                    *piece_weights.entry(piece).or_insert(0) += 1;
                }
            }
        }
    }

    let mut token_bytes = base_token_bytes();
    let mut pieces: Vec<(Vec<u32>, u64)> = piece_weights
        .into_iter()
        .map(|(p, w)| (p.bytes().map(|b| BYTE_BASE + b as u32).collect(), w))
        .collect();
    let mut merges: Vec<(u32, u32)> = Vec::new();

    while token_bytes.len() < vocab_size {
        let mut counts: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for (ids, w) in &pieces {
            for pair in ids.windows(2) {
                *counts.entry((pair[0], pair[1])).or_insert(0) += w;
            }
        }
        let mut best: Option<((u32, u32), u64, Vec<u8>)> = None;
        for (&pair, &count) in &counts {
            let mut joined = token_bytes[pair.0 as usize].clone();
            joined.extend_from_slice(&token_bytes[pair.1 as usize]);
            if SPECIALS.iter().any(|s| s.as_bytes() == joined.as_slice()) {
                continue;
            }
            let candidate_key = (
                &token_bytes[pair.0 as usize],
                &token_bytes[pair.1 as usize],
            );
            let better = match &best {
                None => true,
                Some((bpair, bcount, _)) => {
                    let best_key =
                        (&token_bytes[bpair.0 as usize], &token_bytes[bpair.1 as usize]);
                    count > *bcount || (count == *bcount && candidate_key < best_key)
                }
            };
            if better {
                best = Some((pair, count, joined));
            }
        }
        let Some((pair, count, joined)) = best else { break };
        if count < 2 {
            break;
        }
        let new_id = token_bytes.len() as u32;
        token_bytes.push(joined);
        merges.push(pair);
        for (ids, _) in &mut pieces {
            let mut out = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(ids[i]);
                    i += 1;
                }
            }
            *ids = out;
        }
    }

    Ok(BpeVocab::from_parts(merges, token_bytes))
}

impl BpeVocab {
    fn from_parts(merges: Vec<(u32, u32)>, token_bytes: Vec<Vec<u8>>) -> Self {
        let pair_to_id = merges
            .iter()
            .enumerate()
            .map(|(i, &pair)| (pair, (MIN_VOCAB_SIZE + i) as u32))
            .collect();
        BpeVocab { merges, token_bytes, pair_to_id }
    }

    pub fn len(&self) -> usize {
        self.token_bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.token_bytes.get(id as usize).map(Vec::as_slice)
    }

    fn encode_piece(&self, piece: &str, out: &mut Vec<u32>) {
        let mut ids: Vec<u32> = piece.bytes().map(|b| BYTE_BASE + b as u32).collect();
        loop {
            let best = ids
                .windows(2)
                .filter_map(|p| self.pair_to_id.get(&(p[0], p[1])))
                .min()
                .copied();
            let Some(new_id) = best else { break };
            let pair = self.merges[new_id as usize - MIN_VOCAB_SIZE];
            let mut merged = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(ids[i]);
                    i += 1;
                }
            }
            ids = merged;
        }
        out.extend(ids);
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for seg in split_specials(text) {
            match seg {
                Segment::Special(id) => out.push(id),
                Segment::Text(t) => {
                    for piece in pretokenize(t) {
                        self.encode_piece(piece, &mut out);
                    }
                }
            }
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        String::from_utf8(bytes)
            .map_err(|_| Error::data("decoded byte sequence is not valid UTF-8"))
    }

    /// Decode for sampled output: invalid UTF-8 runs become U+FFFD instead
    /// of erroring. Stochastic decoding can emit byte tokens in orders that
    /// never occur in real text, and that must not kill a generation run.
    pub fn decode_lossy(&self, ids: &[u32]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        for &id in ids {
            match self.token_bytes.get(id as usize) {
                Some(b) => bytes.extend_from_slice(b),
                None => {
                    return Err(Error::data(format!(
                        "unknown token id {id} (vocab has {} ids)",
                        self.token_bytes.len()
                    )))
                }
            }
        }
        Ok(bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (i, s) in SPECIALS.iter().enumerate() {
            out.push_str(&format!("special {s} {i}\n"));
        }
        for &(a, b) in &self.merges {
            out.push_str(&format!("merge {a} {b}\n"));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let loc = path.display().to_string();
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::malformed(&loc, format!("missing `{MAGIC}` header")));
        }
        let mut token_bytes = base_token_bytes();
        let mut merges = Vec::new();
        let mut specials_seen = 0usize;
        for (no, line) in lines.enumerate() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("special") => {
                    let name = parts
                        .next()
                        .ok_or_else(|| Error::malformed(format!("{loc}:{}", no + 2), "bare special"))?;
                    let id: usize = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::malformed(format!("{loc}:{}", no + 2), "bad special id"))?;
                    if SPECIALS.get(id) != Some(&name) {
                        return Err(Error::malformed(
                            format!("{loc}:{}", no + 2),
                            format!("special `{name}`/{id} does not match this build"),
                        ));
                    }
                    specials_seen += 1;
                }
                Some("merge") => {
                    let a: u32 = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::malformed(format!("{loc}:{}", no + 2), "bad merge"))?;
                    let b: u32 = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::malformed(format!("{loc}:{}", no + 2), "bad merge"))?;
                    let limit = token_bytes.len() as u32;
                    if a >= limit || b >= limit || a < BYTE_BASE || b < BYTE_BASE {
                        return Err(Error::malformed(
                            format!("{loc}:{}", no + 2),
                            format!("merge ({a}, {b}) references an id outside 7..{limit}"),
                        ));
                    }
                    let mut joined = token_bytes[a as usize].clone();
                    joined.extend_from_slice(&token_bytes[b as usize]);
                    token_bytes.push(joined);
                    merges.push((a, b));
                }
                Some(other) => {
                    return Err(Error::malformed(
                        format!("{loc}:{}", no + 2),
                        format!("unknown record `{other}`"),
                    ))
                }
                None => {}
            }
        }
        if specials_seen != SPECIALS.len() {
            return Err(Error::malformed(&loc, "incomplete specials map"));
        }
        Ok(BpeVocab::from_parts(merges, token_bytes))
    }
}
