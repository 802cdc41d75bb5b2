//! Conversation ingestion, cleaning, and the normalized jsonl store.
//!
//! Cleaning applies, in order: timestamp/nick stripping, the non-English
//! filter, adjacent-repetition removal, the one-word rule, and bad-word
//! replacement — then repeats until a fixpoint so the result is idempotent.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::lexicon::{self, Lexicon};
use crate::text::{normalize_ws, word_core};
use crate::{Error, Result, BW_PLACEHOLDER};

/// Minimum lexicon coverage for an utterance to count as English.
pub const ENGLISH_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Ubuntu2,
    UbuntuIrc,
    Camrest,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Source::Ubuntu2 => "ubuntu2",
            Source::UbuntuIrc => "ubuntu_irc",
            Source::Camrest => "camrest",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub text: String,
    pub speaker: Option<String>,
    pub turn_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub id: String,
    pub source: Source,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn texts(&self) -> Vec<&str> {
        self.utterances.iter().map(|u| u.text.as_str()).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusSplit {
    pub train: Vec<Conversation>,
    pub valid: Vec<Conversation>,
    pub test: Vec<Conversation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestFormat {
    Jsonl,
    IrcAnnotated,
    CamrestJson,
}

impl FromStr for IngestFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(IngestFormat::Jsonl),
            "irc_annotated" => Ok(IngestFormat::IrcAnnotated),
            "camrest_json" => Ok(IngestFormat::CamrestJson),
            other => Err(Error::config(format!("unknown corpus format `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StoredUtterance {
    speaker: Option<String>,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct StoredConversation {
    id: String,
    source: Source,
    utterances: Vec<StoredUtterance>,
}

/// Read a corpus file into conversations. For `irc_annotated`, `path` is
/// the raw log; its disentanglement annotations are expected next to it
/// with the extension `.annot`.
pub fn ingest(path: &Path, format: IngestFormat) -> Result<Vec<Conversation>> {
    match format {
        IngestFormat::Jsonl => ingest_jsonl(path),
        IngestFormat::IrcAnnotated => ingest_irc(path),
        IngestFormat::CamrestJson => ingest_camrest(path),
    }
}

fn ingest_jsonl(path: &Path) -> Result<Vec<Conversation>> {
    let raw = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let stored: StoredConversation = serde_json::from_str(line).map_err(|e| {
            Error::malformed(format!("{}:{}", path.display(), lineno + 1), e.to_string())
        })?;
        out.push(Conversation {
            id: stored.id,
            source: stored.source,
            utterances: stored
                .utterances
                .into_iter()
                .enumerate()
                .map(|(i, u)| Utterance { text: u.text, speaker: u.speaker, turn_index: i })
                .collect(),
        });
    }
    Ok(out)
}

/// Raw IRC log plus a link file. Each annotation line is `child parent`
/// (zero-based log line numbers); `i i` seeds a thread. Threads are the
/// connected components of the link graph, utterances ordered by line
/// number; log lines never mentioned in the annotations are discarded.
fn ingest_irc(path: &Path) -> Result<Vec<Conversation>> {
    let raw = fs::read_to_string(path)?;
    let lines: Vec<&str> = raw.lines().collect();
    let annot_path = path.with_extension("annot");
    let annot = fs::read_to_string(&annot_path).map_err(|_| Error::MissingArtifact {
        artifact: annot_path.display().to_string(),
        producer: "the corpus provider (disentanglement annotations)".into(),
    })?;

    let mut parent: Vec<usize> = (0..lines.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }

    let mut mentioned = vec![false; lines.len()];
    for (lineno, line) in annot.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = format!("{}:{}", annot_path.display(), lineno + 1);
        let mut it = line.split_whitespace();
        let child: usize = it
            .next()
            .unwrap()
            .parse()
            .map_err(|_| Error::malformed(&loc, "expected integer line index"))?;
        let par: usize = it
            .next()
            .ok_or_else(|| Error::malformed(&loc, "expected `child parent` pair"))?
            .parse()
            .map_err(|_| Error::malformed(&loc, "expected integer line index"))?;
        if child >= lines.len() || par >= lines.len() {
            return Err(Error::malformed(&loc, "line index out of range"));
        }
        mentioned[child] = true;
        mentioned[par] = true;
        let (a, b) = (find(&mut parent, child), find(&mut parent, par));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }

    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut threads: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..lines.len() {
        if !mentioned[i] {
            continue;
        }
        let root = find(&mut parent, i);
        match threads.iter_mut().find(|(r, _)| *r == root) {
            Some((_, members)) => members.push(i),
            None => threads.push((root, vec![i])),
        }
    }
    threads.sort_by_key(|(root, _)| *root);

    let mut out = Vec::new();
    for (tidx, (_, members)) in threads.into_iter().enumerate() {
        let utterances = members
            .into_iter()
            .enumerate()
            .map(|(i, line_idx)| Utterance {
                text: lines[line_idx].to_string(),
                speaker: None,
                turn_index: i,
            })
            .collect();
        out.push(Conversation {
            id: format!("{stem}-t{tidx}"),
            source: Source::UbuntuIrc,
            utterances,
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct CamrestTurn {
    usr: Option<CamrestSide>,
    sys: Option<CamrestSide>,
}

#[derive(Deserialize)]
struct CamrestSide {
    #[serde(alias = "transcript", alias = "sent")]
    text: String,
}

#[derive(Deserialize)]
struct CamrestDialogue {
    dialogue_id: Option<u64>,
    dial: Vec<CamrestTurn>,
}

fn ingest_camrest(path: &Path) -> Result<Vec<Conversation>> {
    let raw = fs::read_to_string(path)?;
    let dialogues: Vec<CamrestDialogue> = serde_json::from_str(&raw)
        .map_err(|e| Error::malformed(path.display().to_string(), e.to_string()))?;
    let mut out = Vec::new();
    for (idx, d) in dialogues.into_iter().enumerate() {
        let id = d.dialogue_id.map(|n| n.to_string()).unwrap_or_else(|| idx.to_string());
        let mut utterances = Vec::new();
        for turn in d.dial {
            if let Some(u) = turn.usr {
                utterances.push(Utterance {
                    text: u.text,
                    speaker: Some("usr".into()),
                    turn_index: utterances.len(),
                });
            }
            if let Some(s) = turn.sys {
                utterances.push(Utterance {
                    text: s.text,
                    speaker: Some("sys".into()),
                    turn_index: utterances.len(),
                });
            }
        }
        out.push(Conversation { id: format!("camrest-{id}"), source: Source::Camrest, utterances });
    }
    Ok(out)
}

/// Write the normalized store: one JSON object per line.
pub fn write_store(path: &Path, corpus: &[Conversation]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for conv in corpus {
        let stored = StoredConversation {
            id: conv.id.clone(),
            source: conv.source,
            utterances: conv
                .utterances
                .iter()
                .map(|u| StoredUtterance { speaker: u.speaker.clone(), text: u.text.clone() })
                .collect(),
        };
        serde_json::to_writer(&mut w, &stored)
            .map_err(|e| Error::data(format!("store serialization failed: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Whether a text passes the lexicon-coverage English check.
pub fn language_filter(text: &str) -> bool {
    Lexicon::bundled().coverage(text) >= ENGLISH_THRESHOLD
}

fn timestamp_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    CELL.get_or_init(|| Regex::new(r"^\[?\d{1,2}:\d{2}(:\d{2})?\]?\s*").unwrap())
}

fn angle_nick_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    CELL.get_or_init(|| Regex::new(r"^<([^<>\s]+)>\s*").unwrap())
}

fn colon_nick_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    CELL.get_or_init(|| Regex::new(r"^([A-Za-z_][A-Za-z0-9_\[\]|^-]*):\s+").unwrap())
}

/// Strip leading `[HH:MM]` timestamps and `<nick>` / `nick:` prefixes,
/// repeatedly, capturing the first nick as the speaker when none is set.
fn strip_meta(text: &str, mut speaker: Option<String>) -> (String, Option<String>) {
    let mut s = text.trim().to_string();
    loop {
        let before = s.len();
        if let Some(m) = timestamp_re().find(&s) {
            s = s[m.end()..].to_string();
        }
        if let Some(c) = angle_nick_re().captures(&s) {
            if speaker.is_none() {
                speaker = Some(c[1].to_string());
            }
            s = s[c.get(0).unwrap().end()..].to_string();
        } else if let Some(c) = colon_nick_re().captures(&s) {
            if speaker.is_none() {
                speaker = Some(c[1].to_string());
            }
            s = s[c.get(0).unwrap().end()..].to_string();
        }
        if s.len() == before {
            return (s, speaker);
        }
    }
}

fn is_question_word(core: &str) -> bool {
    matches!(core, "what" | "who" | "when" | "where" | "why" | "how")
}

/// Rule vi: a one-word utterance survives only as a question or a command.
fn single_word_droppable(text: &str) -> bool {
    let mut tokens = text.split_whitespace();
    let (first, rest) = (tokens.next(), tokens.next());
    let token = match (first, rest) {
        (Some(t), None) => t,
        _ => return false,
    };
    if token.contains('?') || token.starts_with('/') {
        return false;
    }
    match word_core(token) {
        Some(core) => !is_question_word(&core) && !lexicon::shell_commands().contains(&core),
        None => true,
    }
}

fn replace_badwords(text: &str, badwords: &BTreeSet<String>) -> String {
    let mut out: Vec<String> = Vec::new();
    for token in text.split_whitespace() {
        let replaced = match word_core(token) {
            Some(core) if badwords.contains(&core) => {
                let start = token.find(|c: char| c.is_alphanumeric()).unwrap();
                let end = token.rfind(|c: char| c.is_alphanumeric()).map(|i| {
                    i + token[i..].chars().next().unwrap().len_utf8()
                }).unwrap();
                format!("{}{}{}", &token[..start], BW_PLACEHOLDER, &token[end..])
            }
            _ => token.to_string(),
        };
        out.push(replaced);
    }
    out.join(" ")
}

/// Apply the cleaning rules; `None` when fewer than two utterances remain.
pub fn clean(conv: &Conversation, badwords: &BTreeSet<String>) -> Option<Conversation> {
    let mut utts: Vec<Utterance> = conv.utterances.clone();
    loop {
        let mut next: Vec<Utterance> = Vec::new();
        for u in &utts {
            let (text, speaker) = strip_meta(&u.text, u.speaker.clone());
            let text = normalize_ws(&text);
            if text.is_empty() || !language_filter(&text) {
                continue;
            }
            next.push(Utterance { text, speaker, turn_index: 0 });
        }
        next.dedup_by(|later, earlier| later.text == earlier.text);
        next.retain(|u| !single_word_droppable(&u.text));
        for u in &mut next {
            u.text = replace_badwords(&u.text, badwords);
        }
        // Replacement can re-create adjacent duplicates; keep rule (v) true.
        next.dedup_by(|later, earlier| later.text == earlier.text);

        let changed = next.len() != utts.len()
            || next.iter().zip(&utts).any(|(a, b)| a.text != b.text || a.speaker != b.speaker);
        utts = next;
        if !changed {
            break;
        }
    }
    if utts.len() < 2 {
        return None;
    }
    for (i, u) in utts.iter_mut().enumerate() {
        u.turn_index = i;
    }
    Some(Conversation { id: conv.id.clone(), source: conv.source, utterances: utts })
}

/// Clean every conversation, dropping the ones that do not survive.
pub fn clean_corpus(corpus: &[Conversation], badwords: &BTreeSet<String>) -> Vec<Conversation> {
    corpus.iter().filter_map(|c| clean(c, badwords)).collect()
}
