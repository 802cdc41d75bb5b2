//! Bundled word lists: English vocabulary, domain/technical terms,
//! stopwords, shell commands, bad words, and a small POS lexicon for the
//! entity chunker. Everything is compiled in so the pipeline has no
//! runtime data dependencies.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use crate::text::word_core;

const ENGLISH_WORDS: &str = include_str!("../assets/english_words.txt");
const TECH_TERMS: &str = include_str!("../assets/tech_terms.txt");
const STOPWORDS: &str = include_str!("../assets/stopwords.txt");
const SHELL_COMMANDS: &str = include_str!("../assets/shell_commands.txt");
const BADWORDS: &str = include_str!("../assets/badwords.txt");
const POS_LEXICON: &str = include_str!("../assets/pos_lexicon.tsv");

fn line_set(raw: &str) -> BTreeSet<String> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// The combined English + technical lexicon backing the language filter.
pub struct Lexicon {
    words: BTreeSet<String>,
}

impl Lexicon {
    pub fn bundled() -> &'static Lexicon {
        static CELL: OnceLock<Lexicon> = OnceLock::new();
        CELL.get_or_init(|| {
            let mut words = line_set(ENGLISH_WORDS);
            words.extend(line_set(TECH_TERMS));
            words.extend(line_set(SHELL_COMMANDS));
            Lexicon { words }
        })
    }

    /// Whether a lowercased token counts as a known word. Tokens carrying
    /// digits (versions, times, model numbers) and the `<bw>` placeholder
    /// core always count, and a plural/inflection fallback strips common
    /// suffixes before giving up.
    pub fn is_known(&self, token: &str) -> bool {
        if token.is_empty() {
            return false;
        }
        if token == "bw" || token.chars().any(|c| c.is_ascii_digit()) {
            return true;
        }
        if self.words.contains(token) {
            return true;
        }
        for suffix in ["s", "es", "ed", "ing", "ly"] {
            if let Some(base) = token.strip_suffix(suffix) {
                if base.len() >= 2 && self.words.contains(base) {
                    return true;
                }
            }
        }
        false
    }

    /// Fraction of word tokens known to the lexicon; 0 for token-free text.
    pub fn coverage(&self, text: &str) -> f64 {
        let tokens: Vec<String> = crate::text::words(text);
        if tokens.is_empty() {
            return 0.0;
        }
        let hits = tokens.iter().filter(|t| self.is_known(t)).count();
        hits as f64 / tokens.len() as f64
    }
}

pub fn stopwords() -> &'static BTreeSet<String> {
    static CELL: OnceLock<BTreeSet<String>> = OnceLock::new();
    CELL.get_or_init(|| line_set(STOPWORDS))
}

pub fn shell_commands() -> &'static BTreeSet<String> {
    static CELL: OnceLock<BTreeSet<String>> = OnceLock::new();
    CELL.get_or_init(|| line_set(SHELL_COMMANDS))
}

pub fn badwords() -> &'static BTreeSet<String> {
    static CELL: OnceLock<BTreeSet<String>> = OnceLock::new();
    CELL.get_or_init(|| line_set(BADWORDS))
}

/// Part-of-speech tags used by the entity chunker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosTag {
    Det,
    Pron,
    Prep,
    Conj,
    Aux,
    Verb,
    Adv,
    Adj,
    Num,
    Noun,
}

fn pos_lexicon() -> &'static BTreeMap<String, PosTag> {
    static CELL: OnceLock<BTreeMap<String, PosTag>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut map = BTreeMap::new();
        for line in POS_LEXICON.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (tag, word) = match line.split_once('\t') {
                Some(pair) => pair,
                None => continue,
            };
            let tag = match tag {
                "DET" => PosTag::Det,
                "PRON" => PosTag::Pron,
                "PREP" => PosTag::Prep,
                "CONJ" => PosTag::Conj,
                "AUX" => PosTag::Aux,
                "VERB" => PosTag::Verb,
                "ADV" => PosTag::Adv,
                "ADJ" => PosTag::Adj,
                "NUM" => PosTag::Num,
                _ => continue,
            };
            map.insert(word.to_string(), tag);
        }
        map
    })
}

/// Tag one raw whitespace token. Closed-class words come from the bundled
/// lexicon; unknown words fall back to suffix heuristics and finally NOUN,
/// which is the permissive choice for a noun-phrase chunker.
pub fn pos_tag(token: &str) -> PosTag {
    let core = match word_core(token) {
        Some(c) => c,
        None => return PosTag::Noun,
    };
    if let Some(tag) = pos_lexicon().get(core.as_str()) {
        return *tag;
    }
    if core.chars().any(|c| c.is_ascii_digit()) {
        return PosTag::Noun;
    }
    // Inflected forms of known verbs ("holds", "managing", "failed").
    for suffix in ["s", "es", "ed", "ing"] {
        if let Some(base) = core.strip_suffix(suffix) {
            if base.len() >= 2 {
                if let Some(tag @ PosTag::Verb) = pos_lexicon().get(base) {
                    return *tag;
                }
            }
        }
    }
    if core.len() > 4 {
        if core.ends_with("ly") {
            return PosTag::Adv;
        }
        for suf in ["ous", "ful", "ive", "ish", "able", "ible", "ic"] {
            if core.ends_with(suf) {
                return PosTag::Adj;
            }
        }
    }
    PosTag::Noun
}
