//! Training-instance assembly: slide a 3-utterance window over each
//! conversation, attach meta-context (query flags plus topic keywords or
//! entities), and serialize to the special-token line format
//!
//! ```text
//! u1 [eos] u2 [eos] u3 [eos] [eoc] N-N-Y [eoq] t1, t2 [eot] [sep] resp [eos]
//! ```
//!
//! The serializer emits single spaces; the parser tolerates arbitrary
//! whitespace (including none) around the markers.

use std::fmt;
use std::str::FromStr;

use crate::corpus::Conversation;
use crate::entity::{self, DfTable};
use crate::query::{self, LexicalRuleSet, LinearQueryClassifier, QueryFlags};
use crate::text::normalize_ws;
use crate::topic::{self, TopicModel};
use crate::{Error, Result, EOC, EOQ, EOS, EOT, MARKERS, SEP};

pub const DEFAULT_CONTEXT_LEN: usize = 3;
pub const TOPIC_KEYWORDS_PER_INSTANCE: usize = 10;

/// Which attribute stream rides along with the query flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Qstn,
    QstnTop,
    QstnEnt,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Qstn => "qstn",
            Mode::QstnTop => "qstn_top",
            Mode::QstnEnt => "qstn_ent",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qstn" => Ok(Mode::Qstn),
            "qstn_top" => Ok(Mode::QstnTop),
            "qstn_ent" => Ok(Mode::QstnEnt),
            other => Err(Error::config(format!(
                "unknown mode `{other}` (expected qstn, qstn_top or qstn_ent)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaContext {
    pub query_flags: QueryFlags,
    pub attribute_terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub context: Vec<String>,
    pub meta: MetaContext,
    pub response: String,
    pub conversation_id: String,
    pub window_start: usize,
}

impl TrainingInstance {
    /// The serialized-payload view: everything `serialize` writes and
    /// `parse` can recover. Provenance fields (conversation id, window
    /// start) are carried alongside instances but are not part of the
    /// line format, so round-trip equality is defined over this view.
    pub fn payload(&self) -> (&[String], &QueryFlags, &[String], &str) {
        (
            &self.context,
            &self.meta.query_flags,
            &self.meta.attribute_terms,
            &self.response,
        )
    }
}

/// All (context, response) windows of a conversation: a conversation of L
/// utterances yields max(0, L - ctx_len) pairs.
pub fn window_with_len(conv: &Conversation, ctx_len: usize) -> Vec<(Vec<String>, String, usize)> {
    let texts = conv.texts();
    if texts.len() <= ctx_len {
        return Vec::new();
    }
    (0..texts.len() - ctx_len)
        .map(|start| {
            let context = texts[start..start + ctx_len].iter().map(|t| t.to_string()).collect();
            (context, texts[start + ctx_len].to_string(), start)
        })
        .collect()
}

pub fn window(conv: &Conversation) -> Vec<(Vec<String>, String, usize)> {
    window_with_len(conv, DEFAULT_CONTEXT_LEN)
}

/// Everything attach_meta needs besides the window itself.
pub struct Miners<'a> {
    pub rules: &'a LexicalRuleSet,
    pub classifier: &'a LinearQueryClassifier,
    pub topic_model: Option<&'a TopicModel>,
    pub df_table: Option<&'a DfTable>,
}

/// Remove stray reserved markers so serialized lines keep their grammar.
fn sanitize(text: &str) -> String {
    let mut s = text.to_string();
    for m in MARKERS {
        while let Some(at) = s.find(m) {
            s.replace_range(at..at + m.len(), " ");
        }
    }
    normalize_ws(&s)
}

pub fn attach_meta(
    context: Vec<String>,
    response: String,
    conversation_id: &str,
    window_start: usize,
    mode: Mode,
    miners: &Miners<'_>,
) -> Result<TrainingInstance> {
    let context: Vec<String> = context.iter().map(|t| sanitize(t)).collect();
    let response = sanitize(&response);
    let ctx_refs: Vec<&str> = context.iter().map(String::as_str).collect();
    let query_flags =
        query::flags_for_context(&ctx_refs, ctx_refs.len(), miners.rules, miners.classifier)?;

    let attribute_terms = match mode {
        Mode::Qstn => Vec::new(),
        Mode::QstnTop => {
            let model = miners.topic_model.ok_or_else(|| {
                Error::config("mode qstn_top needs a fitted topic model (run mine-topics)")
            })?;
            topic::dominant_topic_keywords(
                model,
                &ctx_refs,
                TOPIC_KEYWORDS_PER_INSTANCE,
                crate::stem::stem,
            )
        }
        Mode::QstnEnt => {
            let table = miners.df_table.ok_or_else(|| {
                Error::config("mode qstn_ent needs a document-frequency table (run mine-entities)")
            })?;
            let id = format!("{conversation_id}:{window_start}");
            entity::mine_entities(&ctx_refs, &id, table, entity::DEFAULT_MAX_ENTITIES)
                .entities
                .into_iter()
                .map(|e| sanitize(&e))
                .collect()
        }
    };

    Ok(TrainingInstance {
        context,
        meta: MetaContext { query_flags, attribute_terms },
        response,
        conversation_id: conversation_id.to_string(),
        window_start,
    })
}

/// Serialize to the canonical single-spaced line. The `[eoq] .. [eot]`
/// span is emitted even when the attribute list is empty so all modes
/// share one grammar.
pub fn serialize(inst: &TrainingInstance) -> String {
    let mut parts: Vec<String> = Vec::new();
    for utt in &inst.context {
        parts.push(utt.clone());
        parts.push(EOS.to_string());
    }
    parts.push(EOC.to_string());
    parts.push(inst.meta.query_flags.to_flag_string());
    parts.push(EOQ.to_string());
    if !inst.meta.attribute_terms.is_empty() {
        parts.push(inst.meta.attribute_terms.join(", "));
    }
    parts.push(EOT.to_string());
    parts.push(SEP.to_string());
    parts.push(inst.response.clone());
    parts.push(EOS.to_string());
    parts.join(" ")
}

/// One lexical piece of a serialized line: literal text or a marker.
#[derive(Debug, PartialEq)]
enum Piece {
    Text(String),
    Marker(&'static str, usize),
}

fn scan_pieces(line: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut rest = line;
    let mut offset = 0;
    loop {
        let next = MARKERS
            .iter()
            .filter_map(|m| rest.find(m).map(|at| (at, *m)))
            .min_by_key(|&(at, _)| at);
        match next {
            Some((at, marker)) => {
                let text = rest[..at].trim();
                if !text.is_empty() {
                    pieces.push(Piece::Text(text.to_string()));
                }
                pieces.push(Piece::Marker(marker, offset + at));
                offset += at + marker.len();
                rest = &rest[at + marker.len()..];
            }
            None => {
                let text = rest.trim();
                if !text.is_empty() {
                    pieces.push(Piece::Text(text.to_string()));
                }
                return pieces;
            }
        }
    }
}

/// Parse a serialized line back into an instance. Whitespace-tolerant;
/// provenance fields come back empty/zero (see `TrainingInstance::payload`).
/// A truncated line whose leading context utterances were cut (shorter
/// context than flags) still parses, which the length-capped tokenizer
/// path relies on.
pub fn parse(line: &str) -> Result<TrainingInstance> {
    let pieces = scan_pieces(line);
    let mut idx = 0;

    let mut context: Vec<String> = Vec::new();
    let mut pending: Option<String> = None;
    loop {
        match pieces.get(idx) {
            Some(Piece::Text(t)) => {
                if pending.is_some() {
                    return Err(Error::malformed(
                        "line",
                        format!("utterance text not terminated by {EOS}"),
                    ));
                }
                pending = Some(t.clone());
                idx += 1;
            }
            Some(Piece::Marker(m, _)) if *m == EOS => {
                context.push(pending.take().unwrap_or_default());
                idx += 1;
            }
            Some(Piece::Marker(m, _)) if *m == EOC => {
                idx += 1;
                break;
            }
            Some(Piece::Marker(m, at)) => {
                return Err(Error::malformed(
                    format!("line:{at}"),
                    format!("unexpected {m} before {EOC}"),
                ))
            }
            None => return Err(Error::malformed("line", format!("missing {EOC} marker"))),
        }
    }
    // Drop empty context slots (truncation artifacts); a fully empty
    // context is still an error.
    context.retain(|t| !t.is_empty());

    let flags_text = match pieces.get(idx) {
        Some(Piece::Text(t)) => {
            idx += 1;
            t.clone()
        }
        other => {
            return Err(Error::malformed(
                "line",
                format!("expected query flags after {EOC}, found {other:?}"),
            ))
        }
    };
    let query_flags = QueryFlags::from_flag_string(&flags_text)?;

    match pieces.get(idx) {
        Some(Piece::Marker(m, _)) if *m == EOQ => idx += 1,
        other => {
            return Err(Error::malformed(
                "line",
                format!("expected {EOQ} after query flags, found {other:?}"),
            ))
        }
    }

    let attribute_terms = match pieces.get(idx) {
        Some(Piece::Text(t)) => {
            idx += 1;
            t.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        }
        _ => Vec::new(),
    };

    match pieces.get(idx) {
        Some(Piece::Marker(m, _)) if *m == EOT => idx += 1,
        other => {
            return Err(Error::malformed(
                "line",
                format!("expected {EOT} after attribute terms, found {other:?}"),
            ))
        }
    }
    match pieces.get(idx) {
        Some(Piece::Marker(m, _)) if *m == SEP => idx += 1,
        other => {
            return Err(Error::malformed(
                "line",
                format!("expected {SEP} after {EOT}, found {other:?}"),
            ))
        }
    }

    let response = match pieces.get(idx) {
        Some(Piece::Text(t)) => {
            idx += 1;
            t.clone()
        }
        other => {
            return Err(Error::malformed(
                "line",
                format!("expected response text after {SEP}, found {other:?}"),
            ))
        }
    };
    match pieces.get(idx) {
        Some(Piece::Marker(m, _)) if *m == EOS => idx += 1,
        other => {
            return Err(Error::malformed(
                "line",
                format!("expected final {EOS}, found {other:?}"),
            ))
        }
    }
    if idx != pieces.len() {
        return Err(Error::malformed("line", "trailing content after final [eos]"));
    }
    if context.is_empty() {
        return Err(Error::malformed("line", "context has no utterances"));
    }

    Ok(TrainingInstance {
        context,
        meta: MetaContext { query_flags, attribute_terms },
        response,
        conversation_id: String::new(),
        window_start: 0,
    })
}

/// Assemble every window of every conversation, in (conversation order,
/// window order). Conversations shorter than ctx_len + 1 contribute none.
pub fn build_instances(
    corpus: &[Conversation],
    mode: Mode,
    miners: &Miners<'_>,
    ctx_len: usize,
) -> Result<Vec<TrainingInstance>> {
    let mut out = Vec::new();
    for conv in corpus {
        for (context, response, start) in window_with_len(conv, ctx_len) {
            out.push(attach_meta(context, response, &conv.id, start, mode, miners)?);
        }
    }
    Ok(out)
}
