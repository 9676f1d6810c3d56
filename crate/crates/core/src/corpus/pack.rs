use serde::{Deserialize, Serialize};

use super::{CorpusDoc, Source};
use crate::error::{Error, Result};
use crate::tokenize::TextVocab;

pub const DEFAULT_MAX_SEQ_LEN: usize = 4096;

/// Byte range `[start, end)` of one document inside a pack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub doc: u64,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub tokens: Vec<usize>,
    pub spans: Vec<Span>,
    pub source: Source,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedDoc {
    pub doc: u64,
    pub source: Source,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PackOutput {
    pub packs: Vec<PackedSequence>,
    pub skipped: Vec<SkippedDoc>,
    /// Documents that lost trailing sentences to the window.
    pub truncated: usize,
}

/// Packs documents into windows of at most `max_seq_len` tokens.
///
/// A document longer than the window keeps its longest sentence prefix that
/// fits and drops the rest. Documents are then placed greedily into the first
/// open pack of the same source with room for them, in input order. A
/// document containing a sentence longer than the window is skipped and
/// logged.
pub fn pack_corpus<I>(docs: I, vocab: &TextVocab, max_seq_len: usize) -> Result<PackOutput>
where
    I: IntoIterator<Item = CorpusDoc>,
{
    if max_seq_len == 0 {
        return Err(Error::Config("max_seq_len must be >= 1".into()));
    }
    let mut out = PackOutput::default();
    let mut open: Vec<(Source, Vec<usize>)> = Vec::new();
    for doc in docs {
        let mut tokens = Vec::new();
        let mut end = 0;
        let mut cut = false;
        let mut overlong = None;
        for (s, e) in doc.sentence_spans() {
            let ids = vocab.encode(&doc.text[s..e]);
            if ids.len() > max_seq_len {
                overlong = Some(ids.len());
                break;
            }
            if !cut && tokens.len() + ids.len() <= max_seq_len {
                tokens.extend(ids);
                end = e;
            } else {
                cut = true;
            }
        }
        if let Some(n) = overlong {
            let reason = format!("sentence of {n} tokens exceeds window {max_seq_len}");
            log::warn!("skipping doc {} ({}): {reason}", doc.id, doc.source);
            out.skipped.push(SkippedDoc {
                doc: doc.id,
                source: doc.source,
                reason,
            });
            continue;
        }
        if tokens.is_empty() {
            out.skipped.push(SkippedDoc {
                doc: doc.id,
                source: doc.source,
                reason: "empty document".into(),
            });
            continue;
        }
        if cut {
            out.truncated += 1;
        }
        let span = Span {
            doc: doc.id,
            start: 0,
            end,
        };
        let slot = match open.iter().position(|(s, _)| *s == doc.source) {
            Some(i) => i,
            None => {
                open.push((doc.source, Vec::new()));
                open.len() - 1
            }
        };
        let candidates = &mut open[slot].1;
        let fit = candidates
            .iter()
            .copied()
            .find(|&p| out.packs[p].tokens.len() + tokens.len() <= max_seq_len);
        let target = match fit {
            Some(p) => p,
            None => {
                out.packs.push(PackedSequence {
                    tokens: Vec::new(),
                    spans: Vec::new(),
                    source: doc.source,
                });
                candidates.push(out.packs.len() - 1);
                out.packs.len() - 1
            }
        };
        let pack = &mut out.packs[target];
        pack.tokens.extend(tokens);
        pack.spans.push(span);
        if pack.tokens.len() == max_seq_len {
            candidates.retain(|&p| p != target);
        }
    }
    Ok(out)
}
