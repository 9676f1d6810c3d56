//! Pretraining corpus pipeline: source-tagged documents, sentence
//! segmentation, `<seq>` injection from an entity lexicon, window packing
//! without padding, mixture sampling and corpus statistics.

mod inject;
mod io;
mod mixture;
mod pack;
mod stats;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use inject::{inject_sequences, EntityLexicon, InjectMode};
pub use io::{load_corpus_dir, pair_document, read_packs, write_packs, Manifest, MANIFEST_FILE};
pub use mixture::{sample_mixture, sample_mixture_draws, stratified_counts, Draw, MixtureSpec, SamplingMode};
pub use pack::{pack_corpus, PackOutput, PackedSequence, SkippedDoc, Span, DEFAULT_MAX_SEQ_LEN};
pub use stats::{corpus_stats, CorpusStats, SourceStats};
pub use synth::{synthetic_corpus, synthetic_lexicon, SynthCorpusConfig};

/// Where a document came from; one variant per corpus mixture row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Textbook,
    Pubmed,
    SeqInjected,
    ProteinPair,
    Math,
    Code,
    Science,
}

impl Source {
    pub const ALL: [Source; 7] = [
        Source::Textbook,
        Source::Pubmed,
        Source::SeqInjected,
        Source::ProteinPair,
        Source::Math,
        Source::Code,
        Source::Science,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Textbook => "textbook",
            Source::Pubmed => "pubmed",
            Source::SeqInjected => "seq_injected",
            Source::ProteinPair => "protein_pair",
            Source::Math => "math",
            Source::Code => "code",
            Source::Science => "science",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown corpus source `{s}`")))
    }
}

/// A source-tagged document. `sentences` holds the exclusive end offset (in
/// bytes) of every sentence; consecutive offsets partition the text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: u64,
    pub source: Source,
    pub text: String,
    pub sentences: Vec<usize>,
}

impl CorpusDoc {
    pub fn new(id: u64, source: Source, text: impl Into<String>) -> Self {
        let text = text.into();
        let sentences = sentence_boundaries(&text);
        Self {
            id,
            source,
            text,
            sentences,
        }
    }

    /// `(start, end)` byte ranges of the sentences in order.
    pub fn sentence_spans(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let starts = std::iter::once(0).chain(self.sentences.iter().copied());
        starts.zip(self.sentences.iter().copied())
    }

    pub fn is_boundary(&self, offset: usize) -> bool {
        offset == 0 || self.sentences.binary_search(&offset).is_ok()
    }
}

/// Sentence end offsets. A sentence ends right after `.`, `!` or `?` when
/// whitespace follows, and after a run of two or more newlines. The final
/// offset is always `text.len()` for non-empty text.
///
/// Cuts land before the whitespace so that the next sentence keeps its
/// leading space, which makes sentence-wise tokenization concatenate to the
/// tokenization of the whole text.
pub fn sentence_boundaries(text: &str) -> Vec<usize> {
    let b = text.as_bytes();
    let mut out: Vec<usize> = Vec::new();
    let push = |at: usize, out: &mut Vec<usize>| {
        if at > out.last().copied().unwrap_or(0) {
            out.push(at);
        }
    };
    let mut i = 0;
    while i < b.len() {
        if matches!(b[i], b'.' | b'!' | b'?') && b.get(i + 1).is_some_and(|c| c.is_ascii_whitespace()) {
            push(i + 1, &mut out);
        } else if b[i] == b'\n' && b.get(i + 1) == Some(&b'\n') {
            let mut j = i;
            while j < b.len() && b[j] == b'\n' {
                j += 1;
            }
            push(j, &mut out);
            i = j;
            continue;
        }
        i += 1;
    }
    push(b.len(), &mut out);
    out
}
