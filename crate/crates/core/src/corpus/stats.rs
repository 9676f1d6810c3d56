use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PackedSequence, Source};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub packs: usize,
    pub tokens: usize,
    /// Share of all tokens.
    pub token_ratio: f64,
    /// Share of all packs.
    pub pack_ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub packs: usize,
    pub total_tokens: usize,
    pub per_source: BTreeMap<Source, SourceStats>,
    /// Pack count keyed by the smallest power of two >= the pack length.
    pub length_histogram: BTreeMap<usize, usize>,
    pub padding_tokens: usize,
}

/// Counts tokens, packs and `pad_id` occurrences per source.
pub fn corpus_stats(packs: &[PackedSequence], pad_id: usize) -> CorpusStats {
    let mut st = CorpusStats {
        packs: packs.len(),
        ..CorpusStats::default()
    };
    for p in packs {
        let entry = st.per_source.entry(p.source).or_default();
        entry.packs += 1;
        entry.tokens += p.tokens.len();
        st.total_tokens += p.tokens.len();
        st.padding_tokens += p.tokens.iter().filter(|&&t| t == pad_id).count();
        *st.length_histogram
            .entry(p.tokens.len().next_power_of_two())
            .or_default() += 1;
    }
    for s in st.per_source.values_mut() {
        if st.total_tokens > 0 {
            s.token_ratio = s.tokens as f64 / st.total_tokens as f64;
        }
        s.pack_ratio = s.packs as f64 / st.packs as f64;
    }
    st
}
