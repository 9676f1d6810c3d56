use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusDoc, Source};
use crate::error::{Error, Result};
use crate::tokenize::{CANONICAL_RESIDUES, SEQ_MARKER};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectMode {
    Replace,
    #[default]
    Append,
}

/// Exact-match map from protein or gene names to residue strings.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntityLexicon {
    entries: BTreeMap<String, String>,
    /// Surfaces sorted longest first for leftmost-longest matching.
    order: Vec<String>,
}

impl EntityLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: &str, sequence: &str) -> Result<()> {
        let b = surface.as_bytes();
        if b.is_empty() || !b[0].is_ascii_alphanumeric() || !b[b.len() - 1].is_ascii_alphanumeric() {
            return Err(Error::Invalid(format!(
                "lexicon surface `{surface}` must start and end alphanumeric"
            )));
        }
        if surface.contains(['\t', '\n']) {
            return Err(Error::Invalid(format!(
                "lexicon surface `{surface}` contains a tab or newline"
            )));
        }
        if sequence.is_empty() || !sequence.chars().all(|c| CANONICAL_RESIDUES.contains(c)) {
            return Err(Error::Invalid(format!(
                "sequence for `{surface}` is not a canonical residue string"
            )));
        }
        if self.entries.insert(surface.to_string(), sequence.to_string()).is_none() {
            self.order.push(surface.to_string());
            self.order.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        }
        Ok(())
    }

    pub fn get(&self, surface: &str) -> Option<&str> {
        self.entries.get(surface).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Parses `surface<TAB>sequence` lines; blank lines and `#` comments are
    /// ignored.
    pub fn parse_tsv(src: &str, origin: &Path) -> Result<Self> {
        let mut lex = Self::new();
        for (n, line) in src.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |detail: String| Error::Parse {
                path: origin.to_path_buf(),
                detail: format!("line {}: {detail}", n + 1),
            };
            let (surface, seq) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `surface<TAB>sequence`".into()))?;
            lex.insert(surface, seq).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&src, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body: String = self.iter().map(|(s, q)| format!("{s}\t{q}\n")).collect();
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    /// Longest surface matching at `pos` that ends on a word boundary.
    fn match_at(&self, text: &str, pos: usize) -> Option<&str> {
        let b = text.as_bytes();
        self.order
            .iter()
            .map(String::as_str)
            .find(|s| text[pos..].starts_with(s) && b.get(pos + s.len()).is_none_or(|c| !c.is_ascii_alphanumeric()))
    }
}

/// Marks lexicon hits in a document with `<seq>` followed by the residue
/// string. In append mode the marker goes after the name (`"ubiquitin
/// <seq>MQ..."`), in replace mode it takes the name's place. Text already
/// following a marker is never matched, and a name already followed by a
/// marker is left alone, so append mode is idempotent.
///
/// Accepts pubmed documents (and already-injected ones); the result is tagged
/// `seq_injected` when at least one marker was added.
pub fn inject_sequences(doc: &CorpusDoc, lex: &EntityLexicon, mode: InjectMode) -> Result<CorpusDoc> {
    if !matches!(doc.source, Source::Pubmed | Source::SeqInjected) {
        return Err(Error::Invalid(format!(
            "sequence injection applies to pubmed documents, got {}",
            doc.source
        )));
    }
    let text = doc.text.as_str();
    let b = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut hits = 0;
    let mut pos = 0;
    while pos < b.len() {
        if text[pos..].starts_with(SEQ_MARKER) {
            let mut end = pos + SEQ_MARKER.len();
            while end < b.len() && b[end].is_ascii_alphanumeric() {
                end += 1;
            }
            out.push_str(&text[pos..end]);
            pos = end;
            continue;
        }
        let word_start = pos == 0 || !b[pos - 1].is_ascii_alphanumeric();
        if let Some(surface) = word_start.then(|| lex.match_at(text, pos)).flatten() {
            let end = pos + surface.len();
            let seq = lex.get(surface).expect("matched surface is present");
            match mode {
                InjectMode::Append => {
                    out.push_str(surface);
                    if !text[end..].starts_with(&format!(" {SEQ_MARKER}")) {
                        out.push(' ');
                        out.push_str(SEQ_MARKER);
                        out.push_str(seq);
                        hits += 1;
                    }
                }
                InjectMode::Replace => {
                    out.push_str(SEQ_MARKER);
                    out.push_str(seq);
                    hits += 1;
                }
            }
            pos = end;
            continue;
        }
        let ch = text[pos..].chars().next().expect("char boundary");
        out.push(ch);
        pos += ch.len_utf8();
    }
    if hits == 0 {
        return Ok(doc.clone());
    }
    Ok(CorpusDoc::new(doc.id, Source::SeqInjected, out))
}
