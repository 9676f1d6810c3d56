//! Random stand-in documents for every source, used to exercise the packing
//! and mixture pipeline at desk scale.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{pair_document, CorpusDoc, EntityLexicon, Source};
use crate::error::{Error, Result};
use crate::tokenize::CANONICAL_RESIDUES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCorpusConfig {
    pub docs: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Fraction of documents stretched to `long_sentences` sentences so that
    /// they overflow typical windows.
    pub long_fraction: f64,
    pub long_sentences: usize,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            docs: 1000,
            min_sentences: 1,
            max_sentences: 12,
            min_words: 3,
            max_words: 30,
            long_fraction: 0.05,
            long_sentences: 400,
        }
    }
}

const NAMES: &[&str] = &[
    "ubiquitin",
    "insulin",
    "hemoglobin",
    "myoglobin",
    "lysozyme",
    "keratin",
    "collagen",
    "actin",
    "tubulin",
    "albumin",
    "ferritin",
    "trypsin",
    "pepsin",
    "calmodulin",
    "thioredoxin",
    "p53",
    "BRCA1",
    "EGFR",
    "TNF",
    "MYC",
];

const BIO: &[&str] = &[
    "protein",
    "binds",
    "the",
    "receptor",
    "cell",
    "membrane",
    "expression",
    "is",
    "regulated",
    "by",
    "kinase",
    "activity",
    "in",
    "human",
    "tissue",
    "domain",
    "mutation",
    "and",
    "structure",
    "of",
    "enzyme",
    "signaling",
    "pathway",
    "nuclear",
    "with",
    "a",
    "complex",
];
const MATH: &[&str] = &[
    "let", "number", "sum", "product", "equals", "value", "solve", "the", "of", "2", "3", "7", "+", "=",
];
const CODE: &[&str] = &[
    "def", "return", "if", "else", "int", "list", "print", "true", "false", "fn", "let", "(", ")",
];
const SCIENCE: &[&str] = &[
    "energy", "force", "mass", "light", "heat", "water", "chemical", "reaction", "atom", "the", "of",
];

/// Lexicon over the built-in protein names with random sequences of 20 to
/// 60 residues.
pub fn synthetic_lexicon<R: Rng + ?Sized>(rng: &mut R) -> EntityLexicon {
    let residues: Vec<char> = CANONICAL_RESIDUES.chars().collect();
    let mut lex = EntityLexicon::new();
    for name in NAMES {
        let len = rng.gen_range(20..=60);
        let seq: String = (0..len).map(|_| *residues.choose(rng).expect("non-empty")).collect();
        lex.insert(name, &seq).expect("names and residues are valid");
    }
    lex
}

fn sentence<R: Rng + ?Sized>(words: &[&str], n: usize, rng: &mut R, names: bool) -> String {
    let mut s = String::new();
    for i in 0..n {
        let w = if names && rng.gen_bool(0.15) {
            NAMES.choose(rng)
        } else {
            words.choose(rng)
        };
        if i > 0 {
            s.push(' ');
        }
        s.push_str(w.expect("non-empty pool"));
    }
    s.push(*['.', '.', '.', '?', '!'].choose(rng).expect("non-empty"));
    s
}

/// Random documents with sources drawn uniformly. Sentences are joined by a
/// space or, now and then, a paragraph break.
pub fn synthetic_corpus<R: Rng + ?Sized>(
    cfg: &SynthCorpusConfig,
    lexicon: &EntityLexicon,
    rng: &mut R,
) -> Result<Vec<CorpusDoc>> {
    if cfg.min_sentences == 0
        || cfg.min_sentences > cfg.max_sentences
        || cfg.min_words == 0
        || cfg.min_words > cfg.max_words
    {
        return Err(Error::Config(
            "synthetic corpus ranges must be non-empty and >= 1".into(),
        ));
    }
    let pairs: Vec<(&str, &str)> = lexicon.iter().collect();
    let mut docs = Vec::with_capacity(cfg.docs);
    for id in 0..cfg.docs as u64 {
        let source = *Source::ALL.choose(rng).expect("non-empty");
        if source == Source::ProteinPair && !pairs.is_empty() {
            let (name, seq) = pairs.choose(rng).expect("non-empty");
            let desc = format!(
                "{} {}",
                name,
                sentence(BIO, rng.gen_range(cfg.min_words..=cfg.max_words), rng, false)
            );
            docs.push(pair_document(id, &desc, seq));
            continue;
        }
        let pool = match source {
            Source::Math => MATH,
            Source::Code => CODE,
            Source::Science => SCIENCE,
            _ => BIO,
        };
        let n = if rng.gen_bool(cfg.long_fraction) {
            cfg.long_sentences
        } else {
            rng.gen_range(cfg.min_sentences..=cfg.max_sentences)
        };
        let mut text = String::new();
        for i in 0..n {
            if i > 0 {
                text.push_str(if rng.gen_bool(0.1) { "\n\n" } else { " " });
            }
            let words = rng.gen_range(cfg.min_words..=cfg.max_words);
            text.push_str(&sentence(
                pool,
                words,
                rng,
                matches!(source, Source::Pubmed | Source::SeqInjected),
            ));
        }
        let mut doc = CorpusDoc::new(id, source, text);
        if source == Source::SeqInjected {
            doc = super::inject_sequences(&doc, lexicon, super::InjectMode::Append)?;
        }
        docs.push(doc);
    }
    Ok(docs)
}
