use std::path::Path;

use super::vocab_file::VocabFile;
use crate::error::{Error, Result};

pub const CANONICAL_RESIDUES: &str = "ACDEFGHIKLMNPQRSTVWY";

const PAD: usize = 0;
const BOS: usize = 1;
const EOS: usize = 2;
const FIRST_RESIDUE: usize = 3;
const UNKNOWN: usize = FIRST_RESIDUE + 20;

/// Fixed residue vocabulary: specials, the 20 canonical residues, then `X`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProteinVocab;

impl ProteinVocab {
    pub fn new() -> Self {
        Self
    }

    pub fn size(&self) -> usize {
        UNKNOWN + 1
    }

    pub fn pad(&self) -> usize {
        PAD
    }
    pub fn bos(&self) -> usize {
        BOS
    }
    pub fn eos(&self) -> usize {
        EOS
    }
    pub fn unknown(&self) -> usize {
        UNKNOWN
    }

    pub fn residue_id(&self, c: char) -> usize {
        let c = c.to_ascii_uppercase();
        CANONICAL_RESIDUES.find(c).map(|i| FIRST_RESIDUE + i).unwrap_or(UNKNOWN)
    }

    /// One id per character; anything non-canonical (after upper-casing) is `X`.
    pub fn encode(&self, seq: &str) -> Result<Vec<usize>> {
        if seq.is_empty() {
            return Err(Error::Invalid("cannot encode an empty protein sequence".into()));
        }
        Ok(seq.chars().map(|c| self.residue_id(c)).collect())
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        ids.iter()
            .map(|&id| match id {
                PAD => Ok('_'),
                BOS => Ok('^'),
                EOS => Ok('$'),
                UNKNOWN => Ok('X'),
                i if (FIRST_RESIDUE..UNKNOWN).contains(&i) => {
                    Ok(CANONICAL_RESIDUES.as_bytes()[i - FIRST_RESIDUE] as char)
                }
                _ => Err(Error::Invalid(format!("protein token id {id} out of range"))),
            })
            .collect()
    }

    pub fn to_file(&self) -> VocabFile {
        let mut tokens = vec!["<pad>".to_string(), "<bos>".into(), "<eos>".into()];
        tokens.extend(CANONICAL_RESIDUES.chars().map(String::from));
        tokens.push("X".into());
        VocabFile {
            specials: vec![
                ("pad".into(), "<pad>".into()),
                ("bos".into(), "<bos>".into()),
                ("eos".into(), "<eos>".into()),
            ],
            tokens,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_file().save(path)
    }

    /// Accepts only the canonical layout, since ids are baked into checkpoints.
    pub fn load(path: &Path) -> Result<Self> {
        let file = VocabFile::load(path)?;
        let vocab = Self::new();
        if file != vocab.to_file() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                detail: "protein vocabulary does not match the canonical layout".into(),
            });
        }
        Ok(vocab)
    }
}
