//! Vocabularies for amino-acid sequences and text, plus a FASTA reader.

mod fasta;
mod lexicon;
mod protein;
mod text;
mod vocab_file;

pub use fasta::{parse_fasta, read_fasta, FastaRecord};
pub use lexicon::default_lexicon;
pub use protein::{ProteinVocab, CANONICAL_RESIDUES};
pub use text::{TextSpecials, TextVocab, SEQ_MARKER};
pub use vocab_file::VocabFile;
