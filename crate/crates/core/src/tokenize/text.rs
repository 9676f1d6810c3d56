use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab_file::VocabFile;
use crate::error::{Error, Result};

/// Literal marker that introduces an injected sequence in corpus text.
pub const SEQ_MARKER: &str = "<seq>";

/// Leading-space marker used in the file form of lexicon pieces.
const SPACE_MARK: char = '▁';

const ROLES: [&str; 7] = ["pad", "cls", "bos", "eos", "prot_open", "prot_close", "seq"];
const DEFAULT_SPECIALS: [&str; 7] = [
    "<pad>",
    "<cls>",
    "<bos>",
    "<eos>",
    "<protein>",
    "</protein>",
    SEQ_MARKER,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextSpecials {
    pub pad: usize,
    pub cls: usize,
    pub bos: usize,
    pub eos: usize,
    pub prot_open: usize,
    pub prot_close: usize,
    pub seq: usize,
}

impl TextSpecials {
    fn as_array(&self) -> [usize; 7] {
        [
            self.pad,
            self.cls,
            self.bos,
            self.eos,
            self.prot_open,
            self.prot_close,
            self.seq,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Kind {
    Special,
    Byte(u8),
    /// Surface text, with a real leading space where applicable.
    Piece(String),
}

/// Word-level vocabulary over a fixed lexicon with byte fallback.
///
/// Text is cut into pieces: an optional single space followed by an ASCII
/// alphanumeric run, or any other single character. A piece found in the
/// lexicon becomes one id; otherwise its UTF-8 bytes become byte tokens. The
/// literal `<seq>` maps to the SEQ special; no other special is ever produced
/// by [`TextVocab::encode`].
#[derive(Clone, Debug)]
pub struct TextVocab {
    tokens: Vec<String>,
    kinds: Vec<Kind>,
    pieces: HashMap<String, usize>,
    bytes: [usize; 256],
    specials: TextSpecials,
}

impl PartialEq for TextVocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.specials == other.specials
    }
}

impl TextVocab {
    /// Specials, then 256 byte tokens, then each word in bare and
    /// space-prefixed form. Duplicate words are ignored.
    pub fn new<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut tokens: Vec<String> = DEFAULT_SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend((0..=255u8).map(|b| format!("<0x{b:02X}>")));
        let mut seen = std::collections::HashSet::new();
        for w in words {
            let w = w.as_ref();
            let single = w.chars().count() == 1 && !w.starts_with(char::is_whitespace);
            if !(is_word(w) || single) || w.starts_with(SPACE_MARK) {
                return Err(Error::Invalid(format!("bad lexicon word {w:?}")));
            }
            if !seen.insert(w.to_string()) {
                continue;
            }
            tokens.push(w.to_string());
            if is_word(w) {
                tokens.push(format!("{SPACE_MARK}{w}"));
            }
        }
        let specials = ROLES
            .iter()
            .zip(DEFAULT_SPECIALS)
            .map(|(r, t)| (r.to_string(), t.to_string()))
            .collect();
        Self::from_file(&VocabFile { specials, tokens })
    }

    pub fn default_vocab() -> Self {
        Self::new(&super::lexicon::default_lexicon()).expect("built-in lexicon is valid")
    }

    pub fn from_file(file: &VocabFile) -> Result<Self> {
        let mut ids = [0usize; 7];
        for (k, role) in ROLES.iter().enumerate() {
            let token = file
                .special(role)
                .ok_or_else(|| Error::Config(format!("vocabulary lacks special '{role}'")))?;
            ids[k] = file.tokens.iter().position(|t| t == token).expect("validated by parse");
        }
        let specials = TextSpecials {
            pad: ids[0],
            cls: ids[1],
            bos: ids[2],
            eos: ids[3],
            prot_open: ids[4],
            prot_close: ids[5],
            seq: ids[6],
        };
        let mut uniq = ids.to_vec();
        uniq.sort();
        uniq.dedup();
        if uniq.len() != ids.len() {
            return Err(Error::Config("special token ids must be distinct".into()));
        }

        let mut kinds = Vec::with_capacity(file.tokens.len());
        let mut pieces = HashMap::new();
        let mut bytes = [usize::MAX; 256];
        for (id, tok) in file.tokens.iter().enumerate() {
            let kind = if ids.contains(&id) {
                Kind::Special
            } else if let Some(b) = parse_byte_token(tok) {
                bytes[b as usize] = id;
                Kind::Byte(b)
            } else {
                let surface = match tok.strip_prefix(SPACE_MARK) {
                    Some(rest) => format!(" {rest}"),
                    None => tok.clone(),
                };
                if pieces.insert(surface.clone(), id).is_some() {
                    return Err(Error::Config(format!("duplicate vocabulary token {tok:?}")));
                }
                Kind::Piece(surface)
            };
            kinds.push(kind);
        }
        if let Some(b) = bytes.iter().position(|&id| id == usize::MAX) {
            return Err(Error::Config(format!("vocabulary lacks byte token <0x{b:02X}>")));
        }
        Ok(Self {
            tokens: file.tokens.clone(),
            kinds,
            pieces,
            bytes,
            specials,
        })
    }

    pub fn to_file(&self) -> VocabFile {
        let all = self.specials.as_array();
        VocabFile {
            specials: ROLES
                .iter()
                .zip(all)
                .map(|(r, id)| (r.to_string(), self.tokens[id].clone()))
                .collect(),
            tokens: self.tokens.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_file().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(&VocabFile::load(path)?)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn specials(&self) -> TextSpecials {
        self.specials
    }

    pub fn is_special(&self, id: usize) -> bool {
        matches!(self.kinds.get(id), Some(Kind::Special))
    }

    pub fn is_byte(&self, id: usize) -> bool {
        matches!(self.kinds.get(id), Some(Kind::Byte(_)))
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Id of a lexicon piece given its surface text (e.g. `" protein"`).
    pub fn piece_id(&self, surface: &str) -> Option<usize> {
        self.pieces.get(surface).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        let b = text.as_bytes();
        let mut pos = 0;
        while pos < b.len() {
            if text[pos..].starts_with(SEQ_MARKER) {
                out.push(self.specials.seq);
                pos += SEQ_MARKER.len();
                continue;
            }
            let end = piece_end(b, pos, text);
            let piece = &text[pos..end];
            if let Some(&id) = self.pieces.get(piece) {
                out.push(id);
            } else if piece.len() > 1 && piece.starts_with(' ') && b[pos + 1].is_ascii_alphanumeric() {
                out.push(self.bytes[b' ' as usize]);
                match self.pieces.get(&piece[1..]) {
                    Some(&id) => out.push(id),
                    None => out.extend(piece[1..].bytes().map(|x| self.bytes[x as usize])),
                }
            } else {
                out.extend(piece.bytes().map(|x| self.bytes[x as usize]));
            }
            pos = end;
        }
        out
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        self.encode(text).len()
    }

    /// Inverse of [`TextVocab::encode`]. Specials other than SEQ render as
    /// their token text; invalid UTF-8 from stray byte tokens is replaced.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut buf: Vec<u8> = Vec::new();
        for &id in ids {
            match self.kinds.get(id) {
                Some(Kind::Byte(x)) => buf.push(*x),
                Some(Kind::Piece(s)) => buf.extend_from_slice(s.as_bytes()),
                Some(Kind::Special) => buf.extend_from_slice(self.tokens[id].as_bytes()),
                None => return Err(Error::Invalid(format!("text token id {id} out of range"))),
            }
        }
        Ok(String::from_utf8_lossy(&buf).into_owned())
    }
}

fn is_word(w: &str) -> bool {
    !w.is_empty() && w.bytes().all(|c| c.is_ascii_alphanumeric())
}

fn parse_byte_token(tok: &str) -> Option<u8> {
    let hex = tok.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

/// End offset of the piece starting at `pos`.
fn piece_end(b: &[u8], pos: usize, text: &str) -> usize {
    let run = |mut i: usize| {
        while i < b.len() && b[i].is_ascii_alphanumeric() {
            i += 1;
        }
        i
    };
    if b[pos] == b' ' && pos + 1 < b.len() && b[pos + 1].is_ascii_alphanumeric() {
        return run(pos + 1);
    }
    if b[pos].is_ascii_alphanumeric() {
        return run(pos);
    }
    let ch = text[pos..].chars().next().expect("pos is on a char boundary");
    pos + ch.len_utf8()
}
