use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use super::{CorpusDoc, PackedSequence, Source};
use crate::error::{Error, Result};
use crate::tokenize::{parse_fasta, SEQ_MARKER};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Relative file path → source tag.
pub type Manifest = BTreeMap<String, Source>;

#[derive(Deserialize)]
struct JsonlDoc {
    text: String,
}

/// Text form of a protein-description pair in the pretraining stream.
pub fn pair_document(id: u64, description: &str, sequence: &str) -> CorpusDoc {
    CorpusDoc::new(
        id,
        Source::ProteinPair,
        format!("Description: {} Sequence: {SEQ_MARKER}{sequence}", description.trim()),
    )
}

/// Reads every file listed in `dir/manifest.json`, in path order.
///
/// `.jsonl` files hold one `{"text": ...}` document per line; files tagged
/// `protein_pair` are FASTA whose header descriptions pair with the
/// sequences; anything else is a single UTF-8 document. Ids are assigned in
/// reading order from 0.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<CorpusDoc>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        detail: e.to_string(),
    })?;
    let mut docs = Vec::new();
    for (rel, source) in manifest {
        let path = dir.join(&rel);
        let body = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let next_id = |docs: &Vec<CorpusDoc>| docs.len() as u64;
        if source == Source::ProteinPair {
            for rec in parse_fasta(&body, &path.to_string_lossy())? {
                let desc = if rec.description.is_empty() {
                    rec.id.clone()
                } else {
                    rec.description.clone()
                };
                docs.push(pair_document(next_id(&docs), &desc, &rec.sequence));
            }
        } else if rel.ends_with(".jsonl") {
            for (n, line) in body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let d: JsonlDoc = serde_json::from_str(line).map_err(|e| Error::Parse {
                    path: path.clone(),
                    detail: format!("line {}: {e}", n + 1),
                })?;
                docs.push(CorpusDoc::new(next_id(&docs), source, d.text));
            }
        } else {
            docs.push(CorpusDoc::new(next_id(&docs), source, body));
        }
    }
    Ok(docs)
}

/// Writes one JSON object per pack.
pub fn write_packs(path: &Path, packs: &[PackedSequence]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in packs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_packs(path: &Path) -> Result<Vec<PackedSequence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut packs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        packs.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(packs)
}
