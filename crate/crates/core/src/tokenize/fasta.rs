use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FastaRecord {
    /// First whitespace-delimited word of the header.
    pub id: String,
    /// Remainder of the header line, trimmed.
    pub description: String,
    pub sequence: String,
}

/// Parses `>header` records; sequence lines are concatenated with internal
/// whitespace removed. Blank lines are ignored.
pub fn parse_fasta(src: &str, origin: &str) -> Result<Vec<FastaRecord>> {
    let mut records: Vec<FastaRecord> = Vec::new();
    for (lineno, line) in src.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if let Some(header) = line.strip_prefix('>') {
            let header = header.trim();
            let (id, description) = match header.split_once(char::is_whitespace) {
                Some((id, rest)) => (id.to_string(), rest.trim().to_string()),
                None => (header.to_string(), String::new()),
            };
            if id.is_empty() {
                return Err(Error::Parse {
                    path: origin.into(),
                    detail: format!("line {}: empty FASTA header", lineno + 1),
                });
            }
            records.push(FastaRecord {
                id,
                description,
                sequence: String::new(),
            });
        } else if !line.trim().is_empty() {
            let rec = records.last_mut().ok_or_else(|| Error::Parse {
                path: origin.into(),
                detail: format!("line {}: sequence data before the first header", lineno + 1),
            })?;
            rec.sequence.extend(line.chars().filter(|c| !c.is_whitespace()));
        }
    }
    if let Some(r) = records.iter().find(|r| r.sequence.is_empty()) {
        return Err(Error::Parse {
            path: origin.into(),
            detail: format!("record '{}' has no sequence", r.id),
        });
    }
    Ok(records)
}

pub fn read_fasta(path: &Path) -> Result<Vec<FastaRecord>> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fasta(&src, &path.display().to_string())
}
