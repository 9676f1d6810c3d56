use std::path::Path;

use crate::error::{Error, Result};

/// On-disk vocabulary: `#`-prefixed header lines, then one token per line
/// where the zero-based line index (after the header) is the token id.
///
/// ```text
/// # bb-vocab-1
/// # special pad <pad>
/// <pad>
/// protein
/// ```
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabFile {
    /// `(role, token)` pairs declared in the header.
    pub specials: Vec<(String, String)>,
    pub tokens: Vec<String>,
}

const MAGIC: &str = "# bb-vocab-1";

impl VocabFile {
    pub fn render(&self) -> String {
        let mut out = String::from(MAGIC);
        out.push('\n');
        for (role, token) in &self.specials {
            out.push_str(&format!("# special {role} {token}\n"));
        }
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn parse(src: &str, origin: &str) -> Result<Self> {
        let perr = |detail: String| Error::Parse {
            path: origin.into(),
            detail,
        };
        let mut lines = src.lines().peekable();
        match lines.next() {
            Some(l) if l.trim_end() == MAGIC => {}
            _ => return Err(perr(format!("missing '{MAGIC}' header"))),
        }
        let mut specials = Vec::new();
        while let Some(line) = lines.peek() {
            let Some(rest) = line.strip_prefix('#') else { break };
            let parts: Vec<&str> = rest.split_whitespace().collect();
            match parts.as_slice() {
                ["special", role, token] => specials.push((role.to_string(), token.to_string())),
                [] => {}
                _ => return Err(perr(format!("bad header line '{line}'"))),
            }
            lines.next();
        }
        let tokens: Vec<String> = lines.map(str::to_string).collect();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(perr(format!("empty token at id {i}")));
            }
        }
        for (role, token) in &specials {
            if !tokens.contains(token) {
                return Err(perr(format!("special {role} '{token}' not in token list")));
            }
        }
        Ok(Self { specials, tokens })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&src, &path.display().to_string())
    }

    pub fn special(&self, role: &str) -> Option<&str> {
        self.specials.iter().find(|(r, _)| r == role).map(|(_, t)| t.as_str())
    }
}
