//! Rule-based synthetic protein tasks. Every label or description is a
//! deterministic function of the generated sequence.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::CANONICAL_RESIDUES;

/// Residues counted as hydrophobic by the classification rules.
pub const HYDROPHOBIC: &str = "AILMFVW";

/// Residue classes used by the multi-class rule, in label order.
pub const RESIDUE_GROUPS: [(&str, &str); 4] = [
    ("hydrophobic", "AILMFVW"),
    ("polar", "CGNPQSTY"),
    ("positive", "HKR"),
    ("negative", "DE"),
];

const RESIDUE_NAMES: [(char, &str); 20] = [
    ('A', "alanine"),
    ('R', "arginine"),
    ('N', "asparagine"),
    ('D', "aspartate"),
    ('C', "cysteine"),
    ('Q', "glutamine"),
    ('E', "glutamate"),
    ('G', "glycine"),
    ('H', "histidine"),
    ('I', "isoleucine"),
    ('L', "leucine"),
    ('K', "lysine"),
    ('M', "methionine"),
    ('F', "phenylalanine"),
    ('P', "proline"),
    ('S', "serine"),
    ('T', "threonine"),
    ('W', "tryptophan"),
    ('Y', "tyrosine"),
    ('V', "valine"),
];

pub fn residue_name(code: char) -> Option<&'static str> {
    RESIDUE_NAMES.iter().find(|(c, _)| *c == code).map(|(_, n)| *n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    /// Sequence ↔ description of its two enriched residues.
    RetrievalPairs,
    /// Hydrophobic fraction above one half.
    BinaryCls,
    /// Residue class with the highest count.
    MultiCls,
    /// Hydrophobic fraction as a real target.
    Regression,
}

impl TaskFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskFamily::RetrievalPairs => "retrieval_pairs",
            TaskFamily::BinaryCls => "binary_cls",
            TaskFamily::MultiCls => "multi_cls",
            TaskFamily::Regression => "regression",
        }
    }

    pub fn num_classes(self) -> Option<usize> {
        match self {
            TaskFamily::BinaryCls => Some(2),
            TaskFamily::MultiCls => Some(RESIDUE_GROUPS.len()),
            _ => None,
        }
    }

    /// Question text placed after the protein in task prompts.
    pub fn question(self) -> &'static str {
        match self {
            TaskFamily::RetrievalPairs => "Describe the protein.",
            TaskFamily::BinaryCls => "Is this protein hydrophobic?",
            TaskFamily::MultiCls => "Which class of residues is most common?",
            TaskFamily::Regression => "What fraction of residues is hydrophobic?",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub family: TaskFamily,
    #[serde(default)]
    pub seed: u64,
    pub train: usize,
    #[serde(default)]
    pub val: usize,
    pub test: usize,
    #[serde(default = "default_min_len")]
    pub min_len: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_min_len() -> usize {
    20
}
fn default_max_len() -> usize {
    40
}

impl SyntheticTaskSpec {
    pub fn new(family: TaskFamily, seed: u64, train: usize, val: usize, test: usize) -> Self {
        Self {
            family,
            seed,
            train,
            val,
            test,
            min_len: default_min_len(),
            max_len: default_max_len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_len < 10 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "sequence lengths need 10 <= min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub sequence: String,
    /// Description (retrieval) or answer word (classification).
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub family: TaskFamily,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn num_classes(&self) -> Option<usize> {
        self.family.num_classes()
    }

    pub fn question(&self) -> &'static str {
        self.family.question()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }
}

/// Text for a protein enriched in residues `a` and `b`; names appear in
/// alphabetical order.
pub fn enrichment_description(a: char, b: char) -> Result<String> {
    let mut names = [
        residue_name(a).ok_or_else(|| Error::Invalid(format!("unknown residue {a}")))?,
        residue_name(b).ok_or_else(|| Error::Invalid(format!("unknown residue {b}")))?,
    ];
    names.sort_unstable();
    Ok(format!("A protein enriched in {} and {} residues.", names[0], names[1]))
}

/// All 190 unordered residue pairs.
pub fn residue_pairs() -> Vec<(char, char)> {
    let r: Vec<char> = CANONICAL_RESIDUES.chars().collect();
    let mut out = Vec::new();
    for i in 0..r.len() {
        for j in i + 1..r.len() {
            out.push((r[i], r[j]));
        }
    }
    out
}

pub fn hydrophobic_fraction(seq: &str) -> f64 {
    seq.chars().filter(|c| HYDROPHOBIC.contains(*c)).count() as f64 / seq.len() as f64
}

fn counts(seq: &str) -> [usize; 20] {
    let mut c = [0; 20];
    for ch in seq.chars() {
        if let Some(i) = CANONICAL_RESIDUES.find(ch) {
            c[i] += 1;
        }
    }
    c
}

/// The two most frequent residues when both strictly outnumber every other
/// residue.
pub fn enriched_pair(seq: &str) -> Option<(char, char)> {
    let c = counts(seq);
    let mut idx: Vec<usize> = (0..20).collect();
    idx.sort_by(|&a, &b| c[b].cmp(&c[a]).then(a.cmp(&b)));
    let res: Vec<char> = CANONICAL_RESIDUES.chars().collect();
    (c[idx[1]] > c[idx[2]]).then(|| (res[idx[0]], res[idx[1]]))
}

/// Index into [`RESIDUE_GROUPS`] of the class with the strictly highest count.
pub fn dominant_group(seq: &str) -> Option<usize> {
    let totals: Vec<usize> = RESIDUE_GROUPS
        .iter()
        .map(|(_, members)| seq.chars().filter(|c| members.contains(*c)).count())
        .collect();
    let best = (0..totals.len()).max_by_key(|&i| (totals[i], std::cmp::Reverse(i)))?;
    (totals.iter().filter(|&&t| t == totals[best]).count() == 1).then_some(best)
}

fn pick(pool: &str, rng: &mut ChaCha8Rng) -> char {
    let chars: Vec<char> = pool.chars().collect();
    *chars.choose(rng).expect("non-empty pool")
}

fn complement(members: &str) -> String {
    CANONICAL_RESIDUES.chars().filter(|c| !members.contains(*c)).collect()
}

struct Generator<'a> {
    spec: &'a SyntheticTaskSpec,
    rng: ChaCha8Rng,
    seen: BTreeSet<String>,
}

impl Generator<'_> {
    fn length(&mut self) -> usize {
        self.rng.gen_range(self.spec.min_len..=self.spec.max_len)
    }

    /// Samples until `accept` holds and the sequence is new.
    fn sample(
        &mut self,
        mut draw: impl FnMut(&mut ChaCha8Rng, usize) -> String,
        accept: impl Fn(&str) -> bool,
    ) -> String {
        loop {
            let len = self.length();
            let seq = draw(&mut self.rng, len);
            if accept(&seq) && !self.seen.contains(&seq) {
                self.seen.insert(seq.clone());
                return seq;
            }
        }
    }

    fn retrieval(&mut self, split: &str, n: usize) -> Result<Vec<Example>> {
        let mut order = residue_pairs();
        order.shuffle(&mut self.rng);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = order[i % order.len()];
            let others = complement(&format!("{a}{b}"));
            let seq = self.sample(
                |rng, len| {
                    (0..len)
                        .map(|_| match rng.gen_range(0..10) {
                            0..=2 => a,
                            3..=5 => b,
                            _ => pick(&others, rng),
                        })
                        .collect()
                },
                |s| matches!(enriched_pair(s), Some((x, y)) if (x, y) == (a, b) || (x, y) == (b, a)),
            );
            out.push(Example {
                id: format!("{split}-{i}"),
                sequence: seq,
                text: enrichment_description(a, b)?,
                label: None,
                target: None,
            });
        }
        Ok(out)
    }

    fn binary(&mut self, split: &str, n: usize) -> Vec<Example> {
        let others = complement(HYDROPHOBIC);
        (0..n)
            .map(|i| {
                let label = self.rng.gen_range(0..2);
                let f = if label == 1 {
                    self.rng.gen_range(0.65..0.85)
                } else {
                    self.rng.gen_range(0.15..0.35)
                };
                let seq = self.sample(
                    |rng, len| {
                        (0..len)
                            .map(|_| {
                                if rng.gen_bool(f) {
                                    pick(HYDROPHOBIC, rng)
                                } else {
                                    pick(&others, rng)
                                }
                            })
                            .collect()
                    },
                    |s| {
                        let h = hydrophobic_fraction(s);
                        (h > 0.5) == (label == 1) && (h - 0.5).abs() >= 0.1
                    },
                );
                Example {
                    id: format!("{split}-{i}"),
                    sequence: seq,
                    text: if label == 1 { "yes" } else { "no" }.into(),
                    label: Some(label),
                    target: None,
                }
            })
            .collect()
    }

    fn multi(&mut self, split: &str, n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let label = self.rng.gen_range(0..RESIDUE_GROUPS.len());
                let members = RESIDUE_GROUPS[label].1;
                let seq = self.sample(
                    |rng, len| {
                        (0..len)
                            .map(|_| {
                                if rng.gen_bool(0.5) {
                                    pick(members, rng)
                                } else {
                                    pick(CANONICAL_RESIDUES, rng)
                                }
                            })
                            .collect()
                    },
                    |s| dominant_group(s) == Some(label),
                );
                Example {
                    id: format!("{split}-{i}"),
                    sequence: seq,
                    text: RESIDUE_GROUPS[label].0.into(),
                    label: Some(label),
                    target: None,
                }
            })
            .collect()
    }

    fn regression(&mut self, split: &str, n: usize) -> Vec<Example> {
        let others = complement(HYDROPHOBIC);
        (0..n)
            .map(|i| {
                let f = self.rng.gen_range(0.1..0.9);
                let seq = self.sample(
                    |rng, len| {
                        (0..len)
                            .map(|_| {
                                if rng.gen_bool(f) {
                                    pick(HYDROPHOBIC, rng)
                                } else {
                                    pick(&others, rng)
                                }
                            })
                            .collect()
                    },
                    |_| true,
                );
                let target = hydrophobic_fraction(&seq);
                Example {
                    id: format!("{split}-{i}"),
                    sequence: seq,
                    text: String::new(),
                    label: None,
                    target: Some(target),
                }
            })
            .collect()
    }

    fn split(&mut self, name: &str, n: usize) -> Result<Vec<Example>> {
        Ok(match self.spec.family {
            TaskFamily::RetrievalPairs => self.retrieval(name, n)?,
            TaskFamily::BinaryCls => self.binary(name, n),
            TaskFamily::MultiCls => self.multi(name, n),
            TaskFamily::Regression => self.regression(name, n),
        })
    }
}

/// Builds train, validation and test splits from a single seeded stream.
/// Sequences never repeat across or within splits. For retrieval pairs each
/// split walks its own shuffled order of the 190 residue pairs, so a split of
/// at most 190 items has distinct descriptions.
pub fn generate_synthetic(spec: &SyntheticTaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut g = Generator {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        seen: BTreeSet::new(),
    };
    let train = g.split("train", spec.train)?;
    let val = g.split("val", spec.val)?;
    let test = g.split("test", spec.test)?;
    Ok(Dataset {
        family: spec.family,
        train,
        val,
        test,
    })
}
