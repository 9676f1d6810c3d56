//! File-driven runs: config loading, stage prerequisites and the retrieval
//! index used by the command-line tool.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig, CHECKPOINT_FILE};
use super::stage::{train_stage, Stage, StageConfig, StageData, StageReport};
use super::synthetic::{generate_synthetic, Dataset, SyntheticTaskSpec};
use crate::corpus::read_packs;
use crate::error::{Error, Result};
use crate::qformer::similarity_matrix;
use crate::tensor::Tensor;
use crate::tokenize::FastaRecord;

/// Reads a TOML file, or JSON when the extension is `.json`.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&src).map_err(|e| e.to_string())
    } else {
        toml::from_str(&src).map_err(|e| e.to_string())
    };
    parsed.map_err(|detail| Error::Parse {
        path: path.to_path_buf(),
        detail,
    })
}

/// Where a stage's training data comes from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Packed corpus (JSONL) for stage A.
    pub packs: Option<PathBuf>,
    /// Saved dataset for stages B and C.
    pub dataset: Option<PathBuf>,
    /// Generated dataset, used when `dataset` is absent.
    pub synthetic: Option<SyntheticTaskSpec>,
}

/// One training invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for a fresh model.
    #[serde(default)]
    pub seed: u64,
    /// Architecture of a fresh model; ignored when `init` is given.
    #[serde(default)]
    pub model: ModelConfig,
    /// Checkpoint (file or run directory) to continue from.
    #[serde(default)]
    pub init: Option<PathBuf>,
    pub stage: StageConfig,
    #[serde(default)]
    pub data: DataConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        load_config(path)
    }

    /// The model the stage starts from. A stage-C run without `init` starts
    /// fresh; a named checkpoint that does not exist is an error.
    pub fn initial_model(&self) -> Result<Model> {
        match &self.init {
            Some(p) => {
                let file = if p.is_dir() { p.join(CHECKPOINT_FILE) } else { p.clone() };
                if !file.is_file() {
                    return Err(Error::Config(format!(
                        "prerequisite checkpoint {} not found",
                        file.display()
                    )));
                }
                Model::load(&file)
            }
            None => Model::new(self.model.clone(), self.seed),
        }
    }

    pub fn dataset(&self) -> Result<Dataset> {
        match (&self.data.dataset, &self.data.synthetic) {
            (Some(p), _) => Dataset::load(p),
            (None, Some(spec)) => generate_synthetic(spec),
            (None, None) => Err(Error::Config(format!(
                "stage {} needs data.dataset or data.synthetic",
                self.stage.stage.as_str()
            ))),
        }
    }
}

/// Runs the configured stage and writes its outputs into `out`.
pub fn run_stage(cfg: &RunConfig, out: &Path) -> Result<(Model, StageReport)> {
    let mut model = cfg.initial_model()?;
    let report = match cfg.stage.stage {
        Stage::Dicp => {
            let path = cfg
                .data
                .packs
                .as_ref()
                .ok_or_else(|| Error::Config("stage a_dicp needs data.packs".into()))?;
            let packs = read_packs(path)?;
            train_stage(&mut model, &cfg.stage, StageData::Corpus(&packs), Some(out))?
        }
        Stage::Align => {
            let ds = cfg.dataset()?;
            train_stage(&mut model, &cfg.stage, StageData::Pairs(&ds.train), Some(out))?
        }
        Stage::EndToEnd => {
            let ds = cfg.dataset()?;
            train_stage(&mut model, &cfg.stage, StageData::Task(&ds), Some(out))?
        }
    };
    Ok((model, report))
}

pub const INDEX_FILE: &str = "index.json";

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> Result<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    Tensor::matrix(rows.len(), cols, rows.concat())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub sequence: String,
    pub description: String,
    /// Q-Former latent, one row per query.
    pub latent: Vec<Vec<f64>>,
    /// Text-encoder embedding of the description, when there is one.
    pub text_embedding: Option<Vec<f64>>,
}

/// Proteins (and their descriptions) embedded by one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalIndex {
    pub temperature: f64,
    pub entries: Vec<IndexEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
    pub description: String,
}

impl RetrievalIndex {
    pub fn build(model: &Model, records: &[FastaRecord]) -> Result<Self> {
        let entries = records
            .iter()
            .map(|r| {
                Ok(IndexEntry {
                    id: r.id.clone(),
                    sequence: r.sequence.clone(),
                    description: r.description.clone(),
                    latent: rows(&model.protein_latent(&r.sequence)?),
                    text_embedding: if r.description.is_empty() {
                        None
                    } else {
                        Some(model.text_embedding(&r.description)?.into_values())
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            temperature: model.qformer.temperature(&model.store),
            entries,
        })
    }

    /// Writes the model checkpoint and `index.json` into `dir`.
    pub fn save(&self, model: &Model, dir: &Path) -> Result<()> {
        model.save(dir)?;
        let path = dir.join(INDEX_FILE);
        std::fs::write(&path, serde_json::to_string(self)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<(Model, Self)> {
        let path = dir.join(INDEX_FILE);
        let src = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index = serde_json::from_str(&src)?;
        Ok((Model::load(dir)?, index))
    }

    fn top(scores: impl Iterator<Item = (usize, f64)>, entries: &[IndexEntry], k: usize) -> Vec<Hit> {
        let mut ranked: Vec<(usize, f64)> = scores.collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
            .into_iter()
            .take(k)
            .map(|(i, score)| Hit {
                id: entries[i].id.clone(),
                score,
                description: entries[i].description.clone(),
            })
            .collect()
    }

    /// Proteins ranked by similarity to a free-text query.
    pub fn search_text(&self, model: &Model, query: &str, k: usize) -> Result<Vec<Hit>> {
        let zt = model.text_embedding(query)?;
        let latents = self
            .entries
            .iter()
            .map(|e| matrix(&e.latent))
            .collect::<Result<Vec<_>>>()?;
        let s = similarity_matrix(&latents, &[zt], self.temperature)?;
        Ok(Self::top(s.values().iter().copied().enumerate(), &self.entries, k))
    }

    /// Indexed descriptions ranked by similarity to a protein sequence.
    pub fn search_protein(&self, model: &Model, sequence: &str, k: usize) -> Result<Vec<Hit>> {
        let zp = model.protein_latent(sequence)?;
        let (idx, texts): (Vec<usize>, Vec<Tensor>) = self
            .entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.text_embedding.clone().map(|t| (i, Tensor::vector(t))))
            .unzip();
        if texts.is_empty() {
            return Err(Error::Invalid("index holds no descriptions".into()));
        }
        let s = similarity_matrix(&[zp], &texts, self.temperature)?;
        Ok(Self::top(
            idx.into_iter().zip(s.values().iter().copied()),
            &self.entries,
            k,
        ))
    }
}
