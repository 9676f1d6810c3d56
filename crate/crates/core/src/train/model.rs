use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::{
    assemble_prompt, CausalLM, ClassificationHead, LmConfig, MultiModalPrompt, Projector, CLS_HEAD_PREFIX,
};
use crate::encoders::{EncoderConfig, ProteinEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{Checkpoint, ParamStore};
use crate::qformer::{QFormer, QFormerConfig};
use crate::tensor::{Tape, Tensor, Var};
use crate::tokenize::{ProteinVocab, TextVocab};

pub const REG_HEAD_PREFIX: &str = "reg_head.";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub protein_encoder: EncoderConfig,
    pub text_encoder: EncoderConfig,
    pub qformer: QFormerConfig,
    pub lm: LmConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            protein_encoder: EncoderConfig::default(),
            text_encoder: EncoderConfig::default(),
            qformer: QFormerConfig::default(),
            lm: LmConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Shrinks every module to width `dim` (LM width `lm_dim`) with `k`
    /// queries; handy for fast experiments.
    pub fn compact(dim: usize, k: usize, lm_dim: usize) -> Self {
        let enc = EncoderConfig {
            num_layers: 1,
            num_heads: 4,
            model_dim: dim,
            ff_dim: 2 * dim,
            max_len: 512,
        };
        Self {
            protein_encoder: enc.clone(),
            text_encoder: enc,
            qformer: QFormerConfig {
                num_queries: k,
                num_layers: 1,
                num_heads: 4,
                dim,
                ff_dim: 2 * dim,
                protein_dim: dim,
                ..QFormerConfig::default()
            },
            lm: LmConfig {
                num_layers: 2,
                num_heads: 4,
                dim: lm_dim,
                ff_dim: 2 * lm_dim,
                max_len: 512,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.protein_encoder.validate()?;
        self.text_encoder.validate()?;
        self.qformer.validate()?;
        if self.qformer.protein_dim != self.protein_encoder.model_dim {
            return Err(Error::Config(format!(
                "qformer.protein_dim {} must equal the protein encoder width {}",
                self.qformer.protein_dim, self.protein_encoder.model_dim
            )));
        }
        if self.qformer.dim != self.text_encoder.model_dim {
            return Err(Error::Config(format!(
                "qformer.dim {} must equal the text encoder width {} for contrastive scoring",
                self.qformer.dim, self.text_encoder.model_dim
            )));
        }
        Ok(())
    }
}

/// How a protein reaches the language model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProteinMode {
    /// Q-Former latents through the projector, inside delimiters.
    #[default]
    Aligned,
    /// Residue letters as space-separated text tokens.
    PlainText,
}

/// Protein side of a prompt.
#[derive(Clone, Debug)]
pub enum Conditioning {
    /// Frozen encoder states; the Q-Former runs on the tape.
    States(Tensor),
    /// Precomputed Q-Former output (no gradient).
    Latent(Tensor),
    /// Raw sequence rendered as text.
    Residues(String),
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: ModelConfig,
    #[serde(default)]
    cls_classes: Option<usize>,
    #[serde(default)]
    reg_head: bool,
}

/// All modules over one parameter store. The protein encoder is frozen on
/// construction and stays frozen.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub protein_vocab: ProteinVocab,
    pub text_vocab: TextVocab,
    pub prot_enc: ProteinEncoder,
    pub text_enc: TextEncoder,
    pub qformer: QFormer,
    pub projector: Projector,
    pub lm: CausalLM,
    pub cls_head: Option<ClassificationHead>,
    pub reg_head: Option<Linear>,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let protein_vocab = ProteinVocab::new();
        let text_vocab = TextVocab::default_vocab();
        let mut store = ParamStore::new();
        let prot_enc = ProteinEncoder::new(&mut store, cfg.protein_encoder.clone(), protein_vocab.size(), &mut rng)?;
        let specials = text_vocab.specials();
        let text_enc = TextEncoder::new(
            &mut store,
            cfg.text_encoder.clone(),
            text_vocab.size(),
            specials.cls,
            &mut rng,
        )?;
        let qformer = QFormer::new(&mut store, cfg.qformer.clone(), text_vocab.size(), &mut rng)?;
        let projector = Projector::new(&mut store, cfg.qformer.dim, cfg.lm.dim, &mut rng)?;
        let lm = CausalLM::new(&mut store, cfg.lm.clone(), text_vocab.size(), specials, &mut rng)?;
        prot_enc.freeze(&mut store);
        Ok(Self {
            cfg,
            store,
            protein_vocab,
            text_vocab,
            prot_enc,
            text_enc,
            qformer,
            projector,
            lm,
            cls_head: None,
            reg_head: None,
        })
    }

    fn head_rng(seed: u64, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed ^ salt)
    }

    /// Adds a classification head unless one with `num_classes` exists.
    pub fn ensure_cls_head(&mut self, num_classes: usize, seed: u64) -> Result<()> {
        match &self.cls_head {
            Some(h) if h.num_classes() == num_classes => Ok(()),
            Some(h) => Err(Error::Config(format!(
                "model already has a {}-class head, task needs {num_classes}",
                h.num_classes()
            ))),
            None => {
                let mut rng = Self::head_rng(seed, 0xc1a5);
                self.cls_head = Some(ClassificationHead::new(
                    &mut self.store,
                    self.cfg.lm.dim,
                    num_classes,
                    &mut rng,
                )?);
                Ok(())
            }
        }
    }

    pub fn ensure_reg_head(&mut self, seed: u64) -> Result<()> {
        if self.reg_head.is_none() {
            let mut rng = Self::head_rng(seed, 0x7e6);
            self.reg_head = Some(Linear::new(&mut self.store, "reg_head", self.cfg.lm.dim, 1, &mut rng)?);
        }
        Ok(())
    }

    pub fn protein_ids(&self, seq: &str) -> Result<Vec<usize>> {
        self.protein_vocab.encode(seq)
    }

    pub fn protein_states(&self, seq: &str) -> Result<Tensor> {
        self.prot_enc.encode(&self.store, &self.protein_ids(seq)?)
    }

    /// `K × d` protein latents.
    pub fn protein_latent(&self, seq: &str) -> Result<Tensor> {
        self.qformer.encode(&self.store, &self.protein_states(seq)?)
    }

    pub fn text_ids(&self, text: &str) -> Vec<usize> {
        self.text_vocab.encode(text)
    }

    pub fn text_embedding(&self, text: &str) -> Result<Tensor> {
        self.text_enc.encode(&self.store, &self.text_ids(text))
    }

    pub fn conditioning(&self, seq: &str, mode: ProteinMode) -> Result<Conditioning> {
        Ok(match mode {
            ProteinMode::Aligned => Conditioning::States(self.protein_states(seq)?),
            ProteinMode::PlainText => Conditioning::Residues(seq.to_string()),
        })
    }

    /// Token layout of a task prompt: `Protein [protein] <question> Answer:`.
    pub fn task_prompt(&self, question: &str, residues: Option<&str>) -> MultiModalPrompt {
        let mut prefix = self.text_ids("Protein");
        if let Some(seq) = residues {
            let spaced: String = seq.chars().flat_map(|c| [' ', c]).collect();
            prefix.extend(self.text_ids(&spaced));
        }
        MultiModalPrompt::new(prefix, self.text_ids(&format!(" {question} Answer:")))
    }

    /// Generation target: the answer text followed by EOS.
    pub fn answer_ids(&self, text: &str) -> Vec<usize> {
        let mut ids = self.text_ids(&format!(" {text}"));
        ids.push(self.text_vocab.specials().eos);
        ids
    }

    pub fn prompt<'t>(&self, tape: &'t Tape, cond: &Conditioning, question: &str) -> Result<Var<'t>> {
        let (prompt, z) = match cond {
            Conditioning::States(h) => {
                let z = self.qformer.forward(tape, &self.store, tape.constant(h), None)?;
                (self.task_prompt(question, None), Some(z))
            }
            Conditioning::Latent(z) => (self.task_prompt(question, None), Some(tape.constant(z))),
            Conditioning::Residues(seq) => (self.task_prompt(question, Some(seq)), None),
        };
        assemble_prompt(tape, &self.store, &prompt, z, &self.projector, &self.lm)
    }

    /// Final-position hidden state `1 × d_lm`.
    pub fn last_hidden<'t>(&self, tape: &'t Tape, prompt: Var<'t>) -> Result<Var<'t>> {
        let h = self.lm.hidden(tape, &self.store, prompt)?;
        h.slice_rows(h.rows() - 1, h.rows())
    }

    /// Regression output for a prompt.
    pub fn regress<'t>(&self, tape: &'t Tape, prompt: Var<'t>) -> Result<Var<'t>> {
        let head = self
            .reg_head
            .as_ref()
            .ok_or_else(|| Error::Config("model has no regression head".into()))?;
        head.forward(tape, &self.store, self.last_hidden(tape, prompt)?)?
            .reshape(vec![1])
    }

    pub fn fingerprint(&self, prefix: &str) -> String {
        self.store.fingerprint(prefix)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let meta = CheckpointMeta {
            config: self.cfg.clone(),
            cls_classes: self.cls_head.as_ref().map(|h| h.num_classes()),
            reg_head: self.reg_head.is_some(),
        };
        Ok(self.store.to_checkpoint(serde_json::to_value(meta)?))
    }

    /// Writes `dir/checkpoint.json`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CHECKPOINT_FILE);
        self.checkpoint()?.save(&path)?;
        Ok(path)
    }

    /// Loads from a checkpoint file or a directory holding `checkpoint.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(CHECKPOINT_FILE)
        } else {
            path.to_path_buf()
        };
        let ckpt = Checkpoint::load(&file)?;
        Self::from_checkpoint(&ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_value(ckpt.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("bad checkpoint metadata: {e}")))?;
        let mut model = Self::new(meta.config, 0)?;
        if let Some(c) = meta.cls_classes {
            model.ensure_cls_head(c, 0)?;
        }
        if meta.reg_head {
            model.ensure_reg_head(0)?;
        }
        model.store.load_checkpoint(ckpt)?;
        model.prot_enc.freeze(&mut model.store);
        Ok(model)
    }

    /// Names of the head prefixes present.
    pub fn head_prefixes(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.cls_head.is_some() {
            v.push(CLS_HEAD_PREFIX);
        }
        if self.reg_head.is_some() {
            v.push(REG_HEAD_PREFIX);
        }
        v
    }
}
