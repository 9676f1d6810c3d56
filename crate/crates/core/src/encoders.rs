//! Protein and text encoders: embedding table, sinusoidal positions and a
//! stack of bidirectional transformer blocks with a final layer norm.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{embed_with_positions, LayerNorm, TransformerBlock};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

pub const PROT_ENC_PREFIX: &str = "prot_enc.";
pub const TEXT_ENC_PREFIX: &str = "text_enc.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            num_heads: 4,
            model_dim: 64,
            ff_dim: 128,
            max_len: 512,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("model_dim", self.model_dim),
            ("ff_dim", self.ff_dim),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder {name} must be >= 1")));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        Ok(())
    }
}

/// Shared body of both encoders.
#[derive(Clone, Debug)]
struct Stack {
    embed: ParamId,
    blocks: Vec<TransformerBlock>,
    ln_final: LayerNorm,
}

impl Stack {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let embed = store.insert(
            format!("{prefix}embed"),
            Tensor::randn(vec![vocab_size, cfg.model_dim], 1.0, rng),
        )?;
        let blocks = (0..cfg.num_layers)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &format!("{prefix}block{i}"),
                    cfg.model_dim,
                    cfg.num_heads,
                    cfg.ff_dim,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let ln_final = LayerNorm::new(store, &format!("{prefix}ln_final"), cfg.model_dim)?;
        Ok(Self {
            embed,
            blocks,
            ln_final,
        })
    }

    fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, ids: &[usize]) -> Result<Var<'t>> {
        let mut x = embed_with_positions(tape, store, self.embed, ids)?;
        for b in &self.blocks {
            x = b.forward(tape, store, x, None)?;
        }
        self.ln_final.forward(tape, store, x)
    }
}

fn check_len(len: usize, max_len: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::Invalid("encoder input is empty".into()));
    }
    if len > max_len {
        return Err(Error::TooLong { len, max_len });
    }
    Ok(())
}

/// Randomly initialised residue encoder; normally frozen after construction.
#[derive(Clone, Debug)]
pub struct ProteinEncoder {
    cfg: EncoderConfig,
    stack: Stack,
}

impl ProteinEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: EncoderConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let stack = Stack::new(store, PROT_ENC_PREFIX, &cfg, vocab_size, rng)?;
        Ok(Self { cfg, stack })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// One contextual row per residue: `L × d`.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, ids: &[usize]) -> Result<Var<'t>> {
        check_len(ids.len(), self.cfg.max_len)?;
        self.stack.forward(tape, store, ids)
    }

    /// Forward pass on a throwaway tape, returning plain values.
    pub fn encode(&self, store: &ParamStore, ids: &[usize]) -> Result<Tensor> {
        let tape = Tape::new();
        let h = self.forward(&tape, store, ids)?;
        Tensor::new(h.shape(), h.value())
    }

    /// Excludes every encoder parameter from updates and returns the
    /// fingerprint to verify against later.
    pub fn freeze(&self, store: &mut ParamStore) -> String {
        store.set_trainable(PROT_ENC_PREFIX, false);
        store.fingerprint(PROT_ENC_PREFIX)
    }

    pub fn is_frozen(&self, store: &ParamStore) -> bool {
        store
            .ids_with_prefix(PROT_ENC_PREFIX)
            .all(|id| !store.get(id).requires_grad())
    }

    pub fn fingerprint(&self, store: &ParamStore) -> String {
        store.fingerprint(PROT_ENC_PREFIX)
    }
}

/// Text encoder pooled at a prepended CLS token.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    cfg: EncoderConfig,
    stack: Stack,
    cls: usize,
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: EncoderConfig,
        vocab_size: usize,
        cls: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if cls >= vocab_size {
            return Err(Error::Config(format!(
                "CLS id {cls} outside vocabulary of {vocab_size}"
            )));
        }
        let stack = Stack::new(store, TEXT_ENC_PREFIX, &cfg, vocab_size, rng)?;
        Ok(Self { cfg, stack, cls })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// The CLS-position output after the final layer, a `[d]` vector.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, ids: &[usize]) -> Result<Var<'t>> {
        if ids.is_empty() {
            return Err(Error::Invalid("text encoder input is empty".into()));
        }
        check_len(ids.len() + 1, self.cfg.max_len)?;
        let mut with_cls = Vec::with_capacity(ids.len() + 1);
        with_cls.push(self.cls);
        with_cls.extend_from_slice(ids);
        self.stack.forward(tape, store, &with_cls)?.row(0)
    }

    pub fn encode(&self, store: &ParamStore, ids: &[usize]) -> Result<Tensor> {
        let tape = Tape::new();
        let z = self.forward(&tape, store, ids)?;
        Tensor::new(z.shape(), z.value())
    }
}
