//! Projector, multi-modal prompt assembly, a small causal LM with tied
//! embeddings, the target-only LM loss, greedy decoding and the softmax
//! classification head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sinusoidal_positions, LayerNorm, Linear, TransformerBlock};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Mask, Tape, Tensor, Var};
use crate::tokenize::TextSpecials;

pub const PROJECTOR_PREFIX: &str = "projector.";
pub const LM_PREFIX: &str = "lm.";
pub const CLS_HEAD_PREFIX: &str = "cls_head.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            num_heads: 4,
            dim: 128,
            ff_dim: 256,
            max_len: 512,
        }
    }
}

/// Where the protein block sits relative to the text.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptLayout {
    /// `[prefix][<protein>][K vectors][</protein>][suffix]`.
    #[default]
    Delimited,
    /// `[<protein>][K vectors][</protein>][prefix][suffix]`.
    ProteinFirst,
}

/// Affine map from Q-Former space to LM space.
#[derive(Clone, Debug)]
pub struct Projector {
    pub linear: Linear,
}

impl Projector {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, dim: usize, lm_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(store, "projector", dim, lm_dim, rng)?,
        })
    }

    pub fn project<'t>(&self, tape: &'t Tape, store: &ParamStore, z: Var<'t>) -> Result<Var<'t>> {
        self.linear.forward(tape, store, z)
    }
}

#[derive(Clone, Debug)]
pub struct CausalLM {
    cfg: LmConfig,
    embed: ParamId,
    blocks: Vec<TransformerBlock>,
    ln_final: LayerNorm,
    specials: TextSpecials,
    vocab_size: usize,
}

impl CausalLM {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: LmConfig,
        vocab_size: usize,
        specials: TextSpecials,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.num_layers == 0 || cfg.dim == 0 || cfg.ff_dim == 0 || cfg.max_len == 0 {
            return Err(Error::Config("lm sizes must be >= 1".into()));
        }
        let d = cfg.dim;
        let mut table = Tensor::randn(vec![vocab_size, d], 1.0, rng);
        for id in [specials.prot_open, specials.prot_close] {
            if id >= vocab_size {
                return Err(Error::Config(format!(
                    "delimiter id {id} outside vocabulary of {vocab_size}"
                )));
            }
        }
        // Delimiters start at the table mean so they are in-distribution.
        let mut mean = vec![0.0; d];
        for r in 0..vocab_size {
            for (m, x) in mean.iter_mut().zip(table.row(r)) {
                *m += x / vocab_size as f64;
            }
        }
        for id in [specials.prot_open, specials.prot_close] {
            table.values_mut()[id * d..(id + 1) * d].copy_from_slice(&mean);
        }
        let embed = store.insert(format!("{LM_PREFIX}embed"), table)?;
        let blocks = (0..cfg.num_layers)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &format!("{LM_PREFIX}block{i}"),
                    d,
                    cfg.num_heads,
                    cfg.ff_dim,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let ln_final = LayerNorm::new(store, &format!("{LM_PREFIX}ln_final"), d)?;
        Ok(Self {
            cfg,
            embed,
            blocks,
            ln_final,
            specials,
            vocab_size,
        })
    }

    pub fn config(&self) -> &LmConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn specials(&self) -> TextSpecials {
        self.specials
    }

    pub fn embedding_table(&self) -> ParamId {
        self.embed
    }

    pub fn embed_tokens<'t>(&self, tape: &'t Tape, store: &ParamStore, ids: &[usize]) -> Result<Var<'t>> {
        tape.param(store, self.embed).gather_rows(ids)
    }

    /// Final hidden states `T × d` for an embedded sequence.
    pub fn hidden<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let t = x.rows();
        if t == 0 {
            return Err(Error::Invalid("empty LM input".into()));
        }
        if t > self.cfg.max_len {
            return Err(Error::TooLong {
                len: t,
                max_len: self.cfg.max_len,
            });
        }
        let mut x = x.add(tape.constant(&sinusoidal_positions(t, self.cfg.dim)))?;
        let mask = Mask::causal(t);
        for b in &self.blocks {
            x = b.forward(tape, store, x, Some(&mask))?;
        }
        self.ln_final.forward(tape, store, x)
    }

    /// Tied output head: `h · Eᵀ / √d`.
    pub fn logits<'t>(&self, tape: &'t Tape, store: &ParamStore, hidden: Var<'t>) -> Result<Var<'t>> {
        let e = tape.param(store, self.embed);
        Ok(hidden.matmul(e.transpose()?)?.scale(1.0 / (self.cfg.dim as f64).sqrt()))
    }
}

/// Token-level description of one prompt; protein vectors are supplied at
/// assembly time.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiModalPrompt {
    pub prefix: Vec<usize>,
    pub suffix: Vec<usize>,
    #[serde(default)]
    pub layout: PromptLayout,
}

impl MultiModalPrompt {
    pub fn new(prefix: Vec<usize>, suffix: Vec<usize>) -> Self {
        Self {
            prefix,
            suffix,
            layout: PromptLayout::Delimited,
        }
    }

    /// Row index of the first protein vector for a `K`-vector protein block.
    pub fn protein_offset(&self) -> usize {
        match self.layout {
            PromptLayout::Delimited => self.prefix.len() + 1,
            PromptLayout::ProteinFirst => 1,
        }
    }

    pub fn len_with(&self, k: usize) -> usize {
        self.prefix.len() + self.suffix.len() + k + 2
    }
}

/// Embeds a prompt. With `z_p` (`K × d`), the projected vectors are wrapped in
/// the delimiter embeddings per the prompt layout; without it the prompt is
/// plain text `prefix ++ suffix`.
pub fn assemble_prompt<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    prompt: &MultiModalPrompt,
    z_p: Option<Var<'t>>,
    projector: &Projector,
    lm: &CausalLM,
) -> Result<Var<'t>> {
    let text = |ids: &[usize]| -> Result<Option<Var<'t>>> {
        if ids.is_empty() {
            Ok(None)
        } else {
            lm.embed_tokens(tape, store, ids).map(Some)
        }
    };
    let mut parts: Vec<Var<'t>> = Vec::new();
    match z_p {
        Some(z) => {
            if z.rows() == 0 {
                return Err(Error::Invalid("protein block needs K >= 1".into()));
            }
            let sp = lm.specials();
            let open = lm.embed_tokens(tape, store, &[sp.prot_open])?;
            let close = lm.embed_tokens(tape, store, &[sp.prot_close])?;
            let protein = projector.project(tape, store, z)?;
            let prefix = text(&prompt.prefix)?;
            match prompt.layout {
                PromptLayout::Delimited => {
                    parts.extend(prefix);
                    parts.extend([open, protein, close]);
                }
                PromptLayout::ProteinFirst => {
                    parts.extend([open, protein, close]);
                    parts.extend(prefix);
                }
            }
        }
        None => parts.extend(text(&prompt.prefix)?),
    }
    parts.extend(text(&prompt.suffix)?);
    if parts.is_empty() {
        return Err(Error::Invalid("prompt is empty".into()));
    }
    Var::concat_rows(&parts)
}

/// Mean next-token cross-entropy over the target positions only. The model
/// sees `prompt ++ target[..n-1]`; positions before the last prompt row
/// contribute context but no loss terms.
pub fn lm_loss<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    lm: &CausalLM,
    prompt: Var<'t>,
    target: &[usize],
) -> Result<Var<'t>> {
    if target.is_empty() {
        return Err(Error::Invalid("lm_loss needs a non-empty target".into()));
    }
    let p = prompt.rows();
    let n = target.len();
    let seq = if n > 1 {
        Var::concat_rows(&[prompt, lm.embed_tokens(tape, store, &target[..n - 1])?])?
    } else {
        prompt
    };
    let h = lm.hidden(tape, store, seq)?.slice_rows(p - 1, p - 1 + n)?;
    let logp = lm.logits(tape, store, h)?.log_softmax()?;
    Ok(logp.pick(target)?.mean().neg())
}

/// Greedy decoding from an embedded prompt; stops after `max_new` tokens or
/// at EOS (which is not returned). Ties go to the lowest id.
pub fn generate(store: &ParamStore, lm: &CausalLM, prompt: &Tensor, max_new: usize) -> Result<Vec<usize>> {
    if max_new == 0 {
        return Err(Error::Invalid("max_new must be >= 1".into()));
    }
    let eos = lm.specials().eos;
    let mut out = Vec::new();
    while out.len() < max_new && prompt.rows() + out.len() < lm.config().max_len {
        let tape = Tape::new();
        let mut x = tape.constant(prompt);
        if !out.is_empty() {
            x = Var::concat_rows(&[x, lm.embed_tokens(&tape, store, &out)?])?;
        }
        let h = lm.hidden(&tape, store, x)?;
        let last = h.slice_rows(h.rows() - 1, h.rows())?;
        let next = lm.logits(&tape, store, last)?.with_value(argmax);
        if next == eos {
            break;
        }
        out.push(next);
    }
    Ok(out)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct ClassificationHead {
    pub linear: Linear,
}

impl ClassificationHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        lm_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "a classifier needs >= 2 classes, got {num_classes}"
            )));
        }
        Ok(Self {
            linear: Linear::new(store, "cls_head", lm_dim, num_classes, rng)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.linear.out_dim
    }
}

/// Class probabilities from the final position's hidden state.
pub fn classify<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    lm: &CausalLM,
    head: &ClassificationHead,
    prompt: Var<'t>,
    num_classes: usize,
) -> Result<Var<'t>> {
    if head.num_classes() != num_classes {
        return Err(Error::Config(format!(
            "classification head has {} classes but the task has {num_classes}",
            head.num_classes()
        )));
    }
    let h = lm.hidden(tape, store, prompt)?;
    let last = h.slice_rows(h.rows() - 1, h.rows())?;
    head.linear
        .forward(tape, store, last)?
        .softmax()?
        .reshape(vec![num_classes])
}
