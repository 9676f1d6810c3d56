//! Querying transformer: K learnable queries that self-attend (optionally
//! jointly with text tokens), cross-attend to protein embeddings and emit a
//! fixed-size `K × d` latent set.

mod loss;

pub use loss::{
    construct_negatives, pairwise_similarity, ptc_loss, ptm_loss, ptm_loss_from_probs, similarity_matrix, Negatives,
    PtmForm, PTM_CLAMP,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sinusoidal_positions, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

pub const QFORMER_PREFIX: &str = "qformer.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QFormerConfig {
    pub num_queries: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dim: usize,
    pub ff_dim: usize,
    /// Width of the protein embeddings fed to cross-attention.
    pub protein_dim: usize,
    pub max_text_len: usize,
    pub temperature: f64,
    pub min_temperature: f64,
}

impl Default for QFormerConfig {
    fn default() -> Self {
        Self {
            num_queries: 8,
            num_layers: 2,
            num_heads: 4,
            dim: 64,
            ff_dim: 128,
            protein_dim: 64,
            max_text_len: 512,
            temperature: 0.07,
            min_temperature: 0.01,
        }
    }
}

impl QFormerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_queries == 0 || self.num_layers == 0 || self.dim == 0 || self.ff_dim == 0 || self.protein_dim == 0 {
            return Err(Error::Config("qformer sizes must be >= 1".into()));
        }
        if self.num_heads == 0 || self.dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "qformer dim {} not divisible by {} heads",
                self.dim, self.num_heads
            )));
        }
        if !(self.min_temperature > 0.0 && self.temperature >= self.min_temperature) {
            return Err(Error::Config(format!(
                "temperature {} must be >= min_temperature {} > 0",
                self.temperature, self.min_temperature
            )));
        }
        Ok(())
    }
}

/// The K trainable query vectors.
#[derive(Clone, Debug)]
pub struct QueryBank {
    pub k: usize,
    pub param: ParamId,
}

#[derive(Clone, Debug)]
struct QFormerBlock {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    ln_cross: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

impl QFormerBlock {
    /// `x` holds the query rows first, then any text rows. Only query rows
    /// cross-attend to the protein.
    fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, k: usize, h: Var<'t>) -> Result<Var<'t>> {
        let n = self.ln_self.forward(tape, store, x)?;
        let x = x.add(self.self_attn.forward(tape, store, n, n, None)?)?;
        let total = x.rows();
        let q = x.slice_rows(0, k)?;
        let nq = self.ln_cross.forward(tape, store, q)?;
        let q = q.add(self.cross_attn.forward(tape, store, nq, h, None)?)?;
        let x = if total > k {
            Var::concat_rows(&[q, x.slice_rows(k, total)?])?
        } else {
            q
        };
        let n = self.ln_ff.forward(tape, store, x)?;
        x.add(self.ff.forward(tape, store, n)?)
    }
}

#[derive(Clone, Debug)]
pub struct QFormer {
    cfg: QFormerConfig,
    pub bank: QueryBank,
    text_embed: ParamId,
    blocks: Vec<QFormerBlock>,
    ln_final: LayerNorm,
    match_head: Linear,
    log_tau: ParamId,
}

impl QFormer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: QFormerConfig,
        text_vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let p = QFORMER_PREFIX;
        let d = cfg.dim;
        let bank = QueryBank {
            k: cfg.num_queries,
            param: store.insert(
                format!("{p}query_bank"),
                Tensor::randn(vec![cfg.num_queries, d], 1.0, rng),
            )?,
        };
        let text_embed = store.insert(
            format!("{p}text_embed"),
            Tensor::randn(vec![text_vocab_size, d], 1.0, rng),
        )?;
        let blocks = (0..cfg.num_layers)
            .map(|i| {
                let b = format!("{p}block{i}");
                Ok(QFormerBlock {
                    ln_self: LayerNorm::new(store, &format!("{b}.ln_self"), d)?,
                    self_attn: MultiHeadAttention::new(store, &format!("{b}.self_attn"), d, d, cfg.num_heads, rng)?,
                    ln_cross: LayerNorm::new(store, &format!("{b}.ln_cross"), d)?,
                    cross_attn: MultiHeadAttention::new(
                        store,
                        &format!("{b}.cross_attn"),
                        d,
                        cfg.protein_dim,
                        cfg.num_heads,
                        rng,
                    )?,
                    ln_ff: LayerNorm::new(store, &format!("{b}.ln_ff"), d)?,
                    ff: FeedForward::new(store, &format!("{b}.ff"), d, cfg.ff_dim, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        let ln_final = LayerNorm::new(store, &format!("{p}ln_final"), d)?;
        let match_head = Linear::zeros(store, &format!("{p}match_head"), d, 1)?;
        let log_tau = store.insert(format!("{p}log_tau"), Tensor::scalar(cfg.temperature.ln()))?;
        Ok(Self {
            cfg,
            bank,
            text_embed,
            blocks,
            ln_final,
            match_head,
            log_tau,
        })
    }

    pub fn config(&self) -> &QFormerConfig {
        &self.cfg
    }

    /// `z^p`: `K × d` for any protein length `L ≥ 1`. With `text_ids`, text
    /// tokens share the self-attention with the queries.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        h: Var<'t>,
        text_ids: Option<&[usize]>,
    ) -> Result<Var<'t>> {
        if h.numel() == 0 || h.shape().len() != 2 {
            return Err(Error::Invalid(format!(
                "qformer needs an L×d protein embedding with L >= 1, got {:?}",
                h.shape()
            )));
        }
        if h.cols() != self.cfg.protein_dim {
            return Err(Error::shape(
                "qformer cross-attention",
                &h.shape(),
                &[h.rows(), self.cfg.protein_dim],
            ));
        }
        let k = self.bank.k;
        let queries = tape.param(store, self.bank.param);
        let mut x = match text_ids {
            Some(ids) if !ids.is_empty() => {
                if ids.len() > self.cfg.max_text_len {
                    return Err(Error::TooLong {
                        len: ids.len(),
                        max_len: self.cfg.max_text_len,
                    });
                }
                let pe = sinusoidal_positions(ids.len(), self.cfg.dim);
                let text = tape
                    .param(store, self.text_embed)
                    .gather_rows(ids)?
                    .add(tape.constant(&pe))?;
                Var::concat_rows(&[queries, text])?
            }
            _ => queries,
        };
        for b in &self.blocks {
            x = b.forward(tape, store, x, k, h)?;
        }
        let q = if x.rows() > k { x.slice_rows(0, k)? } else { x };
        self.ln_final.forward(tape, store, q)
    }

    /// Matching probability `f(p, t)`: joint pass, mean over query outputs,
    /// linear head, sigmoid. Shape `[1]`.
    pub fn ptm_score<'t>(&self, tape: &'t Tape, store: &ParamStore, h: Var<'t>, text_ids: &[usize]) -> Result<Var<'t>> {
        if text_ids.is_empty() {
            return Err(Error::Invalid("ptm_score needs non-empty text".into()));
        }
        let z = self.forward(tape, store, h, Some(text_ids))?;
        let pooled = z.mean_rows().reshape(vec![1, self.cfg.dim])?;
        Ok(self
            .match_head
            .forward(tape, store, pooled)?
            .reshape(vec![1])?
            .sigmoid())
    }

    /// `1/τ` as a tape scalar; `τ` is kept at or above the configured floor.
    pub fn inv_temperature<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Var<'t> {
        tape.param(store, self.log_tau)
            .clamp(self.cfg.min_temperature.ln(), f64::INFINITY)
            .neg()
            .exp()
    }

    pub fn temperature(&self, store: &ParamStore) -> f64 {
        store.get(self.log_tau).values()[0].exp().max(self.cfg.min_temperature)
    }

    pub fn log_tau(&self) -> ParamId {
        self.log_tau
    }

    /// Forward pass on a throwaway tape.
    pub fn encode(&self, store: &ParamStore, h: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let z = self.forward(&tape, store, tape.constant(h), None)?;
        Tensor::new(z.shape(), z.value())
    }

    pub fn score(&self, store: &ParamStore, h: &Tensor, text_ids: &[usize]) -> Result<f64> {
        let tape = Tape::new();
        Ok(self.ptm_score(&tape, store, tape.constant(h), text_ids)?.item())
    }
}
