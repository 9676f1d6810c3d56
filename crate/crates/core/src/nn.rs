//! Transformer building blocks over the tape. Each layer owns the
//! [`ParamId`]s of its weights; values live in the shared [`ParamStore`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{attention, Mask, Tape, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weight ~ N(0, 1/in_dim), zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let std = (1.0 / in_dim as f64).sqrt();
        let w = Tensor::randn(vec![in_dim, out_dim], std, rng);
        Self::from_tensors(store, name, w, Some(Tensor::zeros(vec![out_dim])))
    }

    pub fn without_bias<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let std = (1.0 / in_dim as f64).sqrt();
        Self::from_tensors(store, name, Tensor::randn(vec![in_dim, out_dim], std, rng), None)
    }

    pub fn zeros(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::from_tensors(
            store,
            name,
            Tensor::zeros(vec![in_dim, out_dim]),
            Some(Tensor::zeros(vec![out_dim])),
        )
    }

    fn from_tensors(store: &mut ParamStore, name: &str, w: Tensor, b: Option<Tensor>) -> Result<Self> {
        let (in_dim, out_dim) = (w.shape()[0], w.shape()[1]);
        Ok(Self {
            weight: store.insert(format!("{name}.weight"), w)?,
            bias: b.map(|b| store.insert(format!("{name}.bias"), b)).transpose()?,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(tape.param(store, self.weight))?;
        match self.bias {
            Some(b) => y.add_row(tape.param(store, b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.insert(format!("{name}.gain"), Tensor::filled(vec![dim], 1.0))?,
            bias: store.insert(format!("{name}.bias"), Tensor::zeros(vec![dim]))?,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(tape.param(store, self.gain), tape.param(store, self.bias), LN_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        kv_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("dim {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng)?,
            // A key bias adds the same amount to every logit of a row and
            // cancels in the softmax, so it is omitted.
            key: Linear::without_bias(store, &format!("{name}.key"), kv_dim, dim, rng)?,
            value: Linear::new(store, &format!("{name}.value"), kv_dim, dim, rng)?,
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng)?,
            heads,
        })
    }

    /// Rows of `x` attend to rows of `context`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        context: Var<'t>,
        mask: Option<&Mask>,
    ) -> Result<Var<'t>> {
        let q = self.query.forward(tape, store, x)?;
        let k = self.key.forward(tape, store, context)?;
        let v = self.value.forward(tape, store, context)?;
        let dh = q.cols() / self.heads;
        let heads = (0..self.heads)
            .map(|h| {
                let (a, b) = (h * dh, (h + 1) * dh);
                attention(q.slice_cols(a, b)?, k.slice_cols(a, b)?, v.slice_cols(a, b)?, mask)
            })
            .collect::<Result<Vec<_>>>()?;
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            Var::concat_cols(&heads)?
        };
        self.out.forward(tape, store, merged)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng)?,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.up.forward(tape, store, x)?.gelu();
        self.down.forward(tape, store, h)
    }
}

/// Pre-norm self-attention block: `x + attn(ln(x))`, then `x + ff(ln(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), dim)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, dim, heads, rng)?,
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), dim)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, ff_dim, rng)?,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, mask: Option<&Mask>) -> Result<Var<'t>> {
        let n = self.ln_attn.forward(tape, store, x)?;
        let x = x.add(self.attn.forward(tape, store, n, n, mask)?)?;
        let n = self.ln_ff.forward(tape, store, x)?;
        x.add(self.ff.forward(tape, store, n)?)
    }
}

/// Fixed sinusoidal position table: `sin(p/10000^(2i/d))` on even columns,
/// the matching cosine on odd ones.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut values = vec![0.0; len * dim];
    for p in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64 * 2.0;
            let angle = p as f64 / 10000f64.powf(pair / dim as f64);
            values[p * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, dim], values).expect("shape matches")
}

/// Looks up `ids` in an embedding table and adds sinusoidal positions.
pub fn embed_with_positions<'t>(tape: &'t Tape, store: &ParamStore, table: ParamId, ids: &[usize]) -> Result<Var<'t>> {
    let emb = tape.param(store, table).gather_rows(ids)?;
    let pe = sinusoidal_positions(ids.len(), emb.cols());
    emb.add(tape.constant(&pe))
}
