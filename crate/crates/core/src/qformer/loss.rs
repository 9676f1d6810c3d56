use rand::Rng;
use serde::{Deserialize, Serialize};

use super::QFormer;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor, Var};

/// Probability clamp applied before every log in the matching loss.
pub const PTM_CLAMP: f64 = 1e-7;

/// Which reading of the matching objective to optimise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PtmForm {
    /// Matched/unmatched binary cross-entropy averaged over all `3B` pairs.
    #[default]
    Bce,
    /// `(1/B) Σ [log f(p′,t) + log f(p,t″) − log f(p,t)]` in its literal three-term form.
    Verbatim,
}

/// `S[i][j] = max_k cos(zp_i[k], zt_j) · inv_tau` on the tape.
///
/// `zp` holds `K × d` latents, `zt` holds `[d]` text vectors; both batches
/// must have the same length.
pub fn pairwise_similarity<'t>(zp: &[Var<'t>], zt: &[Var<'t>], inv_tau: Var<'t>) -> Result<Var<'t>> {
    if zp.len() != zt.len() || zp.is_empty() {
        return Err(Error::shape("pairwise_similarity", &[zp.len()], &[zt.len()]));
    }
    let k = zp[0].rows();
    if zp.iter().any(|z| z.rows() != k) {
        return Err(Error::Invalid("all protein latents must have the same K".into()));
    }
    let p = Var::concat_rows(zp)?.l2_normalize_rows()?;
    let t = Var::concat_rows(zt)?.l2_normalize_rows()?;
    p.matmul(t.transpose()?)?.group_max_rows(k)?.scale_by(inv_tau)
}

/// Plain-value counterpart of [`pairwise_similarity`] for evaluation.
pub fn similarity_matrix(zp: &[Tensor], zt: &[Tensor], tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("temperature must be > 0, got {tau}")));
    }
    let normalize = |rows: &[f64], d: usize| -> Result<Vec<f64>> {
        let mut out = rows.to_vec();
        for r in out.chunks_mut(d) {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::Numeric {
                    op: "cosine_sim",
                    detail: "zero-norm input".into(),
                });
            }
            r.iter_mut().for_each(|x| *x /= n);
        }
        Ok(out)
    };
    let b = zt.len();
    let d = zt.first().map(|t| t.numel()).unwrap_or(0);
    let texts: Vec<Vec<f64>> = zt.iter().map(|t| normalize(t.values(), d)).collect::<Result<_>>()?;
    let mut s = vec![0.0; zp.len() * b];
    for (i, z) in zp.iter().enumerate() {
        if z.cols() != d {
            return Err(Error::shape("pairwise_similarity", z.shape(), &[d]));
        }
        let rows = normalize(z.values(), d)?;
        for (j, t) in texts.iter().enumerate() {
            let best = rows
                .chunks(d)
                .map(|r| r.iter().zip(t).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            s[i * b + j] = best / tau;
        }
    }
    Tensor::new(vec![zp.len(), b], s)
}

/// Contrastive loss over a `B × B` similarity matrix: the negated sum of the
/// mean diagonal log-softmax over rows and over columns.
pub fn ptc_loss<'t>(s: Var<'t>) -> Result<Var<'t>> {
    let shape = s.shape();
    if shape.len() != 2 || shape[0] != shape[1] || shape[0] == 0 {
        return Err(Error::shape("ptc_loss", &shape, &[shape[0], shape[0]]));
    }
    let b = shape[0];
    let diag: Vec<usize> = (0..b).collect();
    let p2t = s.log_softmax()?.pick(&diag)?.mean();
    let t2p = s.transpose()?.log_softmax()?.pick(&diag)?.mean();
    Ok(p2t.add(t2p)?.neg())
}

/// In-batch negatives. For item `i`, `wrong_protein[i]` indexes the protein
/// paired with text `i` and `wrong_text[i]` the text paired with protein `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Negatives {
    pub wrong_protein: Vec<usize>,
    pub wrong_text: Vec<usize>,
}

impl Negatives {
    /// All `2B` negative `(protein, text)` index pairs.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let a = self.wrong_protein.iter().enumerate().map(|(i, &j)| (j, i));
        let b = self.wrong_text.iter().enumerate().map(|(i, &j)| (i, j));
        a.chain(b).collect()
    }
}

/// Draws both wrong indices uniformly from the batch excluding `i`.
pub fn construct_negatives<R: Rng + ?Sized>(batch: usize, rng: &mut R) -> Result<Negatives> {
    if batch < 2 {
        return Err(Error::Invalid(format!(
            "negatives need a batch of at least 2, got {batch}"
        )));
    }
    let mut other = |i: usize| {
        let j = rng.gen_range(0..batch - 1);
        if j >= i {
            j + 1
        } else {
            j
        }
    };
    let mut wrong_protein = Vec::with_capacity(batch);
    let mut wrong_text = Vec::with_capacity(batch);
    for i in 0..batch {
        wrong_protein.push(other(i));
        wrong_text.push(other(i));
    }
    Ok(Negatives {
        wrong_protein,
        wrong_text,
    })
}

/// Matching loss from per-item probabilities, each of shape `[B]`:
/// positives `f(p_i, t_i)`, wrong-protein `f(p_j, t_i)`, wrong-text `f(p_i, t_j)`.
pub fn ptm_loss_from_probs<'t>(
    pos: Var<'t>,
    wrong_protein: Var<'t>,
    wrong_text: Var<'t>,
    form: PtmForm,
) -> Result<Var<'t>> {
    let b = pos.numel();
    if wrong_protein.numel() != b || wrong_text.numel() != b || b == 0 {
        return Err(Error::shape("ptm_loss", &pos.shape(), &wrong_protein.shape()));
    }
    let clamp = |v: Var<'t>| v.clamp(PTM_CLAMP, 1.0 - PTM_CLAMP);
    let log_pos = clamp(pos).ln()?.sum();
    match form {
        PtmForm::Bce => {
            let one_minus = |v: Var<'t>| clamp(v).neg().shift(1.0).ln();
            let total = log_pos
                .add(one_minus(wrong_protein)?.sum())?
                .add(one_minus(wrong_text)?.sum())?;
            Ok(total.scale(-1.0 / (3 * b) as f64))
        }
        PtmForm::Verbatim => {
            let neg = clamp(wrong_protein).ln()?.sum().add(clamp(wrong_text).ln()?.sum())?;
            Ok(neg.sub(log_pos)?.scale(1.0 / b as f64))
        }
    }
}

/// Scores the `B` positives and `2B` negatives with the joint matching pass
/// and combines them with [`ptm_loss_from_probs`].
pub fn ptm_loss<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    qformer: &QFormer,
    proteins: &[Var<'t>],
    texts: &[Vec<usize>],
    negatives: &Negatives,
    form: PtmForm,
) -> Result<Var<'t>> {
    let b = proteins.len();
    if texts.len() != b || negatives.wrong_protein.len() != b || negatives.wrong_text.len() != b {
        return Err(Error::shape("ptm_loss", &[b], &[texts.len()]));
    }
    let score = |p: usize, t: usize| qformer.ptm_score(tape, store, proteins[p], &texts[t]);
    let collect = |pairs: &mut dyn Iterator<Item = (usize, usize)>| -> Result<Var<'t>> {
        let parts = pairs.map(|(p, t)| score(p, t)).collect::<Result<Vec<_>>>()?;
        Var::concat_rows(&parts)?.reshape(vec![b])
    };
    let pos = collect(&mut (0..b).map(|i| (i, i)))?;
    let wp = collect(&mut (0..b).map(|i| (negatives.wrong_protein[i], i)))?;
    let wt = collect(&mut (0..b).map(|i| (i, negatives.wrong_text[i])))?;
    ptm_loss_from_probs(pos, wp, wt, form)
}
