#![allow(dead_code)]

use biobridge::encoders::{EncoderConfig, ProteinEncoder, TextEncoder};
use biobridge::params::ParamStore;
use biobridge::qformer::{QFormer, QFormerConfig};
use biobridge::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tiny_encoder(dim: usize) -> EncoderConfig {
    EncoderConfig {
        num_layers: 1,
        num_heads: 2,
        model_dim: dim,
        ff_dim: 2 * dim,
        max_len: 512,
    }
}

pub fn tiny_qformer(k: usize, dim: usize) -> QFormerConfig {
    QFormerConfig {
        num_queries: k,
        num_layers: 1,
        num_heads: 2,
        dim,
        ff_dim: 2 * dim,
        protein_dim: dim,
        ..QFormerConfig::default()
    }
}

/// Small protein encoder + text encoder + Q-Former sharing one store.
pub struct Tiny {
    pub store: ParamStore,
    pub prot: ProteinEncoder,
    pub text: TextEncoder,
    pub qf: QFormer,
}

pub fn tiny_alignment(k: usize, dim: usize, text_vocab: usize, seed: u64) -> Tiny {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let prot = ProteinEncoder::new(&mut store, tiny_encoder(dim), 24, &mut r).unwrap();
    let text = TextEncoder::new(&mut store, tiny_encoder(dim), text_vocab, 0, &mut r).unwrap();
    let qf = QFormer::new(&mut store, tiny_qformer(k, dim), text_vocab, &mut r).unwrap();
    Tiny { store, prot, text, qf }
}

pub fn random_ids(r: &mut ChaCha8Rng, len: usize, lo: usize, hi: usize) -> Vec<usize> {
    use rand::Rng;
    (0..len).map(|_| r.gen_range(lo..hi)).collect()
}

pub fn randn(shape: Vec<usize>, seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

/// `log Σ exp(x)` with max-subtraction, written independently of the library.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
