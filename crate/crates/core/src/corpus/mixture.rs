use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PackedSequence, Source};
use crate::error::{Error, Result};

/// Per-source sampling weights; fractions summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixtureSpec {
    pub ratios: BTreeMap<Source, f64>,
}

impl Default for MixtureSpec {
    /// Domain text, sequence-bearing text and replay pools in the reference
    /// proportions.
    fn default() -> Self {
        let ratios = [
            (Source::Textbook, 0.0605),
            (Source::Pubmed, 0.3216),
            (Source::SeqInjected, 0.0360),
            (Source::ProteinPair, 0.1995),
            (Source::Math, 0.2234),
            (Source::Code, 0.0777),
            (Source::Science, 0.0813),
        ];
        Self {
            ratios: ratios.into_iter().collect(),
        }
    }
}

impl MixtureSpec {
    pub fn single(source: Source) -> Self {
        Self {
            ratios: [(source, 1.0)].into_iter().collect(),
        }
    }

    pub fn ratio(&self, source: Source) -> f64 {
        self.ratios.get(&source).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((s, r)) = self.ratios.iter().find(|(_, r)| !r.is_finite() || **r < 0.0) {
            return Err(Error::Config(format!(
                "mixture ratio for {s} must be finite and >= 0, got {r}"
            )));
        }
        let sum: f64 = self.ratios.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Exact per-source counts (largest remainder), then a seeded shuffle.
    #[default]
    Stratified,
    /// Independent categorical draws.
    Multinomial,
}

/// One sampled pack: an index into the pool of `source`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draw {
    pub source: Source,
    pub index: usize,
}

/// Largest-remainder apportionment of `n` draws; ties in the remainder go to
/// the earlier source.
pub fn stratified_counts(spec: &MixtureSpec, n: usize) -> Result<BTreeMap<Source, usize>> {
    spec.validate()?;
    let mut counts: BTreeMap<Source, usize> = BTreeMap::new();
    let mut rema: Vec<(Source, f64)> = Vec::new();
    for (&s, &r) in &spec.ratios {
        let exact = r * n as f64;
        counts.insert(s, exact.floor() as usize);
        rema.push((s, exact - exact.floor()));
    }
    let assigned: usize = counts.values().sum();
    rema.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (s, _) in rema.iter().take(n.saturating_sub(assigned)) {
        *counts.get_mut(s).expect("source present") += 1;
    }
    Ok(counts)
}

/// Samples `n` draws from pools with the given sizes. Packs inside a pool are
/// chosen uniformly with replacement.
pub fn sample_mixture_draws<R: Rng + ?Sized>(
    spec: &MixtureSpec,
    pool_sizes: &BTreeMap<Source, usize>,
    n: usize,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<Vec<Draw>> {
    spec.validate()?;
    for (&s, &r) in &spec.ratios {
        if r > 0.0 && pool_sizes.get(&s).copied().unwrap_or(0) == 0 {
            return Err(Error::Invalid(format!("pool for source {s} is empty")));
        }
    }
    let sources: Vec<Source> = match mode {
        SamplingMode::Stratified => {
            let mut v: Vec<Source> = stratified_counts(spec, n)?
                .into_iter()
                .flat_map(|(s, c)| std::iter::repeat_n(s, c))
                .collect();
            v.shuffle(rng);
            v
        }
        SamplingMode::Multinomial => {
            let live: Vec<(Source, f64)> = spec
                .ratios
                .iter()
                .filter(|(_, r)| **r > 0.0)
                .map(|(s, r)| (*s, *r))
                .collect();
            (0..n)
                .map(|_| {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    for &(s, r) in &live {
                        acc += r;
                        if u < acc {
                            return s;
                        }
                    }
                    live.last().expect("spec has a nonzero ratio").0
                })
                .collect()
        }
    };
    Ok(sources
        .into_iter()
        .map(|source| Draw {
            source,
            index: rng.gen_range(0..pool_sizes[&source]),
        })
        .collect())
}

/// Draws `n` packs from per-source pools according to `spec`.
pub fn sample_mixture<R: Rng + ?Sized>(
    spec: &MixtureSpec,
    pools: &BTreeMap<Source, Vec<PackedSequence>>,
    n: usize,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<Vec<PackedSequence>> {
    let sizes = pools.iter().map(|(s, p)| (*s, p.len())).collect();
    let draws = sample_mixture_draws(spec, &sizes, n, mode, rng)?;
    Ok(draws.into_iter().map(|d| pools[&d.source][d.index].clone()).collect())
}
