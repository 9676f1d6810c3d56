use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{eval_examples, EvalOptions};
use super::metrics::MetricReport;
use super::model::{Model, ModelConfig, ProteinMode};
use super::stage::{train_stage, Stage, StageConfig, StageData};
use super::synthetic::{generate_synthetic, Dataset, SyntheticTaskSpec, TaskFamily};
use crate::bridge::LM_PREFIX;
use crate::corpus::{
    pack_corpus, pair_document, sample_mixture, synthetic_corpus, synthetic_lexicon, MixtureSpec, PackedSequence,
    SamplingMode, SynthCorpusConfig,
};
use crate::encoders::TEXT_ENC_PREFIX;
use crate::error::{Error, Result};
use crate::optim::{LrSchedule, OptimizerKind};
use crate::qformer::QFORMER_PREFIX;

pub const ABLATION_REPORT_FILE: &str = "ablation.json";
pub const ABLATION_TABLE_FILE: &str = "ablation.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoPretraining,
    NoAlignment,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoPretraining, Variant::NoAlignment];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPretraining => "no_pretraining",
            Variant::NoAlignment => "no_alignment",
        }
    }

    pub fn uses_pretraining(self) -> bool {
        self != Variant::NoPretraining
    }

    pub fn uses_alignment(self) -> bool {
        self != Variant::NoAlignment
    }

    pub fn protein_mode(self) -> ProteinMode {
        if self.uses_alignment() {
            ProteinMode::Aligned
        } else {
            ProteinMode::PlainText
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant `{s}`")))
    }
}

/// Budgets and data shared by every variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Downstream tasks for stage C; the run seed is added to each spec seed.
    pub tasks: Vec<SyntheticTaskSpec>,
    /// Protein-description pairs for stage B and the stage-A pair documents.
    pub pairs: SyntheticTaskSpec,
    pub corpus: SynthCorpusConfig,
    pub mixture: MixtureSpec,
    pub pack_len: usize,
    pub stage_a: StageConfig,
    pub stage_b: StageConfig,
    pub stage_c: StageConfig,
    pub eval: EvalOptions,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let adam = |stage: Stage, lr: f64, epochs: usize, batch: usize| StageConfig {
            learning_rate: lr,
            epochs: Some(epochs),
            batch_size: batch,
            optimizer: OptimizerKind::adam(),
            schedule: LrSchedule::Linear,
            ..StageConfig::new(stage)
        };
        Self {
            model: ModelConfig::compact(48, 4, 32),
            seeds: vec![0, 1, 2],
            variants: Variant::ALL.to_vec(),
            tasks: vec![
                SyntheticTaskSpec::new(TaskFamily::RetrievalPairs, 100, 128, 32, 64),
                SyntheticTaskSpec::new(TaskFamily::BinaryCls, 200, 128, 32, 128),
            ],
            pairs: SyntheticTaskSpec::new(TaskFamily::RetrievalPairs, 300, 512, 0, 0),
            corpus: SynthCorpusConfig {
                docs: 300,
                long_fraction: 0.0,
                ..SynthCorpusConfig::default()
            },
            mixture: MixtureSpec::default(),
            pack_len: 128,
            stage_a: adam(Stage::Dicp, 2e-3, 1, 8),
            stage_b: adam(Stage::Align, 2e-3, 30, 32),
            stage_c: StageConfig {
                patience: Some(5),
                ..adam(Stage::EndToEnd, 2e-3, 60, 16)
            },
            eval: EvalOptions {
                ks: vec![1, 5],
                ..EvalOptions::default()
            },
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.seeds.is_empty() || self.variants.is_empty() || self.tasks.is_empty() {
            return Err(Error::Config(
                "ablation needs at least one seed, variant and task".into(),
            ));
        }
        for (cfg, stage) in [
            (&self.stage_a, Stage::Dicp),
            (&self.stage_b, Stage::Align),
            (&self.stage_c, Stage::EndToEnd),
        ] {
            if cfg.stage != stage {
                return Err(Error::Config(format!(
                    "stage_{} must have stage {}",
                    &stage.as_str()[..1],
                    stage.as_str()
                )));
            }
        }
        if self.pairs.family != TaskFamily::RetrievalPairs {
            return Err(Error::Config("ablation pairs must be a retrieval_pairs spec".into()));
        }
        self.mixture.validate()?;
        self.tasks
            .iter()
            .chain([&self.pairs])
            .try_for_each(SyntheticTaskSpec::validate)
    }

    fn with_seed(spec: &SyntheticTaskSpec, seed: u64) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            seed: spec.seed.wrapping_add(seed),
            ..spec.clone()
        }
    }
}

/// The metric each task family is compared on.
pub fn primary_metric(family: TaskFamily, m: &MetricReport) -> Option<(&'static str, f64)> {
    match family {
        TaskFamily::RetrievalPairs => m.recall_at_k.get(&1).map(|&v| ("recall@1", v)),
        TaskFamily::BinaryCls | TaskFamily::MultiCls => m.accuracy.map(|v| ("accuracy", v)),
        TaskFamily::Regression => m.spearman.map(|v| ("spearman", v)),
    }
}

/// Stage-A corpus: synthetic documents plus the pair documents, packed and
/// drawn by the mixture.
pub fn pretraining_packs(
    cfg: &AblationConfig,
    pairs: &Dataset,
    seed: u64,
    vocab: &crate::tokenize::TextVocab,
) -> Result<Vec<PackedSequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1c9);
    let lex = synthetic_lexicon(&mut rng);
    let mut docs = synthetic_corpus(&cfg.corpus, &lex, &mut rng)?;
    let base = docs.len() as u64;
    docs.extend(
        pairs
            .train
            .iter()
            .enumerate()
            .map(|(i, ex)| pair_document(base + i as u64, &ex.text, &ex.sequence)),
    );
    let packed = pack_corpus(docs, vocab, cfg.pack_len)?;
    let mut pools: BTreeMap<_, Vec<PackedSequence>> = BTreeMap::new();
    for p in &packed.packs {
        pools.entry(p.source).or_default().push(p.clone());
    }
    let present: BTreeMap<_, f64> = cfg
        .mixture
        .ratios
        .iter()
        .filter(|(s, _)| pools.contains_key(s))
        .map(|(s, r)| (*s, *r))
        .collect();
    let total: f64 = present.values().sum();
    if total <= 0.0 {
        return Err(Error::Config(
            "mixture gives no weight to any source in the corpus".into(),
        ));
    }
    let spec = MixtureSpec {
        ratios: present.into_iter().map(|(s, r)| (s, r / total)).collect(),
    };
    sample_mixture(&spec, &pools, packed.packs.len(), SamplingMode::Stratified, &mut rng)
}

/// Models after the pretraining stages, before stage C.
///
/// Stage A updates only the LM and stage B only the Q-Former and text
/// encoder, and stage B never reads the LM, so each stage runs once per seed
/// from the shared initialization and the variants combine their outputs.
/// The result equals running the stages back to back.
pub fn pretrained_variants(
    cfg: &AblationConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<BTreeMap<Variant, Model>> {
    cfg.validate()?;
    let base = Model::new(cfg.model.clone(), seed)?;
    let pairs = generate_synthetic(&AblationConfig::with_seed(&cfg.pairs, seed))?;
    let sub = |name: &str| out_dir.map(|d| d.join(format!("seed-{seed}")).join(name));

    let a = if cfg.variants.iter().any(|v| v.uses_pretraining()) {
        let packs = pretraining_packs(cfg, &pairs, seed, &base.text_vocab)?;
        let mut m = base.clone();
        let stage = StageConfig {
            seed,
            ..cfg.stage_a.clone()
        };
        train_stage(&mut m, &stage, StageData::Corpus(&packs), sub("stage_a").as_deref())?;
        Some(m)
    } else {
        None
    };
    let b = if cfg.variants.iter().any(|v| v.uses_alignment()) {
        let mut m = base.clone();
        let stage = StageConfig {
            seed,
            ..cfg.stage_b.clone()
        };
        train_stage(
            &mut m,
            &stage,
            StageData::Pairs(&pairs.train),
            sub("stage_b").as_deref(),
        )?;
        Some(m)
    } else {
        None
    };

    let mut out = BTreeMap::new();
    for &v in &cfg.variants {
        let mut m = base.clone();
        if let (true, Some(a)) = (v.uses_pretraining(), &a) {
            m.store.copy_prefix_from(&a.store, LM_PREFIX)?;
        }
        if let (true, Some(b)) = (v.uses_alignment(), &b) {
            m.store.copy_prefix_from(&b.store, QFORMER_PREFIX)?;
            m.store.copy_prefix_from(&b.store, TEXT_ENC_PREFIX)?;
        }
        out.insert(v, m);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub variant: Variant,
    pub task: TaskFamily,
    pub metric: String,
    pub value: f64,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Primary metric for one variant and task, per seed in run order.
    pub fn values(&self, variant: Variant, task: TaskFamily) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.variant == variant && r.task == task)
            .map(|r| r.value)
            .collect()
    }

    /// Mean of the primary metric over seeds.
    pub fn mean(&self, variant: Variant, task: TaskFamily) -> Option<f64> {
        let v = self.values(variant, task);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// CSV comparison table: one row per task and metric, one column per
    /// variant holding the seed mean.
    pub fn table(&self) -> String {
        let mut variants: Vec<Variant> = self.rows.iter().map(|r| r.variant).collect();
        variants.sort();
        variants.dedup();
        let mut tasks: Vec<(TaskFamily, &str)> = self.rows.iter().map(|r| (r.task, r.metric.as_str())).collect();
        tasks.dedup();
        tasks.sort();
        tasks.dedup();
        let mut out = String::from("task,metric");
        for v in &variants {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
        for (t, metric) in tasks {
            let _ = write!(out, "{},{metric}", t.as_str());
            for &v in &variants {
                match self.mean(v, t) {
                    Some(m) => {
                        let _ = write!(out, ",{m:.4}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Trains and evaluates every variant on every task and seed. Variants share
/// data, initialization and budgets; only the ablated component differs.
pub fn run_ablation(cfg: &AblationConfig, out_dir: Option<&Path>) -> Result<AblationReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let models = pretrained_variants(cfg, seed, out_dir)?;
        let tasks = cfg
            .tasks
            .iter()
            .map(|t| generate_synthetic(&AblationConfig::with_seed(t, seed)))
            .collect::<Result<Vec<_>>>()?;
        for (&variant, pre) in &models {
            for ds in &tasks {
                let mut m = pre.clone();
                let stage = StageConfig {
                    seed,
                    protein_mode: variant.protein_mode(),
                    ..cfg.stage_c.clone()
                };
                let dir = out_dir.map(|d| {
                    d.join(format!("seed-{seed}"))
                        .join(format!("{variant}-{}", ds.family.as_str()))
                });
                train_stage(&mut m, &stage, StageData::Task(ds), dir.as_deref())?;
                let opts = EvalOptions {
                    protein_mode: variant.protein_mode(),
                    ..cfg.eval.clone()
                };
                let report = eval_examples(&m, ds.family, &ds.test, &opts)?;
                let (metric, value) = primary_metric(ds.family, &report)
                    .ok_or_else(|| Error::Invariant(format!("no primary metric for {}", ds.family.as_str())))?;
                log::info!("seed {seed} {variant} {}: {metric} = {value:.4}", ds.family.as_str());
                rows.push(AblationRow {
                    seed,
                    variant,
                    task: ds.family,
                    metric: metric.to_string(),
                    value,
                    report,
                });
            }
        }
    }
    let report = AblationReport { rows };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(ABLATION_REPORT_FILE);
        std::fs::write(&json, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join(ABLATION_TABLE_FILE);
        std::fs::write(&csv, report.table()).map_err(|e| Error::io(&csv, e))?;
    }
    Ok(report)
}
