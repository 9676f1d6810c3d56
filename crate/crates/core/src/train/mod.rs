//! Training stages, synthetic tasks, evaluation and the ablation harness.

pub mod ablation;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod run;
pub mod stage;
pub mod synthetic;

pub use ablation::{
    pretrained_variants, primary_metric, run_ablation, AblationConfig, AblationReport, AblationRow, Variant,
};
pub use eval::{eval_examples, eval_retrieval, eval_suite, eval_task, EvalOptions, Split};
pub use metrics::{
    average_ranks, eval_classification, eval_spearman, recall_at_k, ClassificationMetrics, MetricReport,
};
pub use model::{Conditioning, Model, ModelConfig, ProteinMode, CHECKPOINT_FILE, REG_HEAD_PREFIX};
pub use run::{load_config, run_stage, DataConfig, Hit, RetrievalIndex, RunConfig, INDEX_FILE};
pub use stage::{train_stage, Stage, StageConfig, StageData, StageReport, ALL_PREFIXES};
pub use synthetic::{generate_synthetic, Dataset, Example, SyntheticTaskSpec, TaskFamily};
