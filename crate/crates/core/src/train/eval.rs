use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{eval_classification, eval_spearman, recall_at_k, transpose, MetricReport};
use super::model::{Conditioning, Model, ProteinMode};
use super::synthetic::{Dataset, Example, TaskFamily};
use crate::bridge::{argmax, classify, generate, lm_loss};
use crate::error::{Error, Result};
use crate::qformer::similarity_matrix;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    #[default]
    Test,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub protein_mode: ProteinMode,
    /// Cut-offs for retrieval recall.
    pub ks: Vec<usize>,
    /// Generation budget for exact-match scoring.
    pub max_new: usize,
    /// Rank every candidate description by LM likelihood (O(n²) passes).
    pub likelihood_ranking: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            protein_mode: ProteinMode::Aligned,
            ks: vec![1, 5, 10],
            max_new: 48,
            likelihood_ranking: true,
        }
    }
}

fn to_tensor(v: Var<'_>) -> Result<Tensor> {
    Tensor::new(v.shape(), v.value())
}

/// Embedded prompt for a protein and question, detached from any tape.
pub fn embed_prompt(model: &Model, cond: &Conditioning, question: &str) -> Result<Tensor> {
    let tape = Tape::new();
    to_tensor(model.prompt(&tape, cond, question)?)
}

/// Greedy answer tokens (EOS excluded).
pub fn generate_ids(model: &Model, cond: &Conditioning, question: &str, max_new: usize) -> Result<Vec<usize>> {
    generate(&model.store, &model.lm, &embed_prompt(model, cond, question)?, max_new)
}

/// Greedy answer text with the leading space removed.
pub fn generate_answer(model: &Model, cond: &Conditioning, question: &str, max_new: usize) -> Result<String> {
    let ids = generate_ids(model, cond, question, max_new)?;
    Ok(model.text_vocab.decode(&ids)?.trim_start().to_string())
}

/// Mean per-token log-likelihood of `text` (plus EOS) as the answer.
pub fn answer_log_likelihood(model: &Model, prompt: &Tensor, text: &str) -> Result<f64> {
    let tape = Tape::new();
    let l = lm_loss(
        &tape,
        &model.store,
        &model.lm,
        tape.constant(prompt),
        &model.answer_ids(text),
    )?;
    Ok(-l.item())
}

/// `n × n` matrix whose entry `(i, j)` is the likelihood of description `j`
/// given protein `i`.
pub fn likelihood_scores(model: &Model, examples: &[Example], question: &str, mode: ProteinMode) -> Result<Tensor> {
    let n = examples.len();
    let mut out = Vec::with_capacity(n * n);
    for ex in examples {
        let prompt = embed_prompt(model, &model.conditioning(&ex.sequence, mode)?, question)?;
        for cand in examples {
            out.push(answer_log_likelihood(model, &prompt, &cand.text)?);
        }
    }
    Tensor::new(vec![n, n], out)
}

/// Recall in the alignment space: Q-Former latents against text-encoder
/// embeddings, both directions.
pub fn eval_retrieval(model: &Model, examples: &[Example], ks: &[usize]) -> Result<MetricReport> {
    let zp = examples
        .iter()
        .map(|ex| model.protein_latent(&ex.sequence))
        .collect::<Result<Vec<_>>>()?;
    let zt = examples
        .iter()
        .map(|ex| model.text_embedding(&ex.text))
        .collect::<Result<Vec<_>>>()?;
    let s = similarity_matrix(&zp, &zt, model.qformer.temperature(&model.store))?;
    Ok(MetricReport {
        recall_at_k: recall_at_k(&s, ks)?,
        text_recall_at_k: recall_at_k(&transpose(&s), ks)?,
        ..MetricReport::default()
    })
}

/// Predicted class per example.
pub fn predict_classes(model: &Model, examples: &[Example], question: &str, mode: ProteinMode) -> Result<Vec<usize>> {
    let head = model
        .cls_head
        .as_ref()
        .ok_or_else(|| Error::Config("model has no classification head".into()))?;
    examples
        .iter()
        .map(|ex| {
            let tape = Tape::new();
            let prompt = model.prompt(&tape, &model.conditioning(&ex.sequence, mode)?, question)?;
            Ok(classify(&tape, &model.store, &model.lm, head, prompt, head.num_classes())?.with_value(argmax))
        })
        .collect()
}

pub fn predict_values(model: &Model, examples: &[Example], question: &str, mode: ProteinMode) -> Result<Vec<f64>> {
    examples
        .iter()
        .map(|ex| {
            let tape = Tape::new();
            let prompt = model.prompt(&tape, &model.conditioning(&ex.sequence, mode)?, question)?;
            Ok(model.regress(&tape, prompt)?.item())
        })
        .collect()
}

/// Metrics for one task family on `examples`.
///
/// Description tasks report exact match of greedy generations and, when
/// enabled, recall over likelihood-ranked candidates. Classification reports
/// accuracy and macro F1; regression reports Spearman's rho (0 when the
/// predictions are constant).
pub fn eval_examples(
    model: &Model,
    family: TaskFamily,
    examples: &[Example],
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if examples.is_empty() {
        return Err(Error::Invalid("nothing to evaluate".into()));
    }
    let question = family.question();
    let mode = opts.protein_mode;
    let mut report = MetricReport::default();
    match family {
        TaskFamily::RetrievalPairs => {
            let mut hits = 0;
            for ex in examples {
                let ids = generate_ids(model, &model.conditioning(&ex.sequence, mode)?, question, opts.max_new)?;
                let want = model.answer_ids(&ex.text);
                hits += usize::from(ids[..] == want[..want.len() - 1]);
            }
            report.exact_match = Some(hits as f64 / examples.len() as f64);
            if opts.likelihood_ranking && examples.len() >= 2 {
                let ks: Vec<usize> = opts.ks.iter().copied().filter(|&k| k <= examples.len()).collect();
                let s = likelihood_scores(model, examples, question, mode)?;
                report.recall_at_k = recall_at_k(&s, &ks)?;
            }
        }
        TaskFamily::BinaryCls | TaskFamily::MultiCls => {
            let preds = predict_classes(model, examples, question, mode)?;
            let golds = examples
                .iter()
                .map(|ex| {
                    ex.label
                        .ok_or_else(|| Error::Invalid(format!("example {} has no label", ex.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            let m = eval_classification(&preds, &golds)?;
            report.accuracy = Some(m.accuracy);
            report.macro_f1 = Some(m.macro_f1);
        }
        TaskFamily::Regression => {
            let preds = predict_values(model, examples, question, mode)?;
            let golds = examples
                .iter()
                .map(|ex| {
                    ex.target
                        .ok_or_else(|| Error::Invalid(format!("example {} has no target", ex.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            report.spearman = Some(match eval_spearman(&preds, &golds) {
                Err(Error::Numeric { .. }) if preds.iter().all(|p| p.is_finite()) => {
                    log::warn!("constant regression predictions; reporting rho = 0");
                    0.0
                }
                r => r?,
            });
        }
    }
    report.validate()?;
    Ok(report)
}

pub fn eval_task(model: &Model, ds: &Dataset, split: Split, opts: &EvalOptions) -> Result<MetricReport> {
    eval_examples(model, ds.family, ds.split(split), opts)
}

/// Evaluates several datasets and nests their reports under the family name.
pub fn eval_suite(model: &Model, sets: &[Dataset], split: Split, opts: &EvalOptions) -> Result<MetricReport> {
    let per_task: BTreeMap<String, MetricReport> = sets
        .iter()
        .map(|ds| Ok((ds.family.as_str().to_string(), eval_task(model, ds, split, opts)?)))
        .collect::<Result<_>>()?;
    Ok(MetricReport {
        per_task,
        ..MetricReport::default()
    })
}
