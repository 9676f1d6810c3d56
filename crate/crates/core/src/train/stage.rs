use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Conditioning, Model, ProteinMode, REG_HEAD_PREFIX};
use super::synthetic::{Dataset, Example, TaskFamily};
use crate::bridge::{classify, lm_loss, CLS_HEAD_PREFIX, LM_PREFIX, PROJECTOR_PREFIX};
use crate::corpus::PackedSequence;
use crate::encoders::{PROT_ENC_PREFIX, TEXT_ENC_PREFIX};
use crate::error::{Error, Result};
use crate::optim::{LrSchedule, Optimizer, OptimizerKind};
use crate::qformer::{construct_negatives, pairwise_similarity, ptc_loss, ptm_loss, PtmForm, QFORMER_PREFIX};
use crate::tensor::{backward, Tape, Tensor, Var};

pub const CURVE_FILE: &str = "loss_curve.csv";
pub const REPORT_FILE: &str = "stage_report.json";

/// Every top-level parameter group.
pub const ALL_PREFIXES: [&str; 7] = [
    PROT_ENC_PREFIX,
    TEXT_ENC_PREFIX,
    QFORMER_PREFIX,
    PROJECTOR_PREFIX,
    LM_PREFIX,
    CLS_HEAD_PREFIX,
    REG_HEAD_PREFIX,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    /// Continued LM pretraining on the packed corpus.
    #[serde(rename = "a_dicp", alias = "a")]
    Dicp,
    /// Protein-text alignment of the Q-Former and text encoder.
    #[serde(rename = "b_align", alias = "b")]
    Align,
    /// End-to-end tuning on a downstream task.
    #[serde(rename = "c_e2e", alias = "c")]
    EndToEnd,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Dicp => "a_dicp",
            Stage::Align => "b_align",
            Stage::EndToEnd => "c_e2e",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub stage: Stage,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Defaults: 1 for stage A, 30 for B and C.
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Parameter prefixes held fixed; defaults depend on the stage. The
    /// protein encoder is always added.
    #[serde(default)]
    pub frozen: Option<Vec<String>>,
    /// Weights of the loss terms (`lm`, `ptc`, `ptm`, `cls`, `reg`).
    #[serde(default)]
    pub loss_weights: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub schedule: LrSchedule,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Early stopping on validation loss (stage C only).
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub ptm_form: PtmForm,
    #[serde(default)]
    pub protein_mode: ProteinMode,
    #[serde(default)]
    pub max_steps: Option<usize>,
}

fn default_lr() -> f64 {
    1e-5
}
fn default_batch() -> usize {
    8
}

impl StageConfig {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            learning_rate: default_lr(),
            epochs: None,
            batch_size: default_batch(),
            seed: 0,
            frozen: None,
            loss_weights: None,
            optimizer: OptimizerKind::default(),
            schedule: LrSchedule::Constant,
            grad_clip: None,
            patience: None,
            ptm_form: PtmForm::default(),
            protein_mode: ProteinMode::default(),
            max_steps: None,
        }
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.stage {
            Stage::Dicp => 1,
            Stage::Align | Stage::EndToEnd => 30,
        })
    }

    /// Prefixes held fixed for this stage on `model`.
    pub fn frozen_prefixes(&self, model: &Model) -> Vec<String> {
        let mut frozen: Vec<String> = match &self.frozen {
            Some(f) => f.clone(),
            None => {
                let trainable: &[&str] = match (self.stage, self.protein_mode) {
                    (Stage::Dicp, _) => &[LM_PREFIX],
                    (Stage::Align, _) => &[QFORMER_PREFIX, TEXT_ENC_PREFIX],
                    (Stage::EndToEnd, ProteinMode::Aligned) => &[
                        QFORMER_PREFIX,
                        PROJECTOR_PREFIX,
                        LM_PREFIX,
                        CLS_HEAD_PREFIX,
                        REG_HEAD_PREFIX,
                    ],
                    (Stage::EndToEnd, ProteinMode::PlainText) => &[LM_PREFIX, CLS_HEAD_PREFIX, REG_HEAD_PREFIX],
                };
                ALL_PREFIXES
                    .iter()
                    .filter(|p| !trainable.contains(p) && model.store.has_prefix(p))
                    .map(|p| p.to_string())
                    .collect()
            }
        };
        if !frozen.iter().any(|p| p == PROT_ENC_PREFIX) {
            frozen.insert(0, PROT_ENC_PREFIX.to_string());
        }
        frozen
    }

    pub fn loss_weights(&self) -> BTreeMap<String, f64> {
        if let Some(w) = &self.loss_weights {
            return w.clone();
        }
        let pairs: &[(&str, f64)] = match self.stage {
            Stage::Dicp => &[("lm", 1.0)],
            Stage::Align => &[("ptc", 1.0), ("ptm", 1.0)],
            Stage::EndToEnd => &[("lm", 1.0), ("cls", 1.0), ("reg", 1.0)],
        };
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn weight(&self, term: &str) -> f64 {
        self.loss_weights().get(term).copied().unwrap_or(0.0)
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if let Some(f) = &self.frozen {
            if let Some(p) = f.iter().find(|p| !model.store.has_prefix(p)) {
                return Err(Error::Config(format!("frozen prefix `{p}` matches no parameter")));
            }
        }
        let known = ["lm", "ptc", "ptm", "cls", "reg"];
        for (k, v) in self.loss_weights() {
            if !known.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown loss term `{k}`")));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("loss weight for {k} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Training input for one stage.
#[derive(Clone, Copy, Debug)]
pub enum StageData<'a> {
    Corpus(&'a [PackedSequence]),
    Pairs(&'a [Example]),
    Task(&'a Dataset),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub parts: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub steps: usize,
    pub epochs_run: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub val_losses: Vec<f64>,
    pub frozen: Vec<String>,
    /// Fingerprints of every parameter group after training.
    pub fingerprints: BTreeMap<String, String>,
    #[serde(skip)]
    pub curve: Vec<CurvePoint>,
}

impl StageReport {
    /// `step,epoch,loss,<terms...>` with one row per optimizer step.
    pub fn curve_csv(&self) -> String {
        let terms: Vec<String> = self
            .curve
            .first()
            .map(|p| p.parts.keys().cloned().collect())
            .unwrap_or_default();
        let mut out = String::from("step,epoch,loss");
        for t in &terms {
            out.push(',');
            out.push_str(t);
        }
        out.push('\n');
        for p in &self.curve {
            let _ = write!(out, "{},{},{}", p.step, p.epoch, p.loss);
            for t in &terms {
                let _ = write!(out, ",{}", p.parts.get(t).copied().unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
        out
    }
}

/// Per-example supervision in stage C.
#[derive(Clone, Debug)]
enum Target {
    Tokens(Vec<usize>),
    Label(usize),
    Value(f64),
}

struct TaskItem {
    cond: Conditioning,
    target: Target,
}

struct PairItem {
    h: Tensor,
    ids: Vec<usize>,
}

fn task_items(model: &Model, examples: &[Example], family: TaskFamily, mode: ProteinMode) -> Result<Vec<TaskItem>> {
    examples
        .iter()
        .map(|ex| {
            let target = match family {
                TaskFamily::RetrievalPairs => Target::Tokens(model.answer_ids(&ex.text)),
                TaskFamily::BinaryCls | TaskFamily::MultiCls => Target::Label(
                    ex.label
                        .ok_or_else(|| Error::Invalid(format!("example {} has no label", ex.id)))?,
                ),
                TaskFamily::Regression => Target::Value(
                    ex.target
                        .ok_or_else(|| Error::Invalid(format!("example {} has no target", ex.id)))?,
                ),
            };
            Ok(TaskItem {
                cond: model.conditioning(&ex.sequence, mode)?,
                target,
            })
        })
        .collect()
}

fn sum_vars<'t>(vars: Vec<Var<'t>>) -> Result<Var<'t>> {
    let n = vars.len() as f64;
    let mut it = vars.into_iter();
    let first = it.next().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    Ok(it.try_fold(first, |acc, v| acc.add(v))?.scale(1.0 / n))
}

/// Loss of one stage-C example; the key names the loss term.
fn task_loss<'t>(model: &Model, tape: &'t Tape, item: &TaskItem, question: &str) -> Result<(&'static str, Var<'t>)> {
    let prompt = model.prompt(tape, &item.cond, question)?;
    match &item.target {
        Target::Tokens(t) => Ok(("lm", lm_loss(tape, &model.store, &model.lm, prompt, t)?)),
        Target::Label(c) => {
            let head = model
                .cls_head
                .as_ref()
                .ok_or_else(|| Error::Config("model has no classification head".into()))?;
            let p = classify(tape, &model.store, &model.lm, head, prompt, head.num_classes())?;
            Ok(("cls", p.pick(&[*c])?.clamp(1e-12, 1.0).ln()?.neg().sum()))
        }
        Target::Value(y) => {
            let d = model.regress(tape, prompt)?.shift(-y);
            Ok(("reg", d.mul(d)?.sum()))
        }
    }
}

fn batches(order: &[usize], size: usize, min_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < min_size) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(tail);
    }
    out
}

/// Runs one training stage in place on `model`.
///
/// Frozen groups are fingerprinted before and after; any change is an
/// invariant violation. A non-finite loss aborts with the step index. With
/// `out_dir`, the checkpoint, CSV loss curve and JSON report are written
/// there.
pub fn train_stage(
    model: &mut Model,
    cfg: &StageConfig,
    data: StageData<'_>,
    out_dir: Option<&Path>,
) -> Result<StageReport> {
    cfg.validate(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let task = match (cfg.stage, data) {
        (Stage::Dicp, StageData::Corpus(_)) | (Stage::Align, StageData::Pairs(_)) => None,
        (Stage::EndToEnd, StageData::Task(ds)) => {
            match ds.family {
                TaskFamily::BinaryCls | TaskFamily::MultiCls => {
                    model.ensure_cls_head(ds.num_classes().expect("classification family"), cfg.seed)?
                }
                TaskFamily::Regression => model.ensure_reg_head(cfg.seed)?,
                TaskFamily::RetrievalPairs => {}
            }
            Some(ds)
        }
        (stage, _) => {
            return Err(Error::Config(format!(
                "stage {} was given the wrong kind of data",
                stage.as_str()
            )));
        }
    };

    let frozen = cfg.frozen_prefixes(model);
    model.store.set_all_trainable(true);
    for p in &frozen {
        model.store.set_trainable(p, false);
    }
    let before: Vec<String> = frozen.iter().map(|p| model.fingerprint(p)).collect();

    let (packs, pairs, items, val_items) = match data {
        StageData::Corpus(packs) => {
            let max = model.cfg.lm.max_len + 1;
            if let Some(p) = packs.iter().find(|p| p.len() > max) {
                return Err(Error::TooLong {
                    len: p.len(),
                    max_len: max,
                });
            }
            let usable: Vec<&[usize]> = packs
                .iter()
                .map(|p| p.tokens.as_slice())
                .filter(|t| t.len() >= 2)
                .collect();
            (usable, Vec::new(), Vec::new(), Vec::new())
        }
        StageData::Pairs(examples) => {
            let pairs = examples
                .iter()
                .map(|ex| {
                    Ok(PairItem {
                        h: model.protein_states(&ex.sequence)?,
                        ids: model.text_ids(&ex.text),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if pairs.len() < 2 {
                return Err(Error::Invalid("alignment needs at least 2 pairs".into()));
            }
            (Vec::new(), pairs, Vec::new(), Vec::new())
        }
        StageData::Task(ds) => {
            let train = task_items(model, &ds.train, ds.family, cfg.protein_mode)?;
            let val = task_items(model, &ds.val, ds.family, cfg.protein_mode)?;
            (Vec::new(), Vec::new(), train, val)
        }
    };
    let n = match cfg.stage {
        Stage::Dicp => packs.len(),
        Stage::Align => pairs.len(),
        Stage::EndToEnd => items.len(),
    };
    if n == 0 {
        return Err(Error::Invalid(format!(
            "stage {} has no training items",
            cfg.stage.as_str()
        )));
    }
    let question = task.map(|d| d.question()).unwrap_or_default();

    let mut opt = Optimizer::new(cfg.optimizer.clone(), cfg.learning_rate, cfg.grad_clip, &model.store)?;
    let (w_lm, w_ptc, w_ptm) = (cfg.weight("lm"), cfg.weight("ptc"), cfg.weight("ptm"));
    let mut curve = Vec::new();
    let mut val_losses = Vec::new();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut epochs_run = 0;
    let mut step = 0;
    let min_batch = if cfg.stage == Stage::Align { 2 } else { 1 };
    let per_epoch = batches(&(0..n).collect::<Vec<_>>(), cfg.batch_size, min_batch).len();
    let planned = cfg
        .max_steps
        .map_or(per_epoch * cfg.epochs(), |m| m.min(per_epoch * cfg.epochs()));
    'epochs: for epoch in 0..cfg.epochs() {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for batch in batches(&order, cfg.batch_size, min_batch) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let tape = Tape::new();
            let mut forward = || -> Result<BTreeMap<String, Var<'_>>> {
                let mut parts: BTreeMap<String, Var<'_>> = BTreeMap::new();
                match cfg.stage {
                    Stage::Dicp => {
                        let losses = batch
                            .iter()
                            .map(|&i| {
                                let t = packs[i];
                                let prompt = model.lm.embed_tokens(&tape, &model.store, &t[..1])?;
                                lm_loss(&tape, &model.store, &model.lm, prompt, &t[1..])
                            })
                            .collect::<Result<Vec<_>>>()?;
                        parts.insert("lm".into(), sum_vars(losses)?.scale(w_lm));
                    }
                    Stage::Align => {
                        let hv: Vec<Var<'_>> = batch.iter().map(|&i| tape.constant(&pairs[i].h)).collect();
                        let texts: Vec<Vec<usize>> = batch.iter().map(|&i| pairs[i].ids.clone()).collect();
                        if w_ptc > 0.0 {
                            let zp = hv
                                .iter()
                                .map(|&h| model.qformer.forward(&tape, &model.store, h, None))
                                .collect::<Result<Vec<_>>>()?;
                            let zt = texts
                                .iter()
                                .map(|t| model.text_enc.forward(&tape, &model.store, t))
                                .collect::<Result<Vec<_>>>()?;
                            let s = pairwise_similarity(&zp, &zt, model.qformer.inv_temperature(&tape, &model.store))?;
                            parts.insert("ptc".into(), ptc_loss(s)?.scale(w_ptc));
                        }
                        if w_ptm > 0.0 {
                            let neg = construct_negatives(batch.len(), &mut rng)?;
                            let l = ptm_loss(&tape, &model.store, &model.qformer, &hv, &texts, &neg, cfg.ptm_form)?;
                            parts.insert("ptm".into(), l.scale(w_ptm));
                        }
                    }
                    Stage::EndToEnd => {
                        let mut grouped: BTreeMap<&str, Vec<Var<'_>>> = BTreeMap::new();
                        for &i in &batch {
                            let (term, l) = task_loss(model, &tape, &items[i], question)?;
                            grouped.entry(term).or_default().push(l);
                        }
                        for (term, ls) in grouped {
                            let k = ls.len() as f64 / batch.len() as f64;
                            parts.insert(term.into(), sum_vars(ls)?.scale(k * cfg.weight(term)));
                        }
                    }
                }
                Ok(parts)
            };
            // A non-finite value anywhere in the forward pass means the loss is not finite.
            let parts = match forward() {
                Err(Error::Numeric { op, detail }) => {
                    log::error!("step {step}: {op}: {detail}");
                    return Err(Error::NonFiniteLoss { step });
                }
                r => r?,
            };
            let total = sum_vars(parts.values().copied().collect())?.scale(parts.len() as f64);
            let value = total.item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            curve.push(CurvePoint {
                step,
                epoch,
                loss: value,
                parts: parts.iter().map(|(k, v)| (k.clone(), v.item())).collect(),
            });
            backward(total, &mut model.store)?;
            opt.set_lr(cfg.schedule.rate(cfg.learning_rate, step, planned));
            opt.step(&mut model.store)?;
            step += 1;
        }
        epochs_run += 1;
        if let (Some(patience), false) = (cfg.patience, val_items.is_empty()) {
            let v = validation_loss(model, &val_items, question)?;
            val_losses.push(v);
            if v < best {
                best = v;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    log::info!("early stop after epoch {epoch}: validation loss flat for {patience} epochs");
                    break;
                }
            }
        }
    }

    for (p, fp) in frozen.iter().zip(&before) {
        if &model.fingerprint(p) != fp {
            return Err(Error::Invariant(format!(
                "frozen group {p} changed during stage {}",
                cfg.stage.as_str()
            )));
        }
    }
    model.store.set_all_trainable(true);
    model.store.set_trainable(PROT_ENC_PREFIX, false);

    let report = StageReport {
        stage: cfg.stage,
        steps: step,
        epochs_run,
        initial_loss: curve.first().map(|p| p.loss),
        final_loss: curve.last().map(|p| p.loss),
        val_losses,
        frozen,
        fingerprints: ALL_PREFIXES
            .iter()
            .filter(|p| model.store.has_prefix(p))
            .map(|p| (p.to_string(), model.fingerprint(p)))
            .collect(),
        curve,
    };
    if let Some(dir) = out_dir {
        model.save(dir)?;
        let csv = dir.join(CURVE_FILE);
        std::fs::write(&csv, report.curve_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(REPORT_FILE);
        std::fs::write(&json, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&json, e))?;
    }
    Ok(report)
}

fn validation_loss(model: &Model, items: &[TaskItem], question: &str) -> Result<f64> {
    let mut total = 0.0;
    for item in items {
        let tape = Tape::new();
        total += task_loss(model, &tape, item, question)?.1.item();
    }
    Ok(total / items.len() as f64)
}
