use std::collections::{BTreeMap, BTreeSet};

use biobridge::bridge::LM_PREFIX;
use biobridge::corpus::SynthCorpusConfig;
use biobridge::encoders::{PROT_ENC_PREFIX, TEXT_ENC_PREFIX};
use biobridge::optim::{LrSchedule, OptimizerKind};
use biobridge::qformer::QFORMER_PREFIX;
use biobridge::tensor::Tensor;
use biobridge::train::ablation::pretraining_packs;
use biobridge::train::eval::generate_answer;
use biobridge::train::stage::CURVE_FILE;
use biobridge::train::synthetic::{dominant_group, enriched_pair, enrichment_description, hydrophobic_fraction};
use biobridge::train::*;
use biobridge::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig::compact(16, 2, 16)
}

fn tiny_model(seed: u64) -> Model {
    Model::new(tiny_config(), seed).unwrap()
}

fn pairs(n: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticTaskSpec::new(TaskFamily::RetrievalPairs, seed, n, 0, 0)).unwrap()
}

fn stage(stage: Stage, lr: f64, epochs: usize, batch: usize) -> StageConfig {
    StageConfig {
        learning_rate: lr,
        epochs: Some(epochs),
        batch_size: batch,
        ..StageConfig::new(stage)
    }
}

fn values_by_name(m: &Model) -> BTreeMap<String, Vec<u64>> {
    m.store
        .ids()
        .map(|id| {
            let bits = m.store.get(id).values().iter().map(|v| v.to_bits()).collect();
            (m.store.name(id).to_string(), bits)
        })
        .collect()
}

/// Names whose values differ between two models with the same layout.
fn changed_params(a: &Model, b: &Model) -> Vec<String> {
    let (va, vb) = (values_by_name(a), values_by_name(b));
    va.iter()
        .filter(|(k, v)| vb.get(*k) != Some(v))
        .map(|(k, _)| k.clone())
        .collect()
}

// ---------------------------------------------------------------- synthetic

#[test]
fn synthetic_is_deterministic_under_seed() {
    for family in [
        TaskFamily::RetrievalPairs,
        TaskFamily::BinaryCls,
        TaskFamily::MultiCls,
        TaskFamily::Regression,
    ] {
        let spec = SyntheticTaskSpec::new(family, 7, 30, 10, 10);
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = SyntheticTaskSpec { seed: 8, ..spec };
        assert_ne!(generate_synthetic(&spec).unwrap(), generate_synthetic(&other).unwrap());
    }
}

#[test]
fn synthetic_labels_match_rule_recomputed_from_sequences() {
    let names: BTreeMap<&str, usize> = [("hydrophobic", 0), ("polar", 1), ("positive", 2), ("negative", 3)].into();
    for family in [
        TaskFamily::RetrievalPairs,
        TaskFamily::BinaryCls,
        TaskFamily::MultiCls,
        TaskFamily::Regression,
    ] {
        let ds = generate_synthetic(&SyntheticTaskSpec::new(family, 11, 200, 50, 50)).unwrap();
        for ex in ds.train.iter().chain(&ds.val).chain(&ds.test) {
            match family {
                TaskFamily::RetrievalPairs => {
                    let (a, b) = enriched_pair(&ex.sequence).expect("unique top pair");
                    assert_eq!(ex.text, enrichment_description(a, b).unwrap());
                }
                TaskFamily::BinaryCls => {
                    let h = hydrophobic_fraction(&ex.sequence);
                    assert_eq!(ex.label, Some(usize::from(h > 0.5)));
                    assert_eq!(ex.text, if h > 0.5 { "yes" } else { "no" });
                }
                TaskFamily::MultiCls => {
                    let g = dominant_group(&ex.sequence).expect("unique dominant group");
                    assert_eq!(ex.label, Some(g));
                    assert_eq!(names[ex.text.as_str()], g);
                }
                TaskFamily::Regression => {
                    assert_eq!(ex.target, Some(hydrophobic_fraction(&ex.sequence)));
                }
            }
        }
    }
}

#[test]
fn synthetic_splits_are_disjoint() {
    for family in [
        TaskFamily::RetrievalPairs,
        TaskFamily::BinaryCls,
        TaskFamily::MultiCls,
        TaskFamily::Regression,
    ] {
        let ds = generate_synthetic(&SyntheticTaskSpec::new(family, 3, 120, 40, 40)).unwrap();
        let all: Vec<&str> = ds
            .train
            .iter()
            .chain(&ds.val)
            .chain(&ds.test)
            .map(|e| e.sequence.as_str())
            .collect();
        let unique: BTreeSet<&str> = all.iter().copied().collect();
        assert_eq!(unique.len(), all.len(), "{family:?}");
    }
}

#[test]
fn synthetic_rejects_bad_lengths() {
    let spec = SyntheticTaskSpec {
        min_len: 30,
        max_len: 20,
        ..SyntheticTaskSpec::new(TaskFamily::BinaryCls, 0, 4, 0, 0)
    };
    assert!(generate_synthetic(&spec).is_err());
}

#[test]
fn dataset_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.json");
    let ds = generate_synthetic(&SyntheticTaskSpec::new(TaskFamily::Regression, 5, 10, 2, 2)).unwrap();
    ds.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), ds);
}

// ------------------------------------------------------------------ metrics

#[test]
fn classification_examples() {
    let m = eval_classification(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap();
    assert_eq!((m.accuracy, m.macro_f1), (1.0, 1.0));
    let m = eval_classification(&[1, 1, 1, 1], &[0, 1, 0, 1]).unwrap();
    assert_eq!(m.accuracy, 0.5);
    assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    assert!(eval_classification(&[0, 1], &[0]).is_err());
    assert!(eval_classification(&[], &[]).is_err());
}

/// Confusion matrix built by hand, then per-class F1 from its cells.
fn classification_oracle(preds: &[usize], golds: &[usize], classes: usize) -> (f64, f64) {
    let mut cm = vec![vec![0usize; classes]; classes];
    for (&p, &g) in preds.iter().zip(golds) {
        cm[g][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| cm[c][c]).sum();
    let mut f1s = Vec::new();
    for c in 0..classes {
        let tp = cm[c][c] as f64;
        let fneg: f64 = (0..classes).filter(|&p| p != c).map(|p| cm[c][p] as f64).sum();
        let fpos: f64 = (0..classes).filter(|&g| g != c).map(|g| cm[g][c] as f64).sum();
        if tp + fneg + fpos == 0.0 {
            continue;
        }
        let prec = if tp + fpos > 0.0 { tp / (tp + fpos) } else { 0.0 };
        let rec = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        f1s.push(if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        });
    }
    (
        correct as f64 / preds.len() as f64,
        f1s.iter().sum::<f64>() / f1s.len() as f64,
    )
}

#[test]
fn classification_matches_confusion_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let classes = rng.gen_range(2..6);
        let n = rng.gen_range(1..200);
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let golds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let m = eval_classification(&preds, &golds).unwrap();
        let (acc, f1) = classification_oracle(&preds, &golds, classes);
        assert_eq!(m.accuracy, acc);
        assert!((m.macro_f1 - f1).abs() < 1e-12, "{} vs {f1}", m.macro_f1);
    }
}

#[test]
fn constant_predictor_accuracy_is_majority_frequency() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let golds: Vec<usize> = (0..50).map(|_| rng.gen_range(0..3)).collect();
        let mut counts = [0usize; 3];
        golds.iter().for_each(|&g| counts[g] += 1);
        let majority = (0..3).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
        let m = eval_classification(&vec![majority; golds.len()], &golds).unwrap();
        assert_eq!(m.accuracy, counts[majority] as f64 / 50.0);
    }
}

#[test]
fn spearman_examples() {
    assert!((eval_spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!((eval_spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(average_ranks(&[5.0, 1.0, 5.0, 3.0]), vec![3.5, 1.0, 3.5, 2.0]);
    assert!(matches!(
        eval_spearman(&[1.0, 1.0], &[1.0, 2.0]),
        Err(Error::Numeric { .. })
    ));
    assert!(eval_spearman(&[1.0], &[1.0]).is_err());
    assert!(eval_spearman(&[1.0, 2.0], &[1.0]).is_err());
}

/// Rank of x = 1 + #{y < x} + (#{y == x} - 1) / 2, counted over all pairs.
fn rank_oracle(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn spearman_matches_all_pairs_rank_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let n = rng.gen_range(2..=50);
        // Coarse values force ties.
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let (ra, rb) = (rank_oracle(&a), rank_oracle(&b));
        match eval_spearman(&a, &b) {
            Ok(rho) => assert!((rho - pearson(&ra, &rb)).abs() < 1e-12),
            Err(_) => assert!(ra.iter().all(|&r| r == ra[0])),
        }
    }
}

#[test]
fn recall_examples() {
    let perfect = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(recall_at_k(&perfect, &[1]).unwrap()[&1], 1.0);
    // Ties count against the true candidate.
    let tied = Tensor::matrix(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
    let r = recall_at_k(&tied, &[1, 2]).unwrap();
    assert_eq!((r[&1], r[&2]), (0.5, 1.0));
    assert!(recall_at_k(&perfect, &[0]).is_err());
    assert!(recall_at_k(&Tensor::matrix(1, 1, vec![1.0]).unwrap(), &[1]).is_err());
}

proptest! {
    #[test]
    fn recall_is_monotone_in_k(seed in 0u64..10_000, n in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Tensor::randn(vec![n, n], 1.0, &mut rng);
        let ks: Vec<usize> = (1..=n).collect();
        let r = recall_at_k(&s, &ks).unwrap();
        for k in 1..n {
            prop_assert!(r[&k] <= r[&(k + 1)]);
        }
        prop_assert_eq!(r[&n], 1.0);
    }

    #[test]
    fn metric_report_ranges_hold(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..40);
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let golds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let m = eval_classification(&preds, &golds).unwrap();
        let report = MetricReport { accuracy: Some(m.accuracy), macro_f1: Some(m.macro_f1), ..MetricReport::default() };
        prop_assert!(report.validate().is_ok());
    }
}

#[test]
fn untrained_retrieval_is_near_chance() {
    let ds = pairs(100, 21);
    let mean: f64 = (0..3)
        .map(|seed| {
            eval_retrieval(&tiny_model(seed), &ds.train, &[1, 5])
                .unwrap()
                .recall_at_k[&1]
        })
        .sum::<f64>()
        / 3.0;
    assert!((mean - 0.01).abs() <= 0.03, "{mean}");
}

// ------------------------------------------------------------------- stages

#[test]
fn stage_config_parses_aliases_and_rejects_unknown_fields() {
    let a: StageConfig = serde_json::from_str(r#"{"stage":"a"}"#).unwrap();
    assert_eq!(a.stage, Stage::Dicp);
    let b: StageConfig = toml::from_str("stage = \"b_align\"\nlearning_rate = 0.01").unwrap();
    assert_eq!((b.stage, b.learning_rate, b.epochs()), (Stage::Align, 0.01, 30));
    assert!(serde_json::from_str::<StageConfig>(r#"{"stage":"c","bogus":1}"#).is_err());
    assert_eq!(StageConfig::new(Stage::EndToEnd).learning_rate, 1e-5);
}

#[test]
fn unknown_frozen_prefix_and_wrong_data_are_config_errors() {
    let mut m = tiny_model(0);
    let ds = pairs(4, 0);
    let mut cfg = stage(Stage::Align, 0.1, 1, 4);
    cfg.frozen = Some(vec!["nope.".into()]);
    assert!(matches!(
        train_stage(&mut m, &cfg, StageData::Pairs(&ds.train), None),
        Err(Error::Config(_))
    ));
    let cfg = stage(Stage::Dicp, 0.1, 1, 4);
    assert!(matches!(
        train_stage(&mut m, &cfg, StageData::Pairs(&ds.train), None),
        Err(Error::Config(_))
    ));
    let cfg = stage(Stage::Align, -1.0, 1, 4);
    assert!(matches!(
        train_stage(&mut m, &cfg, StageData::Pairs(&ds.train), None),
        Err(Error::Config(_))
    ));
}

#[test]
fn zero_learning_rate_leaves_parameters_identical() {
    let mut m = tiny_model(1);
    let before = m.clone();
    let ds = pairs(8, 1);
    let report = train_stage(
        &mut m,
        &stage(Stage::Align, 0.0, 2, 4),
        StageData::Pairs(&ds.train),
        None,
    )
    .unwrap();
    assert_eq!(report.steps, 4);
    assert!(changed_params(&before, &m).is_empty());
}

#[test]
fn stage_b_overfits_a_fixed_batch() {
    let mut m = tiny_model(2);
    let ds = pairs(8, 2);
    let cfg = StageConfig {
        optimizer: OptimizerKind::Sgd { momentum: 0.9 },
        ..stage(Stage::Align, 0.05, 200, 8)
    };
    let report = train_stage(&mut m, &cfg, StageData::Pairs(&ds.train), None).unwrap();
    assert_eq!(report.steps, 200);
    let (first, last) = (report.initial_loss.unwrap(), report.final_loss.unwrap());
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn stage_b_keeps_protein_encoder_and_lm_fixed() {
    let mut m = tiny_model(3);
    let before = m.clone();
    let ds = pairs(12, 3);
    let report = train_stage(
        &mut m,
        &stage(Stage::Align, 0.05, 2, 4),
        StageData::Pairs(&ds.train),
        None,
    )
    .unwrap();
    let changed = changed_params(&before, &m);
    assert!(!changed.is_empty());
    assert!(
        changed
            .iter()
            .all(|n| n.starts_with(QFORMER_PREFIX) || n.starts_with(TEXT_ENC_PREFIX)),
        "{changed:?}"
    );
    assert_eq!(m.fingerprint(PROT_ENC_PREFIX), before.fingerprint(PROT_ENC_PREFIX));
    assert_eq!(m.fingerprint(LM_PREFIX), before.fingerprint(LM_PREFIX));
    assert_eq!(
        report.fingerprints[PROT_ENC_PREFIX],
        before.fingerprint(PROT_ENC_PREFIX)
    );
}

fn tiny_ablation() -> AblationConfig {
    let quick = |s: Stage, epochs: usize| StageConfig {
        optimizer: OptimizerKind::adam(),
        schedule: LrSchedule::Linear,
        ..stage(s, 1e-2, epochs, 4)
    };
    AblationConfig {
        model: tiny_config(),
        seeds: vec![5],
        tasks: vec![
            SyntheticTaskSpec::new(TaskFamily::RetrievalPairs, 1, 8, 2, 4),
            SyntheticTaskSpec::new(TaskFamily::BinaryCls, 2, 8, 2, 4),
        ],
        pairs: SyntheticTaskSpec::new(TaskFamily::RetrievalPairs, 3, 8, 0, 0),
        corpus: SynthCorpusConfig {
            docs: 10,
            max_sentences: 3,
            long_fraction: 0.0,
            ..SynthCorpusConfig::default()
        },
        pack_len: 32,
        stage_a: quick(Stage::Dicp, 1),
        stage_b: quick(Stage::Align, 1),
        stage_c: quick(Stage::EndToEnd, 1),
        eval: EvalOptions {
            ks: vec![1],
            max_new: 4,
            ..EvalOptions::default()
        },
        ..AblationConfig::default()
    }
}

#[test]
fn stage_a_touches_only_the_lm() {
    let cfg = tiny_ablation();
    let mut m = tiny_model(4);
    let before = m.clone();
    let packs = pretraining_packs(&cfg, &pairs(8, 4), 4, &m.text_vocab).unwrap();
    assert!(!packs.is_empty());
    train_stage(&mut m, &cfg.stage_a, StageData::Corpus(&packs), None).unwrap();
    let changed = changed_params(&before, &m);
    assert!(!changed.is_empty());
    assert!(changed.iter().all(|n| n.starts_with(LM_PREFIX)), "{changed:?}");
    assert_eq!(m.fingerprint(QFORMER_PREFIX), before.fingerprint(QFORMER_PREFIX));
}

#[test]
fn nan_loss_aborts_with_step_index() {
    let mut m = tiny_model(5);
    let id = m
        .store
        .ids()
        .find(|&id| m.store.name(id).starts_with(LM_PREFIX))
        .unwrap();
    m.store.get_mut(id).values_mut()[0] = f64::NAN;
    let ds = generate_synthetic(&SyntheticTaskSpec::new(TaskFamily::RetrievalPairs, 5, 4, 0, 0)).unwrap();
    let err = train_stage(&mut m, &stage(Stage::EndToEnd, 0.1, 1, 2), StageData::Task(&ds), None).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { step: 0 }), "{err}");
}

#[test]
fn stage_outputs_checkpoint_curve_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = tiny_model(6);
    let ds = generate_synthetic(&SyntheticTaskSpec::new(TaskFamily::BinaryCls, 6, 6, 2, 2)).unwrap();
    let report = train_stage(
        &mut m,
        &stage(Stage::EndToEnd, 0.05, 2, 4),
        StageData::Task(&ds),
        Some(dir.path()),
    )
    .unwrap();
    let csv = std::fs::read_to_string(dir.path().join(CURVE_FILE)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,epoch,loss,cls"));
    assert_eq!(lines.count(), report.steps);
    let loaded = Model::load(dir.path()).unwrap();
    assert!(changed_params(&m, &loaded).is_empty());
    assert_eq!(loaded.cls_head.as_ref().map(|h| h.num_classes()), Some(2));
    let again: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("stage_report.json")).unwrap()).unwrap();
    assert_eq!(again["steps"], report.steps);
}

#[test]
fn classification_stage_lowers_training_loss() {
    let mut m = tiny_model(7);
    let ds = generate_synthetic(&SyntheticTaskSpec::new(TaskFamily::BinaryCls, 7, 32, 8, 8)).unwrap();
    let cfg = StageConfig {
        optimizer: OptimizerKind::adam(),
        ..stage(Stage::EndToEnd, 3e-3, 8, 8)
    };
    let report = train_stage(&mut m, &cfg, StageData::Task(&ds), None).unwrap();
    let head: f64 = report.curve[..4].iter().map(|p| p.loss).sum();
    let tail: f64 = report.curve[report.curve.len() - 4..].iter().map(|p| p.loss).sum();
    assert!(tail < head, "{head} -> {tail}");
    let r = eval_task(&m, &ds, Split::Test, &EvalOptions::default()).unwrap();
    assert!(r.accuracy.is_some() && r.macro_f1.is_some());
}

#[test]
fn regression_and_generation_paths_run() {
    let mut m = tiny_model(8);
    let ds = generate_synthetic(&SyntheticTaskSpec::new(TaskFamily::Regression, 8, 8, 2, 4)).unwrap();
    train_stage(&mut m, &stage(Stage::EndToEnd, 0.01, 1, 4), StageData::Task(&ds), None).unwrap();
    assert!(m.reg_head.is_some());
    let r = eval_task(&m, &ds, Split::Test, &EvalOptions::default()).unwrap();
    assert!(r.spearman.is_some_and(|s| (-1.0..=1.0).contains(&s)));

    let m = tiny_model(9);
    let cond = m.conditioning("MKVLA", ProteinMode::Aligned).unwrap();
    let a = generate_answer(&m, &cond, "Describe the protein.", 3).unwrap();
    assert_eq!(a, generate_answer(&m, &cond, "Describe the protein.", 3).unwrap());
}

#[test]
fn early_stopping_respects_patience() {
    let mut m = tiny_model(10);
    let ds = generate_synthetic(&SyntheticTaskSpec::new(TaskFamily::BinaryCls, 10, 8, 4, 2)).unwrap();
    // A huge rate makes validation loss wander, so patience 1 stops early.
    let cfg = StageConfig {
        patience: Some(1),
        ..stage(Stage::EndToEnd, 5.0, 30, 8)
    };
    let report = train_stage(&mut m, &cfg, StageData::Task(&ds), None).unwrap();
    assert_eq!(report.val_losses.len(), report.epochs_run);
    assert!(report.epochs_run < 30);
    let v = &report.val_losses;
    assert!(v[v.len() - 1] >= v[..v.len() - 1].iter().copied().fold(f64::INFINITY, f64::min));
}

#[test]
fn training_is_bitwise_reproducible() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut m = tiny_model(11);
        let ds = pairs(10, 11);
        let cfg = StageConfig {
            optimizer: OptimizerKind::adam(),
            ..stage(Stage::Align, 1e-2, 2, 4)
        };
        train_stage(&mut m, &cfg, StageData::Pairs(&ds.train), Some(dir.path())).unwrap();
        let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
        (read(CHECKPOINT_FILE), read(CURVE_FILE))
    };
    assert_eq!(run(), run());
}

// ----------------------------------------------------------------- ablation

#[test]
fn variants_differ_only_in_the_ablated_component() {
    let cfg = tiny_ablation();
    let v = pretrained_variants(&cfg, 5, None).unwrap();
    let full = &v[&Variant::Full];
    let no_pre = changed_params(full, &v[&Variant::NoPretraining]);
    let no_align = changed_params(full, &v[&Variant::NoAlignment]);
    assert!(
        !no_pre.is_empty() && no_pre.iter().all(|n| n.starts_with(LM_PREFIX)),
        "{no_pre:?}"
    );
    assert!(!no_align.is_empty());
    assert!(
        no_align
            .iter()
            .all(|n| n.starts_with(QFORMER_PREFIX) || n.starts_with(TEXT_ENC_PREFIX)),
        "{no_align:?}"
    );

    // The shared-stage shortcut equals running A then B on one model.
    let mut seq = Model::new(cfg.model.clone(), 5).unwrap();
    let pairs = generate_synthetic(&SyntheticTaskSpec {
        seed: cfg.pairs.seed + 5,
        ..cfg.pairs.clone()
    })
    .unwrap();
    let packs = pretraining_packs(&cfg, &pairs, 5, &seq.text_vocab).unwrap();
    train_stage(
        &mut seq,
        &StageConfig {
            seed: 5,
            ..cfg.stage_a.clone()
        },
        StageData::Corpus(&packs),
        None,
    )
    .unwrap();
    train_stage(
        &mut seq,
        &StageConfig {
            seed: 5,
            ..cfg.stage_b.clone()
        },
        StageData::Pairs(&pairs.train),
        None,
    )
    .unwrap();
    assert!(changed_params(full, &seq).is_empty());
}

#[test]
fn ablation_reports_every_variant_and_task() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_ablation();
    let report = run_ablation(&cfg, Some(dir.path())).unwrap();
    assert_eq!(report.rows.len(), 3 * 2);
    for v in Variant::ALL {
        assert!(report.mean(v, TaskFamily::RetrievalPairs).is_some());
        assert!(report.mean(v, TaskFamily::BinaryCls).is_some());
    }
    let table = report.table();
    assert!(table.starts_with("task,metric,full,no_pretraining,no_alignment\n"));
    assert!(dir.path().join("ablation.json").exists());
    assert_eq!(std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap(), table);
    assert_eq!("no_alignment".parse::<Variant>().unwrap(), Variant::NoAlignment);
    assert!("none".parse::<Variant>().is_err());
}
