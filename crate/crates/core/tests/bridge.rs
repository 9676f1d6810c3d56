mod common;

use biobridge::bridge::{
    assemble_prompt, classify, generate, lm_loss, CausalLM, ClassificationHead, LmConfig, MultiModalPrompt, Projector,
    PromptLayout, CLS_HEAD_PREFIX, LM_PREFIX, PROJECTOR_PREFIX,
};
use biobridge::params::ParamStore;
use biobridge::qformer::QFORMER_PREFIX;
use biobridge::tensor::{backward, fd_check_params, Tape, Tensor, Var};
use biobridge::tokenize::TextVocab;
use biobridge::train::{Model, ModelConfig};
use common::{logsumexp, randn, random_ids, rng, tiny_alignment};
use proptest::prelude::*;

const Q_DIM: usize = 6;
const LM_DIM: usize = 8;

struct Bridge {
    store: ParamStore,
    vocab: TextVocab,
    projector: Projector,
    lm: CausalLM,
}

fn bridge(seed: u64) -> Bridge {
    let vocab = TextVocab::new(&["protein", "binds", "a", "b", "c", "."]).unwrap();
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let projector = Projector::new(&mut store, Q_DIM, LM_DIM, &mut r).unwrap();
    let cfg = LmConfig {
        num_layers: 1,
        num_heads: 2,
        dim: LM_DIM,
        ff_dim: 16,
        max_len: 64,
    };
    let lm = CausalLM::new(&mut store, cfg, vocab.size(), vocab.specials(), &mut r).unwrap();
    Bridge {
        store,
        vocab,
        projector,
        lm,
    }
}

fn set(store: &mut ParamStore, name: &str, f: impl Fn(usize) -> f64) {
    let id = store.id(name).unwrap();
    for (i, v) in store.get_mut(id).values_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

fn embedded(b: &Bridge, prompt: &MultiModalPrompt, z: &Tensor) -> Tensor {
    let tape = Tape::new();
    let x = assemble_prompt(&tape, &b.store, prompt, Some(tape.constant(z)), &b.projector, &b.lm).unwrap();
    Tensor::new(x.shape(), x.value()).unwrap()
}

#[test]
fn project_examples() {
    let mut b = bridge(1);
    let z = randn(vec![3, Q_DIM], 2);
    let mut square = ParamStore::new();
    let p = Projector::new(&mut square, 4, 4, &mut rng(0)).unwrap();
    set(&mut square, "projector.weight", |i| if i % 5 == 0 { 1.0 } else { 0.0 });
    let z4 = randn(vec![3, 4], 3);
    let tape = Tape::new();
    assert_eq!(
        p.project(&tape, &square, tape.constant(&z4)).unwrap().value(),
        z4.values()
    );

    set(&mut b.store, "projector.weight", |_| 0.0);
    let tape = Tape::new();
    let out = b.projector.project(&tape, &b.store, tape.constant(&z)).unwrap();
    assert!(out.value().iter().all(|&v| v == 0.0));
    assert_eq!(out.shape(), vec![3, LM_DIM]);

    let bad = randn(vec![3, Q_DIM + 1], 4);
    assert!(b.projector.project(&tape, &b.store, tape.constant(&bad)).is_err());
}

#[test]
fn project_gradient_is_column_sum_outer_product() {
    let mut b = bridge(2);
    let z = randn(vec![3, Q_DIM], 5);
    let w = b.store.id("projector.weight").unwrap();
    {
        let tape = Tape::new();
        let out = b.projector.project(&tape, &b.store, tape.constant(&z)).unwrap().sum();
        backward(out, &mut b.store).unwrap();
    }
    let grad = b.store.get(w).grad().to_vec();
    for i in 0..Q_DIM {
        let col_sum: f64 = (0..3).map(|k| z.row(k)[i]).sum();
        for j in 0..LM_DIM {
            assert!((grad[i * LM_DIM + j] - col_sum).abs() < 1e-12);
        }
    }
    let proj = b.projector.clone();
    let zz = z.clone();
    let err = fd_check_params(
        move |tape, store| {
            let y = proj.project(tape, store, tape.constant(&zz))?;
            let wts = tape.constant(&randn(vec![3, LM_DIM], 6));
            Ok(y.mul(wts)?.sum())
        },
        &mut b.store,
        &[w],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn prompt_layout_examples() {
    let b = bridge(3);
    let z1 = randn(vec![1, Q_DIM], 7);
    assert_eq!(
        embedded(&b, &MultiModalPrompt::new(vec![], vec![]), &z1).shape(),
        &[3, LM_DIM]
    );

    let prompt = MultiModalPrompt::new(vec![263, 264], vec![265, 266, 263, 264, 265]);
    let z4 = randn(vec![4, Q_DIM], 8);
    let x = embedded(&b, &prompt, &z4);
    assert_eq!(x.shape(), &[13, LM_DIM]);
    assert_eq!(prompt.protein_offset(), 3);

    let table = b.store.by_name("lm.embed").unwrap();
    let sp = b.vocab.specials();
    let projected = {
        let tape = Tape::new();
        b.projector
            .project(&tape, &b.store, tape.constant(&z4))
            .unwrap()
            .value()
    };
    let expected_ids = [
        Some(263),
        Some(264),
        Some(sp.prot_open),
        None,
        None,
        None,
        None,
        Some(sp.prot_close),
    ];
    for (row, id) in expected_ids.iter().enumerate() {
        match id {
            Some(id) => assert_eq!(x.row(row), table.row(*id), "row {row}"),
            None => assert_eq!(x.row(row), &projected[(row - 3) * LM_DIM..(row - 2) * LM_DIM]),
        }
    }
    for (k, &id) in prompt.suffix.iter().enumerate() {
        assert_eq!(x.row(8 + k), table.row(id));
    }

    let first = MultiModalPrompt {
        layout: PromptLayout::ProteinFirst,
        ..prompt.clone()
    };
    let y = embedded(&b, &first, &z4);
    assert_eq!(y.row(0), table.row(sp.prot_open));
    assert_eq!(y.row(5), table.row(sp.prot_close));
    assert_eq!(y.row(6), table.row(263));
}

#[test]
fn delimiters_start_at_the_table_mean() {
    let b = bridge(4);
    let table = b.store.by_name("lm.embed").unwrap();
    let sp = b.vocab.specials();
    assert_eq!(table.row(sp.prot_open), table.row(sp.prot_close));
    assert!(table.row(sp.prot_open).iter().all(|x| x.is_finite() && x.abs() < 1.0));
}

#[test]
fn uniform_logits_give_log_vocab_loss() {
    let mut b = bridge(5);
    set(&mut b.store, "lm.embed", |_| 0.0);
    let z = randn(vec![2, Q_DIM], 9);
    let tape = Tape::new();
    let x = assemble_prompt(
        &tape,
        &b.store,
        &MultiModalPrompt::new(vec![263], vec![]),
        Some(tape.constant(&z)),
        &b.projector,
        &b.lm,
    )
    .unwrap();
    let loss = lm_loss(&tape, &b.store, &b.lm, x, &[264, 265, 266]).unwrap().item();
    assert!((loss - (b.vocab.size() as f64).ln()).abs() < 1e-12);
}

#[test]
fn oracle_logits_drive_loss_to_zero() {
    let mut b = bridge(6);
    set(&mut b.store, "lm.embed", |_| 0.0);
    let prompt = randn(vec![4, LM_DIM], 10);
    let h_last = {
        let tape = Tape::new();
        let h = b.lm.hidden(&tape, &b.store, tape.constant(&prompt)).unwrap();
        h.value()[3 * LM_DIM..].to_vec()
    };
    let target = 264;
    set(&mut b.store, "lm.embed", |i| {
        if i / LM_DIM == target {
            1e3 * h_last[i % LM_DIM]
        } else {
            0.0
        }
    });
    let tape = Tape::new();
    let loss = lm_loss(&tape, &b.store, &b.lm, tape.constant(&prompt), &[target])
        .unwrap()
        .item();
    assert!(loss < 1e-9, "{loss}");
}

/// Per-position cross-entropy from full-sequence logits, kept only at the
/// positions that predict target tokens.
fn lm_loss_oracle(b: &Bridge, prompt: &Tensor, target: &[usize], include: impl Fn(usize) -> bool) -> f64 {
    let tape = Tape::new();
    let mut seq = tape.constant(prompt);
    if target.len() > 1 {
        seq = Var::concat_rows(&[
            seq,
            b.lm.embed_tokens(&tape, &b.store, &target[..target.len() - 1]).unwrap(),
        ])
        .unwrap();
    }
    let h = b.lm.hidden(&tape, &b.store, seq).unwrap();
    let logits = b.lm.logits(&tape, &b.store, h).unwrap().value();
    let v = b.lm.vocab_size();
    let p = prompt.rows();
    let mut total = 0.0;
    let mut count = 0;
    for pos in 0..h.rows() {
        if !include(pos) {
            continue;
        }
        let row = &logits[pos * v..(pos + 1) * v];
        let next = if pos + 1 < p { 0 } else { target[pos + 1 - p] };
        total += logsumexp(row) - row[next];
        count += 1;
    }
    total / count as f64
}

#[test]
fn loss_counts_only_target_positions() {
    let b = bridge(7);
    let z = randn(vec![3, Q_DIM], 11);
    let prompt = embedded(&b, &MultiModalPrompt::new(vec![263, 264], vec![265]), &z);
    let target = [266, 263, 264, b.vocab.specials().eos];
    let tape = Tape::new();
    let ours = lm_loss(&tape, &b.store, &b.lm, tape.constant(&prompt), &target)
        .unwrap()
        .item();
    let p = prompt.rows();
    let oracle = lm_loss_oracle(&b, &prompt, &target, |pos| pos + 1 >= p);
    assert!((ours - oracle).abs() < 1e-12);
    let with_prefix = lm_loss_oracle(&b, &prompt, &target, |pos| pos + 1 >= p || pos < 2);
    assert!((ours - with_prefix).abs() > 1e-6);
    assert!(lm_loss(&tape, &b.store, &b.lm, tape.constant(&prompt), &[]).is_err());
}

#[test]
fn generate_examples() {
    let b = bridge(8);
    let z = randn(vec![2, Q_DIM], 12);
    let prompt = embedded(&b, &MultiModalPrompt::new(vec![263], vec![264]), &z);
    let one = generate(&b.store, &b.lm, &prompt, 1).unwrap();
    let expected = {
        let tape = Tape::new();
        let h = b.lm.hidden(&tape, &b.store, tape.constant(&prompt)).unwrap();
        let last = h.slice_rows(h.rows() - 1, h.rows()).unwrap();
        let logits = b.lm.logits(&tape, &b.store, last).unwrap().value();
        let mut best = 0;
        for (i, &x) in logits.iter().enumerate() {
            if x > logits[best] {
                best = i;
            }
        }
        best
    };
    if expected == b.vocab.specials().eos {
        assert!(one.is_empty());
    } else {
        assert_eq!(one, vec![expected]);
    }
    let a = generate(&b.store, &b.lm, &prompt, 10).unwrap();
    assert_eq!(a, generate(&b.store, &b.lm, &prompt, 10).unwrap());
    assert!(a.len() <= 10);
    assert!(generate(&b.store, &b.lm, &prompt, 0).is_err());
}

#[test]
fn classify_examples() {
    let mut b = bridge(9);
    let head = ClassificationHead::new(&mut b.store, LM_DIM, 3, &mut rng(13)).unwrap();
    let z = randn(vec![2, Q_DIM], 14);
    let prompt = embedded(&b, &MultiModalPrompt::new(vec![263], vec![]), &z);
    let tape = Tape::new();
    let p = classify(&tape, &b.store, &b.lm, &head, tape.constant(&prompt), 3)
        .unwrap()
        .value();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(classify(&tape, &b.store, &b.lm, &head, tape.constant(&prompt), 2).is_err());

    for name in [format!("{CLS_HEAD_PREFIX}weight"), format!("{CLS_HEAD_PREFIX}bias")] {
        set(&mut b.store, &name, |_| 0.0);
    }
    let tape = Tape::new();
    let p = classify(&tape, &b.store, &b.lm, &head, tape.constant(&prompt), 3)
        .unwrap()
        .value();
    assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn lm_gradient_reaches_projector_and_qformer() {
    let mut t = tiny_alignment(2, Q_DIM, 12, 15);
    let mut r = rng(16);
    let vocab = TextVocab::new(&["x"]).unwrap();
    let projector = Projector::new(&mut t.store, Q_DIM, LM_DIM, &mut r).unwrap();
    let cfg = LmConfig {
        num_layers: 1,
        num_heads: 2,
        dim: LM_DIM,
        ff_dim: 16,
        max_len: 64,
    };
    let lm = CausalLM::new(&mut t.store, cfg, vocab.size(), vocab.specials(), &mut r).unwrap();
    t.prot.freeze(&mut t.store);
    let h = t.prot.encode(&t.store, &random_ids(&mut r, 6, 3, 23)).unwrap();
    let tape = Tape::new();
    let z = t.qf.forward(&tape, &t.store, tape.constant(&h), None).unwrap();
    let x = assemble_prompt(
        &tape,
        &t.store,
        &MultiModalPrompt::new(vec![7], vec![]),
        Some(z),
        &projector,
        &lm,
    )
    .unwrap();
    let loss = lm_loss(&tape, &t.store, &lm, x, &[8, 9]).unwrap();
    backward(loss, &mut t.store).unwrap();
    let norm = |prefix: &str| -> f64 {
        t.store
            .ids_with_prefix(prefix)
            .flat_map(|id| t.store.get(id).grad().to_vec())
            .map(|g| g * g)
            .sum()
    };
    assert!(norm("projector.") > 0.0);
    assert!(norm("qformer.query_bank") > 0.0);
    assert_eq!(norm("prot_enc."), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn layout_is_position_exact(k in 0usize..5, kq in 1usize..5, s in 0usize..6, seed in 0u64..1000) {
        let b = bridge(20);
        let prefix = random_ids(&mut rng(seed), k, 263, 273);
        let suffix = random_ids(&mut rng(seed + 1), s, 263, 273);
        let prompt = MultiModalPrompt::new(prefix.clone(), suffix.clone());
        let x = embedded(&b, &prompt, &randn(vec![kq, Q_DIM], seed));
        prop_assert_eq!(x.rows(), k + kq + 2 + s);
        prop_assert_eq!(prompt.len_with(kq), x.rows());
        let table = b.store.by_name("lm.embed").unwrap();
        let sp = b.vocab.specials();
        for (i, &id) in prefix.iter().enumerate() {
            prop_assert_eq!(x.row(i), table.row(id));
        }
        prop_assert_eq!(x.row(k), table.row(sp.prot_open));
        prop_assert_eq!(x.row(k + kq + 1), table.row(sp.prot_close));
        for (i, &id) in suffix.iter().enumerate() {
            prop_assert_eq!(x.row(k + kq + 2 + i), table.row(id));
        }
    }

    #[test]
    fn logits_are_causal(len in 2usize..12, cut in 1usize..12, seed in 0u64..1000) {
        let cut = cut.min(len);
        let b = bridge(21);
        let x = randn(vec![len, LM_DIM], seed);
        let logits = |rows: usize| {
            let t = Tensor::new(vec![rows, LM_DIM], x.values()[..rows * LM_DIM].to_vec()).unwrap();
            let tape = Tape::new();
            let h = b.lm.hidden(&tape, &b.store, tape.constant(&t)).unwrap();
            b.lm.logits(&tape, &b.store, h).unwrap().value()
        };
        let full = logits(len);
        let short = logits(cut);
        prop_assert_eq!(&full[..short.len()], &short[..]);
    }
}

/// LM loss through projector, Q-Former and LM. The composite is deep enough
/// that step 1e-6 leaves round-off noise above 1e-4 on entries with tiny
/// gradients, so blocks use step 1e-4. The tied embedding table is checked at
/// 1e-3: most of its 999 rows only see the softmax tail, with gradients near
/// 1e-9, and its error falls steadily with the step (2e-2, 4e-3, 1e-3, 2e-5
/// for 1e-6..1e-3), the signature of cancellation rather than a wrong gradient.
#[test]
fn lm_loss_gradient_through_the_whole_bridge() {
    let model = Model::new(ModelConfig::compact(8, 2, 8), 3).unwrap();
    let states = model.protein_states("MKVLAG").unwrap();
    let prompt = model.task_prompt("Describe the protein.", None);
    let target = model.answer_ids("A small protein.");
    let mut store = model.store.clone();
    let embed = store.id("lm.embed").unwrap();
    let blocks: Vec<_> = store
        .ids()
        .filter(|&id| {
            let n = store.name(id);
            id != embed
                && (n.starts_with(PROJECTOR_PREFIX) || n.starts_with(QFORMER_PREFIX) || n.starts_with(LM_PREFIX))
        })
        .collect();
    for (ids, step) in [(blocks, 1e-4), (vec![embed], 1e-3)] {
        let err = fd_check_params(
            |tape, st| {
                let z = model.qformer.forward(tape, st, tape.constant(&states), None)?;
                let x = assemble_prompt(tape, st, &prompt, Some(z), &model.projector, &model.lm)?;
                lm_loss(tape, st, &model.lm, x, &target)
            },
            &mut store,
            &ids,
            step,
        )
        .unwrap();
        assert!(err < 1e-4, "step {step}: {err}");
    }
}
