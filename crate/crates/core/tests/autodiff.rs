use biobridge::params::ParamStore;
use biobridge::tensor::{attention, backward, cosine_sim, fd_check, fd_check_params, Mask, Tape, Tensor, Var};
use biobridge::{Error, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Projects an output onto fixed random weights so that every coordinate of
/// the gradient is generic (plain sums can have identically-zero gradients).
fn weighted<'t>(tape: &'t Tape, y: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let mut r = rng(seed);
    let w = Tensor::uniform(y.shape(), 0.5, 1.5, &mut r);
    y.mul(tape.constant(&w)).map(|v| v.sum())
}

fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}

#[test]
fn matmul_identity_and_hand_case() {
    let tape = Tape::new();
    let mut r = rng(1);
    let b = Tensor::randn(vec![3, 5], 1.0, &mut r);
    let out = tape.constant(&Tensor::identity(3)).matmul(tape.constant(&b)).unwrap();
    assert_eq!(out.value(), b.values());

    let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let c = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
    let out = tape.constant(&a).matmul(tape.constant(&c)).unwrap();
    assert_eq!(out.shape(), vec![2, 1]);
    assert_eq!(out.value(), vec![2.0, 4.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let tape = Tape::new();
    let a = tape.constant(&Tensor::zeros(vec![2, 3]));
    let b = tape.constant(&Tensor::zeros(vec![4, 2]));
    let msg = a.matmul(b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn matmul_sum_gradient_is_ones_times_b_transpose() {
    let mut r = rng(2);
    let a = Tensor::randn(vec![4, 5], 1.0, &mut r).with_requires_grad(true);
    let b = Tensor::randn(vec![5, 3], 1.0, &mut r);
    let tape = Tape::new();
    let av = tape.leaf(&a);
    let loss = av.matmul(tape.constant(&b)).unwrap().sum();
    let g = tape.backward(loss).unwrap().wrt(av);
    // ones(4×3)·bᵀ: every row equals the row sums of b
    for i in 0..4 {
        for p in 0..5 {
            let expected: f64 = b.row(p).iter().sum();
            assert!((g[i * 5 + p] - expected).abs() < 1e-12);
        }
    }
    // and the finite-difference oracle agrees
    let b2 = b.clone();
    let err = fd_check(move |t, x| Ok(x.matmul(t.constant(&b2))?.sum()), &a, STEP).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(3);
    let a = Tensor::randn(vec![6, 7], 1.0, &mut r);
    let b = Tensor::randn(vec![7, 4], 1.0, &mut r);
    let tape = Tape::new();
    let out = tape.constant(&a).matmul(tape.constant(&b)).unwrap().value();
    let oracle = matmul_oracle(a.values(), b.values(), 6, 7, 4);
    for (x, y) in out.iter().zip(oracle) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn softmax_examples() {
    let tape = Tape::new();
    let s = tape.constant(&Tensor::vector(vec![0.0, 0.0, 0.0])).softmax().unwrap();
    for v in s.value() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let s = tape.constant(&Tensor::vector(vec![1000.0, 1000.0])).softmax().unwrap();
    assert_eq!(s.value(), vec![0.5, 0.5]);

    // direct exp/Σexp with compensated summation on a small-magnitude input
    let mut r = rng(4);
    let x = Tensor::uniform(vec![7], -3.0, 3.0, &mut r);
    let s = tape.constant(&x).softmax().unwrap().value();
    let exps: Vec<f64> = x.values().iter().map(|v| v.exp()).collect();
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for e in &exps {
        let y = e - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    for (got, e) in s.iter().zip(&exps) {
        assert!((got - e / sum).abs() < 1e-15);
    }
}

#[test]
fn softmax_rejects_nan() {
    let tape = Tape::new();
    let x = tape.constant(&Tensor::vector(vec![0.0, f64::NAN]));
    assert!(x.softmax().is_err());
}

#[test]
fn layer_norm_examples() {
    let tape = Tape::new();
    let ones = tape.constant(&Tensor::filled(vec![4], 1.0));
    let zeros = tape.constant(&Tensor::zeros(vec![4]));
    let out = tape
        .constant(&Tensor::vector(vec![5.0; 4]))
        .layer_norm(ones, zeros, 1e-5)
        .unwrap();
    assert_eq!(out.value(), vec![0.0; 4]);

    let ones2 = tape.constant(&Tensor::filled(vec![2], 1.0));
    let zeros2 = tape.constant(&Tensor::zeros(vec![2]));
    let out = tape
        .constant(&Tensor::vector(vec![1.0, -1.0]))
        .layer_norm(ones2, zeros2, 1e-300)
        .unwrap()
        .value();
    assert!((out[0] - 1.0).abs() < 1e-12 && (out[1] + 1.0).abs() < 1e-12);

    let mut r = rng(5);
    let x = Tensor::randn(vec![3, 16], 2.0, &mut r);
    let ones = tape.constant(&Tensor::filled(vec![16], 1.0));
    let zeros = tape.constant(&Tensor::zeros(vec![16]));
    let out = tape.constant(&x).layer_norm(ones, zeros, 1e-12).unwrap().value();
    for row in out.chunks(16) {
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-6);
    }
}

fn attention_oracle(q: &Tensor, k: &Tensor, v: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (lq, lk, d, dv) = (q.rows(), k.rows(), q.cols(), v.cols());
    let mut weights = vec![0.0; lq * lk];
    for i in 0..lq {
        let logits: Vec<f64> = (0..lk)
            .map(|j| (0..d).map(|c| q.row(i)[c] * k.row(j)[c]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for j in 0..lk {
            weights[i * lk + j] = logits[j].exp() / z;
        }
    }
    let mut out = vec![0.0; lq * dv];
    for i in 0..lq {
        for j in 0..lk {
            for c in 0..dv {
                out[i * dv + c] += weights[i * lk + j] * v.row(j)[c];
            }
        }
    }
    (weights, out)
}

#[test]
fn attention_examples() {
    let mut r = rng(6);
    let tape = Tape::new();
    // single key: output is that value for every query
    let q = Tensor::randn(vec![3, 4], 1.0, &mut r);
    let k = Tensor::randn(vec![1, 4], 1.0, &mut r);
    let v = Tensor::randn(vec![1, 4], 1.0, &mut r);
    let out = attention(tape.constant(&q), tape.constant(&k), tape.constant(&v), None).unwrap();
    for row in out.value().chunks(4) {
        for (a, b) in row.iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    // Q = K orthonormal: each query sees logit 1/√d on itself and 0 elsewhere,
    // so weights flatten toward uniform as d grows
    let d = 256;
    let eye = Tensor::identity(d);
    let keys = tape.constant(&eye);
    let w = tape
        .constant(&eye)
        .matmul(keys.transpose().unwrap())
        .unwrap()
        .scale(1.0 / (d as f64).sqrt())
        .softmax()
        .unwrap()
        .value();
    let uniform = 1.0 / d as f64;
    assert!(w.iter().all(|x| (x - uniform).abs() < 0.1 * uniform));

    // 3×4 brute-force oracle
    let q = Tensor::randn(vec![3, 4], 1.0, &mut r);
    let k = Tensor::randn(vec![5, 4], 1.0, &mut r);
    let v = Tensor::randn(vec![5, 4], 1.0, &mut r);
    let out = attention(tape.constant(&q), tape.constant(&k), tape.constant(&v), None).unwrap();
    let (_, expected) = attention_oracle(&q, &k, &v);
    for (a, b) in out.value().iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_full_mask_equals_no_mask_bitwise() {
    let mut r = rng(7);
    let q = Tensor::randn(vec![4, 6], 1.0, &mut r);
    let k = Tensor::randn(vec![5, 6], 1.0, &mut r);
    let v = Tensor::randn(vec![5, 3], 1.0, &mut r);
    let tape = Tape::new();
    let (qv, kv, vv) = (tape.constant(&q), tape.constant(&k), tape.constant(&v));
    let a = attention(qv, kv, vv, None).unwrap().value();
    let b = attention(qv, kv, vv, Some(&Mask::all(4, 5))).unwrap().value();
    assert_eq!(
        a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn attention_fully_masked_row_is_an_error() {
    let tape = Tape::new();
    let q = tape.constant(&Tensor::zeros(vec![2, 2]));
    let k = tape.constant(&Tensor::zeros(vec![3, 2]));
    let mask = Mask::from_fn(2, 3, |i, _| i == 0);
    let err = attention(q, k, k, Some(&mask)).unwrap_err();
    assert!(err.to_string().contains("fully masked"));
}

#[test]
fn backward_examples() {
    let mut r = rng(8);
    let x = Tensor::randn(vec![5], 1.0, &mut r).with_requires_grad(true);
    let tape = Tape::new();
    let xv = tape.leaf(&x);
    let g = tape.backward(xv.sum()).unwrap().wrt(xv);
    assert_eq!(g, vec![1.0; 5]);

    let tape = Tape::new();
    let xv = tape.leaf(&x);
    let g = tape.backward(xv.mul(xv).unwrap().sum()).unwrap().wrt(xv);
    for (gi, xi) in g.iter().zip(x.values()) {
        assert_eq!(*gi, 2.0 * xi);
    }
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::zeros(vec![3]).with_requires_grad(true));
    assert!(tape.backward(x).is_err());
}

fn mlp_store(seed: u64) -> (ParamStore, Vec<biobridge::params::ParamId>, Tensor) {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let ids = vec![
        store.insert("w1", Tensor::randn(vec![4, 6], 0.5, &mut r)).unwrap(),
        store.insert("b1", Tensor::randn(vec![6], 0.5, &mut r)).unwrap(),
        store.insert("w2", Tensor::randn(vec![6, 3], 0.5, &mut r)).unwrap(),
        store.insert("b2", Tensor::randn(vec![3], 0.5, &mut r)).unwrap(),
    ];
    let x = Tensor::randn(vec![5, 4], 1.0, &mut r);
    (store, ids, x)
}

fn mlp_loss<'t>(tape: &'t Tape, store: &ParamStore, ids: &[biobridge::params::ParamId], x: &Tensor) -> Result<Var<'t>> {
    let h = tape
        .constant(x)
        .matmul(tape.param(store, ids[0]))?
        .add_row(tape.param(store, ids[1]))?
        .gelu();
    let out = h
        .matmul(tape.param(store, ids[2]))?
        .add_row(tape.param(store, ids[3]))?;
    let targets = [0usize, 2, 1, 1, 0];
    Ok(out.log_softmax()?.pick(&targets)?.mean().neg())
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let (mut store, ids, x) = mlp_store(9);
    let ids2 = ids.clone();
    let err = fd_check_params(move |t, s| mlp_loss(t, s, &ids2, &x), &mut store, &ids, STEP).unwrap();
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn backward_twice_doubles_gradients_exactly() {
    let (mut store, ids, x) = mlp_store(10);
    let tape = Tape::new();
    let loss = mlp_loss(&tape, &store, &ids, &x).unwrap();
    backward(loss, &mut store).unwrap();
    let once: Vec<Vec<f64>> = ids.iter().map(|&i| store.get(i).grad().to_vec()).collect();
    backward(loss, &mut store).unwrap();
    for (&i, g1) in ids.iter().zip(&once) {
        for (g2, g1) in store.get(i).grad().iter().zip(g1) {
            assert_eq!(*g2, 2.0 * g1);
        }
    }
    store.zero_grad();
    assert!(ids.iter().all(|&i| store.get(i).grad().iter().all(|&g| g == 0.0)));
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    let (mut store, ids, x) = mlp_store(11);
    store.set_trainable("w1", false);
    let tape = Tape::new();
    let loss = mlp_loss(&tape, &store, &ids, &x).unwrap();
    backward(loss, &mut store).unwrap();
    assert!(store.get(ids[0]).grad().iter().all(|&g| g == 0.0));
    assert!(store.get(ids[2]).grad().iter().any(|&g| g != 0.0));
}

#[test]
fn fd_check_examples() {
    let mut r = rng(12);
    let x = Tensor::randn(vec![6], 1.0, &mut r);
    let err = fd_check(|_, v| Ok(v.sum()), &x, STEP).unwrap();
    assert!(err < 1e-9, "{err}");
    let x = Tensor::vector(vec![3.0, 4.0]);
    let err = fd_check(|_, v| Ok(v.mul(v)?.sum().scale(0.5)), &x, STEP).unwrap();
    assert!(err < 1e-8, "{err}");
}

/// Every recorded op, on random inputs with at most 8 entries per dimension.
#[test]
fn every_op_passes_fd_check() {
    let mut r = rng(13);
    let tol = 1e-4;
    let check = |name: &str, err: f64| {
        assert!(err < tol, "{name}: max relative error {err}");
    };
    let a = Tensor::randn(vec![3, 4], 1.0, &mut r);
    let b = Tensor::randn(vec![3, 4], 1.0, &mut r);
    let bias = Tensor::randn(vec![4], 1.0, &mut r);
    let right = Tensor::randn(vec![4, 5], 1.0, &mut r);
    let pos = Tensor::uniform(vec![3, 4], 0.5, 2.0, &mut r);

    let (b1, b2, b3, r1) = (b.clone(), b.clone(), bias.clone(), right.clone());
    let _ = &b3;
    check(
        "add",
        fd_check(move |t, x| weighted(t, x.add(t.constant(&b1))?, 1), &a, STEP).unwrap(),
    );
    check(
        "sub",
        fd_check(move |t, x| weighted(t, t.constant(&b2).sub(x)?, 2), &a, STEP).unwrap(),
    );
    check(
        "mul",
        fd_check(
            move |t, x| {
                weighted(
                    t,
                    x.mul(t.constant(&b3.clone().reshape_to(vec![1, 4]).tile_rows(3)))?
                        .mul(x)?,
                    3,
                )
            },
            &a,
            STEP,
        )
        .unwrap(),
    );
    check(
        "add_row",
        fd_check(|t, x| weighted(t, x.add_row(x.row(1)?)?, 4), &a, STEP).unwrap(),
    );
    check(
        "scale/shift",
        fd_check(|t, x| weighted(t, x.scale(-1.7).shift(0.3), 5), &a, STEP).unwrap(),
    );
    check(
        "scale_by",
        fd_check(
            move |t, x| {
                let s = x.slice_rows(0, 1)?.slice_cols(0, 1)?.reshape(vec![1])?;
                weighted(t, t.constant(&b.clone()).scale_by(s.exp())?, 6)
            },
            &a,
            STEP,
        )
        .unwrap(),
    );
    let r2 = r1.clone();
    check(
        "matmul lhs",
        fd_check(move |t, x| weighted(t, x.matmul(t.constant(&r1))?, 7), &a, STEP).unwrap(),
    );
    check(
        "matmul rhs",
        fd_check(
            move |t, x| {
                weighted(
                    t,
                    t.constant(&Tensor::filled(vec![2, 4], 0.3))
                        .add(t.constant(&Tensor::filled(vec![2, 4], 0.1)))?
                        .matmul(x)?,
                    8,
                )
            },
            &r2,
            STEP,
        )
        .unwrap(),
    );
    check(
        "transpose",
        fd_check(|t, x| weighted(t, x.transpose()?, 9), &a, STEP).unwrap(),
    );
    check(
        "softmax",
        fd_check(|t, x| weighted(t, x.softmax()?, 10), &a, STEP).unwrap(),
    );
    check(
        "log_softmax",
        fd_check(|t, x| weighted(t, x.log_softmax()?, 11), &a, STEP).unwrap(),
    );
    check(
        "mask_fill+softmax",
        fd_check(
            |t, x| weighted(t, x.mask_fill(&Mask::from_fn(3, 4, |i, j| j <= i + 1))?.softmax()?, 12),
            &a,
            STEP,
        )
        .unwrap(),
    );
    let (g, bb) = (
        Tensor::uniform(vec![4], 0.5, 1.5, &mut r),
        Tensor::randn(vec![4], 1.0, &mut r),
    );
    let (g2, bb2) = (g.clone(), bb.clone());
    check(
        "layer_norm x",
        fd_check(
            move |t, x| weighted(t, x.layer_norm(t.constant(&g), t.constant(&bb), 1e-5)?, 13),
            &a,
            STEP,
        )
        .unwrap(),
    );
    let a2 = a.clone();
    check(
        "layer_norm gain",
        fd_check(
            move |t, x| weighted(t, t.constant(&a2).layer_norm(x, t.constant(&bb2), 1e-5)?, 14),
            &g2,
            STEP,
        )
        .unwrap(),
    );
    check("gelu", fd_check(|t, x| weighted(t, x.gelu(), 15), &a, STEP).unwrap());
    check(
        "sigmoid",
        fd_check(|t, x| weighted(t, x.sigmoid(), 16), &a, STEP).unwrap(),
    );
    check("exp", fd_check(|t, x| weighted(t, x.exp(), 17), &a, STEP).unwrap());
    check("ln", fd_check(|t, x| weighted(t, x.ln()?, 18), &pos, STEP).unwrap());
    check(
        "clamp",
        fd_check(|t, x| weighted(t, x.clamp(-10.0, 10.0), 19), &a, STEP).unwrap(),
    );
    check("mean", fd_check(|_, x| Ok(x.exp().mean()), &a, STEP).unwrap());
    check(
        "mean_rows",
        fd_check(|t, x| weighted(t, x.mean_rows(), 20), &a, STEP).unwrap(),
    );
    check(
        "concat/slice rows",
        fd_check(
            |t, x| weighted(t, Var::concat_rows(&[x.slice_rows(1, 3)?, x])?, 21),
            &a,
            STEP,
        )
        .unwrap(),
    );
    check(
        "concat/slice cols",
        fd_check(
            |t, x| weighted(t, Var::concat_cols(&[x.slice_cols(1, 3)?, x])?, 22),
            &a,
            STEP,
        )
        .unwrap(),
    );
    check(
        "gather_rows",
        fd_check(|t, x| weighted(t, x.gather_rows(&[2, 0, 2, 1])?, 23), &a, STEP).unwrap(),
    );
    check(
        "pick",
        fd_check(|t, x| weighted(t, x.pick(&[3, 0, 2])?, 24), &a, STEP).unwrap(),
    );
    check(
        "l2_normalize_rows",
        fd_check(|t, x| weighted(t, x.l2_normalize_rows()?, 25), &a, STEP).unwrap(),
    );
    check(
        "group_max_rows",
        fd_check(|t, x| weighted(t, x.group_max_rows(3)?, 26), &a, STEP).unwrap(),
    );
    check(
        "cosine",
        fd_check(|_, x| Ok(x.row(0)?.cosine(x.row(2)?)?), &a, STEP).unwrap(),
    );
    let (k, v) = (
        Tensor::randn(vec![5, 4], 1.0, &mut r),
        Tensor::randn(vec![5, 4], 1.0, &mut r),
    );
    check(
        "attention",
        fd_check(
            move |t, x| weighted(t, attention(x, t.constant(&k), t.constant(&v), None)?, 27),
            &a,
            STEP,
        )
        .unwrap(),
    );
    let sq = Tensor::randn(vec![4, 4], 1.0, &mut r);
    check(
        "causal attention",
        fd_check(
            |t, x| weighted(t, attention(x, x.scale(0.7), x, Some(&Mask::causal(4)))?, 28),
            &sq,
            STEP,
        )
        .unwrap(),
    );
}

trait ReshapeTo {
    fn reshape_to(self, shape: Vec<usize>) -> Tensor;
    fn tile_rows(self, n: usize) -> Tensor;
}

impl ReshapeTo for Tensor {
    fn reshape_to(self, shape: Vec<usize>) -> Tensor {
        Tensor::new(shape, self.into_values()).unwrap()
    }

    fn tile_rows(self, n: usize) -> Tensor {
        let cols = self.cols();
        let values: Vec<f64> = (0..n).flat_map(|_| self.values().to_vec()).collect();
        Tensor::new(vec![n * self.rows(), cols], values).unwrap()
    }
}

#[test]
fn tape_is_topologically_ordered() {
    let (store, ids, x) = mlp_store(14);
    let tape = Tape::new();
    mlp_loss(&tape, &store, &ids, &x).unwrap();
    for id in 0..tape.len() {
        assert!(tape.node_inputs(id).iter().all(|&i| i < id));
    }
}

#[test]
fn replay_is_bitwise_deterministic() {
    let (store, ids, x) = mlp_store(15);
    let run = || {
        let tape = Tape::new();
        mlp_loss(&tape, &store, &ids, &x).unwrap().item().to_bits()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_are_positive(
        rows in 1usize..5, cols in 1usize..9, seed in any::<u64>(), scale in 0.1f64..50.0
    ) {
        let mut r = rng(seed);
        let x = Tensor::randn(vec![rows, cols], scale, &mut r);
        let tape = Tape::new();
        let y = tape.constant(&x).softmax().unwrap().value();
        for row in y.chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0 || scale > 10.0));
        }
    }

    #[test]
    fn random_ops_pass_fd_check(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = Tensor::randn(vec![m, k], 1.0, &mut r);
        let b = Tensor::randn(vec![k, n], 1.0, &mut r);
        let w: f64 = r.gen_range(0.5..1.5);
        let err = fd_check(move |t, x| {
            let y = x.matmul(t.constant(&b))?.gelu().softmax()?;
            weighted(t, y.scale(w), seed)
        }, &a, STEP).unwrap();
        prop_assert!(err < 1e-4, "err {}", err);
    }
}

#[test]
fn construction_checks_shape() {
    assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    assert!(matches!(
        Tensor::new(vec![2, 3], vec![0.0; 5]),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn grad_starts_and_resets_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t = Tensor::randn(vec![3, 4], 1.0, &mut rng);
    assert_eq!(t.grad().len(), t.values().len());
    assert!(t.grad().iter().all(|&g| g == 0.0));
    t.accumulate_grad(&[1.0; 12]).unwrap();
    assert!(t.grad().iter().all(|&g| g == 1.0));
    t.zero_grad();
    assert!(t.grad().iter().all(|&g| g == 0.0));
}

#[test]
fn cosine_cases() {
    let v = Tensor::vector(vec![0.3, -1.2, 2.0]);
    let neg = Tensor::vector(vec![-0.3, 1.2, -2.0]);
    assert!((cosine_sim(&v, &v).unwrap() - 1.0).abs() < 1e-15);
    assert!((cosine_sim(&v, &neg).unwrap() + 1.0).abs() < 1e-15);
    let e1 = Tensor::vector(vec![1.0, 0.0]);
    let e2 = Tensor::vector(vec![0.0, 1.0]);
    assert_eq!(cosine_sim(&e1, &e2).unwrap(), 0.0);
    let z = Tensor::vector(vec![0.0, 0.0]);
    assert!(cosine_sim(&e1, &z).is_err());
}

/// Both matmul gradients against hand-written transposed products.
#[test]
fn matmul_gradients_match_explicit_transposes() {
    let mut r = rng(40);
    let (m, k, n) = (3, 4, 5);
    let a = Tensor::randn(vec![m, k], 1.0, &mut r).with_requires_grad(true);
    let b = Tensor::randn(vec![k, n], 1.0, &mut r).with_requires_grad(true);
    let w = Tensor::randn(vec![m, n], 1.0, &mut r);
    let tape = Tape::new();
    let (av, bv) = (tape.leaf(&a), tape.leaf(&b));
    let loss = av.matmul(bv).unwrap().mul(tape.constant(&w)).unwrap().sum();
    let grads = tape.backward(loss).unwrap();
    let t = |x: &[f64], rows: usize, cols: usize| -> Vec<f64> {
        (0..cols * rows).map(|i| x[(i % rows) * cols + i / rows]).collect()
    };
    let ga = matmul_oracle(w.values(), &t(b.values(), k, n), m, n, k);
    let gb = matmul_oracle(&t(a.values(), m, k), w.values(), k, m, n);
    for (x, y) in grads.wrt(av).iter().zip(&ga).chain(grads.wrt(bv).iter().zip(&gb)) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}
