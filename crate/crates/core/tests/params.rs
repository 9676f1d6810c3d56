use biobridge::optim::{Optimizer, OptimizerKind};
use biobridge::params::{Checkpoint, ParamStore};
use biobridge::tensor::{backward, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sample_store() -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    store
        .insert("qformer.query_bank", Tensor::randn(vec![4, 3], 1.0, &mut rng))
        .unwrap();
    store.insert("qformer.log_tau", Tensor::scalar(0.07f64.ln())).unwrap();
    store
        .insert("prot_enc.embed", Tensor::randn(vec![5, 3], 1.0, &mut rng))
        .unwrap();
    store
}

#[test]
fn duplicate_paths_rejected() {
    let mut store = sample_store();
    assert!(store.insert("qformer.log_tau", Tensor::scalar(1.0)).is_err());
}

#[test]
fn prefix_iteration_and_freezing() {
    let mut store = sample_store();
    assert_eq!(store.ids_with_prefix("qformer.").count(), 2);
    assert_eq!(store.set_trainable("prot_enc.", false), 1);
    assert!(!store.by_name("prot_enc.embed").unwrap().requires_grad());
    assert!(store.by_name("qformer.log_tau").unwrap().requires_grad());
    assert!(!store.has_prefix("lm."));
}

#[test]
fn fingerprint_tracks_values_under_prefix_only() {
    let mut store = sample_store();
    let q = store.fingerprint("qformer.");
    let p = store.fingerprint("prot_enc.");
    let id = store.id("prot_enc.embed").unwrap();
    let v = &mut store.get_mut(id).values_mut()[0];
    *v = f64::from_bits(v.to_bits() + 1);
    assert_eq!(store.fingerprint("qformer."), q);
    assert_ne!(store.fingerprint("prot_enc."), p);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let store = sample_store();
    let ckpt = store.to_checkpoint(serde_json::json!({"k": 8}));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);

    let mut other = sample_store();
    let id = other.id("qformer.query_bank").unwrap();
    other.get_mut(id).values_mut().iter_mut().for_each(|v| *v = 0.0);
    other.load_checkpoint(&loaded).unwrap();
    assert_eq!(other.fingerprint(""), store.fingerprint(""));
}

#[test]
fn checkpoint_rejects_wrong_version_and_shape() {
    let store = sample_store();
    let mut ckpt = store.to_checkpoint(serde_json::Value::Null);
    let mut bad = ckpt.clone();
    bad.version = "bb-ckpt-0".into();
    assert!(sample_store().load_checkpoint(&bad).is_err());
    ckpt.params.get_mut("qformer.log_tau").unwrap().shape = vec![2];
    assert!(sample_store().load_checkpoint(&ckpt).is_err());
}

fn quadratic_store() -> ParamStore {
    let mut store = ParamStore::new();
    store.insert("x", Tensor::vector(vec![3.0, -2.0])).unwrap();
    store.insert("frozen", Tensor::vector(vec![1.0])).unwrap();
    store.set_trainable("frozen", false);
    store
}

fn run(kind: OptimizerKind, lr: f64, steps: usize) -> ParamStore {
    let mut store = quadratic_store();
    let mut opt = Optimizer::new(kind, lr, None, &store).unwrap();
    let x = store.id("x").unwrap();
    let f = store.id("frozen").unwrap();
    for _ in 0..steps {
        let tape = Tape::new();
        let xv = tape.param(&store, x);
        let fv = tape.param(&store, f);
        let loss = xv.mul(xv).unwrap().sum().add(fv.mul(fv).unwrap().sum()).unwrap();
        backward(loss, &mut store).unwrap();
        opt.step(&mut store).unwrap();
    }
    store
}

#[test]
fn sgd_and_adam_minimize_a_quadratic() {
    for kind in [OptimizerKind::Sgd { momentum: 0.5 }, OptimizerKind::adam()] {
        let store = run(kind, 0.05, 400);
        let x = store.by_name("x").unwrap().values();
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
        assert_eq!(store.by_name("frozen").unwrap().values(), &[1.0]);
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let store = run(OptimizerKind::adam(), 0.0, 5);
    assert_eq!(store.fingerprint(""), quadratic_store().fingerprint(""));
}

#[test]
fn negative_learning_rate_is_rejected() {
    assert!(Optimizer::new(OptimizerKind::default(), -1.0, None, &quadratic_store()).is_err());
}
