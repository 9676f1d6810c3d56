use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// Denominator floor for relative errors, so exact zeros compare cleanly.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Max relative error between the tape gradient of `f` at `x` and central
/// differences `(f(x+he) − f(x−he)) / 2h` over every coordinate.
pub fn fd_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if step <= 0.0 {
        return Err(Error::Invalid(format!("fd step must be positive, got {step}")));
    }
    let analytic = {
        let tape = Tape::new();
        let leaf = tape.leaf(&x.clone().with_requires_grad(true));
        let out = f(&tape, leaf)?;
        tape.backward(out)?.wrt(leaf)
    };
    let scalar = |x: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let out = f(&tape, tape.constant(x))?;
        if out.numel() != 1 {
            return Err(Error::Invalid("fd_check needs a scalar function".into()));
        }
        Ok(out.item())
    };
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + step;
        let plus = scalar(&probe)?;
        probe.values_mut()[i] = orig - step;
        let minus = scalar(&probe)?;
        probe.values_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(rel_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Like [`fd_check`], but perturbs the listed parameters of a store in place
/// (restoring them afterwards) and compares against store gradients.
pub fn fd_check_params<F>(f: F, store: &mut ParamStore, ids: &[ParamId], step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    if step <= 0.0 {
        return Err(Error::Invalid(format!("fd step must be positive, got {step}")));
    }
    let saved_grads: Vec<Vec<f64>> = ids.iter().map(|&id| store.get(id).grad().to_vec()).collect();
    for &id in ids {
        store.get_mut(id).zero_grad();
    }
    {
        let tape = Tape::new();
        let loss = f(&tape, store)?;
        super::backward(loss, store)?;
    }
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| store.get(id).grad().to_vec()).collect();
    for (&id, saved) in ids.iter().zip(saved_grads) {
        let t = store.get_mut(id);
        t.zero_grad();
        t.accumulate_grad(&saved)?;
    }

    let eval = |store: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        Ok(f(&tape, store)?.item())
    };
    let mut worst: f64 = 0.0;
    for (k, &id) in ids.iter().enumerate() {
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).values()[i];
            store.get_mut(id).values_mut()[i] = orig + step;
            let plus = eval(store)?;
            store.get_mut(id).values_mut()[i] = orig - step;
            let minus = eval(store)?;
            store.get_mut(id).values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(rel_error(analytic[k][i], numeric));
        }
    }
    Ok(worst)
}
