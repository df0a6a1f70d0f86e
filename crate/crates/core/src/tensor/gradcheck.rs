//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it is
//! independent of every backward rule it checks.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Grads, ParamStore, Session, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-6)` over the
    /// checked entries. The floor keeps exactly-zero gradients (e.g. attention
    /// key biases) from turning round-off into a unit error.
    pub rel_err: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries checked per parameter tensor; `None` checks all of them.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_entries: None,
            seed: 0,
        }
    }
}

const ABS_FLOOR: f64 = 1e-6;

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nn: f64 = n.iter().map(|x| x * x).sum();
    libm::sqrt(diff) / libm::sqrt(na.max(nn)).max(ABS_FLOOR)
}

/// Compares the analytic gradient of the scalar built by `forward` against
/// central differences, for every trainable tensor in `store`.
///
/// `forward` runs in inference mode (dropout off) and must be deterministic.
pub fn gradcheck<F>(store: &mut ParamStore<f64>, opts: GradCheckOptions, mut forward: F) -> Result<Vec<ParamCheck>>
where
    F: FnMut(&mut Session<'_, f64>) -> Result<Var>,
{
    let mut grads = Grads::new(store);
    {
        let mut sess = Session::new(store, false, opts.seed);
        let loss = forward(&mut sess)?;
        sess.backward_into(loss, &mut grads)?;
    }
    let mut eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut sess = Session::new(store, false, opts.seed);
        let loss = forward(&mut sess)?;
        Ok(sess.graph.value(loss).data()[0])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    for id in store.ids().collect::<Vec<_>>() {
        if !store.is_trainable(id) {
            continue;
        }
        let n = store.get(id).numel();
        let entries: Vec<usize> = match opts.max_entries {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let analytic_full = grads.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| alloc::vec![0.0; n]);
        let mut analytic = Vec::with_capacity(entries.len());
        let mut numeric = Vec::with_capacity(entries.len());
        for &e in &entries {
            let orig = store.get(id).data()[e];
            store.get_mut(id).data_mut()[e] = orig + opts.step;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[e] = orig - opts.step;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[e] = orig;
            numeric.push((up - down) / (2.0 * opts.step));
            analytic.push(analytic_full[e]);
        }
        out.push(ParamCheck {
            name: store.name(id).to_string(),
            checked: entries.len(),
            rel_err: rel_err(&analytic, &numeric),
        });
    }
    Ok(out)
}

/// Largest relative error in a report, with the offending tensor's name.
pub fn worst(checks: &[ParamCheck]) -> Option<(&str, f64)> {
    checks
        .iter()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .map(|c| (c.name.as_str(), c.rel_err))
}
