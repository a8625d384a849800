//! Central-difference verification of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::tensor::{ParamId, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MAX_COORDINATES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub coordinates: usize,
    /// Largest analytic gradient magnitude seen; zero means the function was flat.
    pub max_abs_gradient: f64,
}

/// Compares backward-pass gradients with central differences on up to
/// [`MAX_COORDINATES`] sampled parameter coordinates.
///
/// `f` must build a scalar on the tape deterministically (dropout off).
/// The relative error of a coordinate is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, seed: u64, f: F) -> GradCheck
where
    F: Fn(&ParamStore, &mut Tape) -> Var,
{
    let mut tape = Tape::new();
    let out = f(store, &mut tape);
    let grads = tape.backward(out);
    drop(tape);

    let coords: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| (0..store.get(id).value.len()).map(move |k| (id, k)))
        .collect();
    let picked: Vec<(ParamId, usize)> = if coords.len() <= MAX_COORDINATES {
        coords
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, coords.len(), MAX_COORDINATES).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| coords[i]).collect()
    };

    let eval = |store: &ParamStore| {
        let mut tape = Tape::new();
        let v = f(store, &mut tape);
        tape.value(v).item()
    };

    let mut analytic_cache: Vec<(ParamId, Option<crate::tensor::Tensor>)> = Vec::new();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for &(id, k) in &picked {
        let analytic = match analytic_cache.iter().find(|(p, _)| *p == id) {
            Some((_, g)) => g.as_ref().map_or(0.0, |g| g.data()[k]),
            None => {
                let g = grads.get(id);
                let a = g.as_ref().map_or(0.0, |g| g.data()[k]);
                analytic_cache.push((id, g));
                a
            }
        };
        let original = store.get(id).value.data()[k];
        store.get_mut(id).value.data_mut()[k] = original + eps;
        let plus = eval(store);
        store.get_mut(id).value.data_mut()[k] = original - eps;
        let minus = eval(store);
        store.get_mut(id).value.data_mut()[k] = original;
        let numeric = (plus - minus) / (2.0 * eps);

        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max((analytic - numeric).abs() / denom);
        max_abs = max_abs.max(analytic.abs());
    }
    GradCheck {
        max_relative_error: max_rel,
        coordinates: picked.len(),
        max_abs_gradient: max_abs,
    }
}
