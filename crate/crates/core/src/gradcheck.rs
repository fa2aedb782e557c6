//! Finite-difference gradient verification.
//!
//! The correctness gate for every differentiable operation: analytic
//! gradients from the tape must agree with central differences of the
//! scalar loss. Checks run per parameter coordinate; callers choose
//! which coordinates to probe (all of them for small layers, a sampled
//! subset for whole networks).

use crate::array::Array;
use crate::error::{CoreError, Result};
use crate::params::{ParamId, ParamStore};

/// A parameter coordinate to probe: which parameter and which flat
/// element index within it.
#[derive(Clone, Debug)]
pub struct Coord {
    pub param: ParamId,
    pub index: usize,
}

/// Compares analytic gradients against central differences.
///
/// `loss` must re-evaluate the scalar objective from the store on each
/// call; `analytic` maps each probed parameter to its full gradient
/// array. Returns the maximum relative error
/// `|analytic - fd| / max(1, |fd|)` over the probed coordinates.
pub fn grad_check<F>(
    store: &mut ParamStore,
    coords: &[Coord],
    epsilon: f64,
    analytic: &dyn Fn(ParamId) -> Option<Array>,
    mut loss: F,
) -> Result<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(CoreError::Config(format!(
            "grad_check epsilon {epsilon} outside [1e-7, 1e-4]"
        )));
    }
    let mut max_err: f64 = 0.0;
    for coord in coords {
        let orig = store.value(coord.param).data()[coord.index];
        store.value_mut(coord.param).data_mut()[coord.index] = orig + epsilon;
        let up = loss(store);
        store.value_mut(coord.param).data_mut()[coord.index] = orig - epsilon;
        let down = loss(store);
        store.value_mut(coord.param).data_mut()[coord.index] = orig;
        let fd = (up - down) / (2.0 * epsilon);
        let grad = analytic(coord.param)
            .map(|g| g.data()[coord.index])
            .unwrap_or(0.0);
        let err = (grad - fd).abs() / fd.abs().max(1.0);
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}

/// All coordinates of the given parameters.
pub fn all_coords(store: &ParamStore, params: &[ParamId]) -> Vec<Coord> {
    let mut out = Vec::new();
    for &p in params {
        for index in 0..store.value(p).len() {
            out.push(Coord { param: p, index });
        }
    }
    out
}

/// A deterministic subsample of coordinates across the given
/// parameters, at most `per_param` from each.
pub fn sampled_coords(
    store: &ParamStore,
    params: &[ParamId],
    per_param: usize,
    seed: u64,
) -> Vec<Coord> {
    use rand::Rng;
    let mut rng = crate::params::seeded_rng(seed, 0xC0DE);
    let mut out = Vec::new();
    for &p in params {
        let n = store.value(p).len();
        if n <= per_param {
            for index in 0..n {
                out.push(Coord { param: p, index });
            }
        } else {
            for _ in 0..per_param {
                out.push(Coord {
                    param: p,
                    index: rng.gen_range(0..n),
                });
            }
        }
    }
    out
}
