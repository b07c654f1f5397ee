//! Central finite-difference verification of analytic gradients.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;


use crate::error::{bail, Result};
use crate::params::{Gradients, Group, ParameterStore};

/// Denominator floor for the relative error, so entries whose true gradient
/// is zero are judged on absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: BTreeMap<Group, f64>,
    pub entries_checked: usize,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.values().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() < self.tolerance
    }
}

/// Options bounding the cost on large parameter tensors.
#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    /// At most this many entries per parameter tensor, evenly strided.
    pub max_entries_per_param: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { max_entries_per_param: usize::MAX }
    }
}

/// Compares the analytic gradient returned by `loss_fn` against
/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every selected parameter entry. `loss_fn` must
/// be deterministic: any noise it uses has to be replayed identically on each call.
pub fn finite_diff_gradcheck<F>(
    mut loss_fn: F,
    params: &mut ParameterStore,
    eps: f64,
    tol: f64,
    options: GradcheckOptions,
) -> Result<GradcheckReport>
where
    F: FnMut(&ParameterStore) -> Result<(f64, Gradients)>,
{
    let (base, grads) = loss_fn(params)?;
    if !base.is_finite() {
        bail!(NonFinite, "loss at the unperturbed point");
    }
    let mut max_rel_error = BTreeMap::new();
    let mut checked = 0;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let group = params.param(id).group;
        let n = params.value(id).len();
        let stride = if n > options.max_entries_per_param { n.div_ceil(options.max_entries_per_param) } else { 1 };
        let worst = max_rel_error.entry(group).or_insert(0.0);
        for i in (0..n).step_by(stride.max(1)) {
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let orig = params.value(id).data()[i];
            params.value_mut(id).data_mut()[i] = orig + eps;
            let (plus, _) = loss_fn(params)?;
            params.value_mut(id).data_mut()[i] = orig - eps;
            let (minus, _) = loss_fn(params)?;
            params.value_mut(id).data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                bail!(NonFinite, "loss under perturbation of {}", params.param(id).name);
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            let rel = (analytic - numeric).abs() / denom;
            if rel > *worst {
                *worst = rel;
            }
            checked += 1;
        }
    }
    Ok(GradcheckReport { max_rel_error, entries_checked: checked, tolerance: tol })
}
