//! Central finite differences for checking analytic gradients.

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Denominator floor: below it entries are compared in absolute terms
/// (`1e-9` at the default tolerance). Central differences at [`STEP`] on a
/// loss of order one carry rounding noise near `1e-10`, so smaller
/// gradients cannot be resolved relatively.
pub const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(tensor name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }

    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = relative_error(analytic, numeric);
        if e > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(e);
            self.worst = Some((name.to_string(), index, analytic, numeric));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_err >= self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst.or(self.worst.take());
        }
    }
}

/// Compares `grads` (indexed by parameter) against central differences of
/// `loss` for every element of the listed parameters.
pub fn check_params(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    grads: &[Option<Tensor<f64>>],
    loss: impl Fn(&ParamStore<f64>) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let mut probe = store.clone();
    for &id in ids {
        let n = store.get(id).numel();
        for k in 0..n {
            let orig = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + STEP;
            let up = loss(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig - STEP;
            let down = loss(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grads[id.index()].as_ref().map_or(0.0, |g| g.data()[k]);
            report.record(store.name(id), k, analytic, numeric);
        }
    }
    Ok(report)
}

/// Same as [`check_params`] for free-standing input tensors.
pub fn check_inputs(
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    loss: impl Fn(&[Tensor<f64>]) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.numel() {
            let orig = input.data()[k];
            probe[i].data_mut()[k] = orig + STEP;
            let up = loss(&probe)?;
            probe[i].data_mut()[k] = orig - STEP;
            let down = loss(&probe)?;
            probe[i].data_mut()[k] = orig;
            report.record(&format!("input{i}"), k, analytic[i].data()[k], (up - down) / (2.0 * STEP));
        }
    }
    Ok(report)
}
