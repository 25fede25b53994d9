//! Adam and the warmup/decay learning-rate schedule.

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates kept in `f64` regardless of the parameter precision.
#[derive(Clone, Debug)]
pub struct Adam {
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Adam {
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient keep their value and moments.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id.index()).and_then(Option::as_ref) else {
                continue;
            };
            let (m, v) = (&mut self.first[id.index()], &mut self.second[id.index()]);
            for (k, (w, &gk)) in store.get_mut(id).data_mut().iter_mut().zip(g.data()).enumerate() {
                let gk = gk.as_f64();
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
                let update = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + EPSILON);
                *w -= T::of(update);
            }
        }
    }
}

/// Linear warmup over the first `warmup * total` steps, then linear decay to
/// zero at `total`. `step` counts from 0.
pub fn scheduled_lr(base: f64, warmup: f64, step: usize, total: usize) -> f64 {
    let total = total.max(1);
    let warm = (warmup * total as f64).ceil() as usize;
    if step < warm {
        base * (step + 1) as f64 / warm as f64
    } else if warm >= total {
        base
    } else {
        base * (total - step.min(total)) as f64 / (total - warm) as f64
    }
}
