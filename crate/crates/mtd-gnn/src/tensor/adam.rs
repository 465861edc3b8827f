//! Adam optimizer state and the epoch learning-rate schedule.

use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First/second moment estimates for one flat parameter set. Moments are
/// kept per parameter index so the caller can own parameter storage.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    /// Moments start at zero, sized to match `sizes[i]` elements per parameter.
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters. `params[i]` and `grads[i]` must have
    /// the length declared at construction; `names` is used for diagnostics.
    pub fn step(
        &mut self,
        params: &mut [Vec<f64>],
        grads: &[Option<Vec<f64>>],
        names: &[String],
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - BETA1.powf(t);
        let bc2 = 1.0 - BETA2.powf(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].as_ref().ok_or_else(|| Error::MissingGradient {
                name: names.get(i).cloned().unwrap_or_else(|| format!("#{i}")),
            })?;
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.len() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}

/// One step of the decay recurrence: the rate entering epoch `epoch + 1`
/// given the rate used during epoch `epoch` (1-based), i.e.
/// `prev_rate / (1 + 0.9 * epoch)`.
pub fn lr_schedule(epoch: u64, prev_rate: f64) -> Result<f64> {
    if epoch < 1 {
        return Err(Error::InvalidEpoch {
            epoch: epoch as i64,
        });
    }
    Ok(prev_rate / (1.0 + 0.9 * epoch as f64))
}

/// Learning rate used during epoch `epoch` (1-based), starting from `eta0`:
/// the decay step applied `epoch - 1` times. Epoch 1 runs at `eta0`, epoch 2
/// at `eta0 / 1.9`, epoch 3 at that over 2.8, and so on.
pub fn rate_for_epoch(eta0: f64, epoch: u64) -> Result<f64> {
    if epoch < 1 {
        return Err(Error::InvalidEpoch {
            epoch: epoch as i64,
        });
    }
    let mut eta = eta0;
    for e in 1..epoch {
        eta = lr_schedule(e, eta)?;
    }
    Ok(eta)
}
