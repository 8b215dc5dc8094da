//! Bias-corrected Adam with the ICNN feasibility projection.

use crate::error::{Error, Result};
use crate::reg::icnn::{project_feasible_in_place, IcnnParams, ParamSet};

use super::TrainConfig;

/// First/second-moment accumulators mirroring the parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &IcnnParams) -> Self {
        AdamState {
            m: ParamSet::zeros_like(&params.arch),
            v: ParamSet::zeros_like(&params.arch),
            t: 0,
        }
    }
}

/// One Adam update followed by the nonnegativity projection of the z-path
/// and readout weights. Rejects non-finite gradients with diagnostics.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut IcnnParams,
    grads: &ParamSet,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.has_nan() {
        return Err(Error::invalid(format!(
            "non-finite gradient at adam step {} (|grad|^2 so far {})",
            state.t + 1,
            grads.norm_sq()
        )));
    }
    state.t += 1;
    let b1 = cfg.beta1;
    let b2 = cfg.beta2;
    state.m.zip2_mut(grads, grads, |m, g, _| *m = b1 * *m + (1.0 - b1) * g);
    state.v.zip2_mut(grads, grads, |v, g, _| *v = b2 * *v + (1.0 - b2) * g * g);
    let corr1 = 1.0 - b1.powi(state.t as i32);
    let corr2 = 1.0 - b2.powi(state.t as i32);
    let eta = cfg.eta;
    let eps = cfg.eps_adam;
    params
        .set
        .zip2_mut(&state.m, &state.v, |p, m, v| {
            let mhat = m / corr1;
            let vhat = v / corr2;
            *p -= eta * mhat / (vhat.sqrt() + eps);
        });
    project_feasible_in_place(params);
    Ok(())
}
