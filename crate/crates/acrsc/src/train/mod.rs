//! Adversarial training of the convex regularizer.
//!
//! The training objective is the critic loss
//!
//! ```text
//! L = mean psi(x_i) - mean psi(z_i) + lambda_gp * L_gp + lambda_sc * L_sc
//! ```
//!
//! with the gradient penalty `L_gp = mean (||grad psi(eps x + (1-eps) z)|| - 1)^2`
//! pushing the critic toward 1-Lipschitz behavior, and the source-condition
//! penalty `L_sc = mean ||(A*)^+ grad psi(x_i)||` (smoothed) encouraging the
//! ground-truth images to satisfy the source condition of the operator `A`.
//!
//! Per-sample terms inside a batch may run in parallel; the reduction
//! always walks samples in index order, so results are identical for any
//! thread count.

pub mod adam;

pub use adam::{adam_step, AdamState};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::data::DatasetPair;
use crate::error::{Error, Result};
use crate::op::ForwardOp;
use crate::reg::checkpoint::save_params;
use crate::reg::icnn::{
    input_grad_vjp, project_feasible_in_place, psi_input_grad, psi_value_and_grads, IcnnParams,
    ParamSet,
};
use crate::rng::RngStream;
use crate::tensor::ImageTensor;

/// All training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lambda_gp: f64,
    pub lambda_sc: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub seed: u64,
    /// Smoothing for the SC penalty: `sqrt(||w||^2 + sc_eps^2)`.
    pub sc_eps: f64,
    /// Penalize `||w||^2` instead of the smoothed norm.
    pub sc_squared: bool,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl TrainConfig {
    /// Denoising defaults: sigma 0.2 data, lambda_gp 10, lambda_sc 2,
    /// batch 64, 10 epochs, Adam(0.90, 0.99).
    pub fn mnist_defaults() -> Self {
        TrainConfig {
            lambda_gp: 10.0,
            lambda_sc: 2.0,
            batch_size: 64,
            epochs: 10,
            eta: 1e-3,
            beta1: 0.90,
            beta2: 0.99,
            eps_adam: 1e-8,
            seed: 0,
            sc_eps: 1e-8,
            sc_squared: false,
            cg_tol: 1e-10,
            cg_max_iter: 400,
        }
    }

    /// Sparse-view CT defaults: lambda_gp 5, batch 4.
    pub fn ct_defaults() -> Self {
        TrainConfig {
            lambda_gp: 5.0,
            batch_size: 4,
            cg_tol: 1e-8,
            ..TrainConfig::mnist_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_gp < 0.0 || self.lambda_sc < 0.0 {
            return Err(Error::invalid("penalty weights must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.eta > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.sc_eps > 0.0) {
            return Err(Error::invalid("sc smoothing eps must be positive"));
        }
        Ok(())
    }
}

/// Value and gradient of the source-condition penalty over a batch.
#[derive(Debug)]
pub struct ScPenalty {
    pub value: f64,
    pub grad: ParamSet,
    /// Samples dropped because a CG solve did not converge.
    pub dropped: usize,
}

struct ScSample {
    value: f64,
    vjp: ParamSet,
}

fn sc_sample(
    params: &IcnnParams,
    x: &ImageTensor,
    a: &ForwardOp,
    cfg: &TrainConfig,
    precomputed_grad: Option<&ImageTensor>,
) -> Result<Option<ScSample>> {
    let g = match precomputed_grad {
        Some(g) => g.clone(),
        None => psi_input_grad(params, x)?,
    };
    let sol = a.pinv_adjoint_apply(&g, cfg.cg_tol, cfg.cg_max_iter)?;
    if !sol.converged {
        return Ok(None);
    }
    let w = sol.w;
    let (value, direction) = if cfg.sc_squared {
        (w.norm_sq(), w.scale(2.0))
    } else {
        let l = (w.norm_sq() + cfg.sc_eps * cfg.sc_eps).sqrt();
        (l, w.scale(1.0 / l))
    };
    let back = a.pinv_apply(&direction, cfg.cg_tol, cfg.cg_max_iter)?;
    if !back.converged {
        return Ok(None);
    }
    let vjp = input_grad_vjp(params, x, &back.w)?;
    Ok(Some(ScSample { value, vjp }))
}

/// `L_sc` over a batch of ground-truth images, with its exact parameter
/// gradient. Samples whose pseudo-inverse solves fail to converge are
/// excluded from the mean and counted in `dropped`.
pub fn sc_penalty(
    params: &IcnnParams,
    batch: &[ImageTensor],
    a: &ForwardOp,
    cfg: &TrainConfig,
) -> Result<ScPenalty> {
    if batch.is_empty() {
        return Err(Error::invalid("sc_penalty needs a nonempty batch"));
    }
    let samples: Vec<Result<Option<ScSample>>> = batch
        .par_iter()
        .map(|x| sc_sample(params, x, a, cfg, None))
        .collect();
    let mut grad = ParamSet::zeros_like(&params.arch);
    let mut value = 0.0;
    let mut kept = 0usize;
    for s in samples {
        match s? {
            Some(sample) => {
                value += sample.value;
                grad.add_scaled(1.0, &sample.vjp);
                kept += 1;
            }
            None => {}
        }
    }
    let dropped = batch.len() - kept;
    if kept > 0 {
        value /= kept as f64;
        let scale = 1.0 / kept as f64;
        let mut scaled = ParamSet::zeros_like(&params.arch);
        scaled.add_scaled(scale, &grad);
        grad = scaled;
    }
    Ok(ScPenalty { value, grad, dropped })
}

/// One evaluation of the full training objective.
#[derive(Debug)]
pub struct LossEval {
    pub value: f64,
    pub grad: ParamSet,
    /// `mean psi(x_i) - mean psi(z_i)`.
    pub wass_term: f64,
    pub gp_term: f64,
    pub sc_term: f64,
    pub cg_dropped: usize,
}

struct SampleEval {
    psi_r: f64,
    psi_n: f64,
    gp: f64,
    main_grad: ParamSet,
    sc: Option<ScSample>,
}

/// The adversarial objective with gradient and SC penalties, plus its exact
/// parameter gradient. A fresh interpolation weight is drawn per pair from
/// `rng`; replaying the same stream replays the same loss.
pub fn loss_eq3(
    params: &IcnnParams,
    batch_r: &[ImageTensor],
    batch_n: &[ImageTensor],
    cfg: &TrainConfig,
    a: &ForwardOp,
    rng: &mut RngStream,
) -> Result<LossEval> {
    if batch_r.len() != batch_n.len() || batch_r.is_empty() {
        return Err(Error::invalid(format!(
            "batches must be nonempty and equal length, got {} and {}",
            batch_r.len(),
            batch_n.len()
        )));
    }
    cfg.validate()?;
    let n = batch_r.len();
    let eps: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let inv_n = 1.0 / n as f64;

    let evals: Vec<Result<SampleEval>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = &batch_r[i];
            let z = &batch_n[i];
            let mut main_grad = ParamSet::zeros_like(&params.arch);

            let (psi_r, grad_r, input_grad_r) = psi_value_and_grads(params, x)?;
            main_grad.add_scaled(inv_n, &grad_r);
            let (psi_n, grad_n, _) = psi_value_and_grads(params, z)?;
            main_grad.add_scaled(-inv_n, &grad_n);

            // gradient penalty at the interpolate eps*x + (1-eps)*z
            let mut gp = 0.0;
            if cfg.lambda_gp > 0.0 {
                let xhat = x.lerp(z, eps[i]);
                let h = psi_input_grad(params, &xhat)?;
                let nh = h.norm();
                gp = (nh - 1.0) * (nh - 1.0);
                if nh > 1e-30 {
                    let v = h.scale(2.0 * (nh - 1.0) / nh);
                    let vjp = input_grad_vjp(params, &xhat, &v)?;
                    main_grad.add_scaled(cfg.lambda_gp * inv_n, &vjp);
                }
            }

            let sc = if cfg.lambda_sc > 0.0 {
                sc_sample(params, x, a, cfg, Some(&input_grad_r))?
            } else {
                None
            };

            Ok(SampleEval {
                psi_r,
                psi_n,
                gp,
                main_grad,
                sc,
            })
        })
        .collect();

    let mut grad = ParamSet::zeros_like(&params.arch);
    let mut wass = 0.0;
    let mut gp = 0.0;
    let mut sc_value = 0.0;
    let mut sc_grad_acc = ParamSet::zeros_like(&params.arch);
    let mut sc_kept = 0usize;
    for e in evals {
        let e = e?;
        wass += inv_n * (e.psi_r - e.psi_n);
        gp += inv_n * e.gp;
        grad.add_scaled(1.0, &e.main_grad);
        if let Some(s) = e.sc {
            sc_value += s.value;
            sc_grad_acc.add_scaled(1.0, &s.vjp);
            sc_kept += 1;
        }
    }
    let cg_dropped = if cfg.lambda_sc > 0.0 { n - sc_kept } else { 0 };
    if sc_kept > 0 {
        sc_value /= sc_kept as f64;
        grad.add_scaled(cfg.lambda_sc / sc_kept as f64, &sc_grad_acc);
    }
    let value = wass + cfg.lambda_gp * gp + cfg.lambda_sc * sc_value;
    Ok(LossEval {
        value,
        grad,
        wass_term: wass,
        gp_term: gp,
        sc_term: sc_value,
        cg_dropped,
    })
}

/// One row of the training log.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub wass_term: f64,
    pub gp_term: f64,
    pub sc_term: f64,
    pub cg_dropped: usize,
    pub wall_ms: u64,
}

pub fn log_csv_header() -> &'static str {
    "epoch,step,loss,wass_term,gp_term,sc_term,cg_dropped,wall_ms"
}

pub fn log_row_csv(row: &LogRow) -> String {
    format!(
        "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{},{}",
        row.epoch, row.step, row.loss, row.wass_term, row.gp_term, row.sc_term, row.cg_dropped,
        row.wall_ms
    )
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainRun {
    pub params: IcnnParams,
    pub log: Vec<LogRow>,
    pub epoch_checkpoints: Vec<PathBuf>,
    pub final_checkpoint: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

/// Run the training loop: seeded shuffled mini-batches, the full objective,
/// Adam with feasibility projection, per-epoch and final checkpoints.
pub fn train(
    init: IcnnParams,
    dataset: &DatasetPair,
    a: &ForwardOp,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainRun> {
    cfg.validate()?;
    init.validate("train init")?;
    if dataset.real.is_empty() || dataset.noisy.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let mut params = init;
    project_feasible_in_place(&mut params);
    let mut state = AdamState::new(&params);
    let rng = RngStream::new(cfg.seed);
    let mut log = Vec::new();
    let mut epoch_checkpoints = Vec::new();

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let batches_per_epoch = dataset.real.len().min(dataset.noisy.len()) / cfg.batch_size;
    if batches_per_epoch == 0 {
        return Err(Error::invalid(format!(
            "dataset smaller than one batch of {}",
            cfg.batch_size
        )));
    }

    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order_r: Vec<usize> = (0..dataset.real.len()).collect();
        let mut order_n: Vec<usize> = (0..dataset.noisy.len()).collect();
        let mut shuffle_rng = rng.derive(1_000_000 + epoch as u64);
        shuffle_rng.shuffle(&mut order_r);
        shuffle_rng.shuffle(&mut order_n);

        for b in 0..batches_per_epoch {
            let started = Instant::now();
            let br: Vec<ImageTensor> = order_r[b * cfg.batch_size..(b + 1) * cfg.batch_size]
                .iter()
                .map(|&i| dataset.real[i].clone())
                .collect();
            let bn: Vec<ImageTensor> = order_n[b * cfg.batch_size..(b + 1) * cfg.batch_size]
                .iter()
                .map(|&i| dataset.noisy[i].clone())
                .collect();
            let mut step_rng = rng.derive(step as u64);
            let eval = loss_eq3(&params, &br, &bn, cfg, a, &mut step_rng)?;
            adam_step(&mut state, &mut params, &eval.grad, cfg)?;
            step += 1;
            log.push(LogRow {
                epoch,
                step,
                loss: eval.value,
                wass_term: eval.wass_term,
                gp_term: eval.gp_term,
                sc_term: eval.sc_term,
                cg_dropped: eval.cg_dropped,
                wall_ms: started.elapsed().as_millis() as u64,
            });
        }

        if let Some(dir) = out_dir {
            let path = dir.join(format!("ckpt_epoch_{epoch}.acrsc"));
            save_params(&params, &path)?;
            epoch_checkpoints.push(path);
        }
    }

    let mut final_checkpoint = None;
    let mut log_path = None;
    if let Some(dir) = out_dir {
        let path = dir.join("ckpt_final.acrsc");
        save_params(&params, &path)?;
        final_checkpoint = Some(path);
        let lp = dir.join("train_log.csv");
        let mut csv = String::from(log_csv_header());
        csv.push('\n');
        for row in &log {
            csv.push_str(&log_row_csv(row));
            csv.push('\n');
        }
        std::fs::write(&lp, csv)?;
        log_path = Some(lp);
    }

    Ok(TrainRun {
        params,
        log,
        epoch_checkpoints,
        final_checkpoint,
        log_path,
    })
}
