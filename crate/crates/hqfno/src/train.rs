//! Training: Lion optimizer, learning-rate schedules, relative loss
//! balancing with random lookback, global-norm gradient clipping, and the
//! deterministic single-threaded training loop with CSV logging and
//! checkpointing.

use crate::checkpoint::save_checkpoint;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, EvalOutput};
use crate::model::{build_input_field, stack_batch, GradStore, HybridFno, ModelConfig};
use crate::num::Real;
use crate::synthdata::{metal_mask, FieldSample, MaterialConstants, MASK_SHARPNESS_DEFAULT};
use ndarray::{Array3, Array5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Schedule {
    Cosine { t_max: usize, eta_min: f64 },
    ExpDecay { rate: f64, every: usize },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Cosine {
            t_max: 6000,
            eta_min: 1e-5,
        }
    }
}

/// Learning rate at a step. Cosine annealing clamps past t_max.
pub fn lr_at(step: usize, lr0: f64, schedule: Schedule) -> f64 {
    match schedule {
        Schedule::Cosine { t_max, eta_min } => {
            let s = step.min(t_max) as f64 / t_max as f64;
            eta_min + (lr0 - eta_min) * (1.0 + (std::f64::consts::PI * s).cos()) / 2.0
        }
        Schedule::ExpDecay { rate, every } => lr0 * rate.powi((step / every) as i32),
    }
}

/// One Lion update over a named parameter set:
/// update = -lr * sign(b1 m + (1-b1) g) - lr * wd * p, then
/// m <- b2 m + (1-b2) g.
pub fn lion_step<T: Real>(
    params: &mut [(String, ndarray::ArrayViewMutD<'_, T>)],
    grads: &GradStore<T>,
    momenta: &mut GradStore<T>,
    lr: T,
    beta1: T,
    beta2: T,
    weight_decay: T,
) -> Result<()> {
    for (name, view) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::state(format!("missing gradient for {name}")))?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in {name}")));
        }
        momenta.insert_zeros(name, g.shape());
        let m = momenta.get(name).unwrap().clone();
        let one = T::one();
        for ((p, &gv), &mv) in view.iter_mut().zip(g.iter()).zip(m.iter()) {
            let c = beta1 * mv + (one - beta1) * gv;
            let sign = if c > T::zero() {
                one
            } else if c < T::zero() {
                -one
            } else {
                T::zero()
            };
            *p = *p - lr * sign - lr * weight_decay * *p;
        }
        // Momentum update with beta2.
        let m_entry = momenta.get_mut(name).unwrap();
        for (mv, &gv) in m_entry.iter_mut().zip(g.iter()) {
            *mv = beta2 * *mv + (one - beta2) * gv;
        }
    }
    Ok(())
}

/// Relative loss balancing with random lookback. Weights are positive and
/// sum to the number of terms; `fixed_weights` bypasses the scheme.
#[derive(Debug, Clone)]
pub struct ReloBraLo {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub eps: f64,
    pub fixed_weights: bool,
    first: Option<Vec<f64>>,
    prev: Option<Vec<f64>>,
    weights: Option<Vec<f64>>,
}

impl ReloBraLo {
    pub fn new(alpha: f64, beta: f64, tau: f64, eps: f64, fixed_weights: bool) -> Self {
        ReloBraLo {
            alpha,
            beta,
            tau,
            eps,
            fixed_weights,
            first: None,
            prev: None,
            weights: None,
        }
    }

    fn balanced(&self, current: &[f64], reference: &[f64]) -> Vec<f64> {
        let m = current.len() as f64;
        let ratios: Vec<f64> = current
            .iter()
            .zip(reference)
            .map(|(&l, &lr)| l / (self.tau * lr + self.eps))
            .collect();
        let peak = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = ratios.iter().map(|&x| (x - peak).exp()).collect();
        let denom: f64 = exps.iter().sum();
        exps.iter().map(|&e| m * e / denom).collect()
    }

    /// Record this step's per-term losses and return the weights to apply.
    pub fn update(&mut self, losses: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        if losses.is_empty() || losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric("invalid loss values for balancing".into()));
        }
        if self.fixed_weights {
            return Ok(vec![1.0; losses.len()]);
        }
        let out = match (&self.first, &self.prev, &self.weights) {
            (Some(first), Some(prev), Some(w_prev)) => {
                let hist = self.balanced(losses, first);
                let recent = self.balanced(losses, prev);
                let rho = if rng.gen_range(0.0..1.0) < self.beta {
                    1.0
                } else {
                    0.0
                };
                (0..losses.len())
                    .map(|i| {
                        self.alpha * (rho * w_prev[i] + (1.0 - rho) * hist[i])
                            + (1.0 - self.alpha) * recent[i]
                    })
                    .collect()
            }
            _ => {
                self.first = Some(losses.to_vec());
                vec![1.0; losses.len()]
            }
        };
        self.prev = Some(losses.to_vec());
        self.weights = Some(out.clone());
        Ok(out)
    }
}

fn default_steps() -> usize {
    6000
}
fn default_lr0() -> f64 {
    1e-4
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.99)
}
fn default_grad_clip() -> f64 {
    0.5
}
fn default_val_every() -> usize {
    50
}
fn default_batch() -> usize {
    1
}
fn default_relobralo_alpha() -> f64 {
    0.95
}
fn default_relobralo_beta() -> f64 {
    0.99
}
fn default_relobralo_tau() -> f64 {
    3.0
}
fn default_relobralo_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr0: f64,
    pub schedule: Schedule,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub val_every: usize,
    pub batch: usize,
    pub seed: u64,
    pub relobralo_alpha: f64,
    pub relobralo_beta: f64,
    pub relobralo_tau: f64,
    pub relobralo_eps: f64,
    pub fixed_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: default_steps(),
            lr0: default_lr0(),
            schedule: Schedule::default(),
            betas: default_betas(),
            weight_decay: 0.0,
            grad_clip: default_grad_clip(),
            val_every: default_val_every(),
            batch: default_batch(),
            seed: 0,
            relobralo_alpha: default_relobralo_alpha(),
            relobralo_beta: default_relobralo_beta(),
            relobralo_tau: default_relobralo_tau(),
            relobralo_eps: default_relobralo_eps(),
            fixed_weights: false,
        }
    }
}

impl TrainConfig {
    /// Baseline preset: exponential decay, smaller base rate.
    pub fn classical_defaults() -> Self {
        TrainConfig {
            lr0: 6e-5,
            schedule: Schedule::ExpDecay {
                rate: 0.98,
                every: 100,
            },
            ..TrainConfig::default()
        }
    }
}

/// Reference tensors prepared once per sample for the loss: blended
/// reference temperature, metal mask, raw reference alpha.
struct PreparedSample {
    input: Array5<f64>,
    t_tilde_ref: Array3<f64>,
    mask: Array3<f64>,
    alpha_ref: Array3<f64>,
}

fn prepare(sample: &FieldSample, config: &ModelConfig, mat: &MaterialConstants) -> PreparedSample {
    let g = metal_mask(&sample.alpha, MASK_SHARPNESS_DEFAULT);
    let t_b = mat.t_boil / mat.t_ref;
    let mut t_tilde = sample.t_norm.clone();
    ndarray::Zip::from(&mut t_tilde).and(&g).for_each(|t, &gv| {
        *t = t_b + gv * (*t - t_b);
    });
    PreparedSample {
        input: build_input_field::<f64>(&config.features, sample.grid.dims, sample.point.normalized()),
        t_tilde_ref: t_tilde,
        mask: g,
        alpha_ref: sample.alpha.clone(),
    }
}

/// Per-field L1 losses of a batch output against prepared references, plus
/// the gradient of `w_t L_t + w_a L_a` with respect to the raw outputs.
fn masked_l1(
    out: &Array5<f64>,
    batch: &[&PreparedSample],
    mat: &MaterialConstants,
    weights: (f64, f64),
) -> (f64, f64, Array5<f64>) {
    let dims = out.dim();
    let n = (dims.0 * dims.2 * dims.3 * dims.4) as f64;
    let t_b = mat.t_boil / mat.t_ref;
    let mut loss_t = 0.0;
    let mut loss_a = 0.0;
    let mut grad = Array5::zeros(dims);
    for (b, p) in batch.iter().enumerate() {
        for ((xi, yi, zi), &g) in p.mask.indexed_iter() {
            let t_pred = out[(b, 0, xi, yi, zi)];
            let t_tilde_pred = t_b + g * (t_pred - t_b);
            let dt = t_tilde_pred - p.t_tilde_ref[(xi, yi, zi)];
            loss_t += dt.abs();
            grad[(b, 0, xi, yi, zi)] = weights.0 * dt.signum() * g / n;
            let da = out[(b, 1, xi, yi, zi)] - p.alpha_ref[(xi, yi, zi)];
            loss_a += da.abs();
            grad[(b, 1, xi, yi, zi)] = weights.1 * da.signum() / n;
        }
    }
    (loss_t / n, loss_a / n, grad)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub train_log: PathBuf,
    pub val_log: PathBuf,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub best_val_rel_mae: Option<f64>,
    pub steps_run: usize,
}

pub const TRAIN_LOG_HEADER: &str =
    "step,lr,loss_t,loss_alpha,weight_t,weight_alpha,total_loss,grad_norm";
pub const VAL_LOG_HEADER: &str =
    "step,t_rel_mae,t_rel_rmse,t_mae_kelvin,alpha_mae,alpha_iou,fl_mae,fl_iou";

fn val_row(step: usize, eval: &EvalOutput) -> String {
    let t = eval.report("t_tilde").expect("temperature report");
    let a = eval.report("alpha").expect("alpha report");
    let f = eval.report("f_l").expect("liquid fraction report");
    format!(
        "{step},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
        t.rel_mae,
        t.rel_rmse,
        t.mae,
        a.mae,
        a.iou_mean.unwrap_or(1.0),
        f.mae,
        f.iou_mean.unwrap_or(1.0)
    )
}

/// Deterministic training run. The robust scalers are warmed up with one
/// data-driven update from the first training batch before step 0, then
/// updated exactly once per training step and never during validation.
/// Aborting on a non-finite loss retains the last good checkpoint.
pub fn train_run(
    model: &mut HybridFno<f64>,
    tcfg: &TrainConfig,
    train: &[FieldSample],
    val: &[FieldSample],
    mat: &MaterialConstants,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::data("empty training split"));
    }
    std::fs::create_dir_all(out_dir)?;
    let config = model.config.clone();
    let prepared: Vec<PreparedSample> =
        train.iter().map(|s| prepare(s, &config, mat)).collect();
    let batch_size = tcfg.batch.max(1).min(train.len());

    // Scaler warm-up from the first batch (counts as the first EMA update).
    {
        let first: Vec<&PreparedSample> = prepared.iter().take(batch_size).collect();
        let input = stack_batch(&first.iter().map(|p| p.input.clone()).collect::<Vec<_>>());
        let _ = model.forward(input.view(), true)?;
    }

    let final_path = out_dir.join("final.ckpt");
    let best_path = out_dir.join("best.ckpt");
    let train_log_path = out_dir.join("train_log.csv");
    let val_log_path = out_dir.join("val_log.csv");
    let mut train_log = std::io::BufWriter::new(std::fs::File::create(&train_log_path)?);
    let mut val_log = std::io::BufWriter::new(std::fs::File::create(&val_log_path)?);
    writeln!(train_log, "{TRAIN_LOG_HEADER}")?;
    writeln!(val_log, "{VAL_LOG_HEADER}")?;

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut balancer = ReloBraLo::new(
        tcfg.relobralo_alpha,
        tcfg.relobralo_beta,
        tcfg.relobralo_tau,
        tcfg.relobralo_eps,
        tcfg.fixed_weights,
    );
    let mut momenta = GradStore::<f64>::new();
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut cursor = order.len(); // trigger shuffle on first use
    let mut last_good = save_checkpoint(model)?;
    let mut initial_loss = None;
    let mut final_loss = None;
    let mut best_val: Option<f64> = None;
    let mut weights = (1.0, 1.0);

    let run_validation = |model: &mut HybridFno<f64>,
                              step: usize,
                              val_log: &mut std::io::BufWriter<std::fs::File>,
                              best_val: &mut Option<f64>|
     -> Result<()> {
        if val.is_empty() {
            return Ok(());
        }
        let eval = evaluate_model(model, val, mat)?;
        writeln!(val_log, "{}", val_row(step, &eval))?;
        let rel = eval.report("t_tilde").unwrap().rel_mae;
        if best_val.is_none_or(|b| rel < b) {
            *best_val = Some(rel);
            std::fs::write(&best_path, save_checkpoint(model)?)?;
        }
        Ok(())
    };

    for step in 0..tcfg.steps {
        // Assemble the batch from a reshuffled epoch order.
        let mut batch: Vec<&PreparedSample> = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            if cursor >= order.len() {
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.gen_range(0..=i));
                }
                cursor = 0;
            }
            batch.push(&prepared[order[cursor]]);
            cursor += 1;
        }
        let input = stack_batch(&batch.iter().map(|p| p.input.clone()).collect::<Vec<_>>());
        let (out, trace) = match model.forward(input.view(), true) {
            Ok(v) => v,
            Err(Error::Numeric(msg)) => {
                std::fs::write(&final_path, &last_good)?;
                return Err(Error::Numeric(format!(
                    "{msg} at step {step}; last good checkpoint retained"
                )));
            }
            Err(other) => return Err(other),
        };
        // Loss values first (unit weights), then balanced weights for the
        // gradient.
        let (loss_t, loss_a, _) = masked_l1(&out, &batch, mat, (1.0, 1.0));
        if !loss_t.is_finite() || !loss_a.is_finite() {
            std::fs::write(&final_path, &last_good)?;
            return Err(Error::Numeric(format!(
                "non-finite loss at step {step}; last good checkpoint retained"
            )));
        }
        let w = balancer.update(&[loss_t, loss_a], &mut rng)?;
        weights = (w[0], w[1]);
        let total = weights.0 * loss_t + weights.1 * loss_a;
        let (_, _, grad_out) = masked_l1(&out, &batch, mat, weights);
        let mut grads = model.backward(&trace, grad_out.view())?;
        if let Some(name) = grads.has_non_finite() {
            std::fs::write(&final_path, &last_good)?;
            return Err(Error::Numeric(format!(
                "non-finite gradient in {name} at step {step}; last good checkpoint retained"
            )));
        }
        let norm = grads.global_norm();
        if tcfg.grad_clip > 0.0 && norm > tcfg.grad_clip {
            grads.scale_all(tcfg.grad_clip / norm);
        }
        let lr = lr_at(step, tcfg.lr0, tcfg.schedule);
        {
            let mut params = model.visit_params_mut();
            lion_step(
                &mut params,
                &grads,
                &mut momenta,
                lr,
                tcfg.betas.0,
                tcfg.betas.1,
                tcfg.weight_decay,
            )?;
        }
        writeln!(
            train_log,
            "{step},{lr:.12e},{loss_t:.12e},{loss_a:.12e},{:.12e},{:.12e},{total:.12e},{norm:.12e}",
            weights.0, weights.1
        )?;
        if initial_loss.is_none() {
            initial_loss = Some(total);
        }
        final_loss = Some(total);
        last_good = save_checkpoint(model)?;
        if (step + 1) % tcfg.val_every == 0 && step + 1 < tcfg.steps {
            run_validation(model, step + 1, &mut val_log, &mut best_val)?;
        }
    }
    // Final validation on the trained parameters, then final checkpoint.
    if tcfg.steps > 0 {
        run_validation(model, tcfg.steps, &mut val_log, &mut best_val)?;
    }
    std::fs::write(&final_path, save_checkpoint(model)?)?;
    if !best_path.exists() {
        std::fs::write(&best_path, save_checkpoint(model)?)?;
    }
    train_log.flush()?;
    val_log.flush()?;
    let _ = weights;
    Ok(TrainOutcome {
        final_checkpoint: final_path,
        best_checkpoint: best_path,
        train_log: train_log_path,
        val_log: val_log_path,
        initial_loss,
        final_loss,
        best_val_rel_mae: best_val,
        steps_run: tcfg.steps,
    })
}
