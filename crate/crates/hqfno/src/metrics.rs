//! Evaluation metrics: MAE/RMSE, relative variants against a global
//! normalization constant, IoU of thresholded masks, per-fold aggregation,
//! and the masked-field evaluation protocol.
//!
//! Temperature metrics are computed on the blended field `T~` for both
//! prediction and reference, with the mask built from the reference metal
//! fraction only; absolute temperature errors are reported in Kelvin by
//! rescaling with `t_ref`.

use crate::error::{Error, Result};
use crate::model::{build_input_field, HybridFno};
use crate::synthdata::{
    liquid_fraction, mask_fields, metal_mask, FieldSample, MaterialConstants,
    MASK_SHARPNESS_DEFAULT,
};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

pub const RELATIVE_EPSILON: f64 = 1e-8;
pub const IOU_THRESHOLD: f64 = 0.5;

/// Plain mean absolute and root-mean-square error between two fields.
pub fn field_errors(pred: &Array3<f64>, reference: &Array3<f64>) -> Result<(f64, f64)> {
    if pred.dim() != reference.dim() {
        return Err(Error::shape("field shape mismatch"));
    }
    let n = pred.len();
    if n == 0 {
        return Err(Error::domain("empty field"));
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for (p, r) in pred.iter().zip(reference.iter()) {
        let d = p - r;
        abs_sum += d.abs();
        sq_sum += d * d;
    }
    Ok((abs_sum / n as f64, (sq_sum / n as f64).sqrt()))
}

/// Relative errors against a global normalization constant mu_y (the mean of
/// the ground-truth values over the evaluation set).
pub fn relative_errors(mae: f64, rmse: f64, mu_y: f64, eps: f64) -> (f64, f64) {
    (mae / (mu_y + eps), rmse / (mu_y + eps))
}

/// Intersection over union of thresholded masks. An empty union counts as
/// perfect agreement (both predict absence).
pub fn iou(pred: &Array3<f64>, reference: &Array3<f64>, tau: f64) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (p, r) in pred.iter().zip(reference.iter()) {
        let a = *p > tau;
        let b = *r > tau;
        if a && b {
            inter += 1;
        }
        if a || b {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub field_name: String,
    pub mae: f64,
    pub rmse: f64,
    pub rel_mae: f64,
    pub rel_rmse: f64,
    pub iou_mean: Option<f64>,
    pub iou_std: Option<f64>,
    pub n_samples: usize,
}

impl MetricReport {
    /// Rows of (metric, value) for the CSV schema.
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        let mut rows = vec![
            ("mae", self.mae),
            ("rmse", self.rmse),
            ("rel_mae", self.rel_mae),
            ("rel_rmse", self.rel_rmse),
        ];
        if let Some(m) = self.iou_mean {
            rows.push(("iou_mean", m));
        }
        if let Some(s) = self.iou_std {
            rows.push(("iou_std", s));
        }
        rows
    }
}

/// Per-sample metric values for process-window maps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub power: f64,
    pub v_scan: f64,
    pub h_star: f64,
    pub t_mae_kelvin: f64,
    pub t_rmse_kelvin: f64,
    pub alpha_mae: f64,
    pub alpha_iou: f64,
    pub fl_mae: f64,
    pub fl_iou: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutput {
    pub reports: Vec<MetricReport>,
    pub per_sample: Vec<SampleMetrics>,
}

impl EvalOutput {
    pub fn report(&self, field: &str) -> Option<&MetricReport> {
        self.reports.iter().find(|r| r.field_name == field)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run the full masked evaluation protocol of a model over a sample set.
pub fn evaluate_model(
    model: &mut HybridFno<f64>,
    samples: &[FieldSample],
    mat: &MaterialConstants,
) -> Result<EvalOutput> {
    if samples.is_empty() {
        return Err(Error::domain("empty evaluation set"));
    }
    let k = MASK_SHARPNESS_DEFAULT;
    let t_ref = mat.t_ref;

    struct PerSample {
        t_tilde_pred: Array3<f64>,
        t_tilde_ref: Array3<f64>,
        alpha_pred: Array3<f64>,
        alpha_ref: Array3<f64>,
        fl_pred: Array3<f64>,
        fl_ref: Array3<f64>,
    }
    let mut prepared = Vec::with_capacity(samples.len());
    for s in samples {
        let input = build_input_field::<f64>(
            &model.config.features,
            s.grid.dims,
            s.point.normalized(),
        );
        let (out, _) = model.forward(input.view(), false)?;
        let dims = s.grid.dims;
        let mut t_pred = Array3::zeros((dims[0], dims[1], dims[2]));
        let mut a_pred = Array3::zeros((dims[0], dims[1], dims[2]));
        for ((xi, yi, zi), v) in t_pred.indexed_iter_mut() {
            *v = out[(0, 0, xi, yi, zi)];
        }
        for ((xi, yi, zi), v) in a_pred.indexed_iter_mut() {
            *v = out[(0, 1, xi, yi, zi)];
        }
        // Mask from the reference alpha for both prediction and reference.
        let g = metal_mask(&s.alpha, k);
        let blend = |t: &Array3<f64>| -> Array3<f64> {
            let t_b = mat.t_boil / t_ref;
            let mut out = t.clone();
            ndarray::Zip::from(&mut out).and(&g).for_each(|tv, &gv| {
                *tv = t_b + gv * (*tv - t_b);
            });
            out
        };
        let t_tilde_pred = blend(&t_pred);
        let (t_tilde_ref, fl_ref, _) = mask_fields(&s.t_norm, &s.alpha, mat, k);
        let mut fl_pred = liquid_fraction(&t_pred, mat);
        fl_pred *= &g;
        prepared.push(PerSample {
            t_tilde_pred,
            t_tilde_ref,
            alpha_pred: a_pred,
            alpha_ref: s.alpha.clone(),
            fl_pred,
            fl_ref,
        });
    }

    // Global normalization constants over the whole evaluation set:
    // masked reference temperature, raw reference alpha / liquid fraction.
    let global_mean = |f: &dyn Fn(&PerSample) -> &Array3<f64>| -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for p in &prepared {
            let a = f(p);
            sum += a.iter().sum::<f64>();
            n += a.len();
        }
        sum / n as f64
    };
    let mu_t = global_mean(&|p: &PerSample| &p.t_tilde_ref);
    let mu_alpha = global_mean(&|p: &PerSample| &p.alpha_ref);
    let mu_fl = global_mean(&|p: &PerSample| &p.fl_ref);

    let mut per_sample = Vec::with_capacity(prepared.len());
    let mut agg: Vec<(f64, f64)> = vec![(0.0, 0.0); 3]; // (abs_sum, sq_sum) per field
    let mut counts = [0usize; 3];
    let mut alpha_ious = Vec::new();
    let mut fl_ious = Vec::new();
    for (p, s) in prepared.iter().zip(samples) {
        let (t_mae, t_rmse) = field_errors(&p.t_tilde_pred, &p.t_tilde_ref)?;
        let (a_mae, _) = field_errors(&p.alpha_pred, &p.alpha_ref)?;
        let (f_mae, _) = field_errors(&p.fl_pred, &p.fl_ref)?;
        let a_iou = iou(&p.alpha_pred, &p.alpha_ref, IOU_THRESHOLD);
        let f_iou = iou(&p.fl_pred, &p.fl_ref, IOU_THRESHOLD);
        alpha_ious.push(a_iou);
        fl_ious.push(f_iou);
        per_sample.push(SampleMetrics {
            power: s.point.power,
            v_scan: s.point.v_scan,
            h_star: s.point.h_star,
            t_mae_kelvin: t_mae * t_ref,
            t_rmse_kelvin: t_rmse * t_ref,
            alpha_mae: a_mae,
            alpha_iou: a_iou,
            fl_mae: f_mae,
            fl_iou: f_iou,
        });
        // Pooled sums for set-level MAE/RMSE.
        let fields = [
            (&p.t_tilde_pred, &p.t_tilde_ref),
            (&p.alpha_pred, &p.alpha_ref),
            (&p.fl_pred, &p.fl_ref),
        ];
        for (i, (pr, rf)) in fields.iter().enumerate() {
            for (a, b) in pr.iter().zip(rf.iter()) {
                let d = a - b;
                agg[i].0 += d.abs();
                agg[i].1 += d * d;
            }
            counts[i] += pr.len();
        }
    }

    let make_report = |name: &str,
                       idx: usize,
                       mu: f64,
                       kelvin: bool,
                       ious: Option<&[f64]>|
     -> MetricReport {
        let mae = agg[idx].0 / counts[idx] as f64;
        let rmse = (agg[idx].1 / counts[idx] as f64).sqrt();
        let (rel_mae, rel_rmse) = relative_errors(mae, rmse, mu, RELATIVE_EPSILON);
        let scale = if kelvin { t_ref } else { 1.0 };
        let (iou_mean, iou_std) = match ious {
            Some(v) => {
                let (m, s) = mean_std(v);
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        MetricReport {
            field_name: name.to_string(),
            mae: mae * scale,
            rmse: rmse * scale,
            rel_mae,
            rel_rmse,
            iou_mean,
            iou_std,
            n_samples: samples.len(),
        }
    };
    let reports = vec![
        make_report("t_tilde", 0, mu_t, true, None),
        make_report("alpha", 1, mu_alpha, false, Some(&alpha_ious)),
        make_report("f_l", 2, mu_fl, false, Some(&fl_ious)),
    ];
    Ok(EvalOutput {
        reports,
        per_sample,
    })
}

/// Fold statistics per metric: mean, population std, min, max.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSummary {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub values: Vec<f64>,
}

/// Aggregate a named metric across folds.
pub fn fold_aggregate(metric: &str, values: &[f64]) -> Result<FoldSummary> {
    if values.is_empty() {
        return Err(Error::domain("fold aggregation needs at least one fold"));
    }
    let (mean, std) = mean_std(values);
    Ok(FoldSummary {
        metric: metric.to_string(),
        mean,
        std,
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        values: values.to_vec(),
    })
}
