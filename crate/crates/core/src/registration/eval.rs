//! Per-pair evaluation and aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::loss::{total_loss, LossConfig};
use super::metrics::{assd_mean, dice, foreground_labels};
use super::model::RegistrationModel;
use super::warp::{warp_image, warp_labels};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Tensor};
use crate::volume::{ImageVolume, LabelVolume};

/// Overlap and distance scores of one label map against another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub dice_mean: f64,
    /// Keyed by label; labels absent from both maps are omitted.
    pub dice_per_label: BTreeMap<i32, f64>,
    pub assd_mean: f64,
    pub loss: f64,
}

/// One JSON line of an evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub pair_id: String,
    pub dice_mean: f64,
    pub dice_per_label: BTreeMap<i32, f64>,
    pub assd_mean: f64,
    pub loss: f64,
    pub rotation_deg: f64,
}

impl MetricsRecord {
    pub fn new(pair_id: impl Into<String>, m: PairMetrics, rotation_deg: f64) -> Self {
        Self {
            pair_id: pair_id.into(),
            dice_mean: m.dice_mean,
            dice_per_label: m.dice_per_label,
            assd_mean: m.assd_mean,
            loss: m.loss,
            rotation_deg,
        }
    }
}

/// Dice and ASSD of `warped` against `fixed` over their non-zero labels.
pub fn label_metrics(warped: &LabelVolume, fixed: &LabelVolume) -> Result<PairMetrics> {
    let labels = foreground_labels(&warped.data, &fixed.data);
    let d = dice(&warped.data, &fixed.data, &labels)?;
    Ok(PairMetrics {
        dice_mean: d.mean,
        dice_per_label: d.per_label.into_iter().filter_map(|(l, v)| v.map(|v| (l, v))).collect(),
        assd_mean: assd_mean(warped, fixed, &labels)?,
        loss: f64::NAN,
    })
}

/// Metrics before registration: the moving labels compared as they are.
pub fn unregistered_metrics(moving_labels: &LabelVolume, fixed_labels: &LabelVolume) -> Result<PairMetrics> {
    label_metrics(moving_labels, fixed_labels)
}

fn check_dims(a: [usize; 3], b: [usize; 3], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Predicted displacement `[3, D, H, W]` and its loss for one pair.
pub fn predict(
    model: &RegistrationModel,
    params: &ParamStore,
    moving: &ImageVolume,
    fixed: &ImageVolume,
    loss_cfg: &LossConfig,
) -> Result<(Tensor, f64)> {
    check_dims(moving.dims, fixed.dims, "moving vs fixed")?;
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let m = tape.constant(moving.to_tensor());
    let f = tape.constant(fixed.to_tensor());
    let parts = total_loss(&mut tape, model, &bound, m, f, loss_cfg)?;
    let loss = tape.value(parts.total).item();
    let disp = tape.value(parts.displacement).clone();
    let [d, h, w] = moving.dims;
    Ok((disp.reshape(&[3, d, h, w])?, loss))
}

/// Registers `moving` to `fixed`, warps the moving labels by nearest
/// neighbour and scores them against the fixed labels.
pub fn evaluate_pair(
    model: &RegistrationModel,
    params: &ParamStore,
    moving: &ImageVolume,
    fixed: &ImageVolume,
    moving_labels: &LabelVolume,
    fixed_labels: &LabelVolume,
    loss_cfg: &LossConfig,
) -> Result<PairMetrics> {
    check_dims(moving_labels.dims, fixed_labels.dims, "label maps")?;
    check_dims(moving.dims, moving_labels.dims, "image vs labels")?;
    let (disp, loss) = predict(model, params, moving, fixed, loss_cfg)?;
    let warped = warp_labels(moving_labels, disp.data());
    let mut m = label_metrics(&warped, fixed_labels)?;
    m.loss = loss;
    Ok(m)
}

/// Warps with an explicit displacement instead of a model.
pub fn evaluate_with_field(
    moving: &ImageVolume,
    moving_labels: &LabelVolume,
    fixed_labels: &LabelVolume,
    disp: &[f64],
) -> Result<(ImageVolume, PairMetrics)> {
    check_dims(moving_labels.dims, fixed_labels.dims, "label maps")?;
    if disp.len() != 3 * moving.len() {
        return Err(Error::Shape(format!("field has {} values for {} voxels", disp.len(), moving.len())));
    }
    let warped = warp_labels(moving_labels, disp);
    Ok((warp_image(moving, disp), label_metrics(&warped, fixed_labels)?))
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// NaN entries are skipped; an empty input gives NaN.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
        let n = v.len() as f64;
        if v.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() < 2 { 0.0 } else { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
        Self { mean, std }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub dice: MeanStd,
    pub assd: MeanStd,
}

pub fn aggregate(records: &[MetricsRecord]) -> Aggregate {
    Aggregate {
        n: records.len(),
        dice: MeanStd::of(records.iter().map(|r| r.dice_mean)),
        assd: MeanStd::of(records.iter().map(|r| r.assd_mean)),
    }
}
