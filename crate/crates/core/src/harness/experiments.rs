//! Experiment building blocks shared by the CLI commands and the test suites.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::{rotate_field, BudgetRule, FeatureField};
use crate::registration::{
    evaluate_pair, rotate_labels, rotate_volume, train, unregistered_metrics, MetricsRecord, ModelConfig,
    RegistrationModel, TrainConfig, TrainLog, Variant, DEFAULT_ROTATION_AXIS,
};
use crate::so3::{octahedral_rotations, rep_matrix, FieldType, Rotation};
use crate::synth::{generate_pair, list_pairs, load_pair, pair_id, VolumePair};
use crate::tensor::{AdamConfig, ParamStore, Tape, Tensor};
use crate::volume::Volume;

use super::config::ExperimentConfig;

/// Training and test pairs with their ids.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<(String, VolumePair)>,
    pub test: Vec<(String, VolumePair)>,
}

impl Dataset {
    /// Generates pairs `0..n_train` for training and the next `n_test` for testing.
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let make = |i: usize| -> Result<(String, VolumePair)> {
            Ok((pair_id(i), generate_pair(&cfg.data.spec.for_pair(i))?))
        };
        let n = cfg.data.n_train;
        Ok(Self {
            train: (0..n).map(make).collect::<Result<_>>()?,
            test: (n..n + cfg.data.n_test).map(make).collect::<Result<_>>()?,
        })
    }

    /// Loads a directory written by `gen-data`, split as in [`generate`](Self::generate).
    pub fn load(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        let dirs = list_pairs(dir)?;
        let need = cfg.data.n_train + cfg.data.n_test;
        if dirs.len() < need {
            return Err(Error::Runtime(format!("{} holds {} pairs, config needs {need}", dir.display(), dirs.len())));
        }
        let mut pairs = Vec::new();
        for d in &dirs[..need] {
            let (m, p) = load_pair(d)?;
            if m.spec.extent != cfg.data.spec.extent {
                return Err(Error::Runtime(format!("pair {} has extent {}, config says {}", m.pair_id, m.spec.extent, cfg.data.spec.extent)));
            }
            pairs.push((m.pair_id, p));
        }
        let test = pairs.split_off(cfg.data.n_train);
        Ok(Self { train: pairs, test })
    }

    /// Loads `dir` when it holds pairs, otherwise generates in memory.
    pub fn load_or_generate(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        if dir.is_dir() && !list_pairs(dir)?.is_empty() {
            Self::load(dir, cfg)
        } else {
            Self::generate(cfg)
        }
    }
}

pub fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig { steps: cfg.optim.steps, adam: AdamConfig { lr: cfg.optim.lr, ..AdamConfig::default() } }
}

/// Trains a fresh model of `model_cfg` on `pairs`.
pub fn train_model(
    cfg: &ExperimentConfig,
    model_cfg: &ModelConfig,
    pairs: &[&VolumePair],
    on_step: impl FnMut(&TrainLog),
) -> Result<(RegistrationModel, ParamStore, Vec<TrainLog>)> {
    let model = RegistrationModel::new(model_cfg)?;
    let mut params = model.init_params(cfg.optim.seed)?;
    let io: Vec<_> = pairs.iter().map(|p| (p.moving.clone(), p.fixed.clone())).collect();
    let log = train(&model, &mut params, &io, &cfg.loss, &train_config(cfg), on_step)?;
    Ok((model, params, log))
}

/// Evaluation worker count from `STEERREG_THREADS` (default 1).
pub fn worker_count() -> usize {
    std::env::var("STEERREG_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n: &usize| n > 0).unwrap_or(1)
}

/// Per-pair metrics with the moving image and labels rotated by `angle_deg`
/// about the volume centre before registration.
pub fn evaluate_set(
    cfg: &ExperimentConfig,
    model: &RegistrationModel,
    params: &ParamStore,
    pairs: &[(String, VolumePair)],
    angle_deg: f64,
) -> Result<Vec<MetricsRecord>> {
    let one = |(id, p): &(String, VolumePair)| -> Result<MetricsRecord> {
        let moving = rotate_volume(&p.moving, angle_deg, DEFAULT_ROTATION_AXIS, 0.0)?;
        let moving_labels = rotate_labels(&p.moving_labels, angle_deg, DEFAULT_ROTATION_AXIS, 0)?;
        let m = evaluate_pair(model, params, &moving, &p.fixed, &moving_labels, &p.fixed_labels, &cfg.loss)?;
        Ok(MetricsRecord::new(id.clone(), m, angle_deg))
    };
    let workers = worker_count().min(pairs.len()).max(1);
    if workers == 1 {
        return pairs.iter().map(one).collect();
    }
    let chunk = pairs.len().div_ceil(workers);
    let results: Vec<Result<Vec<MetricsRecord>>> = std::thread::scope(|s| {
        let handles: Vec<_> = pairs.chunks(chunk).map(|c| s.spawn(move || c.iter().map(one).collect())).collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    Ok(results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

/// Unregistered baseline records (identity warp).
pub fn baseline_set(pairs: &[(String, VolumePair)]) -> Result<Vec<MetricsRecord>> {
    pairs
        .iter()
        .map(|(id, p)| Ok(MetricsRecord::new(id.clone(), unregistered_metrics(&p.moving_labels, &p.fixed_labels)?, 0.0)))
        .collect()
}

pub fn mean_dice(records: &[MetricsRecord]) -> f64 {
    records.iter().map(|r| r.dice_mean).sum::<f64>() / records.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamReport {
    pub standard_total: usize,
    pub equivariant_total: usize,
    pub standard_encoder: usize,
    pub equivariant_encoder: usize,
    pub total_ratio: f64,
    pub encoder_ratio: f64,
    pub equivariant_channels: Vec<usize>,
}

/// Standard vs equivariant parameter counts at the configured budget.
pub fn param_report(cfg: &ExperimentConfig) -> Result<ParamReport> {
    let mut std_cfg = cfg.model.clone();
    std_cfg.variant = Variant::Standard;
    let mut eq_cfg = cfg.model.clone();
    eq_cfg.variant = Variant::Equivariant;
    let s = RegistrationModel::new(&std_cfg)?;
    let e = RegistrationModel::new(&eq_cfg)?;
    Ok(ParamReport {
        standard_total: s.param_count(),
        equivariant_total: e.param_count(),
        standard_encoder: s.encoder_param_count(),
        equivariant_encoder: e.encoder_param_count(),
        total_ratio: e.param_count() as f64 / s.param_count() as f64,
        encoder_ratio: e.encoder_param_count() as f64 / s.encoder_param_count() as f64,
        equivariant_channels: e.encoder.out_channels(),
    })
}

/// Random two-channel scalar input of side `n`.
fn probe_input(n: usize, seed: u64) -> FeatureField {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let t = Tensor::randn(&[1, 2, n, n, n], 1.0, &mut rng);
    FeatureField::new(t, FieldType::scalars(2).expect("two scalars")).expect("matching channels")
}

fn encode(model: &RegistrationModel, params: &ParamStore, x: &Tensor) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape);
    let v = tape.constant(x.clone());
    let feats = model.encoder.forward(&mut tape, &p, v)?;
    Ok(feats.iter().map(|&f| tape.value(f).clone()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OctahedralResidual {
    /// Worst relative residual per encoder level over all 24 rotations.
    pub per_level: Vec<f64>,
    pub stack: f64,
}

/// `max_R ‖E(T_R x) − T_R E(x)‖ / ‖E(x)‖` over the octahedral group, per level.
pub fn octahedral_residual(model: &RegistrationModel, params: &ParamStore, extent: usize, seed: u64) -> Result<OctahedralResidual> {
    let x = probe_input(extent, seed);
    let base = encode(model, params, &x.tensor)?;
    let types = model.encoder.out_types();
    let mut per_level = vec![0.0f64; base.len()];
    for r in octahedral_rotations() {
        let rx = rotate_field(&x, &r)?;
        let out = encode(model, params, &rx.tensor)?;
        for (lvl, (f, g)) in base.iter().zip(&out).enumerate() {
            let want = rotate_field(&FeatureField::new(f.clone(), types[lvl].clone())?, &r)?;
            per_level[lvl] = per_level[lvl].max(g.rel_diff(&want.tensor));
        }
    }
    let stack = *per_level.last().unwrap_or(&0.0);
    Ok(OctahedralResidual { per_level, stack })
}

/// Resamples a feature field under a generic rotation: trilinear per channel,
/// then the representation matrix mixes each irrep slot.
pub fn rotate_field_resampled(field: &FeatureField, r: &Rotation) -> Result<FeatureField> {
    let [n, c, d, h, w] = field.tensor.dims5()?;
    let vol = d * h * w;
    let (axis, angle) = axis_angle(r);
    let mut spatial = vec![0.0; field.tensor.numel()];
    for bc in 0..n * c {
        let v = Volume::new([d, h, w], field.tensor.data()[bc * vol..(bc + 1) * vol].to_vec())?;
        let rv = rotate_volume(&v, angle.to_degrees(), axis, 0.0)?;
        spatial[bc * vol..(bc + 1) * vol].copy_from_slice(&rv.data);
    }
    let rho = rep_matrix(&field.ftype, r);
    let mut out = vec![0.0; spatial.len()];
    for b in 0..n {
        for i in 0..c {
            let dst = &mut out[(b * c + i) * vol..][..vol];
            for j in 0..c {
                let coef = rho[(i, j)];
                if coef == 0.0 {
                    continue;
                }
                for (o, s) in dst.iter_mut().zip(&spatial[(b * c + j) * vol..][..vol]) {
                    *o += coef * s;
                }
            }
        }
    }
    FeatureField::new(Tensor::new(field.tensor.shape().to_vec(), out)?, field.ftype.clone())
}

fn axis_angle(r: &Rotation) -> ([f64; 3], f64) {
    let [qw, x, y, z] = r.quaternion();
    let s = (x * x + y * y + z * z).sqrt();
    if s < 1e-15 {
        return ([0.0, 0.0, 1.0], 0.0);
    }
    ([x / s, y / s, z / s], 2.0 * s.atan2(qw))
}

/// Relative residual of the deepest encoder level under a generic rotation
/// about the default axis, measured inside the ball of radius `extent/4`
/// around the centre (rotated grids lose their corners).
pub fn generic_residual(model: &RegistrationModel, params: &ParamStore, extent: usize, angle_deg: f64, seed: u64) -> Result<f64> {
    let r = Rotation::from_axis_angle(DEFAULT_ROTATION_AXIS, angle_deg.to_radians())?;
    // Smooth input so resampling error does not dominate.
    let mut x = probe_input(extent, seed);
    for ch in 0..2 {
        let vol = extent.pow(3);
        crate::synth::gaussian_filter(&mut x.tensor.data_mut()[ch * vol..(ch + 1) * vol], [extent; 3], 2.0);
    }
    let rx = rotate_field_resampled(&x, &r)?;
    let level = model.encoder.out_types().len() - 1;
    let ftype = model.encoder.out_types()[level].clone();
    let f = encode(model, params, &x.tensor)?.swap_remove(level);
    let g = encode(model, params, &rx.tensor)?.swap_remove(level);
    let want = rotate_field_resampled(&FeatureField::new(f, ftype)?, &r)?.tensor;
    let [_, c, d, h, w] = g.dims5()?;
    let centre = (d as f64 - 1.0) / 2.0;
    let radius = (d as f64 - 1.0) / 4.0;
    let (mut num, mut den) = (0.0, 0.0);
    for ch in 0..c {
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let r2 = [z, y, xx].iter().map(|&v| (v as f64 - centre).powi(2)).sum::<f64>();
                    if r2 > radius * radius {
                        continue;
                    }
                    let i = ((ch * d + z) * h + y) * w + xx;
                    num += (g.data()[i] - want.data()[i]).powi(2);
                    den += want.data()[i].powi(2);
                }
            }
        }
    }
    Ok((num / den.max(1e-300)).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub ratio: [usize; 3],
    pub seed: u64,
    pub channels: Vec<usize>,
    pub params: usize,
    pub encoder_params: usize,
    pub dice_mean: f64,
}

/// Trains one equivariant model per `(ratio, seed)` and scores it on the test
/// pairs. Deep levels use the nearest-total budget rule so that ratios whose
/// unit exceeds the budget (2:2:2 is 18 channels) still get one copy.
pub fn ratio_sweep(cfg: &ExperimentConfig, data: &Dataset, ratios: &[[usize; 3]], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let train_pairs: Vec<&VolumePair> = data.train.iter().map(|(_, p)| p).collect();
    let mut rows = Vec::new();
    for &ratio in ratios {
        let mut mcfg = cfg.model.clone();
        mcfg.variant = Variant::Equivariant;
        mcfg.ratio = ratio;
        mcfg.budget_rule = BudgetRule::Nearest;
        for &seed in seeds {
            let mut run = cfg.clone();
            run.optim.seed = seed;
            run.model = mcfg.clone();
            let (model, params, _) = train_model(&run, &mcfg, &train_pairs, |_| {})?;
            let rec = evaluate_set(&run, &model, &params, &data.test, 0.0)?;
            rows.push(SweepRow {
                ratio,
                seed,
                channels: model.encoder.out_channels(),
                params: model.param_count(),
                encoder_params: model.encoder_param_count(),
                dice_mean: mean_dice(&rec),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EfficiencyRow {
    pub variant: Variant,
    pub fraction: f64,
    pub n_train: usize,
    pub dice_mean: f64,
}

/// Trains each variant on nested fractions of the training pairs.
pub fn sample_efficiency(
    cfg: &ExperimentConfig,
    data: &Dataset,
    fractions: &[f64],
    variants: &[Variant],
    split_seed: u64,
) -> Result<Vec<EfficiencyRow>> {
    let subsets = crate::synth::dataset_split(data.train.len(), fractions, split_seed)?;
    let mut rows = Vec::new();
    for &variant in variants {
        let mut mcfg = cfg.model.clone();
        mcfg.variant = variant;
        for (&fraction, subset) in fractions.iter().zip(&subsets) {
            let pairs: Vec<&VolumePair> = subset.iter().map(|&i| &data.train[i].1).collect();
            let (model, params, _) = train_model(cfg, &mcfg, &pairs, |_| {})?;
            let rec = evaluate_set(cfg, &model, &params, &data.test, 0.0)?;
            rows.push(EfficiencyRow { variant, fraction, n_train: subset.len(), dice_mean: mean_dice(&rec) });
        }
    }
    Ok(rows)
}
