//! Command implementations: each writes its artifacts under an output
//! directory and returns a short human-readable summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::experiments::*;
use crate::error::{Error, Result};
use crate::layers::parse_ratio;
use crate::registration::{aggregate, MetricsRecord, RegistrationModel, Variant};
use crate::synth::{generate_dataset, write_atomic, FRACTIONS};
use crate::tensor::{load_checkpoint, save_checkpoint, Checkpoint, ParamStore};

pub const CHECKPOINT_FILE: &str = "checkpoint.strg";
pub const DATA_DIR: &str = "data";
/// Rotation angles of the robustness protocol, degrees.
pub const ROTATION_ANGLES: [f64; 7] = [-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0];
/// Channel ratios of the irreps sweep.
pub const SWEEP_RATIOS: [[usize; 3]; 7] = [[1, 0, 0], [0, 1, 0], [0, 0, 1], [4, 4, 0], [7, 3, 0], [5, 2, 1], [2, 2, 2]];

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    write_atomic(path, &b)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut b = Vec::new();
    for it in items {
        serde_json::to_writer(&mut b, it)?;
        b.push(b'\n');
    }
    write_atomic(path, &b)
}

fn prepare(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn dataset(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    Dataset::load_or_generate(&out.join(DATA_DIR), cfg)
}

#[derive(Serialize)]
struct Hashed<'a, T: Serialize> {
    config_hash: &'a str,
    #[serde(flatten)]
    inner: T,
}

pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let dir = out.join(DATA_DIR);
    prepare(&dir)?;
    let manifests = generate_dataset(&dir, &cfg.data.spec, cfg.data.n_train + cfg.data.n_test)?;
    #[derive(Serialize)]
    struct Index {
        spacing_mm: [f64; 3],
        n_train: usize,
        n_test: usize,
        pairs: BTreeMap<String, f64>,
    }
    let pairs: BTreeMap<String, f64> = manifests.iter().map(|m| (m.pair_id.clone(), m.unregistered_dice)).collect();
    let hash = cfg.hash();
    write_json(
        &dir.join("dataset.json"),
        &Hashed {
            config_hash: &hash,
            inner: Index { spacing_mm: [1.0; 3], n_train: cfg.data.n_train, n_test: cfg.data.n_test, pairs },
        },
    )?;
    let mean = manifests.iter().map(|m| m.unregistered_dice).sum::<f64>() / manifests.len().max(1) as f64;
    Ok(format!("wrote {} pairs to {} (unregistered Dice {mean:.4}, spacing 1 mm)", manifests.len(), dir.display()))
}

#[derive(Serialize)]
struct CurveRow {
    config_hash: String,
    step: usize,
    pair: usize,
    total: f64,
    similarity: f64,
    smoothness: f64,
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    prepare(out)?;
    let data = dataset(cfg, out)?;
    let pairs: Vec<_> = data.train.iter().map(|(_, p)| p).collect();
    let (model, params, log) = train_model(cfg, &cfg.model, &pairs, |_| {})?;
    let hash = cfg.hash();
    let ck = Checkpoint {
        params,
        meta: [
            ("config_hash".to_string(), hash.clone()),
            ("model_hash".to_string(), cfg.model_hash()),
            ("variant".to_string(), cfg.model.variant.as_str().to_string()),
            ("steps".to_string(), cfg.optim.steps.to_string()),
        ]
        .into(),
    };
    let mut buf = Vec::new();
    save_checkpoint(&ck, &mut buf)?;
    write_atomic(&out.join(CHECKPOINT_FILE), &buf)?;
    let rows: Vec<CurveRow> = log
        .iter()
        .map(|l| CurveRow {
            config_hash: hash.clone(),
            step: l.step,
            pair: l.pair,
            total: l.total,
            similarity: l.similarity,
            smoothness: l.smoothness,
        })
        .collect();
    write_csv(&out.join("train_curve.csv"), &rows)?;
    let last = log.last().map_or(f64::NAN, |l| l.total);
    Ok(format!(
        "trained {} model ({} parameters) for {} steps, final loss {last:.5}",
        cfg.model.variant.as_str(),
        model.param_count(),
        log.len()
    ))
}

/// Loads a checkpoint, refusing it when its model structure differs from `cfg`.
pub fn load_model(cfg: &ExperimentConfig, path: &Path) -> Result<(RegistrationModel, ParamStore)> {
    let file = std::fs::File::open(path).map_err(|e| Error::Runtime(format!("cannot open {}: {e}", path.display())))?;
    let ck = load_checkpoint(std::io::BufReader::new(file))?;
    let want = cfg.model_hash();
    match ck.meta.get("model_hash") {
        Some(h) if *h == want => {}
        Some(h) => {
            return Err(Error::Runtime(format!(
                "checkpoint {} was trained with model config {}, config has {}",
                path.display(),
                &h[..12.min(h.len())],
                &want[..12]
            )))
        }
        None => return Err(Error::Runtime(format!("checkpoint {} has no model hash", path.display()))),
    }
    let model = RegistrationModel::new(&cfg.model)?;
    let mut params = model.init_params(0)?;
    params.load_from(&ck.params)?;
    Ok((model, params))
}

fn checkpoint_path(out: &Path, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint.map_or_else(|| out.join(CHECKPOINT_FILE), Path::to_path_buf)
}

#[derive(Serialize)]
struct SummaryRow {
    config_hash: String,
    variant: &'static str,
    rotation_deg: f64,
    n: usize,
    dice_mean: f64,
    dice_std: f64,
    assd_mean: f64,
    assd_std: f64,
    unregistered_dice: f64,
    spacing_mm: f64,
}

fn summary(cfg: &ExperimentConfig, records: &[MetricsRecord], angle: f64, unregistered: f64) -> SummaryRow {
    let a = aggregate(records);
    SummaryRow {
        config_hash: cfg.hash(),
        variant: cfg.model.variant.as_str(),
        rotation_deg: angle,
        n: a.n,
        dice_mean: a.dice.mean,
        dice_std: a.dice.std,
        assd_mean: a.assd.mean,
        assd_std: a.assd.std,
        unregistered_dice: unregistered,
        spacing_mm: 1.0,
    }
}

fn hashed_records<'a>(hash: &'a str, recs: &'a [MetricsRecord]) -> Vec<Hashed<'a, &'a MetricsRecord>> {
    recs.iter().map(|r| Hashed { config_hash: hash, inner: r }).collect()
}

pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>) -> Result<String> {
    prepare(out)?;
    let (model, params) = load_model(cfg, &checkpoint_path(out, checkpoint))?;
    let data = dataset(cfg, out)?;
    let records = evaluate_set(cfg, &model, &params, &data.test, 0.0)?;
    let base = mean_dice(&baseline_set(&data.test)?);
    let hash = cfg.hash();
    write_jsonl(&out.join("metrics.jsonl"), &hashed_records(&hash, &records))?;
    let row = summary(cfg, &records, 0.0, base);
    let msg = format!(
        "Dice {:.4} ± {:.4} (unregistered {base:.4}), ASSD {:.3} ± {:.3} mm over {} pairs",
        row.dice_mean, row.dice_std, row.assd_mean, row.assd_std, row.n
    );
    write_csv(&out.join("metrics.csv"), &[row])?;
    Ok(msg)
}

#[derive(Serialize)]
struct EquivRow {
    config_hash: String,
    check: String,
    level: String,
    residual: f64,
}

pub fn cmd_equiv_check(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>) -> Result<String> {
    prepare(out)?;
    let (model, params) = match checkpoint {
        Some(p) => load_model(cfg, p)?,
        None => {
            let m = RegistrationModel::new(&cfg.model)?;
            let p = m.init_params(cfg.optim.seed)?;
            (m, p)
        }
    };
    let extent = cfg.data.spec.extent;
    let oct = octahedral_residual(&model, &params, extent, cfg.optim.seed)?;
    let hash = cfg.hash();
    let mut rows: Vec<EquivRow> = oct
        .per_level
        .iter()
        .enumerate()
        .map(|(i, &r)| EquivRow { config_hash: hash.clone(), check: "octahedral".into(), level: i.to_string(), residual: r })
        .collect();
    rows.push(EquivRow { config_hash: hash.clone(), check: "octahedral".into(), level: "stack".into(), residual: oct.stack });
    for angle in [5.0, 10.0, 15.0] {
        let r = generic_residual(&model, &params, extent, angle, cfg.optim.seed)?;
        rows.push(EquivRow { config_hash: hash.clone(), check: format!("rotation_{angle}deg"), level: "stack".into(), residual: r });
    }
    write_csv(&out.join("equiv_check.csv"), &rows)?;
    let mut msg = format!("{} encoder, octahedral stack residual {:.3e}", cfg.model.variant.as_str(), oct.stack);
    for r in rows.iter().filter(|r| r.check.starts_with("rotation")) {
        let _ = write!(msg, ", {} {:.3e}", r.check, r.residual);
    }
    Ok(msg)
}

#[derive(Serialize)]
struct AngleRow {
    config_hash: String,
    variant: &'static str,
    rotation_deg: f64,
    n: usize,
    dice_mean: f64,
    dice_std: f64,
    assd_mean: f64,
    assd_std: f64,
}

pub fn cmd_rotate_eval(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>) -> Result<String> {
    prepare(out)?;
    let (model, params) = load_model(cfg, &checkpoint_path(out, checkpoint))?;
    let data = dataset(cfg, out)?;
    let hash = cfg.hash();
    let mut all = Vec::new();
    let mut rows = Vec::new();
    for angle in ROTATION_ANGLES {
        let rec = evaluate_set(cfg, &model, &params, &data.test, angle)?;
        let a = aggregate(&rec);
        rows.push(AngleRow {
            config_hash: hash.clone(),
            variant: cfg.model.variant.as_str(),
            rotation_deg: angle,
            n: a.n,
            dice_mean: a.dice.mean,
            dice_std: a.dice.std,
            assd_mean: a.assd.mean,
            assd_std: a.assd.std,
        });
        all.extend(rec);
    }
    write_jsonl(&out.join("rotate_eval.jsonl"), &hashed_records(&hash, &all))?;
    write_csv(&out.join("rotate_eval.csv"), &rows)?;
    let mut msg = String::from("Dice by angle:");
    for r in &rows {
        let _ = write!(msg, " {:+}°={:.4}", r.rotation_deg, r.dice_mean);
    }
    Ok(msg)
}

/// Parses a comma-separated ratio list such as `1:0:0,5:2:1`.
pub fn parse_ratio_list(s: &str) -> Result<Vec<[usize; 3]>> {
    s.split(',').map(|r| parse_ratio(r.trim())).collect()
}

#[derive(Serialize)]
struct SweepCsv {
    config_hash: String,
    ratio: String,
    seed: u64,
    channels: String,
    params: usize,
    encoder_params: usize,
    dice_mean: f64,
}

pub fn cmd_ratio_sweep(cfg: &ExperimentConfig, out: &Path, ratios: &[[usize; 3]]) -> Result<String> {
    prepare(out)?;
    let data = dataset(cfg, out)?;
    let rows = ratio_sweep(cfg, &data, ratios, &[cfg.optim.seed])?;
    let hash = cfg.hash();
    let csv_rows: Vec<SweepCsv> = rows
        .iter()
        .map(|r| SweepCsv {
            config_hash: hash.clone(),
            ratio: format!("{}:{}:{}", r.ratio[0], r.ratio[1], r.ratio[2]),
            seed: r.seed,
            channels: r.channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("/"),
            params: r.params,
            encoder_params: r.encoder_params,
            dice_mean: r.dice_mean,
        })
        .collect();
    write_csv(&out.join("ratio_sweep.csv"), &csv_rows)?;
    let mut msg = String::from("ratio (channels, params) -> Dice:");
    for r in &csv_rows {
        let _ = write!(msg, "\n  {} ({}, {}) -> {:.4}", r.ratio, r.channels, r.params, r.dice_mean);
    }
    Ok(msg)
}

#[derive(Serialize)]
struct EfficiencyCsv {
    config_hash: String,
    fraction: f64,
    n_train: usize,
    standard_dice: f64,
    equivariant_dice: f64,
    gap: f64,
}

pub fn cmd_sample_efficiency(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    prepare(out)?;
    let data = dataset(cfg, out)?;
    let rows = sample_efficiency(cfg, &data, &FRACTIONS, &[Variant::Standard, Variant::Equivariant], cfg.data.spec.seed)?;
    let hash = cfg.hash();
    let dice = |v: Variant, f: f64| rows.iter().find(|r| r.variant == v && r.fraction == f).map_or(f64::NAN, |r| r.dice_mean);
    let csv_rows: Vec<EfficiencyCsv> = FRACTIONS
        .iter()
        .map(|&f| {
            let (s, e) = (dice(Variant::Standard, f), dice(Variant::Equivariant, f));
            let n = rows.iter().find(|r| r.fraction == f).map_or(0, |r| r.n_train);
            EfficiencyCsv { config_hash: hash.clone(), fraction: f, n_train: n, standard_dice: s, equivariant_dice: e, gap: e - s }
        })
        .collect();
    write_csv(&out.join("sample_efficiency.csv"), &csv_rows)?;
    let mut msg = String::from("fraction: standard / equivariant (gap)");
    for r in &csv_rows {
        let _ = write!(msg, "\n  {}: {:.4} / {:.4} ({:+.4})", r.fraction, r.standard_dice, r.equivariant_dice, r.gap);
    }
    Ok(msg)
}

pub fn cmd_param_count(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    prepare(out)?;
    let rep = param_report(cfg)?;
    let hash = cfg.hash();
    write_json(&out.join("param_count.json"), &Hashed { config_hash: &hash, inner: &rep })?;
    Ok(format!(
        "standard {} (encoder {}), equivariant {} (encoder {}); ratio {:.4} overall, {:.4} encoder",
        rep.standard_total, rep.standard_encoder, rep.equivariant_total, rep.equivariant_encoder, rep.total_ratio, rep.encoder_ratio
    ))
}
