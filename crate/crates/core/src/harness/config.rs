//! INI experiment configs.
//!
//! ```ini
//! [data]
//! extent = 33
//! n_train = 10
//!
//! [model]
//! variant = equivariant
//! ratio = 5:2:1
//! ```
//!
//! Missing keys take their defaults; unknown sections or keys are errors.

use std::path::{Path, PathBuf};

use ini::Ini;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::{parse_ratio, BudgetRule, FIRST_LEVEL_RATIO};
use crate::registration::{LossConfig, ModelConfig, Variant};
use crate::synth::SyntheticSpec;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataConfig {
    pub spec: SyntheticSpec,
    /// Training pairs are indices `0..n_train`, test pairs follow.
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub steps: usize,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr: 1e-3, steps: 2000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig { spec: SyntheticSpec::default(), n_train: 10, n_test: 10 },
            model: ModelConfig::vm(Variant::Standard),
            loss: LossConfig::for_extent(SyntheticSpec::default().extent),
            optim: OptimConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

const KEYS: &[(&str, &[&str])] = &[
    ("data", &["extent", "n_blobs", "n_labels", "deform_amplitude", "deform_smoothness", "seed", "n_train", "n_test"]),
    ("model", &["variant", "channels", "strides", "first_level_ratio", "ratio", "budget_rule", "decoder"]),
    ("loss", &["lambda", "ncc_window", "eps"]),
    ("optim", &["lr", "steps", "seed"]),
    ("output", &["dir"]),
];

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("[{section}] {key} = {v:?} is not a valid number")))
}

fn parse_list(section: &str, key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_num(section, key, s)).collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if props.iter().next().is_some() {
                    return Err(Error::Config("keys must appear under a [section]".into()));
                }
                continue;
            };
            let Some((_, keys)) = KEYS.iter().find(|(s, _)| *s == section) else {
                return Err(Error::Config(format!("unknown section [{section}]")));
            };
            for (k, _) in props.iter() {
                if !keys.contains(&k) {
                    return Err(Error::Config(format!("unknown key {k:?} in [{section}]")));
                }
            }
        }
        let get = |s: &str, k: &str| ini.section(Some(s)).and_then(|p| p.get(k)).map(str::trim);

        let mut cfg = ExperimentConfig::default();
        let spec = &mut cfg.data.spec;
        if let Some(v) = get("data", "extent") {
            spec.extent = parse_num("data", "extent", v)?;
        }
        if let Some(v) = get("data", "n_blobs") {
            spec.n_blobs = parse_num("data", "n_blobs", v)?;
        }
        spec.n_labels = match get("data", "n_labels") {
            Some(v) => parse_num("data", "n_labels", v)?,
            None => spec.n_blobs + 1,
        };
        if let Some(v) = get("data", "deform_amplitude") {
            spec.deform_amplitude = parse_num("data", "deform_amplitude", v)?;
        }
        if let Some(v) = get("data", "deform_smoothness") {
            spec.deform_smoothness = parse_num("data", "deform_smoothness", v)?;
        }
        if let Some(v) = get("data", "seed") {
            spec.seed = parse_num("data", "seed", v)?;
        }
        if let Some(v) = get("data", "n_train") {
            cfg.data.n_train = parse_num("data", "n_train", v)?;
        }
        if let Some(v) = get("data", "n_test") {
            cfg.data.n_test = parse_num("data", "n_test", v)?;
        }

        let variant: Variant = get("model", "variant").unwrap_or("standard").parse()?;
        let m = &mut cfg.model;
        *m = ModelConfig::vm(variant);
        if let Some(v) = get("model", "channels") {
            m.channels = parse_list("model", "channels", v)?;
        }
        if let Some(v) = get("model", "strides") {
            m.strides = parse_list("model", "strides", v)?;
        }
        if let Some(v) = get("model", "decoder") {
            m.decoder = parse_list("model", "decoder", v)?;
        }
        let equi_keys = ["ratio", "first_level_ratio", "budget_rule"];
        match variant {
            Variant::Standard => {
                if let Some(k) = equi_keys.iter().find(|k| get("model", k).is_some()) {
                    return Err(Error::Config(format!("[model] {k} is only valid for the equivariant variant")));
                }
            }
            Variant::Equivariant => {
                let ratio = get("model", "ratio")
                    .ok_or_else(|| Error::Config("equivariant variant requires [model] ratio".into()))?;
                m.ratio = parse_ratio(ratio)?;
                m.first_level_ratio = match get("model", "first_level_ratio") {
                    Some(v) => parse_ratio(v)?,
                    None => FIRST_LEVEL_RATIO,
                };
                m.budget_rule = match get("model", "budget_rule") {
                    None | Some("fit") => BudgetRule::Fit,
                    Some("nearest") => BudgetRule::Nearest,
                    Some(other) => return Err(Error::Config(format!("unknown budget_rule {other:?}"))),
                };
            }
        }

        cfg.loss = LossConfig::for_extent(cfg.data.spec.extent);
        if let Some(v) = get("loss", "lambda") {
            cfg.loss.lambda = parse_num("loss", "lambda", v)?;
        }
        if let Some(v) = get("loss", "ncc_window") {
            cfg.loss.ncc_window = parse_num("loss", "ncc_window", v)?;
        }
        if let Some(v) = get("loss", "eps") {
            cfg.loss.eps = parse_num("loss", "eps", v)?;
        }

        if let Some(v) = get("optim", "lr") {
            cfg.optim.lr = parse_num("optim", "lr", v)?;
        }
        if let Some(v) = get("optim", "steps") {
            cfg.optim.steps = parse_num("optim", "steps", v)?;
        }
        if let Some(v) = get("optim", "seed") {
            cfg.optim.seed = parse_num("optim", "seed", v)?;
        }
        if let Some(v) = get("output", "dir") {
            cfg.output_dir = PathBuf::from(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.data.n_train == 0 {
            return Err(Error::Config("[data] n_train must be positive".into()));
        }
        self.loss.validate()?;
        if !(self.optim.lr > 0.0) || !self.optim.lr.is_finite() {
            return Err(Error::Config(format!("[optim] lr must be positive, got {}", self.optim.lr)));
        }
        if self.model.channels.len() != self.model.strides.len() || self.model.channels.is_empty() {
            return Err(Error::Config("[model] channels and strides must be non-empty and of equal length".into()));
        }
        if self.model.decoder.len() + 1 != self.model.channels.len() {
            return Err(Error::Config(format!(
                "[model] decoder needs {} entries for {} encoder levels",
                self.model.channels.len() - 1,
                self.model.channels.len()
            )));
        }
        if self.model.variant == Variant::Equivariant {
            self.model.encoder_spec().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the whole config.
    pub fn hash(&self) -> String {
        sha256_json(self)
    }

    /// SHA-256 over the fields that determine the parameter layout.
    pub fn model_hash(&self) -> String {
        sha256_json(&self.model)
    }
}

fn sha256_json<T: Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = ExperimentConfig::parse("[data]\nextent = 17\nn_train = 3\n[optim]\nsteps = 5\n").unwrap();
        assert_eq!(cfg.data.spec.extent, 17);
        assert_eq!(cfg.data.n_train, 3);
        assert_eq!(cfg.optim.steps, 5);
        assert_eq!(cfg.loss.ncc_window, 5);
        assert_eq!(cfg.model.variant, Variant::Standard);
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn equivariant_needs_ratio() {
        let e = ExperimentConfig::parse("[model]\nvariant = equivariant\n").unwrap_err();
        assert!(e.to_string().contains("ratio"), "{e}");
        let cfg = ExperimentConfig::parse("[model]\nvariant = equivariant\nratio = 4:4:0\nbudget_rule = nearest\n").unwrap();
        assert_eq!(cfg.model.ratio, [4, 4, 0]);
        assert_eq!(cfg.model.budget_rule, BudgetRule::Nearest);
        let e = ExperimentConfig::parse("[model]\nvariant = standard\nratio = 1:0:0\n").unwrap_err();
        assert!(e.to_string().contains("only valid"), "{e}");
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        for bad in [
            "[nope]\nx = 1\n",
            "[data]\nsize = 3\n",
            "[data]\nextent = big\n",
            "[data]\nextent = 32\n",
            "[loss]\nncc_window = 4\n",
            "[optim]\nlr = -1\n",
            "[model]\nvariant = fancy\n",
            "[model]\nchannels = 8,16\n",
            "stray = 1\n",
        ] {
            let e = ExperimentConfig::parse(bad).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{bad:?} gave {e:?}");
        }
    }

    #[test]
    fn hashes() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.optim.steps = 10;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.model_hash(), b.model_hash());
        b.model.decoder = vec![8, 8, 8];
        assert_ne!(a.model_hash(), b.model_hash());
        assert_eq!(a.hash().len(), 64);
    }
}
