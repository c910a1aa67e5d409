//! Unsupervised training loop.

use super::loss::{total_loss, LossConfig};
use super::model::RegistrationModel;
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, ParamStore, Tape, Tensor};
use crate::volume::ImageVolume;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 2000, adam: AdamConfig::default() }
    }
}

/// Per-step loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLog {
    pub step: usize,
    pub pair: usize,
    pub total: f64,
    pub similarity: f64,
    pub smoothness: f64,
}

/// Runs `cfg.steps` Adam steps, visiting `pairs` (moving, fixed) round-robin.
/// `on_step` sees every log entry as it is produced.
pub fn train(
    model: &RegistrationModel,
    params: &mut ParamStore,
    pairs: &[(ImageVolume, ImageVolume)],
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&TrainLog),
) -> Result<Vec<TrainLog>> {
    if pairs.is_empty() {
        return Err(Error::Runtime("no training pairs".into()));
    }
    loss_cfg.validate()?;
    let inputs: Vec<(Tensor, Tensor)> = pairs.iter().map(|(m, f)| (m.to_tensor(), f.to_tensor())).collect();
    let mut opt = Adam::new(cfg.adam);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let pair = step % pairs.len();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let m = tape.constant(inputs[pair].0.clone());
        let f = tape.constant(inputs[pair].1.clone());
        let parts = total_loss(&mut tape, model, &bound, m, f, loss_cfg)?;
        let log = TrainLog {
            step,
            pair,
            total: tape.value(parts.total).item(),
            similarity: tape.value(parts.similarity).item(),
            smoothness: tape.value(parts.smoothness).item(),
        };
        if !log.total.is_finite() {
            return Err(Error::Runtime(format!("loss diverged at step {step}")));
        }
        let grads = tape.backward(parts.total)?;
        let g: Vec<Tensor> = bound.vars().iter().map(|&v| grads.wrt(v)).collect();
        opt.step(params, &g)?;
        on_step(&log);
        history.push(log);
    }
    Ok(history)
}
