use serde::{Deserialize, Serialize};

use super::model::RegistrationModel;
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, Tape, Var};

pub const DEFAULT_NCC_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub ncc_window: usize,
    pub eps: f64,
}

impl LossConfig {
    /// λ = 1, window 9 (5 below 32³), ε = 1e-5.
    pub fn for_extent(extent: usize) -> Self {
        Self { lambda: 1.0, ncc_window: if extent < 32 { 5 } else { 9 }, eps: DEFAULT_NCC_EPS }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.ncc_window < 3 || self.ncc_window % 2 == 0 {
            return Err(Error::Config(format!("ncc window must be odd and at least 3, got {}", self.ncc_window)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("ncc eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// `1 − mean(cov² / (var_I · var_J + ε))` over zero-padded `window³` boxes.
pub fn ncc_loss(tape: &mut Tape, warped: Var, fixed: Var, window: usize, eps: f64) -> Result<Var> {
    if tape.shape(warped) != tape.shape(fixed) {
        return Err(Error::Shape(format!("ncc inputs {:?} and {:?} differ", tape.shape(warped), tape.shape(fixed))));
    }
    let inv = 1.0 / (window.pow(3) as f64);
    let (i, j) = (warped, fixed);
    let i2 = tape.square(i);
    let j2 = tape.square(j);
    let ij = tape.mul(i, j)?;
    let si = tape.box_sum(i, window)?;
    let sj = tape.box_sum(j, window)?;
    let si2 = tape.box_sum(i2, window)?;
    let sj2 = tape.box_sum(j2, window)?;
    let sij = tape.box_sum(ij, window)?;
    // cross = Σij − Σi·Σj/w³, var = Σi² − (Σi)²/w³
    let p = tape.mul(si, sj)?;
    let p = tape.scalar_mul(p, inv);
    let cross = tape.sub(sij, p)?;
    let qi = tape.square(si);
    let qi = tape.scalar_mul(qi, inv);
    let vi = tape.sub(si2, qi)?;
    let qj = tape.square(sj);
    let qj = tape.scalar_mul(qj, inv);
    let vj = tape.sub(sj2, qj)?;
    let num = tape.square(cross);
    let den = tape.mul(vi, vj)?;
    let den = tape.add_scalar(den, eps);
    let cc = tape.div(num, den)?;
    let m = tape.mean(cc);
    let neg = tape.scalar_mul(m, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

/// Mean over the three axes of the mean squared forward difference.
pub fn smoothness_loss(tape: &mut Tape, disp: Var) -> Result<Var> {
    let mut terms = Vec::with_capacity(3);
    for axis in 0..3 {
        let d = tape.forward_diff(disp, axis)?;
        let sq = tape.square(d);
        terms.push(tape.mean(sq));
    }
    let s = tape.add(terms[0], terms[1])?;
    let s = tape.add(s, terms[2])?;
    Ok(tape.scalar_mul(s, 1.0 / 3.0))
}

/// Handles produced by one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub similarity: Var,
    pub smoothness: Var,
    pub displacement: Var,
    pub warped: Var,
}

/// `ncc(moving ∘ φ, fixed) + λ · smoothness(u)`.
pub fn total_loss(
    tape: &mut Tape,
    model: &RegistrationModel,
    params: &BoundParams,
    moving: Var,
    fixed: Var,
    cfg: &LossConfig,
) -> Result<LossParts> {
    let disp = model.forward(tape, params, moving, fixed)?;
    let warped = tape.grid_sample(moving, disp)?;
    let similarity = ncc_loss(tape, warped, fixed, cfg.ncc_window, cfg.eps)?;
    let smoothness = smoothness_loss(tape, disp)?;
    let total = if cfg.lambda == 0.0 {
        similarity
    } else {
        let r = tape.scalar_mul(smoothness, cfg.lambda);
        tape.add(similarity, r)?
    };
    Ok(LossParts { total, similarity, smoothness, displacement: disp, warped })
}
