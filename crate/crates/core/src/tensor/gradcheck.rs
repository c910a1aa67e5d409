//! Central finite-difference checks for tape operations.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-4;

/// Worst relative error between analytic and numeric derivatives.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps near-zero derivatives
/// from producing meaningless ratios.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks `build` (inputs → scalar loss) at `inputs` on up to `coords`
/// random coordinates per input.
pub fn check_gradients<F>(inputs: &[Tensor], coords: usize, seed: u64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (k, (input, &v)) in inputs.iter().zip(&vars).enumerate() {
        let g = grads.wrt(v);
        let picks = sample(&mut rng, input.numel(), coords.min(input.numel()));
        for idx in picks.iter() {
            let mut vals = inputs.to_vec();
            vals[k].data_mut()[idx] += FD_STEP;
            let fp = eval(&vals)?;
            vals[k].data_mut()[idx] -= 2.0 * FD_STEP;
            let fm = eval(&vals)?;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.data()[idx], numeric));
            checked += 1;
        }
    }
    Ok(GradCheck { max_rel_err: worst, checked })
}
