use std::sync::Arc;

use rand::Rng;

use super::field::FieldVar;
use crate::basis::{cached_kernel_basis, RadialProfileSet};
use crate::error::{Error, Result};
use crate::so3::FieldType;
use crate::tensor::{BoundParams, ExpansionBlock, ExpansionPlan, ParamStore, Tape, Tensor};

pub const KERNEL_SIZE: usize = 3;

/// Output slot of an expansion, placed at an arbitrary channel offset.
#[derive(Clone, Copy, Debug)]
pub(crate) struct OutSlot {
    pub l: usize,
    pub offset: usize,
}

/// Appends one block per (input slot, output slot) pair, returning the
/// number of weights consumed.
pub(crate) fn push_blocks(
    in_type: &FieldType,
    outs: &[OutSlot],
    size: usize,
    weight_offset: usize,
    blocks: &mut Vec<ExpansionBlock>,
) -> Result<usize> {
    let radial = RadialProfileSet::for_kernel(size);
    let mut w = weight_offset;
    for o in outs {
        for s in in_type.slots() {
            let basis = cached_kernel_basis(s.irrep.l, o.l, size, &radial)?;
            let n = basis.len();
            blocks.push(ExpansionBlock { weight_offset: w, out_offset: o.offset, in_offset: s.offset, basis });
            w += n;
        }
    }
    Ok(w - weight_offset)
}

/// He-style initial weights: each block's weights have variance
/// `2 · dout · din / (Cin · B)`, so expanded kernel entries have variance
/// about `2 / (Cin · K³)` given unit-norm basis elements.
pub(crate) fn init_weights<R: Rng + ?Sized>(plan: &ExpansionPlan, rng: &mut R) -> Tensor {
    let mut w = Tensor::zeros(&[plan.n_weights]);
    for blk in &plan.blocks {
        let b = blk.basis.len();
        let std = (2.0 * (blk.basis.dout() * blk.basis.din()) as f64 / (plan.cin * b) as f64).sqrt();
        let t = Tensor::randn(&[b], std, rng);
        w.data_mut()[blk.weight_offset..blk.weight_offset + b].copy_from_slice(t.data());
    }
    w
}

/// Convolution whose kernel is a learned combination of steerable basis
/// elements, one scalar per (input slot, output slot, basis element).
#[derive(Clone, Debug)]
pub struct SteerableConv {
    pub name: String,
    pub in_type: FieldType,
    pub out_type: FieldType,
    pub stride: usize,
    pub pad: usize,
    plan: Arc<ExpansionPlan>,
}

impl SteerableConv {
    pub fn new(name: impl Into<String>, in_type: FieldType, out_type: FieldType, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Shape("stride must be positive".into()));
        }
        let outs: Vec<OutSlot> = out_type.slots().iter().map(|s| OutSlot { l: s.irrep.l, offset: s.offset }).collect();
        let mut blocks = Vec::new();
        let n_weights = push_blocks(&in_type, &outs, KERNEL_SIZE, 0, &mut blocks)?;
        let plan = ExpansionPlan {
            cout: out_type.total_channels(),
            cin: in_type.total_channels(),
            size: KERNEL_SIZE,
            n_weights,
            blocks,
        };
        Ok(Self { name: name.into(), in_type, out_type, stride, pad, plan: Arc::new(plan) })
    }

    pub fn plan(&self) -> &Arc<ExpansionPlan> {
        &self.plan
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn param_count(&self) -> usize {
        self.plan.n_weights
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        init_weights(&self.plan, rng)
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        store.insert(self.weight_name(), self.init(rng))
    }

    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, x: &FieldVar) -> Result<FieldVar> {
        x.expect(&self.in_type)?;
        let k = tape.expand(params.get(&self.weight_name())?, self.plan.clone())?;
        let y = tape.conv3d(x.var, k, self.stride, self.pad)?;
        FieldVar::new(tape, y, self.out_type.clone())
    }
}
