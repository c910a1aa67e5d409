use std::sync::Arc;

use rand::Rng;

use super::field::FieldVar;
use super::steerable::{init_weights, push_blocks, OutSlot, KERNEL_SIZE};
use crate::error::{Error, Result};
use crate::so3::FieldType;
use crate::tensor::{BoundParams, ExpansionPlan, ParamStore, Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.1;

/// Scalars through leaky ReLU; each non-scalar slot scaled by the sigmoid
/// of its own gate channel. `gates` holds one pre-activation per slot and
/// may be omitted for all-scalar fields.
pub fn gated_activation(tape: &mut Tape, main: &FieldVar, gates: Option<Var>) -> Result<FieldVar> {
    let t = &main.ftype;
    let slots = t.non_scalar_slots();
    let n_gates = gates.map(|g| tape.shape(g).get(1).copied().unwrap_or(0)).unwrap_or(0);
    if n_gates != slots.len() {
        return Err(Error::Shape(format!("{n_gates} gate channels for {} non-scalar slots", slots.len())));
    }
    let m0 = t.scalar_channels();
    let total = t.total_channels();
    let mut parts = Vec::new();
    if m0 > 0 {
        let s = tape.slice_channels(main.var, 0, m0)?;
        parts.push(tape.leaky_relu(s, LEAKY_SLOPE));
    }
    if let Some(gates) = gates.filter(|_| !slots.is_empty()) {
        let rest = tape.slice_channels(main.var, m0, total - m0)?;
        let sg = tape.sigmoid(gates);
        let mut index = Vec::with_capacity(total - m0);
        for (k, s) in slots.iter().enumerate() {
            index.extend(std::iter::repeat_n(k, s.irrep.dim()));
        }
        parts.push(tape.gather_mul(rest, sg, &index)?);
    }
    let out = if parts.len() == 1 { parts[0] } else { tape.concat(&parts)? };
    FieldVar::new(tape, out, t.clone())
}

/// Steerable conv plus its gate conv, evaluated as one fused convolution.
///
/// Fused output channels are ordered `[main scalars | gates | main
/// non-scalars]`, so a single bias vector covers every scalar output.
#[derive(Clone, Debug)]
pub struct GatedBlock {
    pub name: String,
    pub in_type: FieldType,
    pub out_type: FieldType,
    pub stride: usize,
    pub pad: usize,
    main_weights: usize,
    plan: Arc<ExpansionPlan>,
}

impl GatedBlock {
    pub fn new(name: impl Into<String>, in_type: FieldType, out_type: FieldType, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Shape("stride must be positive".into()));
        }
        let m0 = out_type.scalar_channels();
        let n_gates = out_type.non_scalar_slots().len();
        let main_outs: Vec<OutSlot> = out_type
            .slots()
            .iter()
            .map(|s| OutSlot { l: s.irrep.l, offset: if s.irrep.l == 0 { s.offset } else { s.offset + n_gates } })
            .collect();
        let gate_outs: Vec<OutSlot> = (0..n_gates).map(|k| OutSlot { l: 0, offset: m0 + k }).collect();
        let mut blocks = Vec::new();
        let main_weights = push_blocks(&in_type, &main_outs, KERNEL_SIZE, 0, &mut blocks)?;
        let gate_weights = push_blocks(&in_type, &gate_outs, KERNEL_SIZE, main_weights, &mut blocks)?;
        let plan = ExpansionPlan {
            cout: out_type.total_channels() + n_gates,
            cin: in_type.total_channels(),
            size: KERNEL_SIZE,
            n_weights: main_weights + gate_weights,
            blocks,
        };
        Ok(Self { name: name.into(), in_type, out_type, stride, pad, main_weights, plan: Arc::new(plan) })
    }

    pub fn n_gates(&self) -> usize {
        self.out_type.non_scalar_slots().len()
    }

    /// Type of the gate convolution's output: one scalar per non-scalar slot.
    pub fn gate_type(&self) -> Option<FieldType> {
        FieldType::scalars(self.n_gates()).ok()
    }

    pub fn main_weight_count(&self) -> usize {
        self.main_weights
    }

    pub fn gate_weight_count(&self) -> usize {
        self.plan.n_weights - self.main_weights
    }

    pub fn bias_count(&self) -> usize {
        self.out_type.scalar_channels() + self.n_gates()
    }

    pub fn param_count(&self) -> usize {
        self.plan.n_weights + self.bias_count()
    }

    pub fn plan(&self) -> &Arc<ExpansionPlan> {
        &self.plan
    }

    fn names(&self) -> (String, String) {
        (format!("{}.w", self.name), format!("{}.b", self.name))
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let (w, b) = self.names();
        store.insert(w, init_weights(&self.plan, rng))?;
        store.insert(b, Tensor::zeros(&[self.bias_count()]))
    }

    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, x: &FieldVar) -> Result<FieldVar> {
        x.expect(&self.in_type)?;
        let (wn, bn) = self.names();
        let k = tape.expand(params.get(&wn)?, self.plan.clone())?;
        let y = tape.conv3d(x.var, k, self.stride, self.pad)?;
        let y = tape.add_bias(y, params.get(&bn)?)?;
        let m0 = self.out_type.scalar_channels();
        let g = self.n_gates();
        let total = self.out_type.total_channels();
        if g == 0 {
            let main = FieldVar::new(tape, y, self.out_type.clone())?;
            return gated_activation(tape, &main, None);
        }
        let gates = tape.slice_channels(y, m0, g)?;
        let main = if m0 == 0 {
            tape.slice_channels(y, g, total)?
        } else {
            let s = tape.slice_channels(y, 0, m0)?;
            let v = tape.slice_channels(y, m0 + g, total - m0)?;
            tape.concat(&[s, v])?
        };
        let main = FieldVar::new(tape, main, self.out_type.clone())?;
        gated_activation(tape, &main, Some(gates))
    }
}
