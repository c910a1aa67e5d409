use rand::Rng;

use super::budget::{field_type_for, BudgetRule};
use super::field::FieldVar;
use super::gated::{GatedBlock, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::so3::FieldType;
use crate::tensor::{BoundParams, ParamStore, Tape, Tensor, Var};

/// Free-form `K³` convolution with bias.
#[derive(Clone, Debug)]
pub struct StandardConv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub size: usize,
    pub stride: usize,
    pub pad: usize,
    /// Initial weight std; `None` means He initialization.
    pub init_std: Option<f64>,
}

impl StandardConv {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, stride: usize) -> Self {
        Self { name: name.into(), cin, cout, size: 3, stride, pad: 1, init_std: None }
    }

    pub fn param_count(&self) -> usize {
        self.cout * self.cin * self.size.pow(3) + self.cout
    }

    fn names(&self) -> (String, String) {
        (format!("{}.w", self.name), format!("{}.b", self.name))
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let std = self.init_std.unwrap_or_else(|| (2.0 / (self.cin * self.size.pow(3)) as f64).sqrt());
        let k = self.size;
        let (w, b) = self.names();
        store.insert(w, Tensor::randn(&[self.cout, self.cin, k, k, k], std, rng))?;
        store.insert(b, Tensor::zeros(&[self.cout]))
    }

    /// Convolution plus bias, no activation.
    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, x: Var) -> Result<Var> {
        let (w, b) = self.names();
        let y = tape.conv3d(x, params.get(&w)?, self.stride, self.pad)?;
        tape.add_bias(y, params.get(&b)?)
    }
}

/// One encoder level: output field type and stride.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLevel {
    pub ftype: FieldType,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderSpec {
    pub levels: Vec<EncoderLevel>,
}

pub const VM_CHANNELS: [usize; 4] = [8, 16, 16, 16];
pub const VM_STRIDES: [usize; 4] = [1, 2, 2, 2];
pub const FIRST_LEVEL_RATIO: [usize; 3] = [1, 1, 0];
pub const DEEP_RATIO: [usize; 3] = [5, 2, 1];

impl EncoderSpec {
    /// Budgeted levels: the first level uses `first_ratio`, the rest `deep_ratio`.
    pub fn from_budget(
        channels: &[usize],
        strides: &[usize],
        first_ratio: [usize; 3],
        deep_ratio: [usize; 3],
        rule: BudgetRule,
    ) -> Result<Self> {
        if channels.len() != strides.len() || channels.is_empty() {
            return Err(Error::Budget(format!("{} channel budgets for {} strides", channels.len(), strides.len())));
        }
        let levels = channels
            .iter()
            .zip(strides)
            .enumerate()
            .map(|(i, (&c, &s))| {
                let ratio = if i == 0 { first_ratio } else { deep_ratio };
                Ok(EncoderLevel { ftype: field_type_for(rule, c, ratio)?, stride: s })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }

    /// VM-budget encoder: 8/16/16/16 channels, first level 1:1, then 5:2:1.
    pub fn vm_default() -> Self {
        Self::from_budget(&VM_CHANNELS, &VM_STRIDES, FIRST_LEVEL_RATIO, DEEP_RATIO, BudgetRule::Fit)
            .expect("default budget is feasible")
    }

    /// Checks the default shape: level 0 holds only l = 0 and l = 1
    /// with equal multiplicities, and every level matches its budget.
    pub fn validate(&self, budgets: &[usize]) -> Result<()> {
        let first = &self.levels.first().ok_or_else(|| Error::Budget("encoder has no levels".into()))?.ftype;
        let m = first.multiplicities();
        if m[2] != 0 || m[0] != m[1] {
            return Err(Error::Budget(format!("first level {first} must be irrep-0 and irrep-1 at 1:1")));
        }
        if budgets.len() != self.levels.len() {
            return Err(Error::Budget("budget count does not match level count".into()));
        }
        for (lvl, &b) in self.levels.iter().zip(budgets) {
            if lvl.ftype.total_channels() != b {
                return Err(Error::Budget(format!("level {} has {} channels, budget {b}", lvl.ftype, lvl.ftype.total_channels())));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.ftype.total_channels()).collect()
    }
}

/// Stack of standard conv + leaky ReLU levels.
#[derive(Clone, Debug)]
pub struct StandardEncoder {
    pub convs: Vec<StandardConv>,
}

impl StandardEncoder {
    pub fn new(in_channels: usize, channels: &[usize], strides: &[usize]) -> Result<Self> {
        if channels.len() != strides.len() || channels.is_empty() {
            return Err(Error::Budget(format!("{} channel budgets for {} strides", channels.len(), strides.len())));
        }
        let mut cin = in_channels;
        let convs = channels
            .iter()
            .zip(strides)
            .enumerate()
            .map(|(i, (&c, &s))| {
                let conv = StandardConv::new(format!("enc.{i}"), cin, c, s);
                cin = c;
                conv
            })
            .collect();
        Ok(Self { convs })
    }
}

/// Stack of gated steerable blocks.
#[derive(Clone, Debug)]
pub struct EquivariantEncoder {
    pub in_type: FieldType,
    pub blocks: Vec<GatedBlock>,
}

impl EquivariantEncoder {
    pub fn new(in_type: FieldType, spec: &EncoderSpec) -> Result<Self> {
        let mut t = in_type.clone();
        let mut blocks = Vec::new();
        for (i, lvl) in spec.levels.iter().enumerate() {
            blocks.push(GatedBlock::new(format!("enc.{i}"), t.clone(), lvl.ftype.clone(), lvl.stride, 1)?);
            t = lvl.ftype.clone();
        }
        Ok(Self { in_type, blocks })
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Standard(StandardEncoder),
    Equivariant(EquivariantEncoder),
}

impl Encoder {
    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        match self {
            Encoder::Standard(e) => e.convs.iter().try_for_each(|c| c.register(store, rng)),
            Encoder::Equivariant(e) => e.blocks.iter().try_for_each(|b| b.register(store, rng)),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Encoder::Standard(e) => e.convs.iter().map(StandardConv::param_count).sum(),
            Encoder::Equivariant(e) => e.blocks.iter().map(GatedBlock::param_count).sum(),
        }
    }

    pub fn out_channels(&self) -> Vec<usize> {
        match self {
            Encoder::Standard(e) => e.convs.iter().map(|c| c.cout).collect(),
            Encoder::Equivariant(e) => e.blocks.iter().map(|b| b.out_type.total_channels()).collect(),
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            Encoder::Standard(e) => e.convs[0].cin,
            Encoder::Equivariant(e) => e.in_type.total_channels(),
        }
    }

    /// Output types per level; standard levels are reported as scalars.
    pub fn out_types(&self) -> Vec<FieldType> {
        match self {
            Encoder::Standard(e) => e.convs.iter().map(|c| FieldType::scalars(c.cout).expect("nonzero")).collect(),
            Encoder::Equivariant(e) => e.blocks.iter().map(|b| b.out_type.clone()).collect(),
        }
    }

    /// Features after every level, shallowest first.
    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, x: Var) -> Result<Vec<Var>> {
        let mut feats = Vec::new();
        match self {
            Encoder::Standard(e) => {
                let mut h = x;
                for c in &e.convs {
                    let y = c.forward(tape, params, h)?;
                    h = tape.leaky_relu(y, LEAKY_SLOPE);
                    feats.push(h);
                }
            }
            Encoder::Equivariant(e) => {
                let mut h = FieldVar::new(tape, x, e.in_type.clone())?;
                for b in &e.blocks {
                    h = b.forward(tape, params, &h)?;
                    feats.push(h.var);
                }
            }
        }
        Ok(feats)
    }
}

/// Number of learnable scalars in a parameter store.
pub fn parameter_count(store: &ParamStore) -> usize {
    store.count()
}
