use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    BudgetRule, Encoder, EncoderSpec, EquivariantEncoder, StandardConv, StandardEncoder, DEEP_RATIO, FIRST_LEVEL_RATIO,
    LEAKY_SLOPE, VM_CHANNELS, VM_STRIDES,
};
use crate::so3::FieldType;
use crate::tensor::{BoundParams, ParamStore, Tape, Var};

pub const HEAD_INIT_STD: f64 = 1e-5;
pub const DEFAULT_DECODER: [usize; 3] = [16, 16, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Standard,
    Equivariant,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Equivariant => "equivariant",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Variant::Standard),
            "equivariant" => Ok(Variant::Equivariant),
            _ => Err(Error::Config(format!("unknown model variant {s:?}"))),
        }
    }
}

/// Architecture of the registration U-Net.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub first_level_ratio: [usize; 3],
    pub ratio: [usize; 3],
    pub budget_rule: BudgetRule,
    pub decoder: Vec<usize>,
}

impl ModelConfig {
    pub fn vm(variant: Variant) -> Self {
        Self {
            variant,
            channels: VM_CHANNELS.to_vec(),
            strides: VM_STRIDES.to_vec(),
            first_level_ratio: FIRST_LEVEL_RATIO,
            ratio: DEEP_RATIO,
            budget_rule: BudgetRule::Fit,
            decoder: DEFAULT_DECODER.to_vec(),
        }
    }

    pub fn encoder_spec(&self) -> Result<EncoderSpec> {
        EncoderSpec::from_budget(&self.channels, &self.strides, self.first_level_ratio, self.ratio, self.budget_rule)
    }
}

/// VoxelMorph-style U-Net: swappable encoder, standard decoder with skip
/// connections, and a 3-channel displacement head.
#[derive(Clone, Debug)]
pub struct RegistrationModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Vec<StandardConv>,
    pub head: StandardConv,
}

impl RegistrationModel {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let n_levels = config.channels.len();
        if config.decoder.len() + 1 != n_levels {
            return Err(Error::Config(format!(
                "{} encoder levels need {} decoder stages, got {}",
                n_levels,
                n_levels - 1,
                config.decoder.len()
            )));
        }
        let encoder = match config.variant {
            Variant::Standard => Encoder::Standard(StandardEncoder::new(2, &config.channels, &config.strides)?),
            Variant::Equivariant => {
                Encoder::Equivariant(EquivariantEncoder::new(FieldType::scalars(2)?, &config.encoder_spec()?)?)
            }
        };
        let enc_ch = encoder.out_channels();
        let mut decoder = Vec::new();
        let mut h = *enc_ch.last().expect("nonempty");
        for (j, &c) in config.decoder.iter().enumerate() {
            let skip = enc_ch[n_levels - 2 - j];
            decoder.push(StandardConv::new(format!("dec.{j}"), h + skip, c, 1));
            h = c;
        }
        let mut head = StandardConv::new("head", h, 3, 1);
        head.init_std = Some(HEAD_INIT_STD);
        Ok(Self { config: config.clone(), encoder, decoder, head })
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.encoder.register(&mut store, &mut rng)?;
        for d in &self.decoder {
            d.register(&mut store, &mut rng)?;
        }
        self.head.register(&mut store, &mut rng)?;
        Ok(store)
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder.param_count()
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count()
            + self.decoder.iter().map(StandardConv::param_count).sum::<usize>()
            + self.head.param_count()
    }

    /// Displacement `[N, 3, D, H, W]` (voxels, order dz, dy, dx) for the
    /// moving/fixed pair, each `[N, 1, D, H, W]`.
    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, moving: Var, fixed: Var) -> Result<Var> {
        let x = tape.concat(&[moving, fixed])?;
        let feats = self.encoder.forward(tape, params, x)?;
        let n_levels = feats.len();
        let mut h = feats[n_levels - 1];
        for (j, conv) in self.decoder.iter().enumerate() {
            let skip = feats[n_levels - 2 - j];
            let target: [usize; 3] = tape.shape(skip)[2..5].try_into().expect("5-D");
            let cur: [usize; 3] = tape.shape(h)[2..5].try_into().expect("5-D");
            if cur != target {
                let up = tape.upsample2(h)?;
                h = tape.crop(up, target)?;
            }
            let cat = tape.concat(&[h, skip])?;
            let y = conv.forward(tape, params, cat)?;
            h = tape.leaky_relu(y, LEAKY_SLOPE);
        }
        let last: [usize; 3] = tape.shape(h)[2..5].try_into().expect("5-D");
        let full: [usize; 3] = tape.shape(moving)[2..5].try_into().expect("5-D");
        if last != full {
            return Err(Error::Shape(format!("decoder ends at {last:?}, images are {full:?}")));
        }
        self.head.forward(tape, params, h)
    }
}
