//! Irrep-typed feature fields, steerable convolutions, gated nonlinearities
//! and encoder stacks.

mod budget;
mod encoder;
mod field;
mod gated;
mod steerable;

pub use budget::{budget_field_type, field_type_for, nearest_field_type, parse_ratio, BudgetRule};
pub use encoder::{
    parameter_count, Encoder, EncoderLevel, EncoderSpec, EquivariantEncoder, StandardConv, StandardEncoder,
    DEEP_RATIO, FIRST_LEVEL_RATIO, VM_CHANNELS, VM_STRIDES,
};
pub use field::{rotate_field, FeatureField, FieldVar};
pub use gated::{gated_activation, GatedBlock, LEAKY_SLOPE};
pub use steerable::{SteerableConv, KERNEL_SIZE};

#[cfg(test)]
mod tests;
