//! Synthetic labelled volumes with known smooth deformations.

mod dataset;
mod generate;
mod io;
mod split;

pub use dataset::{generate_dataset, list_pairs, load_pair, pair_id, save_pair, PairManifest, MANIFEST};
pub use generate::{
    gaussian_filter, generate_pair, invert_field, pair_seed, random_field, SyntheticSpec, VolumePair, NOISE_LEVEL,
};
pub use io::{load_volume, read_volume, save_volume, write_atomic, write_volume, SvolData, SvolFile, SVOL_MAGIC, SVOL_VERSION};
pub use split::{dataset_split, FRACTIONS};
