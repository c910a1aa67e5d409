use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::{warp_image, warp_labels};
use crate::so3::random_rotation_with;
use crate::volume::{ImageVolume, LabelVolume, Volume};

/// Standard deviation of the additive intensity noise.
pub const NOISE_LEVEL: f64 = 0.02;
const BACKGROUND: f64 = 0.05;
/// Edge sharpness of the blob membership sigmoid, per voxel.
const EDGE: f64 = 2.0;
const MAX_ATTEMPTS: usize = 200;
/// A blob must keep this fraction of its own volume after later blobs are painted over it.
const MIN_VISIBLE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub extent: usize,
    pub n_blobs: usize,
    pub n_labels: usize,
    /// Maximum displacement norm, voxels.
    pub deform_amplitude: f64,
    /// Gaussian σ of the displacement filter, voxels.
    pub deform_smoothness: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { extent: 33, n_blobs: 6, n_labels: 7, deform_amplitude: 3.0, deform_smoothness: 4.0, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.extent < 5 || self.extent % 2 == 0 {
            return Err(Error::Synth(format!("extent must be odd and at least 5, got {}", self.extent)));
        }
        if self.n_blobs == 0 {
            return Err(Error::Synth("need at least one blob".into()));
        }
        if self.n_labels < 2 || self.n_labels > self.n_blobs + 1 {
            return Err(Error::Synth(format!("n_labels must be in 2..={}, got {}", self.n_blobs + 1, self.n_labels)));
        }
        if !(self.deform_amplitude >= 0.0) || !self.deform_amplitude.is_finite() {
            return Err(Error::Synth(format!("amplitude must be >= 0, got {}", self.deform_amplitude)));
        }
        if !(self.deform_smoothness > 0.0) || !self.deform_smoothness.is_finite() {
            return Err(Error::Synth(format!("smoothness must be > 0, got {}", self.deform_smoothness)));
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.extent; 3]
    }

    /// Spec for the `index`-th pair of a dataset built from this one.
    pub fn for_pair(&self, index: usize) -> Self {
        Self { seed: pair_seed(self.seed, index as u64), ..self.clone() }
    }
}

/// SplitMix64 mix of a base seed and an index.
pub fn pair_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumePair {
    pub fixed: ImageVolume,
    pub moving: ImageVolume,
    pub fixed_labels: LabelVolume,
    pub moving_labels: LabelVolume,
    /// `[3, D, H, W]`, voxel units, `(dz, dy, dx)`: `moving(x) = fixed(x + u(x))`.
    pub gt_field: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
struct Blob {
    center: [f64; 3],
    /// Rows map `(z, y, x)` offsets into the blob frame.
    frame: [[f64; 3]; 3],
    radii: [f64; 3],
    intensity: f64,
    label: i32,
}

impl Blob {
    /// Smooth membership in `(0, 1)`, 0.5 on the ellipsoid surface.
    fn membership(&self, p: [f64; 3]) -> f64 {
        let q = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let mut r2 = 0.0;
        for i in 0..3 {
            let c = (self.frame[i][0] * q[0] + self.frame[i][1] * q[1] + self.frame[i][2] * q[2]) / self.radii[i];
            r2 += c * c;
        }
        let mean_r = (self.radii[0] + self.radii[1] + self.radii[2]) / 3.0;
        1.0 / (1.0 + (EDGE * mean_r * (r2.sqrt() - 1.0)).exp())
    }
}

fn random_blob(rng: &mut ChaCha8Rng, extent: usize, label: i32) -> Blob {
    let n = extent as f64;
    let radii = [0; 3].map(|_| rng.random_range(0.15 * n..0.28 * n));
    let margin = 0.2 * n;
    let center = [0; 3].map(|_| rng.random_range(margin..n - 1.0 - margin));
    let m = random_rotation_with(rng).matrix();
    Blob { center, frame: m, radii, intensity: rng.random_range(0.3..1.0), label }
}

/// Paints the blobs back to front; `None` if some blob is mostly hidden.
fn render(blobs: &[Blob], extent: usize) -> Option<(Vec<f64>, Vec<i32>)> {
    let n = extent;
    let mut img = vec![BACKGROUND; n * n * n];
    let mut lab = vec![0; n * n * n];
    let mut owner = vec![usize::MAX; n * n * n];
    let mut own_volume = vec![0usize; blobs.len()];
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let i = (z * n + y) * n + x;
                let p = [z as f64, y as f64, x as f64];
                for (b, blob) in blobs.iter().enumerate() {
                    let s = blob.membership(p);
                    img[i] = img[i] * (1.0 - s) + blob.intensity * s;
                    if s > 0.5 {
                        own_volume[b] += 1;
                        lab[i] = blob.label;
                        owner[i] = b;
                    }
                }
            }
        }
    }
    let mut visible = vec![0usize; blobs.len()];
    for &o in owner.iter().filter(|&&o| o != usize::MAX) {
        visible[o] += 1;
    }
    let ok = own_volume.iter().zip(&visible).all(|(&v, &s)| v > 0 && s as f64 >= MIN_VISIBLE * v as f64);
    ok.then_some((img, lab))
}

/// Separable Gaussian blur with clamped borders, truncated at 3σ.
pub fn gaussian_filter(data: &mut [f64], dims: [usize; 3], sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius).map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut line = Vec::new();
    for axis in 0..3 {
        let len = dims[axis];
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for i in 0..dims[others[0]] {
            for j in 0..dims[others[1]] {
                let base = i * strides[others[0]] + j * strides[others[1]];
                line.clear();
                line.extend((0..len).map(|k| data[base + k * strides[axis]]));
                for k in 0..len {
                    let mut s = 0.0;
                    for (t, w) in taps.iter().enumerate() {
                        let src = (k as isize + t as isize - radius).clamp(0, len as isize - 1) as usize;
                        s += w * line[src];
                    }
                    data[base + k * strides[axis]] = s;
                }
            }
        }
    }
}

/// Gaussian-filtered white noise scaled so the largest displacement norm is
/// `amplitude`. Noise is drawn on a grid padded by 3σ and cropped, so the
/// field statistics do not change near the border.
pub fn random_field(dims: [usize; 3], amplitude: f64, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let pad = (3.0 * sigma).ceil() as usize;
    let big = dims.map(|d| d + 2 * pad);
    let big_vol: usize = big.iter().product();
    let vol: usize = dims.iter().product();
    let mut u = vec![0.0; 3 * vol];
    for c in 0..3 {
        let mut noise: Vec<f64> = (0..big_vol).map(|_| StandardNormal.sample(rng)).collect();
        gaussian_filter(&mut noise, big, sigma);
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                let src = ((z + pad) * big[1] + y + pad) * big[2] + pad;
                let dst = c * vol + (z * dims[1] + y) * dims[2];
                u[dst..dst + dims[2]].copy_from_slice(&noise[src..src + dims[2]]);
            }
        }
    }
    let max = (0..vol)
        .map(|p| (u[p] * u[p] + u[vol + p] * u[vol + p] + u[2 * vol + p] * u[2 * vol + p]).sqrt())
        .fold(0.0, f64::max);
    let scale = if max > 0.0 { amplitude / max } else { 0.0 };
    u.iter_mut().for_each(|v| *v *= scale);
    u
}

/// Approximate inverse `v` of a displacement `u` by fixed-point iteration
/// `v(x) = −u(x + v(x))`, so that warping by `v` undoes warping by `u`.
pub fn invert_field(u: &[f64], dims: [usize; 3], iterations: usize) -> Vec<f64> {
    let vol: usize = dims.iter().product();
    let mut v: Vec<f64> = u.iter().map(|x| -x).collect();
    for _ in 0..iterations {
        let mut next = vec![0.0; 3 * vol];
        for c in 0..3 {
            let comp = Volume { dims, spacing: [1.0; 3], data: u[c * vol..(c + 1) * vol].to_vec() };
            let s = warp_image(&comp, &v);
            for (dst, src) in next[c * vol..(c + 1) * vol].iter_mut().zip(&s.data) {
                *dst = -src;
            }
        }
        v = next;
    }
    v
}

/// Builds a deterministic synthetic pair from `spec`.
pub fn generate_pair(spec: &SyntheticSpec) -> Result<VolumePair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.extent;
    let dims = spec.dims();
    let mut rendered = None;
    for _ in 0..MAX_ATTEMPTS {
        let blobs: Vec<Blob> = (0..spec.n_blobs)
            .map(|b| random_blob(&mut rng, n, 1 + (b % (spec.n_labels - 1)) as i32))
            .collect();
        if let Some(r) = render(&blobs, n) {
            rendered = Some(r);
            break;
        }
    }
    let (mut img, lab) = rendered.ok_or_else(|| {
        Error::Synth(format!("could not place {} visible blobs in {}^3 after {MAX_ATTEMPTS} attempts", spec.n_blobs, n))
    })?;
    let noise = Normal::new(0.0, NOISE_LEVEL).expect("valid noise");
    for v in img.iter_mut() {
        *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
    }
    let fixed = Volume::new(dims, img)?;
    let fixed_labels = Volume::new(dims, lab)?;
    if spec.deform_amplitude == 0.0 {
        return Ok(VolumePair {
            moving: fixed.clone(),
            moving_labels: fixed_labels.clone(),
            fixed,
            fixed_labels,
            gt_field: Some(vec![0.0; 3 * n * n * n]),
        });
    }
    let u = random_field(dims, spec.deform_amplitude, spec.deform_smoothness, &mut rng);
    let mut moving = warp_image(&fixed, &u);
    // Trilinear blends of values in [0, 1] stay in range up to rounding.
    moving.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let moving_labels = warp_labels(&fixed_labels, &u);
    Ok(VolumePair { fixed, moving, fixed_labels, moving_labels, gt_field: Some(u) })
}
