use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::basis::angular::{solve_angular_basis, AngularSolution};
use crate::error::{Error, Result};
use crate::so3::harmonics::harmonics_unchecked;
use crate::so3::rotation::Rotation;
use crate::so3::wigner::wigner_d_real;

/// Default Gaussian ring width in voxels.
pub const DEFAULT_RING_WIDTH: f64 = 0.6;

/// Gaussian radial rings `exp(−(r − c_j)² / 2σ²)`, zero beyond `cutoff`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialProfileSet {
    ring_centers: Vec<f64>,
    ring_width: f64,
    cutoff: f64,
}

impl RadialProfileSet {
    pub fn new(ring_centers: Vec<f64>, ring_width: f64, cutoff: f64) -> Result<Self> {
        if ring_centers.is_empty() || ring_centers[0] != 0.0 {
            return Err(Error::Radial("ring centers must start at 0".into()));
        }
        if ring_centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Radial("ring centers must be strictly increasing".into()));
        }
        if !(ring_width > 0.0) {
            return Err(Error::Radial("ring width must be positive".into()));
        }
        let max_center = *ring_centers.last().unwrap();
        if !(cutoff >= max_center) {
            return Err(Error::Radial(format!("cutoff {cutoff} below last center {max_center}")));
        }
        Ok(Self { ring_centers, ring_width, cutoff })
    }

    /// Rings at integer radii `0..=(K−1)/2`, σ = 0.6, cutoff at the kernel corner.
    pub fn for_kernel(size: usize) -> Self {
        let half = size.saturating_sub(1) / 2;
        let centers = (0..=half).map(|r| r as f64).collect();
        let cutoff = half as f64 * 3f64.sqrt() + 1e-9;
        Self::new(centers, DEFAULT_RING_WIDTH, cutoff).expect("default rings are valid")
    }

    pub fn ring_centers(&self) -> &[f64] {
        &self.ring_centers
    }

    pub fn ring_width(&self) -> f64 {
        self.ring_width
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn eval(&self, ring: usize, r: f64) -> f64 {
        if r > self.cutoff {
            return 0.0;
        }
        let d = r - self.ring_centers[ring];
        (-d * d / (2.0 * self.ring_width * self.ring_width)).exp()
    }

    fn key(&self) -> Vec<u64> {
        let mut k: Vec<u64> = self.ring_centers.iter().map(|c| c.to_bits()).collect();
        k.push(self.ring_width.to_bits());
        k.push(self.cutoff.to_bits());
        k
    }
}

/// Which angular solution and radial ring produced a basis element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BasisElement {
    pub l_filter: usize,
    pub ring: usize,
}

/// Equivariant kernel basis `l_in → l_out` sampled on a `K³` grid.
///
/// `data` is row-major `[B][2·l_out+1][2·l_in+1][K][K][K]`, spatial index
/// order `(z, y, x)`. Grid voxel `(iz, iy, ix)` sits at the physical offset
/// `(ix − c, iy − c, iz − c)` with `c = (K−1)/2`. Each element has unit
/// Frobenius norm; `norms` keeps the norm it had before normalization.
#[derive(Clone, Debug)]
pub struct KernelBasis {
    pub l_in: usize,
    pub l_out: usize,
    pub size: usize,
    pub elements: Vec<BasisElement>,
    pub norms: Vec<f64>,
    pub data: Vec<f64>,
}

impl KernelBasis {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn dout(&self) -> usize {
        2 * self.l_out + 1
    }

    pub fn din(&self) -> usize {
        2 * self.l_in + 1
    }

    pub fn voxels(&self) -> usize {
        self.size * self.size * self.size
    }

    pub fn element_len(&self) -> usize {
        self.dout() * self.din() * self.voxels()
    }

    pub fn element(&self, b: usize) -> &[f64] {
        let n = self.element_len();
        &self.data[b * n..(b + 1) * n]
    }
}

/// Physical offset of grid voxel `(iz, iy, ix)` in a `K³` kernel.
pub(crate) fn grid_offset(size: usize, iz: usize, iy: usize, ix: usize) -> [f64; 3] {
    let c = (size as f64 - 1.0) / 2.0;
    [ix as f64 - c, iy as f64 - c, iz as f64 - c]
}

fn sample_element(sol: &AngularSolution, radial: &RadialProfileSet, ring: usize, size: usize) -> Vec<f64> {
    let (dout, din, df) = sol.dims();
    let vox = size * size * size;
    let mut out = vec![0.0; dout * din * vox];
    for iz in 0..size {
        for iy in 0..size {
            for ix in 0..size {
                let x = grid_offset(size, iz, iy, ix);
                let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                let g = radial.eval(ring, r);
                if g == 0.0 {
                    continue;
                }
                let y = if r == 0.0 {
                    // direction undefined: only the constant harmonic survives
                    if sol.l_filter != 0 {
                        continue;
                    }
                    harmonics_unchecked(0, [0.0, 0.0, 1.0])
                } else {
                    harmonics_unchecked(sol.l_filter, x.map(|v| v / r))
                };
                let v = (iz * size + iy) * size + ix;
                for i in 0..dout {
                    for j in 0..din {
                        let s: f64 = (0..df).map(|m| sol.at(i, j, m) * y[m]).sum();
                        out[(i * din + j) * vox + v] = g * s;
                    }
                }
            }
        }
    }
    out
}

/// Samples every (angular solution, ring) product on a `size³` grid.
///
/// The ring centered at 0 only carries the `l_filter = 0` solution. Elements
/// that vanish on the grid, or that are linearly dependent on earlier ones,
/// are dropped.
pub fn sample_kernel_basis(l_in: usize, l_out: usize, size: usize, radial: &RadialProfileSet) -> Result<KernelBasis> {
    if size % 2 == 0 || size == 0 {
        return Err(Error::EvenKernel(size));
    }
    let solutions = solve_angular_basis(l_in, l_out)?;
    let mut elements = Vec::new();
    let mut norms = Vec::new();
    let mut data = Vec::new();
    // orthonormalized copies of accepted elements, for the dependence test
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for ring in 0..radial.ring_centers().len() {
        for sol in &solutions {
            if radial.ring_centers()[ring] == 0.0 && sol.l_filter != 0 {
                continue;
            }
            let mut e = sample_element(sol, radial, ring, size);
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                continue;
            }
            e.iter_mut().for_each(|v| *v /= norm);
            let mut resid = e.clone();
            for q in &ortho {
                let d: f64 = resid.iter().zip(q).map(|(a, b)| a * b).sum();
                resid.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
            let rn = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rn < 1e-6 {
                continue;
            }
            resid.iter_mut().for_each(|v| *v /= rn);
            ortho.push(resid);
            elements.push(BasisElement { l_filter: sol.l_filter, ring });
            norms.push(norm);
            data.extend_from_slice(&e);
        }
    }
    Ok(KernelBasis { l_in, l_out, size, elements, norms, data })
}

type CacheKey = (usize, usize, usize, Vec<u64>);

/// Process-wide basis cache; bases are immutable once built.
pub fn cached_kernel_basis(l_in: usize, l_out: usize, size: usize, radial: &RadialProfileSet) -> Result<Arc<KernelBasis>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<KernelBasis>>>> = OnceLock::new();
    let key = (l_in, l_out, size, radial.key());
    let cache = CACHE.get_or_init(Default::default);
    if let Some(kb) = cache.lock().expect("basis cache poisoned").get(&key) {
        return Ok(kb.clone());
    }
    let kb = Arc::new(sample_kernel_basis(l_in, l_out, size, radial)?);
    Ok(cache.lock().expect("basis cache poisoned").entry(key).or_insert(kb).clone())
}

/// Trilinear read of one `(dout × din)` kernel block at a continuous physical
/// offset; zero outside the grid.
fn sample_block(kb: &KernelBasis, b: usize, p: [f64; 3], out: &mut [f64]) {
    let size = kb.size;
    let c = (size as f64 - 1.0) / 2.0;
    let idx = [p[2] + c, p[1] + c, p[0] + c];
    out.iter_mut().for_each(|v| *v = 0.0);
    let base = idx.map(|v| v.floor());
    let frac: [f64; 3] = std::array::from_fn(|k| idx[k] - base[k]);
    let elem = kb.element(b);
    let vox = kb.voxels();
    for corner in 0..8 {
        let mut w = 1.0;
        let mut pos = [0usize; 3];
        let mut inside = true;
        for k in 0..3 {
            let bit = (corner >> (2 - k)) & 1;
            let q = base[k] as i64 + bit as i64;
            w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
            if q < 0 || q >= size as i64 {
                inside = false;
            } else {
                pos[k] = q as usize;
            }
        }
        if !inside || w == 0.0 {
            continue;
        }
        let v = (pos[0] * size + pos[1]) * size + pos[2];
        for (ij, o) in out.iter_mut().enumerate() {
            *o += w * elem[ij * vox + v];
        }
    }
}

/// Worst relative violation of `D^{out}(R) κ(x) D^{in}(R)^{-1} = κ(Rx)` over
/// basis elements. Grid-preserving rotations are checked by exact voxel
/// permutation; any other rotation reads `κ(Rx)` by trilinear resampling.
pub fn basis_equivariance_residual(kb: &KernelBasis, r: &Rotation) -> f64 {
    let dout_m = wigner_d_real(kb.l_out, r).expect("feature order");
    let din_m = wigner_d_real(kb.l_in, r).expect("feature order");
    let (dout, din, size, vox) = (kb.dout(), kb.din(), kb.size, kb.voxels());
    let int_m = r.integer_matrix();
    let m = r.matrix();
    let c = (size as f64 - 1.0) / 2.0;
    let mut worst = 0.0f64;
    let mut block = vec![0.0; dout * din];
    let mut rotated = vec![0.0; dout * din];
    for b in 0..kb.len() {
        let elem = kb.element(b);
        let (mut num, mut den) = (0.0, 0.0);
        for iz in 0..size {
            for iy in 0..size {
                for ix in 0..size {
                    let v = (iz * size + iy) * size + ix;
                    let x = grid_offset(size, iz, iy, ix);
                    for ij in 0..dout * din {
                        block[ij] = elem[ij * vox + v];
                    }
                    // D_out κ(x) D_inᵀ
                    for i in 0..dout {
                        for j in 0..din {
                            let mut s = 0.0;
                            for a in 0..dout {
                                for bb in 0..din {
                                    s += dout_m[(i, a)] * block[a * din + bb] * din_m[(j, bb)];
                                }
                            }
                            rotated[i * din + j] = s;
                        }
                    }
                    let rx: [f64; 3] = std::array::from_fn(|k| m[k][0] * x[0] + m[k][1] * x[1] + m[k][2] * x[2]);
                    let target: Vec<f64> = match int_m {
                        Some(im) => {
                            let p: [i64; 3] = std::array::from_fn(|k| {
                                (im[k][0] as f64 * x[0] + im[k][1] as f64 * x[1] + im[k][2] as f64 * x[2] + c).round()
                                    as i64
                            });
                            let w = (p[2] as usize * size + p[1] as usize) * size + p[0] as usize;
                            (0..dout * din).map(|ij| elem[ij * vox + w]).collect()
                        }
                        None => {
                            let mut t = vec![0.0; dout * din];
                            sample_block(kb, b, rx, &mut t);
                            t
                        }
                    };
                    for ij in 0..dout * din {
                        num += (rotated[ij] - target[ij]).powi(2);
                        den += block[ij] * block[ij];
                    }
                }
            }
        }
        worst = worst.max((num / den).sqrt());
    }
    worst
}
