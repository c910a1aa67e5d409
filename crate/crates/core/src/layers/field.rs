use crate::error::{Error, Result};
use crate::so3::{rep_matrix, FieldType, Rotation};
use crate::tensor::{Tape, Tensor, Var};

/// A tensor `[N, C, D, H, W]` tagged with the irrep layout of its channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField {
    pub tensor: Tensor,
    pub ftype: FieldType,
}

impl FeatureField {
    pub fn new(tensor: Tensor, ftype: FieldType) -> Result<Self> {
        let [_, c, ..] = tensor.dims5()?;
        if c != ftype.total_channels() {
            return Err(Error::Shape(format!("tensor has {c} channels but {ftype} needs {}", ftype.total_channels())));
        }
        Ok(Self { tensor, ftype })
    }
}

/// A typed handle on a tape.
#[derive(Clone, Debug)]
pub struct FieldVar {
    pub var: Var,
    pub ftype: FieldType,
}

impl FieldVar {
    pub fn new(tape: &Tape, var: Var, ftype: FieldType) -> Result<Self> {
        let s = tape.shape(var);
        if s.len() != 5 || s[1] != ftype.total_channels() {
            return Err(Error::Shape(format!("tensor {s:?} does not carry field type {ftype}")));
        }
        Ok(Self { var, ftype })
    }

    pub(crate) fn expect(&self, want: &FieldType) -> Result<()> {
        if &self.ftype != want {
            return Err(Error::TypeMismatch { expected: want.to_string(), actual: self.ftype.to_string() });
        }
        Ok(())
    }
}

/// Source voxel for every destination voxel of an odd cube of side `n` rotated
/// by the integer matrix `m` about its center: `src = mᵀ (p − c) + c`, with
/// physical axes (x, y, z) = (W, H, D).
pub(crate) fn rotation_gather(m: &[[i32; 3]; 3], n: usize) -> Vec<usize> {
    let c = (n as i64 - 1) / 2;
    let mut idx = Vec::with_capacity(n * n * n);
    for z in 0..n as i64 {
        for y in 0..n as i64 {
            for x in 0..n as i64 {
                let p = [x - c, y - c, z - c];
                let s: [usize; 3] =
                    std::array::from_fn(|k| ((0..3).map(|j| m[j][k] as i64 * p[j]).sum::<i64>() + c) as usize);
                idx.push((s[2] * n + s[1]) * n + s[0]);
            }
        }
    }
    idx
}

/// `[T_R f](x) = ρ(R) f(R⁻¹x)` for an octahedral `R` on a cubic grid.
pub fn rotate_field(field: &FeatureField, r: &Rotation) -> Result<FeatureField> {
    let m = r.integer_matrix().ok_or(Error::NonOctahedral)?;
    if m == [[1, 0, 0], [0, 1, 0], [0, 0, 1]] {
        return Ok(field.clone());
    }
    let [n, c, d, h, w] = field.tensor.dims5()?;
    if d != h || h != w {
        return Err(Error::Shape(format!("rotate_field needs a cubic grid, got {:?}", [d, h, w])));
    }
    if d % 2 == 0 {
        return Err(Error::Shape(format!("rotate_field needs an odd side, got {d}")));
    }
    let gather = rotation_gather(&m, d);
    let vol = d * h * w;
    let src = field.tensor.data();
    let mut spatial = vec![0.0; src.len()];
    for bc in 0..n * c {
        let (s, o) = (&src[bc * vol..(bc + 1) * vol], &mut spatial[bc * vol..(bc + 1) * vol]);
        for (dst, &g) in o.iter_mut().zip(&gather) {
            *dst = s[g];
        }
    }
    let mut out = spatial.clone();
    if !field.ftype.is_scalar() {
        // Octahedral D-matrices are exact signed permutations for l = 1 and
        // mix in ±1/2, ±√3/2 for l = 2; snap the entries that should be exact.
        let rho = rep_matrix(&field.ftype, r).map(|v| {
            let q = v.round();
            if (v - q).abs() < 1e-12 { q } else { v }
        });
        for slot in field.ftype.non_scalar_slots() {
            let k = slot.irrep.dim();
            for b in 0..n {
                for i in 0..k {
                    let dst = &mut out[(b * c + slot.offset + i) * vol..][..vol];
                    dst.iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..k {
                        let coef = rho[(slot.offset + i, slot.offset + j)];
                        if coef == 0.0 {
                            continue;
                        }
                        let s = &spatial[(b * c + slot.offset + j) * vol..][..vol];
                        for (dv, sv) in dst.iter_mut().zip(s) {
                            *dv += coef * sv;
                        }
                    }
                }
            }
        }
    }
    FeatureField::new(Tensor::new(field.tensor.shape().to_vec(), out)?, field.ftype.clone())
}
