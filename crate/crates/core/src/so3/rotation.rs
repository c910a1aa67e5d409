use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// An element of SO(3), stored as a unit quaternion `(w, x, y, z)`.
///
/// Vectors are physical `(x, y, z)` coordinates. `a.compose(&b)` is the
/// rotation that applies `b` first, then `a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    q: [f64; 4],
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self { q: [1.0, 0.0, 0.0, 0.0] }
    }

    /// Builds a rotation from an arbitrary non-zero quaternion, normalizing it.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n > 1e-300) || !n.is_finite() {
            return Err(Error::DegenerateAxis);
        }
        Ok(Self { q: [w / n, x / n, y / n, z / n] })
    }

    /// Right-hand rotation by `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = norm(axis);
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::DegenerateAxis);
        }
        let (s, c) = (0.5 * angle).sin_cos();
        Self::from_quaternion(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Recovers the quaternion of a proper rotation matrix (Shepperd's method).
    pub fn from_matrix(m: &Mat3) -> Result<Self> {
        let tr = m[0][0] + m[1][1] + m[2][2];
        let (w, x, y, z) = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            (0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s)
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            ((m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s)
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            ((m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s)
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            ((m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s)
        };
        let mut r = Self::from_quaternion(w, x, y, z)?;
        // canonical hemisphere so equal rotations compare equal
        if r.q[0] < 0.0 || (r.q[0] == 0.0 && r.q[1..].iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0)) {
            r.q = r.q.map(|v| -v);
        }
        Ok(r)
    }

    pub fn quaternion(&self) -> [f64; 4] {
        self.q
    }

    pub fn matrix(&self) -> Mat3 {
        let [w, x, y, z] = self.q;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Matrix entries rounded to integers when every entry is within 1e-9 of
    /// one; `None` otherwise. Grid-preserving rotations have such matrices.
    pub fn integer_matrix(&self) -> Option<[[i32; 3]; 3]> {
        let m = self.matrix();
        let mut out = [[0i32; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let r = m[i][j].round();
                if (m[i][j] - r).abs() > 1e-9 {
                    return None;
                }
                out[i][j] = r as i32;
            }
        }
        Some(out)
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = self.matrix();
        mat_vec(&m, v)
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        let [a0, a1, a2, a3] = self.q;
        let [b0, b1, b2, b3] = other.q;
        let q = [
            a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
            a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
            a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
            a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
        ];
        let n = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
        Rotation { q: q.map(|v| v / n) }
    }

    pub fn inverse(&self) -> Rotation {
        let [w, x, y, z] = self.q;
        Rotation { q: [w, -x, -y, -z] }
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let v = (self.q[1] * self.q[1] + self.q[2] * self.q[2] + self.q[3] * self.q[3]).sqrt();
        2.0 * v.atan2(self.q[0].abs())
    }

    /// Same rotation up to quaternion sign.
    pub fn approx_eq(&self, other: &Rotation, tol: f64) -> bool {
        let dot: f64 = self.q.iter().zip(&other.q).map(|(a, b)| a * b).sum();
        1.0 - dot.abs() <= tol
    }
}

/// The 24 rotations that map the cube (and a cubic voxel grid) onto itself.
/// The first element is the identity.
pub fn octahedral_rotations() -> Vec<Rotation> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in perms {
        for signs in 0..8u32 {
            let mut m = [[0.0; 3]; 3];
            for (row, &col) in p.iter().enumerate() {
                m[row][col] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if det3(&m) > 0.0 {
                out.push(Rotation::from_matrix(&m).expect("signed permutation is a rotation"));
            }
        }
    }
    out
}

/// Haar-uniform random rotation, deterministic per seed.
pub fn random_rotation(seed: u64) -> Rotation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_rotation_with(&mut rng)
}

pub fn random_rotation_with<R: rand::Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        if let Ok(r) = Rotation::from_quaternion(q[0], q[1], q[2], q[3]) {
            return r;
        }
    }
}

pub(crate) fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub(crate) fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    std::array::from_fn(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

pub(crate) fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}
