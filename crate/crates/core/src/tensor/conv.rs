//! 3D cross-correlation with zero padding, lowered to GEMM.
//!
//! Stride-1 convolutions run as one GEMM per kernel offset over shifted
//! windows of a padded copy of the input. Other strides use chunked im2col
//! so the column buffer stays small. Every reduction runs in a fixed order,
//! so results are bit-reproducible.

use crate::error::{Error, Result};

/// Geometry of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
}

const COL_BUDGET: usize = 1 << 18;

impl ConvGeom {
    pub fn new(input: [usize; 5], kernel: [usize; 5], stride: usize, pad: usize) -> Result<Self> {
        let [n, cin, d, h, w] = input;
        let [cout, kcin, kd, kh, kw] = kernel;
        if kcin != cin {
            return Err(Error::Shape(format!("conv3d: input has {cin} channels, kernel expects {kcin}")));
        }
        if kd != kh || kh != kw {
            return Err(Error::Shape(format!("conv3d: kernel must be cubic, got {kd}x{kh}x{kw}")));
        }
        if kd % 2 == 0 {
            return Err(Error::EvenKernel(kd));
        }
        if stride == 0 {
            return Err(Error::Shape("conv3d: stride must be >= 1".into()));
        }
        let mut out_dims = [0; 3];
        for (i, (&e, name)) in [d, h, w].iter().zip(["D", "H", "W"]).enumerate() {
            if e == 0 || e + 2 * pad < kd {
                return Err(Error::Shape(format!("conv3d: {name}={e} with padding {pad} is smaller than kernel {kd}")));
            }
            out_dims[i] = (e + 2 * pad - kd) / stride + 1;
        }
        Ok(Self { n, cin, cout, k: kd, stride, pad, in_dims: [d, h, w], out_dims })
    }

    pub fn out_shape(&self) -> [usize; 5] {
        let [d, h, w] = self.out_dims;
        [self.n, self.cout, d, h, w]
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.out_dims[1] * self.out_dims[2]
    }

    fn in_vol(&self) -> usize {
        self.in_dims.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.out_dims.iter().product()
    }

    fn chunk_planes(&self) -> usize {
        (COL_BUDGET / (self.rows() * self.plane()).max(1)).clamp(1, self.out_dims[0])
    }

    /// Output x-range whose input column `ox·s + kx − pad` lies inside `[0, w)`.
    fn valid_range(&self, kx: usize, w: usize, wo: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kx as isize - self.pad as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = if (w as isize) - 1 - off < 0 { 0 } else { ((w as isize - 1 - off) / s + 1).min(wo as isize) };
        (lo.max(0) as usize, hi.max(lo.max(0)) as usize)
    }

    fn im2col(&self, input: &[f64], z0: usize, nz: usize, col: &mut [f64]) {
        let [d, h, w] = self.in_dims;
        let [_, ho, wo] = self.out_dims;
        let (k, s, pad) = (self.k, self.stride, self.pad as isize);
        let p = nz * ho * wo;
        col[..self.rows() * p].iter_mut().for_each(|v| *v = 0.0);
        let mut r = 0;
        for ci in 0..self.cin {
            let src = &input[ci * d * h * w..(ci + 1) * d * h * w];
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = &mut col[r * p..(r + 1) * p];
                        let (xlo, xhi) = self.valid_range(kx, w, wo);
                        for dz in 0..nz {
                            let iz = ((z0 + dz) * s) as isize + kz as isize - pad;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for oy in 0..ho {
                                let iy = (oy * s) as isize + ky as isize - pad;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let src_row = &src[(iz as usize * h + iy as usize) * w..][..w];
                                let dst = &mut row[(dz * ho + oy) * wo..][..wo];
                                let base = kx as isize - pad;
                                if s == 1 {
                                    let a = (xlo as isize + base) as usize;
                                    dst[xlo..xhi].copy_from_slice(&src_row[a..a + (xhi - xlo)]);
                                } else {
                                    for ox in xlo..xhi {
                                        dst[ox] = src_row[((ox * s) as isize + base) as usize];
                                    }
                                }
                            }
                        }
                        r += 1;
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], z0: usize, nz: usize, grad_in: &mut [f64]) {
        let [d, h, w] = self.in_dims;
        let [_, ho, wo] = self.out_dims;
        let (k, s, pad) = (self.k, self.stride, self.pad as isize);
        let p = nz * ho * wo;
        let mut r = 0;
        for ci in 0..self.cin {
            let dst = &mut grad_in[ci * d * h * w..(ci + 1) * d * h * w];
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = &col[r * p..(r + 1) * p];
                        let (xlo, xhi) = self.valid_range(kx, w, wo);
                        for dz in 0..nz {
                            let iz = ((z0 + dz) * s) as isize + kz as isize - pad;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for oy in 0..ho {
                                let iy = (oy * s) as isize + ky as isize - pad;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let dst_row = &mut dst[(iz as usize * h + iy as usize) * w..][..w];
                                let src = &row[(dz * ho + oy) * wo..][..wo];
                                let base = kx as isize - pad;
                                for ox in xlo..xhi {
                                    dst_row[((ox * s) as isize + base) as usize] += src[ox];
                                }
                            }
                        }
                        r += 1;
                    }
                }
            }
        }
    }
}

/// C (m×n, row stride `rsc`) = alpha·A·B + beta·C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k.max(1) - 1) * csa || k == 0);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserted extents bound every index touched by the kernel.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            csc as isize,
            rsc as isize,
            beta != 0.0,
            a.as_ptr(),
            csa as isize,
            rsa as isize,
            b.as_ptr(),
            csb as isize,
            rsb as isize,
            beta,
            1.0,
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

/// Stride-1 layout: the input is zero-padded once, and output voxel
/// `(z, y, x)` lives at flat index `q = (z·Hp + y)·Wp + x` of the padded
/// grid, so kernel offset `(kz, ky, kx)` reads the contiguous window starting
/// at `(kz·Hp + ky)·Wp + kx`. Positions with `y ≥ Ho` or `x ≥ Wo` are junk
/// and are skipped when unpacking.
struct Shifted {
    pdims: [usize; 3],
    nq: usize,
}

impl Shifted {
    fn new(g: &ConvGeom) -> Self {
        let [d, h, w] = g.in_dims;
        let pdims = [d + 2 * g.pad, h + 2 * g.pad, w + 2 * g.pad];
        let [od, oh, ow] = g.out_dims;
        let nq = ((od - 1) * pdims[1] + (oh - 1)) * pdims[2] + ow;
        Self { pdims, nq }
    }

    fn pvol(&self) -> usize {
        self.pdims.iter().product()
    }

    fn offset(&self, kz: usize, ky: usize, kx: usize) -> usize {
        (kz * self.pdims[1] + ky) * self.pdims[2] + kx
    }

    fn pad_input(&self, g: &ConvGeom, input: &[f64]) -> Vec<f64> {
        let [d, h, w] = g.in_dims;
        let [_, hp, wp] = self.pdims;
        let p = g.pad;
        let pv = self.pvol();
        let mut out = vec![0.0; g.cin * pv];
        for c in 0..g.cin {
            for z in 0..d {
                for y in 0..h {
                    let src = &input[((c * d + z) * h + y) * w..][..w];
                    out[c * pv + ((z + p) * hp + y + p) * wp + p..][..w].copy_from_slice(src);
                }
            }
        }
        out
    }

    /// Scatters a `[C, Do, Ho, Wo]` array into the `q` layout (junk = 0).
    fn embed(&self, g: &ConvGeom, x: &[f64], c: usize) -> Vec<f64> {
        let [od, oh, ow] = g.out_dims;
        let [_, hp, wp] = self.pdims;
        let mut out = vec![0.0; c * self.nq];
        for ch in 0..c {
            for z in 0..od {
                for y in 0..oh {
                    out[ch * self.nq + (z * hp + y) * wp..][..ow].copy_from_slice(&x[((ch * od + z) * oh + y) * ow..][..ow]);
                }
            }
        }
        out
    }

    fn extract(&self, g: &ConvGeom, q: &[f64], out: &mut [f64]) {
        let [od, oh, ow] = g.out_dims;
        let [_, hp, wp] = self.pdims;
        for ch in 0..g.cout {
            for z in 0..od {
                for y in 0..oh {
                    out[((ch * od + z) * oh + y) * ow..][..ow].copy_from_slice(&q[ch * self.nq + (z * hp + y) * wp..][..ow]);
                }
            }
        }
    }
}

fn forward_shifted(g: &ConvGeom, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let sh = Shifted::new(g);
    let (iv, ov, pv, k3) = (g.in_vol(), g.out_vol(), sh.pvol(), g.k.pow(3));
    let mut out = vec![0.0; g.n * g.cout * ov];
    let mut acc = vec![0.0; g.cout * sh.nq];
    for n in 0..g.n {
        let xp = sh.pad_input(g, &input[n * g.cin * iv..(n + 1) * g.cin * iv]);
        let mut t = 0;
        for kz in 0..g.k {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let off = sh.offset(kz, ky, kx);
                    // acc (cout×nq) += K[:, :, t] (cout×cin) · window (cin×nq)
                    gemm(g.cout, g.cin, sh.nq, &kernel[t..], g.cin * k3, k3, &xp[off..], pv, 1, if t == 0 { 0.0 } else { 1.0 }, &mut acc, sh.nq, 1);
                    t += 1;
                }
            }
        }
        sh.extract(g, &acc, &mut out[n * g.cout * ov..(n + 1) * g.cout * ov]);
    }
    out
}

fn kernel_grad_shifted(g: &ConvGeom, input: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let sh = Shifted::new(g);
    let (iv, ov, pv, k3) = (g.in_vol(), g.out_vol(), sh.pvol(), g.k.pow(3));
    let mut gk = vec![0.0; g.cout * g.cin * k3];
    for n in 0..g.n {
        let xp = sh.pad_input(g, &input[n * g.cin * iv..(n + 1) * g.cin * iv]);
        let go = sh.embed(g, &grad_out[n * g.cout * ov..(n + 1) * g.cout * ov], g.cout);
        let mut t = 0;
        for kz in 0..g.k {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let off = sh.offset(kz, ky, kx);
                    // gK[:, :, t] (cout×cin) += gO (cout×nq) · windowᵀ (nq×cin)
                    gemm(g.cout, sh.nq, g.cin, &go, sh.nq, 1, &xp[off..], 1, pv, 1.0, &mut gk[t..], g.cin * k3, k3);
                    t += 1;
                }
            }
        }
    }
    gk
}

pub fn conv3d_forward(g: &ConvGeom, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    if g.stride == 1 {
        return forward_shifted(g, input, kernel);
    }
    let (rows, plane, ov) = (g.rows(), g.plane(), g.out_vol());
    let mut out = vec![0.0; g.n * g.cout * ov];
    let cp = g.chunk_planes();
    let mut col = vec![0.0; rows * cp * plane];
    for n in 0..g.n {
        let inp = &input[n * g.cin * g.in_vol()..(n + 1) * g.cin * g.in_vol()];
        let o = &mut out[n * g.cout * ov..(n + 1) * g.cout * ov];
        let mut z0 = 0;
        while z0 < g.out_dims[0] {
            let nz = cp.min(g.out_dims[0] - z0);
            let p = nz * plane;
            g.im2col(inp, z0, nz, &mut col);
            gemm(g.cout, rows, p, kernel, rows, 1, &col, p, 1, 0.0, &mut o[z0 * plane..], ov, 1);
            z0 += nz;
        }
    }
    out
}

/// Gradients of the convolution w.r.t. input and/or kernel.
pub fn conv3d_backward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (rows, plane, ov, iv) = (g.rows(), g.plane(), g.out_vol(), g.in_vol());
    // Stride 1: the input gradient is itself a convolution of the output
    // gradient with the flipped, channel-transposed kernel. That keeps the
    // GEMM inner dimension at Cout·K³ instead of Cout.
    let unit = g.stride == 1 && g.pad < g.k;
    let mut gin = if want_input && unit {
        let k3 = g.k.pow(3);
        let mut flipped = vec![0.0; kernel.len()];
        for co in 0..g.cout {
            for ci in 0..g.cin {
                let src = &kernel[(co * g.cin + ci) * k3..][..k3];
                let dst = &mut flipped[(ci * g.cout + co) * k3..][..k3];
                for (t, v) in src.iter().enumerate() {
                    dst[k3 - 1 - t] = *v;
                }
            }
        }
        let od = g.out_dims;
        let g2 = ConvGeom::new(
            [g.n, g.cout, od[0], od[1], od[2]],
            [g.cin, g.cout, g.k, g.k, g.k],
            1,
            g.k - 1 - g.pad,
        )
        .expect("transposed geometry is valid");
        debug_assert_eq!(g2.out_dims, g.in_dims);
        Some(conv3d_forward(&g2, grad_out, &flipped))
    } else {
        want_input.then(|| vec![0.0; g.n * g.cin * iv])
    };
    if unit {
        return (gin, want_kernel.then(|| kernel_grad_shifted(g, input, grad_out)));
    }
    let mut gk = want_kernel.then(|| vec![0.0; g.cout * rows]);
    let cp = g.chunk_planes();
    let mut col = vec![0.0; rows * cp * plane];
    for n in 0..g.n {
        let inp = &input[n * g.cin * iv..(n + 1) * g.cin * iv];
        let go = &grad_out[n * g.cout * ov..(n + 1) * g.cout * ov];
        let mut z0 = 0;
        while z0 < g.out_dims[0] {
            let nz = cp.min(g.out_dims[0] - z0);
            let p = nz * plane;
            if let Some(gk) = gk.as_mut() {
                g.im2col(inp, z0, nz, &mut col);
                // gK (cout×rows) += gO (cout×p) · colᵀ (p×rows)
                gemm(g.cout, p, rows, &go[z0 * plane..], ov, 1, &col, 1, p, 1.0, gk, rows, 1);
            }
            if let Some(gin) = gin.as_mut() {
                // gcol (rows×p) = Kᵀ (rows×cout) · gO (cout×p)
                gemm(rows, g.cout, p, kernel, 1, rows, &go[z0 * plane..], ov, 1, 0.0, &mut col, p, 1);
                g.col2im(&col, z0, nz, &mut gin[n * g.cin * iv..(n + 1) * g.cin * iv]);
            }
            z0 += nz;
        }
    }
    (gin, gk)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Six-loop direct convolution oracle.
    pub(crate) fn direct_conv(g: &ConvGeom, input: &[f64], kernel: &[f64]) -> Vec<f64> {
        let [d, h, w] = g.in_dims;
        let [od, oh, ow] = g.out_dims;
        let k = g.k;
        let mut out = vec![0.0; g.n * g.cout * od * oh * ow];
        for n in 0..g.n {
            for co in 0..g.cout {
                for oz in 0..od {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = 0.0;
                            for ci in 0..g.cin {
                                for kz in 0..k {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let iz = (oz * g.stride + kz) as isize - g.pad as isize;
                                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                            if iz < 0
                                                || iy < 0
                                                || ix < 0
                                                || iz >= d as isize
                                                || iy >= h as isize
                                                || ix >= w as isize
                                            {
                                                continue;
                                            }
                                            let iv = (((n * g.cin + ci) * d + iz as usize) * h + iy as usize) * w
                                                + ix as usize;
                                            let kv = (((co * g.cin + ci) * k + kz) * k + ky) * k + kx;
                                            s += input[iv] * kernel[kv];
                                        }
                                    }
                                }
                            }
                            out[(((n * g.cout + co) * od + oz) * oh + oy) * ow + ox] = s;
                        }
                    }
                }
            }
        }
        out
    }

    fn randv(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (inp, ker, s, p) in [
            ([1, 2, 5, 5, 5], [3, 2, 3, 3, 3], 2, 1),
            ([2, 3, 6, 4, 7], [2, 3, 3, 3, 3], 1, 1),
            ([1, 1, 7, 7, 7], [2, 1, 5, 5, 5], 1, 0),
            ([1, 2, 9, 8, 5], [1, 2, 3, 3, 3], 3, 2),
        ] {
            let g = ConvGeom::new(inp, ker, s, p).unwrap();
            let x = randv(inp.iter().product(), &mut rng);
            let k = randv(ker.iter().product(), &mut rng);
            let got = conv3d_forward(&g, &x, &k);
            let want = direct_conv(&g, &x, &k);
            let err = got.iter().zip(&want).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(err < 1e-12, "{inp:?} {ker:?}: {err}");
        }
    }

    #[test]
    fn degenerate_single_voxel() {
        let g = ConvGeom::new([1, 1, 1, 1, 1], [1, 1, 1, 1, 1], 1, 0).unwrap();
        assert_eq!(conv3d_forward(&g, &[3.0], &[-2.0]), vec![-6.0]);
    }

    #[test]
    fn output_extent_formula() {
        let g = ConvGeom::new([1, 1, 33, 17, 9], [1, 1, 3, 3, 3], 2, 1).unwrap();
        assert_eq!(g.out_dims, [17, 9, 5]);
    }

    #[test]
    fn shape_errors_name_dimensions() {
        let e = ConvGeom::new([1, 2, 5, 5, 5], [1, 3, 3, 3, 3], 1, 1).unwrap_err();
        assert!(e.to_string().contains("2 channels"));
        let e = ConvGeom::new([1, 1, 5, 2, 5], [1, 1, 5, 5, 5], 1, 0).unwrap_err();
        assert!(e.to_string().contains("H=2"));
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> = <x, convᵀ(g)> and <conv(x; k), g> = <k, ∂k>
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = ConvGeom::new([2, 2, 5, 6, 7], [3, 2, 3, 3, 3], 2, 1).unwrap();
        let x = randv(2 * 2 * 5 * 6 * 7, &mut rng);
        let k = randv(3 * 2 * 27, &mut rng);
        let y = conv3d_forward(&g, &x, &k);
        let go = randv(y.len(), &mut rng);
        let (gi, gk) = conv3d_backward(&g, &x, &k, &go, true, true);
        let lhs: f64 = y.iter().zip(&go).map(|(a, b)| a * b).sum();
        let rx: f64 = x.iter().zip(gi.unwrap().iter()).map(|(a, b)| a * b).sum();
        let rk: f64 = k.iter().zip(gk.unwrap().iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rx).abs() < 1e-10 * lhs.abs().max(1.0));
        assert!((lhs - rk).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
