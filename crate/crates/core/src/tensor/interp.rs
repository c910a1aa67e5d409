//! Resampling kernels: ×2 trilinear upsampling, displacement warps, box
//! sums and forward differences, each with its adjoint.

/// Per-output-sample linear interpolation stencil along one axis.
#[derive(Clone, Copy, Debug)]
struct Stencil {
    i0: usize,
    i1: usize,
    w1: f64,
}

/// ×2 upsampling stencils, align-corners = false (half-pixel centers).
fn upsample_stencils(n: usize) -> Vec<Stencil> {
    (0..2 * n)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            Stencil { i0, i1, w1: src - i0 as f64 }
        })
        .collect()
}

/// Applies `stencils` along `axis` (0, 1, 2 = D, H, W) of a `[B, D, H, W]`
/// array where `B` folds batch and channels.
fn resample_axis(src: &[f64], dims: [usize; 4], axis: usize, st: &[Stencil]) -> (Vec<f64>, [usize; 4]) {
    let mut od = dims;
    od[axis + 1] = st.len();
    let outer: usize = dims[..axis + 1].iter().product();
    let inner: usize = dims[axis + 2..].iter().product();
    let (n_in, n_out) = (dims[axis + 1], st.len());
    let mut out = vec![0.0; outer * n_out * inner];
    for o in 0..outer {
        let s = &src[o * n_in * inner..(o + 1) * n_in * inner];
        let d = &mut out[o * n_out * inner..(o + 1) * n_out * inner];
        for (i, stc) in st.iter().enumerate() {
            let w0 = 1.0 - stc.w1;
            for k in 0..inner {
                d[i * inner + k] = w0 * s[stc.i0 * inner + k] + stc.w1 * s[stc.i1 * inner + k];
            }
        }
    }
    (out, od)
}

fn resample_axis_adjoint(g: &[f64], in_dims: [usize; 4], axis: usize, st: &[Stencil]) -> Vec<f64> {
    let outer: usize = in_dims[..axis + 1].iter().product();
    let inner: usize = in_dims[axis + 2..].iter().product();
    let (n_in, n_out) = (in_dims[axis + 1], st.len());
    let mut out = vec![0.0; outer * n_in * inner];
    for o in 0..outer {
        let s = &g[o * n_out * inner..(o + 1) * n_out * inner];
        let d = &mut out[o * n_in * inner..(o + 1) * n_in * inner];
        for (i, stc) in st.iter().enumerate() {
            let w0 = 1.0 - stc.w1;
            for k in 0..inner {
                d[stc.i0 * inner + k] += w0 * s[i * inner + k];
                d[stc.i1 * inner + k] += stc.w1 * s[i * inner + k];
            }
        }
    }
    out
}

/// Trilinear ×2 upsampling of `[B, D, H, W]` data.
pub fn upsample2_forward(x: &[f64], dims: [usize; 4]) -> Vec<f64> {
    let mut cur = x.to_vec();
    let mut d = dims;
    for axis in 0..3 {
        let st = upsample_stencils(dims[axis + 1]);
        let (next, nd) = resample_axis(&cur, d, axis, &st);
        cur = next;
        d = nd;
    }
    cur
}

pub fn upsample2_backward(g: &[f64], dims: [usize; 4]) -> Vec<f64> {
    // forward dims after each axis pass
    let mut stage = [dims; 3];
    for axis in 1..3 {
        stage[axis] = stage[axis - 1];
        stage[axis][axis] *= 2;
    }
    let mut cur = g.to_vec();
    for axis in (0..3).rev() {
        let st = upsample_stencils(dims[axis + 1]);
        cur = resample_axis_adjoint(&cur, stage[axis], axis, &st);
    }
    cur
}

/// Sample position along one axis, border-clamped. Returns the lower cell
/// index, fractional weight and whether the coordinate was clamped.
#[inline]
fn cell(c: f64, n: usize) -> (usize, usize, f64, bool) {
    if n == 1 {
        return (0, 0, 0.0, true);
    }
    let hi = (n - 1) as f64;
    let (cc, clamped) = if c < 0.0 {
        (0.0, true)
    } else if c > hi {
        (hi, true)
    } else {
        (c, false)
    };
    let i0 = (cc.floor() as usize).min(n - 2);
    (i0, i0 + 1, cc - i0 as f64, clamped)
}

/// `out[b, c, p] = image[b, c](p + u[b, :, p])`, trilinear, border clamp.
/// `disp` is `[N, 3, D, H, W]` with components `(dz, dy, dx)` in voxels.
pub fn grid_sample_forward(image: &[f64], disp: &[f64], n: usize, c: usize, dims: [usize; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let vol = d * h * w;
    let mut out = vec![0.0; n * c * vol];
    for b in 0..n {
        let u = &disp[b * 3 * vol..(b + 1) * 3 * vol];
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let p = (z * h + y) * w + x;
                    let (z0, z1, fz, _) = cell(z as f64 + u[p], d);
                    let (y0, y1, fy, _) = cell(y as f64 + u[vol + p], h);
                    let (x0, x1, fx, _) = cell(x as f64 + u[2 * vol + p], w);
                    let corners = [
                        ((z0 * h + y0) * w + x0, (1.0 - fz) * (1.0 - fy) * (1.0 - fx)),
                        ((z0 * h + y0) * w + x1, (1.0 - fz) * (1.0 - fy) * fx),
                        ((z0 * h + y1) * w + x0, (1.0 - fz) * fy * (1.0 - fx)),
                        ((z0 * h + y1) * w + x1, (1.0 - fz) * fy * fx),
                        ((z1 * h + y0) * w + x0, fz * (1.0 - fy) * (1.0 - fx)),
                        ((z1 * h + y0) * w + x1, fz * (1.0 - fy) * fx),
                        ((z1 * h + y1) * w + x0, fz * fy * (1.0 - fx)),
                        ((z1 * h + y1) * w + x1, fz * fy * fx),
                    ];
                    for ch in 0..c {
                        let img = &image[(b * c + ch) * vol..(b * c + ch + 1) * vol];
                        let mut s = 0.0;
                        for (idx, wt) in corners {
                            s += wt * img[idx];
                        }
                        out[(b * c + ch) * vol + p] = s;
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`grid_sample_forward`] w.r.t. image and displacement.
#[allow(clippy::too_many_arguments)]
pub fn grid_sample_backward(
    image: &[f64],
    disp: &[f64],
    grad_out: &[f64],
    n: usize,
    c: usize,
    dims: [usize; 3],
    want_image: bool,
    want_disp: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let [d, h, w] = dims;
    let vol = d * h * w;
    let mut gi = want_image.then(|| vec![0.0; n * c * vol]);
    let mut gu = want_disp.then(|| vec![0.0; n * 3 * vol]);
    for b in 0..n {
        let u = &disp[b * 3 * vol..(b + 1) * 3 * vol];
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let p = (z * h + y) * w + x;
                    let (z0, z1, fz, cz) = cell(z as f64 + u[p], d);
                    let (y0, y1, fy, cy) = cell(y as f64 + u[vol + p], h);
                    let (x0, x1, fx, cx) = cell(x as f64 + u[2 * vol + p], w);
                    let idx = [
                        (z0 * h + y0) * w + x0,
                        (z0 * h + y0) * w + x1,
                        (z0 * h + y1) * w + x0,
                        (z0 * h + y1) * w + x1,
                        (z1 * h + y0) * w + x0,
                        (z1 * h + y0) * w + x1,
                        (z1 * h + y1) * w + x0,
                        (z1 * h + y1) * w + x1,
                    ];
                    let wz = [1.0 - fz, fz];
                    let wy = [1.0 - fy, fy];
                    let wx = [1.0 - fx, fx];
                    let (mut dz, mut dy, mut dx) = (0.0, 0.0, 0.0);
                    for ch in 0..c {
                        let base = (b * c + ch) * vol;
                        let g = grad_out[base + p];
                        if g == 0.0 {
                            continue;
                        }
                        if let Some(gi) = gi.as_mut() {
                            for (k, &ix) in idx.iter().enumerate() {
                                gi[base + ix] += g * wz[k >> 2] * wy[(k >> 1) & 1] * wx[k & 1];
                            }
                        }
                        if gu.is_some() {
                            let v: [f64; 8] = std::array::from_fn(|k| image[base + idx[k]]);
                            // ∂/∂fz etc. of the trilinear blend
                            let mut tz = 0.0;
                            let mut ty = 0.0;
                            let mut tx = 0.0;
                            for k in 0..8 {
                                let (bz, by, bx) = (k >> 2, (k >> 1) & 1, k & 1);
                                let sz = if bz == 1 { 1.0 } else { -1.0 };
                                let sy = if by == 1 { 1.0 } else { -1.0 };
                                let sx = if bx == 1 { 1.0 } else { -1.0 };
                                tz += sz * wy[by] * wx[bx] * v[k];
                                ty += sy * wz[bz] * wx[bx] * v[k];
                                tx += sx * wz[bz] * wy[by] * v[k];
                            }
                            dz += g * tz;
                            dy += g * ty;
                            dx += g * tx;
                        }
                    }
                    if let Some(gu) = gu.as_mut() {
                        let gu = &mut gu[b * 3 * vol..(b + 1) * 3 * vol];
                        if !cz {
                            gu[p] += dz;
                        }
                        if !cy {
                            gu[vol + p] += dy;
                        }
                        if !cx {
                            gu[2 * vol + p] += dx;
                        }
                    }
                }
            }
        }
    }
    (gi, gu)
}

/// Zero-padded box sum of width `window` (odd) along all three spatial axes
/// of `[B, D, H, W]` data. The operator is symmetric, so it is its own adjoint.
pub fn box_sum(x: &[f64], dims: [usize; 4], window: usize) -> Vec<f64> {
    let r = window / 2;
    let mut cur = x.to_vec();
    for axis in 0..3 {
        let outer: usize = dims[..axis + 1].iter().product();
        let inner: usize = dims[axis + 2..].iter().product();
        let n = dims[axis + 1];
        let mut out = vec![0.0; cur.len()];
        for o in 0..outer {
            let s = &cur[o * n * inner..(o + 1) * n * inner];
            let d = &mut out[o * n * inner..(o + 1) * n * inner];
            for i in 0..n {
                let lo = i.saturating_sub(r);
                let hi = (i + r).min(n - 1);
                for j in lo..=hi {
                    for k in 0..inner {
                        d[i * inner + k] += s[j * inner + k];
                    }
                }
            }
        }
        cur = out;
    }
    cur
}

/// `x[i+1] − x[i]` along spatial `axis` of `[B, D, H, W]` data.
pub fn forward_diff(x: &[f64], dims: [usize; 4], axis: usize) -> (Vec<f64>, [usize; 4]) {
    let outer: usize = dims[..axis + 1].iter().product();
    let inner: usize = dims[axis + 2..].iter().product();
    let n = dims[axis + 1];
    let mut od = dims;
    od[axis + 1] = n - 1;
    let mut out = vec![0.0; outer * (n - 1) * inner];
    for o in 0..outer {
        for i in 0..n - 1 {
            for k in 0..inner {
                out[(o * (n - 1) + i) * inner + k] = x[(o * n + i + 1) * inner + k] - x[(o * n + i) * inner + k];
            }
        }
    }
    (out, od)
}

pub fn forward_diff_adjoint(g: &[f64], dims: [usize; 4], axis: usize) -> Vec<f64> {
    let outer: usize = dims[..axis + 1].iter().product();
    let inner: usize = dims[axis + 2..].iter().product();
    let n = dims[axis + 1];
    let mut out = vec![0.0; outer * n * inner];
    for o in 0..outer {
        for i in 0..n - 1 {
            for k in 0..inner {
                let v = g[(o * (n - 1) + i) * inner + k];
                out[(o * n + i + 1) * inner + k] += v;
                out[(o * n + i) * inner + k] -= v;
            }
        }
    }
    out
}
