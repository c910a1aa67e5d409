//! Resampling of images and label maps: dense warps and rigid rotations.

use crate::so3::{Rotation, Vec3};
use crate::tensor::interp::grid_sample_forward;
use crate::volume::{ImageVolume, LabelVolume, Volume};

/// Trilinear warp `I ∘ (x + u)` with border clamping; `disp` is `[3, D, H, W]`
/// in voxel units, component order `(dz, dy, dx)`.
pub fn warp_image(image: &ImageVolume, disp: &[f64]) -> ImageVolume {
    let data = grid_sample_forward(&image.data, disp, 1, 1, image.dims);
    Volume { dims: image.dims, spacing: image.spacing, data }
}

/// Nearest-neighbour warp of a label map under the same convention as [`warp_image`].
pub fn warp_labels(labels: &LabelVolume, disp: &[f64]) -> LabelVolume {
    let [d, h, w] = labels.dims;
    let vol = d * h * w;
    let near = |v: f64, n: usize| (v.round().max(0.0) as usize).min(n - 1);
    let mut data = vec![0; vol];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let p = (z * h + y) * w + x;
                let sz = near(z as f64 + disp[p], d);
                let sy = near(y as f64 + disp[vol + p], h);
                let sx = near(x as f64 + disp[2 * vol + p], w);
                data[p] = labels.data[(sz * h + sy) * w + sx];
            }
        }
    }
    Volume { dims: labels.dims, spacing: labels.spacing, data }
}

/// Axis for in-plane rotations of axial slices: physical z, i.e. the depth axis.
pub const DEFAULT_ROTATION_AXIS: Vec3 = [0.0, 0.0, 1.0];

/// For every output voxel, the source position `Rᵀ(p − c) + c` as `(z, y, x)`.
fn source_positions(dims: [usize; 3], angle_deg: f64, axis: Vec3) -> crate::Result<Vec<[f64; 3]>> {
    let r = Rotation::from_axis_angle(axis, angle_deg.to_radians())?.inverse().matrix();
    let [d, h, w] = dims;
    let c = [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, (d as f64 - 1.0) / 2.0];
    let mut out = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let q = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
                let s: Vec<f64> = (0..3).map(|i| r[i][0] * q[0] + r[i][1] * q[1] + r[i][2] * q[2] + c[i]).collect();
                out.push([s[2], s[1], s[0]]);
            }
        }
    }
    Ok(out)
}

/// Rotates an intensity volume about its centre by `angle_deg` around the
/// physical `axis` (x, y, z = W, H, D). Trilinear; reads outside the volume
/// take `background`.
pub fn rotate_volume(image: &ImageVolume, angle_deg: f64, axis: Vec3, background: f64) -> crate::Result<ImageVolume> {
    if angle_deg == 0.0 {
        return Ok(image.clone());
    }
    let [d, h, w] = image.dims;
    let sample = |z: isize, y: isize, x: isize| {
        if z < 0 || y < 0 || x < 0 || z >= d as isize || y >= h as isize || x >= w as isize {
            background
        } else {
            *image.at(z as usize, y as usize, x as usize)
        }
    };
    let data = source_positions(image.dims, angle_deg, axis)?
        .into_iter()
        .map(|[sz, sy, sx]| {
            let (z0, y0, x0) = (sz.floor(), sy.floor(), sx.floor());
            let (fz, fy, fx) = (sz - z0, sy - y0, sx - x0);
            let (z0, y0, x0) = (z0 as isize, y0 as isize, x0 as isize);
            let mut v = 0.0;
            for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
                for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                    for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                        let wt = wz * wy * wx;
                        if wt != 0.0 {
                            v += wt * sample(z0 + dz, y0 + dy, x0 + dx);
                        }
                    }
                }
            }
            v
        })
        .collect();
    Ok(Volume { dims: image.dims, spacing: image.spacing, data })
}

/// Nearest-neighbour counterpart of [`rotate_volume`] for label maps.
pub fn rotate_labels(labels: &LabelVolume, angle_deg: f64, axis: Vec3, background: i32) -> crate::Result<LabelVolume> {
    if angle_deg == 0.0 {
        return Ok(labels.clone());
    }
    let [d, h, w] = labels.dims;
    let data = source_positions(labels.dims, angle_deg, axis)?
        .into_iter()
        .map(|[sz, sy, sx]| {
            let (z, y, x) = (sz.round(), sy.round(), sx.round());
            if z < 0.0 || y < 0.0 || x < 0.0 || z >= d as f64 || y >= h as f64 || x >= w as f64 {
                background
            } else {
                *labels.at(z as usize, y as usize, x as usize)
            }
        })
        .collect();
    Ok(Volume { dims: labels.dims, spacing: labels.spacing, data })
}
