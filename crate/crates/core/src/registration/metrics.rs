//! Overlap and surface-distance metrics on integer label volumes.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::volume::LabelVolume;

/// Per-label Dice plus their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct DiceScores {
    /// `None` for labels absent from both volumes.
    pub per_label: BTreeMap<i32, Option<f64>>,
    /// Mean over labels present in at least one volume; `NaN` if there are none.
    pub mean: f64,
}

/// Dice overlap `2|A∩B| / (|A|+|B|)` for each label in `labels`.
pub fn dice(a: &[i32], b: &[i32], labels: &[i32]) -> Result<DiceScores> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("dice on {} vs {} voxels", a.len(), b.len())));
    }
    let mut counts: BTreeMap<i32, [usize; 3]> = labels.iter().map(|&l| (l, [0; 3])).collect();
    for (&x, &y) in a.iter().zip(b) {
        if let Some(c) = counts.get_mut(&x) {
            c[0] += 1;
            if x == y {
                c[2] += 1;
            }
        }
        if let Some(c) = counts.get_mut(&y) {
            c[1] += 1;
        }
    }
    let per_label: BTreeMap<i32, Option<f64>> = counts
        .into_iter()
        .map(|(l, [na, nb, both])| {
            let d = (na + nb > 0).then(|| 2.0 * both as f64 / (na + nb) as f64);
            (l, d)
        })
        .collect();
    let present: Vec<f64> = per_label.values().flatten().copied().collect();
    let mean = if present.is_empty() { f64::NAN } else { present.iter().sum::<f64>() / present.len() as f64 };
    Ok(DiceScores { per_label, mean })
}

/// Non-zero labels occurring in either volume, sorted.
pub fn foreground_labels(a: &[i32], b: &[i32]) -> Vec<i32> {
    let mut seen = std::collections::BTreeSet::new();
    seen.extend(a.iter().chain(b).copied().filter(|&l| l != 0));
    seen.into_iter().collect()
}

const NEIGHBOURS: [[isize; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

/// Voxels of `label` with at least one 6-neighbour outside the label.
/// Neighbours beyond the volume count as background.
pub fn surface_voxels(vol: &LabelVolume, label: i32) -> Vec<[usize; 3]> {
    let [d, h, w] = vol.dims;
    let mut out = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if *vol.at(z, y, x) != label {
                    continue;
                }
                let boundary = NEIGHBOURS.iter().any(|o| {
                    let (nz, ny, nx) = (z as isize + o[0], y as isize + o[1], x as isize + o[2]);
                    if nz < 0 || ny < 0 || nx < 0 || nz >= d as isize || ny >= h as isize || nx >= w as isize {
                        return true;
                    }
                    *vol.at(nz as usize, ny as usize, nx as usize) != label
                });
                if boundary {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out
}

fn nearest_distances(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> f64 {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    (0..3)
                        .map(|k| {
                            let t = (p[k] as f64 - q[k] as f64) * spacing[k];
                            t * t
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum()
}

/// Average symmetric surface distance in millimetres, by exhaustive search.
pub fn assd(a: &LabelVolume, b: &LabelVolume, label: i32, spacing: [f64; 3]) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::Shape(format!("assd on {:?} vs {:?}", a.dims, b.dims)));
    }
    let sa = surface_voxels(a, label);
    let sb = surface_voxels(b, label);
    if sa.is_empty() || sb.is_empty() {
        return Err(Error::EmptySurface(label));
    }
    let total = nearest_distances(&sa, &sb, spacing) + nearest_distances(&sb, &sa, spacing);
    Ok(total / (sa.len() + sb.len()) as f64)
}

/// Mean ASSD over the labels present in both volumes; `NaN` if none are.
pub fn assd_mean(a: &LabelVolume, b: &LabelVolume, labels: &[i32]) -> Result<f64> {
    let mut vals = Vec::new();
    for &l in labels {
        match assd(a, b, l, a.spacing) {
            Ok(v) => vals.push(v),
            Err(Error::EmptySurface(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(if vals.is_empty() { f64::NAN } else { vals.iter().sum::<f64>() / vals.len() as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(dims: [usize; 3], lo: [usize; 3], side: usize, label: i32) -> LabelVolume {
        let mut v = LabelVolume::filled(dims, 0);
        for z in lo[0]..lo[0] + side {
            for y in lo[1]..lo[1] + side {
                for x in lo[2]..lo[2] + side {
                    let i = v.index(z, y, x);
                    v.data[i] = label;
                }
            }
        }
        v
    }

    #[test]
    fn dice_identical_disjoint_half() {
        let a = cube([6, 6, 6], [1, 1, 1], 2, 1);
        assert_eq!(dice(&a.data, &a.data, &[1]).unwrap().mean, 1.0);
        let b = cube([6, 6, 6], [3, 3, 3], 2, 1);
        assert_eq!(dice(&a.data, &b.data, &[1]).unwrap().mean, 0.0);
        // 2x2x2 cubes shifted by one voxel along x share 4 voxels.
        let c = cube([6, 6, 6], [1, 1, 2], 2, 1);
        assert_eq!(dice(&a.data, &c.data, &[1]).unwrap().mean, 0.5);
    }

    #[test]
    fn dice_excludes_absent_labels() {
        let a = cube([5, 5, 5], [0, 0, 0], 2, 1);
        let r = dice(&a.data, &a.data, &[1, 7]).unwrap();
        assert_eq!(r.per_label[&7], None);
        assert_eq!(r.mean, 1.0);
        assert!(dice(&[0], &[0], &[1]).unwrap().mean.is_nan());
        assert!(dice(&[0, 1], &[0], &[1]).is_err());
    }

    #[test]
    fn assd_identical_is_zero_and_missing_label_errors() {
        let a = cube([6, 6, 6], [1, 1, 1], 3, 2);
        assert_eq!(assd(&a, &a, 2, [1.0; 3]).unwrap(), 0.0);
        let err = assd(&a, &a, 5, [1.0; 3]).unwrap_err();
        assert!(err.to_string().contains("empty surface"), "{err}");
    }

    #[test]
    fn assd_offset_cubes() {
        let a = cube([8, 8, 8], [2, 2, 2], 3, 1);
        let b = cube([8, 8, 8], [2, 2, 3], 3, 1);
        // Brute force over all labeled voxel pairs restricted to surfaces.
        let sa = surface_voxels(&a, 1);
        let sb = surface_voxels(&b, 1);
        assert_eq!(sa.len(), 26);
        let mut total = 0.0;
        for (from, to) in [(&sa, &sb), (&sb, &sa)] {
            for p in from.iter() {
                let mut best = f64::INFINITY;
                for q in to.iter() {
                    let d2: f64 = (0..3).map(|k| (p[k] as f64 - q[k] as f64).powi(2)).sum();
                    best = best.min(d2.sqrt());
                }
                total += best;
            }
        }
        let oracle = total / 52.0;
        let got = assd(&a, &b, 1, [1.0; 3]).unwrap();
        assert_eq!(got, oracle);
        // Per direction: the trailing face (9 voxels) plus the centre of the
        // overlapping face sit one voxel away; everything else is shared.
        assert!((got - 20.0 / 52.0).abs() < 1e-15);
        let doubled = assd(&a, &b, 1, [2.0; 3]).unwrap();
        assert_eq!(doubled, 2.0 * got);
        assert_eq!(assd(&b, &a, 1, [1.0; 3]).unwrap(), got);
    }

    #[test]
    fn edge_of_volume_counts_as_background() {
        let v = LabelVolume::filled([3, 3, 3], 1);
        assert_eq!(surface_voxels(&v, 1).len(), 26);
    }
}
