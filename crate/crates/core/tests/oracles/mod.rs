//! Independent reference implementations used by integration tests.
//!
//! Nothing here calls the library's own geometry, interpolation or
//! statistics code; only plain data accessors are used.

#![allow(dead_code)]

use sparsect_core::image::Image2D;
use sparsect_core::projector::{Beam, ProjectionGeometry};
use sparsect_core::volume::Volume3D;

/// Trilinear interpolation with zero outside the grid, at index `(i, j, k)`.
pub fn trilinear_zero(v: &Volume3D, idx: [f64; 3]) -> f64 {
    let [d, h, w] = v.dims();
    let base = idx.map(|x| x.floor());
    let frac = [idx[0] - base[0], idx[1] - base[1], idx[2] - base[2]];
    let mut acc = 0.0;
    for corner in 0..8 {
        let off = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
        let mut weight = 1.0;
        let mut pos = [0i64; 3];
        for a in 0..3 {
            pos[a] = base[a] as i64 + off[a] as i64;
            weight *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if weight == 0.0 {
            continue;
        }
        let inside = pos[0] >= 0 && pos[1] >= 0 && pos[2] >= 0
            && pos[0] < d as i64 && pos[1] < h as i64 && pos[2] < w as i64;
        if inside {
            acc += weight * v.get(pos[0] as usize, pos[1] as usize, pos[2] as usize);
        }
    }
    acc
}

/// World `(x, y, z)` to continuous `(i, j, k)`.
pub fn world_to_index(v: &Volume3D, p: [f64; 3]) -> [f64; 3] {
    let o = v.origin();
    let s = v.spacing();
    [(p[2] - o[0]) / s[0], (p[1] - o[1]) / s[1], (p[0] - o[2]) / s[2]]
}

/// Detector frame `q` back to world: `p = (q − t)·R(θ)ᵀ` for row vectors.
fn detector_to_world(g: &ProjectionGeometry, q: [f64; 3]) -> [f64; 3] {
    let th = g.angle_deg.to_radians();
    let (c, s) = (th.cos(), th.sin());
    let u = [q[0] - g.translation[0], q[1] - g.translation[1], q[2] - g.translation[2]];
    [c * u[0] - s * u[1], s * u[0] + c * u[1], u[2]]
}

/// Ray segment `(a, b)` in world space for detector pixel `(r, c)`; long
/// enough to cover any grid within `reach` mm of the world origin.
pub fn pixel_segment(g: &ProjectionGeometry, r: usize, c: usize, reach: f64) -> ([f64; 3], [f64; 3]) {
    let (rows, cols) = g.detector_px;
    let ax = (r as f64 - (rows as f64 - 1.0) / 2.0) * g.detector_spacing;
    let lat = (c as f64 - (cols as f64 - 1.0) / 2.0) * g.detector_spacing;
    match g.beam {
        Beam::Parallel => (
            detector_to_world(g, [-reach, lat, ax]),
            detector_to_world(g, [reach, lat, ax]),
        ),
        Beam::Cone => (
            detector_to_world(g, [-g.dso, 0.0, 0.0]),
            detector_to_world(g, [g.dsd - g.dso, lat, ax]),
        ),
    }
}

/// Midpoint-rule line integral of the trilinear field along a segment,
/// with steps no longer than `step` mm.
pub fn line_integral(v: &Volume3D, a: [f64; 3], b: [f64; 3], step: f64) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    // restrict to the parameter range where the ray is near the grid
    let o = v.origin();
    let sp = v.spacing();
    let dims = v.dims();
    let lo = [o[2] - sp[2], o[1] - sp[1], o[0] - sp[0]];
    let hi = [
        o[2] + dims[2] as f64 * sp[2],
        o[1] + dims[1] as f64 * sp[1],
        o[0] + dims[0] as f64 * sp[0],
    ];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for ax in 0..3 {
        if d[ax] == 0.0 {
            if a[ax] <= lo[ax] || a[ax] >= hi[ax] {
                return 0.0;
            }
            continue;
        }
        let (p, q) = ((lo[ax] - a[ax]) / d[ax], (hi[ax] - a[ax]) / d[ax]);
        t0 = t0.max(p.min(q));
        t1 = t1.min(p.max(q));
    }
    if t1 <= t0 {
        return 0.0;
    }
    let seg = (t1 - t0) * len;
    let n = (seg / step).ceil().max(1.0) as usize;
    let h = seg / n as f64;
    let mut acc = 0.0;
    for m in 0..n {
        let t = t0 + (m as f64 + 0.5) * h / len;
        let p = [a[0] + t * d[0], a[1] + t * d[1], a[2] + t * d[2]];
        acc += trilinear_zero(v, world_to_index(v, p));
    }
    acc * h
}

/// Fine-step DRR of every pixel.
pub fn drr_fine(v: &Volume3D, g: &ProjectionGeometry, step: f64) -> Vec<f64> {
    let reach = v
        .dims()
        .iter()
        .zip(v.spacing())
        .map(|(n, s)| (*n as f64 + 2.0) * s)
        .map(|e| e * e)
        .sum::<f64>()
        .sqrt()
        + v.origin().iter().map(|o| o.abs()).sum::<f64>();
    let (rows, cols) = g.detector_px;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (a, b) = pixel_segment(g, r, c, reach);
            out.push(line_integral(v, a, b, step));
        }
    }
    out
}

/// Detector coordinates `(row, col)` of a world point by similar triangles.
pub fn project(g: &ProjectionGeometry, p: [f64; 3]) -> (f64, f64) {
    let th = g.angle_deg.to_radians();
    let (c, s) = (th.cos(), th.sin());
    let q = [
        p[0] * c + p[1] * s + g.translation[0],
        -p[0] * s + p[1] * c + g.translation[1],
        p[2] + g.translation[2],
    ];
    let mag = match g.beam {
        Beam::Parallel => 1.0,
        Beam::Cone => g.dsd / (g.dso + q[0]),
    };
    let (rows, cols) = g.detector_px;
    (
        (rows as f64 - 1.0) / 2.0 + q[2] * mag / g.detector_spacing,
        (cols as f64 - 1.0) / 2.0 + q[1] * mag / g.detector_spacing,
    )
}

/// Bilinear sample, zero outside `[0, rows−1] × [0, cols−1]`.
pub fn bilinear_zero(img: &Image2D, r: f64, c: f64) -> f64 {
    let (rows, cols) = img.shape();
    if !(r >= 0.0 && c >= 0.0 && r <= (rows - 1) as f64 && c <= (cols - 1) as f64) {
        return 0.0;
    }
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(rows - 1), (c0 + 1).min(cols - 1));
    let (fr, fc) = (r - r0 as f64, c - c0 as f64);
    (1.0 - fr) * (1.0 - fc) * img.get(r0, c0)
        + (1.0 - fr) * fc * img.get(r0, c1)
        + fr * (1.0 - fc) * img.get(r1, c0)
        + fr * fc * img.get(r1, c1)
}

/// SSIM by explicit iteration over every window and every voxel in it.
pub fn ssim_brute(a: &Volume3D, b: &Volume3D, win: usize, k1: f64, k2: f64, range: f64) -> f64 {
    let [d, h, w] = a.dims();
    let c1 = (k1 * range) * (k1 * range);
    let c2 = (k2 * range) * (k2 * range);
    let n = (win * win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=d - win {
        for j in 0..=h - win {
            for k in 0..=w - win {
                let mut xs = Vec::with_capacity(win * win * win);
                let mut ys = Vec::with_capacity(win * win * win);
                for di in 0..win {
                    for dj in 0..win {
                        for dk in 0..win {
                            xs.push(a.get(i + di, j + dj, k + dk));
                            ys.push(b.get(i + di, j + dj, k + dk));
                        }
                    }
                }
                let mx = xs.iter().sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let vx = xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>() / n;
                let vy = ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / n;
                let cov = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Index of the nearest row by exhaustive scan; first index wins ties.
pub fn nearest_brute(entries: &[f64], dim: usize, v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (idx, e) in entries.chunks(dim).enumerate() {
        let d: f64 = e.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best_d {
            best_d = d;
            best = idx;
        }
    }
    best
}

/// Voxel-count DVH statistic: percent of mask voxels with dose ≥ threshold.
pub fn dvh_count(dose: &[f64], mask: &[f64], threshold: f64) -> f64 {
    let inside: Vec<f64> = dose.iter().zip(mask).filter(|(_, m)| **m == 1.0).map(|(d, _)| *d).collect();
    100.0 * inside.iter().filter(|d| **d >= threshold).count() as f64 / inside.len() as f64
}
