//! Exact Euclidean distance transform on anisotropic voxel grids.
//!
//! Separable lower-envelope-of-parabolas algorithm (Felzenszwalb and
//! Huttenlocher), one pass per axis, with each axis measured in millimetres.
//! Distances are between voxel centres.

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::Mask;

/// Squared distance (mm²) from every voxel centre to the nearest voxel centre
/// of `sources`. When `outside_is_source` is set, the ring of voxels just
/// beyond the grid counts as source too, so shapes touching the grid edge
/// see the edge as their exterior. Voxels with no reachable source get
/// `f64::INFINITY`.
pub fn squared_distance(sources: &Mask, outside_is_source: bool) -> Vec<f64> {
    let dims = sources.dims();
    let spacing = sources.spacing();
    let pad = usize::from(outside_is_source);
    let pdims = [dims[0] + 2 * pad, dims[1] + 2 * pad, dims[2] + 2 * pad];
    let n = pdims[0] * pdims[1] * pdims[2];
    let mut field = vec![
        if outside_is_source {
            0.0
        } else {
            f64::INFINITY
        };
        n
    ];
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let p = ((i + pad) * pdims[1] + (j + pad)) * pdims[2] + (k + pad);
                field[p] = if sources.get(i, j, k) {
                    0.0
                } else {
                    f64::INFINITY
                };
            }
        }
    }

    let strides = [pdims[1] * pdims[2], pdims[2], 1];
    let longest = *pdims.iter().max().unwrap_or(&0);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut scratch = Envelope::with_capacity(longest);
    for axis in 0..3 {
        let len = pdims[axis];
        let stride = strides[axis];
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for u in 0..pdims[a] {
            for v in 0..pdims[b] {
                let base = u * strides[a] + v * strides[b];
                for t in 0..len {
                    line[t] = field[base + t * stride];
                }
                scratch.transform(&line[..len], spacing[axis], &mut out[..len]);
                for t in 0..len {
                    field[base + t * stride] = out[t];
                }
            }
        }
    }

    if pad == 0 {
        return field;
    }
    let mut result = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                result.push(field[((i + 1) * pdims[1] + (j + 1)) * pdims[2] + (k + 1)]);
            }
        }
    }
    result
}

/// Distance (mm) from every voxel centre to the nearest voxel centre outside
/// `mask` (the grid exterior counts as outside).
pub fn distance_to_complement(mask: &Mask) -> Vec<f64> {
    let complement = Mask::from_bits(
        mask.dims(),
        mask.spacing(),
        mask.bits().iter().map(|&b| !b).collect(),
    )
    .expect("same geometry");
    squared_distance(&complement, true)
        .into_iter()
        .map(libm::sqrt)
        .collect()
}

struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            vertices: vec![0; n],
            bounds: vec![0.0; n + 1],
        }
    }

    /// `out[q] = min_p (s·(q − p))² + f[p]` over finite `f[p]`.
    fn transform(&mut self, f: &[f64], s: f64, out: &mut [f64]) {
        let n = f.len();
        let pos = |p: usize| p as f64 * s;
        let mut k: isize = -1;
        for q in 0..n {
            if !f[q].is_finite() {
                continue;
            }
            loop {
                if k < 0 {
                    k = 0;
                    self.vertices[0] = q;
                    self.bounds[0] = f64::NEG_INFINITY;
                    self.bounds[1] = f64::INFINITY;
                    break;
                }
                let v = self.vertices[k as usize];
                let (xq, xv) = (pos(q), pos(v));
                let cross = ((f[q] + xq * xq) - (f[v] + xv * xv)) / (2.0 * (xq - xv));
                if cross <= self.bounds[k as usize] {
                    k -= 1;
                } else {
                    k += 1;
                    self.vertices[k as usize] = q;
                    self.bounds[k as usize] = cross;
                    self.bounds[k as usize + 1] = f64::INFINITY;
                    break;
                }
            }
        }
        if k < 0 {
            out.iter_mut().for_each(|o| *o = f64::INFINITY);
            return;
        }
        let mut j = 0usize;
        for (q, o) in out.iter_mut().enumerate() {
            let xq = pos(q);
            while self.bounds[j + 1] < xq {
                j += 1;
            }
            let v = self.vertices[j];
            let d = xq - pos(v);
            *o = d * d + f[v];
        }
    }
}
