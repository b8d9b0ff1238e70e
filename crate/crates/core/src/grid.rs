//! Learnable feature grid: domain normalization, cell lookup, corner offsets
//! and spatial weights.
//!
//! A grid with `N` vertices along an axis has `N - 1` cells. A unit coordinate
//! `u` lands in cell `min(floor(u (N-1)), N-2)`, so `u = 1` belongs to the
//! last cell and every point of the closed domain has `2^d` true corners.
//! Corner `c` of a `d`-dimensional cell uses bit `d-1-i` of `c` for axis `i`,
//! which orders the corners of a 2-D cell as `00, 01, 10, 11`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Jet, ParamId, Tape, Tensor, Unary};
use crate::params::ParamStore;

/// Tolerance for coordinates that fall just outside the domain.
pub const BOUNDS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("coordinate {value} on axis {axis} outside [{lo}, {hi}]")]
    OutOfDomain { axis: usize, value: f64, lo: f64, hi: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] AdError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Multilinear,
    Cosine,
}

impl std::str::FromStr for Weighting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multilinear" => Ok(Weighting::Multilinear),
            "cosine" => Ok(Weighting::Cosine),
            other => Err(format!("unknown weighting '{other}' (expected multilinear or cosine)")),
        }
    }
}

impl std::fmt::Display for Weighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Weighting::Multilinear => "multilinear",
            Weighting::Cosine => "cosine",
        })
    }
}

/// Maps a physical coordinate into `[0, 1]^d`. Coordinates within
/// [`BOUNDS_TOLERANCE`] outside the box are clamped.
pub fn normalize(x: &[f64], bounds: &[(f64, f64)]) -> Result<Vec<f64>, GridError> {
    if x.len() != bounds.len() {
        return Err(GridError::Dimension {
            expected: bounds.len(),
            got: x.len(),
        });
    }
    x.iter()
        .zip(bounds)
        .enumerate()
        .map(|(axis, (&v, &(lo, hi)))| {
            if !(lo < hi) {
                return Err(GridError::Invalid(format!("empty interval [{lo}, {hi}] on axis {axis}")));
            }
            if !(v >= lo - BOUNDS_TOLERANCE && v <= hi + BOUNDS_TOLERANCE) {
                return Err(GridError::OutOfDomain { axis, value: v, lo, hi });
            }
            Ok(((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        })
        .collect()
}

/// Enclosing cell of a unit coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct CellQuery {
    pub anchor: Vec<usize>,
    pub local: Vec<f64>,
}

fn anchor_of(scaled: f64, vertices: usize) -> usize {
    let last = (vertices - 2) as f64;
    scaled.floor().clamp(0.0, last) as usize
}

pub fn locate(u: &[f64], resolution: &[usize]) -> CellQuery {
    let mut anchor = Vec::with_capacity(u.len());
    let mut local = Vec::with_capacity(u.len());
    for (&ui, &n) in u.iter().zip(resolution) {
        let s = ui * (n - 1) as f64;
        let a = anchor_of(s, n);
        anchor.push(a);
        local.push(s - a as f64);
    }
    CellQuery { anchor, local }
}

#[inline]
pub fn corner_bit(corner: usize, axis: usize, dim: usize) -> usize {
    (corner >> (dim - 1 - axis)) & 1
}

/// Relative offsets `local - b` for every corner pattern `b`, in cell units.
pub fn corner_offsets(q: &CellQuery) -> Vec<Vec<f64>> {
    let d = q.local.len();
    (0..1usize << d)
        .map(|c| {
            q.local
                .iter()
                .enumerate()
                .map(|(i, &l)| l - corner_bit(c, i, d) as f64)
                .collect()
        })
        .collect()
}

/// Vertex index tuples of the cell corners, in corner order.
pub fn corners(q: &CellQuery) -> Vec<Vec<usize>> {
    let d = q.anchor.len();
    (0..1usize << d)
        .map(|c| q.anchor.iter().enumerate().map(|(i, &a)| a + corner_bit(c, i, d)).collect())
        .collect()
}

/// Row-major flat index of a vertex.
pub fn vertex_index(vertex: &[usize], resolution: &[usize]) -> usize {
    vertex.iter().zip(resolution).fold(0, |acc, (&v, &n)| acc * n + v)
}

fn corner_weights(local: &[f64], factor: impl Fn(f64, usize) -> f64) -> Vec<f64> {
    let d = local.len();
    (0..1usize << d)
        .map(|c| {
            local
                .iter()
                .enumerate()
                .map(|(i, &t)| factor(t, corner_bit(c, i, d)))
                .product()
        })
        .collect()
}

/// Volume weights: corner `b` gets the product of `t` (bit set) or `1 - t`.
pub fn weights_multilinear(local: &[f64]) -> Vec<f64> {
    corner_weights(local, |t, b| if b == 1 { t } else { 1.0 - t })
}

/// Cosine-reweighted volume weights. Each axis factor passes through
/// `s -> (1 - cos(pi s)) / 2` before the product, which keeps the partition
/// of unity and makes first derivatives vanish on cell faces.
pub fn weights_cosine(local: &[f64]) -> Vec<f64> {
    use std::f64::consts::PI;
    corner_weights(local, |t, b| {
        let c = (PI * t).cos();
        if b == 1 {
            0.5 * (1.0 - c)
        } else {
            0.5 * (1.0 + c)
        }
    })
}

pub fn weights(scheme: Weighting, local: &[f64]) -> Vec<f64> {
    match scheme {
        Weighting::Multilinear => weights_multilinear(local),
        Weighting::Cosine => weights_cosine(local),
    }
}

/// `num_grids` parallel grids of `channels`-wide latent vectors. Values live
/// in a [`ParamStore`] as one tensor per grid, `prod(resolution) x channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    pub num_grids: usize,
    pub resolution: Vec<usize>,
    pub channels: usize,
    pub params: Vec<ParamId>,
}

impl FeatureGrid {
    /// Registers `grid.{m}.values` tensors with entries uniform in
    /// `[-init_scale, init_scale]`.
    pub fn init(
        store: &mut ParamStore,
        num_grids: usize,
        resolution: &[usize],
        channels: usize,
        init_scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, GridError> {
        if num_grids == 0 || channels == 0 || resolution.is_empty() {
            return Err(GridError::Invalid("grids, channels and dimension must be >= 1".into()));
        }
        if let Some(n) = resolution.iter().find(|&&n| n < 2) {
            return Err(GridError::Invalid(format!("resolution {n} < 2")));
        }
        let vertices: usize = resolution.iter().product();
        let params = (0..num_grids)
            .map(|m| {
                let t = Tensor::from_fn(vertices, channels, |_, _| {
                    if init_scale > 0.0 {
                        rng.random_range(-init_scale..=init_scale)
                    } else {
                        0.0
                    }
                });
                let mut shape = resolution.to_vec();
                shape.push(channels);
                store.add(format!("grid.{m}.values"), shape, t)
            })
            .collect();
        Ok(FeatureGrid {
            num_grids,
            resolution: resolution.to_vec(),
            channels,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn vertices(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn corners_per_cell(&self) -> usize {
        1 << self.dim()
    }

    /// Latent rows of the cell corners of grid `m`, in corner order.
    pub fn gather(&self, store: &ParamStore, q: &CellQuery, m: usize) -> Vec<Vec<f64>> {
        let values = store.value(self.params[m]);
        corners(q)
            .iter()
            .map(|v| values.row_slice(vertex_index(v, &self.resolution)).to_vec())
            .collect()
    }
}

/// Graph-side lookup for a batch of `B` points: corner offsets and weights
/// stacked corner-major (`row = c * B + i`), plus the vertex row of every
/// stacked entry.
pub struct Lookup {
    pub offsets: Jet,
    pub weights: Jet,
    pub vertex_rows: Vec<usize>,
    pub batch: usize,
}

/// Locates a batch of coordinate jets `x` (`B x d`) on a grid of the given
/// resolution. The anchor is computed on values and enters as a constant, so
/// offsets and weights carry the input derivatives of the local coordinate.
pub fn lookup(
    t: &mut Tape,
    x: &Jet,
    bounds: &[(f64, f64)],
    resolution: &[usize],
    scheme: Weighting,
) -> Result<Lookup, GridError> {
    let d = resolution.len();
    let (batch, cols) = t.shape(x.v);
    if cols != d || bounds.len() != d {
        return Err(GridError::Dimension { expected: d, got: cols });
    }
    {
        let xv = t.value(x.v);
        for r in 0..batch {
            for (axis, &(lo, hi)) in bounds.iter().enumerate() {
                let v = xv.get(r, axis);
                if !(v >= lo - BOUNDS_TOLERANCE && v <= hi + BOUNDS_TOLERANCE) {
                    return Err(GridError::OutOfDomain { axis, value: v, lo, hi });
                }
            }
        }
    }
    let lo = t.constant(Tensor::row(&bounds.iter().map(|b| -b.0).collect::<Vec<_>>()))?;
    let width = t.constant(Tensor::row(&bounds.iter().map(|b| 1.0 / (b.1 - b.0)).collect::<Vec<_>>()))?;
    let cells = t.constant(Tensor::row(&resolution.iter().map(|&n| (n - 1) as f64).collect::<Vec<_>>()))?;
    let shifted = x.add_const(t, lo)?;
    let unit = shifted.mul_const(t, width)?;
    let scaled = unit.mul_const(t, cells)?;

    let anchors: Vec<usize> = {
        let sv = t.value(scaled.v);
        (0..batch)
            .flat_map(|r| (0..d).map(move |i| (r, i)))
            .map(|(r, i)| anchor_of(sv.get(r, i), resolution[i]))
            .collect()
    };
    let neg_anchor = t.constant(Tensor::from_fn(batch, d, |r, i| -(anchors[r * d + i] as f64)))?;
    let local = scaled.add_const(t, neg_anchor)?;

    // Per-axis factors for bit 0 and bit 1.
    let mut factors = Vec::with_capacity(d);
    for i in 0..d {
        let ti = local.slice_cols(t, i, 1)?;
        let (f0, f1) = match scheme {
            Weighting::Multilinear => {
                let f0 = ti.scale(t, -1.0)?.offset(t, 1.0)?;
                (f0, ti)
            }
            Weighting::Cosine => {
                let c = ti.scale(t, std::f64::consts::PI)?.unary(t, Unary::Cos)?;
                let half = c.scale(t, 0.5)?;
                let f0 = half.offset(t, 0.5)?;
                let f1 = half.scale(t, -1.0)?.offset(t, 0.5)?;
                (f0, f1)
            }
        };
        factors.push((f0, f1));
    }

    let k = 1usize << d;
    let mut offsets = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    let mut vertex_rows = Vec::with_capacity(k * batch);
    for c in 0..k {
        let bits: Vec<f64> = (0..d).map(|i| -(corner_bit(c, i, d) as f64)).collect();
        let b = t.constant(Tensor::row(&bits))?;
        offsets.push(local.add_const(t, b)?);
        let mut w: Option<Jet> = None;
        for (i, (f0, f1)) in factors.iter().enumerate() {
            let f = if corner_bit(c, i, d) == 1 { f1 } else { f0 };
            w = Some(match w {
                None => f.clone(),
                Some(acc) => acc.mul(t, f)?,
            });
        }
        weights.push(w.expect("dimension >= 1"));
        for r in 0..batch {
            let vertex: Vec<usize> = (0..d).map(|i| anchors[r * d + i] + corner_bit(c, i, d)).collect();
            vertex_rows.push(vertex_index(&vertex, resolution));
        }
    }
    let offsets = Jet::concat_rows(t, &offsets.iter().collect::<Vec<_>>())?;
    let weights = Jet::concat_rows(t, &weights.iter().collect::<Vec<_>>())?;
    Ok(Lookup {
        offsets,
        weights,
        vertex_rows,
        batch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn normalize_endpoints_and_midpoints() {
        let b = [(-1.0, 1.0), (-1.0, 1.0)];
        assert_eq!(normalize(&[-1.0, 1.0], &b).unwrap(), vec![0.0, 1.0]);
        assert_eq!(normalize(&[0.0, 0.0], &b).unwrap(), vec![0.5, 0.5]);
        let conv = [(0.0, 2.0 * PI), (0.0, 1.0)];
        assert_eq!(normalize(&[PI, 0.5], &conv).unwrap(), vec![0.5, 0.5]);
        assert_eq!(normalize(&[1.0 + 1e-13, 0.0], &b).unwrap(), vec![1.0, 0.5]);
        assert!(matches!(normalize(&[1.1, 0.0], &b), Err(GridError::OutOfDomain { axis: 0, .. })));
    }

    #[test]
    fn locate_boundary_conventions() {
        assert_eq!(locate(&[0.0], &[17]), CellQuery { anchor: vec![0], local: vec![0.0] });
        assert_eq!(locate(&[1.0], &[17]), CellQuery { anchor: vec![15], local: vec![1.0] });
        assert_eq!(locate(&[0.5], &[17]), CellQuery { anchor: vec![8], local: vec![0.0] });
    }

    #[test]
    fn offsets_follow_corner_order() {
        let q = CellQuery { anchor: vec![0, 0], local: vec![0.0, 0.0] };
        assert_eq!(
            corner_offsets(&q),
            vec![vec![0.0, 0.0], vec![0.0, -1.0], vec![-1.0, 0.0], vec![-1.0, -1.0]]
        );
        let q = CellQuery { anchor: vec![3, 1], local: vec![0.5, 0.5] };
        assert_eq!(
            corner_offsets(&q),
            vec![vec![0.5, 0.5], vec![0.5, -0.5], vec![-0.5, 0.5], vec![-0.5, -0.5]]
        );
        assert_eq!(corners(&q), vec![vec![3, 1], vec![3, 2], vec![4, 1], vec![4, 2]]);
    }

    #[test]
    fn multilinear_examples() {
        assert_eq!(weights_multilinear(&[0.5, 0.5]), vec![0.25; 4]);
        assert_eq!(weights_multilinear(&[0.0, 0.0]), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(weights_multilinear(&[0.25]), vec![0.75, 0.25]);
    }

    #[test]
    fn cosine_examples() {
        let w = weights_cosine(&[0.5]);
        assert!((w[1] - 0.5).abs() < 1e-16);
        let w = weights_cosine(&[0.0, 0.0, 0.0]);
        assert_eq!(w[0], 1.0);
        assert!(w[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cosine_factor_is_flat_on_faces() {
        // d/dt (1 - cos(pi t)) / 2 = pi/2 sin(pi t)
        let mut t = Tape::new();
        for &u in &[0.0, 1.0] {
            let x = Tensor::row(&[u]);
            let j = crate::autodiff::jet_eval(&mut t, &x, 0, |t, x| {
                let lk = lookup(t, x, &[(0.0, 1.0)], &[2], Weighting::Cosine).map_err(|e| match e {
                    GridError::Graph(g) => g,
                    other => panic!("{other}"),
                })?;
                Ok(lk.weights)
            })
            .unwrap();
            for &d in t.value(j.d1).data() {
                assert!(d.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn graph_lookup_matches_value_path() {
        let mut t = Tape::new();
        let bounds = [(-1.0, 1.0), (0.0, 2.0)];
        let res = [5, 9];
        let pts = Tensor::from_fn(7, 2, |r, c| if c == 0 { -1.0 + 0.3 * r as f64 } else { 0.29 * r as f64 });
        for scheme in [Weighting::Multilinear, Weighting::Cosine] {
            let x = Jet::seed(&mut t, &pts, &[]).unwrap();
            let lk = lookup(&mut t, &x, &bounds, &res, scheme).unwrap();
            for r in 0..7 {
                let u = normalize(pts.row_slice(r), &bounds).unwrap();
                let q = locate(&u, &res);
                let w = weights(scheme, &q.local);
                let offs = corner_offsets(&q);
                for c in 0..4 {
                    let row = c * 7 + r;
                    assert!((t.value(lk.weights.v).get(row, 0) - w[c]).abs() < 1e-14);
                    for i in 0..2 {
                        assert!((t.value(lk.offsets.v).get(row, i) - offs[c][i]).abs() < 1e-14);
                    }
                    assert_eq!(lk.vertex_rows[row], vertex_index(&corners(&q)[c], &res));
                }
            }
        }
    }
}
