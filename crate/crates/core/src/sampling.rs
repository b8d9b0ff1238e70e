//! Collocation, initial and boundary point sets.
//!
//! Points are drawn i.i.d. uniform from ChaCha8 (`rand_chacha::ChaCha8Rng`)
//! seeded with the run seed. Each region reads its own ChaCha stream
//! (interior 0, initial 1, boundary 2), so changing one count never shifts
//! the points of another region. A uniform draw is `lo + (hi - lo) * u` with
//! `u` the 53-bit `[0, 1)` float of `rand`'s `StandardUniform`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::pde::{BoundarySpec, PdeProblem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("{0} has no initial condition but {1} initial points were requested")]
    NoInitialCondition(String, usize),
    #[error("count for {0} must be at least 1")]
    EmptyRegion(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointCounts {
    pub interior: usize,
    pub initial: usize,
    pub boundary: usize,
}

impl PointCounts {
    /// 10,000 residual points and 1,000 each for initial and boundary terms,
    /// five times as many for three-dimensional domains.
    pub fn default_for(problem: &PdeProblem) -> Self {
        let f = if problem.dim() >= 3 { 5 } else { 1 };
        PointCounts {
            interior: 10_000 * f,
            initial: if problem.time_axis().is_some() { 1_000 * f } else { 0 },
            boundary: 1_000 * f,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryPoints {
    Dirichlet {
        points: Tensor,
        targets: Vec<f64>,
    },
    Periodic {
        axis: usize,
        derivative: bool,
        left: Tensor,
        right: Tensor,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointSets {
    pub interior: Tensor,
    /// Points on the `t = 0` slice and their targets `h(x)`.
    pub initial: Option<(Tensor, Vec<f64>)>,
    pub boundary: Vec<BoundaryPoints>,
}

const INTERIOR_STREAM: u64 = 0;
const INITIAL_STREAM: u64 = 1;
const BOUNDARY_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn sample(problem: &PdeProblem, counts: PointCounts, seed: u64) -> Result<PointSets, SamplingError> {
    let d = problem.dim();
    let bounds = &problem.bounds;
    if counts.interior == 0 {
        return Err(SamplingError::EmptyRegion("interior"));
    }

    let mut rng = stream(seed, INTERIOR_STREAM);
    let interior = Tensor::from_fn(counts.interior, d, |_, c| uniform(&mut rng, bounds[c].0, bounds[c].1));

    let initial = match problem.time_axis() {
        None if counts.initial > 0 => {
            return Err(SamplingError::NoInitialCondition(problem.name.clone(), counts.initial))
        }
        None => None,
        Some(_) if counts.initial == 0 => return Err(SamplingError::EmptyRegion("initial")),
        Some(ta) => {
            let mut rng = stream(seed, INITIAL_STREAM);
            let pts = Tensor::from_fn(counts.initial, d, |_, c| {
                if c == ta {
                    bounds[c].0
                } else {
                    uniform(&mut rng, bounds[c].0, bounds[c].1)
                }
            });
            let targets = (0..pts.rows())
                .map(|r| problem.initial_value(pts.get(r, 0)).expect("time-dependent problem"))
                .collect();
            Some((pts, targets))
        }
    };

    let specs = problem.boundary_specs();
    if !specs.is_empty() && counts.boundary == 0 {
        return Err(SamplingError::EmptyRegion("boundary"));
    }
    let mut rng = stream(seed, BOUNDARY_STREAM);
    let boundary = specs
        .iter()
        .map(|spec| match *spec {
            BoundarySpec::Dirichlet { value } => {
                // Faces of a cube have equal area: pick one uniformly, then a
                // uniform point on it.
                let mut pts = Tensor::zeros(counts.boundary, d);
                for r in 0..counts.boundary {
                    let face = rng.random_range(0..2 * d);
                    let (axis, side) = (face / 2, face % 2);
                    for c in 0..d {
                        let v = if c == axis {
                            if side == 0 {
                                bounds[c].0
                            } else {
                                bounds[c].1
                            }
                        } else {
                            uniform(&mut rng, bounds[c].0, bounds[c].1)
                        };
                        pts.set(r, c, v);
                    }
                }
                BoundaryPoints::Dirichlet {
                    points: pts,
                    targets: vec![value; counts.boundary],
                }
            }
            BoundarySpec::Periodic { axis, derivative } => {
                let mut left = Tensor::zeros(counts.boundary, d);
                for r in 0..counts.boundary {
                    for c in 0..d {
                        let v = if c == axis {
                            bounds[c].0
                        } else {
                            uniform(&mut rng, bounds[c].0, bounds[c].1)
                        };
                        left.set(r, c, v);
                    }
                }
                let mut right = left.clone();
                for r in 0..counts.boundary {
                    right.set(r, axis, bounds[axis].1);
                }
                BoundaryPoints::Periodic {
                    axis,
                    derivative,
                    left,
                    right,
                }
            }
        })
        .collect();

    Ok(PointSets {
        interior,
        initial,
        boundary,
    })
}
