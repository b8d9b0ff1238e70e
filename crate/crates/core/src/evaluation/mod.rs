//! Accuracy metrics, evaluation grids, spectra, reference solutions and
//! field rendering.

mod reference;
mod render;
mod spectrum;

pub use reference::{reference_solve, ReferenceSolution, SolverSettings};
pub use render::{field_csv, render_pgm};
pub use spectrum::{parseval_energy, spectrum, top_k, SpectrumReport, SpectrumSlice, SPECTRUM_SLICES};

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::networks::{predict, Field, ModelError};
use crate::pde::PdeProblem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("length mismatch: truth {truth}, prediction {pred}")]
    Length { truth: usize, pred: usize },
    #[error("ground truth has zero norm")]
    ZeroNorm,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid evaluation grid: {0}")]
    Grid(String),
    #[error("invalid sampling: {0}")]
    Sampling(String),
    #[error("reference solver unstable at t = {t}; try a smaller dt than {dt}")]
    Unstable { t: f64, dt: f64 },
    #[error("{0} has no reference solver")]
    NoReference(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<EvalError> for ModelError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m,
            other => ModelError::Invalid(other.to_string()),
        }
    }
}

/// `||u - u_hat||_2 / ||u||_2`.
pub fn rel_l2(truth: &[f64], pred: &[f64]) -> Result<f64, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::Length {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let num: f64 = truth.iter().zip(pred).map(|(u, v)| (u - v) * (u - v)).sum();
    let den: f64 = truth.iter().map(|u| u * u).sum();
    if den == 0.0 {
        return Err(EvalError::ZeroNorm);
    }
    if !num.is_finite() {
        return Err(EvalError::NonFinite("prediction"));
    }
    Ok((num / den).sqrt())
}

/// Tensor-product grid of linspaces. Axes listed in `periodic` drop their
/// right endpoint, so a periodic direction is sampled once per period.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalGrid {
    pub sizes: Vec<usize>,
    pub axes: Vec<Vec<f64>>,
}

impl EvalGrid {
    pub fn new(bounds: &[(f64, f64)], sizes: &[usize], periodic: &[usize]) -> Result<Self, EvalError> {
        if bounds.len() != sizes.len() {
            return Err(EvalError::Grid(format!("{} sizes for {} axes", sizes.len(), bounds.len())));
        }
        if let Some(s) = sizes.iter().find(|&&s| s < 2) {
            return Err(EvalError::Grid(format!("size {s} < 2")));
        }
        let axes = bounds
            .iter()
            .zip(sizes)
            .enumerate()
            .map(|(i, (&(lo, hi), &n))| {
                let div = if periodic.contains(&i) { n } else { n - 1 } as f64;
                (0..n).map(|j| lo + (hi - lo) * j as f64 / div).collect()
            })
            .collect();
        Ok(EvalGrid {
            sizes: sizes.to_vec(),
            axes,
        })
    }

    /// The problem's default grid: periodic space axes exclude the endpoint.
    pub fn for_problem(problem: &PdeProblem, sizes: Option<&[usize]>) -> Result<Self, EvalError> {
        let default = problem.defaults().eval_sizes;
        let periodic: Vec<usize> = problem
            .boundary_specs()
            .iter()
            .filter_map(|b| match b {
                crate::pde::BoundarySpec::Periodic { axis, .. } => Some(*axis),
                _ => None,
            })
            .collect();
        EvalGrid::new(&problem.bounds, sizes.unwrap_or(&default), &periodic)
    }

    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened coordinates, axis 0 slowest.
    pub fn points(&self) -> Tensor {
        let d = self.sizes.len();
        let mut out = Tensor::zeros(self.len(), d);
        for r in 0..self.len() {
            let mut rem = r;
            for c in (0..d).rev() {
                out.set(r, c, self.axes[c][rem % self.sizes[c]]);
                rem /= self.sizes[c];
            }
        }
        out
    }
}

/// An evaluation grid with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub grid: EvalGrid,
    pub points: Tensor,
    pub truth: Vec<f64>,
}

const PREDICT_CHUNK: usize = 4096;

impl EvalSet {
    pub fn new(grid: EvalGrid, truth: Vec<f64>) -> Result<Self, EvalError> {
        if truth.len() != grid.len() {
            return Err(EvalError::Length {
                truth: truth.len(),
                pred: grid.len(),
            });
        }
        if truth.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite("ground truth"));
        }
        let points = grid.points();
        Ok(EvalSet { grid, points, truth })
    }

    /// Ground truth from the closed form, or from the spectral reference
    /// solver with its default settings.
    pub fn for_problem(problem: &PdeProblem, sizes: Option<&[usize]>) -> Result<Self, EvalError> {
        let grid = EvalGrid::for_problem(problem, sizes)?;
        let truth = if problem.has_exact() {
            let pts = grid.points();
            (0..pts.rows())
                .map(|r| problem.exact(pts.row_slice(r)).expect("closed form"))
                .collect()
        } else {
            reference_solve(problem, &SolverSettings::default(), &grid.axes[1])?.sample(&grid)?
        };
        EvalSet::new(grid, truth)
    }

    pub fn predict(&self, field: &dyn Field) -> Result<Vec<f64>, EvalError> {
        let p = predict(field, &self.points, PREDICT_CHUNK)?;
        Ok(p.into_data())
    }

    pub fn rel_l2(&self, field: &dyn Field) -> Result<f64, ModelError> {
        let p = self.predict(field)?;
        Ok(rel_l2(&self.truth, &p)?)
    }
}
