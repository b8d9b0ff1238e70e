//! The benchmark PDEs: residual operators over jets, initial and boundary
//! data, closed-form solutions where they exist, and per-problem training
//! defaults.
//!
//! Coordinates are `(x, y[, z])` for Helmholtz and `(x, t)` for the
//! time-dependent problems; time is always the last axis.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, AxisOrder, Jet, Tape, Tensor, Unary, Var};
use crate::grid::Weighting;
use crate::networks::{Field, ModelError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("unknown problem '{0}'")]
    Unknown(String),
    #[error("invalid problem parameters: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvectionIc {
    SingleSine,
    Multiscale,
}

impl ConvectionIc {
    /// `(wavenumber, amplitude)` terms of the sine series.
    pub fn terms(self) -> &'static [(f64, f64)] {
        match self {
            ConvectionIc::SingleSine => &[(1.0, 1.0)],
            ConvectionIc::Multiscale => &[(1.0, 1.0), (4.0, 0.5), (8.0, 0.1), (16.0, 0.1)],
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        self.terms().iter().map(|&(k, a)| a * (k * x).sin()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemKind {
    /// `lap u + k^2 u = q` on `[-1, 1]^d`, `u = 0` on the boundary.
    Helmholtz { a: Vec<f64>, k: f64 },
    /// `u_t + beta u_x = 0` on `[0, 2 pi] x [0, 1]`, periodic in x.
    Convection { beta: f64, ic: ConvectionIc },
    /// `u_t - nu u_xx + lambda u^3 - lambda u = 0` on `[-1, 1] x [0, 1]`.
    AllenCahn { nu: f64, lambda: f64 },
    /// `u_t - nu u_xx - rho u (1 - u) = 0` on `[0, 2 pi] x [0, 1]`.
    ReactionDiffusion { nu: f64, rho: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundarySpec {
    /// `u = value` on every face of the box.
    Dirichlet { value: f64 },
    /// `u(lo) = u(hi)` along `axis`, plus `u_x(lo) = u_x(hi)` when
    /// `derivative` is set.
    Periodic { axis: usize, derivative: bool },
}

/// Appendix-derived defaults for models and training on one problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemDefaults {
    pub lr_max: f64,
    pub baseline_hidden: Vec<usize>,
    pub grids: usize,
    pub resolution: usize,
    pub channels: usize,
    pub synth_hidden: Vec<usize>,
    pub weighting: Weighting,
    pub eval_sizes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdeProblem {
    pub name: String,
    pub kind: ProblemKind,
    pub bounds: Vec<(f64, f64)>,
}

impl PdeProblem {
    pub fn helmholtz(a: &[f64], k: f64) -> Result<Self, ProblemError> {
        let name = match a.len() {
            2 => "helmholtz2d",
            3 => "helmholtz3d",
            n => return Err(ProblemError::Invalid(format!("helmholtz needs 2 or 3 frequencies, got {n}"))),
        };
        Ok(PdeProblem {
            name: name.into(),
            kind: ProblemKind::Helmholtz { a: a.to_vec(), k },
            bounds: vec![(-1.0, 1.0); a.len()],
        })
    }

    pub fn convection(beta: f64, ic: ConvectionIc) -> Self {
        PdeProblem {
            name: match ic {
                ConvectionIc::SingleSine => "convection",
                ConvectionIc::Multiscale => "ms_convection",
            }
            .into(),
            kind: ProblemKind::Convection { beta, ic },
            bounds: vec![(0.0, 2.0 * PI), (0.0, 1.0)],
        }
    }

    pub fn allen_cahn(nu: f64, lambda: f64) -> Self {
        PdeProblem {
            name: "allen_cahn".into(),
            kind: ProblemKind::AllenCahn { nu, lambda },
            bounds: vec![(-1.0, 1.0), (0.0, 1.0)],
        }
    }

    pub fn reaction_diffusion(nu: f64, rho: f64) -> Self {
        PdeProblem {
            name: "reaction_diffusion".into(),
            kind: ProblemKind::ReactionDiffusion { nu, rho },
            bounds: vec![(0.0, 2.0 * PI), (0.0, 1.0)],
        }
    }

    /// Problem with the benchmark parameter values.
    pub fn by_name(name: &str) -> Result<Self, ProblemError> {
        Ok(match name {
            "helmholtz2d" => PdeProblem::helmholtz(&[10.0, 10.0], 1.0)?,
            "helmholtz3d" => PdeProblem::helmholtz(&[10.0, 10.0, 10.0], 1.0)?,
            "convection" => PdeProblem::convection(30.0, ConvectionIc::SingleSine),
            "ms_convection" => PdeProblem::convection(30.0, ConvectionIc::Multiscale),
            "allen_cahn" => PdeProblem::allen_cahn(1e-4, 5.0),
            "reaction_diffusion" => PdeProblem::reaction_diffusion(0.5, 5.0),
            other => return Err(ProblemError::Unknown(other.into())),
        })
    }

    pub const NAMES: [&'static str; 6] = [
        "helmholtz2d",
        "helmholtz3d",
        "convection",
        "ms_convection",
        "allen_cahn",
        "reaction_diffusion",
    ];

    /// Overrides one named constant (see [`PdeProblem::params`]).
    pub fn set_param(&mut self, key: &str, value: f64) -> Result<(), ProblemError> {
        if !value.is_finite() {
            return Err(ProblemError::Invalid(format!("{key} = {value} is not finite")));
        }
        let unknown = || ProblemError::Invalid(format!("{} has no parameter '{key}'", self.name));
        match &mut self.kind {
            ProblemKind::Helmholtz { a, k } => match key {
                "k" => *k = value,
                _ => {
                    let i = key
                        .strip_prefix('a')
                        .and_then(|n| n.parse::<usize>().ok())
                        .filter(|&i| i >= 1 && i <= a.len())
                        .ok_or_else(unknown)?;
                    a[i - 1] = value;
                }
            },
            ProblemKind::Convection { beta, .. } => match key {
                "beta" => *beta = value,
                _ => return Err(unknown()),
            },
            ProblemKind::AllenCahn { nu, lambda } => match key {
                "nu" => *nu = value,
                "lambda" => *lambda = value,
                _ => return Err(unknown()),
            },
            ProblemKind::ReactionDiffusion { nu, rho } => match key {
                "nu" => *nu = value,
                "rho" => *rho = value,
                _ => return Err(unknown()),
            },
        }
        Ok(())
    }

    /// Benchmark problem `name` with the given constants overridden.
    pub fn with_params<'a>(name: &str, params: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self, ProblemError> {
        let mut p = PdeProblem::by_name(name)?;
        for (k, v) in params {
            p.set_param(k, v)?;
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn out_dim(&self) -> usize {
        1
    }

    pub fn time_axis(&self) -> Option<usize> {
        match self.kind {
            ProblemKind::Helmholtz { .. } => None,
            _ => Some(1),
        }
    }

    /// Named constants of the governing equation.
    pub fn params(&self) -> Vec<(String, f64)> {
        match &self.kind {
            ProblemKind::Helmholtz { a, k } => {
                let mut p: Vec<_> = a.iter().enumerate().map(|(i, &v)| (format!("a{}", i + 1), v)).collect();
                p.push(("k".into(), *k));
                p
            }
            ProblemKind::Convection { beta, .. } => vec![("beta".into(), *beta)],
            ProblemKind::AllenCahn { nu, lambda } => vec![("nu".into(), *nu), ("lambda".into(), *lambda)],
            ProblemKind::ReactionDiffusion { nu, rho } => vec![("nu".into(), *nu), ("rho".into(), *rho)],
        }
    }

    /// Axes and orders the residual differentiates along, in the order the
    /// residual expects its tangents.
    pub fn derivative_axes(&self) -> Vec<AxisOrder> {
        match &self.kind {
            ProblemKind::Helmholtz { a, .. } => (0..a.len()).map(|axis| AxisOrder { axis, second: true }).collect(),
            ProblemKind::Convection { .. } => vec![
                AxisOrder { axis: 0, second: false },
                AxisOrder { axis: 1, second: false },
            ],
            ProblemKind::AllenCahn { .. } | ProblemKind::ReactionDiffusion { .. } => vec![
                AxisOrder { axis: 0, second: true },
                AxisOrder { axis: 1, second: false },
            ],
        }
    }

    /// Helmholtz forcing `q`; zero for the other problems.
    pub fn source(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ProblemKind::Helmholtz { a, k } => {
                let prod: f64 = a.iter().zip(x).map(|(&ai, &xi)| (ai * PI * xi).sin()).product();
                let a2: f64 = a.iter().map(|v| v * v).sum();
                k * k * prod - PI * PI * a2 * prod
            }
            _ => 0.0,
        }
    }

    /// PDE residual at a batch of points, given the model output jet `u`
    /// whose tangents follow [`derivative_axes`](Self::derivative_axes).
    pub fn residual(&self, t: &mut Tape, points: &Tensor, u: &Jet) -> Result<Var, AdError> {
        let d1 = |t: &mut Tape, i: usize| u.axis(t, i).map(|j| j.d1);
        let d2 = |t: &mut Tape, i: usize| u.axis(t, i).map(|j| j.d2);
        match &self.kind {
            ProblemKind::Helmholtz { k, .. } => {
                let mut lap = d2(t, 0)?;
                for i in 1..self.dim() {
                    let di = d2(t, i)?;
                    lap = t.add(lap, di)?;
                }
                let ku = t.scale(u.v, k * k)?;
                let lhs = t.add(lap, ku)?;
                let q = Tensor::from_fn(points.rows(), 1, |r, _| self.source(points.row_slice(r)));
                let q = t.constant(q)?;
                t.sub(lhs, q)
            }
            ProblemKind::Convection { beta, .. } => {
                let ux = d1(t, 0)?;
                let ut = d1(t, 1)?;
                let adv = t.scale(ux, *beta)?;
                t.add(ut, adv)
            }
            ProblemKind::AllenCahn { nu, lambda } => {
                let uxx = d2(t, 0)?;
                let ut = d1(t, 1)?;
                let diff = t.scale(uxx, -nu)?;
                let cube = t.powi(u.v, 3)?;
                let react = t.sub(cube, u.v)?;
                let react = t.scale(react, *lambda)?;
                let s = t.add(ut, diff)?;
                t.add(s, react)
            }
            ProblemKind::ReactionDiffusion { nu, rho } => {
                let uxx = d2(t, 0)?;
                let ut = d1(t, 1)?;
                let diff = t.scale(uxx, -nu)?;
                let one_minus = t.neg(u.v)?;
                let one_minus = t.offset(one_minus, 1.0)?;
                let growth = t.mul(u.v, one_minus)?;
                let growth = t.scale(growth, -rho)?;
                let s = t.add(ut, diff)?;
                t.add(s, growth)
            }
        }
    }

    /// Initial condition `u(x, 0)`, for time-dependent problems.
    pub fn initial_value(&self, x: f64) -> Option<f64> {
        match &self.kind {
            ProblemKind::Helmholtz { .. } => None,
            ProblemKind::Convection { ic, .. } => Some(ic.eval(x)),
            ProblemKind::AllenCahn { .. } => Some(x * x * (PI * x).cos()),
            ProblemKind::ReactionDiffusion { .. } => {
                let s = 4.0 * (x - PI) / PI;
                Some((-0.5 * s * s).exp())
            }
        }
    }

    pub fn boundary_specs(&self) -> Vec<BoundarySpec> {
        match &self.kind {
            ProblemKind::Helmholtz { .. } => vec![BoundarySpec::Dirichlet { value: 0.0 }],
            ProblemKind::Convection { .. } | ProblemKind::ReactionDiffusion { .. } => {
                vec![BoundarySpec::Periodic { axis: 0, derivative: false }]
            }
            ProblemKind::AllenCahn { .. } => vec![BoundarySpec::Periodic { axis: 0, derivative: true }],
        }
    }

    /// Closed-form solution, where one exists.
    pub fn exact(&self, x: &[f64]) -> Option<f64> {
        match &self.kind {
            ProblemKind::Helmholtz { a, .. } => Some(a.iter().zip(x).map(|(&ai, &xi)| (ai * PI * xi).sin()).product()),
            ProblemKind::Convection { beta, ic } => {
                let s = (x[0] - beta * x[1]).rem_euclid(2.0 * PI);
                Some(ic.eval(s))
            }
            _ => None,
        }
    }

    pub fn has_exact(&self) -> bool {
        matches!(self.kind, ProblemKind::Helmholtz { .. } | ProblemKind::Convection { .. })
    }

    /// The closed-form solution as a differentiable field.
    pub fn exact_field(&self) -> Option<ExactField<'_>> {
        self.has_exact().then_some(ExactField { problem: self })
    }

    pub fn defaults(&self) -> ProblemDefaults {
        let grid_pinn = |lr_max: f64, baseline_hidden: Vec<usize>, grids, channels, synth_hidden, weighting| ProblemDefaults {
            lr_max,
            baseline_hidden,
            grids,
            resolution: 16,
            channels,
            synth_hidden,
            weighting,
            eval_sizes: vec![512, 101],
        };
        match &self.kind {
            ProblemKind::Helmholtz { a, .. } => ProblemDefaults {
                lr_max: 0.01,
                baseline_hidden: vec![100; 7],
                grids: 1,
                resolution: 16,
                channels: 4,
                synth_hidden: vec![16, 16],
                weighting: Weighting::Cosine,
                eval_sizes: if a.len() == 3 { vec![64; 3] } else { vec![256, 256] },
            },
            ProblemKind::Convection { .. } => grid_pinn(0.001, vec![50; 3], 16, 4, vec![16; 3], Weighting::Multilinear),
            ProblemKind::AllenCahn { .. } => grid_pinn(0.001, vec![128; 6], 16, 4, vec![16; 3], Weighting::Cosine),
            ProblemKind::ReactionDiffusion { .. } => grid_pinn(0.001, vec![50; 3], 1, 8, vec![16, 16], Weighting::Cosine),
        }
    }
}

/// Closed-form solution wrapped as a [`Field`], so it can be pushed through
/// the same jet-based residual as a model.
pub struct ExactField<'a> {
    problem: &'a PdeProblem,
}

impl Field for ExactField<'_> {
    fn input_dim(&self) -> usize {
        self.problem.dim()
    }

    fn eval(&self, t: &mut Tape, x: &Jet) -> Result<Jet, ModelError> {
        match &self.problem.kind {
            ProblemKind::Helmholtz { a, .. } => {
                let mut acc: Option<Jet> = None;
                for (i, &ai) in a.iter().enumerate() {
                    let f = x.slice_cols(t, i, 1)?.scale(t, ai * PI)?.unary(t, Unary::Sin)?;
                    acc = Some(match acc {
                        None => f,
                        Some(p) => p.mul(t, &f)?,
                    });
                }
                Ok(acc.expect("dimension >= 2"))
            }
            ProblemKind::Convection { beta, ic } => {
                let xs = x.slice_cols(t, 0, 1)?;
                let ts = x.slice_cols(t, 1, 1)?.scale(t, -beta)?;
                let arg = xs.add(t, &ts)?;
                let mut acc: Option<Jet> = None;
                for &(k, amp) in ic.terms() {
                    let term = arg.scale(t, k)?.unary(t, Unary::Sin)?.scale(t, amp)?;
                    acc = Some(match acc {
                        None => term,
                        Some(s) => s.add(t, &term)?,
                    });
                }
                Ok(acc.expect("non-empty series"))
            }
            _ => Err(ModelError::Invalid(format!("{} has no closed-form solution", self.problem.name))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn residual_of_exact(p: &PdeProblem, n: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = Tensor::from_fn(n, p.dim(), |_, c| {
            let (lo, hi) = p.bounds[c];
            rng.random_range(lo..hi)
        });
        let mut t = Tape::new();
        let x = Jet::seed(&mut t, &pts, &p.derivative_axes()).unwrap();
        let u = p.exact_field().unwrap().eval(&mut t, &x).unwrap();
        let r = p.residual(&mut t, &pts, &u).unwrap();
        t.value(r).data().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn params_round_trip_through_overrides() {
        let mut p = PdeProblem::by_name("helmholtz2d").unwrap();
        p.set_param("a1", 4.0).unwrap();
        p.set_param("a2", 4.0).unwrap();
        let params = p.params();
        let q = PdeProblem::with_params("helmholtz2d", params.iter().map(|(k, v)| (k.as_str(), *v))).unwrap();
        assert_eq!(p, q);
        assert!(p.set_param("a3", 1.0).is_err());
        assert!(p.set_param("beta", 1.0).is_err());
        assert!(p.set_param("k", f64::NAN).is_err());
    }

    #[test]
    fn helmholtz_values() {
        let p = PdeProblem::helmholtz(&[1.0, 1.0], 1.0).unwrap();
        assert!((p.exact(&[0.5, 0.5]).unwrap() - 1.0).abs() < 1e-15);
        let q = p.source(&[0.5, 0.5]);
        assert!((q - (1.0 - 2.0 * PI * PI)).abs() < 1e-12);
        assert!((q + 18.7392088).abs() < 1e-6);
    }

    #[test]
    fn exact_solutions_annihilate_residuals() {
        for p in [
            PdeProblem::helmholtz(&[10.0, 10.0], 1.0).unwrap(),
            PdeProblem::helmholtz(&[10.0, 10.0, 10.0], 1.0).unwrap(),
            PdeProblem::convection(30.0, ConvectionIc::SingleSine),
            PdeProblem::convection(30.0, ConvectionIc::Multiscale),
        ] {
            let r = residual_of_exact(&p, 1000);
            assert!(r <= 1e-8, "{}: {r}", p.name);
        }
    }

    #[test]
    fn convection_exact_values() {
        let p = PdeProblem::convection(30.0, ConvectionIc::SingleSine);
        assert!(p.exact(&[PI, 0.0]).unwrap().abs() < 1e-15);
        for &(x, t) in &[(0.3, 0.2), (1.7, 0.9)] {
            let a = p.exact(&[x, t]).unwrap();
            let b = p.exact(&[x + 2.0 * PI, t]).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn allen_cahn_initial_and_fixed_points() {
        let p = PdeProblem::allen_cahn(1e-4, 5.0);
        assert_eq!(p.initial_value(0.0), Some(0.0));
        assert!((p.initial_value(1.0).unwrap() + 1.0).abs() < 1e-15);
        assert!((p.initial_value(-1.0).unwrap() + 1.0).abs() < 1e-15);
        for c in [-1.0, 0.0, 1.0] {
            let mut t = Tape::new();
            let pts = Tensor::from_fn(3, 2, |r, col| if col == 0 { -0.5 + 0.4 * r as f64 } else { 0.5 });
            let x = Jet::seed(&mut t, &pts, &p.derivative_axes()).unwrap();
            let v = t.constant(Tensor::full(3, 1, c)).unwrap();
            let u = Jet::constant(v, &x);
            let r = p.residual(&mut t, &pts, &u).unwrap();
            assert!(t.value(r).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn reaction_diffusion_initial_and_constant_state() {
        let p = PdeProblem::reaction_diffusion(0.5, 5.0);
        assert_eq!(p.initial_value(PI), Some(1.0));
        assert!((p.initial_value(PI / 2.0).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        assert!((p.initial_value(PI / 2.0).unwrap() - 0.1353).abs() < 1e-4);
        let mut t = Tape::new();
        let pts = Tensor::row(&[1.0, 0.5]);
        let x = Jet::seed(&mut t, &pts, &p.derivative_axes()).unwrap();
        let v = t.constant(Tensor::scalar(1.0)).unwrap();
        let u = Jet::constant(v, &x);
        let r = p.residual(&mut t, &pts, &u).unwrap();
        assert_eq!(t.value(r).item(), Some(0.0));
    }

    #[test]
    fn every_problem_names_its_constants() {
        for name in PdeProblem::NAMES {
            let p = PdeProblem::by_name(name).unwrap();
            assert!(!p.params().is_empty());
            assert_eq!(p.derivative_axes().len(), p.dim());
        }
        assert!(matches!(PdeProblem::by_name("burgers"), Err(ProblemError::Unknown(_))));
    }
}
