//! Order-2 Taylor jets built out of tape nodes.
//!
//! A [`Jet`] carries a value node plus, for each tracked input axis, the first
//! and (optionally) second directional derivative of that value along the
//! axis. Every component is an ordinary tape node, so a reverse sweep over a
//! loss built from `d1`/`d2` gives parameter gradients of derivative terms.
//! Derivatives that are structurally zero are stored as `None` and never
//! materialized.

use super::tape::{Pointwise, Tape, Var};
use super::tensor::Tensor;
use super::AdError;

/// Derivatives of a jet's value along one input axis.
#[derive(Clone, Copy, Debug)]
pub struct Tangent {
    pub d1: Option<Var>,
    pub d2: Option<Var>,
    /// Whether second derivatives are propagated for this axis.
    pub second: bool,
}

impl Tangent {
    fn zero(second: bool) -> Self {
        Tangent {
            d1: None,
            d2: None,
            second,
        }
    }
}

/// Which input axes a forward pass differentiates, and to what order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AxisOrder {
    pub axis: usize,
    pub second: bool,
}

#[derive(Clone, Debug)]
pub struct Jet {
    pub v: Var,
    pub tangents: Vec<Tangent>,
}

/// Value with first and second derivative along one axis, all as nodes.
#[derive(Clone, Copy, Debug)]
pub struct Jet2 {
    pub v: Var,
    pub d1: Var,
    pub d2: Var,
}

/// Activation functions available to jet propagation; all smooth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Identity,
    Tanh,
    Sin,
    Cos,
    Exp,
    /// `-x exp(-x^2/2)`
    GaussianWavelet,
}

fn opt_add(t: &mut Tape, a: Option<Var>, b: Option<Var>) -> Result<Option<Var>, AdError> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(t.add(a, b)?),
        (a, None) => a,
        (None, b) => b,
    })
}

fn opt_mul(t: &mut Tape, a: Option<Var>, b: Var) -> Result<Option<Var>, AdError> {
    a.map(|a| t.mul(a, b)).transpose()
}

fn zeros_like(t: &mut Tape, v: Var) -> Result<Var, AdError> {
    let (r, c) = t.shape(v);
    t.constant(Tensor::zeros(r, c))
}

impl Jet {
    /// A jet with no dependence on the inputs.
    pub fn constant(v: Var, like: &Jet) -> Jet {
        Jet {
            v,
            tangents: like.tangents.iter().map(|t| Tangent::zero(t.second)).collect(),
        }
    }

    /// Seeds coordinate batch `x` (`B x d`) for differentiation along `axes`.
    /// Tangent `i` of the result has `d1` equal to the unit vector of
    /// `axes[i].axis` and `d2 = 0`.
    pub fn seed(t: &mut Tape, x: &Tensor, axes: &[AxisOrder]) -> Result<Jet, AdError> {
        let v = t.constant(x.clone())?;
        let mut tangents = Vec::with_capacity(axes.len());
        for ax in axes {
            if ax.axis >= x.cols() {
                return Err(AdError::AxisOutOfRange {
                    axis: ax.axis,
                    dim: x.cols(),
                });
            }
            let d1 = t.constant(Tensor::from_fn(x.rows(), x.cols(), |_, c| {
                if c == ax.axis {
                    1.0
                } else {
                    0.0
                }
            }))?;
            tangents.push(Tangent {
                d1: Some(d1),
                d2: None,
                second: ax.second,
            });
        }
        Ok(Jet { v, tangents })
    }

    /// Materialized view of tangent `i`; missing derivatives become zero
    /// constants shaped like the value.
    pub fn axis(&self, t: &mut Tape, i: usize) -> Result<Jet2, AdError> {
        let tan = self.tangents[i];
        let d1 = match tan.d1 {
            Some(d) => d,
            None => zeros_like(t, self.v)?,
        };
        let d2 = match tan.d2 {
            Some(d) => d,
            None => zeros_like(t, self.v)?,
        };
        Ok(Jet2 { v: self.v, d1, d2 })
    }

    /// Value only; drops all tangents.
    pub fn value_only(v: Var) -> Jet {
        Jet {
            v,
            tangents: Vec::new(),
        }
    }

    fn check_compatible(&self, other: &Jet) -> Result<(), AdError> {
        if self.tangents.len() != other.tangents.len() {
            return Err(AdError::JetMismatch {
                lhs: self.tangents.len(),
                rhs: other.tangents.len(),
            });
        }
        Ok(())
    }

    pub fn add(&self, t: &mut Tape, o: &Jet) -> Result<Jet, AdError> {
        self.check_compatible(o)?;
        let v = t.add(self.v, o.v)?;
        let mut tangents = Vec::with_capacity(self.tangents.len());
        for (a, b) in self.tangents.iter().zip(&o.tangents) {
            let second = a.second || b.second;
            tangents.push(Tangent {
                d1: opt_add(t, a.d1, b.d1)?,
                d2: if second { opt_add(t, a.d2, b.d2)? } else { None },
                second,
            });
        }
        Ok(Jet { v, tangents })
    }

    pub fn sub(&self, t: &mut Tape, o: &Jet) -> Result<Jet, AdError> {
        let neg = o.scale(t, -1.0)?;
        self.add(t, &neg)
    }

    pub fn mul(&self, t: &mut Tape, o: &Jet) -> Result<Jet, AdError> {
        self.check_compatible(o)?;
        let v = t.mul(self.v, o.v)?;
        let mut tangents = Vec::with_capacity(self.tangents.len());
        for (a, b) in self.tangents.iter().zip(&o.tangents) {
            let second = a.second || b.second;
            let d1 = {
                let l = opt_mul(t, a.d1, o.v)?;
                let r = opt_mul(t, b.d1, self.v)?;
                opt_add(t, l, r)?
            };
            let d2 = if second {
                let l = opt_mul(t, a.d2, o.v)?;
                let r = opt_mul(t, b.d2, self.v)?;
                let cross = match (a.d1, b.d1) {
                    (Some(x), Some(y)) => {
                        let p = t.mul(x, y)?;
                        Some(t.scale(p, 2.0)?)
                    }
                    _ => None,
                };
                let s = opt_add(t, l, r)?;
                opt_add(t, s, cross)?
            } else {
                None
            };
            tangents.push(Tangent { d1, d2, second });
        }
        Ok(Jet { v, tangents })
    }

    pub fn scale(&self, t: &mut Tape, c: f64) -> Result<Jet, AdError> {
        let v = t.scale(self.v, c)?;
        self.map_linear(t, v, |t, d| t.scale(d, c))
    }

    pub fn offset(&self, t: &mut Tape, c: f64) -> Result<Jet, AdError> {
        let v = t.offset(self.v, c)?;
        Ok(Jet {
            v,
            tangents: self.tangents.clone(),
        })
    }

    /// Elementwise product with a constant (input-independent) node.
    pub fn mul_const(&self, t: &mut Tape, c: Var) -> Result<Jet, AdError> {
        let v = t.mul(self.v, c)?;
        self.map_linear(t, v, |t, d| t.mul(d, c))
    }

    /// Adds a constant (input-independent) node.
    pub fn add_const(&self, t: &mut Tape, c: Var) -> Result<Jet, AdError> {
        let v = t.add(self.v, c)?;
        Ok(Jet {
            v,
            tangents: self.tangents.clone(),
        })
    }

    fn map_linear(
        &self,
        t: &mut Tape,
        v: Var,
        mut f: impl FnMut(&mut Tape, Var) -> Result<Var, AdError>,
    ) -> Result<Jet, AdError> {
        let mut tangents = Vec::with_capacity(self.tangents.len());
        for tan in &self.tangents {
            tangents.push(Tangent {
                d1: tan.d1.map(|d| f(t, d)).transpose()?,
                d2: tan.d2.map(|d| f(t, d)).transpose()?,
                second: tan.second,
            });
        }
        Ok(Jet { v, tangents })
    }

    /// Dense layer `x W^T + b`.
    pub fn affine(&self, t: &mut Tape, w: Var, b: Var) -> Result<Jet, AdError> {
        let v = t.affine(w, self.v, b)?;
        self.map_linear(t, v, |t, d| t.matmul_t(d, w))
    }

    pub fn unary(&self, t: &mut Tape, f: Unary) -> Result<Jet, AdError> {
        if f == Unary::Identity {
            return Ok(self.clone());
        }
        let x = self.v;
        let needs_first = self.tangents.iter().any(|tan| tan.d1.is_some() || tan.d2.is_some());
        let needs_second = self.tangents.iter().any(|tan| tan.second && tan.d1.is_some());
        // y = f(x), g1 = f'(x), g2 = f''(x), each only as far as needed.
        let (y, g1, g2) = match f {
            Unary::Identity => unreachable!(),
            Unary::Tanh => {
                let y = t.tanh(x)?;
                let g1 = needs_first.then(|| t.pointwise(y, Pointwise::TanhD1)).transpose()?;
                let g2 = needs_second.then(|| t.pointwise(y, Pointwise::TanhD2)).transpose()?;
                (y, g1, g2)
            }
            Unary::Sin => {
                let y = t.sin(x)?;
                let g1 = needs_first.then(|| t.cos(x)).transpose()?;
                let g2 = needs_second.then(|| t.neg(y)).transpose()?;
                (y, g1, g2)
            }
            Unary::Cos => {
                let y = t.cos(x)?;
                let g1 = if needs_first {
                    let s = t.sin(x)?;
                    Some(t.neg(s)?)
                } else {
                    None
                };
                let g2 = needs_second.then(|| t.neg(y)).transpose()?;
                (y, g1, g2)
            }
            Unary::Exp => {
                let y = t.exp(x)?;
                (y, needs_first.then_some(y), needs_second.then_some(y))
            }
            Unary::GaussianWavelet => {
                let y = t.pointwise(x, Pointwise::Wavelet)?;
                let g1 = needs_first.then(|| t.pointwise(x, Pointwise::WaveletD1)).transpose()?;
                let g2 = needs_second.then(|| t.pointwise(x, Pointwise::WaveletD2)).transpose()?;
                (y, g1, g2)
            }
        };
        let mut tangents = Vec::with_capacity(self.tangents.len());
        for tan in &self.tangents {
            let d1 = match (tan.d1, g1) {
                (Some(d), Some(g)) => Some(t.mul(g, d)?),
                _ => None,
            };
            let d2 = match (tan.second, tan.d1, tan.d2, g1, g2) {
                (false, ..) => None,
                (true, Some(d1), d2, Some(g1), Some(g2)) => Some(t.chain_second(g1, d2, g2, d1)?),
                (true, None, Some(d2), Some(g1), _) => Some(t.mul(g1, d2)?),
                _ => None,
            };
            tangents.push(Tangent {
                d1,
                d2,
                second: tan.second,
            });
        }
        Ok(Jet { v: y, tangents })
    }

    fn concat_with(
        t: &mut Tape,
        parts: &[&Jet],
        join: fn(&mut Tape, &[Var]) -> Result<Var, AdError>,
    ) -> Result<Jet, AdError> {
        let first = parts.first().ok_or(AdError::Empty { op: "concat" })?;
        for p in parts {
            first.check_compatible(p)?;
        }
        let vs: Vec<Var> = parts.iter().map(|p| p.v).collect();
        let v = join(t, &vs)?;
        let mut tangents = Vec::with_capacity(first.tangents.len());
        for i in 0..first.tangents.len() {
            let second = parts.iter().any(|p| p.tangents[i].second);
            let pick = |t: &mut Tape, sel: fn(&Tangent) -> Option<Var>| -> Result<Option<Var>, AdError> {
                if parts.iter().all(|p| sel(&p.tangents[i]).is_none()) {
                    return Ok(None);
                }
                let mut ds = Vec::with_capacity(parts.len());
                for p in parts {
                    ds.push(match sel(&p.tangents[i]) {
                        Some(d) => d,
                        None => zeros_like(t, p.v)?,
                    });
                }
                join(t, &ds).map(Some)
            };
            let d1 = pick(t, |tan| tan.d1)?;
            let d2 = if second { pick(t, |tan| tan.d2)? } else { None };
            tangents.push(Tangent { d1, d2, second });
        }
        Ok(Jet { v, tangents })
    }

    pub fn concat_cols(t: &mut Tape, parts: &[&Jet]) -> Result<Jet, AdError> {
        Jet::concat_with(t, parts, |t, vs| t.concat_cols(vs))
    }

    pub fn concat_rows(t: &mut Tape, parts: &[&Jet]) -> Result<Jet, AdError> {
        Jet::concat_with(t, parts, |t, vs| t.concat_rows(vs))
    }

    pub fn slice_cols(&self, t: &mut Tape, start: usize, len: usize) -> Result<Jet, AdError> {
        let v = t.slice_cols(self.v, start, len)?;
        self.map_linear(t, v, |t, d| t.slice_cols(d, start, len))
    }

    pub fn sum_blocks(&self, t: &mut Tape, groups: usize, k: usize) -> Result<Jet, AdError> {
        let v = t.sum_blocks(self.v, groups, k)?;
        self.map_linear(t, v, |t, d| t.sum_blocks(d, groups, k))
    }

    pub fn rows_to_cols(&self, t: &mut Tape, groups: usize) -> Result<Jet, AdError> {
        let v = t.rows_to_cols(self.v, groups)?;
        self.map_linear(t, v, |t, d| t.rows_to_cols(d, groups))
    }
}

/// Evaluates `f` at the points `x` with a jet seeded along `axis`, returning
/// the value and its first two derivatives along that axis.
pub fn jet_eval<F>(t: &mut Tape, x: &Tensor, axis: usize, f: F) -> Result<Jet2, AdError>
where
    F: FnOnce(&mut Tape, &Jet) -> Result<Jet, AdError>,
{
    let input = Jet::seed(t, x, &[AxisOrder { axis, second: true }])?;
    let out = f(t, &input)?;
    out.axis(t, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamId;

    fn item(t: &Tape, v: Var) -> f64 {
        t.value(v).item().unwrap()
    }

    #[test]
    fn cube_power_rule() {
        let mut t = Tape::new();
        let j = jet_eval(&mut t, &Tensor::scalar(2.0), 0, |t, x| {
            let sq = x.mul(t, x)?;
            sq.mul(t, x)
        })
        .unwrap();
        assert_eq!((item(&t, j.v), item(&t, j.d1), item(&t, j.d2)), (8.0, 12.0, 12.0));
    }

    #[test]
    fn sin_cos_product_along_x() {
        let mut t = Tape::new();
        let j = jet_eval(&mut t, &Tensor::row(&[0.0, 0.0]), 0, |t, x| {
            let a = x.slice_cols(t, 0, 1)?.unary(t, Unary::Sin)?;
            let b = x.slice_cols(t, 1, 1)?.unary(t, Unary::Cos)?;
            a.mul(t, &b)
        })
        .unwrap();
        assert_eq!((item(&t, j.v), item(&t, j.d1), item(&t, j.d2)), (0.0, 1.0, 0.0));
    }

    #[test]
    fn tanh_at_origin() {
        let mut t = Tape::new();
        let j = jet_eval(&mut t, &Tensor::scalar(0.0), 0, |t, x| x.unary(t, Unary::Tanh)).unwrap();
        assert_eq!((item(&t, j.v), item(&t, j.d1), item(&t, j.d2)), (0.0, 1.0, 0.0));
        let j = jet_eval(&mut t, &Tensor::scalar(std::f64::consts::FRAC_PI_2), 0, |t, x| x.unary(t, Unary::Sin))
            .unwrap();
        assert_eq!(item(&t, j.v), 1.0);
        assert!(item(&t, j.d1).abs() < 1e-16);
    }

    #[test]
    fn wavelet_at_origin() {
        let mut t = Tape::new();
        let j = jet_eval(&mut t, &Tensor::scalar(0.0), 0, |t, x| x.unary(t, Unary::GaussianWavelet)).unwrap();
        assert_eq!(item(&t, j.v), 0.0);
        assert_eq!(item(&t, j.d1), -1.0);
        assert_eq!(item(&t, j.d2), 0.0);
    }

    #[test]
    fn seeded_coordinate_has_unit_tangent() {
        let mut t = Tape::new();
        let j = jet_eval(&mut t, &Tensor::scalar(0.7), 0, |_, x| Ok(x.clone())).unwrap();
        assert_eq!((item(&t, j.d1), item(&t, j.d2)), (1.0, 0.0));
    }

    #[test]
    fn mixed_parameter_second_derivative() {
        // d/dp of d2/dx2 (p x^2) = 2
        let mut t = Tape::new();
        let p = t.param(ParamId(0), Tensor::scalar(1.3)).unwrap();
        let j = jet_eval(&mut t, &Tensor::scalar(0.4), 0, |t, x| {
            let sq = x.mul(t, x)?;
            sq.mul_const(t, p)
        })
        .unwrap();
        assert!((item(&t, j.d2) - 2.6).abs() < 1e-15);
        let g = t.backward(j.d2).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().item(), Some(2.0));
    }

    #[test]
    fn axis_out_of_range_is_rejected() {
        let mut t = Tape::new();
        let r = jet_eval(&mut t, &Tensor::row(&[0.0, 1.0]), 2, |_, x| Ok(x.clone()));
        assert!(matches!(r, Err(AdError::AxisOutOfRange { .. })));
    }
}
