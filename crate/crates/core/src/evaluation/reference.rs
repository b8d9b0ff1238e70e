//! Pseudo-spectral reference solutions for periodic 1-D evolution problems.
//!
//! Time stepping is ETDRK4 (Cox and Matthews, with the contour-integral
//! coefficients of Kassam and Trefethen): the stiff linear part `L`
//! (diffusion, or advection for convection) is integrated exactly in Fourier
//! space and the pointwise reaction term explicitly.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

use super::{EvalError, EvalGrid};
use crate::pde::{PdeProblem, ProblemKind};

type C = Complex<f64>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    pub modes: usize,
    pub dt: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { modes: 512, dt: 1e-4 }
    }
}

/// Fourier coefficients of the solution at each requested time.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSolution {
    pub x_bounds: (f64, f64),
    pub modes: usize,
    pub times: Vec<f64>,
    /// Unnormalized DFT of the nodal values, one vector per time.
    pub coeffs: Vec<Vec<C>>,
}

enum Reaction {
    None,
    AllenCahn(f64),
    Logistic(f64),
}

impl Reaction {
    fn eval(&self, u: f64) -> f64 {
        match *self {
            Reaction::None => 0.0,
            Reaction::AllenCahn(l) => l * u - l * u * u * u,
            Reaction::Logistic(r) => r * u * (1.0 - u),
        }
    }
}

struct Etd {
    e: Vec<C>,
    e2: Vec<C>,
    q: Vec<C>,
    f1: Vec<C>,
    f2: Vec<C>,
    f3: Vec<C>,
}

const CONTOUR_POINTS: usize = 64;

impl Etd {
    fn new(l: &[C], h: f64) -> Self {
        let roots: Vec<C> = (0..CONTOUR_POINTS)
            .map(|j| C::from_polar(1.0, PI * (j as f64 + 0.5) / CONTOUR_POINTS as f64 * 2.0))
            .collect();
        let m = CONTOUR_POINTS as f64;
        let mut out = Etd {
            e: Vec::with_capacity(l.len()),
            e2: Vec::with_capacity(l.len()),
            q: Vec::with_capacity(l.len()),
            f1: Vec::with_capacity(l.len()),
            f2: Vec::with_capacity(l.len()),
            f3: Vec::with_capacity(l.len()),
        };
        for &lk in l {
            let lh = lk * h;
            out.e.push(lh.exp());
            out.e2.push((lh * 0.5).exp());
            let (mut q, mut f1, mut f2, mut f3) = (C::default(), C::default(), C::default(), C::default());
            for &r in &roots {
                let z = lh + r;
                let ez = z.exp();
                let z3 = z * z * z;
                q += ((z * 0.5).exp() - 1.0) / z;
                f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                f2 += (2.0 + z + ez * (z - 2.0)) / z3;
                f3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
            }
            out.q.push(q * (h / m));
            out.f1.push(f1 * (h / m));
            out.f2.push(f2 * (h / m));
            out.f3.push(f3 * (h / m));
        }
        out
    }
}

struct Stepper {
    n: usize,
    l: Vec<C>,
    reaction: Reaction,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<C>,
}

impl Stepper {
    /// Fourier transform of the reaction term evaluated at the nodes.
    fn nonlinear(&mut self, v: &[C], out: &mut Vec<C>) {
        out.clear();
        if matches!(self.reaction, Reaction::None) {
            out.resize(self.n, C::default());
            return;
        }
        self.scratch.clear();
        self.scratch.extend_from_slice(v);
        self.inv.process(&mut self.scratch);
        let nf = self.n as f64;
        out.extend(self.scratch.iter().map(|z| C::new(self.reaction.eval(z.re / nf), 0.0)));
        self.fwd.process(out);
    }

    fn step(&mut self, v: &mut [C], c: &Etd, bufs: &mut [Vec<C>; 5]) {
        let [nv, na, nb, nc, tmp] = bufs;
        self.nonlinear(v, nv);
        let a: Vec<C> = (0..self.n).map(|k| c.e2[k] * v[k] + c.q[k] * nv[k]).collect();
        self.nonlinear(&a, na);
        tmp.clear();
        tmp.extend((0..self.n).map(|k| c.e2[k] * v[k] + c.q[k] * na[k]));
        let b = std::mem::take(tmp);
        self.nonlinear(&b, nb);
        let cc: Vec<C> = (0..self.n).map(|k| c.e2[k] * a[k] + c.q[k] * (nb[k] * 2.0 - nv[k])).collect();
        self.nonlinear(&cc, nc);
        for k in 0..self.n {
            v[k] = c.e[k] * v[k] + nv[k] * c.f1[k] + (na[k] + nb[k]) * 2.0 * c.f2[k] + nc[k] * c.f3[k];
        }
        *tmp = b;
    }
}

/// Wavenumber of DFT bin `j`; the Nyquist bin is reported as `+n/2`.
fn wavenumber(j: usize, n: usize) -> f64 {
    if j <= n / 2 {
        j as f64
    } else {
        j as f64 - n as f64
    }
}

/// Integrates a periodic `(x, t)` problem from its initial condition and
/// records the solution at each of `times` (ascending, `>= 0`). Steps of at
/// most `dt` are fitted evenly into each interval between output times.
pub fn reference_solve(
    problem: &PdeProblem,
    settings: &SolverSettings,
    times: &[f64],
) -> Result<ReferenceSolution, EvalError> {
    let n = settings.modes;
    if n < 4 || !(settings.dt > 0.0 && settings.dt.is_finite()) {
        return Err(EvalError::Grid(format!("need modes >= 4 and dt > 0, got {n} and {}", settings.dt)));
    }
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(EvalError::Grid("output times must be ascending and >= 0".into()));
    }
    let (lo, hi) = problem.bounds[0];
    let scale = 2.0 * PI / (hi - lo);
    let (l, reaction): (Vec<C>, Reaction) = match &problem.kind {
        ProblemKind::Convection { beta, .. } => (
            (0..n)
                .map(|j| {
                    let k = if 2 * j == n { 0.0 } else { wavenumber(j, n) * scale };
                    C::new(0.0, -beta * k)
                })
                .collect(),
            Reaction::None,
        ),
        ProblemKind::AllenCahn { nu, lambda } => (diffusion(n, *nu, scale), Reaction::AllenCahn(*lambda)),
        ProblemKind::ReactionDiffusion { nu, rho } => (
            diffusion(n, *nu, scale),
            if *rho == 0.0 {
                Reaction::None
            } else {
                Reaction::Logistic(*rho)
            },
        ),
        ProblemKind::Helmholtz { .. } => return Err(EvalError::NoReference(problem.name.clone())),
    };

    let mut planner = FftPlanner::new();
    let mut st = Stepper {
        n,
        l,
        reaction,
        fwd: planner.plan_fft_forward(n),
        inv: planner.plan_fft_inverse(n),
        scratch: Vec::with_capacity(n),
    };
    let mut v: Vec<C> = (0..n)
        .map(|j| {
            let x = lo + (hi - lo) * j as f64 / n as f64;
            C::new(problem.initial_value(x).expect("time-dependent problem"), 0.0)
        })
        .collect();
    st.fwd.process(&mut v);

    let mut bufs: [Vec<C>; 5] = Default::default();
    let mut now = 0.0;
    let mut coeffs = Vec::with_capacity(times.len());
    let mut cached: Option<(u64, Etd)> = None;
    for &target in times {
        let span = target - now;
        if span > 0.0 {
            let steps = ((span / settings.dt) - 1e-9).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            if cached.as_ref().map(|c| c.0) != Some(h.to_bits()) {
                cached = Some((h.to_bits(), Etd::new(&st.l, h)));
            }
            let etd = &cached.as_ref().expect("just set").1;
            for s in 0..steps {
                st.step(&mut v, etd, &mut bufs);
                if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(EvalError::Unstable {
                        t: now + (s + 1) as f64 * h,
                        dt: settings.dt,
                    });
                }
            }
            now = target;
        }
        coeffs.push(v.clone());
    }
    Ok(ReferenceSolution {
        x_bounds: (lo, hi),
        modes: n,
        times: times.to_vec(),
        coeffs,
    })
}

fn diffusion(n: usize, nu: f64, scale: f64) -> Vec<C> {
    (0..n)
        .map(|j| {
            let k = wavenumber(j, n) * scale;
            C::new(-nu * k * k, 0.0)
        })
        .collect()
}

impl ReferenceSolution {
    /// Trigonometric interpolant at time index `ti`, evaluated at `xs`.
    pub fn values_at(&self, ti: usize, xs: &[f64]) -> Vec<f64> {
        let n = self.modes;
        let (lo, hi) = self.x_bounds;
        let scale = 2.0 * PI / (hi - lo);
        let c = &self.coeffs[ti];
        xs.iter()
            .map(|&x| {
                let s = (x - lo) * scale;
                let mut acc = c[0].re;
                for j in 1..n {
                    let k = wavenumber(j, n);
                    if 2 * j == n {
                        acc += c[j].re * (k * s).cos();
                    } else {
                        let (sn, cs) = (k * s).sin_cos();
                        acc += c[j].re * cs - c[j].im * sn;
                    }
                }
                acc / n as f64
            })
            .collect()
    }

    /// Values on an `(x, t)` evaluation grid, axis 0 slowest. Every grid
    /// time must be one of the solution times.
    pub fn sample(&self, grid: &EvalGrid) -> Result<Vec<f64>, EvalError> {
        if grid.sizes.len() != 2 {
            return Err(EvalError::Grid("reference grids are (x, t)".into()));
        }
        let (nx, nt) = (grid.sizes[0], grid.sizes[1]);
        let mut out = vec![0.0; nx * nt];
        for (j, &t) in grid.axes[1].iter().enumerate() {
            let ti = self
                .times
                .iter()
                .position(|&s| s == t)
                .ok_or_else(|| EvalError::Grid(format!("no reference slice at t = {t}")))?;
            let col = self.values_at(ti, &grid.axes[0]);
            for (i, v) in col.into_iter().enumerate() {
                out[i * nt + j] = v;
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite("reference solution"));
        }
        Ok(out)
    }
}
