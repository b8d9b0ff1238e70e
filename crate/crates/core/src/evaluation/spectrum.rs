//! One-sided amplitude spectra of periodic samples.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{EvalError, EvalSet};

/// Time slices at which spectra are reported.
pub const SPECTRUM_SLICES: [f64; 4] = [0.0, 0.5, 0.9, 1.0];

/// Amplitudes for wavenumbers `0..=n/2` of `n` uniform samples over one
/// period: `|X_k| / n` for `k = 0` and the Nyquist bin, `2 |X_k| / n`
/// otherwise. A pure `a sin(kx)` reads as amplitude `|a|` at `k`.
pub fn spectrum(samples: &[f64]) -> Result<Vec<f64>, EvalError> {
    let n = samples.len();
    if n == 0 {
        return Err(EvalError::Sampling("no samples".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite("spectrum input"));
    }
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let nf = n as f64;
    Ok((0..=n / 2)
        .map(|k| {
            let a = buf[k].norm() / nf;
            if k == 0 || 2 * k == n {
                a
            } else {
                2.0 * a
            }
        })
        .collect())
}

/// Mean square of the samples recovered from a one-sided spectrum of `n`
/// samples. Equals `sum(x^2) / n` by Parseval.
pub fn parseval_energy(amps: &[f64], n: usize) -> f64 {
    amps.iter()
        .enumerate()
        .map(|(k, a)| if k == 0 || 2 * k == n { a * a } else { 0.5 * a * a })
        .sum()
}

/// The `k` largest components as `(wavenumber, amplitude)`, largest first;
/// ties keep the lower wavenumber first.
pub fn top_k(amps: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..amps.len()).collect();
    idx.sort_by(|&a, &b| amps[b].total_cmp(&amps[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (i, amps[i])).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumSlice {
    pub t: f64,
    pub amp_truth: Vec<f64>,
    pub amp_pred: Vec<f64>,
    pub top_truth: Vec<(usize, f64)>,
    pub top_pred: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    pub slices: Vec<SpectrumSlice>,
}

fn is_uniform(xs: &[f64]) -> bool {
    if xs.len() < 2 {
        return true;
    }
    let h = xs[1] - xs[0];
    xs.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1e-300))
}

impl SpectrumReport {
    /// Spectra of truth and prediction along x at each requested time,
    /// taken from the nearest time row of a `(x, t)` grid whose x axis
    /// covers one period without the endpoint.
    pub fn from_eval(set: &EvalSet, pred: &[f64], times: &[f64], top: usize) -> Result<Self, EvalError> {
        let g = &set.grid;
        if g.sizes.len() != 2 {
            return Err(EvalError::Sampling("spectra need a 2-D (x, t) grid".into()));
        }
        if pred.len() != set.truth.len() {
            return Err(EvalError::Length {
                truth: set.truth.len(),
                pred: pred.len(),
            });
        }
        if !is_uniform(&g.axes[0]) {
            return Err(EvalError::Sampling("x samples are not uniform".into()));
        }
        let (nx, nt) = (g.sizes[0], g.sizes[1]);
        let ts = &g.axes[1];
        let mut slices = Vec::with_capacity(times.len());
        for &t in times {
            let j = (0..nt)
                .min_by(|&a, &b| (ts[a] - t).abs().total_cmp(&(ts[b] - t).abs()))
                .expect("nt >= 2");
            let column = |v: &[f64]| (0..nx).map(|i| v[i * nt + j]).collect::<Vec<_>>();
            let amp_truth = spectrum(&column(&set.truth))?;
            let amp_pred = spectrum(&column(pred))?;
            slices.push(SpectrumSlice {
                t: ts[j],
                top_truth: top_k(&amp_truth, top),
                top_pred: top_k(&amp_pred, top),
                amp_truth,
                amp_pred,
            });
        }
        Ok(SpectrumReport { slices })
    }

    pub const CSV_HEADER: &'static str = "t,k,amp_truth,amp_pred";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for sl in &self.slices {
            for (k, (a, b)) in sl.amp_truth.iter().zip(&sl.amp_pred).enumerate() {
                s.push_str(&format!("{},{},{:e},{:e}\n", sl.t, k, a, b));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::ConvectionIc;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn brute_force(samples: &[f64]) -> Vec<f64> {
        let n = samples.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, &x) in samples.iter().enumerate() {
                    let th = -2.0 * PI * (k * j) as f64 / n as f64;
                    re += x * th.cos();
                    im += x * th.sin();
                }
                let a = (re * re + im * im).sqrt() / n as f64;
                if k == 0 || 2 * k == n {
                    a
                } else {
                    2.0 * a
                }
            })
            .collect()
    }

    fn on_circle(n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..n).map(|j| f(2.0 * PI * j as f64 / n as f64)).collect()
    }

    #[test]
    fn constant_has_one_component() {
        let a = spectrum(&[-3.0; 16]).unwrap();
        assert!((a[0] - 3.0).abs() < 1e-15);
        assert!(a[1..].iter().all(|&v| v < 1e-14));
    }

    #[test]
    fn sin4_peak_matches_brute_force() {
        let x = on_circle(256, |x| (4.0 * x).sin());
        let fast = spectrum(&x).unwrap();
        let slow = brute_force(&x);
        assert_eq!(top_k(&fast, 1)[0].0, 4);
        assert!((fast[4] - 1.0).abs() <= 1e-10);
        assert!((slow[4] - 1.0).abs() <= 1e-10);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn multiscale_ic_top_four() {
        let x = on_circle(256, |x| ConvectionIc::Multiscale.eval(x));
        let top = top_k(&spectrum(&x).unwrap(), 4);
        let mut ks: Vec<usize> = top.iter().map(|p| p.0).collect();
        ks.sort();
        assert_eq!(ks, vec![1, 4, 8, 16]);
        let want = [(1, 1.0), (4, 0.5), (8, 0.1), (16, 0.1)];
        for (k, a) in want {
            let got = top.iter().find(|p| p.0 == k).unwrap().1;
            assert!((got - a).abs() < 1e-12);
        }
    }

    #[test]
    fn nyquist_bin_is_not_doubled() {
        let x: Vec<f64> = (0..8).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let a = spectrum(&x).unwrap();
        assert!((a[4] - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn parseval_holds(xs in proptest::collection::vec(-10.0f64..10.0, 1..200)) {
            let a = spectrum(&xs).unwrap();
            let direct = xs.iter().map(|v| v * v).sum::<f64>() / xs.len() as f64;
            let e = parseval_energy(&a, xs.len());
            prop_assert!((e - direct).abs() <= 1e-12 * direct.max(1e-300) + 1e-300);
        }
    }
}
