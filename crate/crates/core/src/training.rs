//! Physics-informed loss, Adam, cosine annealing and the training loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, AxisOrder, Gradients, Jet, Tape, Tensor, Var};
use crate::evaluation::EvalSet;
use crate::networks::{Field, Model, ModelError};
use crate::params::ParamStore;
use crate::pde::PdeProblem;
use crate::sampling::{sample, BoundaryPoints, PointCounts, PointSets, SamplingError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { epoch: usize, what: String },
    #[error("gradient shape mismatch for {0}")]
    Shape(String),
}

impl From<AdError> for TrainError {
    fn from(e: AdError) -> Self {
        TrainError::Model(ModelError::Graph(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub residual: f64,
    pub initial: f64,
    pub boundary: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            residual: 1.0,
            initial: 1.0,
            boundary: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub counts: PointCounts,
    pub seed: u64,
    /// Metrics cadence in epochs.
    pub eval_every: usize,
    /// Redraw the point sets every this many epochs; 0 keeps one fixed set.
    pub resample_every: usize,
    /// Interior points per step; `None` is full batch.
    pub batch_size: Option<usize>,
}

impl TrainConfig {
    pub fn for_problem(problem: &PdeProblem, seed: u64) -> Self {
        TrainConfig {
            epochs: 20_000,
            lr_max: problem.defaults().lr_max,
            lr_min: 1e-6,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            counts: PointCounts::default_for(problem),
            seed,
            eval_every: 500,
            resample_every: 0,
            batch_size: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad("need 0 <= lr_min <= lr_max");
        }
        let w = self.weights;
        if !(w.residual >= 0.0 && w.initial >= 0.0 && w.boundary >= 0.0) {
            return bad("loss weights must be >= 0");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be >= 1");
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam needs 0 <= beta < 1 and eps > 0");
        }
        Ok(())
    }
}

/// `lr_min + (lr_max - lr_min) (1 + cos(pi t / T)) / 2`.
pub fn cosine_lr(epoch: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let frac = epoch.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = |p: &ParamStore| {
            p.entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.rows(), e.value.cols()))
                .collect()
        };
        AdamState {
            m: zeros(params),
            v: zeros(params),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient entry are
/// treated as having zero gradient.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if state.m.len() != params.len() {
        return Err(TrainError::Shape("optimizer state".into()));
    }
    for id in params.ids() {
        if let Some(g) = grads.get(id) {
            if g.shape() != params.value(id).shape() {
                return Err(TrainError::Shape(params.entry(id).name.clone()));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for id in params.ids().collect::<Vec<_>>() {
        let i = id.0;
        let g = grads.get(id);
        let p = params.value_mut(id).data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..p.len() {
            let gj = g.map_or(0.0, |g| g.data()[j]);
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Loss nodes: the weighted total and the three unweighted mean-squared
/// terms.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub residual: Var,
    pub initial: Var,
    pub boundary: Var,
}

fn mse(t: &mut Tape, diff: Var) -> Result<Var, AdError> {
    let sq = t.square(diff)?;
    t.mean(sq)
}

fn targets(t: &mut Tape, values: &[f64]) -> Result<Var, AdError> {
    t.constant(Tensor::column(values))
}

/// `lambda_r * mean(r^2) + lambda_ic * mean((u - h)^2) + lambda_bc * mean(b^2)`.
/// A periodic pair contributes `(u_L - u_R)^2`, plus `(u_x,L - u_x,R)^2`
/// when the derivative is matched as well.
pub fn loss(
    t: &mut Tape,
    field: &dyn Field,
    problem: &PdeProblem,
    interior: &Tensor,
    points: &PointSets,
    weights: LossWeights,
) -> Result<LossParts, ModelError> {
    let x = Jet::seed(t, interior, &problem.derivative_axes())?;
    let u = field.eval(t, &x)?;
    let r = problem.residual(t, interior, &u)?;
    let residual = mse(t, r)?;

    let initial = match &points.initial {
        Some((pts, h)) => {
            let x = Jet::seed(t, pts, &[])?;
            let u = field.eval(t, &x)?;
            let h = targets(t, h)?;
            let d = t.sub(u.v, h)?;
            mse(t, d)?
        }
        None => t.scalar(0.0)?,
    };

    let mut boundary = t.scalar(0.0)?;
    for b in &points.boundary {
        let term = match b {
            BoundaryPoints::Dirichlet { points, targets: g } => {
                let x = Jet::seed(t, points, &[])?;
                let u = field.eval(t, &x)?;
                let g = targets(t, g)?;
                let d = t.sub(u.v, g)?;
                mse(t, d)?
            }
            BoundaryPoints::Periodic {
                axis,
                derivative,
                left,
                right,
            } => {
                let axes: Vec<AxisOrder> = if *derivative {
                    vec![AxisOrder {
                        axis: *axis,
                        second: false,
                    }]
                } else {
                    Vec::new()
                };
                let xl = Jet::seed(t, left, &axes)?;
                let ul = field.eval(t, &xl)?;
                let xr = Jet::seed(t, right, &axes)?;
                let ur = field.eval(t, &xr)?;
                let dv = t.sub(ul.v, ur.v)?;
                let mut sq = t.square(dv)?;
                if *derivative {
                    let jl = ul.axis(t, 0)?;
                    let jr = ur.axis(t, 0)?;
                    let dd = t.sub(jl.d1, jr.d1)?;
                    let sd = t.square(dd)?;
                    sq = t.add(sq, sd)?;
                }
                t.mean(sq)?
            }
        };
        boundary = t.add(boundary, term)?;
    }

    let wr = t.scale(residual, weights.residual)?;
    let wi = t.scale(initial, weights.initial)?;
    let wb = t.scale(boundary, weights.boundary)?;
    let s = t.add(wr, wi)?;
    let total = t.add(s, wb)?;
    Ok(LossParts {
        total,
        residual,
        initial,
        boundary,
    })
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_r: f64,
    pub loss_ic: f64,
    pub loss_bc: f64,
    /// Relative L2 error on the evaluation set, when one is attached.
    pub rel_l2: Option<f64>,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str = "epoch,lr,loss,loss_r,loss_ic,loss_bc,rel_l2";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{}",
            self.epoch,
            self.lr,
            self.loss,
            self.loss_r,
            self.loss_ic,
            self.loss_bc,
            self.rel_l2.map(|v| format!("{v:e}")).unwrap_or_default()
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub model: Model,
    pub history: Vec<MetricsRecord>,
}

impl TrainRun {
    pub fn final_rel_l2(&self) -> Option<f64> {
        self.history.last().and_then(|r| r.rel_l2)
    }
}

/// A run that stopped early; `last_good` holds the parameters from before
/// the failing step.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: TrainError,
    pub last_good: Option<Box<TrainRun>>,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for TrainFailure {}

impl From<TrainError> for TrainFailure {
    fn from(error: TrainError) -> Self {
        TrainFailure { error, last_good: None }
    }
}

fn interior_batch(all: &Tensor, batch: Option<usize>, epoch: usize) -> Option<Tensor> {
    let bs = batch?;
    let n = all.rows();
    if bs >= n {
        return None;
    }
    let start = (epoch * bs) % n;
    Some(Tensor::from_fn(bs, all.cols(), |r, c| all.get((start + r) % n, c)))
}

fn resample_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs the epoch loop: loss with input jets, reverse sweep, Adam step with
/// a cosine-annealed learning rate. Metrics are logged every `eval_every`
/// epochs and once more after the last step. `observer` sees each record,
/// with the model it was measured on, as it is produced.
pub fn train(
    problem: &PdeProblem,
    mut model: Model,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
    mut observer: impl FnMut(&MetricsRecord, &Model),
) -> Result<TrainRun, TrainFailure> {
    cfg.validate()?;
    let mut points = sample(problem, cfg.counts, cfg.seed).map_err(TrainError::from)?;
    let mut state = AdamState::new(&model.params);
    let mut history = Vec::new();
    let mut tape = Tape::new();

    let fail = |error: TrainError, model: &Model, history: &Vec<MetricsRecord>| TrainFailure {
        error,
        last_good: Some(Box::new(TrainRun {
            model: model.clone(),
            history: history.clone(),
        })),
    };

    let record = |tape: &Tape, parts: &LossParts, epoch: usize, lr: f64, model: &Model| -> Result<MetricsRecord, TrainError> {
        let v = |x: Var| tape.value(x).item().expect("scalar loss");
        let rel_l2 = eval.map(|e| e.rel_l2(model)).transpose()?;
        Ok(MetricsRecord {
            epoch,
            lr,
            loss: v(parts.total),
            loss_r: v(parts.residual),
            loss_ic: v(parts.initial),
            loss_bc: v(parts.boundary),
            rel_l2,
        })
    };

    for epoch in 0..cfg.epochs {
        if cfg.resample_every > 0 && epoch > 0 && epoch % cfg.resample_every == 0 {
            points = sample(problem, cfg.counts, resample_seed(cfg.seed, epoch)).map_err(TrainError::from)?;
        }
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min);
        tape.clear();
        let batch = interior_batch(&points.interior, cfg.batch_size, epoch);
        let interior = batch.as_ref().unwrap_or(&points.interior);
        let parts = match loss(&mut tape, &model, problem, interior, &points, cfg.weights) {
            Ok(p) => p,
            Err(ModelError::Graph(AdError::NonFinite { op })) => {
                return Err(fail(
                    TrainError::NonFinite {
                        epoch,
                        what: format!("loss ({op})"),
                    },
                    &model,
                    &history,
                ))
            }
            Err(e) => return Err(fail(e.into(), &model, &history)),
        };
        if epoch % cfg.eval_every == 0 {
            let rec = record(&tape, &parts, epoch, lr, &model).map_err(|e| fail(e, &model, &history))?;
            observer(&rec, &model);
            history.push(rec);
        }
        let grads = tape.backward(parts.total).map_err(|e| fail(e.into(), &model, &history))?;
        if !grads.is_finite() {
            return Err(fail(
                TrainError::NonFinite {
                    epoch,
                    what: "gradient".into(),
                },
                &model,
                &history,
            ));
        }
        let before = model.params.clone();
        adam_step(&mut model.params, &grads, &mut state, lr, &cfg.adam).map_err(|e| fail(e, &model, &history))?;
        if model.params.entries().iter().any(|e| !e.value.is_finite()) {
            model.params = before;
            return Err(fail(
                TrainError::NonFinite {
                    epoch,
                    what: "parameters".into(),
                },
                &model,
                &history,
            ));
        }
    }

    if cfg.epochs > 0 {
        tape.clear();
        let parts = loss(&mut tape, &model, problem, &points.interior, &points, cfg.weights)
            .map_err(|e| fail(e.into(), &model, &history))?;
        let lr = cosine_lr(cfg.epochs, cfg.epochs, cfg.lr_max, cfg.lr_min);
        let rec = record(&tape, &parts, cfg.epochs, lr, &model).map_err(|e| fail(e, &model, &history))?;
        observer(&rec, &model);
        history.push(rec);
    }
    Ok(TrainRun { model, history })
}
