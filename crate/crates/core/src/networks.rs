//! Coordinate networks: the grid-synthesis model and the three baselines.
//!
//! All models share one contract ([`Field`]): a jet over a batch of physical
//! coordinates goes in, a jet over the `out_dim` predicted fields comes out.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Jet, Tape, Tensor, Unary, Var};
use crate::grid::{self, FeatureGrid, GridError, Weighting};
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] AdError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("parameter mismatch:\n{0}")]
    ParamMismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    GaussianWavelet,
    Identity,
}

impl Activation {
    fn unary(self) -> Unary {
        match self {
            Activation::Tanh => Unary::Tanh,
            Activation::GaussianWavelet => Unary::GaussianWavelet,
            Activation::Identity => Unary::Identity,
        }
    }
}

/// Fully connected network; the activation follows every hidden layer and
/// the output layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<(crate::autodiff::ParamId, crate::autodiff::ParamId)>,
}

impl Mlp {
    /// Xavier-normal weights (gain 1, `std = sqrt(2 / (fan_in + fan_out))`)
    /// and zero biases, registered as `{prefix}.{layer}.w|b`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        sizes: &[usize],
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(ModelError::Invalid(format!("{prefix}: bad layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, io)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let w = Tensor::from_fn(fan_out, fan_in, |_, _| normal.sample(rng));
                let w = store.add(format!("{prefix}.{l}.w"), vec![fan_out, fan_in], w);
                let b = store.add(format!("{prefix}.{l}.b"), vec![fan_out], Tensor::zeros(1, fan_out));
                (w, b)
            })
            .collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            activation,
            layers,
        })
    }

    pub fn forward(&self, t: &mut Tape, bound: &[Var], x: &Jet) -> Result<Jet, AdError> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            h = h.affine(t, bound[w.0], bound[b.0])?;
            if l < last {
                h = h.unary(t, self.activation.unary())?;
            }
        }
        Ok(h)
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }
}

fn default_tanh() -> Activation {
    Activation::Tanh
}

fn default_grid_init() -> f64 {
    0.1
}

/// Architecture and hyperparameters of a model, as stored in configs and
/// checkpoint manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Pilir {
        grids: usize,
        resolution: Vec<usize>,
        channels: usize,
        synth_hidden: Vec<usize>,
        synth_out: usize,
        #[serde(default = "default_tanh")]
        synth_activation: Activation,
        head_hidden: Vec<usize>,
        weighting: Weighting,
        #[serde(default = "default_grid_init")]
        grid_init: f64,
    },
    InterpGrid {
        grids: usize,
        resolution: Vec<usize>,
        channels: usize,
        head_hidden: Vec<usize>,
        weighting: Weighting,
        #[serde(default = "default_grid_init")]
        grid_init: f64,
    },
    MlpPinn {
        hidden: Vec<usize>,
    },
    WaveletPinn {
        hidden: Vec<usize>,
    },
}

impl ModelSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelSpec::Pilir { .. } => "pilir",
            ModelSpec::InterpGrid { .. } => "interp_grid",
            ModelSpec::MlpPinn { .. } => "mlp_pinn",
            ModelSpec::WaveletPinn { .. } => "wavelet_pinn",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Arch {
    Pilir {
        grid: FeatureGrid,
        synth: Mlp,
        head: Mlp,
        weighting: Weighting,
    },
    Interp {
        grid: FeatureGrid,
        head: Mlp,
        weighting: Weighting,
    },
    Plain {
        net: Mlp,
    },
}

/// Anything that maps coordinate jets to field jets.
pub trait Field {
    fn input_dim(&self) -> usize;
    fn eval(&self, t: &mut Tape, x: &Jet) -> Result<Jet, ModelError>;
}

/// A trainable model: architecture plus its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub bounds: Vec<(f64, f64)>,
    pub out_dim: usize,
    pub params: ParamStore,
    arch: Arch,
}

impl Model {
    /// Builds and initializes a model. Initialization draws from ChaCha8
    /// seeded with `seed`, stream 3 (streams 0 to 2 belong to point sampling).
    pub fn new(spec: &ModelSpec, bounds: &[(f64, f64)], out_dim: usize, seed: u64) -> Result<Self, ModelError> {
        let d = bounds.len();
        if d == 0 || out_dim == 0 {
            return Err(ModelError::Invalid("empty input or output dimension".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        let mut store = ParamStore::new();
        let check_res = |res: &[usize]| {
            if res.len() != d {
                Err(ModelError::Invalid(format!(
                    "grid resolution has {} axes but the domain has {d}",
                    res.len()
                )))
            } else {
                Ok(())
            }
        };
        let arch = match spec {
            ModelSpec::Pilir {
                grids,
                resolution,
                channels,
                synth_hidden,
                synth_out,
                synth_activation,
                head_hidden,
                weighting,
                grid_init,
            } => {
                check_res(resolution)?;
                let grid = FeatureGrid::init(&mut store, *grids, resolution, *channels, *grid_init, &mut rng)?;
                let mut sizes = vec![channels + d];
                sizes.extend(synth_hidden);
                sizes.push(*synth_out);
                let synth = Mlp::init(&mut store, "synth", &sizes, *synth_activation, &mut rng)?;
                let mut sizes = vec![grids * synth_out];
                sizes.extend(head_hidden);
                sizes.push(out_dim);
                let head = Mlp::init(&mut store, "head", &sizes, Activation::Tanh, &mut rng)?;
                Arch::Pilir {
                    grid,
                    synth,
                    head,
                    weighting: *weighting,
                }
            }
            ModelSpec::InterpGrid {
                grids,
                resolution,
                channels,
                head_hidden,
                weighting,
                grid_init,
            } => {
                check_res(resolution)?;
                let grid = FeatureGrid::init(&mut store, *grids, resolution, *channels, *grid_init, &mut rng)?;
                let mut sizes = vec![grids * channels];
                sizes.extend(head_hidden);
                sizes.push(out_dim);
                let head = Mlp::init(&mut store, "head", &sizes, Activation::Tanh, &mut rng)?;
                Arch::Interp {
                    grid,
                    head,
                    weighting: *weighting,
                }
            }
            ModelSpec::MlpPinn { hidden } | ModelSpec::WaveletPinn { hidden } => {
                let act = if matches!(spec, ModelSpec::MlpPinn { .. }) {
                    Activation::Tanh
                } else {
                    Activation::GaussianWavelet
                };
                let mut sizes = vec![d];
                sizes.extend(hidden);
                sizes.push(out_dim);
                Arch::Plain {
                    net: Mlp::init(&mut store, "mlp", &sizes, act, &mut rng)?,
                }
            }
        };
        Ok(Model {
            spec: spec.clone(),
            bounds: bounds.to_vec(),
            out_dim,
            params: store,
            arch,
        })
    }

    /// Rebuilds a model around existing parameters, checking that names and
    /// shapes match the architecture exactly.
    pub fn with_params(
        spec: &ModelSpec,
        bounds: &[(f64, f64)],
        out_dim: usize,
        params: ParamStore,
    ) -> Result<Self, ModelError> {
        let mut model = Model::new(spec, bounds, out_dim, 0)?;
        let mut diff = Vec::new();
        for e in model.params.entries() {
            match params.find(&e.name) {
                None => diff.push(format!("  missing {} {:?}", e.name, e.shape)),
                Some(id) if params.entry(id).shape != e.shape => diff.push(format!(
                    "  {}: expected {:?}, found {:?}",
                    e.name,
                    e.shape,
                    params.entry(id).shape
                )),
                Some(_) => {}
            }
        }
        for e in params.entries() {
            if model.params.find(&e.name).is_none() {
                diff.push(format!("  unexpected {} {:?}", e.name, e.shape));
            }
        }
        if !diff.is_empty() {
            return Err(ModelError::ParamMismatch(diff.join("\n")));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.entry(id).name.clone();
            let src = params.find(&name).expect("checked above");
            let value = params.value(src).clone();
            let dst = model.params.value_mut(id);
            *dst = Tensor::new(dst.rows(), dst.cols(), value.into_data())?;
        }
        Ok(model)
    }

    pub fn grid(&self) -> Option<&FeatureGrid> {
        match &self.arch {
            Arch::Pilir { grid, .. } | Arch::Interp { grid, .. } => Some(grid),
            Arch::Plain { .. } => None,
        }
    }

    pub fn synth(&self) -> Option<&Mlp> {
        match &self.arch {
            Arch::Pilir { synth, .. } => Some(synth),
            _ => None,
        }
    }

    pub fn head(&self) -> Option<&Mlp> {
        match &self.arch {
            Arch::Pilir { head, .. } | Arch::Interp { head, .. } => Some(head),
            Arch::Plain { net } => Some(net),
        }
    }

    /// Configures the synthesis network as a passthrough of the latent
    /// vector: weights `[I | 0]`, zero bias. Requires a single-layer synth
    /// with `synth_out == channels`.
    pub fn set_identity_synth(&mut self) -> Result<(), ModelError> {
        let Arch::Pilir { grid, synth, .. } = &self.arch else {
            return Err(ModelError::Invalid("identity synth needs a pilir model".into()));
        };
        if synth.layers.len() != 1 || synth.out_dim() != grid.channels {
            return Err(ModelError::Invalid(
                "identity synth needs one synth layer with synth_out == channels".into(),
            ));
        }
        let (w, b) = synth.layers[0];
        let (rows, cols) = self.params.value(w).shape();
        *self.params.value_mut(w) = Tensor::from_fn(rows, cols, |r, c| if r == c { 1.0 } else { 0.0 });
        *self.params.value_mut(b) = Tensor::zeros(1, rows);
        Ok(())
    }

    /// Feature vector fed to the decoding head: the weighted sum of per-corner
    /// synthesized features (or of raw latents for `interp_grid`), with the
    /// parallel grids side by side.
    pub fn synthesize(&self, t: &mut Tape, bound: &[Var], x: &Jet) -> Result<Jet, ModelError> {
        let (grid, synth, weighting) = match &self.arch {
            Arch::Pilir {
                grid, synth, weighting, ..
            } => (grid, Some(synth), *weighting),
            Arch::Interp { grid, weighting, .. } => (grid, None, *weighting),
            Arch::Plain { .. } => return Err(ModelError::Invalid("baseline MLPs have no feature grid".into())),
        };
        let lk = grid::lookup(t, x, &self.bounds, &grid.resolution, weighting)?;
        let m = grid.num_grids;
        let k = grid.corners_per_cell();
        let mut zs = Vec::with_capacity(m);
        for &p in &grid.params {
            zs.push(t.gather_rows(bound[p.0], lk.vertex_rows.clone())?);
        }
        let z = if m == 1 { zs[0] } else { t.concat_rows(&zs)? };
        let z = Jet::constant(z, x);
        let tile = |t: &mut Tape, j: &Jet| -> Result<Jet, AdError> {
            if m == 1 {
                Ok(j.clone())
            } else {
                Jet::concat_rows(t, &vec![j; m])
            }
        };
        let w = tile(t, &lk.weights)?;
        let contrib = match synth {
            Some(net) => {
                let off = tile(t, &lk.offsets)?;
                let input = Jet::concat_cols(t, &[&z, &off])?;
                net.forward(t, bound, &input)?
            }
            None => z,
        };
        let weighted = contrib.mul(t, &w)?;
        let summed = weighted.sum_blocks(t, m, k)?;
        Ok(if m == 1 { summed } else { summed.rows_to_cols(t, m)? })
    }

    pub fn forward(&self, t: &mut Tape, bound: &[Var], x: &Jet) -> Result<Jet, ModelError> {
        match &self.arch {
            Arch::Pilir { head, .. } | Arch::Interp { head, .. } => {
                let h = self.synthesize(t, bound, x)?;
                Ok(head.forward(t, bound, &h)?)
            }
            Arch::Plain { net } => {
                // Inputs mapped affinely onto [-1, 1].
                let scale: Vec<f64> = self.bounds.iter().map(|&(lo, hi)| 2.0 / (hi - lo)).collect();
                let shift: Vec<f64> = self.bounds.iter().map(|&(lo, hi)| -(hi + lo) / (hi - lo)).collect();
                let s = t.constant(Tensor::row(&scale))?;
                let c = t.constant(Tensor::row(&shift))?;
                let u = x.mul_const(t, s)?.add_const(t, c)?;
                Ok(net.forward(t, bound, &u)?)
            }
        }
    }
}

impl Field for Model {
    fn input_dim(&self) -> usize {
        self.bounds.len()
    }

    fn eval(&self, t: &mut Tape, x: &Jet) -> Result<Jet, ModelError> {
        let bound = self.params.bind(t)?;
        self.forward(t, &bound, x)
    }
}

/// Forward pass on a batch of points with no derivative tracking.
pub fn predict(field: &dyn Field, points: &Tensor, chunk: usize) -> Result<Tensor, ModelError> {
    let mut out: Vec<f64> = Vec::with_capacity(points.rows());
    let mut cols = 0;
    let mut t = Tape::new();
    let chunk = chunk.max(1);
    let mut start = 0;
    while start < points.rows() {
        let end = (start + chunk).min(points.rows());
        let block = Tensor::from_fn(end - start, points.cols(), |r, c| points.get(start + r, c));
        t.clear();
        let x = Jet::seed(&mut t, &block, &[])?;
        let y = field.eval(&mut t, &x)?;
        let v = t.value(y.v);
        cols = v.cols();
        out.extend_from_slice(v.data());
        start = end;
    }
    Ok(Tensor::new(points.rows(), cols, out)?)
}
