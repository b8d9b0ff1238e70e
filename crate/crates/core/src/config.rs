//! Experiment configuration files (TOML).
//!
//! ```toml
//! experiment = "helmholtz_pilir"   # optional, defaults to "{problem}_{model}"
//! out_dir = "out"
//! seeds = [100, 200, 300, 400, 500]
//!
//! [problem]
//! name = "helmholtz2d"
//! a1 = 4.0                         # any constant the problem exposes
//! a2 = 4.0
//!
//! [model]
//! kind = "pilir"                   # pilir | interp_grid | mlp_pinn | wavelet_pinn
//! resolution = [16, 16]            # everything below is optional and
//! weighting = "cosine"             # falls back to the problem defaults
//!
//! [train]
//! epochs = 20000
//! lr_max = 0.01
//!
//! [eval]
//! sizes = [256, 256]
//! ```
//!
//! Unknown keys are rejected everywhere. Model keys that do not apply to the
//! chosen kind (`hidden` on a grid model, `channels` on an MLP) are errors.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::grid::Weighting;
use crate::networks::{Activation, ModelSpec};
use crate::pde::{PdeProblem, ProblemError};
use crate::sampling::PointCounts;
use crate::training::{AdamConfig, LossWeights, TrainConfig};

pub const DESK_EPOCHS: usize = 20_000;
pub const FULL_SCALE_EPOCHS: usize = 100_000;
pub const DEFAULT_SEEDS: [u64; 1] = [100];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Pilir,
    InterpGrid,
    MlpPinn,
    WaveletPinn,
}

impl std::str::FromStr for ModelKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pilir" => Ok(ModelKind::Pilir),
            "interp_grid" => Ok(ModelKind::InterpGrid),
            "mlp_pinn" => Ok(ModelKind::MlpPinn),
            "wavelet_pinn" => Ok(ModelKind::WaveletPinn),
            other => Err(ConfigError::Invalid(format!("unknown model kind '{other}'"))),
        }
    }
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pilir => "pilir",
            ModelKind::InterpGrid => "interp_grid",
            ModelKind::MlpPinn => "mlp_pinn",
            ModelKind::WaveletPinn => "wavelet_pinn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSection {
    pub name: String,
    /// Overrides of the problem's named constants.
    #[serde(flatten)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grids: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth_hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth_out: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth_activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighting: Option<Weighting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
}

impl ModelSection {
    pub fn of_kind(kind: ModelKind) -> Self {
        ModelSection {
            kind,
            grids: None,
            resolution: None,
            channels: None,
            synth_hidden: None,
            synth_out: None,
            synth_activation: None,
            head_hidden: None,
            weighting: None,
            grid_init: None,
            hidden: None,
        }
    }

    /// Fills unset hyperparameters from the problem defaults.
    pub fn resolve(&self, problem: &PdeProblem) -> Result<ModelSpec, ConfigError> {
        let d = problem.defaults();
        let dim = problem.dim();
        let grid_keys = [
            ("grids", self.grids.is_some()),
            ("resolution", self.resolution.is_some()),
            ("channels", self.channels.is_some()),
            ("head_hidden", self.head_hidden.is_some()),
            ("weighting", self.weighting.is_some()),
            ("grid_init", self.grid_init.is_some()),
        ];
        let synth_keys = [
            ("synth_hidden", self.synth_hidden.is_some()),
            ("synth_out", self.synth_out.is_some()),
            ("synth_activation", self.synth_activation.is_some()),
        ];
        let reject = |keys: &[(&str, bool)]| -> Result<(), ConfigError> {
            match keys.iter().find(|k| k.1) {
                Some((k, _)) => Err(ConfigError::Invalid(format!("model key '{k}' does not apply to {}", self.kind.name()))),
                None => Ok(()),
            }
        };
        let resolution = match &self.resolution {
            None => vec![d.resolution; dim],
            Some(r) if r.len() == 1 => vec![r[0]; dim],
            Some(r) if r.len() == dim => r.clone(),
            Some(r) => {
                return Err(ConfigError::Invalid(format!("resolution has {} entries for a {dim}-D problem", r.len())));
            }
        };
        let spec = match self.kind {
            ModelKind::Pilir => {
                if self.hidden.is_some() {
                    reject(&[("hidden", true)])?;
                }
                ModelSpec::Pilir {
                    grids: self.grids.unwrap_or(d.grids),
                    resolution,
                    channels: self.channels.unwrap_or(d.channels),
                    synth_hidden: self.synth_hidden.clone().unwrap_or(d.synth_hidden.clone()),
                    synth_out: self.synth_out.unwrap_or(16),
                    synth_activation: self.synth_activation.unwrap_or(Activation::Tanh),
                    head_hidden: self.head_hidden.clone().unwrap_or(vec![16]),
                    weighting: self.weighting.unwrap_or(d.weighting),
                    grid_init: self.grid_init.unwrap_or(0.1),
                }
            }
            ModelKind::InterpGrid => {
                reject(&synth_keys)?;
                if self.hidden.is_some() {
                    reject(&[("hidden", true)])?;
                }
                ModelSpec::InterpGrid {
                    grids: self.grids.unwrap_or(d.grids),
                    resolution,
                    channels: self.channels.unwrap_or(d.channels),
                    head_hidden: self.head_hidden.clone().unwrap_or(vec![16]),
                    weighting: self.weighting.unwrap_or(d.weighting),
                    grid_init: self.grid_init.unwrap_or(0.1),
                }
            }
            ModelKind::MlpPinn | ModelKind::WaveletPinn => {
                reject(&grid_keys)?;
                reject(&synth_keys)?;
                let hidden = self.hidden.clone().unwrap_or(d.baseline_hidden.clone());
                if self.kind == ModelKind::MlpPinn {
                    ModelSpec::MlpPinn { hidden }
                } else {
                    ModelSpec::WaveletPinn { hidden }
                }
            }
        };
        Ok(spec)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_ic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_bc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interior: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resample_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

impl TrainSection {
    pub fn resolve(&self, problem: &PdeProblem, seed: u64) -> Result<TrainConfig, ConfigError> {
        let base = TrainConfig::for_problem(problem, seed);
        let counts = PointCounts {
            interior: self.interior.unwrap_or(base.counts.interior),
            initial: self.initial.unwrap_or(base.counts.initial),
            boundary: self.boundary.unwrap_or(base.counts.boundary),
        };
        let cfg = TrainConfig {
            epochs: self.epochs.unwrap_or(DESK_EPOCHS),
            lr_max: self.lr_max.unwrap_or(base.lr_max),
            lr_min: self.lr_min.unwrap_or(base.lr_min),
            adam: AdamConfig {
                beta1: self.beta1.unwrap_or(base.adam.beta1),
                beta2: self.beta2.unwrap_or(base.adam.beta2),
                eps: self.eps.unwrap_or(base.adam.eps),
            },
            weights: LossWeights {
                residual: self.lambda_r.unwrap_or(base.weights.residual),
                initial: self.lambda_ic.unwrap_or(base.weights.initial),
                boundary: self.lambda_bc.unwrap_or(base.weights.boundary),
            },
            counts,
            seed,
            eval_every: self.eval_every.unwrap_or(base.eval_every),
            resample_every: self.resample_every.unwrap_or(base.resample_every),
            batch_size: self.batch_size.or(base.batch_size),
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Points per axis; defaults to the problem's evaluation grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
    /// Write field and spectrum snapshots every this many epochs; 0 writes
    /// only the final ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
    /// Number of spectral components listed per slice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub problem: ProblemSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_out_dir() -> String {
    "out".into()
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

/// A config with every default resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub name: String,
    pub out_dir: String,
    pub seeds: Vec<u64>,
    pub problem: PdeProblem,
    pub model: ModelSpec,
    /// Training settings; `seed` is replaced per run.
    pub train: TrainConfig,
    pub eval_sizes: Vec<usize>,
    pub snapshot_every: usize,
    pub top_k: usize,
}

impl ExperimentConfig {
    /// The problem's appendix defaults with the given model kind.
    pub fn for_problem(problem: &str, kind: ModelKind) -> Result<Self, ConfigError> {
        PdeProblem::by_name(problem)?;
        Ok(ExperimentConfig {
            experiment: None,
            out_dir: default_out_dir(),
            seeds: default_seeds(),
            problem: ProblemSection {
                name: problem.into(),
                params: BTreeMap::new(),
            },
            model: ModelSection::of_kind(kind),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string().trim().replace('\n', " ")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<Experiment, ConfigError> {
        let problem = PdeProblem::with_params(&self.problem.name, self.problem.params.iter().map(|(k, v)| (k.as_str(), *v)))?;
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seed list is empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid("seed list has duplicates".into()));
        }
        let model = self.model.resolve(&problem)?;
        let train = self.train.resolve(&problem, self.seeds[0])?;
        let eval_sizes = self.eval.sizes.clone().unwrap_or(problem.defaults().eval_sizes);
        if eval_sizes.len() != problem.dim() || eval_sizes.iter().any(|&s| s < 2) {
            return Err(ConfigError::Invalid(format!(
                "eval sizes need {} entries, each >= 2",
                problem.dim()
            )));
        }
        let name = self
            .experiment
            .clone()
            .unwrap_or_else(|| format!("{}_{}", self.problem.name, self.model.kind.name()));
        if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
            return Err(ConfigError::Invalid(format!("experiment name '{name}' is not a plain directory name")));
        }
        Ok(Experiment {
            name,
            out_dir: self.out_dir.clone(),
            seeds: self.seeds.clone(),
            problem,
            model,
            train,
            eval_sizes,
            snapshot_every: self.eval.snapshot_every.unwrap_or(0),
            top_k: self.eval.top_k.unwrap_or(10),
        })
    }
}

/// Parses a resolution list such as `16`, `16x16` or `8,12,16` (the last
/// form is a sweep list, one resolution per entry).
pub fn parse_grid_spec(text: &str) -> Result<Vec<usize>, ConfigError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(ConfigError::Invalid("empty grid spec".into()));
    }
    let sep = if text.contains('x') { 'x' } else { ',' };
    text.split(sep)
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| (2..=1 << 20).contains(&n))
                .ok_or_else(|| ConfigError::Invalid(format!("bad grid size '{p}' (need an integer >= 2)")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = r#"
experiment = "h"
seeds = [100, 200]

[problem]
name = "helmholtz2d"
a1 = 4.0
a2 = 4.0

[model]
kind = "pilir"
resolution = [16]
weighting = "cosine"

[train]
epochs = 10
interior = 100
boundary = 20
"#;

    #[test]
    fn sample_resolves() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        let e = cfg.resolve().unwrap();
        assert_eq!(e.name, "h");
        assert_eq!(e.seeds, vec![100, 200]);
        assert_eq!(e.problem.params()[0], ("a1".to_string(), 4.0));
        match e.model {
            ModelSpec::Pilir { resolution, grids, channels, .. } => {
                assert_eq!(resolution, vec![16, 16]);
                assert_eq!((grids, channels), (1, 4));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(e.train.epochs, 10);
        assert_eq!(e.train.lr_max, 0.01);
        assert_eq!(e.eval_sizes, vec![256, 256]);
    }

    #[test]
    fn defaults_follow_the_problem() {
        let e = ExperimentConfig::for_problem("convection", ModelKind::Pilir).unwrap().resolve().unwrap();
        assert_eq!(e.train.epochs, DESK_EPOCHS);
        assert_eq!(e.train.lr_max, 0.001);
        assert_eq!(e.train.counts.interior, 10_000);
        assert!(matches!(e.model, ModelSpec::Pilir { grids: 16, .. }));
        let e = ExperimentConfig::for_problem("helmholtz2d", ModelKind::MlpPinn).unwrap().resolve().unwrap();
        assert_eq!(e.model, ModelSpec::MlpPinn { hidden: vec![100; 7] });
    }

    #[test]
    fn unknown_and_misplaced_keys_fail() {
        let bad_top = format!("{SAMPLE}\ncolour = 1\n");
        assert!(matches!(ExperimentConfig::parse(&bad_top), Err(ConfigError::Parse(_))));
        let bad_train = SAMPLE.replace("epochs = 10", "epochz = 10");
        assert!(ExperimentConfig::parse(&bad_train).is_err());
        let bad_param = SAMPLE.replace("a2 = 4.0", "beta = 4.0");
        assert!(ExperimentConfig::parse(&bad_param).unwrap().resolve().is_err());
        let misplaced = SAMPLE.replace("weighting = \"cosine\"", "hidden = [10]");
        assert!(ExperimentConfig::parse(&misplaced).unwrap().resolve().is_err());
        let mlp_with_grid = SAMPLE.replace("kind = \"pilir\"", "kind = \"mlp_pinn\"");
        assert!(ExperimentConfig::parse(&mlp_with_grid).unwrap().resolve().is_err());
    }

    #[test]
    fn grid_specs() {
        assert_eq!(parse_grid_spec("16").unwrap(), vec![16]);
        assert_eq!(parse_grid_spec("16x8").unwrap(), vec![16, 8]);
        assert_eq!(parse_grid_spec("8,12,16").unwrap(), vec![8, 12, 16]);
        assert!(parse_grid_spec("1").is_err());
        assert!(parse_grid_spec("").is_err());
        assert!(parse_grid_spec("8,,16").is_err());
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        (
            proptest::option::of("[a-z]{1,8}"),
            proptest::collection::vec(0u64..(i64::MAX as u64), 1..4),
            prop_oneof![Just(ModelKind::Pilir), Just(ModelKind::MlpPinn), Just(ModelKind::InterpGrid)],
            proptest::option::of(2usize..40),
            proptest::option::of(1usize..100_000),
            proptest::option::of(1e-6f64..1.0),
            proptest::option::of(-100.0f64..100.0),
        )
            .prop_map(|(exp, seeds, kind, res, epochs, lr, beta)| {
                let mut c = ExperimentConfig::for_problem("convection", kind).unwrap();
                c.experiment = exp;
                c.seeds = seeds;
                c.model.resolution = res.map(|r| vec![r, r]);
                c.train.epochs = epochs;
                c.train.lr_max = lr;
                if let Some(b) = beta {
                    c.problem.params.insert("beta".into(), b);
                }
                c
            })
    }

    proptest! {
        #[test]
        fn parse_serialize_parse_is_identity(cfg in arb_config()) {
            let text = cfg.to_toml();
            let back = ExperimentConfig::parse(&text).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(ExperimentConfig::parse(&back.to_toml()).unwrap(), back);
        }
    }
}
