use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use pilir::checkpoint;
use pilir::config::{parse_grid_spec, Experiment, ExperimentConfig, ModelKind, FULL_SCALE_EPOCHS};
use pilir::evaluation::{field_csv, render_pgm, EvalSet, SpectrumReport, SPECTRUM_SLICES};
use pilir::networks::{Model, ModelSpec};
use pilir::pde::PdeProblem;
use pilir::training::{train, MetricsRecord, TrainError, TrainRun};

use crate::args::{ExperimentArgs, SweepArgs};
use crate::error::{CliError, CliResult, Kind};

pub fn read_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::new(Kind::Config, format!("{}: {e}", path.display())))?;
    Ok(ExperimentConfig::parse(&text)?)
}

/// The config file (or the problem defaults) with command-line overrides
/// applied.
pub fn build_config(a: &ExperimentArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match (&a.config, &a.problem) {
        (Some(path), _) => read_config(path)?,
        (None, Some(name)) => ExperimentConfig::for_problem(name, a.model.unwrap_or(ModelKind::Pilir))?,
        (None, None) => return Err(CliError::new(Kind::Usage, "either --config or --problem is required")),
    };
    if let (Some(_), Some(name)) = (&a.config, &a.problem) {
        if *name != cfg.problem.name {
            cfg.problem = ExperimentConfig::for_problem(name, cfg.model.kind)?.problem;
        }
    }
    if let Some(kind) = a.model {
        if kind != cfg.model.kind {
            cfg.model = pilir::config::ModelSection::of_kind(kind);
        }
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = Some(e);
    }
    if a.full_scale {
        cfg.train.epochs = Some(FULL_SCALE_EPOCHS);
    }
    if let Some(s) = a.seed {
        cfg.seeds = vec![s];
    }
    if let Some(r) = &a.resolution {
        if r.contains(',') {
            return Err(CliError::new(Kind::Usage, "--resolution takes one size or AxB; use sweep for lists"));
        }
        cfg.model.resolution = Some(parse_grid_spec(r)?);
    }
    if let Some(w) = a.weighting {
        cfg.model.weighting = Some(w);
    }
    if let Some(out) = &a.out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    if let Some(name) = &a.experiment {
        cfg.experiment = Some(name.clone());
    }
    Ok(cfg)
}

pub fn coord_names(problem: &PdeProblem) -> Vec<&'static str> {
    match problem.time_axis() {
        Some(_) => vec!["x", "t"],
        None => ["x", "y", "z"][..problem.dim()].to_vec(),
    }
}

pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Field CSV, image (2-D only) and spectra (time-dependent only) of a model.
pub fn write_snapshot(dir: &Path, stem: &str, problem: &PdeProblem, set: &EvalSet, model: &Model, top: usize) -> CliResult<()> {
    let pred = set.predict(model)?;
    let names = coord_names(problem);
    write(&dir.join("fields").join(format!("{stem}.csv")), field_csv(set, &names, &pred)?)?;
    if set.grid.sizes.len() == 2 {
        write(&dir.join("fields").join(format!("{stem}.pgm")), render_pgm(&pred, &set.grid.sizes)?)?;
    }
    if problem.time_axis().is_some() {
        let report = SpectrumReport::from_eval(set, &pred, &SPECTRUM_SLICES, top)?;
        write(&dir.join("spectra").join(format!("{stem}.csv")), report.to_csv())?;
    }
    Ok(())
}

fn metrics_csv(history: &[MetricsRecord]) -> String {
    let mut s = String::from(MetricsRecord::CSV_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn train_seed(exp: &Experiment, set: &EvalSet, seed: u64, dir: &Path) -> CliResult<f64> {
    create_dir(&dir.join("fields"))?;
    create_dir(&dir.join("spectra"))?;
    let problem = &exp.problem;
    let model = Model::new(&exp.model, &problem.bounds, problem.out_dim(), seed)?;
    let mut cfg = exp.train.clone();
    cfg.seed = seed;

    let mut snapshot_err = None;
    let result = train(problem, model, &cfg, Some(set), |rec, model| {
        eprintln!(
            "[{} seed {seed}] epoch {} loss {:.4e} rel_l2 {}",
            exp.name,
            rec.epoch,
            rec.loss,
            rec.rel_l2.map(|v| format!("{v:.4e}")).unwrap_or_default()
        );
        let due = exp.snapshot_every > 0 && rec.epoch % exp.snapshot_every == 0 && rec.epoch < cfg.epochs;
        if due && snapshot_err.is_none() {
            let stem = format!("epoch_{:06}", rec.epoch);
            snapshot_err = write_snapshot(dir, &stem, problem, set, model, exp.top_k).err();
        }
    });
    if let Some(e) = snapshot_err {
        return Err(e);
    }
    let run = match result {
        Ok(run) => run,
        Err(failure) => {
            if let Some(last) = &failure.last_good {
                write(&dir.join("metrics.csv"), metrics_csv(&last.history))?;
                checkpoint::save(&dir.join("last_good.ckpt"), &last.model, problem).map_err(|e| CliError::io(dir, e))?;
            }
            let kind = match failure.error {
                TrainError::NonFinite { .. } => Kind::NonFinite,
                _ => Kind::Train,
            };
            return Err(CliError::new(kind, format!("seed {seed}: {}", failure.error)));
        }
    };
    finish_seed(exp, set, dir, &run)
}

fn finish_seed(exp: &Experiment, set: &EvalSet, dir: &Path, run: &TrainRun) -> CliResult<f64> {
    write(&dir.join("metrics.csv"), metrics_csv(&run.history))?;
    let ckpt = dir.join("final.ckpt");
    checkpoint::save(&ckpt, &run.model, &exp.problem).map_err(|e| CliError::io(&ckpt, e))?;
    write_snapshot(dir, "final", &exp.problem, set, &run.model, exp.top_k)?;
    let err = match run.final_rel_l2() {
        Some(v) => v,
        None => set.rel_l2(&run.model)?,
    };
    Ok(err)
}

/// Worker count: `PILIR_THREADS` if set, else the available cores.
pub fn thread_limit() -> CliResult<usize> {
    match std::env::var("PILIR_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::new(Kind::Usage, format!("PILIR_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summary_csv(rows: &[(u64, f64)]) -> String {
    let mut s = String::from("seed,rel_l2\n");
    for (seed, e) in rows {
        s.push_str(&format!("{seed},{e:e}\n"));
    }
    if !rows.is_empty() {
        let (mean, std) = mean_std(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
        s.push_str(&format!("mean,{mean:e}\nstd,{std:e}\n"));
    }
    s
}

pub struct Outcome {
    pub dir: PathBuf,
    /// `(seed, final rel-L2)` for every seed that finished, in seed-list order.
    pub rows: Vec<(u64, f64)>,
}

/// Runs every seed of an experiment, in parallel up to the thread limit,
/// and writes the summary. The first failure (by seed order) is returned
/// after all seeds have finished.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let exp = cfg.resolve()?;
    let dir = Path::new(&exp.out_dir).join(&exp.name);
    create_dir(&dir)?;
    write(&dir.join("config.toml"), cfg.to_toml())?;
    let set = EvalSet::for_problem(&exp.problem, Some(&exp.eval_sizes))?;

    let workers = thread_limit()?.min(exp.seeds.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CliResult<f64>>>> = Mutex::new((0..exp.seeds.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = exp.seeds.get(i) else { break };
                let r = train_seed(&exp, &set, seed, &dir.join(seed.to_string()));
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });

    let mut rows = Vec::new();
    let mut first_err = None;
    for (seed, r) in exp.seeds.iter().zip(results.into_inner().expect("results lock")) {
        match r.expect("every seed ran") {
            Ok(e) => rows.push((*seed, e)),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    write(&dir.join("summary.csv"), summary_csv(&rows))?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(Outcome { dir, rows }),
    }
}

pub fn cmd_train(a: &ExperimentArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = build_config(a)?;
    let o = run_experiment(&cfg)?;
    for (seed, e) in &o.rows {
        writeln!(out, "seed {seed} rel_l2 {e:e}").ok();
    }
    let (mean, std) = mean_std(&o.rows.iter().map(|r| r.1).collect::<Vec<_>>());
    writeln!(out, "mean {mean:e} std {std:e}").ok();
    writeln!(out, "wrote {}", o.dir.display()).ok();
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> CliResult<()> {
    let base = build_config(&a.exp)?;
    if a.exp.resolution.is_some() {
        return Err(CliError::new(Kind::Usage, "sweep takes --resolutions, not --resolution"));
    }
    let resolutions = parse_grid_spec(&a.resolutions)?;
    let probe = base.resolve()?;
    if !matches!(probe.model, ModelSpec::Pilir { .. } | ModelSpec::InterpGrid { .. }) {
        return Err(CliError::new(Kind::Config, "sweep needs a grid model (pilir or interp_grid)"));
    }
    let root = Path::new(&probe.out_dir).join(&probe.name);
    let mut table = String::from("resolution,seed,rel_l2\n");
    for &r in &resolutions {
        let mut cfg = base.clone();
        cfg.model.resolution = Some(vec![r]);
        cfg.out_dir = root.to_string_lossy().into_owned();
        cfg.experiment = Some(format!("res{r}"));
        let o = run_experiment(&cfg)?;
        for (seed, e) in o.rows {
            table.push_str(&format!("{r},{seed},{e:e}\n"));
            writeln!(out, "resolution {r} seed {seed} rel_l2 {e:e}").ok();
        }
    }
    write(&root.join("sweep.csv"), &table)?;
    writeln!(out, "wrote {}", root.join("sweep.csv").display()).ok();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_uses_n_minus_one() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn summary_lists_seeds_then_moments() {
        let s = summary_csv(&[(100, 0.5), (200, 1.5)]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "seed,rel_l2");
        assert_eq!(lines[1], "100,5e-1");
        assert_eq!(lines[3], "mean,1e0");
        assert!(lines[4].starts_with("std,7.07"));
    }

    #[test]
    fn flags_override_the_problem_defaults() {
        let a = ExperimentArgs {
            problem: Some("convection".into()),
            epochs: Some(7),
            seed: Some(3),
            resolution: Some("8".into()),
            ..Default::default()
        };
        let cfg = build_config(&a).unwrap();
        assert_eq!(cfg.train.epochs, Some(7));
        assert_eq!(cfg.seeds, vec![3]);
        assert_eq!(cfg.model.resolution, Some(vec![8]));
        assert_eq!(cfg.model.kind, ModelKind::Pilir);
    }

    #[test]
    fn missing_problem_is_a_usage_error() {
        let e = build_config(&ExperimentArgs::default()).err().unwrap();
        assert_eq!(e.kind, Kind::Usage);
    }
}
