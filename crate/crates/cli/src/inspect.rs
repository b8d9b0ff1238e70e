use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pilir::checkpoint::Checkpoint;
use pilir::config::parse_grid_spec;
use pilir::evaluation::{reference_solve, rel_l2, render_pgm, EvalGrid, EvalSet, SolverSettings, SpectrumReport, SPECTRUM_SLICES};
use pilir::networks::{Model, ModelSpec};
use pilir::pde::PdeProblem;
use serde_json::Value;

use crate::args::{EvalArgs, ReferenceArgs, SpectrumArgs};
use crate::error::{CliError, CliResult, Kind};
use crate::run::{coord_names, read_config, write};

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Checkpoint::decode(&bytes).map_err(|e| CliError::new(Kind::Checkpoint, format!("{}: {e}", path.display())))
}

/// Field-by-field differences between two model specs, as `key: a != b`.
pub fn spec_diff(manifest: &ModelSpec, config: &ModelSpec) -> Vec<String> {
    let to_map = |s: &ModelSpec| match serde_json::to_value(s) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("model specs serialize to objects"),
    };
    let (a, b) = (to_map(manifest), to_map(config));
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| {
            let show = |v: Option<&Value>| v.map(Value::to_string).unwrap_or_else(|| "-".into());
            format!("{k}: manifest {} != config {}", show(a.get(k)), show(b.get(k)))
        })
        .collect()
}

fn eval_sizes(grid: Option<&str>, problem: &PdeProblem) -> CliResult<Vec<usize>> {
    let sizes = match grid {
        Some(g) => parse_grid_spec(g)?,
        None => return Ok(problem.defaults().eval_sizes),
    };
    let sizes = if sizes.len() == 1 { vec![sizes[0]; problem.dim()] } else { sizes };
    if sizes.len() != problem.dim() {
        return Err(CliError::new(
            Kind::Usage,
            format!("grid has {} axes, {} needs {}", sizes.len(), problem.name, problem.dim()),
        ));
    }
    Ok(sizes)
}

fn resolve_problem(name: Option<&str>, ckpt: Option<&Checkpoint>) -> CliResult<PdeProblem> {
    match (name, ckpt) {
        (Some(n), _) => Ok(PdeProblem::by_name(n)?),
        (None, Some(c)) => Ok(c.problem()?),
        (None, None) => Err(CliError::new(Kind::Usage, "either --checkpoint or --problem is required")),
    }
}

fn checked_model(ckpt: &Checkpoint, problem: &PdeProblem) -> CliResult<Model> {
    let model = ckpt.to_model()?;
    if model.bounds.len() != problem.dim() {
        return Err(CliError::new(
            Kind::Shape,
            format!(
                "checkpoint model takes {} inputs, problem {} has {}",
                model.bounds.len(),
                problem.name,
                problem.dim()
            ),
        ));
    }
    Ok(model)
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    if let Some(path) = &a.config {
        let exp = read_config(path)?.resolve()?;
        let diff = spec_diff(&ckpt.model, &exp.model);
        if !diff.is_empty() {
            return Err(CliError::new(Kind::Shape, format!("checkpoint does not match config: {}", diff.join(", "))));
        }
    }
    let problem = resolve_problem(a.problem.as_deref(), Some(&ckpt))?;
    let model = checked_model(&ckpt, &problem)?;
    let sizes = eval_sizes(a.grid.as_deref(), &problem)?;
    let set = EvalSet::for_problem(&problem, Some(&sizes))?;
    let pred = set.predict(&model)?;
    let err = rel_l2(&set.truth, &pred)?;

    let dir = match &a.out {
        Some(d) => d.clone(),
        None => a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let names = coord_names(&problem);
    write(&dir.join("eval_field.csv"), pilir::evaluation::field_csv(&set, &names, &pred)?)?;
    if sizes.len() == 2 {
        write(&dir.join("eval_field.pgm"), render_pgm(&pred, &sizes)?)?;
    }
    writeln!(out, "{err:?}").ok();
    Ok(())
}

fn parse_times(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::new(Kind::Usage, format!("bad time '{t}'")))
        })
        .collect()
}

pub fn cmd_spectrum(a: &SpectrumArgs, out: &mut dyn Write) -> CliResult<()> {
    let ckpt = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let problem = resolve_problem(a.problem.as_deref(), ckpt.as_ref())?;
    if problem.time_axis().is_none() {
        return Err(CliError::new(Kind::Eval, format!("{} has no time axis to take spectra along", problem.name)));
    }
    let sizes = eval_sizes(a.grid.as_deref(), &problem)?;
    let set = EvalSet::for_problem(&problem, Some(&sizes))?;
    let pred = match &ckpt {
        Some(c) => set.predict(&checked_model(c, &problem)?)?,
        None => set.truth.clone(),
    };
    let times = match &a.times {
        Some(t) => parse_times(t)?,
        None => SPECTRUM_SLICES.to_vec(),
    };
    let report = SpectrumReport::from_eval(&set, &pred, &times, a.top_k)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    write(&a.out.join("spectrum.csv"), report.to_csv())?;
    let fmt = |top: &[(usize, f64)]| top.iter().map(|(k, v)| format!("{k}:{v:.4e}")).collect::<Vec<_>>().join(" ");
    for s in &report.slices {
        writeln!(out, "t {} truth {}", s.t, fmt(&s.top_truth)).ok();
        if ckpt.is_some() {
            writeln!(out, "t {} pred  {}", s.t, fmt(&s.top_pred)).ok();
        }
    }
    Ok(())
}

pub fn cmd_reference(a: &ReferenceArgs, out: &mut dyn Write) -> CliResult<()> {
    let problem = match (&a.config, &a.problem) {
        (Some(path), _) => read_config(path)?.resolve()?.problem,
        (None, Some(n)) => PdeProblem::by_name(n)?,
        (None, None) => return Err(CliError::new(Kind::Usage, "either --config or --problem is required")),
    };
    if problem.time_axis().is_none() {
        return Err(CliError::new(Kind::Eval, format!("no reference solver for {}", problem.name)));
    }
    let defaults = SolverSettings::default();
    let settings = SolverSettings {
        modes: a.modes.unwrap_or(defaults.modes),
        dt: a.dt.unwrap_or(defaults.dt),
    };
    let sizes = eval_sizes(a.grid.as_deref(), &problem)?;
    let grid = EvalGrid::for_problem(&problem, Some(&sizes))?;
    let sol = reference_solve(&problem, &settings, &grid.axes[1])?;
    let values = sol.sample(&grid)?;

    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let mut csv = String::from("x,t,u\n");
    let (nx, nt) = (sizes[0], sizes[1]);
    for i in 0..nx {
        for j in 0..nt {
            csv.push_str(&format!("{:e},{:e},{:e}\n", grid.axes[0][i], grid.axes[1][j], values[i * nt + j]));
        }
    }
    write(&a.out.join("reference.csv"), csv)?;
    write(&a.out.join("reference.pgm"), render_pgm(&values, &sizes)?)?;
    writeln!(out, "wrote {}", a.out.join("reference.csv").display()).ok();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pilir::grid::Weighting;

    #[test]
    fn spec_diff_names_changed_fields() {
        let a = ModelSpec::InterpGrid {
            grids: 1,
            resolution: vec![16, 16],
            channels: 4,
            head_hidden: vec![16],
            weighting: Weighting::Cosine,
            grid_init: 0.1,
        };
        let mut b = a.clone();
        if let ModelSpec::InterpGrid { resolution, .. } = &mut b {
            *resolution = vec![8, 8];
        }
        assert!(spec_diff(&a, &a).is_empty());
        assert_eq!(spec_diff(&a, &b), vec!["resolution: manifest [16,16] != config [8,8]".to_string()]);
        let c = ModelSpec::MlpPinn { hidden: vec![4] };
        let d = spec_diff(&a, &c);
        assert!(d.iter().any(|l| l.starts_with("kind:")));
        assert!(d.iter().any(|l| l.starts_with("hidden:")));
    }
}
