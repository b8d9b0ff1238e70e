use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pilir::checkpoint::{self, Checkpoint};
use pilir::config::{ExperimentConfig, ModelKind};
use pilir::networks::Model;

fn pilir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pilir"))
        .args(args)
        .env("PILIR_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small convection experiment: one 4-cell grid, a few points, a coarse
/// evaluation grid.
fn small_config(out: &Path, seeds: &str, epochs: usize, extra_train: &str) -> String {
    format!(
        r#"
experiment = "small"
out_dir = "{}"
seeds = {seeds}

[problem]
name = "convection"

[model]
kind = "pilir"
grids = 1
resolution = [4]

[train]
epochs = {epochs}
interior = 64
initial = 16
boundary = 16
eval_every = 10
{extra_train}

[eval]
sizes = [16, 5]
"#,
        out.display()
    )
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn zero_model_on_helmholtz_evaluates_to_one() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = ExperimentConfig::for_problem("helmholtz2d", ModelKind::Pilir).unwrap().resolve().unwrap();
    let mut model = Model::new(&exp.model, &exp.problem.bounds, 1, 1).unwrap();
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        if model.params.entry(id).name.starts_with("head.") {
            model.params.value_mut(id).data_mut().fill(0.0);
        }
    }
    let ckpt = tmp.path().join("zero.ckpt");
    checkpoint::save(&ckpt, &model, &exp.problem).unwrap();
    let o = pilir(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--grid", "32x32"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "1.0");
    assert!(tmp.path().join("eval_field.csv").exists());
    let pgm = fs::read(tmp.path().join("eval_field.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n65535\n"));
}

#[test]
fn zero_epochs_write_initial_checkpoint_and_header_only_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config(tmp.path(), "[5]", 0, ""));
    let o = pilir(&["train", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = tmp.path().join("small/5");
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics, "epoch,lr,loss,loss_r,loss_ic,loss_bc,rel_l2\n");

    let exp = ExperimentConfig::parse(&fs::read_to_string(&cfg).unwrap()).unwrap().resolve().unwrap();
    let fresh = Model::new(&exp.model, &exp.problem.bounds, 1, 5).unwrap();
    let saved = Checkpoint::decode(&fs::read(run.join("final.ckpt")).unwrap()).unwrap().to_model().unwrap();
    assert_eq!(saved, fresh);
    assert!(run.join("fields/final.csv").exists());
    assert!(run.join("spectra/final.csv").exists());

    // The checkpoint is self-describing: eval needs nothing else.
    let o = pilir(&["eval", "--checkpoint", run.join("final.ckpt").to_str().unwrap(), "--grid", "16x5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert!(v.is_finite() && v > 0.0);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        fs::create_dir_all(&out).unwrap();
        let cfg = write_config(&out, &small_config(&out, "[11]", 30, ""));
        let o = pilir(&["train", "--config", &cfg]);
        assert!(o.status.success(), "{}", stderr(&o));
        let dir = out.join("small/11");
        outputs.push((
            fs::read(dir.join("metrics.csv")).unwrap(),
            fs::read(dir.join("final.ckpt")).unwrap(),
            fs::read(out.join("small/summary.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let metrics = String::from_utf8(outputs[0].0.clone()).unwrap();
    let epochs: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["0", "10", "20", "30"]);
}

#[test]
fn seed_list_gives_one_directory_per_seed_and_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config(tmp.path(), "[100, 200, 300, 400, 500]", 3, ""));
    let o = pilir(&["train", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    for seed in [100, 200, 300, 400, 500] {
        assert!(tmp.path().join(format!("small/{seed}/final.ckpt")).exists());
    }
    let summary = fs::read_to_string(tmp.path().join("small/summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 8);
    assert_eq!(lines[0], "seed,rel_l2");
    assert!(lines[1].starts_with("100,"));
    assert!(lines[6].starts_with("mean,"));
    assert!(lines[7].starts_with("std,"));
}

#[test]
fn sweep_rows_cover_every_resolution_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config(tmp.path(), "[1, 2]", 2, ""));
    let o = pilir(&["sweep", "--config", &cfg, "--resolutions", "4,6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(tmp.path().join("small/sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "resolution,seed,rel_l2");
    assert_eq!(rows.len(), 1 + 2 * 2);
    assert!(rows[1].starts_with("4,1,") && rows[4].starts_with("6,2,"));
    assert!(tmp.path().join("small/res6/2/final.ckpt").exists());
}

#[test]
fn invalid_config_exits_two_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seeds = [1]\n[problem]\nname = \"convection\"\n[model]\nkind = \"pilir\"\nbogus = 1\n");
    let o = pilir(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert_eq!(e.lines().count(), 1, "{e}");
    assert!(e.starts_with("error[config]: "), "{e}");
}

#[test]
fn usage_errors_exit_two_with_one_line() {
    for args in [&["train", "--nope"][..], &["frobnicate"], &["train"], &["train", "--problem", "helmholtz2d", "--epochs", "1", "--full-scale"]] {
        let o = pilir(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let e = stderr(&o);
        assert_eq!(e.lines().count(), 1, "{e}");
        assert!(e.starts_with("error[usage]: "), "{e}");
    }
    let o = pilir(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn runtime_errors_have_greppable_prefixes() {
    let tmp = tempfile::tempdir().unwrap();
    let junk = tmp.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let o = pilir(&["eval", "--checkpoint", junk.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[checkpoint]: "));

    let o = pilir(&["reference", "--problem", "helmholtz2d"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[eval]: "));

    let o = pilir(&["train", "--problem", "nonesuch"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[config]: "));
}

#[test]
fn checkpoint_against_a_different_config_reports_the_diff() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config(tmp.path(), "[3]", 0, ""));
    assert!(pilir(&["train", "--config", &cfg]).status.success());
    let other = tmp.path().join("other.toml");
    fs::write(&other, fs::read_to_string(&cfg).unwrap().replace("resolution = [4]", "resolution = [8]")).unwrap();
    let ckpt = tmp.path().join("small/3/final.ckpt");
    let o = pilir(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", other.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.starts_with("error[shape]: "), "{e}");
    assert!(e.contains("resolution: manifest [4,4] != config [8,8]"), "{e}");
}

#[test]
fn diverging_run_exits_three_and_keeps_last_good() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config(tmp.path(), "[9]", 50, "lr_max = 1e200"));
    let o = pilir(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).lines().last().unwrap().starts_with("error[nan]: "), "{}", stderr(&o));
    let last = fs::read(tmp.path().join("small/9/last_good.ckpt")).unwrap();
    let model = Checkpoint::decode(&last).unwrap().to_model().unwrap();
    assert!(model.params.entries().iter().all(|e| e.value.data().iter().all(|v| v.is_finite())));
}

#[test]
fn reference_and_spectrum_write_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = pilir(&["reference", "--problem", "convection", "--modes", "64", "--dt", "1e-3", "--grid", "32x5", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("reference.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x,t,u"));
    assert_eq!(csv.lines().count(), 1 + 32 * 5);

    let o = pilir(&["spectrum", "--problem", "convection", "--grid", "64x11", "--top-k", "1", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = stdout(&o).lines().next().unwrap().to_string();
    assert!(first.starts_with("t 0 truth 1:1.0000e0"), "{first}");
    assert!(tmp.path().join("spectrum.csv").exists());
}
