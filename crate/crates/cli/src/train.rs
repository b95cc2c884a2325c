//! `train` and `gradcheck`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bathy_core::autodiff::{read_checkpoint, Checkpoint, Fault, GradCheckOptions, ParamStore};
use bathy_core::diagnostics::{network_check, primitive_checks};
use bathy_core::net::{check_params, NetworkConfig};
use bathy_core::synth::{Dataset, DatasetManifest};
use bathy_core::train::{train_epochs, TrainState, TrainingSet};

use crate::config::{network_preset, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{f, RunReport, Workspace};

pub fn manifest_path(cfg: &RunConfig, ws: &Workspace) -> PathBuf {
    cfg.paths
        .manifest
        .clone()
        .unwrap_or_else(|| ws.path("dataset/manifest.txt"))
}

pub fn load_dataset(path: &Path) -> CliResult<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("cannot read manifest {}: {e}", path.display())))?;
    let manifest = DatasetManifest::parse(&text, &path.display().to_string())?;
    Ok(manifest.load(path.parent().unwrap_or(Path::new(".")))?)
}

fn meta<'a>(ck: &'a Checkpoint, key: &str) -> Option<&'a str> {
    ck.section("network")?
        .meta
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

/// Trained parameters and the network they belong to.
pub fn load_model(path: &Path) -> CliResult<(ParamStore, NetworkConfig, String)> {
    let ck = read_checkpoint(path)?;
    let preset = meta(&ck, "net")
        .ok_or_else(|| {
            CliError::Invalid(format!(
                "{}: checkpoint does not name its network",
                path.display()
            ))
        })?
        .to_string();
    let net = network_preset(&preset)?;
    let params = ck
        .section("network")
        .map(|s| s.params.clone())
        .ok_or_else(|| CliError::Invalid(format!("{}: no network section", path.display())))?;
    check_params(&net, &params)?;
    Ok((params, net, preset))
}

pub fn checkpoint_path(cfg: &RunConfig, ws: &Workspace) -> PathBuf {
    cfg.paths
        .checkpoint
        .clone()
        .unwrap_or_else(|| ws.path("train/model.ckpt"))
}

fn state_checkpoint(state: &TrainState, preset: &str, initial_val_loss: Option<f64>) -> Checkpoint {
    let mut ck = state.to_checkpoint();
    let net = &mut ck.sections[0];
    net.meta.push(("net".into(), preset.into()));
    if let Some(v) = initial_val_loss {
        net.meta
            .push(("initial_val_loss".into(), format!("{v:.16e}")));
    }
    ck
}

pub fn cmd_train(cfg: &RunConfig, ws: &Workspace, resume: Option<&Path>) -> CliResult<()> {
    let manifest = manifest_path(cfg, ws);
    let dataset = load_dataset(&manifest)?;
    let net = cfg.network()?;
    let tc = cfg.train_config();
    tc.validate()?;
    let mut state = match resume {
        Some(path) => {
            let ck = read_checkpoint(path)?;
            if meta(&ck, "net") != Some(cfg.net.preset.as_str()) {
                return Err(CliError::Invalid(format!(
                    "{} was trained with network '{}', config asks for '{}'",
                    path.display(),
                    meta(&ck, "net").unwrap_or("?"),
                    cfg.net.preset
                )));
            }
            let state = TrainState::from_checkpoint(&ck)?;
            check_params(&net, &state.params)?;
            state
        }
        None => TrainState::fresh(&net, cfg.init_seed())?,
    };
    ws.claim(&["train", "train.json"])?;
    let mut report = RunReport::new("train", cfg);
    report.input("manifest", &manifest);
    if let Some(p) = resume {
        report.input("resume", p);
    }
    let preset = cfg.net.preset.clone();
    let ckpt_text = |state: &TrainState, initial: Option<f64>| {
        state_checkpoint(state, &preset, initial).to_text()
    };

    if state.epoch >= tc.epochs {
        // Nothing to run: record the current (initial) state as is.
        let name = format!("train/epoch-{:03}.ckpt", state.epoch);
        report.output(ws, &ws.write(&name, ckpt_text(&state, None).as_bytes())?);
        report.output(
            ws,
            &ws.write("train/model.ckpt", ckpt_text(&state, None).as_bytes())?,
        );
        report.output(
            ws,
            &ws.write(
                "train/loss.csv",
                b"epoch,train_loss,val_loss,active_fraction,seconds\n",
            )?,
        );
        report.metric("epochs_run", 0);
        report.metric("epoch", state.epoch);
        println!(
            "train: nothing to do at epoch {} of {}; wrote the current state",
            state.epoch, tc.epochs
        );
        report.finish(ws)?;
        return Ok(());
    }

    let set = TrainingSet::new(&dataset, &net, &tc)?;
    let first_epoch = state.epoch;
    let loss = train_epochs(&set, &net, &tc, &mut state, |e, st| {
        println!(
            "epoch {:>3}  lr {:.3e}  train {:.6}  val {:.6}  active {:.3}  {:.1}s",
            e.epoch, e.learning_rate, e.train_loss, e.val_loss, e.active_fraction, e.seconds
        );
        let name = format!("train/epoch-{:03}.ckpt", e.epoch);
        ws.write(&name, ckpt_text(st, None).as_bytes())
            .map(|_| ())
            .map_err(|e| bathy_core::Error::InvalidInput(e.to_string()))
    })?;
    for e in first_epoch + 1..=state.epoch {
        report.output(ws, &ws.path(&format!("train/epoch-{e:03}.ckpt")));
    }
    let initial = (first_epoch == 0).then_some(loss.initial_val_loss);
    report.output(
        ws,
        &ws.write("train/model.ckpt", ckpt_text(&state, initial).as_bytes())?,
    );
    report.output(ws, &ws.write("train/loss.csv", loss.to_csv().as_bytes())?);
    report.metric("first_epoch", first_epoch + 1);
    report.metric("epochs_run", loss.epochs.len());
    report.metric("initial_val_loss", loss.initial_val_loss);
    report.metric("best_val_loss", state.best_val_loss);
    report.metric("best_epoch", state.best_epoch);
    report.metric("flagged_pairs", loss.flagged_pairs);
    report.metric("train_pairs", set.train_pairs.len());
    report.metric("val_triplets", set.val_triplets.len());
    println!(
        "train: val loss {:.6} at start, best {:.6} at epoch {}",
        loss.initial_val_loss, state.best_val_loss, state.best_epoch
    );
    report.finish(ws)?;
    Ok(())
}

pub fn parse_fault(name: &str) -> CliResult<Fault> {
    match name {
        "softplus" => Ok(Fault::SoftplusBackward),
        "matmul" => Ok(Fault::MatmulRhs),
        other => Err(CliError::Invalid(format!("unknown fault '{other}'"))),
    }
}

pub fn cmd_gradcheck(cfg: &RunConfig, ws: &Workspace, fault: Option<Fault>) -> CliResult<()> {
    ws.claim(&["gradcheck.csv", "gradcheck.json"])?;
    let mut report = RunReport::new("gradcheck", cfg);
    let g = &cfg.gradcheck;
    let opts = GradCheckOptions {
        h: g.step,
        tol: g.tolerance,
        max_coords: g.max_coords,
        fault,
        ..bathy_core::diagnostics::suite_options()
    };
    let mut checks = primitive_checks(&opts)?;
    checks.push(network_check(
        &NetworkConfig::tiny(),
        g.points,
        g.batch,
        &opts,
    )?);

    let mut csv = String::from("check,max_rel_error,max_abs_error,checked,skipped,passed\n");
    println!(
        "{:<24} {:>12} {:>8} {:>8}  result",
        "check", "max rel err", "checked", "skipped"
    );
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for c in &checks {
        let r = &c.report;
        worst = worst.max(r.max_rel_error);
        if !r.passed {
            failed.push(c.name.clone());
        }
        let _ = writeln!(
            csv,
            "{},{:.3e},{:.3e},{},{},{}",
            c.name, r.max_rel_error, r.max_abs_error, r.checked, r.skipped, r.passed
        );
        println!(
            "{:<24} {:>12.3e} {:>8} {:>8}  {}",
            c.name,
            r.max_rel_error,
            r.checked,
            r.skipped,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    report.output(ws, &ws.write("gradcheck.csv", csv.as_bytes())?);
    report.metric("checks", checks.len());
    report.metric("max_rel_error", worst);
    report.metric("tolerance", g.tolerance);
    report.metric("failed", failed.clone());
    report.metric("passed", failed.is_empty());
    report.finish(ws)?;
    if failed.is_empty() {
        println!(
            "gradcheck: all {} checks below {}",
            checks.len(),
            f(g.tolerance, 6)
        );
        Ok(())
    } else {
        Err(CliError::GradCheck(format!(
            "{} of {} checks above tolerance: {}",
            failed.len(),
            checks.len(),
            failed.join(", ")
        )))
    }
}
