//! `synth` and `dataset`: terrain, survey and pair-dataset files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bathy_core::geometry::{PointCloud, Pose, Submap};
use bathy_core::io::{format_cloud, read_cloud};
use bathy_core::synth::{
    build_pair_dataset, generate_terrain, simulate_survey, simulate_trajectory, Dataset,
    DatasetManifest, Label, LegKind, Split, SubmapInfo, Survey, TerrainField,
};
use bathy_core::Error;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{f, pgm16, RunReport, Workspace};

pub const SURVEY_HEADER: &str = "bathy-survey v1";

fn fmt_pose(p: &Pose) -> String {
    p.to_row_major()
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn kind_str(k: LegKind) -> String {
    match k {
        LegKind::Line(i) => format!("line:{i}"),
        LegKind::Revisit => "revisit".into(),
    }
}

fn terrain_pgm(t: &TerrainField) -> Vec<u8> {
    let lo = t
        .heights
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .floor();
    let mut values = Vec::with_capacity(t.nx * t.ny);
    // Row 0 is the northern edge.
    for j in (0..t.ny).rev() {
        for i in 0..t.nx {
            let v = ((t.heights[j * t.nx + i] - lo) * 100.0).round();
            values.push(v.clamp(0.0, 65535.0) as u16);
        }
    }
    let comment = format!(
        "depth = {lo} m + 0.01 m per unit, cell {} m, south-west corner ({}, {})",
        t.cell, t.origin_xy[0], t.origin_xy[1]
    );
    pgm16(t.nx, t.ny, &comment, &values)
}

/// Writes the survey as one local-frame cloud per leg plus an index of
/// true and dead-reckoning poses.
fn write_survey(
    ws: &Workspace,
    dir: &str,
    survey: &Survey,
    cfg: &RunConfig,
    report: &mut RunReport,
) -> CliResult<()> {
    let mut index = format!("{SURVEY_HEADER}\n");
    index.push_str("# submap <id> <kind> <odometer m> <length m> <cloud file> <true R row-major, t> <dr R row-major, t>\n");
    for ((t, d), info) in survey
        .true_submaps
        .iter()
        .zip(&survey.dr_submaps)
        .zip(&survey.info)
    {
        let id = &t.cloud.id;
        let file = format!("{id}.xyz");
        let comments = vec![format!("submap {id}, local frame, meters, z up")];
        report.output(
            ws,
            &ws.write(
                &format!("{dir}/{file}"),
                format_cloud(&t.cloud.points, &comments).as_bytes(),
            )?,
        );
        let _ = writeln!(
            index,
            "submap {id} {} {} {} {file} {} {}",
            kind_str(info.kind),
            info.odometer,
            info.length,
            fmt_pose(&t.pose),
            fmt_pose(&d.pose)
        );
    }
    report.output(
        ws,
        &ws.write(&format!("{dir}/submaps.txt"), index.as_bytes())?,
    );

    let samples = simulate_trajectory(&cfg.survey.plan(), &cfg.drift())?;
    let mut csv = String::from("odometer,true_x,true_y,true_yaw,dr_x,dr_y,dr_yaw,leg\n");
    for s in &samples {
        let (t, d) = (s.true_pose.translation, s.dr_pose.translation);
        let leg = s.collecting.map_or(String::new(), |l| l.to_string());
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{leg}",
            f(s.odometer, 3),
            f(t.x, 6),
            f(t.y, 6),
            f(s.true_pose.yaw(), 9),
            f(d.x, 6),
            f(d.y, 6),
            f(s.dr_pose.yaw(), 9)
        );
    }
    report.output(
        ws,
        &ws.write(&format!("{dir}/trajectory.csv"), csv.as_bytes())?,
    );
    Ok(())
}

/// Reads a survey written by [`write_survey`].
pub fn read_survey(dir: &Path) -> CliResult<Survey> {
    let index = dir.join("submaps.txt");
    let text = std::fs::read_to_string(&index).map_err(|e| Error::Io {
        path: index.clone(),
        source: e,
    })?;
    let origin = index.display().to_string();
    let perr = |line: usize, msg: String| CliError::Invalid(format!("{origin}:{line}: {msg}"));
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h.trim()) != Some(SURVEY_HEADER) {
        return Err(perr(1, format!("missing header '{SURVEY_HEADER}'")));
    }
    let mut survey = Survey {
        true_submaps: Vec::new(),
        dr_submaps: Vec::new(),
        info: Vec::new(),
    };
    for (i, line) in lines {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 + 24 || fields[0] != "submap" {
            return Err(perr(ln, "expected a submap record with 30 fields".into()));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| perr(ln, format!("bad number '{s}': {e}")))
        };
        let kind = match fields[2] {
            "revisit" => LegKind::Revisit,
            k => match k.strip_prefix("line:").and_then(|n| n.parse().ok()) {
                Some(n) => LegKind::Line(n),
                None => return Err(perr(ln, format!("unknown leg kind '{k}'"))),
            },
        };
        let vals = fields[6..]
            .iter()
            .map(|s| num(s))
            .collect::<CliResult<Vec<f64>>>()?;
        let pose = |v: &[f64]| -> CliResult<Pose> {
            let arr: [f64; 12] = v.try_into().expect("12 values");
            Pose::from_row_major(&arr).map_err(|e| perr(ln, e.to_string()))
        };
        let cloud: PointCloud = read_cloud(&dir.join(fields[5]), fields[1])?;
        survey.true_submaps.push(Submap {
            cloud: cloud.clone(),
            pose: pose(&vals[..12])?,
        });
        survey.dr_submaps.push(Submap {
            cloud,
            pose: pose(&vals[12..])?,
        });
        survey.info.push(SubmapInfo {
            kind,
            odometer: num(fields[3])?,
            length: num(fields[4])?,
        });
    }
    if survey.info.is_empty() {
        return Err(perr(0, "survey lists no submaps".into()));
    }
    Ok(survey)
}

fn write_dataset(ws: &Workspace, dataset: &Dataset, report: &mut RunReport) -> CliResult<PathBuf> {
    for c in &dataset.crops {
        let comments = vec![
            format!(
                "crop {}, split {}, demeaned, dead-reckoning frame",
                c.id(),
                c.split.as_str()
            ),
            format!(
                "centroid {} {} {}",
                c.cloud.centroid.x, c.cloud.centroid.y, c.cloud.centroid.z
            ),
        ];
        let path = ws.write(
            &format!("dataset/clouds/{}.xyz", c.id()),
            format_cloud(&c.cloud.points, &comments).as_bytes(),
        )?;
        report.output(ws, &path);
    }
    // Cloud paths are relative to the manifest's directory.
    let manifest = DatasetManifest::for_dataset(dataset, Path::new("clouds"));
    let path = ws.write("dataset/manifest.txt", manifest.to_text().as_bytes())?;
    report.output(ws, &path);
    for split in [Split::Train, Split::Val, Split::Test] {
        for label in [Label::Pos, Label::Neg] {
            let n = dataset.pairs_in(split, label).len();
            if n > 0 || split == Split::Test {
                report.metric(&format!("{}_{}", split.as_str(), label.as_str()), n);
            }
        }
    }
    report.metric("crops", dataset.crops.len());
    Ok(path)
}

fn summarize(dataset: &Dataset) -> String {
    let count = |s, l| dataset.pairs_in(s, l).len();
    format!(
        "{} crops; pairs: train {} pos, val {} pos, test {} pos / {} neg",
        dataset.crops.len(),
        count(Split::Train, Label::Pos),
        count(Split::Val, Label::Pos),
        count(Split::Test, Label::Pos),
        count(Split::Test, Label::Neg)
    )
}

pub fn cmd_synth(cfg: &RunConfig, ws: &Workspace) -> CliResult<()> {
    ws.claim(&["terrain.pgm", "survey", "dataset", "synth.json"])?;
    let mut report = RunReport::new("synth", cfg);
    let terrain = generate_terrain(
        &cfg.terrain.spectrum(),
        cfg.terrain.size,
        cfg.terrain.cell,
        cfg.terrain_seed(),
    )?;
    report.output(ws, &ws.write("terrain.pgm", &terrain_pgm(&terrain))?);
    let survey = simulate_survey(&terrain, &cfg.survey.plan(), &cfg.drift())?;
    write_survey(ws, "survey", &survey, cfg, &mut report)?;

    // Build the pairs from the survey as written, so `synth` and a later
    // `dataset` on the same files agree exactly.
    let survey = read_survey(&ws.path("survey"))?;
    let mut drift = Vec::new();
    for (t, d) in survey.true_submaps.iter().zip(&survey.dr_submaps) {
        let (rot, trans) = t.pose.distance(&d.pose);
        drift.push(
            serde_json::json!({"submap": t.cloud.id, "translation_m": trans, "rotation_rad": rot}),
        );
    }
    report.metric("submaps", survey.info.len());
    report.metric(
        "soundings",
        survey
            .true_submaps
            .iter()
            .map(|s| s.cloud.len())
            .sum::<usize>(),
    );
    report.metric("drift", drift);
    let dataset = build_pair_dataset(&survey, &cfg.dataset_params())?;
    write_dataset(ws, &dataset, &mut report)?;
    println!(
        "synth: {} submaps; {}",
        survey.info.len(),
        summarize(&dataset)
    );
    report.finish(ws)?;
    Ok(())
}

pub fn cmd_dataset(cfg: &RunConfig, ws: &Workspace) -> CliResult<()> {
    let survey_dir = cfg
        .paths
        .survey
        .clone()
        .unwrap_or_else(|| ws.path("survey"));
    let survey = read_survey(&survey_dir)?;
    ws.claim(&["dataset", "dataset.json"])?;
    let mut report = RunReport::new("dataset", cfg);
    report.input("survey", &survey_dir);
    let dataset = build_pair_dataset(&survey, &cfg.dataset_params())?;
    write_dataset(ws, &dataset, &mut report)?;
    println!("dataset: {}", summarize(&dataset));
    report.finish(ws)?;
    Ok(())
}
