//! `evaluate`, `register` and `baseline`: the test-split experiments.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use bathy_core::autodiff::ParamStore;
use bathy_core::baseline::{bow_encode, cosine_similarity, describe_cloud, kmeans_fit};
use bathy_core::geometry::{grid_downsample, PointCloud, Pose};
use bathy_core::loop_closure::{
    decide, describe, match_submaps, tally, ConfusionMatrix, LoopClosureResult, SubmapDescriptors,
};
use bathy_core::net::NetworkConfig;
use bathy_core::registration::{
    consistency_rms, register_pair, write_consistency_heatmap, Correspondences,
};
use bathy_core::seed;
use bathy_core::synth::{Crop, Dataset, Label, PairEntry, Split};
use bathy_core::train::{build_inputs, descriptor_distances, sample_triplets, PreparedCloud};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{f, par_map, RunReport, Workspace};
use crate::train::{checkpoint_path, load_dataset, load_model, manifest_path};

fn test_pairs(dataset: &Dataset) -> Vec<&PairEntry> {
    dataset
        .pairs
        .iter()
        .filter(|p| dataset.split_of(p) == Some(Split::Test))
        .collect()
}

fn unique_ids<'a>(pairs: &[&'a PairEntry]) -> Vec<&'a str> {
    let mut ids: Vec<&str> = pairs
        .iter()
        .flat_map(|p| [p.id_a.as_str(), p.id_b.as_str()])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn crop<'a>(dataset: &'a Dataset, id: &str) -> CliResult<&'a Crop> {
    dataset
        .crop(id)
        .ok_or_else(|| CliError::Invalid(format!("pair references unknown cloud '{id}'")))
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Descriptors of every test cloud and the matching result of every test pair.
struct LoopClosureRun<'a> {
    pairs: Vec<&'a PairEntry>,
    descriptors: BTreeMap<String, SubmapDescriptors>,
    results: Vec<LoopClosureResult>,
    accepted: Vec<bool>,
}

fn run_loop_closure<'a>(
    cfg: &RunConfig,
    dataset: &'a Dataset,
    params: &ParamStore,
    net: &NetworkConfig,
) -> CliResult<LoopClosureRun<'a>> {
    let lc = cfg.lc_params();
    let pairs = test_pairs(dataset);
    if pairs.is_empty() {
        return Err(CliError::Invalid("the manifest has no test pairs".into()));
    }
    let ids = unique_ids(&pairs);
    let described = par_map(&ids, cfg.workers, |id| -> CliResult<SubmapDescriptors> {
        Ok(describe(&crop(dataset, id)?.cloud, params, net, &lc)?)
    });
    let mut descriptors = BTreeMap::new();
    for (id, d) in ids.iter().zip(described) {
        descriptors.insert(id.to_string(), d?);
    }
    let results: Vec<LoopClosureResult> = pairs
        .iter()
        .map(|p| match_submaps(&descriptors[&p.id_a], &descriptors[&p.id_b], &lc))
        .collect();
    let accepted = decide(&results, lc.min_matches);
    Ok(LoopClosureRun {
        pairs,
        descriptors,
        results,
        accepted,
    })
}

fn labels(pairs: &[&PairEntry]) -> Vec<Label> {
    pairs.iter().map(|p| p.label).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |x| f(x, 6))
}

fn confusion_block(cm: &ConfusionMatrix) -> String {
    format!(
        "                 accepted  rejected\n  positive pairs  {:>8}  {:>8}\n  negative pairs  {:>8}  {:>8}\n",
        cm.tp, cm.fn_, cm.fp, cm.tn
    )
}

pub fn cmd_evaluate(cfg: &RunConfig, ws: &Workspace) -> CliResult<()> {
    let manifest = manifest_path(cfg, ws);
    let ckpt = checkpoint_path(cfg, ws);
    let dataset = load_dataset(&manifest)?;
    let (params, net, preset) = load_model(&ckpt)?;
    ws.claim(&["evaluate", "evaluate.json"])?;
    let mut report = RunReport::new("evaluate", cfg);
    report.input("manifest", &manifest);
    report.input("checkpoint", &ckpt);
    report.metric("network", preset);

    let run = run_loop_closure(cfg, &dataset, &params, &net)?;
    let labels = labels(&run.pairs);
    let min_matches = cfg.evaluate.min_matches;

    let mut csv = String::from("id_a,id_b,label,n_matches,accepted\n");
    for ((p, r), a) in run.pairs.iter().zip(&run.results).zip(&run.accepted) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            p.id_a,
            p.id_b,
            p.label.as_str(),
            r.n_matches,
            a
        );
    }
    report.output(ws, &ws.write("evaluate/pairs.csv", csv.as_bytes())?);

    let mut sweep = String::from("threshold,tp,fn,fp,tn,precision,recall\n");
    let mut perfect: Option<(usize, f64)> = None;
    for t in 1..=cfg.evaluate.sweep_max.max(min_matches) {
        let cm = tally(&decide(&run.results, t), &labels)?;
        let _ = writeln!(
            sweep,
            "{t},{},{},{},{},{},{}",
            cm.tp,
            cm.fn_,
            cm.fp,
            cm.tn,
            opt(cm.precision()),
            opt(cm.recall())
        );
        // Best recall among thresholds >= 3 with perfect precision.
        if t >= 3 && cm.precision() == Some(1.0) {
            let r = cm.recall().unwrap_or(0.0);
            if perfect.is_none_or(|(_, best)| r > best) {
                perfect = Some((t, r));
            }
        }
    }
    report.output(ws, &ws.write("evaluate/sweep.csv", sweep.as_bytes())?);

    // Held-out descriptor distances on triplets drawn from the test positives.
    let tc = cfg.train_config();
    let mut prepared = BTreeMap::new();
    let mut triplets = Vec::new();
    let positives: Vec<&&PairEntry> = run.pairs.iter().filter(|p| p.label == Label::Pos).collect();
    let tseed = seed::derive(tc.seed, "held-out");
    for (k, p) in positives.iter().enumerate() {
        for id in [&p.id_a, &p.id_b] {
            if !prepared.contains_key(id) {
                prepared.insert(
                    id.clone(),
                    PreparedCloud::from_crop(crop(&dataset, id)?, &tc)?,
                );
            }
        }
        let s = sample_triplets(
            &prepared[&p.id_a],
            &prepared[&p.id_b],
            &tc,
            tc.triplets_per_pair,
            seed::derive_indexed(tseed, "pair", k as u64),
        )?;
        triplets.extend(s.triplets);
    }
    let (med_ap, med_an) = if triplets.is_empty() {
        (None, None)
    } else {
        let inputs = build_inputs(prepared.values().map(|p| &p.cloud), &net)?;
        let d = descriptor_distances(&params, &net, &inputs, &triplets, tc.batch_size)?;
        (
            median(d.iter().map(|x| x.0).collect()),
            median(d.iter().map(|x| x.1).collect()),
        )
    };

    let cm = tally(&run.accepted, &labels)?;
    let mut summary = format!(
        "loop closure on {} test pairs, threshold {min_matches} matches\n\n",
        run.pairs.len()
    );
    summary.push_str(&confusion_block(&cm));
    let _ = writeln!(
        summary,
        "\nprecision {}\nrecall    {}",
        opt(cm.precision()),
        opt(cm.recall())
    );
    match perfect {
        Some((t, r)) => {
            let _ = writeln!(
                summary,
                "best recall at precision 1 (threshold >= 3): {} at threshold {t}",
                f(r, 6)
            );
        }
        None => summary.push_str("no threshold >= 3 reaches precision 1\n"),
    }
    let _ = writeln!(
        summary,
        "held-out median descriptor distance: anchor-positive {}, anchor-negative {} ({} triplets)",
        opt(med_ap),
        opt(med_an),
        triplets.len()
    );
    report.output(ws, &ws.write("evaluate/summary.txt", summary.as_bytes())?);
    print!("{summary}");

    report.metric("pairs", run.pairs.len());
    report.metric("threshold", min_matches);
    report.metric(
        "confusion",
        json!({"tp": cm.tp, "fn": cm.fn_, "fp": cm.fp, "tn": cm.tn}),
    );
    report.metric("precision", cm.precision());
    report.metric("recall", cm.recall());
    report.metric("perfect_precision_threshold", perfect.map(|p| p.0));
    report.metric("recall_at_perfect_precision", perfect.map(|p| p.1));
    report.metric("median_anchor_positive", med_ap);
    report.metric("median_anchor_negative", med_an);
    report.metric("held_out_triplets", triplets.len());
    report.finish(ws)?;
    Ok(())
}

/// Maps `a`'s dead-reckoning world frame onto `b`'s, from ground truth.
fn true_relative(a: &Crop, b: &Crop) -> Pose {
    b.truth_correction()
        .inverse()
        .compose(&a.truth_correction())
}

struct Registered {
    rms_dr: f64,
    rms_coarse: f64,
    rms_fine: f64,
    iterations: usize,
    converged: bool,
    rms_truth: f64,
    rot_err: f64,
    trans_err: f64,
    fine: Pose,
}

pub fn cmd_register(cfg: &RunConfig, ws: &Workspace) -> CliResult<()> {
    let manifest = manifest_path(cfg, ws);
    let ckpt = checkpoint_path(cfg, ws);
    let dataset = load_dataset(&manifest)?;
    let (params, net, _) = load_model(&ckpt)?;
    ws.claim(&["register", "register.json"])?;
    let mut report = RunReport::new("register", cfg);
    report.input("manifest", &manifest);
    report.input("checkpoint", &ckpt);

    let run = run_loop_closure(cfg, &dataset, &params, &net)?;
    let rp = cfg.registration_params();
    let selected: Vec<usize> = (0..run.pairs.len())
        .filter(|&k| match cfg.register.pairs.as_str() {
            "accepted" => run.accepted[k],
            "positive" => run.pairs[k].label == Label::Pos,
            _ => true,
        })
        .collect();

    let outcomes = par_map(&selected, cfg.workers, |&k| -> CliResult<Registered> {
        let p = run.pairs[k];
        let (ca, cb) = (crop(&dataset, &p.id_a)?, crop(&dataset, &p.id_b)?);
        let corr = Correspondences::from_matches(
            &run.descriptors[&p.id_a],
            &run.descriptors[&p.id_b],
            &run.results[k],
        );
        let r = register_pair(&ca.cloud, &cb.cloud, &corr, &rp)?;
        let truth = true_relative(ca, cb);
        let (rot_err, trans_err) = r.fine.distance(&truth);
        let moved: Vec<_> = ca
            .cloud
            .absolute_points()
            .iter()
            .map(|q| truth.transform_point(q))
            .collect();
        let rms_truth = consistency_rms(&[&moved, &cb.cloud.absolute_points()], rp.rms_cell)?;
        Ok(Registered {
            rms_dr: r.rms_before,
            rms_coarse: r.rms_coarse,
            rms_fine: r.rms_fine,
            iterations: r.iterations,
            converged: r.converged,
            rms_truth,
            rot_err,
            trans_err,
            fine: r.fine,
        })
    });

    let mut csv = String::from("id_a,id_b,rms_dr,rms_coarse,rms_fine,iters,converged\n");
    let mut errors =
        String::from("id_a,id_b,label,rotation_error_deg,translation_error_m,rms_truth\n");
    let mut failures = Vec::new();
    let (mut sum_dr, mut sum_coarse, mut sum_fine, mut n, mut monotone) =
        (0.0, 0.0, 0.0, 0usize, 0usize);
    for (&k, outcome) in selected.iter().zip(outcomes) {
        let p = run.pairs[k];
        let r = match outcome {
            Ok(r) => r,
            Err(e) => {
                failures.push(json!({"id_a": p.id_a, "id_b": p.id_b, "error": e.to_string()}));
                continue;
            }
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            p.id_a,
            p.id_b,
            f(r.rms_dr, 6),
            f(r.rms_coarse, 6),
            f(r.rms_fine, 6),
            r.iterations,
            r.converged
        );
        let _ = writeln!(
            errors,
            "{},{},{},{},{},{}",
            p.id_a,
            p.id_b,
            p.label.as_str(),
            f(r.rot_err.to_degrees(), 6),
            f(r.trans_err, 6),
            f(r.rms_truth, 6)
        );
        if cfg.register.heatmaps {
            let (ca, cb) = (crop(&dataset, &p.id_a)?, crop(&dataset, &p.id_b)?);
            let pa = ca.cloud.absolute_points();
            let pb = cb.cloud.absolute_points();
            let moved: Vec<_> = pa.iter().map(|q| r.fine.transform_point(q)).collect();
            for (tag, pts) in [("before", &pa), ("after", &moved)] {
                let path = ws.path(&format!(
                    "register/heatmaps/{}__{}.{tag}.pgm",
                    p.id_a, p.id_b
                ));
                write_consistency_heatmap(&path, pts, &pb, rp.rms_cell)?;
                report.output(ws, &path);
            }
        }
        sum_dr += r.rms_dr;
        sum_coarse += r.rms_coarse;
        sum_fine += r.rms_fine;
        monotone += usize::from(r.rms_fine <= r.rms_coarse + 1e-6);
        n += 1;
    }
    report.output(ws, &ws.write("register/pairs.csv", csv.as_bytes())?);
    report.output(
        ws,
        &ws.write("register/pose_errors.csv", errors.as_bytes())?,
    );
    report.metric("selected", selected.len());
    report.metric("registered", n);
    report.metric("failures", failures.clone());
    if n > 0 {
        let nf = n as f64;
        let reduction = 1.0 - sum_fine / sum_dr;
        report.metric("mean_rms_dr", sum_dr / nf);
        report.metric("mean_rms_coarse", sum_coarse / nf);
        report.metric("mean_rms_fine", sum_fine / nf);
        report.metric("rms_reduction", reduction);
        report.metric("fine_not_worse_than_coarse", monotone);
        println!(
            "register: {n} pairs; mean consistency RMS {:.4} m (dead reckoning) -> {:.4} m (coarse) -> {:.4} m (fine), {:.1}% reduction",
            sum_dr / nf,
            sum_coarse / nf,
            sum_fine / nf,
            100.0 * reduction
        );
    }
    if !failures.is_empty() {
        println!("register: {} pairs failed", failures.len());
    }
    report.finish(ws)?;
    if n == 0 {
        return Err(CliError::Runtime(format!(
            "no pair registered ({} selected, {} failed)",
            selected.len(),
            failures.len()
        )));
    }
    Ok(())
}

fn baseline_describe(cloud: &PointCloud, cfg: &RunConfig) -> CliResult<Vec<Vec<f64>>> {
    let reduced = grid_downsample(cloud, cfg.baseline.grid_cell)?;
    let (_, descriptors) = describe_cloud(&reduced.points, &cfg.baseline_params())?;
    Ok(descriptors)
}

pub fn cmd_baseline(cfg: &RunConfig, ws: &Workspace) -> CliResult<()> {
    let manifest = manifest_path(cfg, ws);
    let dataset = load_dataset(&manifest)?;
    cfg.baseline_params().validate()?;
    ws.claim(&["baseline", "baseline.json"])?;
    let mut report = RunReport::new("baseline", cfg);
    report.input("manifest", &manifest);

    // The codebook is learned from the training clouds only.
    let mut train_ids: Vec<&str> = dataset
        .pairs_in(Split::Train, Label::Pos)
        .iter()
        .flat_map(|p| [p.id_a.as_str(), p.id_b.as_str()])
        .collect();
    train_ids.sort_unstable();
    train_ids.dedup();
    let train_desc = par_map(&train_ids, cfg.workers, |id| {
        baseline_describe(&crop(&dataset, id)?.cloud, cfg)
    });
    let mut pool = Vec::new();
    for d in train_desc {
        pool.extend(d?);
    }
    let b = &cfg.baseline;
    let codebook = kmeans_fit(
        &pool,
        b.codebook_size,
        b.kmeans_iterations,
        cfg.baseline_seed(),
    )?;
    let path = ws.path("baseline/codebook.ckpt");
    bathy_core::autodiff::write_checkpoint(&path, &codebook.to_checkpoint()?)?;
    report.output(ws, &path);

    let pairs = test_pairs(&dataset);
    let ids = unique_ids(&pairs);
    let encoded = par_map(&ids, cfg.workers, |id| -> CliResult<Vec<f64>> {
        let d = baseline_describe(&crop(&dataset, id)?.cloud, cfg)?;
        Ok(bow_encode(&d, &codebook)?)
    });
    let mut bows = BTreeMap::new();
    for (id, e) in ids.iter().zip(encoded) {
        bows.insert(*id, e?);
    }
    let mut csv = String::from("id_a,id_b,label,cosine\n");
    let mut by_label: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for p in &pairs {
        let c = cosine_similarity(&bows[p.id_a.as_str()], &bows[p.id_b.as_str()])?;
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            p.id_a,
            p.id_b,
            p.label.as_str(),
            f(c, 6)
        );
        by_label.entry(p.label.as_str()).or_default().push(c);
    }
    report.output(ws, &ws.write("baseline/similarity.csv", csv.as_bytes())?);

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut summary =
        format!(
        "bag-of-words baseline: {} training descriptors, codebook of {} words, final inertia {}\n",
        pool.len(),
        codebook.len(),
        codebook.inertia_history.last().map_or("n/a".into(), |v| f(*v, 6))
    );
    for (label, v) in &by_label {
        let _ = writeln!(
            summary,
            "mean cosine similarity, {label} pairs: {} (n = {})",
            f(mean(v), 6),
            v.len()
        );
        report.metric(&format!("mean_cosine_{label}"), mean(v));
    }
    report.output(ws, &ws.write("baseline/summary.txt", summary.as_bytes())?);
    print!("{summary}");
    report.metric("training_descriptors", pool.len());
    report.metric("codebook_size", codebook.len());
    report.metric("inertia_history", codebook.inertia_history.clone());
    report.finish(ws)?;
    Ok(())
}
