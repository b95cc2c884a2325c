//! End-to-end use of the library API on a small synthetic survey: terrain,
//! survey, pair dataset, descriptors, loop-closure matching and
//! registration against ground-truth correspondences.

use bathy_core::loop_closure::{decide, describe, match_submaps, tally, LcParams};
use bathy_core::net::{init_params, NetworkConfig};
use bathy_core::registration::{register_pair, Correspondences, RegistrationParams};
use bathy_core::synth::{
    build_pair_dataset, generate_terrain, simulate_survey, Dataset, DatasetManifest, DatasetParams,
    DriftModel, Label, PairCounts, SpectrumParams, Split, SurveyPlan,
};
use std::path::Path;

fn dataset() -> Dataset {
    let spectrum = SpectrumParams {
        amplitude: 60.0,
        ..Default::default()
    };
    let terrain = generate_terrain(&spectrum, 800.0, 4.0, 3).unwrap();
    let plan = SurveyPlan {
        ping_spacing: 3.0,
        beams_per_ping: 34,
        ..Default::default()
    };
    let drift = DriftModel {
        xy_rate_sigma: 0.2,
        seed: 5,
        ..Default::default()
    };
    let survey = simulate_survey(&terrain, &plan, &drift).unwrap();
    let params = DatasetParams {
        crop_radius: 50.0,
        crop_step: 10.0,
        iou_cell: 6.0,
        counts: PairCounts {
            train_pos: 6,
            val_pos: 2,
            test_pos: 6,
            test_neg: 6,
        },
        seed: 9,
        ..Default::default()
    };
    build_pair_dataset(&survey, &params).unwrap()
}

#[test]
fn survey_to_registration() {
    let ds = dataset();
    assert_eq!(ds.pairs_in(Split::Test, Label::Pos).len(), 6);
    assert_eq!(ds.pairs_in(Split::Test, Label::Neg).len(), 6);

    // The manifest survives a text round trip.
    let manifest = DatasetManifest::for_dataset(&ds, Path::new("clouds"));
    let parsed = DatasetManifest::parse(&manifest.to_text(), "manifest").unwrap();
    assert_eq!(parsed.pairs, manifest.pairs);
    assert_eq!(parsed.entries.len(), manifest.entries.len());

    // An untrained network still produces a well-formed decision for
    // every test pair.
    let net = NetworkConfig::preset("tiny").unwrap();
    let weights = init_params(&net, 1).unwrap();
    let lc = LcParams {
        keypoints: 32,
        points_per_cloud: 128,
        ..Default::default()
    };
    let test: Vec<_> = ds
        .pairs
        .iter()
        .filter(|p| ds.split_of(p) == Some(Split::Test))
        .collect();
    let results: Vec<_> = test
        .iter()
        .map(|p| {
            let a = describe(&ds.crop(&p.id_a).unwrap().cloud, &weights, &net, &lc).unwrap();
            let b = describe(&ds.crop(&p.id_b).unwrap().cloud, &weights, &net, &lc).unwrap();
            assert_eq!(a.keypoints.len(), 32);
            match_submaps(&a, &b, &lc)
        })
        .collect();
    let accepted = decide(&results, lc.min_matches);
    let labels: Vec<Label> = test.iter().map(|p| p.label).collect();
    let cm = tally(&accepted, &labels).unwrap();
    assert_eq!(cm.tp + cm.fp + cm.tn + cm.fn_, test.len());

    // With correspondences taken from the ground truth, registration
    // removes the drift between every positive test pair.
    for p in ds.pairs_in(Split::Test, Label::Pos) {
        let (a, b) = (ds.crop(&p.id_a).unwrap(), ds.crop(&p.id_b).unwrap());
        let truth = b
            .truth_correction()
            .inverse()
            .compose(&a.truth_correction());
        let source: Vec<_> = a.cloud.absolute_points().into_iter().step_by(25).collect();
        let corr = Correspondences {
            target: source.iter().map(|q| truth.transform_point(q)).collect(),
            distance: vec![0.0; source.len()],
            source,
        };
        let r = register_pair(&a.cloud, &b.cloud, &corr, &RegistrationParams::default()).unwrap();
        let (rot, trans) = r.coarse.distance(&truth);
        assert!(rot < 1e-6 && trans < 1e-6, "{rot} {trans}");
        assert!(
            r.rms_fine <= r.rms_before,
            "{} > {}",
            r.rms_fine,
            r.rms_before
        );
    }
}
