//! Shared fixtures for unit tests.

use crate::synth::{
    build_pair_dataset, generate_terrain, simulate_survey, Dataset, DatasetParams, DriftModel,
    PairCounts, SpectrumParams, Survey, SurveyPlan,
};

pub fn small_survey(drift_seed: u64) -> Survey {
    let t = generate_terrain(&SpectrumParams::default(), 800.0, 4.0, 2).unwrap();
    let plan = SurveyPlan {
        ping_spacing: 3.0,
        beams_per_ping: 34,
        ..Default::default()
    };
    simulate_survey(
        &t,
        &plan,
        &DriftModel {
            seed: drift_seed,
            ..Default::default()
        },
    )
    .unwrap()
}

pub fn small_dataset() -> Dataset {
    let params = DatasetParams {
        crop_radius: 50.0,
        crop_step: 10.0,
        iou_cell: 6.0,
        counts: PairCounts {
            train_pos: 6,
            val_pos: 3,
            test_pos: 4,
            test_neg: 4,
        },
        ..Default::default()
    };
    build_pair_dataset(&small_survey(4), &params).unwrap()
}
