//! Synthetic bathymetry: terrain fields, survey simulation with
//! dead-reckoning drift, and IoU-labeled pair datasets.

pub mod dataset;
pub mod survey;
pub mod terrain;

pub use dataset::{
    build_pair_dataset, Crop, Dataset, DatasetManifest, DatasetParams, Label, ManifestEntry,
    PairCounts, PairEntry, Split, MANIFEST_HEADER,
};
pub use survey::{
    simulate_survey, simulate_trajectory, DriftModel, LegKind, SubmapInfo, Survey, SurveyPlan,
    TrajectorySample,
};
pub use terrain::{generate_terrain, SpectrumParams, TerrainField};
