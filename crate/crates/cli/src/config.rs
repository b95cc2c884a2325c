//! Run configuration: a TOML file whose tables mirror the pipeline stages.
//! Every key has a default except input paths; unknown keys are rejected.

use std::path::{Path, PathBuf};

use bathy_core::baseline::BaselineParams;
use bathy_core::geometry::AugmentParams;
use bathy_core::loop_closure::LcParams;
use bathy_core::net::NetworkConfig;
use bathy_core::registration::{GicpOptions, RegistrationParams};
use bathy_core::seed;
use bathy_core::synth::{DatasetParams, DriftModel, PairCounts, SpectrumParams, SurveyPlan};
use bathy_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every random stream derives from it by name.
    pub seed: u64,
    /// Upper bound on worker threads; 1 keeps runs bit-reproducible by
    /// construction (outputs do not depend on it either way).
    pub workers: usize,
    pub paths: PathsConfig,
    pub terrain: TerrainConfig,
    pub survey: SurveyConfig,
    pub drift: DriftConfig,
    pub dataset: DatasetConfig,
    pub net: NetConfig,
    pub train: TrainSection,
    pub gradcheck: GradcheckConfig,
    pub evaluate: EvaluateConfig,
    pub register: RegisterConfig,
    pub baseline: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            paths: PathsConfig::default(),
            terrain: TerrainConfig::default(),
            survey: SurveyConfig::default(),
            drift: DriftConfig::default(),
            dataset: DatasetConfig::default(),
            net: NetConfig::default(),
            train: TrainSection::default(),
            gradcheck: GradcheckConfig::default(),
            evaluate: EvaluateConfig::default(),
            register: RegisterConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

/// Inputs produced by earlier stages. Unset paths resolve inside the
/// output directory, where the earlier stage wrote them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub survey: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainConfig {
    /// Side of the square terrain, meters.
    pub size: f64,
    /// Grid cell, meters.
    pub cell: f64,
    pub base_depth: f64,
    pub amplitude: f64,
    pub octaves: u32,
    pub lacunarity: f64,
    pub persistence: f64,
    pub base_wavelength: f64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        let s = SpectrumParams::default();
        TerrainConfig {
            size: 800.0,
            cell: 2.0,
            base_depth: s.base_depth,
            amplitude: s.amplitude,
            octaves: s.octaves,
            lacunarity: s.lacunarity,
            persistence: s.persistence,
            base_wavelength: s.base_wavelength,
        }
    }
}

impl TerrainConfig {
    pub fn spectrum(&self) -> SpectrumParams {
        SpectrumParams {
            base_depth: self.base_depth,
            amplitude: self.amplitude,
            octaves: self.octaves,
            lacunarity: self.lacunarity,
            persistence: self.persistence,
            base_wavelength: self.base_wavelength,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyConfig {
    pub origin_x: f64,
    pub origin_y: f64,
    pub line_spacing: f64,
    pub line_length: f64,
    pub lines: usize,
    pub ping_spacing: f64,
    pub swath_width: f64,
    pub beams: usize,
    pub revisit: bool,
    pub revisit_line: usize,
    pub revisit_offset: f64,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        let p = SurveyPlan::default();
        SurveyConfig {
            origin_x: p.origin_xy[0],
            origin_y: p.origin_xy[1],
            line_spacing: p.line_spacing,
            line_length: p.line_length,
            lines: p.n_lines,
            ping_spacing: p.ping_spacing,
            swath_width: p.swath_width,
            beams: p.beams_per_ping,
            revisit: p.revisit,
            revisit_line: p.revisit_line,
            revisit_offset: p.revisit_offset,
        }
    }
}

impl SurveyConfig {
    pub fn plan(&self) -> SurveyPlan {
        SurveyPlan {
            origin_xy: [self.origin_x, self.origin_y],
            line_spacing: self.line_spacing,
            line_length: self.line_length,
            n_lines: self.lines,
            ping_spacing: self.ping_spacing,
            swath_width: self.swath_width,
            beams_per_ping: self.beams,
            revisit: self.revisit,
            revisit_line: self.revisit_line,
            revisit_offset: self.revisit_offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    /// Horizontal random-walk sigma per square-root meter traveled.
    pub xy_rate_sigma: f64,
    /// Yaw random-walk sigma, radians per square-root meter.
    pub yaw_rate_sigma: f64,
    /// Per-submap depth offset sigma, meters.
    pub z_sigma: f64,
    /// Disable drift entirely: dead-reckoning poses equal true poses.
    pub zero: bool,
}

impl Default for DriftConfig {
    fn default() -> Self {
        let d = DriftModel::default();
        DriftConfig {
            xy_rate_sigma: d.xy_rate_sigma,
            yaw_rate_sigma: d.yaw_rate_sigma,
            z_sigma: d.z_sigma,
            zero: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub crop_radius: f64,
    pub crop_step: f64,
    pub iou_min: f64,
    pub iou_max: f64,
    pub iou_cell: f64,
    pub min_points: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub train_pos: usize,
    pub val_pos: usize,
    pub test_pos: usize,
    pub test_neg: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let d = DatasetParams::default();
        DatasetConfig {
            crop_radius: d.crop_radius,
            crop_step: d.crop_step,
            iou_min: d.iou_bounds[0],
            iou_max: d.iou_bounds[1],
            iou_cell: d.iou_cell,
            min_points: d.min_points,
            train_fraction: d.train_fraction,
            val_fraction: d.val_fraction,
            train_pos: d.counts.train_pos,
            val_pos: d.counts.val_pos,
            test_pos: d.counts.test_pos,
            test_neg: d.counts.test_neg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// One of "default", "compact" or "tiny".
    pub preset: String,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            preset: "default".into(),
        }
    }
}

pub fn network_preset(name: &str) -> Result<NetworkConfig, CliError> {
    Ok(NetworkConfig::preset(name)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub margin: f64,
    pub triplets_per_pair: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_per_epoch: f64,
    pub epochs: usize,
    pub points_per_cloud: usize,
    pub grid_cell: f64,
    pub patch_radius: f64,
    pub candidates: usize,
    pub iou_cell: f64,
    pub max_yaw_deg: f64,
    pub max_dz_m: f64,
    pub noise_sigma_m: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            margin: t.margin,
            triplets_per_pair: t.triplets_per_pair,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lr_decay_per_epoch: t.lr_decay_per_epoch,
            epochs: t.epochs,
            points_per_cloud: t.points_per_cloud,
            grid_cell: t.grid_cell,
            patch_radius: t.patch_radius,
            candidates: t.candidates,
            iou_cell: t.iou_cell,
            max_yaw_deg: t.augment.max_yaw_deg,
            max_dz_m: t.augment.max_dz_m,
            noise_sigma_m: t.augment.noise_sigma_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Points per cloud in the network composition check.
    pub points: usize,
    /// Triplets per batch in the network composition check.
    pub batch: usize,
    /// Coordinates checked per input tensor (evenly strided).
    pub max_coords: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        let o = bathy_core::diagnostics::suite_options();
        GradcheckConfig {
            step: o.h,
            tolerance: o.tol,
            points: 64,
            batch: 2,
            max_coords: o.max_coords,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub keypoints: usize,
    pub max_dz: f64,
    pub min_matches: usize,
    pub points_per_cloud: usize,
    pub grid_cell: f64,
    /// Largest threshold in the precision/recall sweep.
    pub sweep_max: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        let l = LcParams::default();
        EvaluateConfig {
            keypoints: l.keypoints,
            max_dz: l.max_dz,
            min_matches: l.min_matches,
            points_per_cloud: l.points_per_cloud,
            grid_cell: l.grid_cell,
            sweep_max: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegisterConfig {
    pub top_k: usize,
    pub neighbors: usize,
    pub epsilon: f64,
    pub max_distance: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub gicp_cell: f64,
    pub rms_cell: f64,
    /// Which test pairs to register: "accepted" (by the loop-closure
    /// decision at evaluate.min_matches), "positive" or "all".
    pub pairs: String,
    /// Write before/after depth-difference heatmaps per pair.
    pub heatmaps: bool,
}

impl Default for RegisterConfig {
    fn default() -> Self {
        let r = RegistrationParams::default();
        RegisterConfig {
            top_k: r.top_k,
            neighbors: r.gicp.neighbors,
            epsilon: r.gicp.epsilon,
            max_distance: r.gicp.max_distance,
            max_iterations: r.gicp.max_iterations,
            tolerance: r.gicp.tolerance,
            gicp_cell: r.gicp_cell,
            rms_cell: r.rms_cell,
            pairs: "accepted".into(),
            heatmaps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub normal_radius: f64,
    pub harris_radius: f64,
    pub harris_k: f64,
    pub harris_threshold: f64,
    pub nms_radius: f64,
    pub keypoints: usize,
    pub shot_radius: f64,
    pub codebook_size: usize,
    pub kmeans_iterations: usize,
    /// Grid cell applied to each cloud before keypoint detection.
    pub grid_cell: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let b = BaselineParams::default();
        BaselineConfig {
            normal_radius: b.normal_radius,
            harris_radius: b.harris_radius,
            harris_k: b.harris_k,
            harris_threshold: b.harris_threshold,
            nms_radius: b.nms_radius,
            keypoints: b.keypoints,
            shot_radius: b.shot_radius,
            codebook_size: b.codebook_size,
            kmeans_iterations: b.kmeans_iterations,
            grid_cell: 1.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Invalid(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.workers == 0 {
            return Err(CliError::Invalid("workers must be at least 1".into()));
        }
        if !(self.terrain.size > 0.0 && self.terrain.cell > 0.0) {
            return Err(CliError::Invalid(
                "terrain size and cell must be positive".into(),
            ));
        }
        network_preset(&self.net.preset)?;
        self.terrain.spectrum().validate()?;
        self.survey.plan().validate()?;
        self.drift().validate()?;
        self.train_config().validate()?;
        self.registration_params().gicp.validate()?;
        self.baseline_params().validate()?;
        let e = &self.evaluate;
        if e.keypoints == 0
            || e.min_matches == 0
            || e.points_per_cloud == 0
            || !(e.max_dz > 0.0 && e.grid_cell > 0.0)
        {
            return Err(CliError::Invalid(
                "evaluate: keypoints, min_matches and points_per_cloud must be at least 1, max_dz and grid_cell positive".into(),
            ));
        }
        if !(self.baseline.grid_cell > 0.0
            && self.register.rms_cell > 0.0
            && self.register.gicp_cell > 0.0)
        {
            return Err(CliError::Invalid("grid cells must be positive".into()));
        }
        if !matches!(
            self.register.pairs.as_str(),
            "accepted" | "positive" | "all"
        ) {
            return Err(CliError::Invalid(format!(
                "register.pairs must be accepted, positive or all, got '{}'",
                self.register.pairs
            )));
        }
        Ok(())
    }

    pub fn terrain_seed(&self) -> u64 {
        seed::derive(self.seed, "terrain")
    }

    pub fn drift(&self) -> DriftModel {
        if self.drift.zero {
            return DriftModel::none();
        }
        DriftModel {
            xy_rate_sigma: self.drift.xy_rate_sigma,
            yaw_rate_sigma: self.drift.yaw_rate_sigma,
            z_sigma: self.drift.z_sigma,
            seed: seed::derive(self.seed, "drift"),
        }
    }

    pub fn dataset_params(&self) -> DatasetParams {
        let d = &self.dataset;
        DatasetParams {
            crop_radius: d.crop_radius,
            crop_step: d.crop_step,
            iou_bounds: [d.iou_min, d.iou_max],
            iou_cell: d.iou_cell,
            min_points: d.min_points,
            train_fraction: d.train_fraction,
            val_fraction: d.val_fraction,
            counts: PairCounts {
                train_pos: d.train_pos,
                val_pos: d.val_pos,
                test_pos: d.test_pos,
                test_neg: d.test_neg,
            },
            seed: seed::derive(self.seed, "dataset"),
        }
    }

    pub fn network(&self) -> Result<NetworkConfig, CliError> {
        network_preset(&self.net.preset)
    }

    /// Training configuration; triplet sampling and augmentation draw from
    /// the "triplets" stream.
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            margin: t.margin,
            triplets_per_pair: t.triplets_per_pair,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lr_decay_per_epoch: t.lr_decay_per_epoch,
            epochs: t.epochs,
            points_per_cloud: t.points_per_cloud,
            grid_cell: t.grid_cell,
            patch_radius: t.patch_radius,
            candidates: t.candidates,
            iou_cell: t.iou_cell,
            augment: AugmentParams {
                max_yaw_deg: t.max_yaw_deg,
                max_dz_m: t.max_dz_m,
                noise_sigma_m: t.noise_sigma_m,
                seed: 0,
            },
            seed: seed::derive(self.seed, "triplets"),
        }
    }

    /// Seed handed to parameter initialization (which derives "init").
    pub fn init_seed(&self) -> u64 {
        self.seed
    }

    pub fn lc_params(&self) -> LcParams {
        let e = &self.evaluate;
        LcParams {
            keypoints: e.keypoints,
            max_dz: e.max_dz,
            min_matches: e.min_matches,
            points_per_cloud: e.points_per_cloud,
            grid_cell: e.grid_cell,
        }
    }

    pub fn registration_params(&self) -> RegistrationParams {
        let r = &self.register;
        RegistrationParams {
            top_k: r.top_k,
            gicp: GicpOptions {
                neighbors: r.neighbors,
                epsilon: r.epsilon,
                max_distance: r.max_distance,
                max_iterations: r.max_iterations,
                tolerance: r.tolerance,
            },
            gicp_cell: r.gicp_cell,
            rms_cell: r.rms_cell,
        }
    }

    pub fn baseline_params(&self) -> BaselineParams {
        let b = &self.baseline;
        BaselineParams {
            normal_radius: b.normal_radius,
            harris_radius: b.harris_radius,
            harris_k: b.harris_k,
            harris_threshold: b.harris_threshold,
            nms_radius: b.nms_radius,
            keypoints: b.keypoints,
            shot_radius: b.shot_radius,
            codebook_size: b.codebook_size,
            kmeans_iterations: b.kmeans_iterations,
        }
    }

    pub fn baseline_seed(&self) -> u64 {
        seed::derive(self.seed, "baseline")
    }
}
