//! Python bindings: point clouds and poses, synthetic terrain patches, the
//! descriptor network, loop-closure matching, registration and the geometry
//! and loss primitives behind them.

use std::path::PathBuf;

use bathy_core::autodiff::{read_checkpoint, ParamStore};
use bathy_core::baseline::{self, BaselineParams};
use bathy_core::diagnostics::{gradient_suite, suite_options};
use bathy_core::geometry::{self, FpsStart};
use bathy_core::loop_closure::{self, LcParams, SubmapDescriptors};
use bathy_core::net::{check_params, init_params, NetworkConfig};
use bathy_core::registration::{self, Correspondences, GicpOptions, RegistrationParams};
use bathy_core::synth::{generate_terrain, SpectrumParams};
use bathy_core::{io, seed, train, Error, Point3};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_)
        | Error::InvalidShape { .. }
        | Error::Parse { .. }
        | Error::Io { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn points_in(points: Vec<[f64; 3]>) -> Vec<Point3> {
    points.into_iter().map(Point3::from).collect()
}

fn points_out(points: &[Point3]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

/// A rigid transform x -> R x + t.
#[pyclass(name = "Pose", from_py_object)]
#[derive(Clone)]
struct PyPose(bathy_core::Pose);

#[pymethods]
impl PyPose {
    #[staticmethod]
    fn identity() -> Self {
        PyPose(bathy_core::Pose::identity())
    }

    /// Rotation by `yaw` radians about z, then translation.
    #[staticmethod]
    #[pyo3(signature = (yaw, translation = [0.0, 0.0, 0.0]))]
    fn from_yaw(yaw: f64, translation: [f64; 3]) -> Self {
        PyPose(bathy_core::Pose::from_yaw(yaw, Point3::from(translation)))
    }

    /// Rotation about the axis of `omega` by its norm (radians), then translation.
    #[staticmethod]
    #[pyo3(signature = (omega, translation = [0.0, 0.0, 0.0]))]
    fn from_rotation_vector(omega: [f64; 3], translation: [f64; 3]) -> Self {
        PyPose(bathy_core::Pose::from_rotation_vector(
            Point3::from(omega),
            Point3::from(translation),
        ))
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        let r = &self.0.rotation;
        [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]])
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        let t = &self.0.translation;
        [t.x, t.y, t.z]
    }

    fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.0.transform_point(&Point3::from(p));
        [q.x, q.y, q.z]
    }

    fn inverse(&self) -> Self {
        PyPose(self.0.inverse())
    }

    /// `self ∘ other`: apply `other` first.
    fn compose(&self, other: &PyPose) -> Self {
        PyPose(self.0.compose(&other.0))
    }

    fn __matmul__(&self, other: &PyPose) -> Self {
        self.compose(other)
    }

    /// (rotation error in radians, translation error in meters) to `other`.
    fn distance(&self, other: &PyPose) -> (f64, f64) {
        self.0.distance(&other.0)
    }

    fn __repr__(&self) -> String {
        let t = self.translation();
        format!(
            "Pose(angle={:.6} rad, translation=[{:.4}, {:.4}, {:.4}])",
            self.0.rotation_angle(),
            t[0],
            t[1],
            t[2]
        )
    }
}

/// A demeaned point cloud with its centroid.
#[pyclass(name = "PointCloud", from_py_object)]
#[derive(Clone)]
struct PyPointCloud(bathy_core::PointCloud);

#[pymethods]
impl PyPointCloud {
    /// Builds a cloud from absolute coordinates; they are stored demeaned.
    #[new]
    fn new(id: String, points: Vec<[f64; 3]>) -> PyResult<Self> {
        let cloud = bathy_core::PointCloud::new(id, points_in(points));
        Ok(PyPointCloud(geometry::demean(&cloud).map_err(to_py)?.0))
    }

    /// Reads a point-cloud text file (x y z per line, `#` comments).
    #[staticmethod]
    #[pyo3(signature = (path, id = None))]
    fn read(path: PathBuf, id: Option<String>) -> PyResult<Self> {
        let id = id.unwrap_or_else(|| {
            path.file_stem()
                .map_or_else(String::new, |s| s.to_string_lossy().into())
        });
        PyPointCloud::new(
            id.clone(),
            points_out(&io::read_cloud(&path, &id).map_err(to_py)?.points),
        )
    }

    /// Writes absolute coordinates with six decimals.
    fn write(&self, path: PathBuf) -> PyResult<()> {
        let comments = vec![format!("cloud {}", self.0.id)];
        io::write_cloud(&path, &self.0.absolute_points(), &comments).map_err(to_py)
    }

    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    #[getter]
    fn centroid(&self) -> [f64; 3] {
        let c = self.0.centroid;
        [c.x, c.y, c.z]
    }

    /// Points relative to the centroid.
    fn points(&self) -> Vec<[f64; 3]> {
        points_out(&self.0.points)
    }

    fn absolute_points(&self) -> Vec<[f64; 3]> {
        points_out(&self.0.absolute_points())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn transformed(&self, pose: &PyPose) -> PyResult<Self> {
        let moved = geometry::transform_points(&self.0.absolute_points(), &pose.0);
        PyPointCloud::new(self.0.id.clone(), points_out(&moved))
    }

    /// One point (the cell mean) per occupied `cell` x `cell` x `cell` voxel.
    fn grid_downsample(&self, cell: f64) -> PyResult<Self> {
        Ok(PyPointCloud(
            geometry::grid_downsample(&self.0, cell).map_err(to_py)?,
        ))
    }

    fn __repr__(&self) -> String {
        format!("PointCloud(id={:?}, points={})", self.0.id, self.0.len())
    }
}

/// Samples a disk of seabed from a seeded synthetic terrain.
#[pyfunction]
#[pyo3(signature = (seed, center, radius, spacing = 1.0, jitter = 0.3, amplitude = 25.0, sample_seed = 0))]
fn terrain_patch(
    seed: u64,
    center: [f64; 2],
    radius: f64,
    spacing: f64,
    jitter: f64,
    amplitude: f64,
    sample_seed: u64,
) -> PyResult<PyPointCloud> {
    let spectrum = SpectrumParams {
        amplitude,
        ..Default::default()
    };
    let size = (center[0].max(center[1]) + radius) * 1.1 + 10.0;
    let terrain = generate_terrain(&spectrum, size, 2.0, seed).map_err(to_py)?;
    let points = terrain.sample_disk(center, radius, spacing, jitter, sample_seed);
    PyPointCloud::new(format!("patch-{seed}"), points_out(&points))
}

/// Trained (or freshly initialized) descriptor network.
#[pyclass(name = "Model")]
struct PyModel {
    params: ParamStore,
    net: NetworkConfig,
    lc: LcParams,
}

/// Keypoints, descriptors and depths of one cloud.
#[pyclass(name = "Descriptors")]
struct PyDescriptors(SubmapDescriptors);

#[pymethods]
impl PyDescriptors {
    /// Indices (into `points()`) of the keypoints, strongest first.
    #[getter]
    fn keypoints(&self) -> Vec<usize> {
        self.0.keypoints.clone()
    }

    /// Network-input points, demeaned.
    fn points(&self) -> Vec<[f64; 3]> {
        points_out(&self.0.cloud.points)
    }

    fn descriptor(&self, k: usize) -> PyResult<Vec<f64>> {
        if k >= self.0.descriptors.len() {
            return Err(PyValueError::new_err(format!("point {k} out of range")));
        }
        Ok(self.0.descriptors.descriptor(k).to_vec())
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.descriptors.w.clone()
    }

    fn __len__(&self) -> usize {
        self.0.descriptors.len()
    }
}

#[pymethods]
impl PyModel {
    /// Loads a checkpoint written by `bathy train`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = read_checkpoint(&path).map_err(to_py)?;
        let section = ck
            .section("network")
            .ok_or_else(|| PyValueError::new_err("checkpoint has no network section"))?;
        let preset = section
            .meta
            .iter()
            .find(|(k, _)| k == "net")
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| PyValueError::new_err("checkpoint does not name its network"))?;
        let net = NetworkConfig::preset(preset).map_err(to_py)?;
        check_params(&net, &section.params).map_err(to_py)?;
        Ok(PyModel {
            params: section.params.clone(),
            net,
            lc: LcParams::default(),
        })
    }

    /// An untrained network of the named preset ("default", "compact", "tiny").
    #[staticmethod]
    #[pyo3(signature = (preset = "default", seed = 0))]
    fn init(preset: &str, seed: u64) -> PyResult<Self> {
        let net = NetworkConfig::preset(preset).map_err(to_py)?;
        let params = init_params(&net, seed::derive(seed, "init")).map_err(to_py)?;
        Ok(PyModel {
            params,
            net,
            lc: LcParams::default(),
        })
    }

    /// Matching settings: keypoints per cloud, depth gate (m), points per cloud.
    #[pyo3(signature = (keypoints = 128, max_dz = 2.0, points_per_cloud = 512))]
    fn configure(&mut self, keypoints: usize, max_dz: f64, points_per_cloud: usize) {
        self.lc = LcParams {
            keypoints,
            max_dz,
            points_per_cloud,
            ..self.lc
        };
    }

    fn describe(&self, cloud: &PyPointCloud) -> PyResult<PyDescriptors> {
        Ok(PyDescriptors(
            loop_closure::describe(&cloud.0, &self.params, &self.net, &self.lc).map_err(to_py)?,
        ))
    }

    /// Cross-checked, depth-filtered keypoint matches as (i, j, distance).
    fn match_descriptors(&self, a: &PyDescriptors, b: &PyDescriptors) -> Vec<(usize, usize, f64)> {
        loop_closure::match_submaps(&a.0, &b.0, &self.lc)
            .matches
            .iter()
            .map(|m| (m.index_a, m.index_b, m.distance))
            .collect()
    }

    /// Describes, matches and registers `a` onto `b`. Returns a dict with
    /// the matches count, the coarse and fine poses and the consistency RMS
    /// before, after coarse and after fine alignment.
    #[pyo3(signature = (a, b, max_distance = 3.0))]
    fn register<'py>(
        &self,
        py: Python<'py>,
        a: &PyPointCloud,
        b: &PyPointCloud,
        max_distance: f64,
    ) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        let da = loop_closure::describe(&a.0, &self.params, &self.net, &self.lc).map_err(to_py)?;
        let db = loop_closure::describe(&b.0, &self.params, &self.net, &self.lc).map_err(to_py)?;
        let result = loop_closure::match_submaps(&da, &db, &self.lc);
        let corr = Correspondences::from_matches(&da, &db, &result);
        let params = RegistrationParams {
            gicp: GicpOptions {
                max_distance,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = registration::register_pair(&a.0, &b.0, &corr, &params).map_err(to_py)?;
        let out = pyo3::types::PyDict::new(py);
        out.set_item("matches", result.n_matches)?;
        out.set_item("coarse", PyPose(r.coarse))?;
        out.set_item("fine", PyPose(r.fine))?;
        out.set_item("iterations", r.iterations)?;
        out.set_item("converged", r.converged)?;
        out.set_item("rms_before", r.rms_before)?;
        out.set_item("rms_coarse", r.rms_coarse)?;
        out.set_item("rms_fine", r.rms_fine)?;
        Ok(out)
    }
}

/// Footprint IoU of two clouds (absolute coordinates) on a `cell` grid.
#[pyfunction]
#[pyo3(signature = (a, b, cell = 4.0))]
fn overlap_iou(a: &PyPointCloud, b: &PyPointCloud, cell: f64) -> PyResult<f64> {
    geometry::overlap_iou_points(&a.0.absolute_points(), &b.0.absolute_points(), cell)
        .map_err(to_py)
}

/// Greedy max-min subset of `k` indices, starting at index 0.
#[pyfunction]
fn farthest_point_sampling(points: Vec<[f64; 3]>, k: usize) -> PyResult<Vec<usize>> {
    geometry::farthest_point_sampling(&points_in(points), k, FpsStart::FirstIndex).map_err(to_py)
}

/// RMS of per-cell mean-depth differences between overlapping clouds.
#[pyfunction]
#[pyo3(signature = (clouds, cell = 2.0))]
fn consistency_rms(clouds: Vec<PyPointCloud>, cell: f64) -> PyResult<f64> {
    let pts: Vec<Vec<Point3>> = clouds.iter().map(|c| c.0.absolute_points()).collect();
    let refs: Vec<&[Point3]> = pts.iter().map(Vec::as_slice).collect();
    registration::consistency_rms(&refs, cell).map_err(to_py)
}

/// Least-squares rigid transform mapping `source[i]` onto `target[i]`.
#[pyfunction]
fn svd_align(source: Vec<[f64; 3]>, target: Vec<[f64; 3]>) -> PyResult<PyPose> {
    if source.len() != target.len() {
        return Err(PyValueError::new_err("source and target differ in length"));
    }
    let n = source.len();
    let corr = Correspondences {
        source: points_in(source),
        target: points_in(target),
        distance: vec![0.0; n],
    };
    Ok(PyPose(
        registration::svd_coarse_align(&corr, n).map_err(to_py)?,
    ))
}

/// Generalized ICP of `source` onto `target`; returns (pose, per-iteration costs).
#[pyfunction]
#[pyo3(signature = (source, target, init = None, max_distance = 10.0))]
fn gicp(
    source: Vec<[f64; 3]>,
    target: Vec<[f64; 3]>,
    init: Option<PyPose>,
    max_distance: f64,
) -> PyResult<(PyPose, Vec<f64>)> {
    let init = init.map_or_else(bathy_core::Pose::identity, |p| p.0);
    let opts = GicpOptions {
        max_distance,
        ..Default::default()
    };
    let r =
        registration::gicp(&points_in(source), &points_in(target), &init, &opts).map_err(to_py)?;
    Ok((PyPose(r.pose), r.costs))
}

#[pyfunction]
#[pyo3(signature = (anchor, positive, negative, margin = 0.2))]
fn triplet_loss(anchor: Vec<f64>, positive: Vec<f64>, negative: Vec<f64>, margin: f64) -> f64 {
    train::triplet_loss(&anchor, &positive, &negative, margin)
}

#[pyfunction]
fn weighted_batch_loss(losses: Vec<f64>, weights: Vec<f64>) -> PyResult<f64> {
    train::weighted_batch_loss(&losses, &weights).map_err(to_py)
}

/// Finite-difference check of every autodiff primitive and the network;
/// returns (name, max relative error, passed) per check.
#[pyfunction]
fn gradient_check() -> PyResult<Vec<(String, f64, bool)>> {
    let checks = gradient_suite(&suite_options()).map_err(to_py)?;
    Ok(checks
        .into_iter()
        .map(|c| (c.name, c.report.max_rel_error, c.report.passed))
        .collect())
}

/// Harris3D keypoints and their SHOT descriptors for one cloud.
#[pyfunction]
fn shot_features(cloud: &PyPointCloud) -> PyResult<(Vec<usize>, Vec<Vec<f64>>)> {
    baseline::describe_cloud(&cloud.0.points, &BaselineParams::default()).map_err(to_py)
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    baseline::cosine_similarity(&a, &b).map_err(to_py)
}

#[pymodule]
fn bathy_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose>()?;
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyDescriptors>()?;
    m.add_function(wrap_pyfunction!(terrain_patch, m)?)?;
    m.add_function(wrap_pyfunction!(overlap_iou, m)?)?;
    m.add_function(wrap_pyfunction!(farthest_point_sampling, m)?)?;
    m.add_function(wrap_pyfunction!(consistency_rms, m)?)?;
    m.add_function(wrap_pyfunction!(svd_align, m)?)?;
    m.add_function(wrap_pyfunction!(gicp, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_batch_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    m.add_function(wrap_pyfunction!(shot_features, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    Ok(())
}
