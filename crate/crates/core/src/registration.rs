//! Pairwise registration: closed-form SVD alignment of descriptor
//! correspondences followed by generalized-ICP refinement, and the
//! consistency error used to score the result.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{mean_of, Point3, PointCloud, Pose};
use crate::io::write_atomic;
use crate::loop_closure::{LoopClosureResult, SubmapDescriptors};
use crate::spatial::KdTree;

/// Matched point pairs (absolute coordinates) with their descriptor distance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Correspondences {
    pub source: Vec<Point3>,
    pub target: Vec<Point3>,
    pub distance: Vec<f64>,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Matched keypoints of a loop closure, source = `a`, target = `b`.
    pub fn from_matches(
        a: &SubmapDescriptors,
        b: &SubmapDescriptors,
        result: &LoopClosureResult,
    ) -> Self {
        let pa = a.cloud.absolute_points();
        let pb = b.cloud.absolute_points();
        let mut c = Correspondences::default();
        for m in &result.matches {
            c.source.push(pa[m.index_a]);
            c.target.push(pb[m.index_b]);
            c.distance.push(m.distance);
        }
        c
    }
}

/// Least-squares rigid transform mapping `source` onto `target`, using the
/// `top_k` correspondences with smallest descriptor distance.
pub fn svd_coarse_align(corr: &Correspondences, top_k: usize) -> Result<Pose> {
    if corr.target.len() != corr.len() || corr.distance.len() != corr.len() {
        return Err(Error::invalid("correspondence arrays differ in length"));
    }
    let mut order: Vec<usize> = (0..corr.len()).collect();
    order.sort_by(|&a, &b| {
        corr.distance[a]
            .total_cmp(&corr.distance[b])
            .then(a.cmp(&b))
    });
    order.truncate(top_k);
    if order.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "rigid alignment needs at least 3 correspondences, got {}",
            order.len()
        )));
    }
    let src: Vec<Point3> = order.iter().map(|&i| corr.source[i]).collect();
    let dst: Vec<Point3> = order.iter().map(|&i| corr.target[i]).collect();
    let (cs, cd) = (
        mean_of(&src).expect("non-empty"),
        mean_of(&dst).expect("non-empty"),
    );
    for (name, pts, c) in [("source", &src, cs), ("target", &dst, cd)] {
        if is_collinear(pts, &c) {
            return Err(Error::DegenerateGeometry(format!(
                "{name} correspondences are collinear"
            )));
        }
    }
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(&dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("computed"), svd.v_t.expect("computed"));
    let v = vt.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let rotation = v * fix * u.transpose();
    Ok(Pose {
        rotation,
        translation: cd - rotation * cs,
    })
}

fn is_collinear(points: &[Point3], center: &Point3) -> bool {
    let mut scatter = Matrix3::zeros();
    for p in points {
        let r = p - center;
        scatter += r * r.transpose();
    }
    let mut ev: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    !(ev[1] > 1e-10 * ev[0].max(1e-300))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GicpOptions {
    /// Neighbors used for each local covariance.
    pub neighbors: usize,
    /// Smallest covariance eigenvalue (surface thickness).
    pub epsilon: f64,
    /// Correspondences farther apart than this are rejected.
    pub max_distance: f64,
    pub max_iterations: usize,
    /// Stop when both the rotation (radians) and translation (meters) of
    /// an update fall below this.
    pub tolerance: f64,
}

impl Default for GicpOptions {
    fn default() -> Self {
        GicpOptions {
            neighbors: 20,
            epsilon: 1e-3,
            max_distance: 10.0,
            max_iterations: 50,
            tolerance: 1e-6,
        }
    }
}

impl GicpOptions {
    pub fn validate(&self) -> Result<()> {
        if self.neighbors < 3 {
            return Err(Error::invalid(
                "GICP needs at least 3 neighbors per covariance",
            ));
        }
        let pos = [self.epsilon, self.max_distance, self.tolerance];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.max_iterations == 0 {
            return Err(Error::invalid("GICP options must be positive"));
        }
        Ok(())
    }

    /// Cost charged to a point without a correspondence; at least the cost
    /// of any correspondence inside the gate.
    fn outlier_cost(&self) -> f64 {
        self.max_distance * self.max_distance / (2.0 * self.epsilon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GicpResult {
    pub pose: Pose,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the initial pose and after every accepted step.
    pub costs: Vec<f64>,
}

/// Plane-to-plane covariances: the local scatter's eigenvalues are replaced
/// by (epsilon, 1, 1), smallest first.
fn surface_covariances(points: &[Point3], tree: &KdTree, opts: &GicpOptions) -> Vec<Matrix3<f64>> {
    let k = opts.neighbors.min(points.len());
    points
        .iter()
        .map(|p| {
            let nn: Vec<Point3> = tree.knn(p, k).into_iter().map(|(i, _)| points[i]).collect();
            let c = mean_of(&nn).expect("non-empty");
            let mut scatter = Matrix3::zeros();
            for q in &nn {
                scatter += (q - c) * (q - c).transpose();
            }
            let eig = SymmetricEigen::new(scatter);
            let smallest = eig.eigenvalues.imin();
            let mut d = Vector3::from_element(1.0);
            d[smallest] = opts.epsilon;
            eig.eigenvectors * Matrix3::from_diagonal(&d) * eig.eigenvectors.transpose()
        })
        .collect()
}

struct Problem<'a> {
    source: &'a [Point3],
    target: &'a [Point3],
    source_cov: Vec<Matrix3<f64>>,
    target_cov: Vec<Matrix3<f64>>,
    tree: KdTree,
    opts: &'a GicpOptions,
}

struct Term {
    q: Point3,
    r: Vector3<f64>,
    m: Matrix3<f64>,
}

impl Problem<'_> {
    /// Gated correspondences at `pose` and the total truncated cost.
    fn terms(&self, pose: &Pose) -> (Vec<Term>, f64) {
        let gate2 = self.opts.max_distance * self.opts.max_distance;
        let tau = self.opts.outlier_cost();
        let mut terms = Vec::new();
        let mut cost = 0.0;
        for (s, cs) in self.source.iter().zip(&self.source_cov) {
            let q = pose.transform_point(s);
            match self.tree.nearest(&q) {
                Some((j, d2)) if d2 <= gate2 => {
                    let r = self.target[j] - q;
                    let cov = self.target_cov[j] + pose.rotation * cs * pose.rotation.transpose();
                    let m = cov.try_inverse().unwrap_or_else(Matrix3::zeros);
                    cost += (r.transpose() * m * r)[0].min(tau);
                    terms.push(Term { q, r, m });
                }
                _ => cost += tau,
            }
        }
        (terms, cost)
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn small(delta: &Vector6<f64>, tol: f64) -> bool {
    delta.fixed_rows::<3>(0).norm() < tol && delta.fixed_rows::<3>(3).norm() < tol
}

/// Left update `exp(delta) ∘ pose` with delta = (omega, v).
fn apply_step(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let step = Pose::from_rotation_vector(
        delta.fixed_rows::<3>(0).into(),
        delta.fixed_rows::<3>(3).into(),
    );
    step.compose(pose)
}

/// Generalized ICP of `source` onto `target` from `init`. Gauss-Newton steps
/// with backtracking keep the truncated objective non-increasing.
pub fn gicp(
    source: &[Point3],
    target: &[Point3],
    init: &Pose,
    opts: &GicpOptions,
) -> Result<GicpResult> {
    opts.validate()?;
    const MIN_POINTS: usize = 20;
    if source.len() < MIN_POINTS || target.len() < MIN_POINTS {
        return Err(Error::DegenerateGeometry(format!(
            "GICP needs at least {MIN_POINTS} points per cloud, got {} and {}",
            source.len(),
            target.len()
        )));
    }
    // Work about the target mean so rotations are well conditioned.
    let c = mean_of(target).expect("non-empty");
    let src: Vec<Point3> = source.iter().map(|p| p - c).collect();
    let dst: Vec<Point3> = target.iter().map(|p| p - c).collect();
    let shift = Pose::from_translation(c);
    let mut pose = shift.inverse().compose(init).compose(&shift);

    let src_tree = KdTree::new(&src);
    let tree = KdTree::new(&dst);
    let problem = Problem {
        source: &src,
        target: &dst,
        source_cov: surface_covariances(&src, &src_tree, opts),
        target_cov: surface_covariances(&dst, &tree, opts),
        tree,
        opts,
    };

    let (mut terms, mut cost) = problem.terms(&pose);
    if terms.is_empty() {
        return Err(Error::NoOverlap(format!(
            "no correspondences within {} m at the initial pose",
            opts.max_distance
        )));
    }
    let mut costs = vec![cost];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for t in &terms {
            let mut j = nalgebra::Matrix3x6::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&t.q));
            j.fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&-Matrix3::identity());
            let jtm = j.transpose() * t.m;
            h += jtm * j;
            g += jtm * t.r;
        }
        let delta = match h.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => {
                let damp = 1e-9 * h.trace().max(1.0);
                match (h + Matrix6::identity() * damp).cholesky() {
                    Some(ch) => -ch.solve(&g),
                    None => break,
                }
            }
        };
        if small(&delta, opts.tolerance) {
            converged = true;
            break;
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let candidate = apply_step(&pose, &(delta * scale));
            let (t, c) = problem.terms(&candidate);
            if c <= cost && !t.is_empty() {
                accepted = Some((candidate, t, c));
                break;
            }
            scale *= 0.5;
        }
        let Some((candidate, t, c)) = accepted else {
            // No descent along the step: a minimum of the truncated objective.
            converged = small(&(delta * scale), 1e3 * opts.tolerance);
            break;
        };
        pose = candidate;
        terms = t;
        cost = c;
        costs.push(cost);
        if small(&(delta * scale), opts.tolerance) {
            converged = true;
            break;
        }
    }
    Ok(GicpResult {
        pose: shift.compose(&pose).compose(&shift.inverse()),
        iterations,
        converged,
        costs,
    })
}

/// Per-cell mean elevations of each cloud on a shared x-y grid anchored at
/// the joint minimum corner.
fn cell_means(clouds: &[&[Point3]], cell: f64) -> Result<Vec<BTreeMap<(i64, i64), f64>>> {
    if !(cell.is_finite() && cell > 0.0) {
        return Err(Error::invalid(format!(
            "cell size must be positive, got {cell}"
        )));
    }
    let all = clouds.iter().flat_map(|c| c.iter());
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    for p in all {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
    }
    Ok(clouds
        .iter()
        .map(|pts| {
            let mut acc: BTreeMap<(i64, i64), (f64, usize)> = BTreeMap::new();
            for p in pts.iter() {
                let key = (
                    ((p.x - x0) / cell).floor() as i64,
                    ((p.y - y0) / cell).floor() as i64,
                );
                let e = acc.entry(key).or_insert((0.0, 0));
                e.0 += p.z;
                e.1 += 1;
            }
            acc.into_iter()
                .map(|(k, (s, n))| (k, s / n as f64))
                .collect()
        })
        .collect())
}

/// Root-mean-square difference between per-cloud mean depths in every grid
/// cell covered by at least two clouds (all cloud pairs in a cell count).
pub fn consistency_rms(clouds: &[&[Point3]], cell: f64) -> Result<f64> {
    let means = cell_means(clouds, cell)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            for (key, a) in &means[i] {
                if let Some(b) = means[j].get(key) {
                    sum += (a - b).powi(2);
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::NoOverlap(
            "no grid cell is covered by two clouds".into(),
        ));
    }
    Ok((sum / n as f64).sqrt())
}

/// Absolute depth difference per cell between two clouds, as a 16-bit PGM
/// (values in millimeters, 0 where the clouds do not overlap).
pub fn write_consistency_heatmap(path: &Path, a: &[Point3], b: &[Point3], cell: f64) -> Result<()> {
    const SCALE: f64 = 1000.0;
    let means = cell_means(&[a, b], cell)?;
    let keys: Vec<&(i64, i64)> = means[0].keys().chain(means[1].keys()).collect();
    let width = keys.iter().map(|k| k.0).max().unwrap_or(0) + 1;
    let height = keys.iter().map(|k| k.1).max().unwrap_or(0) + 1;
    let mut pixels = vec![0u16; (width * height) as usize];
    for (key, za) in &means[0] {
        if let Some(zb) = means[1].get(key) {
            // Row 0 is the northern edge.
            let row = height - 1 - key.1;
            let v = ((za - zb).abs() * SCALE).round().min(u16::MAX as f64);
            pixels[(row * width + key.0) as usize] = v as u16;
        }
    }
    let mut bytes = format!(
        "P5\n# depth difference, {} m per unit, cell {cell} m\n{width} {height}\n65535\n",
        1.0 / SCALE
    )
    .into_bytes();
    for p in pixels {
        bytes.extend_from_slice(&p.to_be_bytes());
    }
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationParams {
    /// Correspondences used by the coarse alignment.
    pub top_k: usize,
    pub gicp: GicpOptions,
    /// Grid cell applied to both clouds before GICP.
    pub gicp_cell: f64,
    /// Grid cell of the consistency error.
    pub rms_cell: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            top_k: 20,
            gicp: GicpOptions::default(),
            gicp_cell: 1.0,
            rms_cell: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps cloud `a` onto cloud `b` (absolute coordinates).
    pub coarse: Pose,
    pub fine: Pose,
    pub iterations: usize,
    pub converged: bool,
    pub rms_before: f64,
    pub rms_coarse: f64,
    pub rms_fine: f64,
}

/// Coarse SVD alignment from correspondences, then GICP of `a` onto `b`.
pub fn register_pair(
    a: &PointCloud,
    b: &PointCloud,
    corr: &Correspondences,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    let coarse = svd_coarse_align(corr, params.top_k)?;
    let pa = a.absolute_points();
    let pb = b.absolute_points();
    let da = crate::geometry::grid_downsample(a, params.gicp_cell)?.absolute_points();
    let db = crate::geometry::grid_downsample(b, params.gicp_cell)?.absolute_points();
    let fine = gicp(&da, &db, &coarse, &params.gicp)?;
    let moved =
        |pose: &Pose| -> Vec<Point3> { pa.iter().map(|p| pose.transform_point(p)).collect() };
    let rms = |pts: &[Point3]| consistency_rms(&[pts, &pb], params.rms_cell);
    Ok(RegistrationResult {
        coarse,
        fine: fine.pose,
        iterations: fine.iterations,
        converged: fine.converged,
        rms_before: rms(&pa)?,
        rms_coarse: rms(&moved(&coarse))?,
        rms_fine: rms(&moved(&fine.pose))?,
    })
}
