//! Hand-crafted baseline: Harris3D keypoints, SHOT descriptors and a
//! k-means bag-of-words place descriptor compared by cosine similarity.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector3};
use rand::Rng as _;

use crate::autodiff::{Checkpoint, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{mean_of, Point3};
use crate::seed;
use crate::spatial::KdTree;

/// Azimuth x elevation x radial sectors of the SHOT support.
const SHOT_SECTORS: usize = 8 * 2 * 2;
/// Cosine bins per sector.
const SHOT_BINS: usize = 11;
pub const SHOT_DIM: usize = SHOT_SECTORS * SHOT_BINS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineParams {
    pub normal_radius: f64,
    pub harris_radius: f64,
    pub harris_k: f64,
    /// Keypoints need a response above this.
    pub harris_threshold: f64,
    /// Non-maximum suppression radius for keypoints.
    pub nms_radius: f64,
    /// At most this many keypoints per cloud, strongest first.
    pub keypoints: usize,
    pub shot_radius: f64,
    pub codebook_size: usize,
    pub kmeans_iterations: usize,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            normal_radius: 5.0,
            harris_radius: 5.0,
            harris_k: 0.04,
            harris_threshold: 1e-6,
            nms_radius: 5.0,
            keypoints: 64,
            shot_radius: 10.0,
            codebook_size: 50,
            kmeans_iterations: 100,
        }
    }
}

impl BaselineParams {
    pub fn validate(&self) -> Result<()> {
        let radii = [
            self.normal_radius,
            self.harris_radius,
            self.nms_radius,
            self.shot_radius,
        ];
        if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid("baseline radii must be positive"));
        }
        if self.keypoints == 0 || self.kmeans_iterations == 0 {
            return Err(Error::invalid(
                "keypoints and k-means iterations must be positive",
            ));
        }
        if self.codebook_size < 2 {
            return Err(Error::invalid("the codebook needs at least 2 words"));
        }
        if !self.harris_threshold.is_finite() {
            return Err(Error::invalid("Harris threshold must be finite"));
        }
        Ok(())
    }
}

/// Eigenvalues ascending with matching eigenvector columns.
fn sorted_eigen(m: Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = Vector3::new(
        eig.eigenvalues[idx[0]],
        eig.eigenvalues[idx[1]],
        eig.eigenvalues[idx[2]],
    );
    let vecs = Matrix3::from_columns(&[
        eig.eigenvectors.column(idx[0]).into_owned(),
        eig.eigenvectors.column(idx[1]).into_owned(),
        eig.eigenvectors.column(idx[2]).into_owned(),
    ]);
    (vals, vecs)
}

/// PCA normals over a radius, oriented to +z. Points with fewer than three
/// neighbors get +z.
pub fn estimate_normals(points: &[Point3], radius: f64) -> Vec<Vector3<f64>> {
    let tree = KdTree::new(points);
    points
        .iter()
        .map(|p| {
            let nn: Vec<Point3> = tree
                .within(p, radius)
                .into_iter()
                .map(|(i, _)| points[i])
                .collect();
            if nn.len() < 3 {
                return Vector3::z();
            }
            let c = mean_of(&nn).expect("non-empty");
            let mut cov = Matrix3::zeros();
            for q in &nn {
                cov += (q - c) * (q - c).transpose();
            }
            let n: Vector3<f64> = sorted_eigen(cov).1.column(0).into_owned();
            if n.z < 0.0 {
                -n
            } else {
                n
            }
        })
        .collect()
}

/// Two orthonormal vectors spanning the plane orthogonal to `n`.
fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = n.cross(&helper).normalize();
    (u, n.cross(&u))
}

/// Harris corner response from the neighbors' normals projected on the
/// tangent plane: det(M) - k tr(M)^2 with M their mean outer product.
pub fn harris3d_response(
    points: &[Point3],
    normals: &[Vector3<f64>],
    radius: f64,
    k: f64,
) -> Vec<f64> {
    let tree = KdTree::new(points);
    points
        .iter()
        .zip(normals)
        .map(|(p, n)| {
            let (u, v) = tangent_basis(n);
            let nn = tree.within(p, radius);
            let mut m = Matrix2::zeros();
            for &(i, _) in &nn {
                let g = nalgebra::Vector2::new(normals[i].dot(&u), normals[i].dot(&v));
                m += g * g.transpose();
            }
            m /= nn.len() as f64;
            m.determinant() - k * m.trace().powi(2)
        })
        .collect()
}

/// Local maxima of the Harris response within `nms_radius` that exceed
/// the threshold, strongest first (ties to the lower index), at most
/// `params.keypoints`.
pub fn harris3d_keypoints(
    points: &[Point3],
    normals: &[Vector3<f64>],
    params: &BaselineParams,
) -> Vec<usize> {
    let response = harris3d_response(points, normals, params.harris_radius, params.harris_k);
    let tree = KdTree::new(points);
    let mut maxima: Vec<usize> = (0..points.len())
        .filter(|&i| response[i] > params.harris_threshold)
        .filter(|&i| {
            tree.within(&points[i], params.nms_radius)
                .iter()
                .all(|&(j, _)| {
                    j == i || response[j] < response[i] || (response[j] == response[i] && j > i)
                })
        })
        .collect();
    maxima.sort_by(|&a, &b| response[b].total_cmp(&response[a]).then(a.cmp(&b)));
    maxima.truncate(params.keypoints);
    maxima
}

/// Local reference frame of the support around `center`: weighted scatter
/// eigenvectors (x largest, z smallest) with signs set by majority vote.
fn local_frame(center: &Point3, support: &[Point3], radius: f64) -> Matrix3<f64> {
    let mut cov = Matrix3::zeros();
    let mut wsum = 0.0;
    for q in support {
        let d = q - center;
        let w = radius - d.norm();
        cov += w * d * d.transpose();
        wsum += w;
    }
    if wsum > 0.0 {
        cov /= wsum;
    }
    let vecs = sorted_eigen(cov).1;
    let orient = |axis: Vector3<f64>| -> Vector3<f64> {
        let positive = support
            .iter()
            .filter(|q| (*q - center).dot(&axis) >= 0.0)
            .count();
        if 2 * positive >= support.len() {
            axis
        } else {
            -axis
        }
    };
    let x = orient(vecs.column(2).into_owned());
    let z = orient(vecs.column(0).into_owned());
    Matrix3::from_rows(&[x.transpose(), z.cross(&x).transpose(), z.transpose()])
}

/// SHOT descriptor at `points[index]`: for 32 spatial sectors of the
/// support (8 azimuth x 2 elevation x 2 radial, in the local reference
/// frame), a histogram over 11 bins of the cosine between neighbor normals
/// and the keypoint normal, linearly interpolated between adjacent bins.
/// L2-normalized.
pub fn shot_descriptor(
    points: &[Point3],
    normals: &[Vector3<f64>],
    index: usize,
    radius: f64,
) -> Result<Vec<f64>> {
    let tree = KdTree::new(points);
    shot_with_tree(points, normals, &tree, index, radius)
}

/// Supports with fewer neighbors have no stable reference frame.
const SHOT_MIN_SUPPORT: usize = 5;

fn shot_with_tree(
    points: &[Point3],
    normals: &[Vector3<f64>],
    tree: &KdTree,
    index: usize,
    radius: f64,
) -> Result<Vec<f64>> {
    let center = points[index];
    let support: Vec<usize> = tree
        .within(&center, radius)
        .into_iter()
        .map(|(i, _)| i)
        .collect();
    if support.len() < SHOT_MIN_SUPPORT {
        return Err(Error::DegenerateGeometry(format!(
            "SHOT support of point {index} has {} neighbors within {radius} m, need {SHOT_MIN_SUPPORT}",
            support.len()
        )));
    }
    let pts: Vec<Point3> = support.iter().map(|&i| points[i]).collect();
    let frame = local_frame(&center, &pts, radius);
    let axis = normals[index];
    let mut hist = vec![0.0; SHOT_DIM];
    for &i in &support {
        let local = frame * (points[i] - center);
        // The keypoint itself maps to a signed zero; atan2 would send -0 to pi.
        let az = if local.x == 0.0 && local.y == 0.0 {
            0.0
        } else {
            local.y.atan2(local.x).rem_euclid(std::f64::consts::TAU)
        };
        let a = ((az / std::f64::consts::TAU * 8.0) as usize).min(7);
        let e = usize::from(local.z >= 0.0);
        let r = usize::from(local.norm() > radius / 2.0);
        let base = ((a * 2 + e) * 2 + r) * SHOT_BINS;
        // Bin centers sit at cos = -1 + (b + 0.5) * width.
        let cos = normals[i].dot(&axis).clamp(-1.0, 1.0);
        let pos = (cos + 1.0) / 2.0 * SHOT_BINS as f64 - 0.5;
        let lo = pos.floor();
        let frac = pos - lo;
        let lo = lo as i64;
        if lo >= 0 {
            hist[base + lo as usize] += 1.0 - frac;
        } else {
            hist[base] += 1.0 - frac;
        }
        if ((lo + 1) as usize) < SHOT_BINS {
            hist[base + (lo + 1) as usize] += frac;
        } else {
            hist[base + SHOT_BINS - 1] += frac;
        }
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    hist.iter_mut().for_each(|v| *v /= norm);
    Ok(hist)
}

/// Normals, keypoints and SHOT descriptors of one cloud.
pub fn describe_cloud(
    points: &[Point3],
    params: &BaselineParams,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    params.validate()?;
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "baseline needs at least 3 points, got {}",
            points.len()
        )));
    }
    let normals = estimate_normals(points, params.normal_radius);
    let keypoints = harris3d_keypoints(points, &normals, params);
    let tree = KdTree::new(points);
    // Keypoints whose support is too sparse for a stable frame are dropped.
    let mut kept = Vec::new();
    let mut descriptors = Vec::new();
    for k in keypoints {
        match shot_with_tree(points, &normals, &tree, k, params.shot_radius) {
            Ok(d) => {
                kept.push(k);
                descriptors.push(d);
            }
            Err(Error::DegenerateGeometry(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((kept, descriptors))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Index of the nearest center (lowest index on ties) and its squared distance.
fn nearest_center(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centers: Vec<Vec<f64>>,
    /// Inertia after every assignment step.
    pub inertia_history: Vec<f64>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let values: Vec<f64> = self.centers.iter().flatten().copied().collect();
        let mut params = ParamStore::new();
        params.insert("centers", Tensor::matrix(self.len(), self.dim(), values)?)?;
        let meta = vec![("k".to_string(), self.len().to_string())];
        Ok(Checkpoint::with_section("codebook", meta, params))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let section = ckpt
            .section("codebook")
            .ok_or_else(|| Error::invalid("checkpoint has no 'codebook' section"))?;
        let t = section
            .params
            .get("centers")
            .ok_or_else(|| Error::invalid("codebook section has no 'centers' tensor"))?;
        if t.shape().len() != 2 || t.rows() == 0 {
            return Err(Error::invalid(
                "codebook centers must be a non-empty matrix",
            ));
        }
        Ok(Codebook {
            centers: (0..t.rows()).map(|r| t.row(r).to_vec()).collect(),
            inertia_history: Vec::new(),
        })
    }
}

/// k-means with k-means++ seeding and Lloyd iterations until assignments
/// stop changing. Empty clusters are reseeded at the point farthest from its
/// center.
pub fn kmeans_fit(
    data: &[Vec<f64>],
    k: usize,
    max_iterations: usize,
    seed: u64,
) -> Result<Codebook> {
    if k < 2 || k > data.len() {
        return Err(Error::invalid(format!(
            "k-means needs 2 <= k <= {} points, got k = {k}",
            data.len()
        )));
    }
    let dim = data[0].len();
    if dim == 0 || data.iter().any(|x| x.len() != dim) {
        return Err(Error::invalid(
            "k-means data rows must share a positive dimension",
        ));
    }
    let mut rng = seed::rng(seed);
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = data.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..data.len())
        };
        centers.push(data[pick].clone());
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &centers[centers.len() - 1]));
        }
    }

    let mut assign = vec![usize::MAX; data.len()];
    let mut history = Vec::new();
    for _ in 0..max_iterations {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dists = vec![0.0; data.len()];
        for (i, x) in data.iter().enumerate() {
            let (j, d) = nearest_center(x, &centers);
            changed |= assign[i] != j;
            assign[i] = j;
            dists[i] = d;
            inertia += d;
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &j) in data.iter().zip(&assign) {
            counts[j] += 1;
            sums[j].iter_mut().zip(x).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                let far = (0..data.len())
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("non-empty");
                centers[j] = data[far].clone();
                dists[far] = 0.0;
            }
        }
    }
    Ok(Codebook {
        centers,
        inertia_history: history,
    })
}

/// Word histogram of a set of descriptors, normalized to unit sum.
pub fn bow_encode(descriptors: &[Vec<f64>], codebook: &Codebook) -> Result<Vec<f64>> {
    if descriptors.is_empty() {
        return Err(Error::invalid("cannot encode an empty descriptor set"));
    }
    if let Some(d) = descriptors.iter().find(|d| d.len() != codebook.dim()) {
        return Err(Error::invalid(format!(
            "descriptor has {} entries, codebook expects {}",
            d.len(),
            codebook.dim()
        )));
    }
    let mut hist = vec![0.0; codebook.len()];
    for d in descriptors {
        hist[nearest_center(d, &codebook.centers).0] += 1.0;
    }
    let total = descriptors.len() as f64;
    hist.iter_mut().for_each(|v| *v /= total);
    Ok(hist)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "vector lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid(
            "cosine similarity of a zero vector is undefined",
        ));
    }
    Ok(dot / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(f: impl Fn(f64, f64) -> f64) -> Vec<Point3> {
        (-15..=15)
            .flat_map(|j| (-15..=15).map(move |i| (i as f64, j as f64)))
            .map(|(x, y)| Point3::new(x, y, f(x, y)))
            .collect()
    }

    #[test]
    fn plane_normals_point_up() {
        let pts = grid(|x, y| 0.1 * x - 0.2 * y + 3.0);
        let expected = Vector3::new(-0.1, 0.2, 1.0).normalize();
        for n in estimate_normals(&pts, 3.0) {
            assert!((n - expected).norm() < 1e-9);
        }
        let sparse = vec![Point3::zeros(), Point3::new(100.0, 0.0, 0.0)];
        assert_eq!(estimate_normals(&sparse, 3.0), vec![Vector3::z(); 2]);
    }

    #[test]
    fn harris_is_flat_on_a_plane_and_peaks_at_a_cone_tip() {
        let plane = grid(|x, y| 0.3 * x + 0.1 * y);
        let n = estimate_normals(&plane, 3.0);
        assert!(harris3d_response(&plane, &n, 5.0, 0.04)
            .iter()
            .all(|r| r.abs() < 1e-12));

        let cone = grid(|x, y| -(x * x + y * y).sqrt());
        let n = estimate_normals(&cone, 2.0);
        let params = BaselineParams {
            keypoints: 1,
            ..Default::default()
        };
        let k = harris3d_keypoints(&cone, &n, &params);
        // The grid discretizes the apex; the peak lies within one diagonal step.
        assert!(cone[k[0]].xy().norm() <= 1.5, "{:?}", cone[k[0]]);
    }

    #[test]
    fn shot_on_a_plane_fills_the_top_cosine_bins() {
        let pts = grid(|x, y| 0.05 * x + 0.02 * y);
        let normals = estimate_normals(&pts, 3.0);
        let center = pts.iter().position(|p| p.x == 0.0 && p.y == 0.0).unwrap();
        let d = shot_descriptor(&pts, &normals, center, 8.0).unwrap();
        assert_eq!(d.len(), SHOT_DIM);
        assert!((d.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.iter().all(|&v| v >= 0.0));
        let top: f64 = d.chunks(SHOT_BINS).map(|c| c[SHOT_BINS - 1].powi(2)).sum();
        assert!(top > 0.99, "{top}");
        let lonely = vec![
            Point3::zeros(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        assert!(matches!(
            shot_descriptor(&lonely, &[Vector3::z(); 3], 0, 5.0),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    /// A bump on jittered samples: a generic, non-degenerate patch.
    fn dome(seed: u64) -> Vec<Point3> {
        let mut rng = seed::rng(seed);
        let mut pts = vec![Point3::new(0.0, 0.0, 4.0)];
        while pts.len() < 400 {
            let (x, y): (f64, f64) = (rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0));
            if x.hypot(y) <= 12.0 {
                let z = 4.0 * (-(x * x + 0.6 * y * y) / 40.0).exp() + 0.05 * x;
                pts.push(Point3::new(x, y, z));
            }
        }
        pts
    }

    proptest! {
        #[test]
        fn shot_is_repeatable_under_azimuthal_rotation(yaw in -3.1f64..3.1, tx in -50.0f64..50.0, ty in -50.0f64..50.0, tz in -5.0f64..5.0) {
            let pts = dome(5);
            let base = shot_descriptor(&pts, &estimate_normals(&pts, 5.0), 0, 10.0).unwrap();
            let pose = crate::Pose::from_yaw(yaw, Vector3::new(tx, ty, tz));
            let moved: Vec<Point3> = pts.iter().map(|p| pose.transform_point(p)).collect();
            let d = shot_descriptor(&moved, &estimate_normals(&moved, 5.0), 0, 10.0).unwrap();
            let err = base.iter().zip(&d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-6, "{}", err);
        }
    }

    fn blobs() -> Vec<Vec<f64>> {
        let mut rng = seed::rng(8);
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        (0..90)
            .map(|i| {
                let c = centers[i % 3];
                vec![
                    c[0] + rng.random_range(-1.0..1.0),
                    c[1] + rng.random_range(-1.0..1.0),
                ]
            })
            .collect()
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let data = blobs();
        let cb = kmeans_fit(&data, 3, 100, 1).unwrap();
        for (i, x) in data.iter().enumerate() {
            let same = nearest_center(x, &cb.centers).0;
            let peer = nearest_center(&data[i % 3], &cb.centers).0;
            assert_eq!(same, peer);
        }
        assert!(cb.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        assert_eq!(kmeans_fit(&data, 3, 100, 1).unwrap(), cb);
        assert!(kmeans_fit(&data, 91, 10, 1).is_err());
        assert!(kmeans_fit(&data, 1, 10, 1).is_err());
    }

    proptest! {
        #[test]
        fn kmeans_inertia_never_increases(s in any::<u64>(), k in 2usize..8) {
            let mut rng = seed::rng(s);
            let data: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
            let cb = kmeans_fit(&data, k, 50, s).unwrap();
            prop_assert!(cb.inertia_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn kmeans_with_k_equal_to_distinct_points_has_zero_inertia() {
        let data: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let cb = kmeans_fit(&data, 6, 100, 2).unwrap();
        assert_eq!(*cb.inertia_history.last().unwrap(), 0.0);
        let mut centers = cb.centers.clone();
        centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(centers, data);
    }

    #[test]
    fn bow_and_cosine() {
        let cb = Codebook {
            centers: vec![vec![0.0, 0.0], vec![10.0, 0.0]],
            inertia_history: vec![],
        };
        let h = bow_encode(
            &[
                vec![1.0, 0.0],
                vec![9.0, 0.0],
                vec![11.0, 1.0],
                vec![0.5, 0.5],
            ],
            &cb,
        )
        .unwrap();
        assert_eq!(h, vec![0.5, 0.5]);
        assert_eq!(
            bow_encode(&[vec![0.1, 0.0], vec![0.0, 0.2]], &cb).unwrap(),
            vec![1.0, 0.0]
        );
        assert!(bow_encode(&[], &cb).is_err());
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 1.0], &[2.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        let back = Codebook::from_checkpoint(&cb.to_checkpoint().unwrap()).unwrap();
        assert_eq!(back.centers, cb.centers);
    }
}
