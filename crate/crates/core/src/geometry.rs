//! Point clouds, rigid poses and the preprocessing applied to every cloud
//! before it reaches the network.

use std::collections::{HashMap, HashSet};

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed;

pub type Point3 = Vector3<f64>;

/// An ordered point set in a local metric frame.
///
/// `centroid` is the absolute position that was removed by [`demean`]; for a
/// cloud that was never demeaned it is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub id: String,
    pub points: Vec<Point3>,
    pub centroid: Point3,
}

impl PointCloud {
    pub fn new(id: impl Into<String>, points: Vec<Point3>) -> Self {
        PointCloud {
            id: id.into(),
            points,
            centroid: Point3::zeros(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points with the recorded centroid added back.
    pub fn absolute_points(&self) -> Vec<Point3> {
        self.points.iter().map(|p| p + self.centroid).collect()
    }

    pub fn mean(&self) -> Option<Point3> {
        mean_of(&self.points)
    }

    fn with_points(&self, points: Vec<Point3>) -> Self {
        PointCloud {
            id: self.id.clone(),
            points,
            centroid: self.centroid,
        }
    }
}

pub(crate) fn mean_of(points: &[Point3]) -> Option<Point3> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Point3::zeros(), |acc, p| acc + p);
    Some(sum / points.len() as f64)
}

/// A rigid transform `p' = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation about +z by `yaw` radians followed by translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation,
        }
    }

    /// Rotation given as an axis-angle vector.
    pub fn from_rotation_vector(omega: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: *Rotation3::new(omega).matrix(),
            translation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self
            .rotation
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("pose has non-finite entries"));
        }
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        if ortho > Self::TOLERANCE {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (error {ortho:e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::invalid(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(())
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rotation angle of `R` in radians.
    pub fn rotation_angle(&self) -> f64 {
        // atan2 of (sin, cos) stays accurate for small angles, where acos does not.
        let r = &self.rotation;
        let axis = Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
        (axis.norm() / 2.0).atan2((r.trace() - 1.0) / 2.0)
    }

    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Rotation angle and translation distance between two poses.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let delta = self.inverse().compose(other);
        (
            delta.rotation_angle(),
            (self.translation - other.translation).norm(),
        )
    }

    /// Row-major `R` followed by `t`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.rotation[(r, c)];
            }
        }
        out[9..].copy_from_slice(self.translation.as_slice());
        out
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::from_row_slice(&v[..9]);
        Pose::new(rotation, Vector3::new(v[9], v[10], v[11]))
    }
}

/// A point cloud rigidly attached to the vehicle pose it was collected at.
#[derive(Debug, Clone, PartialEq)]
pub struct Submap {
    pub cloud: PointCloud,
    pub pose: Pose,
}

impl Submap {
    /// Cloud points mapped to the world frame through `pose`.
    pub fn world_points(&self) -> Vec<Point3> {
        self.cloud
            .absolute_points()
            .iter()
            .map(|p| self.pose.transform_point(p))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub max_yaw_deg: f64,
    pub max_dz_m: f64,
    pub noise_sigma_m: f64,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            max_yaw_deg: 3.0,
            max_dz_m: 0.2,
            noise_sigma_m: 0.05,
            seed: 0,
        }
    }
}

impl AugmentParams {
    pub fn none() -> Self {
        AugmentParams {
            max_yaw_deg: 0.0,
            max_dz_m: 0.0,
            noise_sigma_m: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.max_yaw_deg, self.max_dz_m, self.noise_sigma_m];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "augmentation parameters must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Subtracts the mean. Returns the centered cloud and the removed centroid,
/// which is also accumulated into the cloud's `centroid` label.
pub fn demean(cloud: &PointCloud) -> Result<(PointCloud, Point3)> {
    let mean = cloud
        .mean()
        .ok_or_else(|| Error::invalid(format!("cannot demean empty cloud '{}'", cloud.id)))?;
    let points = cloud.points.iter().map(|p| p - mean).collect();
    let mut out = cloud.with_points(points);
    out.centroid = cloud.centroid + mean;
    Ok((out, mean))
}

/// Keeps points whose horizontal distance to `center_xy` is at most `radius`.
pub fn cylindrical_crop(
    cloud: &PointCloud,
    center_xy: [f64; 2],
    radius: f64,
) -> Result<PointCloud> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!(
            "crop radius must be positive, got {radius}"
        )));
    }
    let r2 = radius * radius;
    let points = cloud
        .points
        .iter()
        .filter(|p| (p.x - center_xy[0]).powi(2) + (p.y - center_xy[1]).powi(2) <= r2)
        .copied()
        .collect();
    Ok(cloud.with_points(points))
}

fn cell_key(p: &Point3, cell: f64) -> (i64, i64, i64) {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

fn cell_key_2d(p: &Point3, cell: f64) -> (i64, i64) {
    ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
}

/// Replaces the points of every occupied 3-D cell by their centroid.
/// Output order follows the first occurrence of each cell in the input.
pub fn grid_downsample(cloud: &PointCloud, cell: f64) -> Result<PointCloud> {
    if !(cell > 0.0) {
        return Err(Error::invalid(format!(
            "cell size must be positive, got {cell}"
        )));
    }
    let mut slots: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut sums: Vec<(Point3, usize)> = Vec::new();
    for p in &cloud.points {
        let slot = *slots.entry(cell_key(p, cell)).or_insert_with(|| {
            sums.push((Point3::zeros(), 0));
            sums.len() - 1
        });
        sums[slot].0 += p;
        sums[slot].1 += 1;
    }
    let points = sums
        .into_iter()
        .map(|(s, n)| if n == 1 { s } else { s / n as f64 })
        .collect();
    Ok(cloud.with_points(points))
}

/// How farthest point sampling picks its first point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpsStart {
    /// Index 0.
    FirstIndex,
    /// A uniformly random index drawn from the given seed.
    Random(u64),
    /// The lexicographically smallest point by (x, y, z); independent of
    /// point order.
    Lexicographic,
}

/// Greedy max-min subset selection. Ties go to the lowest index.
pub fn farthest_point_sampling(points: &[Point3], k: usize, start: FpsStart) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "FPS needs 1 <= k <= {n}, got k = {k}"
        )));
    }
    let first = match start {
        FpsStart::FirstIndex => 0,
        FpsStart::Random(s) => seed::rng(s).random_range(0..n),
        FpsStart::Lexicographic => lexicographic_min(points),
    };
    let mut selected = Vec::with_capacity(k);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = first;
    for _ in 0..k {
        selected.push(current);
        min_d2[current] = f64::NEG_INFINITY;
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if min_d2[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = (p - c).norm_squared();
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        if best == usize::MAX {
            break;
        }
        current = best;
    }
    Ok(selected)
}

pub(crate) fn lexicographic_min(points: &[Point3]) -> usize {
    (0..points.len())
        .min_by(|&a, &b| {
            let (p, q) = (points[a], points[b]);
            p.x.total_cmp(&q.x)
                .then(p.y.total_cmp(&q.y))
                .then(p.z.total_cmp(&q.z))
                .then(a.cmp(&b))
        })
        .unwrap_or(0)
}

/// Set of occupied x-y cells.
pub fn occupancy(points: &[Point3], cell: f64) -> HashSet<(i64, i64)> {
    points.iter().map(|p| cell_key_2d(p, cell)).collect()
}

/// Intersection over union of the 2-D occupancy footprints of two clouds,
/// taken on their points as stored (both must share a frame).
pub fn overlap_iou(a: &PointCloud, b: &PointCloud, cell: f64) -> Result<f64> {
    overlap_iou_points(&a.points, &b.points, cell)
}

pub fn overlap_iou_points(a: &[Point3], b: &[Point3], cell: f64) -> Result<f64> {
    if !(cell > 0.0) {
        return Err(Error::invalid(format!(
            "cell size must be positive, got {cell}"
        )));
    }
    if a.is_empty() && b.is_empty() {
        return Err(Error::invalid("IoU of two empty clouds is undefined"));
    }
    let oa = occupancy(a, cell);
    let ob = occupancy(b, cell);
    let inter = oa.intersection(&ob).count();
    let union = oa.len() + ob.len() - inter;
    Ok(inter as f64 / union as f64)
}

/// Yaw about the centroid, then a z shift, then per-coordinate Gaussian noise.
/// Zero-magnitude steps are skipped so that all-zero parameters return the
/// input unchanged.
pub fn augment(cloud: &PointCloud, params: &AugmentParams) -> Result<PointCloud> {
    params.validate()?;
    let mut rng = seed::rng(params.seed);
    let mut points = cloud.points.clone();
    if params.max_yaw_deg > 0.0 && !points.is_empty() {
        let max = params.max_yaw_deg.to_radians();
        let yaw = rng.random_range(-max..=max);
        let c = mean_of(&points).expect("non-empty");
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        for p in &mut points {
            *p = c + rot * (*p - c);
        }
    }
    if params.max_dz_m > 0.0 {
        let dz = rng.random_range(-params.max_dz_m..=params.max_dz_m);
        for p in &mut points {
            p.z += dz;
        }
    }
    if params.noise_sigma_m > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma_m).expect("sigma is finite and positive");
        for p in &mut points {
            p.x += normal.sample(&mut rng);
            p.y += normal.sample(&mut rng);
            p.z += normal.sample(&mut rng);
        }
    }
    Ok(cloud.with_points(points))
}

pub fn apply_transform(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .map(|p| pose.transform_point(p))
        .collect();
    cloud.with_points(points)
}

pub fn transform_points(points: &[Point3], pose: &Pose) -> Vec<Point3> {
    points.iter().map(|p| pose.transform_point(p)).collect()
}

/// Grid-downsamples and then, if still above `n`, keeps `n` points by FPS
/// from the lexicographically smallest point. Output is demeaned.
pub fn prepare_network_input(cloud: &PointCloud, cell: f64, n: usize) -> Result<PointCloud> {
    let down = grid_downsample(cloud, cell)?;
    let down = if down.len() > n {
        let idx = farthest_point_sampling(&down.points, n, FpsStart::Lexicographic)?;
        let mut idx_sorted = idx;
        idx_sorted.sort_unstable();
        down.with_points(idx_sorted.into_iter().map(|i| down.points[i]).collect())
    } else {
        down
    };
    Ok(demean(&down)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(points: &[(f64, f64, f64)]) -> PointCloud {
        PointCloud::new(
            "t",
            points
                .iter()
                .map(|&(x, y, z)| Point3::new(x, y, z))
                .collect(),
        )
    }

    #[test]
    fn demean_examples() {
        let (c, m) = demean(&cloud(&[(1.0, 1.0, 0.0), (3.0, 1.0, 0.0)])).unwrap();
        assert_eq!(
            c.points,
            vec![Point3::new(-1.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)]
        );
        assert_eq!(m, Point3::new(2.0, 1.0, 0.0));
        assert_eq!(c.centroid, m);

        let (c, m) = demean(&cloud(&[(5.0, 5.0, 5.0)])).unwrap();
        assert_eq!(c.points, vec![Point3::zeros()]);
        assert_eq!(m, Point3::new(5.0, 5.0, 5.0));

        assert!(matches!(demean(&cloud(&[])), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn crop_boundary() {
        let c = cloud(&[(99.9, 0.0, 3.0), (0.0, 100.1, -2.0)]);
        let out = cylindrical_crop(&c, [0.0, 0.0], 100.0).unwrap();
        assert_eq!(out.points, vec![Point3::new(99.9, 0.0, 3.0)]);
        assert!(cylindrical_crop(&c, [0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn crop_area_ratio_on_dense_grid() {
        // 200 m x 200 m grid at 0.5 m spacing; expected fraction pi/4.
        let mut pts = Vec::new();
        for i in 0..400 {
            for j in 0..400 {
                pts.push(Point3::new(
                    -100.0 + 0.25 + 0.5 * i as f64,
                    -100.0 + 0.25 + 0.5 * j as f64,
                    0.0,
                ));
            }
        }
        let c = PointCloud::new("grid", pts);
        let out = cylindrical_crop(&c, [0.0, 0.0], 100.0).unwrap();
        let ratio = out.len() as f64 / c.len() as f64;
        assert!(
            (ratio / std::f64::consts::FRAC_PI_4 - 1.0).abs() < 0.02,
            "ratio {ratio}"
        );
    }

    #[test]
    fn downsample_examples() {
        let out = grid_downsample(&cloud(&[(0.2, 0.2, 0.2), (0.6, 0.4, 0.8)]), 1.0).unwrap();
        assert_eq!(out.points.len(), 1);
        assert!((out.points[0] - Point3::new(0.4, 0.3, 0.5)).norm() < 1e-12);

        let distinct = cloud(&[(0.5, 0.5, 0.5), (1.5, 0.5, 0.5), (0.5, 2.5, 0.5)]);
        assert_eq!(
            grid_downsample(&distinct, 1.0).unwrap().points,
            distinct.points
        );

        // 10 x 10 grid at 0.5 m spacing: brute-force count of distinct 1 m cells.
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Point3::new(0.5 * i as f64 + 0.1, 0.5 * j as f64 + 0.1, 0.3));
            }
        }
        let brute: HashSet<(i64, i64)> = pts
            .iter()
            .map(|p| (p.x.floor() as i64, p.y.floor() as i64))
            .collect();
        assert_eq!(brute.len(), 25);
        assert_eq!(
            grid_downsample(&PointCloud::new("g", pts), 1.0)
                .unwrap()
                .len(),
            25
        );
    }

    #[test]
    fn fps_examples() {
        let line: Vec<Point3> = (0..=10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(
            farthest_point_sampling(&line, 2, FpsStart::FirstIndex).unwrap(),
            vec![0, 10]
        );

        let square = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
        ];
        // (1,1) is farthest; (1,0) and (0,1) tie and the lower index wins.
        assert_eq!(
            farthest_point_sampling(&square, 3, FpsStart::FirstIndex).unwrap(),
            vec![0, 3, 1]
        );

        let mut all = farthest_point_sampling(&square, 4, FpsStart::FirstIndex).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(farthest_point_sampling(&square, 5, FpsStart::FirstIndex).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = cloud(&[(0.5, 0.5, 0.0), (1.5, 0.5, 0.0)]);
        assert_eq!(overlap_iou(&a, &a, 1.0).unwrap(), 1.0);
        let b = cloud(&[(5.5, 0.5, 0.0)]);
        assert_eq!(overlap_iou(&a, &b, 1.0).unwrap(), 0.0);

        // Two 100-cell strips sharing 50 cells.
        let s1: Vec<_> = (0..100).map(|i| (i as f64 + 0.5, 0.5, 0.0)).collect();
        let s2: Vec<_> = (50..150).map(|i| (i as f64 + 0.5, 0.5, 1.0)).collect();
        let iou = overlap_iou(&cloud(&s1), &cloud(&s2), 1.0).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-15);
        assert!(overlap_iou(&cloud(&[]), &cloud(&[]), 1.0).is_err());
    }

    #[test]
    fn augment_identity_and_determinism() {
        let c = cloud(&[(1.0, 2.0, 3.0), (-4.0, 0.5, 9.0), (2.0, 2.0, 2.0)]);
        assert_eq!(augment(&c, &AugmentParams::none()).unwrap(), c);
        let p = AugmentParams {
            seed: 11,
            ..Default::default()
        };
        let a = augment(&c, &p).unwrap();
        let b = augment(&c, &p).unwrap();
        for (x, y) in a.points.iter().zip(&b.points) {
            for k in 0..3 {
                assert_eq!(x[k].to_bits(), y[k].to_bits());
            }
        }
        assert_ne!(a, c);
    }

    #[test]
    fn augment_noise_statistics() {
        let pts: Vec<Point3> = (0..100_000)
            .map(|i| Point3::new(i as f64 * 1e-3, 0.0, 0.0))
            .collect();
        let c = PointCloud::new("n", pts);
        let p = AugmentParams {
            max_yaw_deg: 0.0,
            max_dz_m: 0.0,
            noise_sigma_m: 0.05,
            seed: 5,
        };
        let out = augment(&c, &p).unwrap();
        for axis in 0..3 {
            let d: Vec<f64> = out
                .points
                .iter()
                .zip(&c.points)
                .map(|(a, b)| a[axis] - b[axis])
                .collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
            let std = var.sqrt();
            assert!((0.049..=0.051).contains(&std), "axis {axis} std {std}");
        }
    }

    #[test]
    fn augment_yaw_and_shift_bounds() {
        let c = cloud(&[(10.0, 0.0, 0.0), (-10.0, 0.0, 0.0)]);
        let p = AugmentParams {
            max_yaw_deg: 3.0,
            max_dz_m: 0.2,
            noise_sigma_m: 0.0,
            seed: 1,
        };
        for s in 0..50 {
            let out = augment(&c, &AugmentParams { seed: s, ..p }).unwrap();
            let v = out.points[0] - out.points[1];
            let yaw = v.y.atan2(v.x).abs();
            assert!(yaw <= 3.0f64.to_radians() + 1e-12);
            assert!(out.points[0].z.abs() <= 0.2 + 1e-12);
        }
    }

    #[test]
    fn transform_examples() {
        let c = cloud(&[(1.0, 2.0, 3.0)]);
        assert_eq!(apply_transform(&c, &Pose::identity()), c);
        let t = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(
            apply_transform(&cloud(&[(0.0, 0.0, 0.0)]), &t).points[0],
            Point3::new(1.0, 2.0, 3.0)
        );
        assert!(Pose::new(Matrix3::identity() * 2.0, Vector3::zeros()).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(reflect, Vector3::zeros()).is_err());
    }

    fn arb_points(max: usize) -> impl Strategy<Value = Vec<Point3>> {
        prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64, -20.0..20.0f64), 1..max).prop_map(
            |v| {
                v.into_iter()
                    .map(|(x, y, z)| Point3::new(x, y, z))
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn demean_idempotent(points in arb_points(40)) {
            let c = PointCloud::new("p", points);
            let (d, _) = demean(&c).unwrap();
            let (_, m2) = demean(&d).unwrap();
            prop_assert!(m2.norm() < 1e-9);
        }

        #[test]
        fn downsample_idempotent(points in arb_points(60), cell in 0.5..5.0f64) {
            let once = grid_downsample(&PointCloud::new("p", points), cell).unwrap();
            let twice = grid_downsample(&once, cell).unwrap();
            prop_assert!(twice.len() <= once.len());
            prop_assert_eq!(twice.len(), once.len());
        }

        #[test]
        fn iou_symmetric_and_bounded(a in arb_points(30), b in arb_points(30), cell in 0.5..10.0f64) {
            let (ca, cb) = (PointCloud::new("a", a), PointCloud::new("b", b));
            let ab = overlap_iou(&ca, &cb, cell).unwrap();
            let ba = overlap_iou(&cb, &ca, cell).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(overlap_iou(&ca, &ca, cell).unwrap(), 1.0);
        }

        #[test]
        fn transform_preserves_distances(points in arb_points(20), w in prop::array::uniform3(-3.0..3.0f64), t in prop::array::uniform3(-100.0..100.0f64)) {
            let pose = Pose::from_rotation_vector(Vector3::from(w), Vector3::from(t));
            let c = PointCloud::new("p", points);
            let out = apply_transform(&c, &pose);
            for i in 0..c.len() {
                for j in 0..c.len() {
                    let d0 = (c.points[i] - c.points[j]).norm();
                    let d1 = (out.points[i] - out.points[j]).norm();
                    prop_assert!((d0 - d1).abs() < 1e-9);
                }
            }
            let back = apply_transform(&out, &pose.inverse());
            for (p, q) in back.points.iter().zip(&c.points) {
                prop_assert!((p - q).norm() < 1e-9);
            }
        }
    }
}
