//! Cylinder crops, IoU-labeled pairs and the dataset manifest.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::geometry::{demean, occupancy, Point3, PointCloud, Pose};
use crate::seed;

use super::survey::{LegKind, Survey};

pub const MANIFEST_HEADER: &str = "bathy-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Pos => "pos",
            Label::Neg => "neg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub train_pos: usize,
    pub val_pos: usize,
    pub test_pos: usize,
    pub test_neg: usize,
}

impl Default for PairCounts {
    fn default() -> Self {
        // Table I scaled by roughly 1/40 (1500 clouds / 5752 positive pairs).
        PairCounts {
            train_pos: 150,
            val_pos: 40,
            test_pos: 60,
            test_neg: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetParams {
    pub crop_radius: f64,
    /// Along-track spacing of crop centers.
    pub crop_step: f64,
    pub iou_bounds: [f64; 2],
    /// Occupancy cell for IoU labeling; must exceed the sounding spacing.
    pub iou_cell: f64,
    pub min_points: usize,
    /// Along-track fractions of the survey area assigned to train and val;
    /// the remainder is the test region.
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub counts: PairCounts,
    pub seed: u64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            crop_radius: 100.0,
            crop_step: 10.0,
            iou_bounds: [0.4, 0.8],
            iou_cell: 4.0,
            min_points: 64,
            train_fraction: 0.55,
            val_fraction: 0.15,
            counts: PairCounts::default(),
            seed: 0,
        }
    }
}

/// A cylinder crop, stored demeaned in the dead-reckoning world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub split: Split,
    pub cloud: PointCloud,
    /// Dead-reckoning pose of the submap the crop was cut from.
    pub pose: Pose,
    /// Ground-truth pose of the same submap.
    pub truth: Pose,
}

impl Crop {
    pub fn id(&self) -> &str {
        &self.cloud.id
    }

    /// Maps dead-reckoning world coordinates to true world coordinates.
    pub fn truth_correction(&self) -> Pose {
        self.truth.compose(&self.pose.inverse())
    }

    pub fn true_points(&self) -> Vec<Point3> {
        let c = self.truth_correction();
        self.cloud
            .absolute_points()
            .iter()
            .map(|p| c.transform_point(p))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEntry {
    pub id_a: String,
    pub id_b: String,
    pub iou: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub crops: Vec<Crop>,
    pub pairs: Vec<PairEntry>,
}

impl Dataset {
    pub fn crop(&self, id: &str) -> Option<&Crop> {
        self.crops.iter().find(|c| c.id() == id)
    }

    pub fn split_of(&self, pair: &PairEntry) -> Option<Split> {
        self.crop(&pair.id_a).map(|c| c.split)
    }

    pub fn pairs_in(&self, split: Split, label: Label) -> Vec<&PairEntry> {
        self.pairs
            .iter()
            .filter(|p| p.label == label && self.split_of(p) == Some(split))
            .collect()
    }
}

struct Candidate {
    crop: Crop,
    revisit: bool,
    center: [f64; 2],
    cells: HashSet<(i64, i64)>,
}

fn iou_of(a: &HashSet<(i64, i64)>, b: &HashSet<(i64, i64)>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Cuts crops along every leg, labels pairs by IoU of their true
/// footprints and samples the requested number of pairs per split.
///
/// Train and validation pairs come from the lawn-mower lines of their
/// regions; test pairs pair a line crop (source) with a revisit crop
/// (target) inside the test region.
pub fn build_pair_dataset(survey: &Survey, params: &DatasetParams) -> Result<Dataset> {
    if survey.dr_submaps.len() < 2 {
        return Err(Error::invalid("need at least two submaps"));
    }
    let [lo, hi] = params.iou_bounds;
    if !(params.crop_radius > 0.0
        && params.crop_step > 0.0
        && params.iou_cell > 0.0
        && 0.0 < lo
        && lo <= hi
        && hi <= 1.0)
    {
        return Err(Error::invalid("invalid dataset parameters"));
    }
    let r = params.crop_radius;

    // Along-track extent of the survey, from the true line submaps.
    let line_x: Vec<f64> = survey
        .true_submaps
        .iter()
        .zip(&survey.info)
        .filter(|(_, i)| matches!(i.kind, LegKind::Line(_)))
        .flat_map(|(m, i)| {
            let c = m.pose.translation.x;
            [c - i.length / 2.0, c + i.length / 2.0]
        })
        .collect();
    let x_min = line_x.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = line_x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let region = |x: f64| {
        let f = (x - x_min) / (x_max - x_min);
        if f < params.train_fraction {
            Split::Train
        } else if f < params.train_fraction + params.val_fraction {
            Split::Val
        } else {
            Split::Test
        }
    };

    let mut candidates: Vec<Candidate> = Vec::new();
    for (k, ((tm, dm), info)) in survey
        .true_submaps
        .iter()
        .zip(&survey.dr_submaps)
        .zip(&survey.info)
        .enumerate()
    {
        let half = info.length / 2.0;
        let local = &tm.cloud.points;
        let mut s = -half + r;
        let mut j = 0;
        while s <= half - r + 1e-9 {
            let pts: Vec<Point3> = local
                .iter()
                .filter(|p| (p.x - s).powi(2) + p.y.powi(2) <= r * r)
                .copied()
                .collect();
            let center_true = tm.pose.transform_point(&Point3::new(s, 0.0, 0.0));
            if pts.len() >= params.min_points {
                let tag = match info.kind {
                    LegKind::Line(i) => format!("l{i}"),
                    LegKind::Revisit => "r".to_string(),
                };
                let dr_world: Vec<Point3> =
                    pts.iter().map(|p| dm.pose.transform_point(p)).collect();
                let true_world: Vec<Point3> =
                    pts.iter().map(|p| tm.pose.transform_point(p)).collect();
                let (cloud, _) = demean(&PointCloud::new(format!("{tag}-{j:03}"), dr_world))?;
                candidates.push(Candidate {
                    crop: Crop {
                        split: region(center_true.x),
                        cloud,
                        pose: dm.pose,
                        truth: tm.pose,
                    },
                    revisit: info.kind == LegKind::Revisit,
                    center: [center_true.x, center_true.y],
                    cells: occupancy(&true_world, params.iou_cell),
                });
            }
            let _ = k;
            s += params.crop_step;
            j += 1;
        }
    }

    let far = 2.0 * r + 2.0 * params.iou_cell * std::f64::consts::SQRT_2;
    let mut pos: BTreeMap<Split, Vec<(usize, usize, f64)>> = BTreeMap::new();
    let mut neg: Vec<(usize, usize, f64)> = Vec::new();
    for a in 0..candidates.len() {
        for b in 0..candidates.len() {
            let (ca, cb) = (&candidates[a], &candidates[b]);
            if ca.revisit || ca.crop.split != cb.crop.split {
                continue;
            }
            let test_pair = ca.crop.split == Split::Test;
            // Test pairs run line -> revisit; train/val pairs line -> line, each unordered pair once.
            if test_pair != cb.revisit || (!test_pair && b <= a) {
                continue;
            }
            let d = (ca.center[0] - cb.center[0]).hypot(ca.center[1] - cb.center[1]);
            let iou = if d > far {
                0.0
            } else {
                iou_of(&ca.cells, &cb.cells)
            };
            if (lo..=hi).contains(&iou) {
                pos.entry(ca.crop.split).or_default().push((a, b, iou));
            } else if iou == 0.0 && test_pair {
                neg.push((a, b, iou));
            }
        }
    }

    let mut rng = seed::rng(seed::derive(params.seed, "pairs"));
    let mut take = |mut v: Vec<(usize, usize, f64)>, n: usize| {
        v.shuffle(&mut rng);
        v.truncate(n);
        v.sort_by_key(|x| (x.0, x.1));
        v
    };
    let c = params.counts;
    let train = take(pos.remove(&Split::Train).unwrap_or_default(), c.train_pos);
    let val = take(pos.remove(&Split::Val).unwrap_or_default(), c.val_pos);
    let test_pos = spread(
        pos.remove(&Split::Test).unwrap_or_default(),
        c.test_pos,
        &mut rng,
    );
    let test_neg = {
        let mut v = neg;
        v.shuffle(&mut rng);
        v.truncate(c.test_neg);
        v.sort_by_key(|x| (x.0, x.1));
        v
    };
    if train.len() < c.train_pos
        || val.len() < c.val_pos
        || test_pos.len() < c.test_pos
        || test_neg.len() < c.test_neg
    {
        return Err(Error::Shortfall {
            requested: format!(
                "train_pos {} val_pos {} test_pos {} test_neg {}",
                c.train_pos, c.val_pos, c.test_pos, c.test_neg
            ),
            achieved: format!(
                "train_pos {} val_pos {} test_pos {} test_neg {}",
                train.len(),
                val.len(),
                test_pos.len(),
                test_neg.len()
            ),
        });
    }

    let mut used: Vec<usize> = Vec::new();
    let mut pairs = Vec::new();
    for (list, label) in [
        (&train, Label::Pos),
        (&val, Label::Pos),
        (&test_pos, Label::Pos),
        (&test_neg, Label::Neg),
    ] {
        for &(a, b, iou) in list {
            used.extend([a, b]);
            pairs.push(PairEntry {
                id_a: candidates[a].crop.id().to_string(),
                id_b: candidates[b].crop.id().to_string(),
                iou,
                label,
            });
        }
    }
    used.sort_unstable();
    used.dedup();
    let mut crops: Vec<Option<Crop>> = candidates.into_iter().map(|c| Some(c.crop)).collect();
    let crops = used
        .into_iter()
        .map(|i| crops[i].take().expect("each crop used once"))
        .collect();
    Ok(Dataset { crops, pairs })
}

/// Samples `n` pairs round-robin over their source crops, so that as many
/// distinct queries as possible are represented.
fn spread(v: Vec<(usize, usize, f64)>, n: usize, rng: &mut seed::Rng) -> Vec<(usize, usize, f64)> {
    let mut groups: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for p in v {
        groups.entry(p.0).or_default().push(p);
    }
    let mut groups: Vec<Vec<(usize, usize, f64)>> = groups.into_values().collect();
    groups.shuffle(rng);
    for g in &mut groups {
        g.shuffle(rng);
        g.reverse();
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n && groups.iter().any(|g| !g.is_empty()) {
        for g in &mut groups {
            if out.len() == n {
                break;
            }
            out.extend(g.pop());
        }
    }
    out.sort_by_key(|x| (x.0, x.1));
    out
}

/// Manifest row for one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub path: PathBuf,
    pub centroid: Point3,
    pub pose: Pose,
    pub truth: Pose,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub pairs: Vec<PairEntry>,
}

fn fmt_pose(p: &Pose) -> String {
    p.to_row_major()
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

impl DatasetManifest {
    /// Manifest for `dataset` whose clouds live at `clouds_dir/<id>.xyz`.
    pub fn for_dataset(dataset: &Dataset, clouds_dir: &Path) -> Self {
        DatasetManifest {
            entries: dataset
                .crops
                .iter()
                .map(|c| ManifestEntry {
                    id: c.id().to_string(),
                    split: c.split,
                    path: clouds_dir.join(format!("{}.xyz", c.id())),
                    centroid: c.cloud.centroid,
                    pose: c.pose,
                    truth: c.truth,
                })
                .collect(),
            pairs: dataset.pairs.clone(),
        }
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        out.push_str("# cloud <id> <split> <path> <centroid x y z> <pose R row-major, t> <truth R row-major, t>\n");
        out.push_str("# pair <id_a> <id_b> <iou> <pos|neg>\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "cloud {} {} {} {} {} {} {} {}",
                e.id,
                e.split.as_str(),
                e.path.display(),
                e.centroid.x,
                e.centroid.y,
                e.centroid.z,
                fmt_pose(&e.pose),
                fmt_pose(&e.truth)
            );
        }
        for p in &self.pairs {
            let _ = writeln!(
                out,
                "pair {} {} {} {}",
                p.id_a,
                p.id_b,
                p.iou,
                p.label.as_str()
            );
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
            _ => return Err(perr(1, format!("missing header '{MANIFEST_HEADER}'"))),
        }
        let mut m = DatasetManifest::default();
        for (i, line) in lines {
            let ln = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| perr(ln, format!("bad number '{s}': {e}")))
            };
            match f[0] {
                "cloud" => {
                    if f.len() != 1 + 3 + 3 + 24 {
                        return Err(perr(ln, format!("cloud record has {} fields", f.len())));
                    }
                    let split = Split::parse(f[2])
                        .ok_or_else(|| perr(ln, format!("unknown split '{}'", f[2])))?;
                    let vals = f[4..]
                        .iter()
                        .map(|s| num(s))
                        .collect::<Result<Vec<f64>>>()?;
                    let pose_of = |v: &[f64]| -> Result<Pose> {
                        let arr: [f64; 12] = v.try_into().expect("12 values");
                        Pose::from_row_major(&arr).map_err(|e| perr(ln, e.to_string()))
                    };
                    m.entries.push(ManifestEntry {
                        id: f[1].to_string(),
                        split,
                        path: PathBuf::from(f[3]),
                        centroid: Point3::new(vals[0], vals[1], vals[2]),
                        pose: pose_of(&vals[3..15])?,
                        truth: pose_of(&vals[15..27])?,
                    });
                }
                "pair" => {
                    if f.len() != 5 {
                        return Err(perr(ln, format!("pair record has {} fields", f.len())));
                    }
                    let label = match f[4] {
                        "pos" => Label::Pos,
                        "neg" => Label::Neg,
                        other => return Err(perr(ln, format!("unknown label '{other}'"))),
                    };
                    m.pairs.push(PairEntry {
                        id_a: f[1].to_string(),
                        id_b: f[2].to_string(),
                        iou: num(f[3])?,
                        label,
                    });
                }
                other => return Err(perr(ln, format!("unknown record '{other}'"))),
            }
        }
        for p in &m.pairs {
            for id in [&p.id_a, &p.id_b] {
                if m.entry(id).is_none() {
                    return Err(perr(0, format!("pair references unknown cloud '{id}'")));
                }
            }
        }
        Ok(m)
    }

    /// Loads every cloud, resolving relative paths against `base`.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        let crops = self
            .entries
            .iter()
            .map(|e| {
                let path = if e.path.is_absolute() {
                    e.path.clone()
                } else {
                    base.join(&e.path)
                };
                let mut cloud = crate::io::read_cloud(&path, &e.id)?;
                cloud.centroid = e.centroid;
                Ok(Crop {
                    split: e.split,
                    cloud,
                    pose: e.pose,
                    truth: e.truth,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            crops,
            pairs: self.pairs.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::overlap_iou_points;
    use crate::synth::survey::{simulate_survey, DriftModel, SurveyPlan};
    use crate::synth::terrain::{generate_terrain, SpectrumParams};

    fn survey() -> Survey {
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
                seed: 4,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn params() -> DatasetParams {
        DatasetParams {
            crop_radius: 50.0,
            crop_step: 10.0,
            iou_cell: 6.0,
            counts: PairCounts {
                train_pos: 40,
                val_pos: 10,
                test_pos: 20,
                test_neg: 20,
            },
            ..Default::default()
        }
    }

    #[test]
    fn labels_round_trip_through_overlap_iou() {
        let p = params();
        let ds = build_pair_dataset(&survey(), &p).unwrap();
        assert_eq!(ds.pairs.len(), 90);
        for pair in &ds.pairs {
            let a = ds.crop(&pair.id_a).unwrap().true_points();
            let b = ds.crop(&pair.id_b).unwrap().true_points();
            let iou = overlap_iou_points(&a, &b, p.iou_cell).unwrap();
            assert!((iou - pair.iou).abs() < 1e-12);
            match pair.label {
                Label::Pos => assert!((0.4..=0.8).contains(&iou)),
                Label::Neg => assert_eq!(iou, 0.0),
            }
        }
        assert_eq!(ds.pairs_in(Split::Test, Label::Neg).len(), 20);
        assert_eq!(ds.pairs_in(Split::Train, Label::Pos).len(), 40);
    }

    #[test]
    fn identical_crops_are_excluded() {
        let ds = build_pair_dataset(&survey(), &params()).unwrap();
        assert!(ds.pairs.iter().all(|p| p.id_a != p.id_b && p.iou < 1.0));
    }

    #[test]
    fn shortfall_lists_achieved_counts() {
        let mut p = params();
        p.counts.test_pos = 100_000;
        match build_pair_dataset(&survey(), &p) {
            Err(Error::Shortfall { achieved, .. }) => assert!(achieved.contains("test_pos")),
            other => panic!("expected shortfall, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_and_manifest_round_trips() {
        let s = survey();
        let a = build_pair_dataset(&s, &params()).unwrap();
        let b = build_pair_dataset(&s, &params()).unwrap();
        assert_eq!(a, b);
        let m = DatasetManifest::for_dataset(&a, Path::new("clouds"));
        let text = m.to_text();
        let back = DatasetManifest::parse(&text, "mem").unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn test_pairs_join_line_and_revisit() {
        let ds = build_pair_dataset(&survey(), &params()).unwrap();
        for p in ds
            .pairs
            .iter()
            .filter(|p| ds.split_of(p) == Some(Split::Test))
        {
            assert!(p.id_a.starts_with('l'));
            assert!(p.id_b.starts_with("r-"));
        }
    }
}
