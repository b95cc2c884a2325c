use nalgebra::Vector3;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, Pose, Submap};
use crate::seed;

use super::terrain::TerrainField;

/// Lawn-mower survey: `n_lines` parallel lines along +x, optionally followed
/// by a revisit pass parallel to one of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyPlan {
    /// Start of the first line.
    pub origin_xy: [f64; 2],
    pub line_spacing: f64,
    pub line_length: f64,
    pub n_lines: usize,
    pub ping_spacing: f64,
    pub swath_width: f64,
    pub beams_per_ping: usize,
    pub revisit: bool,
    /// Line the revisit pass runs along.
    pub revisit_line: usize,
    /// Lateral offset of the revisit pass from its line, meters.
    pub revisit_offset: f64,
}

impl Default for SurveyPlan {
    fn default() -> Self {
        SurveyPlan {
            origin_xy: [100.0, 100.0],
            line_spacing: 80.0,
            line_length: 600.0,
            n_lines: 4,
            ping_spacing: 1.5,
            swath_width: 100.0,
            beams_per_ping: 64,
            revisit: true,
            revisit_line: 1,
            revisit_offset: 15.0,
        }
    }
}

impl SurveyPlan {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.line_spacing,
            self.line_length,
            self.ping_spacing,
            self.swath_width,
        ];
        if pos.iter().any(|v| !(*v > 0.0)) || self.n_lines == 0 {
            return Err(Error::invalid("survey plan dimensions must be positive"));
        }
        if self.beams_per_ping < 3 {
            return Err(Error::invalid("need at least 3 beams per ping"));
        }
        if self.revisit && self.revisit_line >= self.n_lines {
            return Err(Error::invalid(format!(
                "revisit line {} does not exist ({} lines)",
                self.revisit_line, self.n_lines
            )));
        }
        Ok(())
    }

    fn line_y(&self, i: usize) -> f64 {
        self.origin_xy[1] + i as f64 * self.line_spacing
    }
}

/// Dead-reckoning error model. Horizontal position and yaw errors are random
/// walks whose variance grows linearly with distance traveled
/// (`sigma^2` per meter); the depth error is an independent per-submap
/// offset since vehicle depth comes from an absolute pressure sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftModel {
    pub xy_rate_sigma: f64,
    pub yaw_rate_sigma: f64,
    pub z_sigma: f64,
    pub seed: u64,
}

impl Default for DriftModel {
    fn default() -> Self {
        DriftModel {
            xy_rate_sigma: 0.05,
            yaw_rate_sigma: 5e-5,
            z_sigma: 0.2,
            seed: 0,
        }
    }
}

impl DriftModel {
    pub fn none() -> Self {
        DriftModel {
            xy_rate_sigma: 0.0,
            yaw_rate_sigma: 0.0,
            z_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.xy_rate_sigma, self.yaw_rate_sigma, self.z_sigma];
        if v.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("drift sigmas must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegKind {
    Line(usize),
    Revisit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmapInfo {
    pub kind: LegKind,
    /// Distance traveled when the submap pose was taken.
    pub odometer: f64,
    /// Along-track extent of the submap, centered on its pose.
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub odometer: f64,
    pub true_pose: Pose,
    pub dr_pose: Pose,
    pub collecting: Option<usize>,
}

/// One submap per traversal leg. Point sets are shared between the two
/// lists; only the poses differ.
#[derive(Debug, Clone, PartialEq)]
pub struct Survey {
    pub true_submaps: Vec<Submap>,
    pub dr_submaps: Vec<Submap>,
    pub info: Vec<SubmapInfo>,
}

struct Leg {
    start: [f64; 2],
    end: [f64; 2],
    kind: Option<LegKind>,
}

fn legs(plan: &SurveyPlan) -> Vec<Leg> {
    let x0 = plan.origin_xy[0];
    let x1 = x0 + plan.line_length;
    let mut out: Vec<Leg> = Vec::new();
    let push = |out: &mut Vec<Leg>, start: [f64; 2], end: [f64; 2], kind: Option<LegKind>| {
        if let Some(prev) = out.last() {
            if prev.end != start {
                out.push(Leg {
                    start: prev.end,
                    end: start,
                    kind: None,
                });
            }
        }
        out.push(Leg { start, end, kind });
    };
    for i in 0..plan.n_lines {
        let y = plan.line_y(i);
        let (a, b) = if i % 2 == 0 { (x0, x1) } else { (x1, x0) };
        push(&mut out, [a, y], [b, y], Some(LegKind::Line(i)));
    }
    if plan.revisit {
        let y = plan.line_y(plan.revisit_line) + plan.revisit_offset;
        // Enter from whichever end is closer to where the last line finished.
        let last_x = out.last().map_or(x0, |l| l.end[0]);
        let (a, b) = if (last_x - x0).abs() < (last_x - x1).abs() {
            (x0, x1)
        } else {
            (x1, x0)
        };
        push(&mut out, [a, y], [b, y], Some(LegKind::Revisit));
    }
    out
}

/// Steps along the survey path at `ping_spacing`, integrating the true and
/// dead-reckoned poses.
pub fn simulate_trajectory(plan: &SurveyPlan, drift: &DriftModel) -> Result<Vec<TrajectorySample>> {
    plan.validate()?;
    drift.validate()?;
    let mut rng = seed::rng(seed::derive(drift.seed, "drift"));
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let ds = plan.ping_spacing;
    let mut samples = Vec::new();
    let mut odometer = 0.0;
    let mut yaw_err = 0.0;
    let mut dr_xy: Option<[f64; 2]> = None;
    for (leg_index, leg) in legs(plan).iter().enumerate() {
        let (dx, dy) = (leg.end[0] - leg.start[0], leg.end[1] - leg.start[1]);
        let len = dx.hypot(dy);
        let heading = dy.atan2(dx);
        let steps = (len / ds).round().max(1.0) as usize;
        let step = len / steps as f64;
        let first = if samples.is_empty() { 0 } else { 1 };
        let collecting = leg.kind.map(|_| leg_index);
        for s in first..=steps {
            let t = s as f64 * step;
            let true_xy = [
                leg.start[0] + t * heading.cos(),
                leg.start[1] + t * heading.sin(),
            ];
            let dr = match dr_xy {
                None => true_xy,
                Some(prev) => {
                    let h = heading + yaw_err;
                    let sd = drift.xy_rate_sigma * step.sqrt();
                    [
                        prev[0] + step * h.cos() + sd * unit.sample(&mut rng),
                        prev[1] + step * h.sin() + sd * unit.sample(&mut rng),
                    ]
                }
            };
            if dr_xy.is_some() {
                odometer += step;
                yaw_err += drift.yaw_rate_sigma * step.sqrt() * unit.sample(&mut rng);
            }
            dr_xy = Some(dr);
            samples.push(TrajectorySample {
                odometer,
                true_pose: Pose::from_yaw(heading, Vector3::new(true_xy[0], true_xy[1], 0.0)),
                dr_pose: Pose::from_yaw(heading + yaw_err, Vector3::new(dr[0], dr[1], 0.0)),
                collecting,
            });
        }
    }
    Ok(samples)
}

/// Samples the terrain across the swath at every ping and groups the pings
/// of each leg into one submap posed at the leg midpoint.
pub fn simulate_survey(
    terrain: &TerrainField,
    plan: &SurveyPlan,
    drift: &DriftModel,
) -> Result<Survey> {
    let samples = simulate_trajectory(plan, drift)?;
    let legs = legs(plan);
    let half = plan.swath_width / 2.0;
    let mut z_rng = seed::rng(seed::derive(drift.seed, "drift-z"));
    let z_noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut out = Survey {
        true_submaps: Vec::new(),
        dr_submaps: Vec::new(),
        info: Vec::new(),
    };
    for (leg_index, leg) in legs.iter().enumerate() {
        let Some(kind) = leg.kind else { continue };
        let pings: Vec<&TrajectorySample> = samples
            .iter()
            .filter(|s| s.collecting == Some(leg_index))
            .collect();
        let mut world = Vec::with_capacity(pings.len() * plan.beams_per_ping);
        for ping in &pings {
            let h = ping.true_pose.yaw();
            let left = [-h.sin(), h.cos()];
            let c = ping.true_pose.translation;
            for b in 0..plan.beams_per_ping {
                let u = -half + plan.swath_width * b as f64 / (plan.beams_per_ping - 1) as f64;
                let (x, y) = (c.x + u * left[0], c.y + u * left[1]);
                if !terrain.contains(x, y) {
                    return Err(Error::invalid(format!(
                        "survey footprint leaves the terrain at ({x:.1}, {y:.1})"
                    )));
                }
                world.push(Point3::new(x, y, -terrain.depth_at(x, y)));
            }
        }
        let mid = pings[pings.len() / 2];
        let true_pose = mid.true_pose;
        let mut dr_pose = mid.dr_pose;
        if drift.z_sigma > 0.0 {
            dr_pose.translation.z += drift.z_sigma * z_noise.sample(&mut z_rng);
        }
        let to_local = true_pose.inverse();
        let local: Vec<Point3> = world.iter().map(|p| to_local.transform_point(p)).collect();
        let id = match kind {
            LegKind::Line(i) => format!("line{i}"),
            LegKind::Revisit => "revisit".to_string(),
        };
        let cloud = PointCloud::new(id, local);
        out.true_submaps.push(Submap {
            cloud: cloud.clone(),
            pose: true_pose,
        });
        out.dr_submaps.push(Submap {
            cloud,
            pose: dr_pose,
        });
        out.info.push(SubmapInfo {
            kind,
            odometer: mid.odometer,
            length: pings.last().map_or(0.0, |p| p.odometer) - pings[0].odometer,
        });
    }
    Ok(out)
}
