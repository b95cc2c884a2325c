use crate::autodiff::{BoundParams, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sampling, FpsStart, Point3};
use crate::spatial::KdTree;

use super::config::{NetworkConfig, SaLevel};

/// Shared per-row MLP `prefix.w{i}`, `prefix.b{i}`; relu between layers and,
/// if `relu_last`, after the last one.
pub(crate) fn mlp(
    g: &mut Graph,
    p: &BoundParams,
    prefix: &str,
    layers: usize,
    mut x: Var,
    relu_last: bool,
) -> Result<Var> {
    for i in 0..layers {
        let w = p.var(&format!("{prefix}.w{i}"));
        let b = p.var(&format!("{prefix}.b{i}"));
        x = g.matmul(x, w)?;
        x = g.add_row(x, b)?;
        if i + 1 < layers || relu_last {
            x = g.relu(x);
        }
    }
    Ok(x)
}

/// Sampling and grouping of one set-abstraction level; depends on
/// positions only.
#[derive(Debug, Clone)]
pub struct SaTopology {
    /// Indices of the FPS centers into the previous level.
    pub centers: Vec<usize>,
    pub center_positions: Vec<Point3>,
    /// Neighbor indices, `neighbor_cap` per center.
    pub groups: Vec<usize>,
    /// Neighbor offsets from their center divided by the ball radius.
    pub rel: Tensor,
    pub neighbor_cap: usize,
    pub layers: usize,
}

impl SaTopology {
    pub fn new(positions: &[Point3], level: &SaLevel) -> Result<Self> {
        if level.sample_count > positions.len() {
            return Err(Error::invalid(format!(
                "set abstraction samples {} of {} points",
                level.sample_count,
                positions.len()
            )));
        }
        // Callers pass canonically ordered points, so index 0 is the
        // lexicographically smallest.
        let centers =
            farthest_point_sampling(positions, level.sample_count, FpsStart::Lexicographic)?;
        let tree = KdTree::new(positions);
        let k = level.neighbor_cap;
        let mut groups = Vec::with_capacity(centers.len() * k);
        let mut rel = Vec::with_capacity(centers.len() * k * 3);
        for &c in &centers {
            let found = tree.within(&positions[c], level.ball_radius);
            let nearest = found.first().map_or(c, |f| f.0);
            for slot in 0..k {
                let j = found.get(slot).map_or(nearest, |f| f.0);
                groups.push(j);
                let d = (positions[j] - positions[c]) / level.ball_radius;
                rel.extend_from_slice(&[d.x, d.y, d.z]);
            }
        }
        Ok(SaTopology {
            center_positions: centers.iter().map(|&c| positions[c]).collect(),
            rel: Tensor::matrix(centers.len() * k, 3, rel)?,
            centers,
            groups,
            neighbor_cap: k,
            layers: level.mlp_widths.len(),
        })
    }
}

/// Inverse-squared-distance interpolation from a coarse to a fine level.
#[derive(Debug, Clone)]
pub struct FpTopology {
    /// Dense fine x coarse weight matrix; each row has at most 3 non-zeros
    /// summing to 1.
    pub weights: Tensor,
    pub layers: usize,
}

impl FpTopology {
    pub fn new(coarse: &[Point3], fine: &[Point3], layers: usize) -> Result<Self> {
        if coarse.is_empty() {
            return Err(Error::invalid(
                "feature propagation needs a non-empty coarse level",
            ));
        }
        let tree = KdTree::new(coarse);
        let nc = coarse.len();
        let mut w = vec![0.0; fine.len() * nc];
        for (f, q) in fine.iter().enumerate() {
            let row = &mut w[f * nc..(f + 1) * nc];
            let nn = tree.knn(q, 3.min(nc));
            if nn[0].1.sqrt() < 1e-9 {
                row[nn[0].0] = 1.0;
                continue;
            }
            let inv: Vec<f64> = nn.iter().map(|&(_, d2)| 1.0 / d2).collect();
            let total: f64 = inv.iter().sum();
            for (&(j, _), v) in nn.iter().zip(&inv) {
                row[j] = v / total;
            }
        }
        Ok(FpTopology {
            weights: Tensor::matrix(fine.len(), nc, w)?,
            layers,
        })
    }
}

/// Everything about a cloud the network needs that depends only on point
/// positions: sampling, grouping, interpolation and embedding neighbors.
#[derive(Debug, Clone)]
pub struct Topology {
    pub sa: Vec<SaTopology>,
    /// Coarsest first, matching the order the levels are applied in.
    pub fp: Vec<FpTopology>,
    /// `embed_neighbors` nearest points of each point (itself first).
    pub knn: Vec<Vec<usize>>,
}

impl Topology {
    pub fn new(positions: &[Point3], config: &NetworkConfig) -> Result<Self> {
        let mut levels = vec![positions.to_vec()];
        let mut sa = Vec::new();
        for l in &config.sa_levels {
            let t = SaTopology::new(levels.last().expect("non-empty"), l)?;
            levels.push(t.center_positions.clone());
            sa.push(t);
        }
        let fp = (0..3)
            .map(|j| FpTopology::new(&levels[3 - j], &levels[2 - j], config.fp_widths[j].len()))
            .collect::<Result<Vec<_>>>()?;
        let tree = KdTree::new(positions);
        let k = config.embed_neighbors.min(positions.len());
        let knn = positions
            .iter()
            .map(|q| tree.knn(q, k).into_iter().map(|(i, _)| i).collect())
            .collect();
        Ok(Topology { sa, fp, knn })
    }
}

pub(crate) fn sa_apply(
    g: &mut Graph,
    p: &BoundParams,
    prefix: &str,
    topo: &SaTopology,
    features: Var,
) -> Result<Var> {
    let gathered = g.gather(features, &topo.groups)?;
    let rel = g.constant(topo.rel.clone());
    let x = g.concat(&[rel, gathered], 1)?;
    let x = mlp(g, p, prefix, topo.layers, x, true)?;
    let width = g.shape(x)[1];
    let x = g.reshape(x, vec![topo.centers.len(), topo.neighbor_cap, width])?;
    g.reduce_max(x, 1)
}

pub(crate) fn fp_apply(
    g: &mut Graph,
    p: &BoundParams,
    prefix: &str,
    topo: &FpTopology,
    coarse: Var,
    skip: Var,
) -> Result<Var> {
    let w = g.constant(topo.weights.clone());
    let interp = g.matmul(w, coarse)?;
    let x = g.concat(&[interp, skip], 1)?;
    mlp(g, p, prefix, topo.layers, x, true)
}

pub(crate) fn embed_apply(
    g: &mut Graph,
    p: &BoundParams,
    config: &NetworkConfig,
    zeta: Var,
    positions: &[Point3],
    knn: &[Vec<usize>],
    at: &[usize],
) -> Result<Var> {
    if at.is_empty() {
        return Err(Error::invalid(
            "feature embedding needs at least one query point",
        ));
    }
    let k = knn.first().map_or(0, Vec::len);
    let mut idx = Vec::with_capacity(at.len() * k);
    let mut rel = Vec::with_capacity(at.len() * k * 3);
    for &a in at {
        let nb = knn
            .get(a)
            .ok_or_else(|| Error::invalid(format!("embedding query {a} out of range")))?;
        for &j in nb {
            idx.push(j);
            let d = (positions[j] - positions[a]) / config.embed_coord_scale;
            rel.extend_from_slice(&[d.x, d.y, d.z]);
        }
    }
    let gathered = g.gather(zeta, &idx)?;
    let rel = g.constant(Tensor::matrix(idx.len(), 3, rel)?);
    let x = g.concat(&[gathered, rel], 1)?;
    let x = mlp(g, p, "chi", config.embed_widths.len(), x, false)?;
    let width = g.shape(x)[1];
    let x = g.reshape(x, vec![at.len(), k, width])?;
    let x = g.reduce_max(x, 1)?;
    g.l2_normalize(x, 1)
}

/// One set-abstraction level of `config` applied to (positions, features).
/// Returns the sampled center positions and their pooled features.
pub fn set_abstraction(
    g: &mut Graph,
    p: &BoundParams,
    config: &NetworkConfig,
    level: usize,
    positions: &[Point3],
    features: Var,
) -> Result<(Vec<Point3>, Var)> {
    let l = config
        .sa_levels
        .get(level)
        .ok_or_else(|| Error::invalid(format!("no set-abstraction level {level}")))?;
    let topo = SaTopology::new(positions, l)?;
    let f = sa_apply(g, p, &format!("phi.sa{level}"), &topo, features)?;
    Ok((topo.center_positions, f))
}

/// Feature-propagation level `level` (0 = coarsest) of `config`.
#[allow(clippy::too_many_arguments)]
pub fn feature_propagation(
    g: &mut Graph,
    p: &BoundParams,
    config: &NetworkConfig,
    level: usize,
    coarse_positions: &[Point3],
    coarse_features: Var,
    fine_positions: &[Point3],
    skip_features: Var,
) -> Result<Var> {
    let widths = config
        .fp_widths
        .get(level)
        .ok_or_else(|| Error::invalid(format!("no feature-propagation level {level}")))?;
    let topo = FpTopology::new(coarse_positions, fine_positions, widths.len())?;
    fp_apply(
        g,
        p,
        &format!("phi.fp{level}"),
        &topo,
        coarse_features,
        skip_features,
    )
}

/// psi: three fully connected layers and a softplus, one weight per row of ζ.
pub fn keypoint_detector(g: &mut Graph, p: &BoundParams, zeta: Var) -> Result<Var> {
    let x = mlp(g, p, "psi", 3, zeta, false)?;
    let x = g.softplus(x);
    let n = g.shape(x)[0];
    g.reshape(x, vec![n])
}

/// chi: groups the `embed_neighbors` nearest points of each point in `at`,
/// applies a shared MLP to ζ ⊕ relative position, max-pools and
/// L2-normalizes.
pub fn feature_embedding(
    g: &mut Graph,
    p: &BoundParams,
    config: &NetworkConfig,
    zeta: Var,
    positions: &[Point3],
    at: &[usize],
) -> Result<Var> {
    let tree = KdTree::new(positions);
    let k = config.embed_neighbors.min(positions.len());
    let knn: Vec<Vec<usize>> = positions
        .iter()
        .map(|q| tree.knn(q, k).into_iter().map(|(i, _)| i).collect())
        .collect();
    embed_apply(g, p, config, zeta, positions, &knn, at)
}
