//! The descriptor network: hierarchical feature extraction (three
//! set-abstraction and three feature-propagation levels), a softplus
//! keypoint detector and a grouped, L2-normalized feature embedding.

mod config;
mod layers;

pub use config::{check_params, init_params, NetworkConfig, SaLevel};
pub use layers::{
    feature_embedding, feature_propagation, keypoint_detector, set_abstraction, FpTopology,
    SaTopology, Topology,
};

use std::cmp::Ordering;
use std::f64::consts::PI;

use crate::autodiff::{BoundParams, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

/// Per-point descriptors (unit rows) and saliency weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    /// N x W, one unit-norm row per input point.
    pub xi: Tensor,
    /// N positive weights.
    pub w: Vec<f64>,
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn descriptor(&self, k: usize) -> &[f64] {
        self.xi.row(k)
    }
}

/// Builds the N x 4 input: position relative to the cloud mean and the
/// depth channel sin(pi * d / depth_period), d positive down.
pub fn encode_input(
    cloud: &PointCloud,
    absolute_depths: &[f64],
    config: &NetworkConfig,
) -> Result<Tensor> {
    if cloud.is_empty() {
        return Err(Error::invalid("cannot encode an empty cloud"));
    }
    if absolute_depths.len() != cloud.len() {
        return Err(Error::invalid(format!(
            "{} depths for {} points",
            absolute_depths.len(),
            cloud.len()
        )));
    }
    // Summing in lexicographic order makes the mean, and so every encoded
    // row, independent of the input permutation.
    let mut sorted = cloud.points.clone();
    sorted.sort_by(|a, b| {
        a.x.total_cmp(&b.x)
            .then(a.y.total_cmp(&b.y))
            .then(a.z.total_cmp(&b.z))
    });
    let mean = sorted.iter().fold(Point3::zeros(), |acc, p| acc + p) / sorted.len() as f64;
    let mut values = Vec::with_capacity(cloud.len() * 4);
    for (p, d) in cloud.points.iter().zip(absolute_depths) {
        let r = p - mean;
        values.extend_from_slice(&[r.x, r.y, r.z, (PI * d / config.depth_period).sin()]);
    }
    Tensor::matrix(cloud.len(), 4, values)
}

/// Absolute depths (positive down) of a cloud with z up.
pub fn absolute_depths(cloud: &PointCloud) -> Vec<f64> {
    cloud
        .points
        .iter()
        .map(|p| -(p.z + cloud.centroid.z))
        .collect()
}

/// Encoded input rows put into a canonical (lexicographic) order, with the
/// spatial topology of every level precomputed.
///
/// Canonical ordering makes every index-based tie break in sampling and
/// grouping a function of point values only, so the network is exactly
/// permutation-equivariant.
#[derive(Debug, Clone)]
pub struct NetInput {
    /// Positions relative to the cloud mean, canonical order.
    pub positions: Vec<Point3>,
    /// Depth channel, canonical order.
    pub features: Tensor,
    /// `order[c]` is the original index of canonical row `c`.
    pub order: Vec<usize>,
    pub topology: Topology,
}

impl NetInput {
    pub fn new(
        cloud: &PointCloud,
        absolute_depths: &[f64],
        config: &NetworkConfig,
    ) -> Result<Self> {
        config.validate()?;
        if cloud.len() < config.min_points() {
            return Err(Error::invalid(format!(
                "cloud '{}' has {} points; the network needs at least {}",
                cloud.id,
                cloud.len(),
                config.min_points()
            )));
        }
        let encoded = encode_input(cloud, absolute_depths, config)?;
        let mut order: Vec<usize> = (0..cloud.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (encoded.row(a), encoded.row(b));
            ra.iter()
                .zip(rb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        });
        let positions: Vec<Point3> = order
            .iter()
            .map(|&i| {
                let r = encoded.row(i);
                Point3::new(r[0], r[1], r[2])
            })
            .collect();
        let features = Tensor::matrix(
            order.len(),
            1,
            order.iter().map(|&i| encoded.row(i)[3]).collect(),
        )?;
        let topology = Topology::new(&positions, config)?;
        Ok(NetInput {
            positions,
            features,
            order,
            topology,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Canonical row of original point `i`.
    pub fn canonical_index(&self) -> Vec<usize> {
        let mut inv = vec![0; self.order.len()];
        for (c, &i) in self.order.iter().enumerate() {
            inv[i] = c;
        }
        inv
    }
}

/// phi: deep features ζ (N x Z) in canonical order.
pub fn extract_features(g: &mut Graph, p: &BoundParams, input: &NetInput) -> Result<Var> {
    let topo = &input.topology;
    let mut feats = vec![g.constant(input.features.clone())];
    for (l, sa) in topo.sa.iter().enumerate() {
        let f = layers::sa_apply(g, p, &format!("phi.sa{l}"), sa, feats[l])?;
        feats.push(f);
    }
    let mut coarse = feats[3];
    for (j, fp) in topo.fp.iter().enumerate() {
        coarse = layers::fp_apply(g, p, &format!("phi.fp{j}"), fp, coarse, feats[2 - j])?;
    }
    Ok(coarse)
}

/// Runs the full network on `input` and returns (ζ, w, ξ at `at`), all in
/// canonical order.
pub fn forward_graph(
    g: &mut Graph,
    p: &BoundParams,
    config: &NetworkConfig,
    input: &NetInput,
    at: &[usize],
) -> Result<(Var, Var, Var)> {
    let zeta = extract_features(g, p, input)?;
    let w = keypoint_detector(g, p, zeta)?;
    let xi = layers::embed_apply(
        g,
        p,
        config,
        zeta,
        &input.positions,
        &input.topology.knn,
        at,
    )?;
    Ok((zeta, w, xi))
}

/// f(P) = (ξ, w) for one cloud.
pub fn forward(
    cloud: &PointCloud,
    depths: &[f64],
    params: &ParamStore,
    config: &NetworkConfig,
) -> Result<DescriptorSet> {
    check_params(config, params)?;
    let input = NetInput::new(cloud, depths, config)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let all: Vec<usize> = (0..input.len()).collect();
    let (_, w, xi) = forward_graph(&mut g, &bound, config, &input, &all)?;
    let (wv, xv) = (g.value(w), g.value(xi));
    let width = xv.cols();
    let n = input.len();
    let mut xi_out = vec![0.0; n * width];
    let mut w_out = vec![0.0; n];
    for (c, &i) in input.order.iter().enumerate() {
        xi_out[i * width..(i + 1) * width].copy_from_slice(xv.row(c));
        w_out[i] = wv.values()[c];
    }
    Ok(DescriptorSet {
        xi: Tensor::matrix(n, width, xi_out)?,
        w: w_out,
    })
}

#[cfg(test)]
mod tests;
