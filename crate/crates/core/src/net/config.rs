use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::seed;

use rand::Rng as _;

/// One set-abstraction level: FPS centers, ball query and a shared MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct SaLevel {
    pub sample_count: usize,
    /// Ball-query radius in meters.
    pub ball_radius: f64,
    /// Neighbor cap K per group.
    pub neighbor_cap: usize,
    pub mlp_widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Width of the encoded input rows (x, y, z, depth channel).
    pub input_dim: usize,
    /// Z, width of the deep features.
    pub deep_feature_dim: usize,
    /// W, width of the descriptors.
    pub descriptor_dim: usize,
    pub sa_levels: Vec<SaLevel>,
    /// Feature-propagation MLPs, coarsest level first; the last one ends in Z.
    pub fp_widths: Vec<Vec<usize>>,
    /// Three fully connected layers; the last has width 1.
    pub detector_widths: Vec<usize>,
    pub embed_neighbors: usize,
    /// Embedding MLP; the last width is W.
    pub embed_widths: Vec<usize>,
    /// Relative coordinates in the embedding group are divided by this (meters).
    pub embed_coord_scale: f64,
    /// Period of the depth channel sin(pi * d / depth_period), meters.
    pub depth_period: f64,
}

fn sa(sample_count: usize, ball_radius: f64, neighbor_cap: usize, mlp_widths: &[usize]) -> SaLevel {
    SaLevel {
        sample_count,
        ball_radius,
        neighbor_cap,
        mlp_widths: mlp_widths.to_vec(),
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_dim: 4,
            deep_feature_dim: 32,
            descriptor_dim: 32,
            sa_levels: vec![
                sa(256, 4.0, 32, &[32, 32, 64]),
                sa(64, 8.0, 32, &[64, 64, 128]),
                sa(16, 16.0, 32, &[128, 128, 256]),
            ],
            fp_widths: vec![vec![256, 128], vec![128, 64], vec![64, 32]],
            detector_widths: vec![32, 16, 1],
            embed_neighbors: 32,
            embed_widths: vec![64, 32],
            embed_coord_scale: 15.0,
            depth_period: 50.0,
        }
    }
}

impl NetworkConfig {
    /// A named preset: "default", "compact" or "tiny".
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(NetworkConfig::default()),
            "compact" => Ok(NetworkConfig::compact()),
            "tiny" => Ok(NetworkConfig::tiny()),
            other => Err(Error::invalid(format!(
                "unknown network preset '{other}' (expected default, compact or tiny)"
            ))),
        }
    }

    /// Narrower network sized for 512-point clouds cropped at 50 m; keeps
    /// Z = W = 32 but trains in minutes on one CPU.
    pub fn compact() -> Self {
        NetworkConfig {
            sa_levels: vec![
                sa(128, 8.0, 16, &[16, 16, 32]),
                sa(32, 16.0, 16, &[32, 32, 64]),
                sa(8, 32.0, 8, &[64, 64, 64]),
            ],
            fp_widths: vec![vec![64, 64], vec![64, 32], vec![32, 32]],
            embed_neighbors: 16,
            embed_widths: vec![32, 32],
            ..Default::default()
        }
    }

    /// Z = W = 8 network for 64-point inputs, used by gradient checks.
    pub fn tiny() -> Self {
        NetworkConfig {
            deep_feature_dim: 8,
            descriptor_dim: 8,
            sa_levels: vec![
                sa(32, 20.0, 6, &[8, 8]),
                sa(12, 40.0, 6, &[8, 8]),
                sa(4, 80.0, 4, &[8, 8]),
            ],
            fp_widths: vec![vec![8], vec![8], vec![8]],
            detector_widths: vec![8, 4, 1],
            embed_neighbors: 4,
            embed_widths: vec![8, 8],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.input_dim != 4 {
            return bad(format!("input_dim must be 4, got {}", self.input_dim));
        }
        if self.deep_feature_dim == 0 || self.descriptor_dim == 0 {
            return bad("Z and W must be at least 1".into());
        }
        if self.sa_levels.len() != 3 || self.fp_widths.len() != 3 {
            return bad(
                "the network needs exactly 3 set-abstraction and 3 feature-propagation levels"
                    .into(),
            );
        }
        let mut prev = usize::MAX;
        for (i, l) in self.sa_levels.iter().enumerate() {
            if l.sample_count == 0 || l.sample_count > prev {
                return bad(format!(
                    "set-abstraction level {i}: sample counts must shrink and be positive"
                ));
            }
            if !(l.ball_radius > 0.0)
                || l.neighbor_cap == 0
                || l.mlp_widths.is_empty()
                || l.mlp_widths.contains(&0)
            {
                return bad(format!(
                    "set-abstraction level {i}: invalid radius, cap or widths"
                ));
            }
            prev = l.sample_count;
        }
        if self
            .fp_widths
            .iter()
            .any(|w| w.is_empty() || w.contains(&0))
        {
            return bad("feature-propagation widths must be non-empty and positive".into());
        }
        if self.fp_widths[2].last() != Some(&self.deep_feature_dim) {
            return bad("the last feature-propagation width must equal Z".into());
        }
        if self.detector_widths.len() != 3
            || self.detector_widths[2] != 1
            || self.detector_widths.contains(&0)
        {
            return bad("the detector needs 3 layers ending in width 1".into());
        }
        if self.embed_neighbors == 0
            || self.embed_widths.is_empty()
            || self.embed_widths.contains(&0)
        {
            return bad("embedding needs K >= 1 and positive widths".into());
        }
        if self.embed_widths.last() != Some(&self.descriptor_dim) {
            return bad("the last embedding width must equal W".into());
        }
        if !(self.embed_coord_scale > 0.0) || !(self.depth_period > 0.0) {
            return bad("embed_coord_scale and depth_period must be positive".into());
        }
        Ok(())
    }

    /// Smallest cloud the network accepts.
    pub fn min_points(&self) -> usize {
        self.sa_levels[0].sample_count
    }

    /// (prefix, input width, layer widths) of every MLP, in parameter order.
    pub(crate) fn layers(&self) -> Vec<(String, usize, Vec<usize>)> {
        let mut out = Vec::new();
        // Level-0 points carry only the depth channel; x, y, z are positions.
        let mut widths = vec![self.input_dim - 3];
        for (i, l) in self.sa_levels.iter().enumerate() {
            out.push((format!("phi.sa{i}"), 3 + widths[i], l.mlp_widths.clone()));
            widths.push(*l.mlp_widths.last().expect("validated"));
        }
        let mut coarse = widths[3];
        for (j, w) in self.fp_widths.iter().enumerate() {
            let skip = widths[2 - j];
            out.push((format!("phi.fp{j}"), coarse + skip, w.clone()));
            coarse = *w.last().expect("validated");
        }
        out.push((
            "psi".to_string(),
            self.deep_feature_dim,
            self.detector_widths.clone(),
        ));
        out.push((
            "chi".to_string(),
            self.deep_feature_dim + 3,
            self.embed_widths.clone(),
        ));
        out
    }
}

/// He-uniform weights drawn from a per-tensor named seed; zero biases.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut store = ParamStore::new();
    for (prefix, mut fan_in, widths) in config.layers() {
        for (i, &out) in widths.iter().enumerate() {
            let name = format!("{prefix}.w{i}");
            let mut rng = seed::rng(seed::derive(seed, &name));
            let limit = (6.0 / fan_in as f64).sqrt();
            let values = (0..fan_in * out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            store.insert(name, Tensor::matrix(fan_in, out, values)?)?;
            store.insert(format!("{prefix}.b{i}"), Tensor::zeros(&[out]))?;
            fan_in = out;
        }
    }
    Ok(store)
}

/// Checks that `params` holds every tensor `config` needs with the right shape.
pub fn check_params(config: &NetworkConfig, params: &ParamStore) -> Result<()> {
    config.validate()?;
    for (prefix, mut fan_in, widths) in config.layers() {
        for (i, &out) in widths.iter().enumerate() {
            for (name, shape) in [
                (format!("{prefix}.w{i}"), vec![fan_in, out]),
                (format!("{prefix}.b{i}"), vec![out]),
            ] {
                match params.get(&name) {
                    Some(t) if t.shape() == shape.as_slice() => {}
                    Some(t) => {
                        return Err(Error::shape(
                            "network",
                            format!("{name} has shape {:?}, expected {shape:?}", t.shape()),
                        ))
                    }
                    None => {
                        return Err(Error::invalid(format!(
                            "missing network parameter '{name}'"
                        )))
                    }
                }
            }
            fan_in = out;
        }
    }
    Ok(())
}
