use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Multi-octave value-noise spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumParams {
    /// Mean depth in meters, positive down.
    pub base_depth: f64,
    /// Peak deviation from `base_depth` in meters.
    pub amplitude: f64,
    pub octaves: u32,
    pub lacunarity: f64,
    pub persistence: f64,
    /// Wavelength of the lowest octave in meters.
    pub base_wavelength: f64,
}

impl Default for SpectrumParams {
    fn default() -> Self {
        SpectrumParams {
            base_depth: 500.0,
            amplitude: 25.0,
            octaves: 5,
            lacunarity: 2.0,
            persistence: 0.5,
            base_wavelength: 200.0,
        }
    }
}

impl SpectrumParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !self.base_depth.is_finite() {
            return Err(Error::invalid("terrain amplitude must be non-negative"));
        }
        if self.octaves < 1 {
            return Err(Error::invalid("terrain needs at least one octave"));
        }
        if !(self.persistence > 0.0 && self.persistence < 1.0) {
            return Err(Error::invalid("persistence must lie in (0, 1)"));
        }
        if !(self.lacunarity > 0.0) || !(self.base_wavelength > 0.0) {
            return Err(Error::invalid(
                "lacunarity and base wavelength must be positive",
            ));
        }
        Ok(())
    }
}

/// Regular grid of seabed depths (meters, positive down).
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainField {
    pub heights: Vec<f64>,
    pub nx: usize,
    pub ny: usize,
    pub origin_xy: [f64; 2],
    pub cell: f64,
    pub seed: u64,
}

impl TerrainField {
    pub fn extent(&self) -> ([f64; 2], [f64; 2]) {
        let max = [
            self.origin_xy[0] + (self.nx - 1) as f64 * self.cell,
            self.origin_xy[1] + (self.ny - 1) as f64 * self.cell,
        ];
        (self.origin_xy, max)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (lo, hi) = self.extent();
        x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1]
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.heights[j * self.nx + i]
    }

    /// Soundings (z up, z = -depth) on a square grid of `spacing` inside the
    /// disk of `radius` around `center_xy`, each jittered uniformly by up to
    /// `jitter` meters in x and y.
    pub fn sample_disk(
        &self,
        center_xy: [f64; 2],
        radius: f64,
        spacing: f64,
        jitter: f64,
        seed: u64,
    ) -> Vec<Point3> {
        let mut rng = crate::seed::rng(seed);
        let n = (radius / spacing).floor() as i64;
        let mut out = Vec::new();
        for j in -n..=n {
            for i in -n..=n {
                let (dx, dy) = (i as f64 * spacing, j as f64 * spacing);
                if dx.hypot(dy) > radius {
                    continue;
                }
                let (jx, jy) = if jitter > 0.0 {
                    (
                        rng.random_range(-jitter..=jitter),
                        rng.random_range(-jitter..=jitter),
                    )
                } else {
                    (0.0, 0.0)
                };
                let (x, y) = (center_xy[0] + dx + jx, center_xy[1] + dy + jy);
                out.push(Point3::new(x, y, -self.depth_at(x, y)));
            }
        }
        out
    }

    /// Bilinear depth at (x, y); clamps to the grid border.
    pub fn depth_at(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.origin_xy[0]) / self.cell).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((y - self.origin_xy[1]) / self.cell).clamp(0.0, (self.ny - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let a = self.at(i, j) * (1.0 - tx) + self.at(i + 1, j) * tx;
        let b = self.at(i, j + 1) * (1.0 - tx) + self.at(i + 1, j + 1) * tx;
        a * (1.0 - ty) + b * ty
    }
}

fn lattice(seed: u64, octave: u32, ix: i64, iy: i64) -> f64 {
    let mut h = seed ^ (u64::from(octave)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= (ix as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h = h.rotate_left(31) ^ (iy as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    h = (h ^ (h >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h = (h ^ (h >> 33)).wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, octave: u32, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (ix, iy) = (x0 as i64, y0 as i64);
    let (tx, ty) = (fade(x - x0), fade(y - y0));
    let a = lattice(seed, octave, ix, iy) * (1.0 - tx) + lattice(seed, octave, ix + 1, iy) * tx;
    let b =
        lattice(seed, octave, ix, iy + 1) * (1.0 - tx) + lattice(seed, octave, ix + 1, iy + 1) * tx;
    a * (1.0 - ty) + b * ty
}

/// Square `size_xy` x `size_xy` field with its lower-left corner at the origin.
pub fn generate_terrain(
    params: &SpectrumParams,
    size_xy: f64,
    cell: f64,
    seed: u64,
) -> Result<TerrainField> {
    params.validate()?;
    if !(cell > 0.0) || !(size_xy >= 10.0 * cell) {
        return Err(Error::invalid(format!(
            "terrain needs cell > 0 and size >= 10 cells (size {size_xy}, cell {cell})"
        )));
    }
    let n = (size_xy / cell).ceil() as usize + 1;
    let weights: Vec<f64> = (0..params.octaves)
        .map(|o| params.persistence.powi(o as i32))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut heights = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (i as f64 * cell, j as f64 * cell);
            let mut v = 0.0;
            let mut freq = 1.0 / params.base_wavelength;
            for (o, w) in weights.iter().enumerate() {
                v += w * value_noise(seed, o as u32, x * freq, y * freq);
                freq *= params.lacunarity;
            }
            heights.push(params.base_depth + params.amplitude * (v / total));
        }
    }
    Ok(TerrainField {
        heights,
        nx: n,
        ny: n,
        origin_xy: [0.0, 0.0],
        cell,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_when_amplitude_zero() {
        let p = SpectrumParams {
            amplitude: 0.0,
            ..Default::default()
        };
        let t = generate_terrain(&p, 100.0, 5.0, 1).unwrap();
        assert!(t.heights.iter().all(|&h| h == 500.0));
    }

    #[test]
    fn deterministic_and_bounded() {
        let p = SpectrumParams::default();
        let a = generate_terrain(&p, 200.0, 2.0, 9).unwrap();
        let b = generate_terrain(&p, 200.0, 2.0, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_terrain(&p, 200.0, 2.0, 10).unwrap();
        assert_ne!(a, c);
        assert!(a.heights.iter().all(|&h| (475.0..=525.0).contains(&h)));
    }

    #[test]
    fn height_spread_on_square_kilometer() {
        let p = SpectrumParams {
            amplitude: 30.0,
            ..Default::default()
        };
        for seed in 0..10 {
            let t = generate_terrain(&p, 1000.0, 5.0, seed).unwrap();
            let n = t.heights.len() as f64;
            let mean = t.heights.iter().sum::<f64>() / n;
            let std = (t.heights.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!((3.0..=30.0).contains(&std), "seed {seed}: std {std}");
        }
    }

    #[test]
    fn rejects_tiny_fields() {
        assert!(generate_terrain(&SpectrumParams::default(), 10.0, 2.0, 0).is_err());
        let bad = SpectrumParams {
            persistence: 1.0,
            ..Default::default()
        };
        assert!(generate_terrain(&bad, 100.0, 2.0, 0).is_err());
    }

    #[test]
    fn bilinear_hits_grid_nodes() {
        let t = generate_terrain(&SpectrumParams::default(), 100.0, 5.0, 3).unwrap();
        assert_eq!(t.depth_at(10.0, 15.0), t.heights[3 * t.nx + 2]);
    }
}
