//! Finite-difference checks of every autodiff primitive and of the full
//! network + triplet-loss composition.

use rand::Rng as _;

use crate::autodiff::{grad_check, GradCheckOptions, GradCheckReport, Graph, Tensor, Var};
use crate::error::Result;
use crate::geometry::{demean, PointCloud};
use crate::net::{init_params, NetworkConfig};
use crate::seed;
use crate::synth::{generate_terrain, SpectrumParams};
use crate::train::{batch_graph, build_inputs, weighted_batch_loss_graph, PatchRef, Triplet};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedCheck {
    pub name: String,
    pub report: GradCheckReport,
}

/// Options used for the suite: central differences with h = 1e-5 and a
/// pass threshold of 1e-4 relative error.
pub fn suite_options() -> GradCheckOptions {
    GradCheckOptions {
        h: 1e-5,
        tol: 1e-4,
        floor: 1e-6,
        max_coords: 24,
        fault: None,
    }
}

fn random(rng: &mut seed::Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("shape matches")
}

/// Reduces `x` to a scalar with fixed random weights so every output
/// coordinate contributes a distinct gradient.
fn project(g: &mut Graph, x: Var, salt: u64) -> Result<Var> {
    let w = random(
        &mut seed::rng(seed::derive_indexed(17, "project", salt)),
        g.shape(x),
        0.5,
        1.5,
    );
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    g.sum_all(p)
}

type Case = (
    &'static str,
    Vec<Tensor>,
    fn(&mut Graph, &[Var]) -> Result<Var>,
);

fn primitive_cases(rng: &mut seed::Rng) -> Vec<Case> {
    let m = |rng: &mut seed::Rng, r: usize, c: usize| random(rng, &[r, c], -1.0, 1.0);
    // Values bounded away from zero keep relu/hinge clear of their kinks.
    let away = |rng: &mut seed::Rng, r: usize, c: usize| {
        let t = random(rng, &[r, c], 0.1, 1.0);
        let signs: Vec<f64> = t
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| if i % 3 == 0 { -v } else { *v })
            .collect();
        Tensor::new(vec![r, c], signs).expect("same shape")
    };
    vec![
        ("matmul", vec![m(rng, 3, 4), m(rng, 4, 2)], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y, 0)
        }),
        ("add", vec![m(rng, 3, 4), m(rng, 3, 4)], |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y, 1)
        }),
        ("sub", vec![m(rng, 3, 4), m(rng, 3, 4)], |g, v| {
            let y = g.sub(v[0], v[1])?;
            project(g, y, 2)
        }),
        ("mul", vec![m(rng, 3, 4), m(rng, 3, 4)], |g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y, 3)
        }),
        (
            "add_row",
            vec![m(rng, 3, 4), random(rng, &[4], -1.0, 1.0)],
            |g, v| {
                let y = g.add_row(v[0], v[1])?;
                project(g, y, 4)
            },
        ),
        ("add_scalar", vec![m(rng, 3, 4)], |g, v| {
            let y = g.add_scalar(v[0], 0.7);
            project(g, y, 5)
        }),
        ("mul_scalar", vec![m(rng, 3, 4)], |g, v| {
            let y = g.mul_scalar(v[0], -1.3);
            project(g, y, 6)
        }),
        (
            "div_scalar",
            vec![m(rng, 3, 4), random(rng, &[1], 0.5, 2.0)],
            |g, v| {
                let y = g.div_scalar(v[0], v[1])?;
                project(g, y, 7)
            },
        ),
        ("concat_rows", vec![m(rng, 2, 3), m(rng, 4, 3)], |g, v| {
            let y = g.concat(&[v[0], v[1]], 0)?;
            project(g, y, 8)
        }),
        ("concat_cols", vec![m(rng, 3, 2), m(rng, 3, 4)], |g, v| {
            let y = g.concat(&[v[0], v[1]], 1)?;
            project(g, y, 9)
        }),
        ("relu", vec![away(rng, 4, 5)], |g, v| {
            let y = g.relu(v[0]);
            project(g, y, 10)
        }),
        ("hinge", vec![away(rng, 4, 5)], |g, v| {
            let y = g.hinge(v[0]);
            project(g, y, 11)
        }),
        ("softplus", vec![random(rng, &[4, 5], -3.0, 3.0)], |g, v| {
            let y = g.softplus(v[0]);
            project(g, y, 12)
        }),
        ("square", vec![m(rng, 4, 5)], |g, v| {
            let y = g.square(v[0]);
            project(g, y, 13)
        }),
        ("sqrt", vec![random(rng, &[4, 5], 0.2, 3.0)], |g, v| {
            let y = g.sqrt(v[0]);
            project(g, y, 14)
        }),
        ("reduce_max_rows", vec![m(rng, 6, 4)], |g, v| {
            let y = g.reduce_max(v[0], 0)?;
            project(g, y, 15)
        }),
        ("reduce_max_cols", vec![m(rng, 4, 6)], |g, v| {
            let y = g.reduce_max(v[0], 1)?;
            project(g, y, 16)
        }),
        ("reduce_sum_rows", vec![m(rng, 4, 3)], |g, v| {
            let y = g.reduce_sum(v[0], 0)?;
            project(g, y, 17)
        }),
        ("reduce_sum_cols", vec![m(rng, 4, 3)], |g, v| {
            let y = g.reduce_sum(v[0], 1)?;
            project(g, y, 18)
        }),
        ("sum_all", vec![m(rng, 4, 3)], |g, v| {
            let y = g.sum_all(v[0])?;
            let y = g.square(y);
            g.sum_all(y)
        }),
        ("l2_normalize", vec![m(rng, 4, 5)], |g, v| {
            let y = g.l2_normalize(v[0], 1)?;
            project(g, y, 19)
        }),
        ("gather", vec![m(rng, 5, 3)], |g, v| {
            let y = g.gather(v[0], &[4, 0, 0, 2])?;
            project(g, y, 20)
        }),
        ("reshape", vec![m(rng, 4, 3)], |g, v| {
            let y = g.reshape(v[0], vec![2, 6])?;
            project(g, y, 21)
        }),
        (
            "weighted_triplet_loss",
            vec![
                m(rng, 2, 8),
                m(rng, 2, 8),
                m(rng, 2, 8),
                random(rng, &[2], 0.2, 2.0),
            ],
            |g, v| {
                let a = g.l2_normalize(v[0], 1)?;
                let p = g.l2_normalize(v[1], 1)?;
                let n = g.l2_normalize(v[2], 1)?;
                // A margin above the largest possible gap keeps every hinge active.
                let l = crate::train::triplet_loss_graph(g, a, p, n, 2.5)?;
                weighted_batch_loss_graph(g, l, v[3])
            },
        ),
    ]
}

/// Checks every primitive on small random tensors.
pub fn primitive_checks(opts: &GradCheckOptions) -> Result<Vec<NamedCheck>> {
    let mut rng = seed::rng(seed::derive(0, "gradcheck"));
    primitive_cases(&mut rng)
        .into_iter()
        .map(|(name, inputs, f)| {
            Ok(NamedCheck {
                name: name.to_string(),
                report: grad_check(f, &inputs, opts)?,
            })
        })
        .collect()
}

/// Checks the gradient of the weighted triplet loss with respect to every
/// parameter tensor of `net`, on two terrain clouds of `points` points and
/// a batch of `batch` triplets.
pub fn network_check(
    net: &NetworkConfig,
    points: usize,
    batch: usize,
    opts: &GradCheckOptions,
) -> Result<NamedCheck> {
    let terrain = generate_terrain(&SpectrumParams::default(), 300.0, 2.0, 3)?;
    let spacing = 70.0 / (points as f64).sqrt();
    let cloud = |id: &str, cx: f64, s: u64| -> Result<PointCloud> {
        let mut pts = terrain.sample_disk([cx, 150.0], 40.0, spacing, 0.3, s);
        pts.truncate(points);
        Ok(demean(&PointCloud::new(id, pts))?.0)
    };
    let clouds = [cloud("a", 140.0, 1)?, cloud("b", 150.0, 2)?];
    let inputs = build_inputs(clouds.iter(), net)?;
    let patch = |cloud: &str, index: usize| PatchRef {
        cloud: cloud.to_string(),
        center: clouds[usize::from(cloud == "b")].points[index],
        index,
    };
    let n = points.min(clouds[0].len()).min(clouds[1].len());
    let triplets: Vec<Triplet> = (0..batch)
        .map(|k| Triplet {
            anchor: patch("a", (7 * k + 3) % n),
            positive: patch("b", (7 * k + 5) % n),
            negative: patch("b", (11 * k + n / 2) % n),
            patch_radius: 15.0,
        })
        .collect();
    let params = init_params(net, seed::derive(0, "init"))?;
    let f = |g: &mut Graph, v: &[Var]| -> Result<Var> {
        let p = params.wrap(v)?;
        // Margin 2.5 exceeds any distance between unit descriptors, so the
        // hinge never switches and the loss is smooth in the parameters.
        let (losses, weights) = batch_graph(g, &p, net, &inputs, &triplets, 2.5)?;
        weighted_batch_loss_graph(g, losses, weights)
    };
    Ok(NamedCheck {
        name: "network_triplet_loss".to_string(),
        report: grad_check(f, &params.tensors(), opts)?,
    })
}

/// Every primitive followed by the full composition at reduced width
/// (Z = W = 8, N = 64, B = 2).
pub fn gradient_suite(opts: &GradCheckOptions) -> Result<Vec<NamedCheck>> {
    let mut out = primitive_checks(opts)?;
    out.push(network_check(&NetworkConfig::tiny(), 64, 2, opts)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Fault;

    #[test]
    fn every_primitive_passes() {
        for c in primitive_checks(&suite_options()).unwrap() {
            assert!(
                c.report.passed && c.report.checked > 0,
                "{}: {:?}",
                c.name,
                c.report
            );
        }
    }

    #[test]
    fn network_composition_passes() {
        let c = network_check(&NetworkConfig::tiny(), 64, 2, &suite_options()).unwrap();
        assert!(c.report.passed, "{:?}", c.report);
        assert!(c.report.checked > 100, "{:?}", c.report);
    }

    #[test]
    fn corrupted_backward_rule_fails() {
        let opts = GradCheckOptions {
            fault: Some(Fault::MatmulRhs),
            ..suite_options()
        };
        let checks = primitive_checks(&opts).unwrap();
        let matmul = checks.iter().find(|c| c.name == "matmul").unwrap();
        assert!(!matmul.report.passed);
    }
}
