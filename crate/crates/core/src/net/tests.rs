use super::*;
use crate::seed;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng as _;

fn bumpy_cloud(n: usize, s: u64) -> PointCloud {
    let mut rng = seed::rng(s);
    let pts = (0..n)
        .map(|_| {
            let (x, y): (f64, f64) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            Point3::new(x, y, 3.0 * (x / 9.0).sin() * (y / 13.0).cos() + 0.02 * x)
        })
        .collect();
    PointCloud {
        id: "c".into(),
        points: pts,
        centroid: Point3::new(0.0, 0.0, -500.0),
    }
}

fn identity(n: usize) -> Tensor {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    Tensor::matrix(n, n, v).unwrap()
}

#[test]
fn depth_channel_examples() {
    let cfg = NetworkConfig::default();
    let cloud = PointCloud::new("c", vec![Point3::zeros(); 3]);
    let t = encode_input(&cloud, &[0.0, 25.0, 125.0], &cfg).unwrap();
    assert_eq!(t.shape(), &[3, 4]);
    assert_eq!(t.row(0)[3], 0.0);
    assert_abs_diff_eq!(t.row(1)[3], 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(t.row(2)[3], t.row(1)[3], epsilon = 1e-12);
    assert!(encode_input(&cloud, &[0.0], &cfg).is_err());
}

#[test]
fn encode_positions_are_relative() {
    let cloud = PointCloud::new(
        "c",
        vec![Point3::new(1.0, 1.0, 0.0), Point3::new(3.0, 1.0, 0.0)],
    );
    let t = encode_input(&cloud, &[0.0, 0.0], &NetworkConfig::default()).unwrap();
    assert_eq!(&t.row(0)[..3], &[-1.0, 0.0, 0.0]);
    assert_eq!(&t.row(1)[..3], &[1.0, 0.0, 0.0]);
}

#[test]
fn set_abstraction_identity_mlp_is_elementwise_max() {
    let cfg = NetworkConfig {
        sa_levels: vec![
            SaLevel {
                sample_count: 1,
                ball_radius: 10.0,
                neighbor_cap: 3,
                mlp_widths: vec![4],
            },
            NetworkConfig::tiny().sa_levels[1].clone(),
            NetworkConfig::tiny().sa_levels[2].clone(),
        ],
        ..NetworkConfig::tiny()
    };
    let mut store = ParamStore::new();
    store.insert("phi.sa0.w0", identity(4)).unwrap();
    store.insert("phi.sa0.b0", Tensor::zeros(&[4])).unwrap();
    let positions = vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(1.0, 2.0, 0.5),
        Point3::new(2.0, 1.0, 0.3),
    ];
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let f = g.constant(Tensor::matrix(3, 1, vec![0.3, 0.9, 0.1]).unwrap());
    let (centers, pooled) = set_abstraction(&mut g, &p, &cfg, 0, &positions, f).unwrap();
    assert_eq!(centers, vec![positions[0]]);
    assert_eq!(g.value(pooled).values(), &[0.2, 0.2, 0.05, 0.9]);
}

#[test]
fn set_abstraction_output_shape() {
    let cfg = NetworkConfig::compact();
    let params = init_params(&cfg, 0).unwrap();
    let cloud = bumpy_cloud(512, 1);
    let pos: Vec<Point3> = cloud.points.clone();
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let f = g.constant(Tensor::zeros(&[512, 1]));
    let (centers, pooled) = set_abstraction(&mut g, &p, &cfg, 0, &pos, f).unwrap();
    assert_eq!(centers.len(), 128);
    assert_eq!(g.shape(pooled), &[128, 32]);
    let f = g.constant(Tensor::zeros(&[4, 1]));
    assert!(set_abstraction(&mut g, &p, &cfg, 0, &pos[..4], f).is_err());
}

#[test]
fn feature_propagation_copy_rules() {
    let coarse = vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(10.0, 0.0, 0.0),
        Point3::new(0.0, 10.0, 0.0),
    ];
    let fine = vec![Point3::new(10.0, 0.0, 0.0), Point3::new(3.0, 4.0, 0.0)];
    let t = FpTopology::new(&coarse, &fine, 1).unwrap();
    assert_eq!(t.weights.row(0), &[0.0, 1.0, 0.0]);
    let s: f64 = t.weights.row(1).iter().sum();
    assert_abs_diff_eq!(s, 1.0, epsilon = 1e-15);

    let one = FpTopology::new(&coarse[..1], &fine, 1).unwrap();
    assert!(one.weights.values().iter().all(|&v| v == 1.0));
    assert!(FpTopology::new(&[], &fine, 1).is_err());
}

proptest! {
    #[test]
    fn interpolation_stays_in_neighbor_hull(
        coarse in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -1.0f64..1.0), 3..12),
        feats in prop::collection::vec(-5.0f64..5.0, 12),
        q in (-12.0f64..12.0, -12.0f64..12.0, -1.0f64..1.0),
    ) {
        let coarse: Vec<Point3> = coarse.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect();
        let q = Point3::new(q.0, q.1, q.2);
        let t = FpTopology::new(&coarse, &[q], 1).unwrap();
        let row = t.weights.row(0);
        let used: Vec<usize> = (0..coarse.len()).filter(|&j| row[j] > 0.0).collect();
        prop_assert!(used.len() <= 3);
        let v: f64 = (0..coarse.len()).map(|j| row[j] * feats[j]).sum();
        let lo = used.iter().map(|&j| feats[j]).fold(f64::INFINITY, f64::min);
        let hi = used.iter().map(|&j| feats[j]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }
}

#[test]
fn detector_with_zero_params_gives_ln2() {
    let cfg = NetworkConfig::tiny();
    let mut params = init_params(&cfg, 0).unwrap();
    for t in params.tensors_mut() {
        t.values_mut().fill(0.0);
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let z = g.constant(Tensor::zeros(&[5, 8]));
    let w = keypoint_detector(&mut g, &p, z).unwrap();
    assert!(g
        .value(w)
        .values()
        .iter()
        .all(|&v| (v - 2f64.ln()).abs() < 1e-15));
}

#[test]
fn detector_is_row_wise_and_positive() {
    let cfg = NetworkConfig::tiny();
    let params = init_params(&cfg, 5).unwrap();
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let mut rng = seed::rng(2);
    let row: Vec<f64> = (0..8).map(|_| rng.random_range(-30.0..30.0)).collect();
    let mut vals = row.clone();
    vals.extend(&row);
    vals.extend((0..8).map(|_| -300.0));
    let z = g.constant(Tensor::matrix(3, 8, vals).unwrap());
    let w = keypoint_detector(&mut g, &p, z).unwrap();
    let w = g.value(w).values();
    assert_eq!(w[0], w[1]);
    assert!(w.iter().all(|&v| v > 0.0));
}

#[test]
fn embedding_with_self_group_is_per_point_mlp() {
    let cfg = NetworkConfig {
        embed_neighbors: 1,
        ..NetworkConfig::tiny()
    };
    let params = init_params(&cfg, 9).unwrap();
    let mut rng = seed::rng(3);
    let positions: Vec<Point3> = (0..6)
        .map(|_| {
            Point3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                0.0,
            )
        })
        .collect();
    let zeta: Vec<f64> = (0..6 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let z = g.constant(Tensor::matrix(6, 8, zeta).unwrap());
    let xi = feature_embedding(&mut g, &p, &cfg, z, &positions, &[0, 1, 2, 3, 4, 5]).unwrap();
    // Reference: MLP on ζ ⊕ 0 per row, then normalize.
    let zero = g.constant(Tensor::zeros(&[6, 3]));
    let x = g.concat(&[z, zero], 1).unwrap();
    let x = layers::mlp(&mut g, &p, "chi", 2, x, false).unwrap();
    let reference = g.l2_normalize(x, 1).unwrap();
    for (a, b) in g.value(xi).values().iter().zip(g.value(reference).values()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
    }
}

fn run(cloud: &PointCloud, cfg: &NetworkConfig, params: &ParamStore) -> DescriptorSet {
    forward(cloud, &absolute_depths(cloud), params, cfg).unwrap()
}

#[test]
fn desk_scale_shapes_and_unit_rows() {
    let cfg = NetworkConfig::compact();
    let params = init_params(&cfg, 11).unwrap();
    let d = run(&bumpy_cloud(512, 4), &cfg, &params);
    assert_eq!(d.xi.shape(), &[512, 32]);
    assert_eq!(d.w.len(), 512);
    for k in 0..512 {
        let n: f64 = d.descriptor(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        assert!(d.w[k] > 0.0);
    }
}

#[test]
fn permutation_equivariance_is_exact() {
    let cfg = NetworkConfig::tiny();
    let params = init_params(&cfg, 12).unwrap();
    let cloud = bumpy_cloud(64, 6);
    let base = run(&cloud, &cfg, &params);
    let perm: Vec<usize> = (0..64).map(|i| (i * 37 + 11) % 64).collect();
    let shuffled = PointCloud {
        points: perm.iter().map(|&i| cloud.points[i]).collect(),
        ..cloud.clone()
    };
    let out = run(&shuffled, &cfg, &params);
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(out.descriptor(k), base.descriptor(i));
        assert_eq!(out.w[k], base.w[i]);
    }
}

#[test]
fn duplicates_give_duplicate_rows() {
    let cfg = NetworkConfig::tiny();
    let params = init_params(&cfg, 13).unwrap();
    let mut cloud = bumpy_cloud(64, 7);
    cloud.points.push(cloud.points[5]);
    let d = run(&cloud, &cfg, &params);
    assert_eq!(d.descriptor(5), d.descriptor(64));
    assert_eq!(d.w[5], d.w[64]);
}

#[test]
fn horizontal_translation_invariance() {
    let cfg = NetworkConfig::tiny();
    let params = init_params(&cfg, 14).unwrap();
    let cloud = bumpy_cloud(64, 8);
    let base = run(&cloud, &cfg, &params);
    let moved = PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| p + Point3::new(123.25, -40.5, 0.0))
            .collect(),
        ..cloud.clone()
    };
    let out = run(&moved, &cfg, &params);
    for k in 0..64 {
        assert!((out.w[k] - base.w[k]).abs() < 1e-9);
        for (a, b) in out.descriptor(k).iter().zip(base.descriptor(k)) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn too_small_cloud_names_the_minimum() {
    let cfg = NetworkConfig::compact();
    let params = init_params(&cfg, 0).unwrap();
    let err = forward(&bumpy_cloud(100, 1), &[500.0; 100], &params, &cfg).unwrap_err();
    assert!(err.to_string().contains("128"), "{err}");
}
