//! Place recognition by descriptor matching: keypoint selection,
//! cross-checked brute-force matching, depth filtering and evaluation.

use std::collections::BTreeMap;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::geometry::{prepare_network_input, PointCloud};
use crate::net::{absolute_depths, forward, DescriptorSet, NetworkConfig};
use crate::synth::Label;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    /// L2 distance in descriptor space.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopClosureResult {
    pub id_a: String,
    pub id_b: String,
    pub matches: Vec<Match>,
    pub accepted: bool,
    pub n_matches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcParams {
    /// Keypoints per submap fed to the matcher.
    pub keypoints: usize,
    /// Matches whose absolute depths differ by more than this are dropped.
    pub max_dz: f64,
    pub min_matches: usize,
    /// Points per cloud given to the network.
    pub points_per_cloud: usize,
    /// Grid cell applied before FPS down to `points_per_cloud`.
    pub grid_cell: f64,
}

impl Default for LcParams {
    fn default() -> Self {
        LcParams {
            keypoints: 128,
            max_dz: 2.0,
            min_matches: 3,
            points_per_cloud: 512,
            grid_cell: 1.0,
        }
    }
}

/// Indices of the `k` largest weights, ties to the lower index; `k` is
/// clamped to the number of points.
pub fn select_keypoints(desc: &DescriptorSet, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..desc.len()).collect();
    idx.sort_by(|&a, &b| desc.w[b].total_cmp(&desc.w[a]).then(a.cmp(&b)));
    idx.truncate(k.min(desc.len()));
    idx
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn argmin(query: &[f64], set: &[&[f64]]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (j, row) in set.iter().enumerate() {
        let d = sq_dist(query, row);
        if d < bd {
            bd = d;
            best = j;
        }
    }
    best
}

/// Mutual nearest neighbors between two descriptor sets. Indices are
/// positions in `a` and `b`; nearest-neighbor ties go to the lower index.
pub fn bf_match_crosscheck(a: &[&[f64]], b: &[&[f64]]) -> Vec<Match> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let a_to_b: Vec<usize> = a.iter().map(|q| argmin(q, b)).collect();
    let b_to_a: Vec<usize> = b.iter().map(|q| argmin(q, a)).collect();
    a_to_b
        .iter()
        .enumerate()
        .filter(|&(i, &j)| b_to_a[j] == i)
        .map(|(i, &j)| Match {
            index_a: i,
            index_b: j,
            distance: sq_dist(a[i], b[j]).sqrt(),
        })
        .collect()
}

/// Keeps matches whose absolute depths differ by at most `max_dz`.
pub fn depth_filter(
    matches: &[Match],
    depths_a: &[f64],
    depths_b: &[f64],
    max_dz: f64,
) -> Vec<Match> {
    matches
        .iter()
        .filter(|m| (depths_a[m.index_a] - depths_b[m.index_b]).abs() <= max_dz)
        .copied()
        .collect()
}

/// A submap reduced to network input with its descriptors and keypoints.
#[derive(Debug, Clone)]
pub struct SubmapDescriptors {
    /// Network input (demeaned, dead-reckoning frame).
    pub cloud: PointCloud,
    pub descriptors: DescriptorSet,
    pub keypoints: Vec<usize>,
    pub depths: Vec<f64>,
}

pub fn describe(
    cloud: &PointCloud,
    params: &ParamStore,
    net: &NetworkConfig,
    lc: &LcParams,
) -> Result<SubmapDescriptors> {
    let input = prepare_network_input(cloud, lc.grid_cell, lc.points_per_cloud)?;
    let depths = absolute_depths(&input);
    let descriptors = forward(&input, &depths, params, net)?;
    let keypoints = select_keypoints(&descriptors, lc.keypoints);
    Ok(SubmapDescriptors {
        cloud: input,
        descriptors,
        keypoints,
        depths,
    })
}

fn keypoint_rows(s: &SubmapDescriptors) -> Vec<&[f64]> {
    s.keypoints
        .iter()
        .map(|&k| s.descriptors.descriptor(k))
        .collect()
}

/// Matches keypoint descriptors, depth-filters and applies the
/// match-count threshold. Match indices are point indices.
pub fn match_submaps(
    a: &SubmapDescriptors,
    b: &SubmapDescriptors,
    lc: &LcParams,
) -> LoopClosureResult {
    let (ra, rb) = (keypoint_rows(a), keypoint_rows(b));
    let raw: Vec<Match> = bf_match_crosscheck(&ra, &rb)
        .into_iter()
        .map(|m| Match {
            index_a: a.keypoints[m.index_a],
            index_b: b.keypoints[m.index_b],
            distance: m.distance,
        })
        .collect();
    let matches = depth_filter(&raw, &a.depths, &b.depths, lc.max_dz);
    let n = matches.len();
    LoopClosureResult {
        id_a: a.cloud.id.clone(),
        id_b: b.cloud.id.clone(),
        matches,
        accepted: n >= lc.min_matches,
        n_matches: n,
    }
}

pub fn detect_loop_closure(
    a: &PointCloud,
    b: &PointCloud,
    params: &ParamStore,
    net: &NetworkConfig,
    lc: &LcParams,
) -> Result<LoopClosureResult> {
    let da = describe(a, params, net, lc)?;
    let db = describe(b, params, net, lc)?;
    Ok(match_submaps(&da, &db, lc))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    /// None when nothing was accepted.
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// None when there are no positives.
    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

/// Final accept flag of every result at `min_matches`, after the
/// best-candidate rule: among the accepted candidates of one query cloud
/// (`id_a`), only the one with most matches (earliest on ties) stays.
pub fn decide(results: &[LoopClosureResult], min_matches: usize) -> Vec<bool> {
    let queries: Vec<&str> = results.iter().map(|r| r.id_a.as_str()).collect();
    let scores: Vec<f64> = results.iter().map(|r| r.n_matches as f64).collect();
    decide_by_score(&queries, &scores, min_matches as f64)
}

/// The best-candidate rule for any score: candidates scoring at least
/// `threshold` are accepted, and then only the highest-scoring one per query
/// (earliest on ties) is kept.
pub fn decide_by_score(queries: &[&str], scores: &[f64], threshold: f64) -> Vec<bool> {
    let mut best: BTreeMap<&str, usize> = BTreeMap::new();
    for (k, (&q, &s)) in queries.iter().zip(scores).enumerate() {
        if !(s >= threshold) {
            continue;
        }
        match best.get(q) {
            Some(&j) if scores[j] >= s => {}
            _ => {
                best.insert(q, k);
            }
        }
    }
    let mut keep = vec![false; scores.len()];
    for k in best.into_values() {
        keep[k] = true;
    }
    keep
}

/// Confusion matrix of accept flags against labels.
pub fn tally(accepted: &[bool], labels: &[Label]) -> Result<ConfusionMatrix> {
    if accepted.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} decisions for {} labels",
            accepted.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&a, label) in accepted.iter().zip(labels) {
        match (label, a) {
            (Label::Pos, true) => cm.tp += 1,
            (Label::Pos, false) => cm.fn_ += 1,
            (Label::Neg, true) => cm.fp += 1,
            (Label::Neg, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Tallies labeled results at `min_matches` with the best-candidate rule.
pub fn evaluate(
    results: &[LoopClosureResult],
    labels: &[Label],
    min_matches: usize,
) -> Result<ConfusionMatrix> {
    tally(&decide(results, min_matches), labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn desc(w: Vec<f64>) -> DescriptorSet {
        let n = w.len();
        DescriptorSet {
            xi: crate::autodiff::Tensor::matrix(n, 1, vec![1.0; n]).unwrap(),
            w,
        }
    }

    #[test]
    fn keypoint_examples() {
        assert_eq!(
            select_keypoints(&desc(vec![0.3, 0.2, 0.9]), 3),
            vec![2, 0, 1]
        );
        assert_eq!(
            select_keypoints(&desc(vec![0.0, 1.0, 0.0, 0.0]), 1),
            vec![1]
        );
        assert_eq!(
            select_keypoints(&desc(vec![0.5, 0.5, 0.1]), 10),
            vec![0, 1, 2]
        );
    }

    proptest! {
        #[test]
        fn keypoints_match_sort_oracle(w in prop::collection::vec(0.0f64..1.0, 64..200)) {
            let got = select_keypoints(&desc(w.clone()), 64);
            let mut idx: Vec<usize> = (0..w.len()).collect();
            idx.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap().then(a.cmp(&b)));
            prop_assert_eq!(got, idx[..64].to_vec());
        }
    }

    fn random_set(rng: &mut seed::Rng, n: usize, w: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..w).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn slices(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn identical_sets_match_identically() {
        let mut rng = seed::rng(0);
        let a = random_set(&mut rng, 20, 8);
        let m = bf_match_crosscheck(&slices(&a), &slices(&a));
        assert_eq!(m.len(), 20);
        assert!(m
            .iter()
            .all(|m| m.index_a == m.index_b && m.distance == 0.0));
        let one = bf_match_crosscheck(&slices(&a[..1]), &slices(&a[5..6]));
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn crosscheck_matches_mutual_nearest_oracle_and_is_symmetric() {
        let mut rng = seed::rng(1);
        for _ in 0..20 {
            let a = random_set(&mut rng, 50, 32);
            let b = random_set(&mut rng, 60, 32);
            let got = bf_match_crosscheck(&slices(&a), &slices(&b));
            let mut oracle = Vec::new();
            for i in 0..50 {
                for j in 0..60 {
                    let d = sq_dist(&a[i], &b[j]);
                    if (0..60).all(|k| sq_dist(&a[i], &b[k]) >= d)
                        && (0..50).all(|k| sq_dist(&a[k], &b[j]) >= d)
                    {
                        oracle.push((i, j));
                    }
                }
            }
            assert_eq!(
                got.iter()
                    .map(|m| (m.index_a, m.index_b))
                    .collect::<Vec<_>>(),
                oracle
            );
            let mut swapped: Vec<(usize, usize)> = bf_match_crosscheck(&slices(&b), &slices(&a))
                .iter()
                .map(|m| (m.index_b, m.index_a))
                .collect();
            swapped.sort_unstable();
            assert_eq!(swapped, oracle);
            assert!(got.len() <= 50);
        }
    }

    #[test]
    fn depth_filter_boundaries() {
        let m = |i| Match {
            index_a: i,
            index_b: i,
            distance: 0.0,
        };
        let ms = vec![m(0), m(1), m(2)];
        let kept = depth_filter(&ms, &[10.0, 10.0, 10.0], &[10.0, 12.0, 12.5], 2.0);
        assert_eq!(kept, vec![m(0), m(1)]);
    }

    fn result(a: &str, b: &str, n: usize) -> LoopClosureResult {
        LoopClosureResult {
            id_a: a.into(),
            id_b: b.into(),
            matches: vec![],
            accepted: n >= 3,
            n_matches: n,
        }
    }

    #[test]
    fn best_candidate_rule_and_hand_counted_metrics() {
        let results = vec![
            result("q1", "t1", 5),
            result("q1", "t2", 7),
            result("q2", "t3", 4),
            result("q3", "t4", 1),
            result("q4", "t5", 2),
        ];
        let labels = [Label::Pos, Label::Neg, Label::Pos, Label::Pos, Label::Neg];
        let cm = evaluate(&results, &labels, 3).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix {
                tp: 1,
                fn_: 2,
                fp: 1,
                tn: 1
            }
        );
        assert_eq!(cm.precision(), Some(0.5));
        assert_eq!(cm.recall(), Some(1.0 / 3.0));
        let none = evaluate(&results, &labels, usize::MAX).unwrap();
        assert_eq!(none.tp + none.fp, 0);
        assert_eq!(none.precision(), None);
    }

    #[test]
    fn raising_threshold_never_adds_acceptances() {
        let mut rng = seed::rng(3);
        let results: Vec<_> = (0..40)
            .map(|k| {
                result(
                    &format!("q{}", k % 7),
                    &format!("t{k}"),
                    rng.random_range(0..12),
                )
            })
            .collect();
        let count = |t| decide(&results, t).iter().filter(|&&a| a).count();
        for t in 0..12 {
            assert!(count(t + 1) <= count(t));
        }
    }
}
