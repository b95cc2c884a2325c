//! Triplet sampling and Siamese training of the descriptor network.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};

use crate::autodiff::{
    adam_step, AdamState, BoundParams, Checkpoint, Graph, ParamStore, Section, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::geometry::{
    augment, farthest_point_sampling, overlap_iou_points, prepare_network_input, AugmentParams,
    FpsStart, Point3, PointCloud, Pose,
};
use crate::net::{absolute_depths, forward_graph, init_params, NetInput, NetworkConfig};
use crate::seed;
use crate::spatial::KdTree;
use crate::synth::{Crop, Dataset, Label, Split};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Triplet margin γ.
    pub margin: f64,
    /// M, triplets drawn per positive pair and epoch.
    pub triplets_per_pair: usize,
    /// B, triplets per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative decay per epoch: lr_e = lr_0 * (1 - decay)^e.
    pub lr_decay_per_epoch: f64,
    pub epochs: usize,
    /// N, points fed to the network per cloud.
    pub points_per_cloud: usize,
    /// Grid cell applied before FPS down to N points.
    pub grid_cell: f64,
    pub patch_radius: f64,
    /// Anchor candidates drawn by FPS from the source cloud.
    pub candidates: usize,
    /// Occupancy cell used to verify that negatives do not overlap.
    pub iou_cell: f64,
    /// Applied to every training cloud, re-drawn each epoch. The seed field
    /// is ignored; per-cloud seeds derive from `seed`.
    pub augment: AugmentParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 0.2,
            triplets_per_pair: 5,
            batch_size: 16,
            learning_rate: 1e-5,
            lr_decay_per_epoch: 0.05,
            epochs: 20,
            points_per_cloud: 512,
            grid_cell: 1.0,
            patch_radius: 15.0,
            candidates: 512,
            iou_cell: 2.0,
            augment: AugmentParams::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::invalid("margin must be positive"));
        }
        if self.triplets_per_pair == 0
            || self.batch_size == 0
            || self.points_per_cloud == 0
            || self.candidates == 0
        {
            return Err(Error::invalid(
                "M, B, N and the candidate count must be at least 1",
            ));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.lr_decay_per_epoch) {
            return Err(Error::invalid(
                "learning rate must be >= 0 and decay in [0, 1)",
            ));
        }
        if !(self.grid_cell > 0.0 && self.patch_radius > 0.0 && self.iou_cell > 0.0) {
            return Err(Error::invalid(
                "grid cell, patch radius and IoU cell must be positive",
            ));
        }
        self.augment.validate()
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * (1.0 - self.lr_decay_per_epoch).powi(epoch as i32)
    }
}

/// A patch of one cloud: its center in that cloud's absolute
/// (dead-reckoning) frame and the network-input point nearest to it, whose
/// descriptor stands for the patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRef {
    pub cloud: String,
    pub center: Point3,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: PatchRef,
    pub positive: PatchRef,
    pub negative: PatchRef,
    pub patch_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletSample {
    pub triplets: Vec<Triplet>,
    /// Fewer than the requested number of valid anchors existed.
    pub flagged: bool,
}

/// A crop reduced to network size, with its ground-truth geometry.
#[derive(Debug, Clone)]
pub struct PreparedCloud {
    /// Demeaned network input in the dead-reckoning frame.
    pub cloud: PointCloud,
    /// Dead-reckoning to true world frame.
    pub correction: Pose,
    pub true_points: Vec<Point3>,
    pub center_xy: [f64; 2],
    pub radius: f64,
    true_xy: KdTree,
}

impl PreparedCloud {
    pub fn new(cloud: PointCloud, correction: Pose) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::invalid(format!("cloud '{}' is empty", cloud.id)));
        }
        let true_points: Vec<Point3> = cloud
            .absolute_points()
            .iter()
            .map(|p| correction.transform_point(p))
            .collect();
        let n = true_points.len() as f64;
        let cx = true_points.iter().map(|p| p.x).sum::<f64>() / n;
        let cy = true_points.iter().map(|p| p.y).sum::<f64>() / n;
        let radius = true_points
            .iter()
            .map(|p| (p.x - cx).hypot(p.y - cy))
            .fold(0.0, f64::max);
        Ok(PreparedCloud {
            true_xy: KdTree::planar(&true_points),
            cloud,
            correction,
            true_points,
            center_xy: [cx, cy],
            radius,
        })
    }

    pub fn from_crop(crop: &Crop, config: &TrainConfig) -> Result<Self> {
        let cloud = prepare_network_input(&crop.cloud, config.grid_cell, config.points_per_cloud)?;
        Self::new(cloud, crop.truth_correction())
    }

    fn inner(&self, p: &Point3, margin: f64) -> bool {
        (p.x - self.center_xy[0]).hypot(p.y - self.center_xy[1]) <= self.radius - margin
    }

    /// Index of the point nearest (in x-y, true frame) to a true position.
    fn nearest(&self, p: &Point3) -> usize {
        self.true_xy.nearest(p).expect("non-empty").0
    }

    fn patch(&self, center: &Point3, radius: f64) -> Vec<Point3> {
        self.true_xy
            .within(center, radius)
            .into_iter()
            .map(|(i, _)| self.true_points[i])
            .collect()
    }

    fn patch_ref(&self, index: usize, true_center: &Point3) -> PatchRef {
        PatchRef {
            cloud: self.cloud.id.clone(),
            center: self.correction.inverse().transform_point(true_center),
            index,
        }
    }
}

/// Draws up to `m` triplets from a positive pair.
///
/// Anchors are FPS candidates of the source lying at least one patch radius
/// inside both clouds; positives are centered exactly on the anchor's true
/// position in the target; negatives are random target points whose patch
/// shares no occupancy cell with the anchor patch.
pub fn sample_triplets(
    source: &PreparedCloud,
    target: &PreparedCloud,
    config: &TrainConfig,
    m: usize,
    seed: u64,
) -> Result<TripletSample> {
    let r = config.patch_radius;
    let k = config.candidates.min(source.cloud.len());
    let candidates = farthest_point_sampling(&source.cloud.points, k, FpsStart::Lexicographic)?;
    let mut valid: Vec<usize> = candidates
        .into_iter()
        .filter(|&i| {
            let p = &source.true_points[i];
            source.inner(p, r) && target.inner(p, r)
        })
        .collect();
    valid.sort_unstable();
    let mut rng = seed::rng(seed);
    let anchors: Vec<usize> = valid.choose_multiple(&mut rng, m).copied().collect();

    let far = 2.0 * r + 2.0 * std::f64::consts::SQRT_2 * config.iou_cell;
    let mut triplets = Vec::with_capacity(anchors.len());
    for a in anchors {
        let at = source.true_points[a];
        let negatives: Vec<usize> = (0..target.true_points.len())
            .filter(|&j| {
                let q = &target.true_points[j];
                (q.x - at.x).hypot(q.y - at.y) > far
            })
            .collect();
        let Some(&n) = negatives.choose(&mut rng) else {
            continue;
        };
        let nt = target.true_points[n];
        let anchor_patch = source.patch(&at, r);
        let negative_patch = target.patch(&nt, r);
        if overlap_iou_points(&anchor_patch, &negative_patch, config.iou_cell)? > 0.0 {
            continue;
        }
        triplets.push(Triplet {
            anchor: source.patch_ref(a, &at),
            positive: target.patch_ref(target.nearest(&at), &at),
            negative: target.patch_ref(n, &nt),
            patch_radius: r,
        });
    }
    let flagged = triplets.len() < m;
    Ok(TripletSample { triplets, flagged })
}

/// max(‖a − p‖ − ‖a − n‖ + γ, 0).
pub fn triplet_loss(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> f64 {
    let dist = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .map(|(u, v)| (u - v).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    (dist(a, p) - dist(a, n) + margin).max(0.0)
}

/// Σ w_t L_t / Σ w_t.
pub fn weighted_batch_loss(losses: &[f64], weights: &[f64]) -> Result<f64> {
    if losses.len() != weights.len() || losses.is_empty() {
        return Err(Error::invalid(format!(
            "{} losses for {} weights",
            losses.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::invalid("anchor weights must be positive"));
    }
    let total: f64 = weights.iter().sum();
    Ok(losses.iter().zip(weights).map(|(l, w)| l * w).sum::<f64>() / total)
}

/// Per-triplet losses (T) from T x W anchor, positive and negative rows.
pub fn triplet_loss_graph(g: &mut Graph, a: Var, p: Var, n: Var, margin: f64) -> Result<Var> {
    let dist = |g: &mut Graph, x: Var, y: Var| -> Result<Var> {
        let d = g.sub(x, y)?;
        let d = g.square(d);
        let d = g.reduce_sum(d, 1)?;
        Ok(g.sqrt(d))
    };
    let dap = dist(g, a, p)?;
    let dan = dist(g, a, n)?;
    let x = g.sub(dap, dan)?;
    let x = g.add_scalar(x, margin);
    Ok(g.hinge(x))
}

pub fn weighted_batch_loss_graph(g: &mut Graph, losses: Var, weights: Var) -> Result<Var> {
    let wl = g.mul(losses, weights)?;
    let num = g.sum_all(wl)?;
    let den = g.sum_all(weights)?;
    g.div_scalar(num, den)
}

/// Network inputs for every cloud a batch touches.
pub type Inputs = BTreeMap<String, NetInput>;

pub fn build_inputs<'a>(
    clouds: impl IntoIterator<Item = &'a PointCloud>,
    net: &NetworkConfig,
) -> Result<Inputs> {
    clouds
        .into_iter()
        .map(|c| Ok((c.id.clone(), NetInput::new(c, &absolute_depths(c), net)?)))
        .collect()
}

/// Descriptor rows of one batch: (anchors, positives, negatives), each
/// T x W, and the anchor weights (T).
pub fn batch_rows(
    g: &mut Graph,
    p: &BoundParams,
    net: &NetworkConfig,
    inputs: &Inputs,
    batch: &[Triplet],
) -> Result<([Var; 3], Var)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let canon: BTreeMap<&str, Vec<usize>> = inputs
        .iter()
        .map(|(k, v)| (k.as_str(), v.canonical_index()))
        .collect();
    let row = |r: &PatchRef| -> Result<(&str, usize)> {
        let (name, c) = canon
            .get_key_value(r.cloud.as_str())
            .ok_or_else(|| Error::invalid(format!("no input for cloud '{}'", r.cloud)))?;
        let i = *c.get(r.index).ok_or_else(|| {
            Error::invalid(format!("point {} out of range in '{}'", r.index, r.cloud))
        })?;
        Ok((*name, i))
    };
    let mut needed: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for t in batch {
        for r in [&t.anchor, &t.positive, &t.negative] {
            let (c, i) = row(r)?;
            needed.entry(c).or_default().push(i);
        }
    }
    let mut offsets = BTreeMap::new();
    let mut xis = Vec::new();
    let mut ws = BTreeMap::new();
    let mut offset = 0;
    for (cloud, rows) in &mut needed {
        rows.sort_unstable();
        rows.dedup();
        let (_, w, xi) = forward_graph(g, p, net, &inputs[*cloud], rows)?;
        offsets.insert(*cloud, offset);
        offset += rows.len();
        xis.push(xi);
        ws.insert(*cloud, w);
    }
    let all = if xis.len() == 1 {
        xis[0]
    } else {
        g.concat(&xis, 0)?
    };
    let locate = |r: &PatchRef| -> Result<usize> {
        let (c, i) = row(r)?;
        Ok(offsets[c] + needed[c].binary_search(&i).expect("collected above"))
    };
    let mut idx = [Vec::new(), Vec::new(), Vec::new()];
    let mut weights = Vec::new();
    for t in batch {
        idx[0].push(locate(&t.anchor)?);
        idx[1].push(locate(&t.positive)?);
        idx[2].push(locate(&t.negative)?);
        let (c, i) = row(&t.anchor)?;
        weights.push(g.gather(ws[c], &[i])?);
    }
    let a = g.gather(all, &idx[0])?;
    let pp = g.gather(all, &idx[1])?;
    let n = g.gather(all, &idx[2])?;
    let w = g.concat(&weights, 0)?;
    Ok(([a, pp, n], w))
}

/// Graph of one batch: returns (per-triplet losses, anchor weights).
pub fn batch_graph(
    g: &mut Graph,
    p: &BoundParams,
    net: &NetworkConfig,
    inputs: &Inputs,
    batch: &[Triplet],
    margin: f64,
) -> Result<(Var, Var)> {
    let ([a, pp, n], w) = batch_rows(g, p, net, inputs, batch)?;
    Ok((triplet_loss_graph(g, a, pp, n, margin)?, w))
}

/// (‖ξ_a − ξ_p‖, ‖ξ_a − ξ_n‖) for every triplet.
pub fn descriptor_distances(
    params: &ParamStore,
    net: &NetworkConfig,
    inputs: &Inputs,
    triplets: &[Triplet],
    batch_size: usize,
) -> Result<Vec<(f64, f64)>> {
    let d = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .map(|(u, v)| (u - v).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut out = Vec::with_capacity(triplets.len());
    for batch in triplets.chunks(batch_size.max(1)) {
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let ([a, pp, n], _) = batch_rows(&mut g, &p, net, inputs, batch)?;
        let (a, pp, n) = (g.value(a), g.value(pp), g.value(n));
        for t in 0..batch.len() {
            out.push((d(a.row(t), pp.row(t)), d(a.row(t), n.row(t))));
        }
    }
    Ok(out)
}

/// Mean triplet loss, unweighted, over `triplets`.
pub fn mean_triplet_loss(
    params: &ParamStore,
    net: &NetworkConfig,
    inputs: &Inputs,
    triplets: &[Triplet],
    config: &TrainConfig,
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::invalid("no triplets to evaluate"));
    }
    let mut total = 0.0;
    for batch in triplets.chunks(config.batch_size) {
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let (losses, _) = batch_graph(&mut g, &p, net, inputs, batch, config.margin)?;
        total += g.value(losses).values().iter().sum::<f64>();
    }
    Ok(total / triplets.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based; epoch 0 denotes the untrained network.
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean weighted batch loss over the epoch's minibatches.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Fraction of training triplets with positive loss.
    pub active_fraction: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochStats>,
    /// 0 when no epoch improved on the untrained network.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub flagged_pairs: usize,
    pub seconds: f64,
}

impl LossReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,active_fraction,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.6},{:.3}\n",
                e.epoch, e.train_loss, e.val_loss, e.active_fraction, e.seconds
            ));
        }
        out
    }
}

/// Optimizer state that survives between runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamStore,
    pub adam: AdamState,
    /// Epochs completed so far.
    pub epoch: usize,
    pub best_params: ParamStore,
    pub best_val_loss: f64,
    pub best_epoch: usize,
}

impl TrainState {
    pub fn fresh(net: &NetworkConfig, seed: u64) -> Result<Self> {
        let params = init_params(net, seed::derive(seed, "init"))?;
        Ok(TrainState {
            adam: AdamState::new(&params),
            best_params: params.clone(),
            params,
            epoch: 0,
            best_val_loss: f64::INFINITY,
            best_epoch: 0,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::with_section(
            "network",
            vec![
                ("epoch".into(), self.epoch.to_string()),
                ("best_epoch".into(), self.best_epoch.to_string()),
                (
                    "best_val_loss".into(),
                    format!("{:.16e}", self.best_val_loss),
                ),
            ],
            self.best_params.clone(),
        );
        let mut last = ParamStore::new();
        let mut moments = ParamStore::new();
        for (k, (name, t)) in self.params.iter().enumerate() {
            last.insert(name, t.clone()).expect("unique");
            let shape = t.shape().to_vec();
            let m = Tensor::new(shape.clone(), self.adam.first[k].clone()).expect("same shape");
            let v = Tensor::new(shape, self.adam.second[k].clone()).expect("same shape");
            moments.insert(format!("m.{name}"), m).expect("unique");
            moments.insert(format!("v.{name}"), v).expect("unique");
        }
        ck.sections.push(Section {
            name: "last".into(),
            meta: vec![],
            params: last,
        });
        ck.sections.push(Section {
            name: "adam".into(),
            meta: vec![("step".into(), self.adam.step.to_string())],
            params: moments,
        });
        ck
    }

    /// Restores a state written by [`TrainState::to_checkpoint`]. A
    /// checkpoint holding only a "network" section resumes with fresh
    /// optimizer moments.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let net = ck
            .section("network")
            .ok_or_else(|| Error::invalid("checkpoint has no 'network' section"))?;
        let meta = |k: &str| {
            net.meta
                .iter()
                .find(|(n, _)| n == k)
                .map(|(_, v)| v.as_str())
        };
        let parse_usize = |k: &str| -> Result<usize> {
            meta(k)
                .unwrap_or("0")
                .parse()
                .map_err(|_| Error::invalid(format!("checkpoint meta '{k}' is not a count")))
        };
        let best_val_loss = meta("best_val_loss")
            .unwrap_or("inf")
            .parse::<f64>()
            .map_err(|_| Error::invalid("checkpoint meta 'best_val_loss' is not a number"))?;
        let params = ck
            .section("last")
            .map_or_else(|| net.params.clone(), |s| s.params.clone());
        let mut adam = AdamState::new(&params);
        if let Some(s) = ck.section("adam") {
            adam.step = s
                .meta
                .iter()
                .find(|(k, _)| k == "step")
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::invalid("adam section lacks a step count"))?;
            for (k, (name, _)) in params.iter().enumerate() {
                let get = |p: &str| {
                    s.params
                        .get(&format!("{p}.{name}"))
                        .map(|t| t.values().to_vec())
                        .ok_or_else(|| Error::invalid(format!("adam section lacks {p}.{name}")))
                };
                adam.first[k] = get("m")?;
                adam.second[k] = get("v")?;
            }
        }
        Ok(TrainState {
            params,
            adam,
            epoch: parse_usize("epoch")?,
            best_params: net.params.clone(),
            best_val_loss,
            best_epoch: parse_usize("best_epoch")?,
        })
    }
}

/// Training and validation material derived from a dataset.
pub struct TrainingSet {
    pub prepared: BTreeMap<String, PreparedCloud>,
    /// (source, target) ids of positive training pairs.
    pub train_pairs: Vec<(String, String)>,
    pub val_triplets: Vec<Triplet>,
    pub val_inputs: Inputs,
    pub flagged_pairs: usize,
}

impl TrainingSet {
    pub fn new(dataset: &Dataset, net: &NetworkConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        net.validate()?;
        let pairs = |split| -> Vec<(String, String)> {
            dataset
                .pairs_in(split, Label::Pos)
                .into_iter()
                .map(|p| (p.id_a.clone(), p.id_b.clone()))
                .collect()
        };
        let train_pairs = pairs(Split::Train);
        let val_pairs = pairs(Split::Val);
        if train_pairs.is_empty() || val_pairs.is_empty() {
            return Err(Error::invalid(format!(
                "training needs positive train and val pairs (got {} and {})",
                train_pairs.len(),
                val_pairs.len()
            )));
        }
        let mut prepared = BTreeMap::new();
        for (a, b) in train_pairs.iter().chain(&val_pairs) {
            for id in [a, b] {
                if !prepared.contains_key(id) {
                    let crop = dataset.crop(id).ok_or_else(|| {
                        Error::invalid(format!("pair references unknown cloud '{id}'"))
                    })?;
                    prepared.insert(id.clone(), PreparedCloud::from_crop(crop, config)?);
                }
            }
        }
        let vseed = seed::derive(config.seed, "val-triplets");
        let mut val_triplets = Vec::new();
        let mut flagged_pairs = 0;
        for (k, (a, b)) in val_pairs.iter().enumerate() {
            let s = sample_triplets(
                &prepared[a],
                &prepared[b],
                config,
                config.triplets_per_pair,
                seed::derive_indexed(vseed, "pair", k as u64),
            )?;
            flagged_pairs += usize::from(s.flagged);
            val_triplets.extend(s.triplets);
        }
        if val_triplets.is_empty() {
            return Err(Error::invalid("validation pairs yield no triplets"));
        }
        let val_inputs = build_inputs(
            val_pairs
                .iter()
                .flat_map(|(a, b)| [a, b])
                .map(|id| &prepared[id].cloud),
            net,
        )?;
        Ok(TrainingSet {
            prepared,
            train_pairs,
            val_triplets,
            val_inputs,
            flagged_pairs,
        })
    }
}

/// Trains from scratch; returns the best-validation parameters.
pub fn train(
    dataset: &Dataset,
    net: &NetworkConfig,
    config: &TrainConfig,
) -> Result<(ParamStore, LossReport)> {
    let set = TrainingSet::new(dataset, net, config)?;
    let mut state = TrainState::fresh(net, config.seed)?;
    let report = train_epochs(&set, net, config, &mut state, |_, _| Ok(()))?;
    Ok((state.best_params, report))
}

/// Runs epochs `state.epoch + 1 ..= config.epochs`, calling `on_epoch`
/// after each one.
pub fn train_epochs(
    set: &TrainingSet,
    net: &NetworkConfig,
    config: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: impl FnMut(&EpochStats, &TrainState) -> Result<()>,
) -> Result<LossReport> {
    let start = Instant::now();
    let initial_val_loss = mean_triplet_loss(
        &state.params,
        net,
        &set.val_inputs,
        &set.val_triplets,
        config,
    )?;
    if state.epoch == 0 {
        state.best_val_loss = initial_val_loss;
        state.best_params = state.params.clone();
        state.best_epoch = 0;
    }
    let mut epochs = Vec::new();
    let mut flagged_pairs = set.flagged_pairs;
    while state.epoch < config.epochs {
        let epoch = state.epoch + 1;
        let t0 = Instant::now();
        let lr = config.learning_rate_at(epoch - 1);
        let eseed = seed::derive_indexed(config.seed, "epoch", epoch as u64);

        // Augment every training cloud afresh; point order is preserved, so
        // patch indices computed on the clean clouds stay valid.
        let mut inputs = Inputs::new();
        for (id, pc) in &set.prepared {
            let is_train = set.train_pairs.iter().any(|(a, b)| a == id || b == id);
            if !is_train {
                continue;
            }
            let aug = AugmentParams {
                seed: seed::derive(eseed, &format!("augment/{id}")),
                ..config.augment
            };
            let cloud = augment(&pc.cloud, &aug)?;
            inputs.insert(
                id.clone(),
                NetInput::new(&cloud, &absolute_depths(&cloud), net)?,
            );
        }

        let mut order: Vec<usize> = (0..set.train_pairs.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive(eseed, "order")));
        let mut triplets = Vec::new();
        for &k in &order {
            let (a, b) = &set.train_pairs[k];
            let s = sample_triplets(
                &set.prepared[a],
                &set.prepared[b],
                config,
                config.triplets_per_pair,
                seed::derive_indexed(eseed, "pair", k as u64),
            )?;
            flagged_pairs += usize::from(s.flagged && epoch == 1);
            triplets.extend(s.triplets);
        }
        if triplets.is_empty() {
            return Err(Error::invalid("training pairs yield no triplets"));
        }

        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut active = 0;
        for batch in triplets.chunks(config.batch_size) {
            let snapshot = state.params.clone();
            let mut g = Graph::new();
            let p = state.params.bind(&mut g);
            let (losses, weights) = batch_graph(&mut g, &p, net, &inputs, batch, config.margin)?;
            let loss = weighted_batch_loss_graph(&mut g, losses, weights)?;
            // Siamese weight sharing: every cloud in the batch, source or
            // target side, read the same parameter leaves.
            for ((_, t), &v) in snapshot.iter().zip(p.vars()) {
                let same = g
                    .value(v)
                    .values()
                    .iter()
                    .zip(t.values())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                assert!(same, "source and target branches must share parameters");
            }
            active += g
                .value(losses)
                .values()
                .iter()
                .filter(|&&l| l > 0.0)
                .count();
            loss_sum += g.value(loss).item();
            batches += 1;
            g.backward(loss)?;
            let grads = p.grads(&g);
            adam_step(&mut state.params, &grads, &mut state.adam, lr);
        }

        let val_loss = mean_triplet_loss(
            &state.params,
            net,
            &set.val_inputs,
            &set.val_triplets,
            config,
        )?;
        state.epoch = epoch;
        if val_loss < state.best_val_loss {
            state.best_val_loss = val_loss;
            state.best_params = state.params.clone();
            state.best_epoch = epoch;
        }
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / batches as f64,
            val_loss,
            active_fraction: active as f64 / triplets.len() as f64,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&stats, state)?;
        epochs.push(stats);
    }
    Ok(LossReport {
        initial_val_loss,
        epochs,
        best_epoch: state.best_epoch,
        best_val_loss: state.best_val_loss,
        flagged_pairs,
        seconds: start.elapsed().as_secs_f64(),
    })
}
