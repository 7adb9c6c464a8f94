//! Central finite-difference checks of the analytic loss gradients on
//! seeded random instances.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bev_loss::{
    bev_loss, depth_consistency_loss, depth_l1_loss, detection_loss, focal_loss, l2_regularization,
    ConsistencyInputs, DepthInputs, DetectionLossConfig, LossInputs, LossWeights, ObjectInputs, SegmentationInputs,
    DEFAULT_FOCAL_ALPHA, DEFAULT_FOCAL_GAMMA, PROB_FLOOR,
};
use crate::classes;
use crate::error::Result;
use crate::evaluation::match_objects;
use crate::geometry::DepthBinning;
use crate::lift::DepthDistribution;
use crate::object_bev::BevObject;

/// Relative errors are measured against `max(|analytic|, |numeric|, this)`.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub component: String,
    pub instances: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Default)]
struct Tally {
    checked: usize,
    skipped: usize,
    worst: f64,
}

impl Tally {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        self.worst = self.worst.max(relative_error(analytic, numeric));
    }

    fn row(self, component: &str, instances: usize) -> GradCheckRow {
        GradCheckRow {
            component: component.to_string(),
            instances,
            checked: self.checked,
            skipped: self.skipped,
            max_rel_error: self.worst,
        }
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn random_probs(rng: &mut ChaCha8Rng, nx: usize, ny: usize, k: usize) -> Array3<f64> {
    let mut out = Array3::zeros((nx, ny, k));
    for i in 0..nx {
        for j in 0..ny {
            for (c, p) in random_simplex(rng, k).into_iter().enumerate() {
                out[(i, j, c)] = p;
            }
        }
    }
    out
}

pub fn random_objects(rng: &mut ChaCha8Rng, n: usize) -> Vec<BevObject> {
    (0..n)
        .map(|_| BevObject {
            x: rng.gen_range(-20.0..20.0),
            y: rng.gen_range(-20.0..20.0),
            yaw: 0.0,
            length: 4.5,
            width: 2.0,
            class_id: classes::OBJECT_CLASSES[rng.gen_range(0..classes::OBJECT_CLASSES.len())],
            confidence: rng.gen_range(0.05..0.95),
        })
        .collect()
}

/// Predictions scattered around (a subset of) the targets, plus clutter.
pub fn random_detection_instance(rng: &mut ChaCha8Rng) -> (Vec<BevObject>, Vec<BevObject>) {
    let n = rng.gen_range(1..6);
    let targets = random_objects(rng, n);
    let mut preds = Vec::new();
    for t in &targets {
        if rng.gen_bool(0.8) {
            let mut p = t.clone();
            p.x += rng.gen_range(-1.5..1.5);
            p.y += rng.gen_range(-1.5..1.5);
            p.confidence = rng.gen_range(0.05..0.95);
            if rng.gen_bool(0.2) {
                p.class_id = classes::OBJECT_CLASSES[rng.gen_range(0..classes::OBJECT_CLASSES.len())];
            }
            preds.push(p);
        }
    }
    let clutter = rng.gen_range(0..3);
    preds.extend(random_objects(rng, clutter));
    (preds, targets)
}

fn check_focal(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let (nx, ny, k) = (rng.gen_range(1..5), rng.gen_range(1..5), classes::CLASS_COUNT as usize);
    let probs = random_probs(rng, nx, ny, k);
    let target = Array2::from_shape_fn((nx, ny), |_| rng.gen_range(0..k as u32));
    let analytic = focal_loss(&probs, &target, DEFAULT_FOCAL_GAMMA, DEFAULT_FOCAL_ALPHA)?.gradient;
    // small enough that the perturbed rows still pass the sum-to-one check
    let h = 1e-7;
    for (idx, &p) in probs.indexed_iter() {
        if p - h <= PROB_FLOOR || p + h >= 1.0 {
            tally.skipped += 1;
            continue;
        }
        let eval = |v: f64| {
            let mut q = probs.clone();
            q[idx] = v;
            focal_loss(&q, &target, DEFAULT_FOCAL_GAMMA, DEFAULT_FOCAL_ALPHA).map(|l| l.value)
        };
        let numeric = (eval(p + h)? - eval(p - h)?) / (2.0 * h);
        tally.record(analytic[idx], numeric);
    }
    Ok(())
}

fn check_detection(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let cfg = DetectionLossConfig::default();
    let (preds, targets) = random_detection_instance(rng);
    let base = match_objects(&preds, &targets, cfg.gate)?;
    let grad = detection_loss(&preds, &targets, &cfg)?.gradient;
    let h = 1e-6;
    for i in 0..preds.len() {
        for field in 0..3 {
            let get = |o: &BevObject| [o.x, o.y, o.confidence][field];
            let set = |o: &mut BevObject, v: f64| match field {
                0 => o.x = v,
                1 => o.y = v,
                _ => o.confidence = v,
            };
            let mut lo = preds.clone();
            let mut hi = preds.clone();
            set(&mut lo[i], get(&preds[i]) - h);
            set(&mut hi[i], get(&preds[i]) + h);
            // a perturbation that changes the matching crosses a kink
            let stable = [&lo, &hi]
                .iter()
                .all(|p| match_objects(p, &targets, cfg.gate).map(|m| m.pairs.iter().map(|q| (q.pred, q.target)).eq(base.pairs.iter().map(|q| (q.pred, q.target)))).unwrap_or(false));
            if !stable {
                tally.skipped += 1;
                continue;
            }
            let numeric = (detection_loss(&hi, &targets, &cfg)?.value - detection_loss(&lo, &targets, &cfg)?.value) / (2.0 * h);
            let analytic = [grad.x[i], grad.y[i], grad.confidence[i]][field];
            tally.record(analytic, numeric);
        }
    }
    Ok(())
}

fn check_depth(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let (h_cells, w_cells) = (rng.gen_range(1..6), rng.gen_range(1..6));
    let pred = Array2::from_shape_fn((h_cells, w_cells), |_| rng.gen_range(1.0..60.0));
    let target = Array2::from_shape_fn((h_cells, w_cells), |_| rng.gen_range(1.0..60.0));
    let mut valid = Array2::from_shape_fn((h_cells, w_cells), |_| rng.gen_bool(0.8));
    valid[(0, 0)] = true;
    let grad = depth_l1_loss(&pred, &target, &valid)?.gradient;
    let h = 1e-6;
    for (idx, &p) in pred.indexed_iter() {
        if (p - target[idx]).abs() < 2.0 * h {
            tally.skipped += 1;
            continue;
        }
        let eval = |v: f64| {
            let mut q = pred.clone();
            q[idx] = v;
            depth_l1_loss(&q, &target, &valid).map(|l| l.value)
        };
        tally.record(grad[idx], (eval(p + h)? - eval(p - h)?) / (2.0 * h));
    }
    Ok(())
}

fn random_distribution(rng: &mut ChaCha8Rng, h_cells: usize, w_cells: usize, bins: usize) -> Result<DepthDistribution> {
    DepthDistribution::new(random_probs(rng, h_cells, w_cells, bins))
}

fn check_consistency(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let bins = DepthBinning::default();
    let (h_cells, w_cells) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let dist = random_distribution(rng, h_cells, w_cells, bins.count())?;
    let mono = Array2::from_shape_fn((h_cells, w_cells), |_| rng.gen_range(1.0..60.0));
    let base = depth_consistency_loss(&dist, &mono, &bins)?;
    let expected = crate::lift::expected_depth(&dist, &bins)?;
    let h = 1e-7;
    for (idx, &p) in dist.values().indexed_iter() {
        let (i, j, _) = idx;
        // the expected depth moves by at most h * d_max; stay off the kink
        if (expected[(i, j)] - mono[(i, j)]).abs() < 2.0 * h * bins.d_max() {
            tally.skipped += 1;
            continue;
        }
        let eval = |v: f64| -> Result<f64> {
            let mut q = dist.values().clone();
            q[idx] = v;
            depth_consistency_loss(&DepthDistribution::new(q)?, &mono, &bins).map(|l| l.value)
        };
        tally.record(base.gradient[idx], (eval(p + h)? - eval(p - h)?) / (2.0 * h));
    }
    Ok(())
}

fn check_reg(rng: &mut ChaCha8Rng, tally: &mut Tally) {
    let params: Vec<f64> = (0..rng.gen_range(1..20)).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let grad = l2_regularization(&params).gradient;
    let h = 1e-6;
    for i in 0..params.len() {
        let eval = |v: f64| {
            let mut q = params.clone();
            q[i] = v;
            l2_regularization(&q).value
        };
        tally.record(grad[i], (eval(params[i] + h) - eval(params[i] - h)) / (2.0 * h));
    }
}

/// A full random loss instance for the weighted-total identity.
pub fn random_loss_inputs(rng: &mut ChaCha8Rng) -> Result<LossInputs> {
    let (nx, ny, k) = (4, 5, classes::CLASS_COUNT as usize);
    let (preds, targets) = random_detection_instance(rng);
    let bins = DepthBinning::default();
    let (h_cells, w_cells) = (3, 4);
    let mut valid = Array2::from_shape_fn((h_cells, w_cells), |_| rng.gen_bool(0.7));
    valid[(0, 0)] = true;
    Ok(LossInputs {
        seg: SegmentationInputs {
            pred_probs: random_probs(rng, nx, ny, k),
            target: Array2::from_shape_fn((nx, ny), |_| rng.gen_range(0..k as u32)),
            gamma: DEFAULT_FOCAL_GAMMA,
            alpha: DEFAULT_FOCAL_ALPHA,
        },
        objects: ObjectInputs {
            preds,
            targets,
            config: DetectionLossConfig::default(),
        },
        depth: DepthInputs {
            pred: Array2::from_shape_fn((h_cells, w_cells), |_| rng.gen_range(1.0..60.0)),
            target: Array2::from_shape_fn((h_cells, w_cells), |_| rng.gen_range(1.0..60.0)),
            valid,
        },
        consistency: ConsistencyInputs {
            dist: random_distribution(rng, h_cells, w_cells, bins.count())?,
            mono_depth: Array2::from_shape_fn((h_cells, w_cells), |_| rng.gen_range(1.0..60.0)),
            bins,
        },
        params: (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    })
}

/// Checks every loss component on `instances` seeded instances. The
/// `total` row reports the largest absolute gap between the weighted total
/// and the weighted sum of components recomputed here.
pub fn grad_check(seed: u64, instances: usize) -> Result<Vec<GradCheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut focal = Tally::default();
    let mut detection = Tally::default();
    let mut depth = Tally::default();
    let mut consistency = Tally::default();
    let mut reg = Tally::default();
    let mut total = Tally::default();
    let weights = LossWeights::default();
    for _ in 0..instances {
        check_focal(&mut rng, &mut focal)?;
        check_detection(&mut rng, &mut detection)?;
        check_depth(&mut rng, &mut depth)?;
        check_consistency(&mut rng, &mut consistency)?;
        check_reg(&mut rng, &mut reg);
        let inputs = random_loss_inputs(&mut rng)?;
        let b = bev_loss(&inputs, &weights)?;
        let expected = weights.seg * b.seg + weights.obj * b.obj + weights.depth * (b.depth + b.consistency) + weights.reg * b.reg;
        total.checked += 1;
        total.worst = total.worst.max((b.total - expected).abs());
    }
    Ok(vec![
        focal.row("segmentation", instances),
        detection.row("object", instances),
        depth.row("depth", instances),
        consistency.row("consistency", instances),
        reg.row("regularization", instances),
        total.row("total", instances),
    ])
}
