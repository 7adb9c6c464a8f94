//! The multi-component BEV training objective. Every component returns its
//! value together with the analytic gradient with respect to its prediction
//! inputs.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::evaluation::match_objects;
use crate::geometry::DepthBinning;
use crate::lift::{expected_depth, DepthDistribution};
use crate::object_bev::BevObject;

/// Probabilities are clamped from below before taking logs.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub seg: f64,
    pub obj: f64,
    pub depth: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            seg: 1.0,
            obj: 2.0,
            depth: 0.5,
            reg: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.seg, self.obj, self.depth, self.reg]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return invalid("loss weights must be finite and non-negative");
        }
        Ok(())
    }

    /// Weighted total; the depth-consistency term shares the depth weight.
    pub fn combine(&self, seg: f64, obj: f64, depth: f64, consistency: f64, reg: f64) -> f64 {
        self.seg * seg + self.obj * obj + self.depth * (depth + consistency) + self.reg * reg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Loss<G> {
    pub value: f64,
    pub gradient: G,
}

/// Focal segmentation loss averaged over cells. `pred_probs` is
/// `(nx, ny, K)` with rows summing to one; the gradient is taken with
/// respect to every entry of `pred_probs`.
pub fn focal_loss(
    pred_probs: &Array3<f64>,
    target: &Array2<u32>,
    gamma: f64,
    alpha: f64,
) -> Result<Loss<Array3<f64>>> {
    let (nx, ny, k) = pred_probs.dim();
    if (nx, ny) != target.dim() {
        return invalid(format!(
            "prediction cells {:?} do not match target {:?}",
            (nx, ny),
            target.dim()
        ));
    }
    if !(gamma >= 0.0 && alpha >= 0.0) {
        return invalid("focal parameters must be non-negative");
    }
    for row in pred_probs.lanes(Axis(2)) {
        let s = row.sum();
        if !((s - 1.0).abs() <= 1e-6) || row.iter().any(|p| !(*p >= 0.0)) {
            return invalid(format!("class probabilities must be a distribution (sum {s})"));
        }
    }
    let n = (nx * ny) as f64;
    let mut gradient = Array3::zeros((nx, ny, k));
    let mut total = 0.0;
    for ((i, j), &t) in target.indexed_iter() {
        let t = t as usize;
        if t >= k {
            return invalid(format!("target class {t} out of range for {k} classes"));
        }
        let raw = pred_probs[(i, j, t)];
        let p = raw.clamp(PROB_FLOOR, 1.0);
        if p >= 1.0 {
            continue;
        }
        let q = 1.0 - p;
        let lp = p.ln();
        total += -alpha * q.powf(gamma) * lp;
        if raw > PROB_FLOOR {
            let dq = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
            gradient[(i, j, t)] = -alpha * (q.powf(gamma) / p - dq * lp) / n;
        }
    }
    Ok(Loss {
        value: total / n,
        gradient,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionLossConfig {
    /// Matching gate in meters.
    pub gate: f64,
    /// Smooth-L1 transition point in meters.
    pub delta: f64,
    /// Number of class ids; confidence mass not on the predicted class is
    /// spread evenly over the other `classes - 1`.
    pub classes: u32,
    /// Penalty per target left without a prediction.
    pub miss_penalty: f64,
}

impl Default for DetectionLossConfig {
    fn default() -> Self {
        DetectionLossConfig {
            gate: crate::evaluation::DEFAULT_GATE,
            delta: 1.0,
            classes: crate::classes::CLASS_COUNT,
            miss_penalty: 1.0,
        }
    }
}

/// Gradient of the detection loss per prediction.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DetectionGradient {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub confidence: Vec<f64>,
}

impl DetectionGradient {
    fn zeros(n: usize) -> Self {
        DetectionGradient {
            x: vec![0.0; n],
            y: vec![0.0; n],
            confidence: vec![0.0; n],
        }
    }

    fn scaled(&self, s: f64) -> Self {
        let f = |v: &Vec<f64>| v.iter().map(|g| s * g).collect();
        DetectionGradient {
            x: f(&self.x),
            y: f(&self.y),
            confidence: f(&self.confidence),
        }
    }
}

fn smooth_l1(r: f64, delta: f64) -> (f64, f64) {
    if r.abs() < delta {
        (0.5 * r * r / delta, r / delta)
    } else {
        (r.abs() - 0.5 * delta, r.signum())
    }
}

/// `-ln(max(p, floor))` and its derivative in `p`.
fn neg_log(p: f64) -> (f64, f64) {
    if p > PROB_FLOOR {
        (-p.ln(), -1.0 / p)
    } else {
        (-PROB_FLOOR.ln(), 0.0)
    }
}

/// Existence, class and position loss over a Hungarian matching.
///
/// Matched pairs contribute (averaged over pairs) smooth-L1 on the x and y
/// residuals, class cross-entropy and `-ln(confidence)`; unmatched
/// predictions add `-ln(1 - confidence)` and unmatched targets add the miss
/// penalty. The matching is held fixed when differentiating.
pub fn detection_loss(
    preds: &[BevObject],
    targets: &[BevObject],
    config: &DetectionLossConfig,
) -> Result<Loss<DetectionGradient>> {
    if config.classes < 2 {
        return invalid("detection loss needs at least two classes");
    }
    if !(config.delta > 0.0) {
        return invalid("smooth-L1 delta must be positive");
    }
    let m = match_objects(preds, targets, config.gate)?;
    let mut grad = DetectionGradient::zeros(preds.len());
    let mut value = 0.0;
    if !m.pairs.is_empty() {
        let scale = 1.0 / m.pairs.len() as f64;
        let mut matched = 0.0;
        for pair in &m.pairs {
            let (p, t) = (&preds[pair.pred], &targets[pair.target]);
            let (lx, gx) = smooth_l1(p.x - t.x, config.delta);
            let (ly, gy) = smooth_l1(p.y - t.y, config.delta);
            let c = p.confidence;
            let (ce, dce) = if p.class_id == t.class_id {
                neg_log(c)
            } else {
                let others = (config.classes - 1) as f64;
                let (v, d) = neg_log((1.0 - c) / others);
                (v, -d / others)
            };
            let (exist, dexist) = neg_log(c);
            matched += lx + ly + ce + exist;
            grad.x[pair.pred] = scale * gx;
            grad.y[pair.pred] = scale * gy;
            grad.confidence[pair.pred] = scale * (dce + dexist);
        }
        value += scale * matched;
    }
    for &i in &m.unmatched_preds {
        let (v, d) = neg_log(1.0 - preds[i].confidence);
        value += v;
        grad.confidence[i] = -d;
    }
    value += config.miss_penalty * m.unmatched_targets.len() as f64;
    Ok(Loss {
        value,
        gradient: grad,
    })
}

/// Mean absolute depth error over valid cells; the subgradient is 0 at ties.
pub fn depth_l1_loss(
    pred_depth: &Array2<f64>,
    target_depth: &Array2<f64>,
    valid: &Array2<bool>,
) -> Result<Loss<Array2<f64>>> {
    if pred_depth.dim() != target_depth.dim() || pred_depth.dim() != valid.dim() {
        return invalid("depth prediction, target and mask differ in shape");
    }
    let n = valid.iter().filter(|v| **v).count();
    if n == 0 {
        return invalid("depth loss needs at least one valid cell");
    }
    let inv = 1.0 / n as f64;
    let mut gradient = Array2::zeros(pred_depth.dim());
    let mut total = 0.0;
    for (cell, &ok) in valid.indexed_iter() {
        if !ok {
            continue;
        }
        let r = pred_depth[cell] - target_depth[cell];
        total += r.abs();
        gradient[cell] = inv * sign(r);
    }
    Ok(Loss {
        value: total * inv,
        gradient,
    })
}

/// Mean absolute gap between each cell's expected depth and a monocular
/// depth estimate. Differentiated with respect to the distribution entries.
pub fn depth_consistency_loss(
    dist: &DepthDistribution,
    mono_depth: &Array2<f64>,
    bins: &DepthBinning,
) -> Result<Loss<Array3<f64>>> {
    if dist.cells() != mono_depth.dim() {
        return invalid(format!(
            "distribution cells {:?} do not match depth map {:?}",
            dist.cells(),
            mono_depth.dim()
        ));
    }
    if mono_depth.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return invalid("monocular depths must be positive and finite");
    }
    let expected = expected_depth(dist, bins)?;
    let (h, w) = dist.cells();
    let inv = 1.0 / (h * w) as f64;
    let mut gradient = Array3::zeros(dist.values().dim());
    let mut total = 0.0;
    for ((i, j), &e) in expected.indexed_iter() {
        let r = e - mono_depth[(i, j)];
        total += r.abs();
        let s = inv * sign(r);
        for (k, &c) in bins.centers().iter().enumerate() {
            gradient[(i, j, k)] = s * c;
        }
    }
    Ok(Loss {
        value: total * inv,
        gradient,
    })
}

/// Half squared L2 norm.
pub fn l2_regularization(params: &[f64]) -> Loss<Vec<f64>> {
    Loss {
        value: 0.5 * params.iter().map(|p| p * p).sum::<f64>(),
        gradient: params.to_vec(),
    }
}

fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;
pub const DEFAULT_FOCAL_ALPHA: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct SegmentationInputs {
    pub pred_probs: Array3<f64>,
    pub target: Array2<u32>,
    pub gamma: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct ObjectInputs {
    pub preds: Vec<BevObject>,
    pub targets: Vec<BevObject>,
    pub config: DetectionLossConfig,
}

#[derive(Clone, Debug)]
pub struct DepthInputs {
    pub pred: Array2<f64>,
    pub target: Array2<f64>,
    pub valid: Array2<bool>,
}

#[derive(Clone, Debug)]
pub struct ConsistencyInputs {
    pub dist: DepthDistribution,
    pub mono_depth: Array2<f64>,
    pub bins: DepthBinning,
}

#[derive(Clone, Debug)]
pub struct LossInputs {
    pub seg: SegmentationInputs,
    pub objects: ObjectInputs,
    pub depth: DepthInputs,
    pub consistency: ConsistencyInputs,
    pub params: Vec<f64>,
}

/// Component gradients, each already multiplied by its weight.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradients {
    pub seg: Array3<f64>,
    pub obj: DetectionGradient,
    pub depth: Array2<f64>,
    pub consistency: Array3<f64>,
    pub reg: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub seg: f64,
    pub obj: f64,
    pub depth: f64,
    pub consistency: f64,
    pub reg: f64,
    pub total: f64,
    pub gradients: LossGradients,
}

pub fn bev_loss(inputs: &LossInputs, weights: &LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    let s = &inputs.seg;
    let seg = focal_loss(&s.pred_probs, &s.target, s.gamma, s.alpha)?;
    let o = &inputs.objects;
    let obj = detection_loss(&o.preds, &o.targets, &o.config)?;
    let d = &inputs.depth;
    let depth = depth_l1_loss(&d.pred, &d.target, &d.valid)?;
    let c = &inputs.consistency;
    let consistency = depth_consistency_loss(&c.dist, &c.mono_depth, &c.bins)?;
    let reg = l2_regularization(&inputs.params);
    Ok(LossBreakdown {
        seg: seg.value,
        obj: obj.value,
        depth: depth.value,
        consistency: consistency.value,
        reg: reg.value,
        total: weights.combine(seg.value, obj.value, depth.value, consistency.value, reg.value),
        gradients: LossGradients {
            seg: seg.gradient * weights.seg,
            obj: obj.gradient.scaled(weights.obj),
            depth: depth.gradient * weights.depth,
            consistency: consistency.gradient * weights.depth,
            reg: reg.gradient.iter().map(|g| weights.reg * g).collect(),
        },
    })
}
