//! Assignment, matching and detection / segmentation metrics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::classes;
use crate::error::{invalid, Result};
use crate::ipm::SemanticBevMap;
use crate::object_bev::{footprint_corners, BevObject};

pub const DEFAULT_GATE: f64 = 2.0;
pub const AP_THRESHOLDS: [f64; 3] = [0.5, 0.75, 0.9];

/// Rectangular matrix of non-negative, finite assignment costs, indexed
/// `(pred, target)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(costs: Array2<f64>) -> Result<Self> {
        if costs.iter().any(|c| c.is_nan()) {
            return invalid("cost matrix contains NaN");
        }
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return invalid("costs must be finite and non-negative");
        }
        Ok(CostMatrix(costs))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return invalid("ragged cost matrix");
        }
        let flat = rows.iter().flatten().copied().collect();
        CostMatrix::new(Array2::from_shape_vec((n, m), flat).expect("shape checked"))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the assigned costs, accumulated in row order.
    pub total: f64,
}

/// Minimum-cost assignment of `min(rows, cols)` pairs, O(n^2 m) with row and
/// column potentials (shortest augmenting paths).
pub fn hungarian(cost: &CostMatrix) -> Assignment {
    let (n, m) = cost.dim();
    if n == 0 || m == 0 {
        return Assignment {
            pairs: Vec::new(),
            total: 0.0,
        };
    }
    let mut pairs = if n <= m {
        solve_rows_le_cols(n, m, |i, j| cost.get(i, j))
    } else {
        solve_rows_le_cols(m, n, |i, j| cost.get(j, i))
            .into_iter()
            .map(|(i, j)| (j, i))
            .collect()
    };
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| cost.get(i, j)).sum();
    Assignment { pairs, total }
}

fn solve_rows_le_cols(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    // 1-based, column 0 is the virtual source
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: usize,
    pub target: usize,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_targets: Vec<usize>,
}

/// Hungarian matching on planar center distance. Assigned pairs farther
/// apart than `gate` are split back into unmatched entries.
pub fn match_objects(preds: &[BevObject], targets: &[BevObject], gate: f64) -> Result<MatchResult> {
    if !(gate > 0.0) {
        return invalid(format!("gate must be positive, got {gate}"));
    }
    let costs = Array2::from_shape_fn((preds.len(), targets.len()), |(i, j)| {
        preds[i].distance_to(&targets[j])
    });
    let assignment = hungarian(&CostMatrix::new(costs.clone())?);
    let mut matched_pred = vec![false; preds.len()];
    let mut matched_target = vec![false; targets.len()];
    let mut pairs = Vec::new();
    for (i, j) in assignment.pairs {
        let cost = costs[(i, j)];
        if cost <= gate {
            matched_pred[i] = true;
            matched_target[j] = true;
            pairs.push(MatchPair {
                pred: i,
                target: j,
                cost,
            });
        }
    }
    let unmatched = |flags: &[bool]| flags.iter().enumerate().filter(|(_, m)| !**m).map(|(i, _)| i).collect();
    Ok(MatchResult {
        pairs,
        unmatched_preds: unmatched(&matched_pred),
        unmatched_targets: unmatched(&matched_target),
    })
}

/// Mean matched center distance; `None` when nothing matched.
pub fn position_error(m: &MatchResult) -> Option<f64> {
    if m.pairs.is_empty() {
        return None;
    }
    Some(m.pairs.iter().map(|p| p.cost).sum::<f64>() / m.pairs.len() as f64)
}

pub fn recall(m: &MatchResult, n_targets: usize) -> Option<f64> {
    (n_targets > 0).then(|| m.pairs.len() as f64 / n_targets as f64)
}

pub fn segmentation_iou(pred: &SemanticBevMap, gt: &SemanticBevMap, class_id: u32) -> Result<Option<f64>> {
    segmentation_iou_in(pred, gt, class_id, None)
}

/// Class IoU restricted to the cells where `region` is true.
pub fn segmentation_iou_in(
    pred: &SemanticBevMap,
    gt: &SemanticBevMap,
    class_id: u32,
    region: Option<&Array2<bool>>,
) -> Result<Option<f64>> {
    if pred.grid != gt.grid || pred.labels.dim() != gt.labels.dim() {
        return invalid("prediction and ground truth use different grids");
    }
    if let Some(r) = region {
        if r.dim() != gt.labels.dim() {
            return invalid("evaluation region does not match the grid");
        }
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for ((cell, &p), &g) in pred.labels.indexed_iter().zip(gt.labels.iter()) {
        if region.is_some_and(|r| !r[cell]) {
            continue;
        }
        let (p, g) = (p == class_id, g == class_id);
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok((union > 0).then(|| inter as f64 / union as f64))
}

type Polygon = Vec<(f64, f64)>;

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    0.5 * twice.abs()
}

/// Sutherland-Hodgman clip of `subject` against a convex counter-clockwise
/// `clip` polygon.
fn clip_polygon(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Polygon {
    let mut output: Polygon = subject.to_vec();
    for e in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[e], clip[(e + 1) % clip.len()]);
        let side = |p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let input = std::mem::take(&mut output);
        for i in 0..input.len() {
            let (cur, prev) = (input[i], input[(i + input.len() - 1) % input.len()]);
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect(p: (f64, f64), q: (f64, f64), sp: f64, sq: f64) -> (f64, f64) {
    let t = sp / (sp - sq);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

/// Intersection over union of two yaw-rotated footprints.
pub fn rotated_rect_iou(a: &BevObject, b: &BevObject) -> Result<f64> {
    for o in [a, b] {
        if !(o.length > 0.0 && o.width > 0.0) {
            return invalid(format!("degenerate rectangle {}x{}", o.length, o.width));
        }
    }
    let (pa, pb) = (footprint_corners(a), footprint_corners(b));
    let inter = polygon_area(&clip_polygon(&pa, &pb));
    let union = a.length * a.width + b.length * b.width - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Confidence-ranked greedy matching on rotated-footprint IoU with a
/// 101-point interpolated precision/recall area. `None` when there is
/// nothing to score at all.
pub fn average_precision(preds: &[BevObject], targets: &[BevObject], iou_threshold: f64) -> Result<Option<f64>> {
    if preds.is_empty() && targets.is_empty() {
        return Ok(None);
    }
    if targets.is_empty() || preds.is_empty() {
        return Ok(Some(0.0));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].confidence.total_cmp(&preds[i].confidence));
    let mut used = vec![false; targets.len()];
    let mut curve = Vec::with_capacity(preds.len());
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, t) in targets.iter().enumerate() {
            if used[j] {
                continue;
            }
            let iou = rotated_rect_iou(&preds[i], t)?;
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            tp += 1;
        }
        curve.push((tp as f64 / targets.len() as f64, tp as f64 / (rank + 1) as f64));
    }
    let mut ap = 0.0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        let p = curve
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, prec)| *prec)
            .fold(0.0, f64::max);
        ap += p;
    }
    Ok(Some(ap / 101.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetric {
    pub class: String,
    /// Percent, `None` when undefined.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApMetric {
    pub class: String,
    pub threshold: f64,
    pub value: Option<f64>,
}

/// Segmentation IoU, AP and recall in percent; position error in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seg_iou: Vec<ClassMetric>,
    pub ap: Vec<ApMetric>,
    pub mean_position_error: Option<f64>,
    pub recall: Vec<ClassMetric>,
}

/// One CSV line: `metric,class,threshold,value`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub class: Option<String>,
    pub threshold: Option<f64>,
    pub value: Option<f64>,
}

impl MetricsReport {
    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        for m in &self.seg_iou {
            rows.push(MetricRow {
                metric: "seg_iou".into(),
                class: Some(m.class.clone()),
                threshold: None,
                value: m.value,
            });
        }
        for m in &self.ap {
            rows.push(MetricRow {
                metric: "ap".into(),
                class: Some(m.class.clone()),
                threshold: Some(m.threshold),
                value: m.value,
            });
        }
        rows.push(MetricRow {
            metric: "mean_position_error".into(),
            class: None,
            threshold: None,
            value: self.mean_position_error,
        });
        for m in &self.recall {
            rows.push(MetricRow {
                metric: "recall".into(),
                class: Some(m.class.clone()),
                threshold: None,
                value: m.value,
            });
        }
        rows
    }

    pub fn from_rows(rows: &[MetricRow]) -> Result<Self> {
        let mut report = MetricsReport {
            seg_iou: Vec::new(),
            ap: Vec::new(),
            mean_position_error: None,
            recall: Vec::new(),
        };
        for row in rows {
            let class = || {
                row.class
                    .clone()
                    .ok_or_else(|| crate::Error::InvalidArgument(format!("{} row without class", row.metric)))
            };
            match row.metric.as_str() {
                "seg_iou" => report.seg_iou.push(ClassMetric { class: class()?, value: row.value }),
                "recall" => report.recall.push(ClassMetric { class: class()?, value: row.value }),
                "ap" => report.ap.push(ApMetric {
                    class: class()?,
                    threshold: row.threshold.ok_or_else(|| {
                        crate::Error::InvalidArgument("ap row without threshold".into())
                    })?,
                    value: row.value,
                }),
                "mean_position_error" => report.mean_position_error = row.value,
                other => return invalid(format!("unknown metric {other:?}")),
            }
        }
        Ok(report)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<std::result::Result<Vec<MetricRow>, _>>()?;
        MetricsReport::from_rows(&rows)
    }

    pub fn seg_iou_for(&self, class: &str) -> Option<f64> {
        self.seg_iou.iter().find(|m| m.class == class).and_then(|m| m.value)
    }

    pub fn recall_for(&self, class: &str) -> Option<f64> {
        self.recall.iter().find(|m| m.class == class).and_then(|m| m.value)
    }

    pub fn ap_for(&self, class: &str, threshold: f64) -> Option<f64> {
        self.ap
            .iter()
            .find(|m| m.class == class && m.threshold == threshold)
            .and_then(|m| m.value)
    }
}

/// Full metric suite. Objects are matched per class; segmentation IoU is
/// computed inside `region` when given.
pub fn evaluate(
    pred_labels: &SemanticBevMap,
    pred_objects: &[BevObject],
    gt_labels: &SemanticBevMap,
    gt_objects: &[BevObject],
    gate: f64,
    region: Option<&Array2<bool>>,
) -> Result<MetricsReport> {
    let pct = |v: Option<f64>| v.map(|x| 100.0 * x);
    let mut seg_iou = Vec::new();
    for class_id in 1..classes::CLASS_COUNT {
        seg_iou.push(ClassMetric {
            class: classes::name(class_id).into(),
            value: pct(segmentation_iou_in(pred_labels, gt_labels, class_id, region)?),
        });
    }
    let mut ap = Vec::new();
    let mut recalls = Vec::new();
    let mut all_pairs = MatchResult::default();
    for class_id in classes::OBJECT_CLASSES {
        let name = classes::name(class_id).to_string();
        let p: Vec<BevObject> = pred_objects.iter().filter(|o| o.class_id == class_id).cloned().collect();
        let t: Vec<BevObject> = gt_objects.iter().filter(|o| o.class_id == class_id).cloned().collect();
        for threshold in AP_THRESHOLDS {
            ap.push(ApMetric {
                class: name.clone(),
                threshold,
                value: pct(average_precision(&p, &t, threshold)?),
            });
        }
        let m = match_objects(&p, &t, gate)?;
        recalls.push(ClassMetric {
            class: name,
            value: pct(recall(&m, t.len())),
        });
        all_pairs.pairs.extend(m.pairs);
    }
    Ok(MetricsReport {
        seg_iou,
        ap,
        mean_position_error: position_error(&all_pairs),
        recall: recalls,
    })
}
