//! Independent reference implementations used to check the library.
#![allow(dead_code)]

use ndarray::{Array2, Array3};

use bevlift::object_bev::BevObject;

/// Minimum assignment cost over every injective map from the smaller side
/// into the larger one. Costs are summed in ascending row order.
pub fn brute_force_assignment(cost: &Array2<f64>) -> f64 {
    let (n, m) = cost.dim();
    let k = n.min(m);
    let mut best = f64::INFINITY;
    let mut used = vec![false; m];
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    fn go(
        row: usize,
        cost: &Array2<f64>,
        k: usize,
        used: &mut [bool],
        chosen: &mut Vec<(usize, usize)>,
        best: &mut f64,
    ) {
        let (n, m) = cost.dim();
        if chosen.len() == k {
            let mut total = 0.0;
            for &(r, c) in chosen.iter() {
                total += cost[(r, c)];
            }
            if total < *best {
                *best = total;
            }
            return;
        }
        if row == n || n - row < k - chosen.len() {
            return;
        }
        for c in 0..m {
            if !used[c] {
                used[c] = true;
                chosen.push((row, c));
                go(row + 1, cost, k, used, chosen, best);
                chosen.pop();
                used[c] = false;
            }
        }
        // leave this row unassigned
        go(row + 1, cost, k, used, chosen, best);
    }
    if k == 0 {
        return 0.0;
    }
    go(0, cost, k, &mut used, &mut chosen, &mut best);
    best
}

/// All injective row-to-column assignments of size min(n, m), as pairs.
pub fn all_assignments(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
    let k = n.min(m);
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut used = vec![false; m];
    fn go(
        row: usize,
        n: usize,
        m: usize,
        k: usize,
        used: &mut [bool],
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        if row == n || n - row < k - cur.len() {
            return;
        }
        for c in 0..m {
            if !used[c] {
                used[c] = true;
                cur.push((row, c));
                go(row + 1, n, m, k, used, cur, out);
                cur.pop();
                used[c] = false;
            }
        }
        go(row + 1, n, m, k, used, cur, out);
    }
    go(0, n, m, k, &mut used, &mut cur, &mut out);
    out
}

fn inside_rect(o: &BevObject, x: f64, y: f64) -> bool {
    let (s, c) = o.yaw.sin_cos();
    let (dx, dy) = (x - o.x, y - o.y);
    let lx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    lx.abs() <= 0.5 * o.length && ly.abs() <= 0.5 * o.width
}

/// IoU by point sampling on an `n x n` lattice of cell midpoints over the
/// joint bounding box.
pub fn raster_iou(a: &BevObject, b: &BevObject, n: usize) -> f64 {
    let ra = 0.5 * a.length.hypot(a.width);
    let rb = 0.5 * b.length.hypot(b.width);
    let x0 = (a.x - ra).min(b.x - rb);
    let x1 = (a.x + ra).max(b.x + rb);
    let y0 = (a.y - ra).min(b.y - rb);
    let y1 = (a.y + ra).max(b.y + rb);
    let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..n {
        let x = x0 + (i as f64 + 0.5) * dx;
        for j in 0..n {
            let y = y0 + (j as f64 + 0.5) * dy;
            let (ia, ib) = (inside_rect(a, x, y), inside_rect(b, x, y));
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Focal loss written from its textbook form, `-alpha (1-p)^gamma ln p`,
/// averaged over cells.
pub fn focal_value(probs: &Array3<f64>, target: &Array2<u32>, gamma: f64, alpha: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0.0;
    for ((i, j), &t) in target.indexed_iter() {
        let p = probs[(i, j, t as usize)].clamp(1e-7, 1.0);
        sum += -alpha * (1.0 - p).powf(gamma) * p.ln();
        count += 1.0;
    }
    sum / count
}

fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        r * r / (2.0 * delta)
    } else {
        r.abs() - delta / 2.0
    }
}

fn nll(p: f64) -> f64 {
    -(p.max(1e-7)).ln()
}

/// Matching by exhaustive search over center-distance assignments, then
/// gated.
pub fn detection_pairs(preds: &[BevObject], targets: &[BevObject], gate: f64) -> Vec<(usize, usize)> {
    let dist = |p: &BevObject, t: &BevObject| (p.x - t.x).hypot(p.y - t.y);
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    for a in all_assignments(preds.len(), targets.len()) {
        let c: f64 = a.iter().map(|&(i, j)| dist(&preds[i], &targets[j])).sum();
        if best.as_ref().is_none_or(|(b, _)| c < *b) {
            best = Some((c, a));
        }
    }
    best.map(|(_, a)| a)
        .unwrap_or_default()
        .into_iter()
        .filter(|&(i, j)| dist(&preds[i], &targets[j]) <= gate)
        .collect()
}

pub fn detection_value(preds: &[BevObject], targets: &[BevObject], gate: f64, classes: u32, miss: f64) -> f64 {
    let pairs = detection_pairs(preds, targets, gate);
    let mut value = 0.0;
    if !pairs.is_empty() {
        let mut s = 0.0;
        for &(i, j) in &pairs {
            let (p, t) = (&preds[i], &targets[j]);
            s += huber(p.x - t.x, 1.0) + huber(p.y - t.y, 1.0);
            let class_prob = if p.class_id == t.class_id {
                p.confidence
            } else {
                (1.0 - p.confidence) / (classes - 1) as f64
            };
            s += nll(class_prob) + nll(p.confidence);
        }
        value += s / pairs.len() as f64;
    }
    for (i, p) in preds.iter().enumerate() {
        if !pairs.iter().any(|&(pi, _)| pi == i) {
            value += nll(1.0 - p.confidence);
        }
    }
    for j in 0..targets.len() {
        if !pairs.iter().any(|&(_, tj)| tj == j) {
            value += miss;
        }
    }
    value
}

pub fn depth_l1_value(pred: &Array2<f64>, target: &Array2<f64>, valid: &Array2<bool>) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for ((idx, &p), &ok) in pred.indexed_iter().zip(valid.iter()) {
        if ok {
            s += (p - target[idx]).abs();
            n += 1.0;
        }
    }
    s / n
}

pub fn consistency_value(dist: &Array3<f64>, mono: &Array2<f64>, centers: &[f64]) -> f64 {
    let (h, w, d) = dist.dim();
    let mut s = 0.0;
    for i in 0..h {
        for j in 0..w {
            let e: f64 = (0..d).map(|k| dist[(i, j, k)] * centers[k]).sum();
            s += (e - mono[(i, j)]).abs();
        }
    }
    s / (h * w) as f64
}

pub fn reg_value(params: &[f64]) -> f64 {
    params.iter().map(|p| p * p).sum::<f64>() / 2.0
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
