//! Depth distributions and depth-weighted feature lifting.

use ndarray::{Array2, Array3, Array4, ArrayView1, Axis};

use crate::error::{invalid, Result};
use crate::geometry::DepthBinning;

/// Per-cell semantic feature vectors, shape `(h_cells, w_cells, channels)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    values: Array3<f64>,
}

impl FeatureMap {
    pub const DEFAULT_CHANNELS: usize = 64;

    pub fn new(values: Array3<f64>) -> Result<Self> {
        check_finite(values.iter(), "feature map")?;
        Ok(FeatureMap { values })
    }

    /// One-hot class features from a label grid. Cells where `valid` is
    /// false get an all-zero feature.
    pub fn one_hot(labels: &Array2<u32>, classes: usize, valid: &Array2<bool>) -> Result<Self> {
        if labels.dim() != valid.dim() {
            return invalid("label and validity grids differ in shape");
        }
        let (h, w) = labels.dim();
        let mut values = Array3::zeros((h, w, classes));
        for ((i, j), &label) in labels.indexed_iter() {
            if !valid[(i, j)] {
                continue;
            }
            let c = label as usize;
            if c >= classes {
                return invalid(format!("label {label} out of range for {classes} classes"));
            }
            values[(i, j, c)] = 1.0;
        }
        Ok(FeatureMap { values })
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn channels(&self) -> usize {
        self.values.dim().2
    }

    pub fn cells(&self) -> (usize, usize) {
        let (h, w, _) = self.values.dim();
        (h, w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthLogits {
    values: Array3<f64>,
}

impl DepthLogits {
    pub fn new(values: Array3<f64>) -> Self {
        DepthLogits { values }
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }
}

/// Categorical distribution over depth bins for every feature cell, shape
/// `(h_cells, w_cells, bins)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthDistribution {
    values: Array3<f64>,
}

impl DepthDistribution {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    /// Wraps probabilities after checking they are non-negative and each
    /// cell sums to one.
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if values.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return invalid("depth probabilities must be finite and non-negative");
        }
        for cell in values.lanes(Axis(2)) {
            let s: f64 = cell.sum();
            if (s - 1.0).abs() > Self::SUM_TOLERANCE {
                return invalid(format!("depth distribution cell sums to {s}"));
            }
        }
        Ok(DepthDistribution { values })
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn cells(&self) -> (usize, usize) {
        let (h, w, _) = self.values.dim();
        (h, w)
    }

    pub fn bins(&self) -> usize {
        self.values.dim().2
    }
}

/// Depth-weighted features, shape `(h_cells, w_cells, bins, channels)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedFeatures {
    values: Array4<f64>,
}

impl LiftedFeatures {
    pub fn values(&self) -> &Array4<f64> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.values.dim()
    }
}

/// Numerically stable softmax over the depth axis.
pub fn depth_softmax(logits: &DepthLogits) -> Result<DepthDistribution> {
    check_finite(logits.values.iter(), "depth logits")?;
    let mut values = logits.values.clone();
    for mut cell in values.lanes_mut(Axis(2)) {
        let max = cell.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        cell.mapv_inplace(|v| (v - max).exp());
        let sum = cell.sum();
        cell.mapv_inplace(|v| v / sum);
    }
    Ok(DepthDistribution { values })
}

/// Outer product of each cell's depth distribution with its feature vector.
pub fn lift_outer(dist: &DepthDistribution, feat: &FeatureMap) -> Result<LiftedFeatures> {
    if dist.cells() != feat.cells() {
        return invalid(format!(
            "depth distribution cells {:?} do not match feature cells {:?}",
            dist.cells(),
            feat.cells()
        ));
    }
    let (h, w) = dist.cells();
    let (d, c) = (dist.bins(), feat.channels());
    let values = Array4::from_shape_fn((h, w, d, c), |(i, j, k, ch)| {
        lifted_value(dist.values[(i, j, k)], feat.values[(i, j, ch)])
    });
    Ok(LiftedFeatures { values })
}

/// The single product every lifting path goes through, so dense and
/// streamed lifting agree bit for bit.
#[inline]
pub(crate) fn lifted_value(prob: f64, feature: f64) -> f64 {
    prob * feature
}

/// Soft initialization from a dense depth map: a depth between two bin
/// centers splits its mass linearly between them; depths outside the bin
/// range collapse onto the nearest end bin.
pub fn depth_map_to_distribution(
    depth: &Array2<f64>,
    bins: &DepthBinning,
) -> Result<DepthDistribution> {
    if depth.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return invalid("depth map entries must be positive and finite");
    }
    let (h, w) = depth.dim();
    let centers = bins.centers();
    let mut values = Array3::zeros((h, w, centers.len()));
    for ((i, j), &d) in depth.indexed_iter() {
        let (k, frac) = locate_bin(centers, d);
        values[(i, j, k)] += 1.0 - frac;
        if frac > 0.0 {
            values[(i, j, k + 1)] += frac;
        }
    }
    Ok(DepthDistribution { values })
}

/// Lower bin index and the interpolation fraction toward the next bin.
fn locate_bin(centers: &[f64], d: f64) -> (usize, f64) {
    let last = centers.len() - 1;
    if d <= centers[0] {
        return (0, 0.0);
    }
    if d >= centers[last] {
        return (last, 0.0);
    }
    // first center strictly greater than d; it exists and is > 0
    let upper = centers.partition_point(|&c| c <= d);
    let lower = upper - 1;
    let frac = (d - centers[lower]) / (centers[upper] - centers[lower]);
    (lower, frac)
}

pub fn expected_depth(dist: &DepthDistribution, bins: &DepthBinning) -> Result<Array2<f64>> {
    if dist.bins() != bins.count() {
        return invalid(format!(
            "distribution has {} bins, binning has {}",
            dist.bins(),
            bins.count()
        ));
    }
    let (h, w) = dist.cells();
    let centers = ArrayView1::from(bins.centers());
    Ok(Array2::from_shape_fn((h, w), |(i, j)| {
        dist.values
            .slice(ndarray::s![i, j, ..])
            .iter()
            .zip(centers.iter())
            .map(|(p, c)| p * c)
            .sum()
    }))
}

fn check_finite<'a>(mut values: impl Iterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.any(|v| !v.is_finite()) {
        return invalid(format!("{what} contains NaN or infinite values"));
    }
    Ok(())
}
