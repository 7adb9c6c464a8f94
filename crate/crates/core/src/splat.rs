//! Scatter-sum of lifted frustum features onto the BEV grid.
//!
//! Both implementations accumulate every cell in ascending
//! `(camera, i, j, k)` order starting from `0.0`, which makes
//! [`splat_sorted`] bitwise identical to [`splat_reference`].

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{FrustumGrid, Vec3};
use crate::lift::{lifted_value, DepthDistribution, FeatureMap, LiftedFeatures};

/// Square BEV raster in the vehicle frame with half-open cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BevGridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: f64,
}

impl Default for BevGridSpec {
    /// [-50 m, 50 m] on both axes at 0.5 m, i.e. 200 x 200 cells.
    fn default() -> Self {
        BevGridSpec {
            x_min: -50.0,
            x_max: 50.0,
            y_min: -50.0,
            y_max: 50.0,
            resolution: 0.5,
        }
    }
}

impl BevGridSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, resolution: f64) -> Result<Self> {
        let g = BevGridSpec {
            x_min,
            x_max,
            y_min,
            y_max,
            resolution,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return invalid("grid resolution must be positive");
        }
        for (lo, hi) in [(self.x_min, self.x_max), (self.y_min, self.y_max)] {
            let n = (hi - lo) / self.resolution;
            if !(n >= 1.0) || n.fract() != 0.0 {
                return invalid(format!(
                    "extent [{lo}, {hi}] is not a whole number of {} m cells",
                    self.resolution
                ));
            }
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        ((self.x_max - self.x_min) / self.resolution) as usize
    }

    pub fn ny(&self) -> usize {
        ((self.y_max - self.y_min) / self.resolution) as usize
    }

    pub fn cell_count(&self) -> usize {
        self.nx() * self.ny()
    }

    /// Vehicle-frame coordinates of the center of cell `(ix, iy)`.
    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.x_min + (ix as f64 + 0.5) * self.resolution,
            self.y_min + (iy as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell containing the planar position `(x, y)`, if any.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.x_min) / self.resolution).floor();
        let fy = ((y - self.y_min) / self.resolution).floor();
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        (ix < self.nx() && iy < self.ny()).then_some((ix, iy))
    }
}

/// BEV cell of a vehicle-frame point; the height is ignored.
pub fn cell_index(p_veh: &Vec3, grid: &BevGridSpec) -> Option<(usize, usize)> {
    grid.cell_of(p_veh.x, p_veh.y)
}

/// Aggregated features, shape `(nx, ny, channels)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BevFeatureMap {
    pub values: Array3<f64>,
    pub grid: BevGridSpec,
}

impl BevFeatureMap {
    pub fn zeros(grid: BevGridSpec, channels: usize) -> Self {
        BevFeatureMap {
            values: Array3::zeros((grid.nx(), grid.ny(), channels)),
            grid,
        }
    }

    pub fn channels(&self) -> usize {
        self.values.dim().2
    }

    /// Sum over all channels at each cell; zero means nothing landed there.
    pub fn total_mass(&self) -> ndarray::Array2<f64> {
        self.values.sum_axis(ndarray::Axis(2))
    }
}

/// Read access to lifted features `(i, j, k, c)`, either materialized or
/// computed on the fly.
pub trait LiftSource: Sync {
    /// `(h_cells, w_cells, bins, channels)`
    fn shape(&self) -> (usize, usize, usize, usize);

    fn value(&self, i: usize, j: usize, k: usize, c: usize) -> f64;
}

impl LiftSource for LiftedFeatures {
    fn shape(&self) -> (usize, usize, usize, usize) {
        self.dim()
    }

    #[inline]
    fn value(&self, i: usize, j: usize, k: usize, c: usize) -> f64 {
        self.values()[(i, j, k, c)]
    }
}

/// Lifts lazily from a distribution and a feature map. Produces exactly the
/// values [`crate::lift::lift_outer`] would materialize.
pub struct StreamedLift<'a> {
    dist: &'a DepthDistribution,
    feat: &'a FeatureMap,
}

impl<'a> StreamedLift<'a> {
    pub fn new(dist: &'a DepthDistribution, feat: &'a FeatureMap) -> Result<Self> {
        if dist.cells() != feat.cells() {
            return invalid(format!(
                "depth distribution cells {:?} do not match feature cells {:?}",
                dist.cells(),
                feat.cells()
            ));
        }
        Ok(StreamedLift { dist, feat })
    }
}

impl LiftSource for StreamedLift<'_> {
    fn shape(&self) -> (usize, usize, usize, usize) {
        let (h, w) = self.dist.cells();
        (h, w, self.dist.bins(), self.feat.channels())
    }

    #[inline]
    fn value(&self, i: usize, j: usize, k: usize, c: usize) -> f64 {
        lifted_value(self.dist.values()[(i, j, k)], self.feat.values()[(i, j, c)])
    }
}

fn check_inputs<L: LiftSource>(
    frustums: &[FrustumGrid],
    lifted: &[L],
    channels: usize,
) -> Result<()> {
    if frustums.len() != lifted.len() {
        return invalid(format!(
            "{} frustums but {} lifted feature sets",
            frustums.len(),
            lifted.len()
        ));
    }
    for (f, l) in frustums.iter().zip(lifted) {
        let (h, w, d, c) = l.shape();
        if (h, w, d) != (f.h_cells, f.w_cells, f.depth_bins) {
            return invalid(format!(
                "camera {}: lifted shape {h}x{w}x{d} vs frustum {}x{}x{}",
                f.camera_name, f.h_cells, f.w_cells, f.depth_bins
            ));
        }
        if c != channels {
            return invalid(format!(
                "camera {}: {c} channels, expected {channels}",
                f.camera_name
            ));
        }
    }
    Ok(())
}

/// Plain scatter-add, looping cameras, then `i, j, k`.
pub fn splat_reference<L: LiftSource>(
    frustums: &[FrustumGrid],
    lifted: &[L],
    grid: &BevGridSpec,
    channels: usize,
) -> Result<BevFeatureMap> {
    grid.validate()?;
    check_inputs(frustums, lifted, channels)?;
    let mut out = BevFeatureMap::zeros(*grid, channels);
    for (f, l) in frustums.iter().zip(lifted) {
        for i in 0..f.h_cells {
            for j in 0..f.w_cells {
                for k in 0..f.depth_bins {
                    let Some((ix, iy)) = cell_index(f.point(i, j, k), grid) else {
                        continue;
                    };
                    for c in 0..channels {
                        out.values[(ix, iy, c)] += l.value(i, j, k, c);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Key-sorted scatter-add: a stable counting sort groups points by cell,
/// then each cell's segment is reduced independently (in parallel).
pub fn splat_sorted<L: LiftSource>(
    frustums: &[FrustumGrid],
    lifted: &[L],
    grid: &BevGridSpec,
    channels: usize,
) -> Result<BevFeatureMap> {
    grid.validate()?;
    check_inputs(frustums, lifted, channels)?;
    let mut out = BevFeatureMap::zeros(*grid, channels);
    if channels == 0 {
        return Ok(out);
    }
    let ny = grid.ny();
    let n_cells = grid.cell_count();

    // (cell key, camera, flat point index), in canonical order
    let mut keyed: Vec<(u32, u32, u32)> = Vec::new();
    for (cam, f) in frustums.iter().enumerate() {
        let per_camera: Vec<(u32, u32, u32)> = f
            .points()
            .par_iter()
            .enumerate()
            .filter_map(|(idx, p)| {
                cell_index(p, grid).map(|(ix, iy)| ((ix * ny + iy) as u32, cam as u32, idx as u32))
            })
            .collect();
        keyed.extend(per_camera);
    }

    let mut offsets = vec![0usize; n_cells + 1];
    for &(key, _, _) in &keyed {
        offsets[key as usize + 1] += 1;
    }
    for k in 0..n_cells {
        offsets[k + 1] += offsets[k];
    }
    let mut cursor = offsets.clone();
    let mut order = vec![(0u32, 0u32); keyed.len()];
    for &(key, cam, idx) in &keyed {
        let slot = &mut cursor[key as usize];
        order[*slot] = (cam, idx);
        *slot += 1;
    }
    drop(keyed);

    let shapes: Vec<(usize, usize)> = frustums.iter().map(|f| (f.w_cells, f.depth_bins)).collect();
    let flat = out
        .values
        .as_slice_mut()
        .expect("freshly allocated map is contiguous");
    flat.par_chunks_mut(channels)
        .enumerate()
        .for_each(|(key, cell)| {
            for &(cam, idx) in &order[offsets[key]..offsets[key + 1]] {
                let (w, d) = shapes[cam as usize];
                let idx = idx as usize;
                let (i, j, k) = (idx / (w * d), (idx / d) % w, idx % d);
                let source = &lifted[cam as usize];
                for (c, acc) in cell.iter_mut().enumerate() {
                    *acc += source.value(i, j, k, c);
                }
            }
        });
    Ok(out)
}

/// Sum of one channel over the whole map.
pub fn bev_mass(map: &BevFeatureMap, channel: usize) -> Result<f64> {
    if channel >= map.channels() {
        return invalid(format!(
            "channel {channel} out of range for {} channels",
            map.channels()
        ));
    }
    Ok(map.values.index_axis(ndarray::Axis(2), channel).iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn lifted_from(values: Array4<f64>) -> LiftedFeatures {
        let (h, w, d, c) = values.dim();
        // rebuild through the public lifting path: one-hot depth, features as given
        assert_eq!(d, 1);
        let dist = DepthDistribution::new(ndarray::Array3::from_elem((h, w, 1), 1.0)).unwrap();
        let feat = FeatureMap::new(values.into_shape_with_order((h, w, c)).unwrap()).unwrap();
        crate::lift::lift_outer(&dist, &feat).unwrap()
    }

    #[test]
    fn cell_index_examples() {
        let g = BevGridSpec::default();
        assert_eq!((g.nx(), g.ny()), (200, 200));
        assert_eq!(cell_index(&Vec3::new(0.0, 0.0, 7.0), &g), Some((100, 100)));
        assert_eq!(cell_index(&Vec3::new(-50.0, -50.0, 0.0), &g), Some((0, 0)));
        assert_eq!(cell_index(&Vec3::new(50.0, 50.0, 0.0), &g), None);
        assert_eq!(cell_index(&Vec3::new(999.0, 0.0, 0.0), &g), None);
        assert_eq!(cell_index(&Vec3::new(-50.0001, 0.0, 0.0), &g), None);
        assert_eq!(cell_index(&Vec3::new(f64::NAN, 0.0, 0.0), &g), None);
        assert_eq!(cell_index(&Vec3::new(49.99, 49.99, 0.0), &g), Some((199, 199)));
    }

    #[test]
    fn grid_validation() {
        assert!(BevGridSpec::new(-50.0, 50.0, -50.0, 50.0, 0.3).is_err());
        assert!(BevGridSpec::new(-50.0, 50.0, -50.0, 50.0, 0.0).is_err());
        assert!(BevGridSpec::new(-4.0, 4.0, -2.0, 2.0, 0.5).is_ok());
    }

    #[test]
    fn two_points_in_one_cell_add_up() {
        let g = BevGridSpec::default();
        let f = FrustumGrid::from_points(
            "front",
            1,
            2,
            1,
            vec![Vec3::new(0.1, 0.1, 0.0), Vec3::new(0.2, 0.3, 5.0)],
        )
        .unwrap();
        let l = lifted_from(
            Array4::from_shape_vec((1, 2, 1, 2), vec![1.0, 2.0, 10.0, 20.0]).unwrap(),
        );
        for map in [
            splat_reference(std::slice::from_ref(&f), std::slice::from_ref(&l), &g, 2).unwrap(),
            splat_sorted(&[f], &[l], &g, 2).unwrap(),
        ] {
            assert_eq!(map.values[(100, 100, 0)], 11.0);
            assert_eq!(map.values[(100, 100, 1)], 22.0);
            assert_eq!(map.values.sum(), 33.0);
        }
    }

    #[test]
    fn empty_input_gives_zero_map() {
        let g = BevGridSpec::default();
        let none: [LiftedFeatures; 0] = [];
        let a = splat_reference(&[], &none, &g, 3).unwrap();
        let b = splat_sorted(&[], &none, &g, 3).unwrap();
        assert_eq!(a.values.dim(), (200, 200, 3));
        assert!(a.values.iter().all(|v| *v == 0.0));
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_points_are_dropped() {
        let g = BevGridSpec::default();
        let f = FrustumGrid::from_points(
            "front",
            1,
            2,
            1,
            vec![Vec3::new(60.0, 0.0, 0.0), Vec3::new(-3.0, 4.0, 0.0)],
        )
        .unwrap();
        let l = lifted_from(Array4::from_shape_vec((1, 2, 1, 1), vec![5.0, 3.0]).unwrap());
        let map = splat_sorted(&[f], &[l], &g, 1).unwrap();
        assert_eq!(bev_mass(&map, 0).unwrap(), 3.0);
        assert_eq!(map.values[(94, 108, 0)], 3.0);
        assert!(bev_mass(&map, 1).is_err());
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let g = BevGridSpec::default();
        let f = FrustumGrid::from_points("front", 1, 1, 1, vec![Vec3::zeros()]).unwrap();
        let l = lifted_from(Array4::zeros((1, 2, 1, 1)));
        assert!(splat_reference(std::slice::from_ref(&f), std::slice::from_ref(&l), &g, 1).is_err());
        assert!(splat_sorted(std::slice::from_ref(&f), &[l], &g, 1).is_err());
        let l = lifted_from(Array4::zeros((1, 1, 1, 2)));
        assert!(splat_sorted(std::slice::from_ref(&f), std::slice::from_ref(&l), &g, 1).is_err());
        assert!(splat_sorted(&[f.clone(), f], &[l], &g, 2).is_err());
    }

    #[test]
    fn zero_map_mass() {
        let map = BevFeatureMap::zeros(BevGridSpec::default(), 2);
        assert_eq!(bev_mass(&map, 1).unwrap(), 0.0);
    }
}
