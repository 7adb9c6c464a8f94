//! Inverse perspective mapping baseline: per-pixel labels cast onto the
//! flat ground plane `z = 0` and rasterized into the BEV grid.

use ndarray::Array2;

use crate::error::{invalid, Result};
use crate::geometry::{CameraModel, Vec3};
use crate::splat::BevGridSpec;

/// Ray directions with a vertical component above this never reach the
/// ground.
const MAX_GROUND_RAY_DZ: f64 = -1e-9;

/// Per-pixel class ids, shape `(height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticImage {
    pub labels: Array2<u32>,
    pub classes: u32,
}

impl SemanticImage {
    pub fn new(labels: Array2<u32>, classes: u32) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return invalid(format!("label {bad} out of range for {classes} classes"));
        }
        Ok(SemanticImage { labels, classes })
    }
}

/// Class id per BEV cell, shape `(nx, ny)`. Label 0 means unknown / empty.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticBevMap {
    pub labels: Array2<u32>,
    pub grid: BevGridSpec,
}

impl SemanticBevMap {
    pub fn empty(grid: BevGridSpec) -> Self {
        SemanticBevMap {
            labels: Array2::zeros((grid.nx(), grid.ny())),
            grid,
        }
    }

    pub fn mask(&self, class_id: u32) -> Array2<bool> {
        self.labels.mapv(|l| l == class_id)
    }
}

/// Where the ray through pixel `(u, v)` meets the ground, if it does.
pub fn ground_intersection(u: f64, v: f64, cam: &CameraModel) -> Result<Option<Vec3>> {
    let origin = cam.center();
    if !(origin.z > 0.0) {
        return invalid(format!(
            "camera {} is not above the ground (z = {})",
            cam.name, origin.z
        ));
    }
    let dir = cam.ray_direction(u, v);
    if !(dir.z < MAX_GROUND_RAY_DZ) {
        return Ok(None);
    }
    let t = -origin.z / dir.z;
    if !(t > 0.0) {
        return Ok(None);
    }
    let p = origin + t * dir;
    Ok(Some(Vec3::new(p.x, p.y, 0.0)))
}

/// IPM result with the ground distance of the observation that won each
/// cell (`+inf` where no pixel landed).
#[derive(Clone, Debug, PartialEq)]
pub struct IpmRaster {
    pub map: SemanticBevMap,
    pub distance: Array2<f64>,
}

impl IpmRaster {
    pub fn new(grid: BevGridSpec) -> Self {
        IpmRaster {
            map: SemanticBevMap::empty(grid),
            distance: Array2::from_elem((grid.nx(), grid.ny()), f64::INFINITY),
        }
    }

    /// Cells that received at least one pixel.
    pub fn observed(&self) -> Array2<bool> {
        self.distance.mapv(f64::is_finite)
    }

    /// Casts every pixel of `img` through `cam`; a cell keeps the label of
    /// the observation nearest to its camera on the ground plane.
    pub fn add_camera(&mut self, img: &SemanticImage, cam: &CameraModel) -> Result<()> {
        let (h, w) = img.labels.dim();
        if (w as u32, h as u32) != (cam.intrinsics.width, cam.intrinsics.height) {
            return invalid(format!(
                "semantic image {w}x{h} does not match camera {} ({}x{})",
                cam.name, cam.intrinsics.width, cam.intrinsics.height
            ));
        }
        let c = cam.center();
        let grid = self.map.grid;
        for ((r, col), &label) in img.labels.indexed_iter() {
            let Some(p) = ground_intersection(col as f64 + 0.5, r as f64 + 0.5, cam)? else {
                continue;
            };
            let Some(cell) = grid.cell_of(p.x, p.y) else {
                continue;
            };
            let dist = (p.x - c.x).hypot(p.y - c.y);
            if dist < self.distance[cell] {
                self.distance[cell] = dist;
                self.map.labels[cell] = label;
            }
        }
        Ok(())
    }
}

pub fn ipm_rasterize(
    img: &SemanticImage,
    cam: &CameraModel,
    grid: &BevGridSpec,
) -> Result<SemanticBevMap> {
    grid.validate()?;
    let mut raster = IpmRaster::new(*grid);
    raster.add_camera(img, cam)?;
    Ok(raster.map)
}

/// Multi-camera IPM with the same nearest-observation rule across cameras.
pub fn ipm_rasterize_rig<'a>(
    views: impl IntoIterator<Item = (&'a SemanticImage, &'a CameraModel)>,
    grid: &BevGridSpec,
) -> Result<IpmRaster> {
    grid.validate()?;
    let mut raster = IpmRaster::new(*grid);
    for (img, cam) in views {
        raster.add_camera(img, cam)?;
    }
    Ok(raster)
}
