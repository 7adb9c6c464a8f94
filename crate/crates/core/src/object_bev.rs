//! Placing 2D detections in BEV and embedding them as extra BEV channels.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::classes;
use crate::error::{invalid, Error, Result};
use crate::geometry::{camera_to_vehicle, unproject_pixel, CameraIntrinsics, CameraModel, Vec3};
use crate::splat::BevGridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub camera_name: String,
    /// `(u_min, v_min, u_max, v_max)` in pixels.
    pub bbox: [f64; 4],
    pub class_id: u32,
    pub confidence: f64,
}

impl Detection2D {
    pub fn validate(&self, intr: &CameraIntrinsics) -> Result<()> {
        let [u0, v0, u1, v1] = self.bbox;
        if !(u0 < u1 && v0 < v1) {
            return invalid(format!("degenerate bbox {:?}", self.bbox));
        }
        if u0 < 0.0 || v0 < 0.0 || u1 > intr.width as f64 || v1 > intr.height as f64 {
            return invalid(format!("bbox {:?} leaves the image", self.bbox));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return invalid(format!("confidence {} outside [0, 1]", self.confidence));
        }
        Ok(())
    }

    /// Pixel at the middle of the bottom edge.
    pub fn bottom_center(&self) -> (f64, f64) {
        let [u0, _, u1, v1] = self.bbox;
        (0.5 * (u0 + u1), v1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BevObject {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub length: f64,
    pub width: f64,
    pub class_id: u32,
    pub confidence: f64,
}

impl BevObject {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0) {
            return invalid(format!(
                "object footprint {}x{} must be positive",
                self.length, self.width
            ));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return invalid(format!("confidence {} outside [0, 1]", self.confidence));
        }
        Ok(())
    }

    pub fn distance_to(&self, other: &BevObject) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Footprint `(length, width)` assumed for a class when the detector gives
/// no dimensions.
pub fn default_footprint(class_id: u32) -> (f64, f64) {
    match class_id {
        classes::VEHICLE => (4.5, 2.0),
        classes::PEDESTRIAN => (0.6, 0.6),
        classes::CYCLIST => (1.8, 0.6),
        classes::TRAFFIC_SIGN => (0.4, 0.4),
        _ => (1.0, 1.0),
    }
}

/// Dense depth image with bilinear lookup. Pixel `(c, r)` has its center at
/// `(c + 0.5, r + 0.5)`; non-finite or non-positive samples count as
/// missing.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub depth: Array2<f64>,
}

impl DepthImage {
    pub fn new(depth: Array2<f64>) -> Self {
        DepthImage { depth }
    }

    /// Bilinear interpolation over the valid neighbours, renormalizing the
    /// weights when some are missing.
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        let (h, w) = self.depth.dim();
        if !(u.is_finite() && v.is_finite()) || h == 0 || w == 0 {
            return None;
        }
        let x = (u - 0.5).clamp(0.0, (w - 1) as f64);
        let y = (v - 0.5).clamp(0.0, (h - 1) as f64);
        let (c0, r0) = (x.floor() as usize, y.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(w - 1), (r0 + 1).min(h - 1));
        let (fx, fy) = (x - c0 as f64, y - r0 as f64);
        let taps = [
            (r0, c0, (1.0 - fx) * (1.0 - fy)),
            (r0, c1, fx * (1.0 - fy)),
            (r1, c0, (1.0 - fx) * fy),
            (r1, c1, fx * fy),
        ];
        let (mut acc, mut weight) = (0.0, 0.0);
        for (r, c, wt) in taps {
            let d = self.depth[(r, c)];
            if wt > 0.0 && d.is_finite() && d > 0.0 {
                acc += wt * d;
                weight += wt;
            }
        }
        (weight > 0.0).then(|| acc / weight)
    }
}

/// Unprojects the bottom-center of a detection at the looked-up depth and
/// drops the height. Yaw is 0 and the footprint is the class default.
pub fn detection_to_bev(
    det: &Detection2D,
    depth_at: impl Fn(f64, f64) -> Option<f64>,
    cam: &CameraModel,
) -> Result<BevObject> {
    let (u, v) = det.bottom_center();
    let depth = depth_at(u, v)
        .filter(|d| d.is_finite() && *d > 0.0)
        .ok_or_else(|| {
            Error::UnplaceableDetection(format!(
                "no valid depth at bottom-center ({u}, {v}) of a {} detection in {}",
                classes::name(det.class_id),
                det.camera_name
            ))
        })?;
    let p = camera_to_vehicle(&unproject_pixel(u, v, depth, &cam.intrinsics)?, &cam.extrinsics);
    let (length, width) = default_footprint(det.class_id);
    Ok(BevObject {
        x: p.x,
        y: p.y,
        yaw: 0.0,
        length,
        width,
        class_id: det.class_id,
        confidence: det.confidence,
    })
}

/// Moves an object placed at its visible surface back to its footprint
/// center: the point is pushed away from the camera along the horizontal
/// viewing ray by the half-chord of the footprint rectangle along that ray.
pub fn recenter_on_footprint(obj: &BevObject, camera_center: &Vec3) -> BevObject {
    let (dx, dy) = (obj.x - camera_center.x, obj.y - camera_center.y);
    let n = dx.hypot(dy);
    if n == 0.0 {
        return obj.clone();
    }
    let (ux, uy) = (dx / n, dy / n);
    // viewing direction in the object frame
    let (s, c) = obj.yaw.sin_cos();
    let (lx, ly) = (c * ux + s * uy, -s * ux + c * uy);
    let along = |half: f64, comp: f64| {
        if comp.abs() > 0.0 {
            half / comp.abs()
        } else {
            f64::INFINITY
        }
    };
    let half_chord = along(0.5 * obj.length, lx).min(along(0.5 * obj.width, ly));
    BevObject {
        x: obj.x + half_chord * ux,
        y: obj.y + half_chord * uy,
        ..obj.clone()
    }
}

/// Object attribute channels, shape `(nx, ny, K + 2)`: `K` class scores
/// (one-hot scaled by confidence), then confidence, then `ln(length * width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectChannels {
    pub values: Array3<f64>,
    pub grid: BevGridSpec,
}

impl ObjectChannels {
    pub fn confidence_channel(&self) -> usize {
        self.values.dim().2 - 2
    }

    pub fn log_area_channel(&self) -> usize {
        self.values.dim().2 - 1
    }
}

/// Writes each in-range object at its center cell. Collisions keep the
/// per-channel maximum; the log-area comes from the most confident object
/// (larger area on ties), so the result does not depend on input order.
pub fn embed_objects(objects: &[BevObject], grid: &BevGridSpec, class_count: usize) -> ObjectChannels {
    let mut values: Array3<f64> = Array3::zeros((grid.nx(), grid.ny(), class_count + 2));
    // (confidence, log area) of the object owning the area channel
    let mut owner: Array2<Option<(f64, f64)>> = Array2::from_elem((grid.nx(), grid.ny()), None);
    for obj in objects {
        let class = obj.class_id as usize;
        if class >= class_count {
            continue;
        }
        let Some((ix, iy)) = grid.cell_of(obj.x, obj.y) else {
            continue;
        };
        let conf = obj.confidence;
        let log_area = (obj.length * obj.width).ln();
        let slot = &mut values[(ix, iy, class)];
        *slot = slot.max(conf);
        let slot = &mut values[(ix, iy, class_count)];
        *slot = slot.max(conf);
        let wins = match owner[(ix, iy)] {
            None => true,
            Some((c, a)) => conf > c || (conf == c && log_area > a),
        };
        if wins {
            owner[(ix, iy)] = Some((conf, log_area));
            values[(ix, iy, class_count + 1)] = log_area;
        }
    }
    ObjectChannels {
        values,
        grid: *grid,
    }
}

/// Counter-clockwise corners of the yaw-rotated footprint rectangle.
pub fn footprint_corners(obj: &BevObject) -> [(f64, f64); 4] {
    let (hl, hw) = (0.5 * obj.length, 0.5 * obj.width);
    let (s, c) = obj.yaw.sin_cos();
    [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)].map(|(lx, ly)| {
        (obj.x + c * lx - s * ly, obj.y + s * lx + c * ly)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{level_camera_rotation, CameraExtrinsics};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn obj(x: f64, y: f64, class_id: u32, confidence: f64) -> BevObject {
        BevObject {
            x,
            y,
            yaw: 0.0,
            length: 1.0,
            width: 1.0,
            class_id,
            confidence,
        }
    }

    fn front_camera() -> CameraModel {
        let k = CameraIntrinsics::new(500.0, 500.0, 640.0, 360.0, 1280, 720).unwrap();
        let ext = CameraExtrinsics::new(level_camera_rotation(0.0), Vec3::zeros()).unwrap();
        CameraModel::new("front", k, ext).unwrap()
    }

    fn det(bbox: [f64; 4]) -> Detection2D {
        Detection2D {
            camera_name: "front".into(),
            bbox,
            class_id: classes::VEHICLE,
            confidence: 0.8,
        }
    }

    #[test]
    fn bottom_center_straight_ahead() {
        let cam = front_camera();
        let o = detection_to_bev(&det([600.0, 300.0, 680.0, 360.0]), |_, _| Some(12.0), &cam)
            .unwrap();
        assert_abs_diff_eq!(o.x, 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.y, 0.0, epsilon = 1e-12);
        assert_eq!(o.class_id, classes::VEHICLE);
        assert_eq!(o.confidence, 0.8);
        assert_eq!((o.length, o.width, o.yaw), (4.5, 2.0, 0.0));
    }

    #[test]
    fn missing_depth_is_unplaceable() {
        let cam = front_camera();
        let d = det([600.0, 300.0, 680.0, 360.0]);
        for depth in [Some(0.0), Some(-1.0), Some(f64::INFINITY), None] {
            let err = detection_to_bev(&d, |_, _| depth, &cam).unwrap_err();
            assert!(matches!(err, Error::UnplaceableDetection(_)));
        }
    }

    #[test]
    fn placement_matches_geometry_composition() {
        let cam = crate::geometry::CameraRig::six_camera().cameras()[1].clone();
        let d = Detection2D { camera_name: cam.name.clone(), ..det([100.0, 200.0, 300.0, 500.0]) };
        let o = detection_to_bev(&d, |_, _| Some(7.25), &cam).unwrap();
        let p = camera_to_vehicle(
            &unproject_pixel(200.0, 500.0, 7.25, &cam.intrinsics).unwrap(),
            &cam.extrinsics,
        );
        assert_eq!((o.x, o.y), (p.x, p.y));
    }

    #[test]
    fn detection_validation() {
        let k = front_camera().intrinsics;
        assert!(det([10.0, 10.0, 20.0, 20.0]).validate(&k).is_ok());
        assert!(det([20.0, 10.0, 20.0, 20.0]).validate(&k).is_err());
        assert!(det([10.0, 10.0, 2000.0, 20.0]).validate(&k).is_err());
    }

    #[test]
    fn bilinear_depth_lookup() {
        let img = DepthImage::new(ndarray::array![[1.0, 3.0], [5.0, f64::INFINITY]]);
        assert_eq!(img.sample(0.5, 0.5), Some(1.0));
        assert_eq!(img.sample(1.0, 0.5), Some(2.0));
        assert_eq!(img.sample(1.5, 1.5), None);
        // the infinite tap is skipped and the remaining weights renormalized
        assert_abs_diff_eq!(img.sample(1.0, 1.0).unwrap(), 3.0, epsilon = 1e-12);
        let sky = DepthImage::new(ndarray::array![[f64::INFINITY]]);
        assert_eq!(sky.sample(0.5, 0.5), None);
    }

    #[test]
    fn recentering_pushes_along_view_ray() {
        let camera = Vec3::new(0.0, 0.0, 1.5);
        let o = BevObject { length: 4.0, width: 2.0, ..obj(10.0, 0.0, classes::VEHICLE, 1.0) };
        let c = recenter_on_footprint(&o, &camera);
        assert_abs_diff_eq!(c.x, 12.0, epsilon = 1e-12);
        let o = BevObject { x: 0.0, y: -10.0, ..o };
        let c = recenter_on_footprint(&o, &camera);
        assert_abs_diff_eq!(c.y, -11.0, epsilon = 1e-12);
    }

    #[test]
    fn embedding_examples() {
        let grid = BevGridSpec::default();
        let empty = embed_objects(&[], &grid, 6);
        assert_eq!(empty.values.dim(), (200, 200, 8));
        assert!(empty.values.iter().all(|v| *v == 0.0));

        let ch = embed_objects(&[obj(0.0, 0.0, 2, 0.9)], &grid, 6);
        assert_eq!(ch.values[(100, 100, 2)], 0.9);
        assert_eq!(ch.values[(100, 100, ch.confidence_channel())], 0.9);
        assert_eq!(ch.values.iter().filter(|v| **v != 0.0).count(), 2);

        let big = BevObject { length: 4.0, width: 2.0, ..obj(0.1, 0.1, 2, 0.9) };
        let small = obj(0.2, 0.2, 3, 0.5);
        let ch = embed_objects(&[small.clone(), big.clone()], &grid, 6);
        assert_eq!(ch.values[(100, 100, 2)], 0.9);
        assert_eq!(ch.values[(100, 100, 3)], 0.5);
        assert_eq!(ch.values[(100, 100, 6)], 0.9);
        assert_eq!(ch.values[(100, 100, 7)], 8f64.ln());
        assert_eq!(ch, embed_objects(&[big.clone(), small, big], &grid, 6));
    }

    #[test]
    fn out_of_range_objects_are_skipped() {
        let ch = embed_objects(&[obj(80.0, 0.0, 2, 1.0)], &BevGridSpec::default(), 6);
        assert!(ch.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn corners() {
        let unit = obj(0.0, 0.0, 2, 1.0);
        assert_eq!(
            footprint_corners(&unit),
            [(0.5, -0.5), (0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5)]
        );
        let turned = BevObject { yaw: FRAC_PI_2, length: 2.0, ..unit.clone() };
        for ((x, y), (ex, ey)) in footprint_corners(&turned)
            .into_iter()
            .zip([(0.5, 1.0), (-0.5, 1.0), (-0.5, -1.0), (0.5, -1.0)])
        {
            assert_abs_diff_eq!(x, ex, epsilon = 1e-12);
            assert_abs_diff_eq!(y, ey, epsilon = 1e-12);
        }
        // 2x1 at 45 degrees: (1, -0.5) rotates to ((1 + 0.5)/sqrt2, (1 - 0.5)/sqrt2)
        let diag = BevObject { yaw: FRAC_PI_4, length: 2.0, ..unit };
        let r = 0.5f64.sqrt();
        let expect = [(1.5 * r, 0.5 * r), (0.5 * r, 1.5 * r), (-1.5 * r, -0.5 * r), (-0.5 * r, -1.5 * r)];
        for ((x, y), (ex, ey)) in footprint_corners(&diag).into_iter().zip(expect) {
            assert_abs_diff_eq!(x, ex, epsilon = 1e-12);
            assert_abs_diff_eq!(y, ey, epsilon = 1e-12);
        }
    }
}
