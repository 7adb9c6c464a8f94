//! Pinhole cameras, quaternion extrinsics and frustum lattices.
//!
//! Frames: the vehicle frame is x-forward, y-left, z-up. Camera frames are
//! the usual pinhole convention, z-forward, x-right, y-down. Extrinsics map
//! camera-frame points into the vehicle frame.

use std::collections::HashSet;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use crate::error::{invalid, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Allowed deviation of a quaternion norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Camera-frame depth below which a point counts as behind the camera.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-9;

/// Camera positions recognised in a rig.
pub const CAMERA_NAMES: [&str; 7] = [
    "front",
    "front-left",
    "front-right",
    "rear",
    "rear-left",
    "rear-right",
    "side-left",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    /// Builds a quaternion that must already be unit length.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = Quaternion { w, x, y, z };
        q.check_unit()?;
        Ok(q)
    }

    /// Scales `(w, x, y, z)` to unit length.
    pub fn normalized(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n == 0.0 {
            return invalid("cannot normalize a zero or non-finite quaternion");
        }
        Ok(Quaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub const fn identity() -> Self {
        Quaternion {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !n.is_finite() || n == 0.0 {
            return invalid("rotation axis must be non-zero");
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Quaternion::normalized(c, a.x * s, a.y * s, a.z * s)
    }

    /// Recovers the quaternion of a rotation matrix (Shepperd's method).
    pub fn from_rotation_matrix(m: &Mat3) -> Result<Self> {
        let det = m.determinant();
        let ortho = (m.transpose() * m - Mat3::identity()).abs().max();
        if !(ortho < 1e-9 && (det - 1.0).abs() < 1e-9) {
            return invalid("matrix is not a proper rotation");
        }
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (w, x, y, z) = if trace > 0.0 {
            let s = 2.0 * (trace + 1.0).sqrt();
            (
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            (
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            (
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            (
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        Quaternion::normalized(w, x, y, z)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    fn check_unit(&self) -> Result<()> {
        let n = self.norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return invalid(format!("quaternion norm {n} is not within {UNIT_TOLERANCE} of 1"));
        }
        Ok(())
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    /// Hamilton product; `a * b` applies `b` first.
    fn mul(self, b: Quaternion) -> Quaternion {
        let a = self;
        Quaternion {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }
}

/// Rotation matrix of a unit quaternion.
///
/// Uses the homogeneous form (scaled by `2 / |q|^2`) so the result stays
/// orthonormal to machine precision for inputs that are unit only to within
/// [`UNIT_TOLERANCE`].
pub fn quat_to_matrix(q: &Quaternion) -> Result<Mat3> {
    q.check_unit()?;
    let Quaternion { w, x, y, z } = *q;
    let s = 2.0 / (w * w + x * x + y * y + z * z);
    Ok(Mat3::new(
        1.0 - s * (y * y + z * z),
        s * (x * y - w * z),
        s * (x * z + w * y),
        s * (x * y + w * z),
        1.0 - s * (x * x + z * z),
        s * (y * z - w * x),
        s * (x * z - w * y),
        s * (y * z + w * x),
        1.0 - s * (x * x + y * y),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return invalid("focal lengths must be positive and finite");
        }
        if self.width == 0 || self.height == 0 {
            return invalid("image dimensions must be positive");
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return invalid(format!("cx={} outside (0, {})", self.cx, self.width));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return invalid(format!("cy={} outside (0, {})", self.cy, self.height));
        }
        Ok(())
    }
}

/// Rigid camera-to-vehicle transform. The rotation matrix is derived once
/// from the quaternion at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraExtrinsics {
    rotation: Quaternion,
    translation: Vec3,
    matrix: Mat3,
}

impl CameraExtrinsics {
    pub fn new(rotation: Quaternion, translation: Vec3) -> Result<Self> {
        if !translation.iter().all(|v| v.is_finite()) {
            return invalid("translation must be finite");
        }
        let matrix = quat_to_matrix(&rotation)?;
        Ok(CameraExtrinsics {
            rotation,
            translation,
            matrix,
        })
    }

    pub fn identity() -> Self {
        CameraExtrinsics {
            rotation: Quaternion::identity(),
            translation: Vec3::zeros(),
            matrix: Mat3::identity(),
        }
    }

    pub fn rotation(&self) -> Quaternion {
        self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.matrix
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

impl CameraModel {
    pub fn new(
        name: impl Into<String>,
        intrinsics: CameraIntrinsics,
        extrinsics: CameraExtrinsics,
    ) -> Result<Self> {
        let name = name.into();
        if !CAMERA_NAMES.contains(&name.as_str()) {
            return invalid(format!("unknown camera name {name:?}"));
        }
        intrinsics.validate()?;
        Ok(CameraModel {
            name,
            intrinsics,
            extrinsics,
        })
    }

    /// Camera center in the vehicle frame.
    pub fn center(&self) -> Vec3 {
        self.extrinsics.translation
    }

    /// Vehicle-frame direction of the ray through pixel `(u, v)`, scaled so
    /// that its camera-frame z component is 1. A ray parameter along this
    /// direction is therefore the camera-frame depth.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        let k = &self.intrinsics;
        let dir_cam = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        self.extrinsics.matrix * dir_cam
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraRig {
    cameras: Vec<CameraModel>,
}

impl CameraRig {
    pub fn new(cameras: Vec<CameraModel>) -> Result<Self> {
        if cameras.is_empty() {
            return invalid("a rig needs at least one camera");
        }
        let mut seen = HashSet::new();
        for cam in &cameras {
            if !seen.insert(cam.name.as_str()) {
                return invalid(format!("duplicate camera name {:?}", cam.name));
            }
        }
        Ok(CameraRig { cameras })
    }

    pub fn cameras(&self) -> &[CameraModel] {
        &self.cameras
    }

    pub fn camera(&self, name: &str) -> Option<&CameraModel> {
        self.cameras.iter().find(|c| c.name == name)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// Six level cameras (1280x720, ~71 degree horizontal field of view)
    /// spread around the vehicle.
    pub fn six_camera() -> Self {
        Self::from_mounts(&[
            ("front", 0.0, [1.6, 0.0, 1.6]),
            ("front-left", 55.0, [1.4, 0.5, 1.6]),
            ("front-right", -55.0, [1.4, -0.5, 1.6]),
            ("rear", 180.0, [-1.0, 0.0, 1.6]),
            ("rear-left", 110.0, [-0.6, 0.5, 1.6]),
            ("rear-right", -110.0, [-0.6, -0.5, 1.6]),
        ])
    }

    /// The six-camera layout plus a side-left camera.
    pub fn seven_camera() -> Self {
        Self::from_mounts(&[
            ("front", 0.0, [1.6, 0.0, 1.6]),
            ("front-left", 55.0, [1.4, 0.5, 1.6]),
            ("front-right", -55.0, [1.4, -0.5, 1.6]),
            ("rear", 180.0, [-1.0, 0.0, 1.6]),
            ("rear-left", 125.0, [-0.6, 0.5, 1.6]),
            ("rear-right", -110.0, [-0.6, -0.5, 1.6]),
            ("side-left", 90.0, [0.4, 0.9, 1.6]),
        ])
    }

    fn from_mounts(mounts: &[(&str, f64, [f64; 3])]) -> Self {
        let intrinsics = CameraIntrinsics::new(900.0, 900.0, 640.0, 360.0, 1280, 720)
            .expect("default intrinsics are valid");
        let cameras = mounts
            .iter()
            .map(|&(name, heading_deg, t)| {
                let rotation = level_camera_rotation(heading_deg.to_radians());
                let extrinsics = CameraExtrinsics::new(rotation, Vec3::from(t))
                    .expect("default extrinsics are valid");
                CameraModel::new(name, intrinsics.clone(), extrinsics)
                    .expect("default camera names are valid")
            })
            .collect();
        CameraRig::new(cameras).expect("default rig is valid")
    }
}

/// Camera-to-vehicle rotation of a level camera whose optical axis points
/// along vehicle heading `heading` (radians, counter-clockwise from +x).
pub fn level_camera_rotation(heading: f64) -> Quaternion {
    // camera x (right) -> -y, camera y (down) -> -z, camera z (forward) -> +x
    let base = Mat3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    let base = Quaternion::from_rotation_matrix(&base).expect("base is a rotation");
    let yaw = Quaternion::from_axis_angle(Vec3::z(), heading).expect("z axis is non-zero");
    let q = yaw * base;
    Quaternion::normalized(q.w, q.x, q.y, q.z).expect("product of unit quaternions")
}

/// Camera-frame point at depth `d` through pixel `(u, v)`.
pub fn unproject_pixel(u: f64, v: f64, d: f64, intr: &CameraIntrinsics) -> Result<Vec3> {
    if !(d > 0.0) || !d.is_finite() {
        return invalid(format!("depth must be positive and finite, got {d}"));
    }
    Ok(Vec3::new(
        d * (u - intr.cx) / intr.fx,
        d * (v - intr.cy) / intr.fy,
        d,
    ))
}

pub fn camera_to_vehicle(p_cam: &Vec3, ext: &CameraExtrinsics) -> Vec3 {
    ext.matrix * p_cam + ext.translation
}

pub fn vehicle_to_camera(p_veh: &Vec3, ext: &CameraExtrinsics) -> Vec3 {
    ext.matrix.transpose() * (p_veh - ext.translation)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Pixel { u: f64, v: f64, depth: f64 },
    BehindCamera,
}

impl Projection {
    pub fn pixel(self) -> Option<(f64, f64, f64)> {
        match self {
            Projection::Pixel { u, v, depth } => Some((u, v, depth)),
            Projection::BehindCamera => None,
        }
    }
}

pub fn vehicle_to_pixel(p_veh: &Vec3, cam: &CameraModel) -> Projection {
    let p = vehicle_to_camera(p_veh, &cam.extrinsics);
    if p.z <= MIN_PROJECTION_DEPTH {
        return Projection::BehindCamera;
    }
    let k = &cam.intrinsics;
    Projection::Pixel {
        u: k.fx * p.x / p.z + k.cx,
        v: k.fy * p.y / p.z + k.cy,
        depth: p.z,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthBinning {
    centers: Vec<f64>,
}

impl Default for DepthBinning {
    /// 60 bins at 1 m spacing covering [1 m, 60 m].
    fn default() -> Self {
        DepthBinning::uniform(1.0, 60.0, 60).expect("default binning is valid")
    }
}

impl DepthBinning {
    pub fn uniform(d_min: f64, d_max: f64, count: usize) -> Result<Self> {
        match count {
            0 => invalid("depth binning needs at least one bin"),
            1 => DepthBinning::from_centers(vec![d_min]),
            _ => {
                let step = (d_max - d_min) / (count - 1) as f64;
                let mut centers: Vec<f64> =
                    (0..count).map(|i| d_min + i as f64 * step).collect();
                centers[count - 1] = d_max;
                DepthBinning::from_centers(centers)
            }
        }
    }

    pub fn from_centers(centers: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return invalid("depth binning needs at least one bin");
        }
        if !centers.iter().all(|c| c.is_finite() && *c > 0.0) {
            return invalid("bin centers must be positive and finite");
        }
        if centers.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("bin centers must be strictly increasing");
        }
        Ok(DepthBinning { centers })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn count(&self) -> usize {
        self.centers.len()
    }

    pub fn d_min(&self) -> f64 {
        self.centers[0]
    }

    pub fn d_max(&self) -> f64 {
        self.centers[self.centers.len() - 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureGridSpec {
    pub stride: u32,
    pub h_cells: usize,
    pub w_cells: usize,
}

impl FeatureGridSpec {
    pub const DEFAULT_STRIDE: u32 = 8;

    pub fn for_intrinsics(intr: &CameraIntrinsics, stride: u32) -> Result<Self> {
        if stride == 0 {
            return invalid("stride must be positive");
        }
        if !intr.width.is_multiple_of(stride) || !intr.height.is_multiple_of(stride) {
            return invalid(format!(
                "stride {stride} does not divide image size {}x{}",
                intr.width, intr.height
            ));
        }
        Ok(FeatureGridSpec {
            stride,
            h_cells: (intr.height / stride) as usize,
            w_cells: (intr.width / stride) as usize,
        })
    }

    /// Pixel anchor (patch center) of feature cell `(i, j)`.
    pub fn anchor(&self, i: usize, j: usize) -> (f64, f64) {
        let s = self.stride as f64;
        ((j as f64 + 0.5) * s, (i as f64 + 0.5) * s)
    }
}

/// Vehicle-frame point for every (feature cell, depth bin) pair, stored in
/// row-major `(i, j, k)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct FrustumGrid {
    pub camera_name: String,
    pub h_cells: usize,
    pub w_cells: usize,
    pub depth_bins: usize,
    points: Vec<Vec3>,
}

impl FrustumGrid {
    /// Assembles a frustum from precomputed points (used by tests and
    /// benchmarks that need arbitrary point clouds).
    pub fn from_points(
        camera_name: impl Into<String>,
        h_cells: usize,
        w_cells: usize,
        depth_bins: usize,
        points: Vec<Vec3>,
    ) -> Result<Self> {
        if points.len() != h_cells * w_cells * depth_bins {
            return invalid(format!(
                "{} points do not fill a {h_cells}x{w_cells}x{depth_bins} frustum",
                points.len()
            ));
        }
        Ok(FrustumGrid {
            camera_name: camera_name.into(),
            h_cells,
            w_cells,
            depth_bins,
            points,
        })
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> &Vec3 {
        &self.points[(i * self.w_cells + j) * self.depth_bins + k]
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn build_frustum(
    cam: &CameraModel,
    bins: &DepthBinning,
    grid: &FeatureGridSpec,
) -> Result<FrustumGrid> {
    let expected = FeatureGridSpec::for_intrinsics(&cam.intrinsics, grid.stride)?;
    if expected != *grid {
        return invalid(format!(
            "feature grid {}x{} does not match image {}x{} at stride {}",
            grid.h_cells, grid.w_cells, cam.intrinsics.width, cam.intrinsics.height, grid.stride
        ));
    }
    let mut points = Vec::with_capacity(grid.h_cells * grid.w_cells * bins.count());
    for i in 0..grid.h_cells {
        for j in 0..grid.w_cells {
            let (u, v) = grid.anchor(i, j);
            for &d in bins.centers() {
                let p_cam = unproject_pixel(u, v, d, &cam.intrinsics)?;
                points.push(camera_to_vehicle(&p_cam, &cam.extrinsics));
            }
        }
    }
    FrustumGrid::from_points(cam.name.clone(), grid.h_cells, grid.w_cells, bins.count(), points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 640.0, 360.0, 1280, 720).unwrap()
    }

    #[test]
    fn identity_quaternion_is_identity_matrix() {
        let r = quat_to_matrix(&Quaternion::identity()).unwrap();
        assert_eq!(r, Mat3::identity());
    }

    #[test]
    fn half_turn_about_z() {
        let r = quat_to_matrix(&Quaternion::new(0.0, 0.0, 0.0, 1.0).unwrap()).unwrap();
        assert_eq!(r, Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0)));
    }

    #[test]
    fn quarter_turn_about_z() {
        let h = 0.5f64.sqrt();
        let r = quat_to_matrix(&Quaternion::new(h, 0.0, 0.0, h).unwrap()).unwrap();
        // columns are the images of the basis vectors
        assert_abs_diff_eq!(r.column(0).into_owned(), Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(r.column(1).into_owned(), Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        assert!(Quaternion::new(1.0, 1.0, 0.0, 0.0).is_err());
        let q = Quaternion { w: 1.0 + 1e-6, x: 0.0, y: 0.0, z: 0.0 };
        assert!(quat_to_matrix(&q).is_err());
        let q = Quaternion { w: 1.0 + 5e-10, x: 0.0, y: 0.0, z: 0.0 };
        assert!(quat_to_matrix(&q).is_ok());
    }

    #[test]
    fn matrix_quaternion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let q = Quaternion::normalized(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .unwrap();
            let m = quat_to_matrix(&q).unwrap();
            let back = quat_to_matrix(&Quaternion::from_rotation_matrix(&m).unwrap()).unwrap();
            assert!((m - back).abs().max() < 1e-12);
        }
    }

    #[test]
    fn unprojection_examples() {
        let k = test_intrinsics();
        assert_eq!(unproject_pixel(640.0, 360.0, 10.0, &k).unwrap(), Vec3::new(0.0, 0.0, 10.0));
        assert_eq!(
            unproject_pixel(1140.0, 360.0, 10.0, &k).unwrap(),
            Vec3::new(10.0, 0.0, 10.0)
        );
        assert!(unproject_pixel(1.0, 1.0, 0.0, &k).is_err());
        assert!(unproject_pixel(1.0, 1.0, -3.0, &k).is_err());
    }

    #[test]
    fn unprojection_is_linear_in_depth() {
        let k = test_intrinsics();
        let p1 = unproject_pixel(17.0, 600.5, 1.0, &k).unwrap();
        let p7 = unproject_pixel(17.0, 600.5, 7.0, &k).unwrap();
        assert!((p7 - 7.0 * p1).norm() <= 1e-12 * p7.norm());
    }

    #[test]
    fn vehicle_transform_examples() {
        let p = Vec3::new(0.3, -2.0, 5.0);
        assert_eq!(camera_to_vehicle(&p, &CameraExtrinsics::identity()), p);

        let ext = CameraExtrinsics::new(Quaternion::identity(), Vec3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(camera_to_vehicle(&Vec3::zeros(), &ext), Vec3::new(1.0, 2.0, 3.0));

        let h = 0.5f64.sqrt();
        let ext = CameraExtrinsics::new(Quaternion::new(h, 0.0, 0.0, h).unwrap(), Vec3::zeros())
            .unwrap();
        let q = camera_to_vehicle(&Vec3::new(1.0, 0.0, 0.0), &ext);
        assert_abs_diff_eq!(q, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn projection_round_trip_and_behind_camera() {
        let cam =
            CameraModel::new("front", test_intrinsics(), CameraExtrinsics::identity()).unwrap();
        let p = camera_to_vehicle(
            &unproject_pixel(1140.0, 360.0, 10.0, &cam.intrinsics).unwrap(),
            &cam.extrinsics,
        );
        let (u, v, d) = vehicle_to_pixel(&p, &cam).pixel().unwrap();
        assert_abs_diff_eq!(u, 1140.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 360.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d, 10.0, epsilon = 1e-12);

        assert_eq!(vehicle_to_pixel(&Vec3::zeros(), &cam), Projection::BehindCamera);
        assert_eq!(
            vehicle_to_pixel(&Vec3::new(0.0, 0.0, -4.0), &cam),
            Projection::BehindCamera
        );
    }

    #[test]
    fn level_camera_looks_along_heading() {
        let rig = CameraRig::six_camera();
        for cam in rig.cameras() {
            let axis = cam.extrinsics.matrix() * Vec3::z();
            assert!(axis.z.abs() < 1e-12, "{} optical axis is not level", cam.name);
            let down = cam.extrinsics.matrix() * Vec3::y();
            assert_abs_diff_eq!(down, Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        }
        let front = rig.camera("front").unwrap();
        assert_abs_diff_eq!(
            front.extrinsics.matrix() * Vec3::z(),
            Vec3::new(1.0, 0.0, 0.0),
            epsilon = 1e-12
        );
        let left = CameraRig::seven_camera();
        let side = left.camera("side-left").unwrap();
        assert_abs_diff_eq!(
            side.extrinsics.matrix() * Vec3::z(),
            Vec3::new(0.0, 1.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rig_validation() {
        assert!(CameraRig::new(vec![]).is_err());
        let cam =
            CameraModel::new("front", test_intrinsics(), CameraExtrinsics::identity()).unwrap();
        assert!(CameraRig::new(vec![cam.clone(), cam]).is_err());
        assert!(CameraModel::new("roof", test_intrinsics(), CameraExtrinsics::identity()).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 2.0, 4, 4).is_ok());
    }

    #[test]
    fn default_binning() {
        let bins = DepthBinning::default();
        assert_eq!(bins.count(), 60);
        assert_eq!(bins.d_min(), 1.0);
        assert_eq!(bins.d_max(), 60.0);
        for (i, c) in bins.centers().iter().enumerate() {
            assert_eq!(*c, 1.0 + i as f64);
        }
        assert!(DepthBinning::from_centers(vec![1.0, 1.0]).is_err());
        assert!(DepthBinning::uniform(1.0, 60.0, 0).is_err());
    }

    #[test]
    fn full_resolution_frustum_shape() {
        let cam =
            CameraModel::new("front", test_intrinsics(), CameraExtrinsics::identity()).unwrap();
        let grid = FeatureGridSpec::for_intrinsics(&cam.intrinsics, 8).unwrap();
        assert_eq!((grid.h_cells, grid.w_cells), (90, 160));
        let f = build_frustum(&cam, &DepthBinning::default(), &grid).unwrap();
        assert_eq!(f.len(), 90 * 160 * 60);
    }

    #[test]
    fn stride_must_divide_image() {
        let k = CameraIntrinsics::new(500.0, 500.0, 50.0, 30.0, 100, 60).unwrap();
        assert!(FeatureGridSpec::for_intrinsics(&k, 8).is_err());
        let cam = CameraModel::new("front", k, CameraExtrinsics::identity()).unwrap();
        let wrong = FeatureGridSpec { stride: 8, h_cells: 7, w_cells: 12 };
        assert!(build_frustum(&cam, &DepthBinning::default(), &wrong).is_err());
    }

    #[test]
    fn single_bin_frustum_sits_on_unit_depth() {
        let k = CameraIntrinsics::new(40.0, 40.0, 16.0, 16.0, 32, 32).unwrap();
        let cam = CameraModel::new("front", k, CameraExtrinsics::identity()).unwrap();
        let grid = FeatureGridSpec::for_intrinsics(&cam.intrinsics, 8).unwrap();
        let bins = DepthBinning::from_centers(vec![1.0]).unwrap();
        let f = build_frustum(&cam, &bins, &grid).unwrap();
        assert_eq!(f.len(), 16);
        assert!(f.points().iter().all(|p| p.z == 1.0));
    }

    #[test]
    fn small_frustum_reprojects_exhaustively() {
        let k = CameraIntrinsics::new(40.0, 42.0, 15.0, 17.0, 32, 32).unwrap();
        let ext = CameraExtrinsics::new(level_camera_rotation(0.7), Vec3::new(0.5, -0.2, 1.5))
            .unwrap();
        let cam = CameraModel::new("front-left", k, ext).unwrap();
        let grid = FeatureGridSpec::for_intrinsics(&cam.intrinsics, 8).unwrap();
        let bins = DepthBinning::uniform(2.0, 8.0, 3).unwrap();
        let f = build_frustum(&cam, &bins, &grid).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let (u0, v0) = grid.anchor(i, j);
                for (k, &d0) in bins.centers().iter().enumerate() {
                    let (u, v, d) = vehicle_to_pixel(f.point(i, j, k), &cam).pixel().unwrap();
                    assert!((u - u0).abs() < 1e-9 && (v - v0).abs() < 1e-9 && (d - d0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn frustum_is_deterministic() {
        let rig = CameraRig::six_camera();
        let cam = &rig.cameras()[2];
        let grid = FeatureGridSpec::for_intrinsics(&cam.intrinsics, 16).unwrap();
        let bins = DepthBinning::uniform(1.0, 60.0, 12).unwrap();
        let a = build_frustum(cam, &bins, &grid).unwrap();
        let b = build_frustum(cam, &bins, &grid).unwrap();
        let bits = |f: &FrustumGrid| -> Vec<u64> {
            f.points().iter().flat_map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }
}
