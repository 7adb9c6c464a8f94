//! Deterministic synthetic worlds and an analytic ray-cast renderer that
//! stands in for the camera stack and for LiDAR ground truth.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::classes;
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, CameraRig, Vec3};
use crate::ipm::{SemanticBevMap, SemanticImage};
use crate::object_bev::{footprint_corners, BevObject, Detection2D};
use crate::splat::BevGridSpec;

/// Yaw-rotated box resting on the ground.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class_id: u32,
    /// Box center; `z` is half the height.
    pub center: [f64; 3],
    /// `(length, width, height)` in meters.
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl SceneObject {
    pub fn new(class_id: u32, x: f64, y: f64, dims: [f64; 3], yaw: f64) -> Self {
        SceneObject {
            class_id,
            center: [x, y, 0.5 * dims[2]],
            dims,
            yaw,
        }
    }

    pub fn to_bev(&self) -> BevObject {
        BevObject {
            x: self.center[0],
            y: self.center[1],
            yaw: self.yaw,
            length: self.dims[0],
            width: self.dims[1],
            class_id: self.class_id,
            confidence: 1.0,
        }
    }

    /// Radius of the footprint's circumscribed circle.
    pub fn footprint_radius(&self) -> f64 {
        0.5 * self.dims[0].hypot(self.dims[1])
    }
}

/// Axis-aligned road rectangle on the ground plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Road {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub objects: Vec<SceneObject>,
    pub road: Road,
    pub rig: CameraRig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object centers are drawn uniformly from a disc of this radius.
    pub radius: f64,
    /// Half extents `(x, y)` of the ego vehicle footprint kept free of objects.
    pub ego_half_extent: [f64; 2],
    /// Extra gap kept around the ego footprint and between objects.
    pub clearance: f64,
    pub max_rejections: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            min_objects: 5,
            max_objects: 10,
            radius: 40.0,
            ego_half_extent: [2.5, 1.2],
            clearance: 0.5,
            max_rejections: 10_000,
        }
    }
}

fn sample_object(rng: &mut ChaCha8Rng, radius: f64) -> SceneObject {
    let roll: f64 = rng.gen();
    let class_id = match roll {
        r if r < 0.5 => classes::VEHICLE,
        r if r < 0.7 => classes::PEDESTRIAN,
        r if r < 0.85 => classes::CYCLIST,
        _ => classes::TRAFFIC_SIGN,
    };
    let dims = match class_id {
        classes::VEHICLE => [rng.gen_range(4.0..5.0), rng.gen_range(1.8..2.1), rng.gen_range(1.4..1.8)],
        classes::PEDESTRIAN => [rng.gen_range(0.5..0.7), rng.gen_range(0.5..0.7), rng.gen_range(1.6..1.9)],
        classes::CYCLIST => [rng.gen_range(1.6..1.9), rng.gen_range(0.5..0.7), rng.gen_range(1.5..1.8)],
        _ => [rng.gen_range(0.3..0.5), rng.gen_range(0.3..0.5), rng.gen_range(2.0..2.5)],
    };
    // wheeled traffic follows the road axis
    let yaw = match class_id {
        classes::VEHICLE | classes::CYCLIST => {
            let heading = if rng.gen_bool(0.5) { 0.0 } else { PI };
            heading + rng.gen_range(-0.15..0.15)
        }
        _ => rng.gen_range(-PI..PI),
    };
    let r = radius * rng.gen::<f64>().sqrt();
    let theta = rng.gen_range(-PI..PI);
    SceneObject::new(class_id, r * theta.cos(), r * theta.sin(), dims, yaw)
}

/// Distance from `(x, y)` to an origin-centered axis-aligned rectangle.
fn distance_to_box(x: f64, y: f64, half: [f64; 2]) -> f64 {
    let dx = (x.abs() - half[0]).max(0.0);
    let dy = (y.abs() - half[1]).max(0.0);
    dx.hypot(dy)
}

pub fn generate_scene(seed: u64, params: &SceneParams, rig: CameraRig) -> Result<Scene> {
    if params.min_objects > params.max_objects || !(params.radius > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid scene parameters {params:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = rng.gen_range(10.0..16.0);
    let offset = rng.gen_range(-2.0..2.0);
    let road = Road {
        x_min: -60.0,
        x_max: 60.0,
        y_min: offset - 0.5 * width,
        y_max: offset + 0.5 * width,
    };
    let count = rng.gen_range(params.min_objects..=params.max_objects);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    let mut rejections = 0;
    while objects.len() < count {
        let candidate = sample_object(&mut rng, params.radius);
        let (x, y) = (candidate.center[0], candidate.center[1]);
        let r = candidate.footprint_radius();
        let clear_of_ego = distance_to_box(x, y, params.ego_half_extent) > r + params.clearance;
        let clear_of_others = objects.iter().all(|o| {
            (o.center[0] - x).hypot(o.center[1] - y) > o.footprint_radius() + r + params.clearance
        });
        if clear_of_ego && clear_of_others {
            objects.push(candidate);
            continue;
        }
        rejections += 1;
        if rejections > params.max_rejections {
            return Err(Error::Generation(format!(
                "could not place {count} objects within {} m after {rejections} rejections",
                params.radius
            )));
        }
    }
    Ok(Scene {
        seed,
        objects,
        road,
        rig,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hit {
    Sky,
    Ground,
    Object(usize),
}

struct BoxShape {
    center: Vec3,
    half: Vec3,
    cos: f64,
    sin: f64,
}

impl BoxShape {
    fn new(o: &SceneObject) -> Self {
        BoxShape {
            center: Vec3::from(o.center),
            half: 0.5 * Vec3::from(o.dims),
            cos: o.yaw.cos(),
            sin: o.yaw.sin(),
        }
    }

    /// Entry parameter of the ray, if it enters the box ahead of the origin.
    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let rel = origin - self.center;
        let local = |v: &Vec3| Vec3::new(self.cos * v.x + self.sin * v.y, -self.sin * v.x + self.cos * v.y, v.z);
        let (o, d) = (local(&rel), local(dir));
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a].abs() > self.half[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut ta, mut tb) = ((-self.half[a] - o[a]) * inv, (self.half[a] - o[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 <= t1 && t0 > 1e-9).then_some(t0)
    }
}

/// Per-object visibility statistics from one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectVisibility {
    /// Pixels where this object is the nearest surface.
    pub visible_pixels: usize,
    /// Pixels whose ray hits this object at all, ignoring occluders.
    pub silhouette_pixels: usize,
    /// The silhouette reaches the image border (object truncated).
    pub truncated: bool,
    /// Tight `(u_min, v_min, u_max, v_max)` box over visible pixels.
    pub visible_bbox: Option<[f64; 4]>,
}

impl ObjectVisibility {
    /// Fully in frame and not hidden behind anything.
    pub fn unoccluded(&self) -> bool {
        self.silhouette_pixels > 0 && !self.truncated && self.visible_pixels == self.silhouette_pixels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub camera_name: String,
    /// Camera-frame depth (z) per pixel, `+inf` for sky.
    pub depth: Array2<f64>,
    pub semantic: SemanticImage,
    pub detections: Vec<Detection2D>,
    pub visibility: Vec<ObjectVisibility>,
}

/// Minimum visible pixels for an object to produce a detection.
pub const MIN_DETECTION_PIXELS: usize = 50;

/// Casts the ray through pixel center `(u, v)`; returns the depth and what
/// was hit first, plus a callback for every object the ray passes through.
fn trace(
    scene: &Scene,
    shapes: &[BoxShape],
    cam: &CameraModel,
    u: f64,
    v: f64,
    mut on_object: impl FnMut(usize),
) -> (f64, Hit) {
    let origin = cam.center();
    let dir = cam.ray_direction(u, v);
    let mut best = (f64::INFINITY, Hit::Sky);
    if dir.z < -1e-12 {
        let t = -origin.z / dir.z;
        if t > 0.0 {
            best = (t, Hit::Ground);
        }
    }
    for (idx, shape) in shapes.iter().enumerate() {
        if let Some(t) = shape.intersect(&origin, &dir) {
            on_object(idx);
            if t < best.0 {
                best = (t, Hit::Object(idx));
            }
        }
    }
    let _ = scene;
    best
}

fn label_of(scene: &Scene, cam: &CameraModel, u: f64, v: f64, depth: f64, hit: Hit) -> u32 {
    match hit {
        Hit::Sky => classes::BACKGROUND,
        Hit::Object(i) => scene.objects[i].class_id,
        Hit::Ground => {
            let p = cam.center() + depth * cam.ray_direction(u, v);
            if scene.road.contains(p.x, p.y) {
                classes::ROAD
            } else {
                classes::BACKGROUND
            }
        }
    }
}

/// Renders depth, semantics, detections and visibility in one traversal.
pub fn render_view(scene: &Scene, cam: &CameraModel, min_detection_pixels: usize) -> RenderOutput {
    let (w, h) = (cam.intrinsics.width as usize, cam.intrinsics.height as usize);
    let shapes: Vec<BoxShape> = scene.objects.iter().map(BoxShape::new).collect();
    let n = shapes.len();

    struct Row {
        depth: Vec<f64>,
        label: Vec<u32>,
        hit: Vec<Hit>,
        silhouette: Vec<usize>,
        silhouette_border: Vec<bool>,
    }
    let rows: Vec<Row> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut row = Row {
                depth: Vec::with_capacity(w),
                label: Vec::with_capacity(w),
                hit: Vec::with_capacity(w),
                silhouette: vec![0; n],
                silhouette_border: vec![false; n],
            };
            for c in 0..w {
                let (u, v) = (c as f64 + 0.5, r as f64 + 0.5);
                let border = r == 0 || c == 0 || r + 1 == h || c + 1 == w;
                let (t, hit) = trace(scene, &shapes, cam, u, v, |i| {
                    row.silhouette[i] += 1;
                    row.silhouette_border[i] |= border;
                });
                row.depth.push(t);
                row.label.push(label_of(scene, cam, u, v, t, hit));
                row.hit.push(hit);
            }
            row
        })
        .collect();

    let mut depth = Array2::from_elem((h, w), f64::INFINITY);
    let mut labels = Array2::zeros((h, w));
    let mut visibility = vec![
        ObjectVisibility {
            visible_pixels: 0,
            silhouette_pixels: 0,
            truncated: false,
            visible_bbox: None,
        };
        n
    ];
    let mut extents: Vec<Option<[usize; 4]>> = vec![None; n];
    for (r, row) in rows.into_iter().enumerate() {
        for c in 0..w {
            depth[(r, c)] = row.depth[c];
            labels[(r, c)] = row.label[c];
            if let Hit::Object(i) = row.hit[c] {
                visibility[i].visible_pixels += 1;
                let e = extents[i].get_or_insert([c, r, c, r]);
                e[0] = e[0].min(c);
                e[1] = e[1].min(r);
                e[2] = e[2].max(c);
                e[3] = e[3].max(r);
            }
        }
        for (i, vis) in visibility.iter_mut().enumerate() {
            vis.silhouette_pixels += row.silhouette[i];
            vis.truncated |= row.silhouette_border[i];
        }
    }
    let mut detections = Vec::new();
    for (i, vis) in visibility.iter_mut().enumerate() {
        vis.visible_bbox = extents[i].map(|[c0, r0, c1, r1]| {
            [c0 as f64, r0 as f64, (c1 + 1) as f64, (r1 + 1) as f64]
        });
        if vis.visible_pixels >= min_detection_pixels {
            detections.push(Detection2D {
                camera_name: cam.name.clone(),
                bbox: vis.visible_bbox.expect("visible object has a bbox"),
                class_id: scene.objects[i].class_id,
                confidence: 1.0,
            });
        }
    }
    RenderOutput {
        camera_name: cam.name.clone(),
        depth,
        semantic: SemanticImage {
            labels,
            classes: classes::CLASS_COUNT,
        },
        detections,
        visibility,
    }
}

pub fn render_depth(scene: &Scene, cam: &CameraModel) -> Array2<f64> {
    render_view(scene, cam, MIN_DETECTION_PIXELS).depth
}

pub fn render_semantic(scene: &Scene, cam: &CameraModel) -> SemanticImage {
    render_view(scene, cam, MIN_DETECTION_PIXELS).semantic
}

pub fn perfect_detections(scene: &Scene, cam: &CameraModel) -> Vec<Detection2D> {
    render_view(scene, cam, MIN_DETECTION_PIXELS).detections
}

fn inside_convex(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    (0..poly.len()).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0) >= 0.0
    })
}

/// Ground-truth BEV labels (road, then object footprints on top) sampled at
/// cell centers, plus exact objects.
pub fn ground_truth_bev(scene: &Scene, grid: &BevGridSpec) -> (SemanticBevMap, Vec<BevObject>) {
    let mut map = SemanticBevMap::empty(*grid);
    for ((ix, iy), label) in map.labels.indexed_iter_mut() {
        let (x, y) = grid.cell_center(ix, iy);
        if scene.road.contains(x, y) {
            *label = classes::ROAD;
        }
    }
    let objects: Vec<BevObject> = scene.objects.iter().map(SceneObject::to_bev).collect();
    for obj in &objects {
        let corners = footprint_corners(obj);
        let xs = corners.iter().map(|c| c.0);
        let ys = corners.iter().map(|c| c.1);
        let (x0, x1) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
        let (y0, y1) = (ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max));
        let to_index = |v: f64, lo: f64, n: usize| {
            (((v - lo) / grid.resolution).floor().max(0.0) as usize).min(n.saturating_sub(1))
        };
        if x1 < grid.x_min || x0 >= grid.x_max || y1 < grid.y_min || y0 >= grid.y_max {
            continue;
        }
        for ix in to_index(x0, grid.x_min, grid.nx())..=to_index(x1, grid.x_min, grid.nx()) {
            for iy in to_index(y0, grid.y_min, grid.ny())..=to_index(y1, grid.y_min, grid.ny()) {
                let (x, y) = grid.cell_center(ix, iy);
                if inside_convex(&corners, x, y) {
                    map.labels[(ix, iy)] = obj.class_id;
                }
            }
        }
    }
    (map, objects)
}
