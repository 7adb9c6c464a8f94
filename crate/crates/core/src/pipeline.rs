//! End-to-end BEV construction from per-camera depth, semantics and
//! detections: one-hot semantic features are lifted with depth-derived
//! distributions, splatted, reduced to labels by argmax, and detections are
//! placed and embedded as object channels.

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use rayon::prelude::*;

use crate::classes;
use crate::error::{invalid, Error, Result};
use crate::geometry::{build_frustum, CameraModel, CameraRig, DepthBinning, FeatureGridSpec, FrustumGrid};
use crate::ipm::{SemanticBevMap, SemanticImage};
use crate::lift::{depth_map_to_distribution, DepthDistribution, FeatureMap};
use crate::object_bev::{
    default_footprint, detection_to_bev, embed_objects, recenter_on_footprint, BevObject, Detection2D,
    DepthImage, ObjectChannels,
};
use crate::scene::{render_view, Scene, MIN_DETECTION_PIXELS};
use crate::splat::{splat_sorted, BevFeatureMap, BevGridSpec, StreamedLift};

/// What one camera contributes.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraInputs {
    pub camera_name: String,
    /// Camera-frame depth per pixel; non-finite for sky.
    pub depth: Array2<f64>,
    pub semantic: SemanticImage,
    pub detections: Vec<Detection2D>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub grid: BevGridSpec,
    pub bins: DepthBinning,
    pub stride: u32,
    pub class_count: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grid: BevGridSpec::default(),
            bins: DepthBinning::default(),
            stride: FeatureGridSpec::DEFAULT_STRIDE,
            class_count: classes::CLASS_COUNT as usize,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    /// Splatted per-class mass, `(nx, ny, K)`.
    pub features: BevFeatureMap,
    /// Argmax over class mass; 0 where nothing landed.
    pub labels: SemanticBevMap,
    /// Cells that received any mass.
    pub observed: Array2<bool>,
    pub objects: Vec<BevObject>,
    pub object_channels: ObjectChannels,
    /// Detections dropped because no valid depth was found under them.
    pub unplaced_detections: usize,
}

impl PipelineOutput {
    /// Class mass followed by the object channels, `(nx, ny, 2K + 2)`.
    pub fn bev_tensor(&self) -> ArrayD<f32> {
        let stacked = ndarray::concatenate(
            Axis(2),
            &[self.features.values.view(), self.object_channels.values.view()],
        )
        .expect("feature and object maps share the grid");
        stacked.mapv(|v| v as f32).into_dyn()
    }
}

/// Renders every rig camera of `scene` with the analytic renderer.
pub fn render_inputs(scene: &Scene) -> Vec<CameraInputs> {
    scene
        .rig
        .cameras()
        .iter()
        .map(|cam| {
            let out = render_view(scene, cam, MIN_DETECTION_PIXELS);
            CameraInputs {
                camera_name: out.camera_name,
                depth: out.depth,
                semantic: out.semantic,
                detections: out.detections,
            }
        })
        .collect()
}

/// Per-cell depth and one-hot features sampled at the pixel under each
/// feature-cell anchor. Cells whose depth is missing or outside the bin
/// range carry zero features.
fn camera_lift_inputs(
    input: &CameraInputs,
    cam: &CameraModel,
    fgrid: &FeatureGridSpec,
    config: &PipelineConfig,
) -> Result<(DepthDistribution, FeatureMap)> {
    let (h, w) = (cam.intrinsics.height as usize, cam.intrinsics.width as usize);
    if input.depth.dim() != (h, w) || input.semantic.labels.dim() != (h, w) {
        return invalid(format!(
            "camera {}: inputs {:?} / {:?} do not match image {w}x{h}",
            cam.name,
            input.depth.dim(),
            input.semantic.labels.dim()
        ));
    }
    let s = fgrid.stride as usize;
    let (d_min, d_max) = (config.bins.d_min(), config.bins.d_max());
    let pixel = |i: usize, j: usize| (i * s + s / 2, j * s + s / 2);
    let valid = Array2::from_shape_fn((fgrid.h_cells, fgrid.w_cells), |(i, j)| {
        let d = input.depth[pixel(i, j)];
        d.is_finite() && d >= d_min && d <= d_max
    });
    let depth = Array2::from_shape_fn((fgrid.h_cells, fgrid.w_cells), |(i, j)| {
        if valid[(i, j)] {
            input.depth[pixel(i, j)]
        } else {
            d_min
        }
    });
    let labels = Array2::from_shape_fn((fgrid.h_cells, fgrid.w_cells), |(i, j)| input.semantic.labels[pixel(i, j)]);
    let dist = depth_map_to_distribution(&depth, &config.bins)?;
    let feat = FeatureMap::one_hot(&labels, config.class_count, &valid)?;
    Ok((dist, feat))
}

/// Argmax over channels; ties go to the lower class id, empty cells to 0.
pub fn argmax_labels(features: &BevFeatureMap) -> SemanticBevMap {
    let labels = features.values.map_axis(Axis(2), |lane| {
        let mut best = (0u32, 0.0);
        for (c, &v) in lane.iter().enumerate() {
            if v > best.1 {
                best = (c as u32, v);
            }
        }
        best.0
    });
    SemanticBevMap {
        labels,
        grid: features.grid,
    }
}

/// Keeps one object per physical target when several cameras see it: among
/// same-class objects closer than half their default footprint length, the
/// most confident wins, then the one from the larger detection box.
fn suppress_duplicates(mut candidates: Vec<(BevObject, f64)>) -> Vec<BevObject> {
    candidates.sort_by(|a, b| {
        b.0.confidence
            .total_cmp(&a.0.confidence)
            .then(b.1.total_cmp(&a.1))
    });
    let mut kept: Vec<BevObject> = Vec::new();
    for (obj, _) in candidates {
        let radius = 0.5 * default_footprint(obj.class_id).0;
        let duplicate = kept
            .iter()
            .any(|k| k.class_id == obj.class_id && k.distance_to(&obj) < radius);
        if !duplicate {
            kept.push(obj);
        }
    }
    kept
}

fn bbox_area(b: &[f64; 4]) -> f64 {
    (b[2] - b[0]) * (b[3] - b[1])
}

pub fn run_pipeline(rig: &CameraRig, inputs: &[CameraInputs], config: &PipelineConfig) -> Result<PipelineOutput> {
    config.grid.validate()?;
    let cams: Vec<&CameraModel> = inputs
        .iter()
        .map(|inp| {
            rig.camera(&inp.camera_name)
                .ok_or_else(|| Error::InvalidArgument(format!("camera {} is not in the rig", inp.camera_name)))
        })
        .collect::<Result<_>>()?;

    let prepared: Vec<(FrustumGrid, DepthDistribution, FeatureMap)> = inputs
        .par_iter()
        .zip(cams.par_iter())
        .map(|(inp, cam)| {
            let fgrid = FeatureGridSpec::for_intrinsics(&cam.intrinsics, config.stride)?;
            let frustum = build_frustum(cam, &config.bins, &fgrid)?;
            let (dist, feat) = camera_lift_inputs(inp, cam, &fgrid, config)?;
            Ok((frustum, dist, feat))
        })
        .collect::<Result<_>>()?;
    let frustums: Vec<FrustumGrid> = prepared.iter().map(|p| p.0.clone()).collect();
    let lifted: Vec<StreamedLift> = prepared
        .iter()
        .map(|(_, d, f)| StreamedLift::new(d, f))
        .collect::<Result<_>>()?;
    let features = splat_sorted(&frustums, &lifted, &config.grid, config.class_count)?;
    let labels = argmax_labels(&features);
    let observed = features.total_mass().mapv(|m| m > 0.0);

    let mut candidates = Vec::new();
    let mut unplaced = 0;
    for (inp, cam) in inputs.iter().zip(&cams) {
        let depth = DepthImage::new(inp.depth.clone());
        for det in &inp.detections {
            if det.camera_name != cam.name {
                return invalid(format!(
                    "detection for {} listed under camera {}",
                    det.camera_name, cam.name
                ));
            }
            det.validate(&cam.intrinsics)?;
            match detection_to_bev(det, |u, v| depth.sample(u, v), cam) {
                Ok(obj) => candidates.push((recenter_on_footprint(&obj, &cam.center()), bbox_area(&det.bbox))),
                Err(Error::UnplaceableDetection(_)) => unplaced += 1,
                Err(e) => return Err(e),
            }
        }
    }
    let objects = suppress_duplicates(candidates);
    let object_channels = embed_objects(&objects, &config.grid, config.class_count);
    Ok(PipelineOutput {
        features,
        labels,
        observed,
        objects,
        object_channels,
        unplaced_detections: unplaced,
    })
}

/// Shape helper for tensors written by the pipeline.
pub fn bev_tensor_shape(grid: &BevGridSpec, class_count: usize) -> IxDyn {
    IxDyn(&[grid.nx(), grid.ny(), 2 * class_count + 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::segmentation_iou_in;
    use crate::scene::{ground_truth_bev, Road, SceneObject};

    fn road_scene(objects: Vec<SceneObject>) -> Scene {
        Scene {
            seed: 0,
            objects,
            road: Road { x_min: -60.0, x_max: 60.0, y_min: -6.0, y_max: 6.0 },
            rig: CameraRig::six_camera(),
        }
    }

    #[test]
    fn argmax_prefers_lower_class_on_ties() {
        let grid = BevGridSpec::new(0.0, 1.0, 0.0, 1.0, 0.5).unwrap();
        let mut f = BevFeatureMap::zeros(grid, 3);
        f.values[(0, 0, 1)] = 2.0;
        f.values[(0, 0, 2)] = 2.0;
        f.values[(1, 1, 2)] = 0.5;
        let labels = argmax_labels(&f).labels;
        assert_eq!(labels[(0, 0)], 1);
        assert_eq!(labels[(1, 1)], 2);
        assert_eq!(labels[(0, 1)], 0);
    }

    #[test]
    fn duplicates_across_cameras_collapse() {
        let obj = |x: f64| BevObject { x, y: 0.0, yaw: 0.0, length: 4.5, width: 2.0, class_id: 2, confidence: 1.0 };
        let kept = suppress_duplicates(vec![(obj(10.0), 100.0), (obj(10.8), 400.0), (obj(20.0), 50.0)]);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].x, 10.8);
    }

    #[test]
    fn empty_scene_road_matches_ground_truth() {
        let scene = road_scene(vec![]);
        let config = PipelineConfig::default();
        let out = run_pipeline(&scene.rig, &render_inputs(&scene), &config).unwrap();
        assert!(out.objects.is_empty());
        let (gt, _) = ground_truth_bev(&scene, &config.grid);
        let iou = segmentation_iou_in(&out.labels, &gt, classes::ROAD, Some(&out.observed))
            .unwrap()
            .unwrap();
        assert!(iou > 0.9, "road IoU {iou}");
        let t = out.bev_tensor();
        assert_eq!(t.raw_dim(), bev_tensor_shape(&config.grid, config.class_count));
    }

    #[test]
    fn lone_vehicle_is_placed_near_its_center() {
        let scene = road_scene(vec![SceneObject::new(classes::VEHICLE, 15.0, 2.0, [4.5, 2.0, 1.5], 0.0)]);
        let out = run_pipeline(&scene.rig, &render_inputs(&scene), &PipelineConfig::default()).unwrap();
        assert_eq!(out.objects.len(), 1);
        let o = &out.objects[0];
        assert_eq!(o.class_id, classes::VEHICLE);
        let err = (o.x - 15.0).hypot(o.y - 2.0);
        assert!(err < 0.5, "placed at ({}, {})", o.x, o.y);
    }

    #[test]
    fn unknown_camera_is_rejected() {
        let scene = road_scene(vec![]);
        let mut inputs = render_inputs(&scene);
        inputs[0].camera_name = "side-left".into();
        assert!(run_pipeline(&scene.rig, &inputs, &PipelineConfig::default()).is_err());
    }
}
