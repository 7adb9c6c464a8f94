//! Flat-ground inverse perspective mapping against the rasterized ground
//! truth. Objects are left out so the flat-world assumption holds.

use bevlift::classes::ROAD;
use bevlift::evaluation::segmentation_iou_in;
use bevlift::geometry::CameraRig;
use bevlift::ipm::ipm_rasterize_rig;
use bevlift::scene::{generate_scene, ground_truth_bev, render_semantic, SceneParams};
use bevlift::splat::BevGridSpec;

fn main() -> bevlift::Result<()> {
    let params = SceneParams {
        min_objects: 0,
        max_objects: 0,
        ..SceneParams::default()
    };
    let scene = generate_scene(11, &params, CameraRig::six_camera())?;
    let grid = BevGridSpec::default();
    let images: Vec<_> = scene.rig.cameras().iter().map(|c| render_semantic(&scene, c)).collect();
    let raster = ipm_rasterize_rig(images.iter().zip(scene.rig.cameras()), &grid)?;
    let (gt, _) = ground_truth_bev(&scene, &grid);

    let observed = raster.observed();
    let iou = segmentation_iou_in(&raster.map, &gt, ROAD, Some(&observed))?.unwrap_or(0.0);
    println!(
        "road {:.1} m wide; {} of {} cells observed; road IoU in observed cells {:.4}",
        scene.road.y_max - scene.road.y_min,
        observed.iter().filter(|o| **o).count(),
        grid.cell_count(),
        iou
    );
    Ok(())
}
