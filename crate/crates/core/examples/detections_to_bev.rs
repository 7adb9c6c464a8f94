//! Places rendered 2D detections on the ground and compares them with the
//! true object footprints.

use bevlift::classes;
use bevlift::geometry::CameraRig;
use bevlift::object_bev::{detection_to_bev, recenter_on_footprint, DepthImage};
use bevlift::scene::{generate_scene, render_view, SceneParams, MIN_DETECTION_PIXELS};

fn main() -> bevlift::Result<()> {
    let scene = generate_scene(5, &SceneParams::default(), CameraRig::six_camera())?;
    for cam in scene.rig.cameras() {
        let view = render_view(&scene, cam, MIN_DETECTION_PIXELS);
        let depth = DepthImage::new(view.depth.clone());
        for det in &view.detections {
            let raw = detection_to_bev(det, |u, v| depth.sample(u, v), cam)?;
            let placed = recenter_on_footprint(&raw, &cam.center());
            let truth = scene
                .objects
                .iter()
                .filter(|o| o.class_id == det.class_id)
                .map(|o| (o.center[0] - placed.x).hypot(o.center[1] - placed.y))
                .fold(f64::INFINITY, f64::min);
            println!(
                "{:<12} {:<12} at ({:+6.2}, {:+6.2}), nearest true center {:.2} m away",
                cam.name,
                classes::name(det.class_id),
                placed.x,
                placed.y,
                truth
            );
        }
    }
    Ok(())
}
