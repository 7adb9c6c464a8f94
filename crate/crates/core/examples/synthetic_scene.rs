//! Generates a scene and reports what each camera sees of it.

use bevlift::classes;
use bevlift::geometry::CameraRig;
use bevlift::scene::{generate_scene, render_view, SceneParams, MIN_DETECTION_PIXELS};

fn main() -> bevlift::Result<()> {
    let scene = generate_scene(42, &SceneParams::default(), CameraRig::six_camera())?;
    println!("road y in [{:.2}, {:.2}]", scene.road.y_min, scene.road.y_max);
    for (n, o) in scene.objects.iter().enumerate() {
        println!(
            "#{n} {:<12} ({:+6.2}, {:+6.2}) yaw {:+.2} dims {:.1}x{:.1}x{:.1}",
            classes::name(o.class_id),
            o.center[0],
            o.center[1],
            o.yaw,
            o.dims[0],
            o.dims[1],
            o.dims[2]
        );
    }
    for cam in scene.rig.cameras() {
        let view = render_view(&scene, cam, MIN_DETECTION_PIXELS);
        let sky = view.depth.iter().filter(|d| !d.is_finite()).count();
        let seen: Vec<String> = view
            .visibility
            .iter()
            .enumerate()
            .filter(|(_, v)| v.visible_pixels > 0)
            .map(|(n, v)| format!("#{n}:{}px{}", v.visible_pixels, if v.unoccluded() { "" } else { "*" }))
            .collect();
        println!("{:<12} sky {:5.1}%  {} detections  {}", cam.name, 100.0 * sky as f64 / view.depth.len() as f64, view.detections.len(), seen.join(" "));
    }
    Ok(())
}
