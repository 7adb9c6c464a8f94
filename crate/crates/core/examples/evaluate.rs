//! End to end: render a scene, run the BEV pipeline, score it.

use bevlift::evaluation::{evaluate, DEFAULT_GATE};
use bevlift::geometry::CameraRig;
use bevlift::pipeline::{render_inputs, run_pipeline, PipelineConfig};
use bevlift::scene::{generate_scene, ground_truth_bev, SceneParams};

fn main() -> bevlift::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let scene = generate_scene(seed, &SceneParams::default(), CameraRig::six_camera())?;
    let config = PipelineConfig::default();
    let out = run_pipeline(&scene.rig, &render_inputs(&scene), &config)?;
    let (gt, gt_objects) = ground_truth_bev(&scene, &config.grid);

    let report = evaluate(&out.labels, &out.objects, &gt, &gt_objects, DEFAULT_GATE, Some(&out.observed))?;
    println!("seed {seed}: {} objects placed, {} in the scene", out.objects.len(), gt_objects.len());
    print!("{}", report.to_csv()?);
    Ok(())
}
