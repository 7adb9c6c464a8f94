//! Lifts one rendered camera into a depth-weighted frustum and splats it
//! onto the BEV grid with both scatter implementations.

use bevlift::geometry::{build_frustum, CameraRig, DepthBinning, FeatureGridSpec};
use bevlift::lift::{depth_map_to_distribution, lift_outer, FeatureMap};
use bevlift::scene::{generate_scene, render_view, SceneParams};
use bevlift::splat::{bev_mass, splat_reference, splat_sorted, BevGridSpec, StreamedLift};
use ndarray::Array2;

fn main() -> bevlift::Result<()> {
    let scene = generate_scene(42, &SceneParams::default(), CameraRig::six_camera())?;
    let cam = scene.rig.camera("front").expect("rig has a front camera").clone();
    let view = render_view(&scene, &cam, 50);

    let bins = DepthBinning::default();
    let fgrid = FeatureGridSpec::for_intrinsics(&cam.intrinsics, 8)?;
    let (h, w) = (fgrid.h_cells, fgrid.w_cells);

    // one depth and one label per feature cell, read under its anchor
    let mut depth = Array2::from_elem((h, w), bins.d_max());
    let mut labels = Array2::zeros((h, w));
    let mut valid = Array2::from_elem((h, w), false);
    for i in 0..h {
        for j in 0..w {
            let (u, v) = fgrid.anchor(i, j);
            let px = (v as usize, u as usize);
            let d = view.depth[px];
            if d.is_finite() && (bins.d_min()..=bins.d_max()).contains(&d) {
                depth[(i, j)] = d;
                labels[(i, j)] = view.semantic.labels[px];
                valid[(i, j)] = true;
            }
        }
    }
    let dist = depth_map_to_distribution(&depth, &bins)?;
    let feat = FeatureMap::one_hot(&labels, 6, &valid)?;
    let frustum = build_frustum(&cam, &bins, &fgrid)?;
    let grid = BevGridSpec::default();

    let dense = lift_outer(&dist, &feat)?;
    let reference = splat_reference(std::slice::from_ref(&frustum), &[dense], &grid, 6)?;
    let streamed = StreamedLift::new(&dist, &feat)?;
    let sorted = splat_sorted(&[frustum], &[streamed], &grid, 6)?;

    let identical = reference.values.iter().zip(sorted.values.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("{} valid cells of {}; sorted == reference: {identical}", valid.iter().filter(|v| **v).count(), h * w);
    for (c, name) in ["background", "road", "vehicle", "pedestrian", "cyclist", "traffic-sign"].iter().enumerate() {
        println!("{name:>13}: {:9.1} mass", bev_mass(&sorted, c)?);
    }
    Ok(())
}
