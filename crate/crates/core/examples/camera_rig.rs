//! Projects points through the six-camera rig and back.
//!
//! `cargo run --example camera_rig`

use bevlift::geometry::{
    build_frustum, camera_to_vehicle, unproject_pixel, vehicle_to_pixel, CameraRig, DepthBinning, FeatureGridSpec,
    Vec3,
};

fn main() -> bevlift::Result<()> {
    let rig = CameraRig::six_camera();
    let bins = DepthBinning::default();
    let targets = [Vec3::new(20.0, 0.0, 0.5), Vec3::new(0.0, 15.0, 1.0), Vec3::new(-30.0, -4.0, 0.0)];

    for cam in rig.cameras() {
        let c = cam.center();
        println!("{:<12} center ({:+.2}, {:+.2}, {:.2})", cam.name, c.x, c.y, c.z);
        for p in &targets {
            let Some((u, v, d)) = vehicle_to_pixel(p, cam).pixel() else {
                continue;
            };
            let (w, h) = (cam.intrinsics.width as f64, cam.intrinsics.height as f64);
            if !(0.0..w).contains(&u) || !(0.0..h).contains(&v) {
                continue;
            }
            let back = camera_to_vehicle(&unproject_pixel(u, v, d, &cam.intrinsics)?, &cam.extrinsics);
            println!(
                "    ({:+.1}, {:+.1}, {:.1}) -> pixel ({u:.1}, {v:.1}) depth {d:.2}, round trip error {:.1e}",
                p.x,
                p.y,
                p.z,
                (back - p).norm()
            );
        }

        let fgrid = FeatureGridSpec::for_intrinsics(&cam.intrinsics, FeatureGridSpec::DEFAULT_STRIDE)?;
        let frustum = build_frustum(cam, &bins, &fgrid)?;
        let near = frustum.point(fgrid.h_cells / 2, fgrid.w_cells / 2, 0);
        let far = frustum.point(fgrid.h_cells / 2, fgrid.w_cells / 2, bins.count() - 1);
        println!(
            "    frustum {}x{}x{} points, center ray from ({:+.1}, {:+.1}) to ({:+.1}, {:+.1})",
            fgrid.h_cells,
            fgrid.w_cells,
            bins.count(),
            near.x,
            near.y,
            far.x,
            far.y
        );
    }
    Ok(())
}
