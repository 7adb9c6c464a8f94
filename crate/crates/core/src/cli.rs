//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 on processing errors, 2 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, Array3, ArrayD, Ix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::{evaluate, DEFAULT_GATE};
use crate::geometry::{build_frustum, CameraRig, DepthBinning, FeatureGridSpec};
use crate::gradcheck::grad_check;
use crate::io::{
    detections_from_json, detections_to_json, objects_from_json, objects_to_json, read_tensor, rig_from_json,
    scene_from_json, scene_to_json, write_tensor,
};
use crate::ipm::{ipm_rasterize_rig, SemanticBevMap, SemanticImage};
use crate::lift::{DepthDistribution, FeatureMap};
use crate::pipeline::{render_inputs, run_pipeline, CameraInputs, PipelineConfig};
use crate::scene::{generate_scene, ground_truth_bev, render_view, Scene, SceneParams, MIN_DETECTION_PIXELS};
use crate::splat::{splat_reference, splat_sorted, BevGridSpec, StreamedLift};
use crate::{classes, object_bev::BevObject};

#[derive(Parser, Debug)]
#[command(name = "bevlift", version, about = "Camera-to-BEV lifting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random scene
    GenScene(GenSceneArgs),
    /// Render per-camera depth, semantics and detections for a scene
    Render(RenderArgs),
    /// Lift, splat and place objects into a BEV tensor
    Pipeline(PipelineArgs),
    /// Inverse perspective mapping baseline
    Ipm(IpmArgs),
    /// Score BEV labels and objects against ground truth
    Eval(EvalArgs),
    /// Compare analytic loss gradients with finite differences
    LossGradCheck(GradCheckArgs),
    /// Time the reference and sorted splat implementations
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenSceneArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Rig JSON; defaults to the six-camera rig
    #[arg(long)]
    rig: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    min_objects: usize,
    #[arg(long, default_value_t = 10)]
    max_objects: usize,
    #[arg(long, default_value_t = 40.0)]
    radius: f64,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Overrides the rig stored in the scene
    #[arg(long)]
    rig: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long, conflicts_with = "inputs", required_unless_present = "inputs")]
    scene: Option<PathBuf>,
    /// Directory written by `render`
    #[arg(long)]
    inputs: Option<PathBuf>,
    /// Required with --inputs; overrides the scene rig otherwise
    #[arg(long, required_unless_present = "scene")]
    rig: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    objects: PathBuf,
    /// Also write the argmax label map
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Also write the mask of cells that received mass
    #[arg(long)]
    observed: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IpmArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    rig: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Use only the front camera instead of the whole rig
    #[arg(long)]
    front_only: bool,
    /// Also write the mask of cells some pixel landed in
    #[arg(long)]
    observed: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted label tensor
    #[arg(long)]
    pred: PathBuf,
    /// Predicted objects JSON
    #[arg(long)]
    pred_objects: Option<PathBuf>,
    /// Ground truth: a scene JSON, or a label tensor with --gt-objects
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    gt_objects: Option<PathBuf>,
    /// Restrict segmentation scores to cells where this tensor is non-zero
    #[arg(long)]
    region: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_GATE)]
    gate: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// CSV output; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 7)]
    cameras: usize,
    #[arg(long, default_value_t = 3)]
    repeat: usize,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenScene(a) => gen_scene(a),
        Command::Render(a) => render(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Ipm(a) => ipm(a),
        Command::Eval(a) => eval(a),
        Command::LossGradCheck(a) => loss_grad_check(a),
        Command::Bench(a) => bench(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_rig(path: &Path) -> Result<CameraRig> {
    rig_from_json(&read_text(path)?)
}

fn load_scene(path: &Path, rig: Option<&PathBuf>) -> Result<Scene> {
    let mut scene = scene_from_json(&read_text(path)?)?;
    if let Some(r) = rig {
        scene.rig = load_rig(r)?;
    }
    Ok(scene)
}

fn to_f32<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> ArrayD<f32> {
    a.mapv(|v| v as f32).into_dyn()
}

fn labels_to_tensor(labels: &Array2<u32>) -> ArrayD<f32> {
    labels.mapv(|l| l as f32).into_dyn()
}

fn mask_to_tensor(mask: &Array2<bool>) -> ArrayD<f32> {
    mask.mapv(|m| if m { 1.0 } else { 0.0 }).into_dyn()
}

fn tensor_to_labels(t: ArrayD<f32>, what: &str) -> Result<Array2<u32>> {
    let t = t
        .into_dimensionality::<Ix2>()
        .map_err(|_| Error::InvalidArgument(format!("{what} must be a 2-D tensor")))?;
    if let Some(bad) = t.iter().find(|v| !(v.fract() == 0.0 && **v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("{what} holds non-integer label {bad}")));
    }
    Ok(t.mapv(|v| v as u32))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn gen_scene(a: GenSceneArgs) -> Result<()> {
    let rig = match &a.rig {
        Some(p) => load_rig(p)?,
        None => CameraRig::six_camera(),
    };
    let params = SceneParams {
        min_objects: a.min_objects,
        max_objects: a.max_objects,
        radius: a.radius,
        ..Default::default()
    };
    let scene = generate_scene(a.seed, &params, rig)?;
    write_text(&a.out, &scene_to_json(&scene)?)
}

fn render(a: RenderArgs) -> Result<()> {
    let scene = load_scene(&a.scene, a.rig.as_ref())?;
    fs::create_dir_all(&a.out_dir)?;
    for cam in scene.rig.cameras() {
        let out = render_view(&scene, cam, MIN_DETECTION_PIXELS);
        write_tensor(a.out_dir.join(format!("{}_depth.tensor", cam.name)), &to_f32(&out.depth))?;
        write_tensor(
            a.out_dir.join(format!("{}_semantic.tensor", cam.name)),
            &labels_to_tensor(&out.semantic.labels),
        )?;
        write_text(
            &a.out_dir.join(format!("{}_detections.json", cam.name)),
            &detections_to_json(&out.detections)?,
        )?;
    }
    Ok(())
}

fn load_inputs(dir: &Path, rig: &CameraRig) -> Result<Vec<CameraInputs>> {
    rig.cameras()
        .iter()
        .map(|cam| {
            let depth = read_tensor(dir.join(format!("{}_depth.tensor", cam.name)))?
                .into_dimensionality::<Ix2>()
                .map_err(|_| Error::InvalidArgument(format!("{} depth must be 2-D", cam.name)))?
                .mapv(f64::from);
            let labels = tensor_to_labels(read_tensor(dir.join(format!("{}_semantic.tensor", cam.name)))?, "semantic image")?;
            let detections = detections_from_json(&read_text(&dir.join(format!("{}_detections.json", cam.name)))?)?;
            Ok(CameraInputs {
                camera_name: cam.name.clone(),
                depth,
                semantic: SemanticImage::new(labels, classes::CLASS_COUNT)?,
                detections,
            })
        })
        .collect()
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let (rig, inputs) = match (&a.scene, &a.inputs) {
        (Some(scene), _) => {
            let scene = load_scene(scene, a.rig.as_ref())?;
            let inputs = render_inputs(&scene);
            (scene.rig, inputs)
        }
        (None, Some(dir)) => {
            let rig_path = a
                .rig
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--inputs needs --rig".into()))?;
            let rig = load_rig(rig_path)?;
            let inputs = load_inputs(dir, &rig)?;
            (rig, inputs)
        }
        (None, None) => return Err(Error::InvalidArgument("one of --scene or --inputs is required".into())),
    };
    let out = run_pipeline(&rig, &inputs, &PipelineConfig::default())?;
    write_tensor(&a.out, &out.bev_tensor())?;
    write_text(&a.objects, &objects_to_json(&out.objects)?)?;
    if let Some(p) = &a.labels {
        write_tensor(p, &labels_to_tensor(&out.labels.labels))?;
    }
    if let Some(p) = &a.observed {
        write_tensor(p, &mask_to_tensor(&out.observed))?;
    }
    Ok(())
}

fn ipm(a: IpmArgs) -> Result<()> {
    let scene = load_scene(&a.scene, a.rig.as_ref())?;
    let cams: Vec<_> = scene
        .rig
        .cameras()
        .iter()
        .filter(|c| !a.front_only || c.name == "front")
        .collect();
    if cams.is_empty() {
        return Err(Error::InvalidArgument("the rig has no front camera".into()));
    }
    let images: Vec<SemanticImage> = cams
        .iter()
        .map(|c| render_view(&scene, c, MIN_DETECTION_PIXELS).semantic)
        .collect();
    let raster = ipm_rasterize_rig(images.iter().zip(cams.iter().copied()), &BevGridSpec::default())?;
    write_tensor(&a.out, &labels_to_tensor(&raster.map.labels))?;
    if let Some(p) = &a.observed {
        write_tensor(p, &mask_to_tensor(&raster.observed()))?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let grid = BevGridSpec::default();
    let pred_labels = tensor_to_labels(read_tensor(&a.pred)?, "prediction")?;
    let pred_objects = match &a.pred_objects {
        Some(p) => objects_from_json(&read_text(p)?)?,
        None => Vec::new(),
    };
    let is_json = a.gt.extension().is_some_and(|e| e == "json");
    let (gt_map, gt_objects): (SemanticBevMap, Vec<BevObject>) = if is_json {
        let scene = load_scene(&a.gt, None)?;
        ground_truth_bev(&scene, &grid)
    } else {
        let labels = tensor_to_labels(read_tensor(&a.gt)?, "ground truth")?;
        let objects = match &a.gt_objects {
            Some(p) => objects_from_json(&read_text(p)?)?,
            None => Vec::new(),
        };
        (SemanticBevMap { labels, grid }, objects)
    };
    let pred_map = SemanticBevMap { labels: pred_labels, grid };
    let region = match &a.region {
        Some(p) => Some(
            read_tensor(p)?
                .into_dimensionality::<Ix2>()
                .map_err(|_| Error::InvalidArgument("region must be a 2-D tensor".into()))?
                .mapv(|v| v != 0.0),
        ),
        None => None,
    };
    let report = evaluate(&pred_map, &pred_objects, &gt_map, &gt_objects, a.gate, region.as_ref())?;
    write_text(&a.out, &report.to_csv()?)
}

/// Tolerances the gradient check must meet.
pub const GRAD_REL_TOLERANCE: f64 = 1e-4;
pub const TOTAL_ABS_TOLERANCE: f64 = 1e-12;

fn loss_grad_check(a: GradCheckArgs) -> Result<()> {
    let rows = grad_check(a.seed, a.instances)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .expect("csv output is utf-8");
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| {
            let tol = if r.component == "total" { TOTAL_ABS_TOLERANCE } else { GRAD_REL_TOLERANCE };
            !(r.max_rel_error <= tol)
        })
        .map(|r| r.component.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gradient check failed for {}", failed.join(", "))))
    }
}

#[derive(Serialize)]
struct BenchRow<'a> {
    #[serde(rename = "impl")]
    implementation: &'a str,
    cameras: usize,
    points: usize,
    channels: usize,
    millis: f64,
}

fn bench(a: BenchArgs) -> Result<()> {
    let rig = CameraRig::seven_camera();
    if a.cameras == 0 || a.cameras > rig.len() {
        return Err(Error::InvalidArgument(format!("--cameras must be in 1..={}", rig.len())));
    }
    let bins = DepthBinning::default();
    let grid = BevGridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut frustums = Vec::new();
    let mut dists = Vec::new();
    let mut feats = Vec::new();
    for cam in &rig.cameras()[..a.cameras] {
        let fgrid = FeatureGridSpec::for_intrinsics(&cam.intrinsics, FeatureGridSpec::DEFAULT_STRIDE)?;
        frustums.push(build_frustum(cam, &bins, &fgrid)?);
        let (h, w) = (fgrid.h_cells, fgrid.w_cells);
        dists.push(DepthDistribution::new(crate::gradcheck::random_probs(&mut rng, h, w, bins.count()))?);
        feats.push(FeatureMap::new(Array3::from_shape_fn((h, w, a.channels), |_| rng.gen_range(-1.0..1.0)))?);
    }
    let lifted: Vec<StreamedLift> = dists
        .iter()
        .zip(&feats)
        .map(|(d, f)| StreamedLift::new(d, f))
        .collect::<Result<_>>()?;
    let points: usize = frustums.iter().map(|f| f.len()).sum();
    let mut w = csv::Writer::from_writer(Vec::new());
    for _ in 0..a.repeat {
        let t = Instant::now();
        let reference = splat_reference(&frustums, &lifted, &grid, a.channels)?;
        let ref_ms = t.elapsed().as_secs_f64() * 1e3;
        let t = Instant::now();
        let sorted = splat_sorted(&frustums, &lifted, &grid, a.channels)?;
        let sorted_ms = t.elapsed().as_secs_f64() * 1e3;
        if reference != sorted {
            return Err(Error::InvalidArgument("sorted splat diverged from the reference".into()));
        }
        for (name, ms) in [("reference", ref_ms), ("sorted", sorted_ms)] {
            w.serialize(BenchRow {
                implementation: name,
                cameras: a.cameras,
                points,
                channels: a.channels,
                millis: ms,
            })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    fs::write(&a.out, bytes)?;
    Ok(())
}
