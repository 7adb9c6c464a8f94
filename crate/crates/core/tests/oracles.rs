mod common;

use ndarray::{Array2, Array3};
use proptest::prelude::*;

use bevlift::evaluation::{hungarian, match_objects, rotated_rect_iou, CostMatrix};
use bevlift::geometry::{DepthBinning, FrustumGrid, Vec3};
use bevlift::lift::{depth_map_to_distribution, expected_depth, lift_outer, DepthDistribution, FeatureMap};
use bevlift::object_bev::BevObject;
use bevlift::splat::{bev_mass, splat_reference, splat_sorted, BevGridSpec, StreamedLift};

fn rect(x: f64, y: f64, yaw: f64, length: f64, width: f64) -> BevObject {
    BevObject {
        x,
        y,
        yaw,
        length,
        width,
        class_id: 2,
        confidence: 1.0,
    }
}

fn simplex(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

prop_compose! {
    fn cost_matrix()(n in 0usize..=6, m in 0usize..=6)
        (values in proptest::collection::vec(0u32..20, n * m), n in Just(n), m in Just(m)) -> Array2<f64> {
        Array2::from_shape_vec((n, m), values.into_iter().map(|v| v as f64 * 0.25).collect()).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hungarian_matches_brute_force(cost in cost_matrix()) {
        let a = hungarian(&CostMatrix::new(cost.clone()).unwrap());
        prop_assert_eq!(a.total, common::brute_force_assignment(&cost));
        prop_assert_eq!(a.pairs.len(), cost.nrows().min(cost.ncols()));
        let mut rows: Vec<_> = a.pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<_> = a.pairs.iter().map(|p| p.1).collect();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        prop_assert_eq!(rows.len(), a.pairs.len());
        prop_assert_eq!(cols.len(), a.pairs.len());
    }

    #[test]
    fn iou_agrees_with_rasterization(
        yaw_a in -3.2f64..3.2, la in 0.5f64..4.0, wa in 0.5f64..4.0,
        x in -3.0f64..3.0, y in -3.0f64..3.0, yaw_b in -3.2f64..3.2, lb in 0.5f64..4.0, wb in 0.5f64..4.0,
    ) {
        let (a, b) = (rect(0.0, 0.0, yaw_a, la, wa), rect(x, y, yaw_b, lb, wb));
        let got = rotated_rect_iou(&a, &b).unwrap();
        prop_assert!((got - common::raster_iou(&a, &b, 600)).abs() < 4e-3);
        prop_assert!((got - rotated_rect_iou(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn matching_respects_gate(
        pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 0..6),
        tgt in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 0..6),
        gate in 0.5f64..5.0,
    ) {
        let preds: Vec<_> = pts.iter().map(|&(x, y)| rect(x, y, 0.0, 1.0, 1.0)).collect();
        let targets: Vec<_> = tgt.iter().map(|&(x, y)| rect(x, y, 0.0, 1.0, 1.0)).collect();
        let m = match_objects(&preds, &targets, gate).unwrap();
        prop_assert!(m.pairs.iter().all(|p| p.cost <= gate));
        prop_assert_eq!(m.pairs.len() + m.unmatched_preds.len(), preds.len());
        prop_assert_eq!(m.pairs.len() + m.unmatched_targets.len(), targets.len());
        let mut want = common::detection_pairs(&preds, &targets, gate);
        let mut got: Vec<_> = m.pairs.iter().map(|p| (p.pred, p.target)).collect();
        want.sort_unstable();
        got.sort_unstable();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn on_center_depths_round_trip(ks in proptest::collection::vec(0usize..60, 1..20)) {
        let bins = DepthBinning::default();
        let depth = Array2::from_shape_vec((1, ks.len()), ks.iter().map(|&k| bins.centers()[k]).collect()).unwrap();
        let back = expected_depth(&depth_map_to_distribution(&depth, &bins).unwrap(), &bins).unwrap();
        for (a, b) in back.iter().zip(depth.iter()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn sorted_splat_is_bitwise_reference(
        seed_points in proptest::collection::vec((-52.0f64..52.0, -52.0f64..52.0), 1..300),
        raw in proptest::collection::vec(0.01f64..1.0, 3),
        feats in proptest::collection::vec(-2.0f64..2.0, 2),
        split in 0usize..300,
    ) {
        // one camera with `d = 3` bins over `n` cells, split into two cameras
        let n = seed_points.len();
        let dist_row = simplex(&raw);
        let pts: Vec<Vec3> = seed_points
            .iter()
            .flat_map(|&(x, y)| (0..3).map(move |k| Vec3::new(x + k as f64 * 0.3, y, 0.0)))
            .collect();
        let cut = split % n;
        let mut frustums = Vec::new();
        let mut dists = Vec::new();
        let mut maps = Vec::new();
        for (cells, offset) in [(cut, 0), (n - cut, cut)] {
            if cells == 0 {
                continue;
            }
            frustums.push(FrustumGrid::from_points("front", 1, cells, 3, pts[offset * 3..(offset + cells) * 3].to_vec()).unwrap());
            dists.push(DepthDistribution::new(Array3::from_shape_fn((1, cells, 3), |(_, _, k)| dist_row[k])).unwrap());
            maps.push(FeatureMap::new(Array3::from_shape_fn((1, cells, 2), |(_, j, c)| feats[c] * (1.0 + (j + offset) as f64 * 0.01))).unwrap());
        }
        let grid = BevGridSpec::default();
        let dense: Vec<_> = dists.iter().zip(&maps).map(|(d, f)| lift_outer(d, f).unwrap()).collect();
        let streamed: Vec<_> = dists.iter().zip(&maps).map(|(d, f)| StreamedLift::new(d, f).unwrap()).collect();
        let a = splat_reference(&frustums, &dense, &grid, 2).unwrap();
        let b = splat_sorted(&frustums, &dense, &grid, 2).unwrap();
        let c = splat_sorted(&frustums, &streamed, &grid, 2).unwrap();
        prop_assert!(a.values.iter().zip(b.values.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(a.values.iter().zip(c.values.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));

        // mass is conserved when every point lands on the grid
        let in_range = pts.iter().all(|p| grid.cell_of(p.x, p.y).is_some());
        for ch in 0..2 {
            let lifted: f64 = dense.iter().map(|l| l.values().slice(ndarray::s![.., .., .., ch]).sum()).sum();
            let mass = bev_mass(&a, ch).unwrap();
            let abs_lifted: f64 = dense.iter().map(|l| l.values().slice(ndarray::s![.., .., .., ch]).mapv(f64::abs).sum()).sum();
            if in_range {
                prop_assert!((mass - lifted).abs() <= 1e-9 * abs_lifted.max(1.0));
            }
        }
    }
}

#[test]
fn mass_bounded_by_lifted_mass_for_nonnegative_features() {
    let grid = BevGridSpec::default();
    let pts: Vec<Vec3> = (0..40).map(|i| Vec3::new(-60.0 + 3.0 * i as f64, 0.0, 0.0)).collect();
    let frustum = FrustumGrid::from_points("front", 1, 40, 1, pts).unwrap();
    let dist = DepthDistribution::new(Array3::ones((1, 40, 1))).unwrap();
    let feat = FeatureMap::new(Array3::ones((1, 40, 1))).unwrap();
    let map = splat_reference(&[frustum], &[lift_outer(&dist, &feat).unwrap()], &grid, 1).unwrap();
    let mass = bev_mass(&map, 0).unwrap();
    // x in [-50, 50) keeps points -48 .. 48, i.e. 33 of them
    assert_eq!(mass, 33.0);
    assert!(mass <= 40.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_values_match_reference_formulas(seed in any::<u64>()) {
        use bevlift::bev_loss::{bev_loss, LossWeights};
        use rand::SeedableRng;

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let inputs = bevlift::gradcheck::random_loss_inputs(&mut rng).unwrap();
        let w = LossWeights::default();
        let got = bev_loss(&inputs, &w).unwrap();

        let s = &inputs.seg;
        let o = &inputs.objects;
        let d = &inputs.depth;
        let c = &inputs.consistency;
        let seg = common::focal_value(&s.pred_probs, &s.target, s.gamma, s.alpha);
        let obj = common::detection_value(&o.preds, &o.targets, o.config.gate, o.config.classes, o.config.miss_penalty);
        let depth = common::depth_l1_value(&d.pred, &d.target, &d.valid);
        let cons = common::consistency_value(c.dist.values(), &c.mono_depth, c.bins.centers());
        let reg = common::reg_value(&inputs.params);

        prop_assert!(common::rel_err(got.seg, seg) < 1e-12);
        prop_assert!(common::rel_err(got.obj, obj) < 1e-12, "obj {} vs {}", got.obj, obj);
        prop_assert!(common::rel_err(got.depth, depth) < 1e-12);
        prop_assert!(common::rel_err(got.consistency, cons) < 1e-12);
        prop_assert!(common::rel_err(got.reg, reg) < 1e-12);
        let total = seg + 2.0 * obj + 0.5 * (depth + cons) + 0.01 * reg;
        prop_assert!(common::rel_err(got.total, total) < 1e-12);
    }
}
