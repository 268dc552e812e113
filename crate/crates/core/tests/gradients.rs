use depthprior_core::grad::{
    check_objective_gradients, check_point, loss_with_gradients, DepthField,
};
use depthprior_core::grid::{Image, ScalarGrid};
use depthprior_core::objective::{Ablation, LossTerm, Objective, ObjectiveConfig, TermWeights};
use depthprior_core::prior::TotalWeights;
use depthprior_core::selfsup::SelfSupWeights;
use depthprior_core::synthetic::{random_scene, render_scene, SceneConfig, ScenePreset};

fn all_terms_config() -> ObjectiveConfig {
    // Every term switched on so the total exercises the whole pipeline.
    let weights = LossTerm::ALL.iter().fold(TermWeights::zero(), |w, t| {
        w.with(*t, 0.1 + 0.1 * t.index() as f64)
    });
    ObjectiveConfig {
        weights,
        ..Default::default()
    }
}

#[test]
fn every_term_matches_finite_differences() {
    let cfg = all_terms_config();
    for seed in 0..5 {
        let scene = random_scene(8, 8, seed).unwrap();
        let objective = Objective::new(&scene, &cfg).unwrap();
        let checks = check_objective_gradients(
            &objective,
            &scene.depth_a,
            &scene.depth_b,
            &scene.pose_ab,
            seed,
            1e-5,
            0.0,
            None,
        )
        .unwrap();
        for c in &checks {
            println!(
                "seed {seed} {:<22} value {:>12.6e} max rel err {:.3e} at {}",
                c.name, c.value, c.max_rel_error, c.worst
            );
        }
        for c in &checks {
            assert!(
                c.max_rel_error < 1e-4,
                "seed {seed} {} rel err {}",
                c.name,
                c.max_rel_error
            );
        }
    }
}

#[test]
fn attached_mask_gradients_match() {
    let cfg = ObjectiveConfig {
        detach_mask: false,
        ..all_terms_config()
    };
    let scene = random_scene(6, 6, 42).unwrap();
    let objective = Objective::new(&scene, &cfg).unwrap();
    let checks = check_objective_gradients(
        &objective,
        &scene.depth_a,
        &scene.depth_b,
        &scene.pose_ab,
        1,
        1e-5,
        0.0,
        None,
    )
    .unwrap();
    for c in &checks {
        assert!(
            c.max_rel_error < 1e-4,
            "{} rel err {}",
            c.name,
            c.max_rel_error
        );
    }
}

#[test]
fn injected_error_is_caught() {
    let cfg = all_terms_config();
    let scene = random_scene(6, 6, 3).unwrap();
    let objective = Objective::new(&scene, &cfg).unwrap();
    let bump = |g: &mut [f64]| g[5] = g[5] * 1.01 + 1e-3;
    let checks = check_objective_gradients(
        &objective,
        &scene.depth_a,
        &scene.depth_b,
        &scene.pose_ab,
        0,
        1e-5,
        0.0,
        Some(&bump),
    )
    .unwrap();
    assert!(checks.iter().all(|c| c.max_rel_error > 1e-4));
}

#[test]
fn symmetric_minimum_has_zero_photometric_gradient() {
    let mut scene = random_scene(8, 8, 9).unwrap();
    let gray = Image::new(vec![ScalarGrid::filled(8, 8, 0.4); 3]).unwrap();
    scene.image_a = gray.clone();
    scene.image_b = gray;
    scene.pose_ab = depthprior_core::geometry::PoseSE3::identity();
    let depth = ScalarGrid::filled(8, 8, 3.0);
    let cfg = ObjectiveConfig {
        weights: TermWeights::zero().with(LossTerm::Photometric, 1.0),
        automask: false,
        ..Default::default()
    };
    let objective = Objective::new(&scene, &cfg).unwrap();
    let report = objective.report(&depth, &depth, &scene.pose_ab, 0).unwrap();
    assert_eq!(report.total, 0.0);
    assert!(report.grad_depth_a.values().iter().all(|g| *g == 0.0));
}

#[test]
fn pose_gradient_is_a_descent_direction() {
    let scene =
        depthprior_core::synthetic::render_scene(&depthprior_core::synthetic::SceneConfig::preset(
            depthprior_core::synthetic::ScenePreset::Static,
            32,
            24,
            4,
        ))
        .unwrap();
    let cfg = ObjectiveConfig {
        weights: Ablation::Baseline.weights(&TotalWeights::default(), &SelfSupWeights::default()),
        ..Default::default()
    };
    let objective = Objective::new(&scene, &cfg).unwrap();
    let pose = scene.pose_ab.perturbed([0.0, 0.004, 0.0, 0.03, 0.0, 0.0]);
    let ctx = objective
        .freeze(&scene.depth_a, &scene.depth_b, &pose, 0)
        .unwrap();
    let report = objective
        .report_with(&ctx, &scene.depth_a, &scene.depth_b, &pose)
        .unwrap();
    let eta = 1e-3 / report.grad_pose.iter().map(|g| g * g).sum::<f64>().sqrt();
    let step: [f64; 6] = std::array::from_fn(|k| -eta * report.grad_pose[k]);
    let (_, before) = objective
        .evaluate(
            &ctx,
            scene.depth_a.values(),
            scene.depth_b.values(),
            &pose,
            [0.0; 6],
        )
        .unwrap();
    let (_, after) = objective
        .evaluate(
            &ctx,
            scene.depth_a.values(),
            scene.depth_b.values(),
            &pose,
            step,
        )
        .unwrap();
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn masked_out_pixel_has_zero_gradient() {
    let scene = random_scene(8, 8, 5).unwrap();
    // Only the photometric and geometry terms, with every warp of pixel 0 forced out of view.
    let cfg = ObjectiveConfig {
        weights: TermWeights::zero()
            .with(LossTerm::Photometric, 1.0)
            .with(LossTerm::Geometry, 0.5),
        ..Default::default()
    };
    let objective = Objective::new(&scene, &cfg).unwrap();
    let mut ctx = objective
        .freeze(&scene.depth_a, &scene.depth_b, &scene.pose_ab, 0)
        .unwrap();
    // Pick a pixel no other valid warp samples from in view b, and mark it invalid in view a.
    let n = objective.pixel_count();
    let grads = objective
        .gradients(
            &ctx,
            scene.depth_a.values(),
            scene.depth_b.values(),
            &scene.pose_ab,
            &[],
            true,
        )
        .unwrap();
    let untouched_b: Vec<usize> = (0..n)
        .filter(|&j| grads[0].gradient[n + j] == 0.0)
        .collect();
    ctx.geometry_valid[0] = false;
    ctx.photometric_valid[0] = false;
    let grads = objective
        .gradients(
            &ctx,
            scene.depth_a.values(),
            scene.depth_b.values(),
            &scene.pose_ab,
            &[],
            true,
        )
        .unwrap();
    // Photometric SSIM windows reach neighbours, but pixel 0's own depth only enters through its warp.
    assert_eq!(grads[0].gradient[0], 0.0);
    for j in untouched_b {
        assert_eq!(grads[0].gradient[n + j], 0.0);
    }
}

#[test]
fn field_gradients_use_inverse_depth_chain_rule() {
    let scene = random_scene(6, 6, 8).unwrap();
    let cfg = all_terms_config();
    let objective = Objective::new(&scene, &cfg).unwrap();
    let a = DepthField::with_default_bounds(&scene.depth_a).unwrap();
    let b = DepthField::with_default_bounds(&scene.depth_b).unwrap();
    let g = loss_with_gradients(&objective, &a, &b, &scene.pose_ab, 0).unwrap();
    for i in 0..36 {
        let d = a.depth().values()[i];
        let expected = -g.report.grad_depth_a.values()[i] * d * d;
        assert!((g.grad_inverse_a[i] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }
}

#[test]
fn rendered_scene_crop_passes_at_check_point() {
    let cfg = SceneConfig::preset(ScenePreset::Dynamic, 64, 48, 0);
    let sample = render_scene(&cfg).unwrap().center_crop(8).unwrap();
    let objective_cfg = ObjectiveConfig::default();
    let objective = Objective::new(&sample, &objective_cfg).unwrap();
    let (a, b) = check_point(&objective, 0).unwrap();
    let checks =
        check_objective_gradients(&objective, &a, &b, &sample.pose_ab, 0, 1e-5, 1e-4, None)
            .unwrap();
    for c in &checks {
        assert!(c.max_rel_error < 1e-4, "{} {}", c.name, c.max_rel_error);
    }
}
