//! Direct depth-field fitting on one scene, with initialization and evaluation.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::eval::{median, region_metrics, RegionReports};
use crate::geometry::{compute_warp, CameraIntrinsics, PoseSE3};
use crate::grad::{optimize_depth, DepthField, IterationRecord, OptimizerConfig};
use crate::grid::ScalarGrid;
use crate::objective::{Objective, ObjectiveConfig};
use crate::scene::SceneSample;

/// How the depth of view a is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Pseudo-depth rescaled to `init_median`.
    Pseudo,
    /// A constant `init_median`.
    Constant,
}

impl InitMode {
    pub fn name(self) -> &'static str {
        match self {
            InitMode::Pseudo => "pseudo",
            InitMode::Constant => "constant",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "pseudo" => Some(InitMode::Pseudo),
            "constant" => Some(InitMode::Constant),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub init: InitMode,
    /// Median depth of the initial estimate in meters.
    pub init_median: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    /// Ground truth beyond this depth is excluded from the metrics.
    pub cap: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            init: InitMode::Pseudo,
            init_median: 10.0,
            min_depth: crate::grad::DEFAULT_MIN_DEPTH,
            max_depth: crate::grad::DEFAULT_MAX_DEPTH,
            cap: 80.0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.init_median > 0.0 && self.cap > 0.0) {
            return Err(Error::Config("init_median and cap must be positive".into()));
        }
        if !(self.min_depth > 0.0 && self.max_depth > self.min_depth) {
            return Err(Error::Config(
                "depth bounds must satisfy 0 < min < max".into(),
            ));
        }
        self.optimizer.validate()
    }
}

/// Forward-splats `depth_a` to the nearest pixel of view b with a depth test; holes take the value
/// of the nearest filled pixel (breadth-first, fixed neighbour order).
pub fn splat_depth(
    depth_a: &ScalarGrid,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
) -> Result<ScalarGrid> {
    let flow = compute_warp(depth_a, pose, k)?;
    let (w, h) = (k.width, k.height);
    let mut out = vec![f64::INFINITY; w * h];
    for i in 0..depth_a.len() {
        if !flow.is_valid(i) {
            continue;
        }
        let (x, y, z) = (
            flow.x.values()[i],
            flow.y.values()[i],
            flow.depth.values()[i],
        );
        let (xx, yy) = (x.round(), y.round());
        if xx >= 0.0 && yy >= 0.0 && (xx as usize) < w && (yy as usize) < h {
            let j = yy as usize * w + xx as usize;
            out[j] = out[j].min(z);
        }
    }
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&j| out[j].is_finite()).collect();
    if queue.is_empty() {
        let fallback = median(depth_a.values()).ok_or(Error::EmptyValidSet)?;
        return ScalarGrid::new(h, w, vec![fallback; w * h]);
    }
    while let Some(j) = queue.pop_front() {
        let (x, y) = (j % w, j / w);
        let neighbours = [
            (x > 0).then(|| j - 1),
            (x + 1 < w).then(|| j + 1),
            (y > 0).then(|| j - w),
            (y + 1 < h).then(|| j + w),
        ];
        for n in neighbours.into_iter().flatten() {
            if !out[n].is_finite() {
                out[n] = out[j];
                queue.push_back(n);
            }
        }
    }
    ScalarGrid::new(h, w, out)
}

/// Initial depth of both views.
pub fn initial_depths(sample: &SceneSample, cfg: &TrainConfig) -> Result<(ScalarGrid, ScalarGrid)> {
    let depth_a = match cfg.init {
        InitMode::Pseudo => {
            let m = median(sample.pseudo_depth.values()).ok_or(Error::EmptyValidSet)?;
            sample.pseudo_depth.map(|d| d * cfg.init_median / m)
        }
        InitMode::Constant => ScalarGrid::filled(sample.height(), sample.width(), cfg.init_median),
    };
    let depth_a = depth_a.map(|d| d.clamp(cfg.min_depth, cfg.max_depth));
    let depth_b = splat_depth(&depth_a, &sample.pose_ab, &sample.intrinsics)?;
    Ok((depth_a, depth_b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    pub depth_a: ScalarGrid,
    pub depth_b: ScalarGrid,
    pub pose: PoseSE3,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub metrics: RegionReports,
}

/// Fits depth to one scene from the configured initialization and scores view a.
pub fn train(
    sample: &SceneSample,
    objective_cfg: &ObjectiveConfig,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    sample.validate()?;
    let objective = Objective::new(sample, objective_cfg)?;
    let (a, b) = initial_depths(sample, cfg)?;
    let a = DepthField::from_depth(&a, cfg.min_depth, cfg.max_depth)?;
    let b = DepthField::from_depth(&b, cfg.min_depth, cfg.max_depth)?;
    let result = optimize_depth(&objective, a, b, sample.pose_ab, &cfg.optimizer)?;
    let depth_a = result.depth_a.depth();
    let metrics = region_metrics(
        &depth_a,
        &sample.depth_a,
        &sample.dynamic_mask,
        None,
        cfg.cap,
    )?;
    Ok(TrainResult {
        depth_a,
        depth_b: result.depth_b.depth(),
        pose: result.pose,
        history: result.history,
        converged: result.converged,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(10.0, 10.0, 3.5, 2.5, 8, 6).unwrap()
    }

    #[test]
    fn splat_identity_is_identity() {
        let d = ScalarGrid::from_fn(6, 8, |x, y| 2.0 + 0.1 * x as f64 + 0.2 * y as f64);
        let out = splat_depth(&d, &PoseSE3::identity(), &camera()).unwrap();
        for (a, b) in d.values().iter().zip(out.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn splat_fills_every_pixel() {
        let d = ScalarGrid::filled(6, 8, 3.0);
        let out = splat_depth(&d, &PoseSE3::from_translation([0.6, 0.0, 0.0]), &camera()).unwrap();
        assert!(out.values().iter().all(|v| (*v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn init_modes() {
        let cfg =
            crate::synthetic::SceneConfig::preset(crate::synthetic::ScenePreset::Static, 16, 12, 1);
        let s = crate::synthetic::render_scene(&cfg).unwrap();
        let (a, _) = initial_depths(
            &s,
            &TrainConfig {
                init: InitMode::Constant,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(a.values().iter().all(|v| *v == 10.0));
        let (a, b) = initial_depths(&s, &TrainConfig::default()).unwrap();
        assert!((median(a.values()).unwrap() - 10.0).abs() < 1e-9);
        assert!(b.all_finite());
    }
}
