//! Plain-text run configuration.
//!
//! Grammar:
//!
//! ```text
//! # comment, also allowed after a value
//! [section]
//! key = value
//! ```
//!
//! Every key belongs to a section, sections do not nest, and unknown sections
//! or keys are rejected with their line number. Keys left out keep their
//! defaults. Optional counts accept `auto`.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::PoseSE3;
use crate::grad::Method;
use crate::objective::{Ablation, ObjectiveConfig};
use crate::prior::{EdgeSamplingConfig, RankingConfig, TotalWeights};
use crate::selfsup::{PhotometricConfig, SelfSupWeights};
use crate::synthetic::{
    PseudoDepthConfig, SceneConfig, ScenePreset, DEFAULT_HEIGHT, DEFAULT_WIDTH, PRESET_BOX_SPEED,
    PRESET_CAMERA_MOTION,
};
use crate::train::{InitMode, TrainConfig};

/// Layout and motion of the synthetic scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSettings {
    pub preset: ScenePreset,
    pub width: usize,
    pub height: usize,
    pub noise: f64,
    /// Lateral displacement of the box between the frames, in meters.
    pub box_speed: f64,
    /// Rotation vector and translation of the camera motion.
    pub camera: [f64; 6],
}

impl Default for SceneSettings {
    fn default() -> Self {
        let base = SceneConfig::preset(ScenePreset::Dynamic, DEFAULT_WIDTH, DEFAULT_HEIGHT, 0);
        Self {
            preset: ScenePreset::Dynamic,
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            noise: base.noise,
            box_speed: PRESET_BOX_SPEED,
            camera: PRESET_CAMERA_MOTION,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckSettings {
    /// Side of the center crop the check runs on.
    pub crop: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Relative error denominators are at least this fraction of the term's
    /// largest gradient entry.
    pub floor: f64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            crop: 16,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneSettings,
    pub pseudo: PseudoDepthConfig,
    pub photometric: PhotometricConfig,
    pub automask: bool,
    pub detach_mask: bool,
    pub ablation: Ablation,
    pub ranking: RankingConfig,
    pub edges: EdgeSamplingConfig,
    pub weights: TotalWeights,
    /// Weight of the edge-aware smoothness term where it is used.
    pub smoothness: f64,
    pub train: TrainConfig,
    pub cap: f64,
    pub gradcheck: GradcheckSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let objective = ObjectiveConfig::default();
        Self {
            seed: 0,
            scene: SceneSettings::default(),
            pseudo: PseudoDepthConfig::default(),
            photometric: PhotometricConfig::default(),
            automask: objective.automask,
            detach_mask: objective.detach_mask,
            ablation: Ablation::Full,
            ranking: RankingConfig::default(),
            edges: EdgeSamplingConfig::default(),
            weights: TotalWeights::default(),
            smoothness: SelfSupWeights::default().gamma,
            train: TrainConfig::default(),
            cap: 80.0,
            gradcheck: GradcheckSettings::default(),
        }
    }
}

fn parse_value<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse `{value}`"))
}

fn parse_optional(value: &str) -> std::result::Result<Option<usize>, String> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_value(value).map(Some)
    }
}

fn show_optional(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_string(), |n| n.to_string())
}

fn parse_ablation(value: &str) -> std::result::Result<Ablation, String> {
    Ablation::from_name(value).ok_or_else(|| format!("unknown ablation `{value}`"))
}

const SECTIONS: [&str; 12] = [
    "run",
    "scene",
    "pseudo",
    "photometric",
    "objective",
    "ranking",
    "edges",
    "weights",
    "optimizer",
    "train",
    "eval",
    "gradcheck",
];

const CAMERA_KEYS: [&str; 6] = [
    "camera_rx",
    "camera_ry",
    "camera_rz",
    "camera_tx",
    "camera_ty",
    "camera_tz",
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<&str> = None;
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').map(str::trim).ok_or_else(|| {
                    Error::Config(format!("line {line_no}: malformed section header `{line}`"))
                })?;
                section = Some(SECTIONS.iter().find(|s| **s == name).copied().ok_or_else(
                    || Error::Config(format!("line {line_no}: unknown section `{name}`")),
                )?);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "line {line_no}: expected `key = value`, got `{line}`"
                    ))
                })?;
            let section = section.ok_or_else(|| {
                Error::Config(format!("line {line_no}: key `{key}` outside any section"))
            })?;
            if !seen.insert(format!("{section}.{key}")) {
                return Err(Error::Config(format!(
                    "line {line_no}: duplicate key `{section}.{key}`"
                )));
            }
            cfg.set(section, key, value)
                .map_err(|e| Error::Config(format!("line {line_no}: key `{key}`: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> std::result::Result<(), String> {
        match (section, key) {
            ("run", "seed") => self.seed = parse_value(v)?,
            ("scene", "preset") => {
                self.scene.preset =
                    ScenePreset::from_name(v).ok_or_else(|| format!("unknown preset `{v}`"))?
            }
            ("scene", "width") => self.scene.width = parse_value(v)?,
            ("scene", "height") => self.scene.height = parse_value(v)?,
            ("scene", "noise") => self.scene.noise = parse_value(v)?,
            ("scene", "box_speed") => self.scene.box_speed = parse_value(v)?,
            ("scene", k) if CAMERA_KEYS.contains(&k) => {
                let i = CAMERA_KEYS
                    .iter()
                    .position(|c| *c == k)
                    .expect("listed key");
                self.scene.camera[i] = parse_value(v)?;
            }
            ("pseudo", "gain") => self.pseudo.gain = parse_value(v)?,
            ("pseudo", "exponent") => self.pseudo.exponent = parse_value(v)?,
            ("pseudo", "offset") => self.pseudo.offset = parse_value(v)?,
            ("pseudo", "radius") => self.pseudo.radius = parse_value(v)?,
            ("pseudo", "tau_check") => self.pseudo.tau_check = parse_value(v)?,
            ("pseudo", "audit_pairs") => self.pseudo.audit_pairs = parse_value(v)?,
            ("photometric", "lambda") => self.photometric.lambda = parse_value(v)?,
            ("photometric", "ssim_c1") => self.photometric.ssim_c1 = parse_value(v)?,
            ("photometric", "ssim_c2") => self.photometric.ssim_c2 = parse_value(v)?,
            ("photometric", "window") => self.photometric.window = parse_value(v)?,
            ("objective", "automask") => self.automask = parse_value(v)?,
            ("objective", "detach_mask") => self.detach_mask = parse_value(v)?,
            ("objective", "ablation") => self.ablation = parse_ablation(v)?,
            ("ranking", "tau") => self.ranking.tau = parse_value(v)?,
            ("ranking", "dynamic_fraction") => self.ranking.dynamic_fraction = parse_value(v)?,
            ("ranking", "pairs_dynamic") => self.ranking.pairs_dynamic = parse_optional(v)?,
            ("ranking", "pairs_global") => self.ranking.pairs_global = parse_optional(v)?,
            ("ranking", "log_depth") => self.ranking.log_depth = parse_value(v)?,
            ("edges", "percentile") => self.edges.percentile = parse_value(v)?,
            ("edges", "offset_min") => self.edges.offset_min = parse_value(v)?,
            ("edges", "offset_max") => self.edges.offset_max = parse_value(v)?,
            ("edges", "pairs") => self.edges.pairs = parse_optional(v)?,
            ("weights", "alpha") => self.weights.alpha = parse_value(v)?,
            ("weights", "beta") => self.weights.beta = parse_value(v)?,
            ("weights", "gamma") => self.weights.gamma = parse_value(v)?,
            ("weights", "delta") => self.weights.delta = parse_value(v)?,
            ("weights", "epsilon") => self.weights.epsilon = parse_value(v)?,
            ("weights", "smoothness") => self.smoothness = parse_value(v)?,
            ("optimizer", "method") => {
                self.train.optimizer.method =
                    Method::from_name(v).ok_or_else(|| format!("unknown method `{v}`"))?
            }
            ("optimizer", "learning_rate") => self.train.optimizer.learning_rate = parse_value(v)?,
            ("optimizer", "pose_learning_rate") => {
                self.train.optimizer.pose_learning_rate = parse_value(v)?
            }
            ("optimizer", "max_iters") => self.train.optimizer.max_iters = parse_value(v)?,
            ("optimizer", "final_lr_fraction") => {
                self.train.optimizer.final_lr_fraction = parse_value(v)?
            }
            ("optimizer", "convergence_tol") => {
                self.train.optimizer.convergence_tol = parse_value(v)?
            }
            ("optimizer", "beta1") => self.train.optimizer.beta1 = parse_value(v)?,
            ("optimizer", "beta2") => self.train.optimizer.beta2 = parse_value(v)?,
            ("optimizer", "epsilon") => self.train.optimizer.epsilon = parse_value(v)?,
            ("optimizer", "optimize_pose") => self.train.optimizer.optimize_pose = parse_value(v)?,
            ("optimizer", "optimize_depth_b") => {
                self.train.optimizer.optimize_depth_b = parse_value(v)?
            }
            ("train", "init") => {
                self.train.init =
                    InitMode::from_name(v).ok_or_else(|| format!("unknown init mode `{v}`"))?
            }
            ("train", "init_median") => self.train.init_median = parse_value(v)?,
            ("train", "min_depth") => self.train.min_depth = parse_value(v)?,
            ("train", "max_depth") => self.train.max_depth = parse_value(v)?,
            ("eval", "cap") => self.cap = parse_value(v)?,
            ("gradcheck", "crop") => self.gradcheck.crop = parse_value(v)?,
            ("gradcheck", "step") => self.gradcheck.step = parse_value(v)?,
            ("gradcheck", "tolerance") => self.gradcheck.tolerance = parse_value(v)?,
            ("gradcheck", "floor") => self.gradcheck.floor = parse_value(v)?,
            _ => return Err(format!("unknown key `{section}.{key}`")),
        }
        Ok(())
    }

    /// The configuration in the same grammar `parse` reads, every key spelled out.
    pub fn to_text(&self) -> String {
        let o = &self.train.optimizer;
        let mut sections: Vec<(&str, Vec<(&str, String)>)> = vec![
            ("run", vec![("seed", self.seed.to_string())]),
            (
                "scene",
                vec![
                    ("preset", self.scene.preset.name().to_string()),
                    ("width", self.scene.width.to_string()),
                    ("height", self.scene.height.to_string()),
                    ("noise", self.scene.noise.to_string()),
                    ("box_speed", self.scene.box_speed.to_string()),
                ],
            ),
            (
                "pseudo",
                vec![
                    ("gain", self.pseudo.gain.to_string()),
                    ("exponent", self.pseudo.exponent.to_string()),
                    ("offset", self.pseudo.offset.to_string()),
                    ("radius", self.pseudo.radius.to_string()),
                    ("tau_check", self.pseudo.tau_check.to_string()),
                    ("audit_pairs", self.pseudo.audit_pairs.to_string()),
                ],
            ),
            (
                "photometric",
                vec![
                    ("lambda", self.photometric.lambda.to_string()),
                    ("ssim_c1", self.photometric.ssim_c1.to_string()),
                    ("ssim_c2", self.photometric.ssim_c2.to_string()),
                    ("window", self.photometric.window.to_string()),
                ],
            ),
            (
                "objective",
                vec![
                    ("automask", self.automask.to_string()),
                    ("detach_mask", self.detach_mask.to_string()),
                    ("ablation", self.ablation.name().to_string()),
                ],
            ),
            (
                "ranking",
                vec![
                    ("tau", self.ranking.tau.to_string()),
                    (
                        "dynamic_fraction",
                        self.ranking.dynamic_fraction.to_string(),
                    ),
                    ("pairs_dynamic", show_optional(self.ranking.pairs_dynamic)),
                    ("pairs_global", show_optional(self.ranking.pairs_global)),
                    ("log_depth", self.ranking.log_depth.to_string()),
                ],
            ),
            (
                "edges",
                vec![
                    ("percentile", self.edges.percentile.to_string()),
                    ("offset_min", self.edges.offset_min.to_string()),
                    ("offset_max", self.edges.offset_max.to_string()),
                    ("pairs", show_optional(self.edges.pairs)),
                ],
            ),
            (
                "weights",
                vec![
                    ("alpha", self.weights.alpha.to_string()),
                    ("beta", self.weights.beta.to_string()),
                    ("gamma", self.weights.gamma.to_string()),
                    ("delta", self.weights.delta.to_string()),
                    ("epsilon", self.weights.epsilon.to_string()),
                    ("smoothness", self.smoothness.to_string()),
                ],
            ),
            (
                "optimizer",
                vec![
                    ("method", o.method.name().to_string()),
                    ("learning_rate", o.learning_rate.to_string()),
                    ("pose_learning_rate", o.pose_learning_rate.to_string()),
                    ("max_iters", o.max_iters.to_string()),
                    ("final_lr_fraction", o.final_lr_fraction.to_string()),
                    ("convergence_tol", o.convergence_tol.to_string()),
                    ("beta1", o.beta1.to_string()),
                    ("beta2", o.beta2.to_string()),
                    ("epsilon", o.epsilon.to_string()),
                    ("optimize_pose", o.optimize_pose.to_string()),
                    ("optimize_depth_b", o.optimize_depth_b.to_string()),
                ],
            ),
            (
                "train",
                vec![
                    ("init", self.train.init.name().to_string()),
                    ("init_median", self.train.init_median.to_string()),
                    ("min_depth", self.train.min_depth.to_string()),
                    ("max_depth", self.train.max_depth.to_string()),
                ],
            ),
            ("eval", vec![("cap", self.cap.to_string())]),
            (
                "gradcheck",
                vec![
                    ("crop", self.gradcheck.crop.to_string()),
                    ("step", self.gradcheck.step.to_string()),
                    ("tolerance", self.gradcheck.tolerance.to_string()),
                    ("floor", self.gradcheck.floor.to_string()),
                ],
            ),
        ];
        for (k, v) in CAMERA_KEYS.iter().zip(self.scene.camera) {
            sections[1].1.push((k, v.to_string()));
        }
        let mut out = String::new();
        for (i, (name, entries)) in sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{name}]");
            for (k, v) in entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.pseudo.validate()?;
        self.photometric.validate()?;
        self.ranking.validate()?;
        self.edges.validate()?;
        self.weights.validate()?;
        if !(self.smoothness >= 0.0) {
            return Err(Error::Config(
                "smoothness weight must be nonnegative".into(),
            ));
        }
        self.train.validate()?;
        if !(self.cap > 0.0) {
            return Err(Error::Config("eval cap must be positive".into()));
        }
        if self.gradcheck.crop < 3
            || !(self.gradcheck.step > 0.0)
            || !(self.gradcheck.tolerance > 0.0)
            || !(self.gradcheck.floor >= 0.0)
        {
            return Err(Error::Config(
                "gradcheck needs crop >= 3, positive step and tolerance and a nonnegative floor"
                    .into(),
            ));
        }
        if self.scene.width < 3 || self.scene.height < 3 {
            return Err(Error::Config("scene must be at least 3 x 3 pixels".into()));
        }
        Ok(())
    }

    /// The synthetic scene this configuration describes.
    pub fn scene_config(&self) -> SceneConfig {
        let s = &self.scene;
        let mut cfg = SceneConfig::preset(s.preset, s.width, s.height, self.seed);
        cfg.noise = s.noise;
        cfg.camera_motion = PoseSE3::from_params(s.camera);
        if let Some(b) = cfg.moving_box.as_mut() {
            if s.preset == ScenePreset::Dynamic {
                b.displacement = PoseSE3::from_translation([s.box_speed, 0.0, 0.0]);
            }
        }
        cfg.pseudo = PseudoDepthConfig {
            seed: self.seed,
            ..self.pseudo
        };
        cfg
    }

    pub fn selfsup_weights(&self) -> SelfSupWeights {
        SelfSupWeights {
            alpha: self.weights.alpha,
            beta: self.weights.beta,
            gamma: self.smoothness,
        }
    }

    /// Objective settings for `ablation` (the configured one when `None`).
    pub fn objective_config(&self, ablation: Option<Ablation>) -> ObjectiveConfig {
        let ablation = ablation.unwrap_or(self.ablation);
        ObjectiveConfig {
            photometric: self.photometric,
            ranking: RankingConfig {
                seed: self.seed,
                ..self.ranking
            },
            edges: self.edges,
            weights: ablation.weights(&self.weights, &self.selfsup_weights()),
            automask: self.automask,
            detach_mask: self.detach_mask,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train;
        t.optimizer.seed = self.seed;
        t.cap = self.cap;
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_paper() {
        let c = RunConfig::default();
        assert_eq!(c.photometric.lambda, 0.15);
        assert_eq!(c.ranking.tau, 0.15);
        assert_eq!(c.ranking.dynamic_fraction, 0.2);
        let w = c.weights;
        assert_eq!(
            [w.alpha, w.beta, w.gamma, w.delta, w.epsilon],
            [1.0, 0.5, 0.1, 0.1, 0.1]
        );
        assert_eq!(c.smoothness, 0.1);
        assert_eq!(c.train.optimizer.max_iters, 500);
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.seed = 17;
        c.ranking.pairs_dynamic = Some(40);
        c.scene.camera[3] = -0.7;
        c.ablation = Ablation::NoLsr;
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_sections_and_partial_files() {
        let c =
            RunConfig::parse("# top\n[run]\nseed = 4 # trailing\n\n[ranking]\n tau=0.1\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.ranking.tau, 0.1);
        assert_eq!(c.ranking.dynamic_fraction, 0.2);
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let err = RunConfig::parse("[run]\nseed = 1\n\n[ranking]\ntua = 0.2\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 5") && err.contains("tua"), "{err}");
        let err = RunConfig::parse("[nope]\n").unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("nope"), "{err}");
        let err = RunConfig::parse("seed = 1\n").unwrap_err().to_string();
        assert!(err.contains("outside"), "{err}");
        let err = RunConfig::parse("[run]\nseed = x\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2") && err.contains("seed"), "{err}");
        assert!(RunConfig::parse("[run]\nseed = 1\nseed = 2\n").is_err());
        assert!(RunConfig::parse("[ranking]\ntau = -1\n").is_err());
    }

    #[test]
    fn seed_reaches_every_stochastic_part() {
        let c = RunConfig {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(c.scene_config().seed, 9);
        assert_eq!(c.scene_config().pseudo.seed, 9);
        assert_eq!(c.objective_config(None).ranking.seed, 9);
        assert_eq!(c.train_config().optimizer.seed, 9);
    }

    #[test]
    fn default_scene_matches_preset() {
        let c = RunConfig::default();
        assert_eq!(
            c.scene_config(),
            SceneConfig::preset(ScenePreset::Dynamic, 64, 48, 0)
        );
    }
}
