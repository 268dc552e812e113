//! The full differentiable objective over two depth maps and a relative pose.
//!
//! Evaluation runs in two phases. [`Objective::freeze`] computes, at the
//! current estimate, every discrete or stop-gradient quantity: the warp
//! validity mask, the auto-mask, the self-discovered mask weights, the sampled
//! ranking pairs and their labels. [`Objective::terms`] then evaluates every
//! loss term as a smooth function of the depth values and a local pose
//! perturbation, generically over [`Real`], so the same code yields plain
//! values for finite differences and taped values for exact gradients.

use std::fmt;

use crate::autodiff::{Real, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{bilinear_at, compute_warp, warp_pixel, PoseSE3, RigidTransform};
use crate::grid::ScalarGrid;
use crate::prior::{
    cdr_value, confident_pairs, dynamic_focused_sampling, edge_guided_sampling, ern_value,
    normal_matching_value, normals_value, EdgeSamplingConfig, LabelledPair, RankingConfig,
    TotalWeights,
};
use crate::scene::SceneSample;
use crate::selfsup::{
    masked_mean, normalized_difference, photometric_value, smoothness_value, PhotometricConfig,
    SelfSupWeights, SmoothnessWeights,
};

/// Every scalar loss the objective can weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossTerm {
    /// Unweighted photometric error `L_P`.
    Photometric,
    /// Mask-weighted photometric error `L_P^M`.
    WeightedPhotometric,
    /// Geometry consistency `L_G`.
    Geometry,
    /// Edge-aware smoothness `L_S`.
    Smoothness,
    /// Normal matching `L_N`.
    NormalMatching,
    /// Confident depth ranking `L_CDR`.
    Ranking,
    /// Edge-aware relative normal `L_ERN`.
    RelativeNormal,
}

impl LossTerm {
    pub const ALL: [LossTerm; 7] = [
        LossTerm::Photometric,
        LossTerm::WeightedPhotometric,
        LossTerm::Geometry,
        LossTerm::Smoothness,
        LossTerm::NormalMatching,
        LossTerm::Ranking,
        LossTerm::RelativeNormal,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Photometric => "photometric",
            LossTerm::WeightedPhotometric => "weighted_photometric",
            LossTerm::Geometry => "geometry",
            LossTerm::Smoothness => "smoothness",
            LossTerm::NormalMatching => "normal",
            LossTerm::Ranking => "cdr",
            LossTerm::RelativeNormal => "ern",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One nonnegative weight per [`LossTerm`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermWeights([f64; 7]);

impl TermWeights {
    pub fn zero() -> Self {
        Self([0.0; 7])
    }

    /// `alpha L_P^M + beta L_G + gamma L_S`.
    pub fn self_supervised(w: &SelfSupWeights) -> Self {
        Self::zero()
            .with(LossTerm::WeightedPhotometric, w.alpha)
            .with(LossTerm::Geometry, w.beta)
            .with(LossTerm::Smoothness, w.gamma)
    }

    /// `alpha L_P^M + beta L_G + gamma L_N + delta L_CDR + epsilon L_ERN`.
    pub fn full(w: &TotalWeights) -> Self {
        Self::zero()
            .with(LossTerm::WeightedPhotometric, w.alpha)
            .with(LossTerm::Geometry, w.beta)
            .with(LossTerm::NormalMatching, w.gamma)
            .with(LossTerm::Ranking, w.delta)
            .with(LossTerm::RelativeNormal, w.epsilon)
    }

    pub fn with(mut self, term: LossTerm, weight: f64) -> Self {
        self.0[term.index()] = weight;
        self
    }

    pub fn get(&self, term: LossTerm) -> f64 {
        self.0[term.index()]
    }

    pub fn validate(&self) -> Result<()> {
        match LossTerm::ALL.into_iter().find(|t| !(self.get(*t) >= 0.0)) {
            Some(t) => Err(Error::Config(format!("weight of {t} must be nonnegative"))),
            None => Ok(()),
        }
    }

    pub fn combine<S: Real>(&self, terms: &[S; 7]) -> S {
        let mut acc = S::zero();
        for t in LossTerm::ALL {
            let w = self.get(t);
            if w != 0.0 {
                acc = acc + terms[t.index()] * w;
            }
        }
        acc
    }
}

/// Objective variants used for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// All refinement terms.
    Full,
    /// Without the ranking term.
    NoDrr,
    /// Without normal terms; the edge-aware smoothness term is restored.
    NoLsr,
    /// The two-view objective only.
    Baseline,
}

impl Ablation {
    pub fn weights(self, total: &TotalWeights, selfsup: &SelfSupWeights) -> TermWeights {
        match self {
            Ablation::Full => TermWeights::full(total),
            Ablation::NoDrr => TermWeights::full(total).with(LossTerm::Ranking, 0.0),
            Ablation::NoLsr => TermWeights::full(total)
                .with(LossTerm::NormalMatching, 0.0)
                .with(LossTerm::RelativeNormal, 0.0)
                .with(LossTerm::Smoothness, selfsup.gamma),
            Ablation::Baseline => TermWeights::self_supervised(selfsup),
        }
    }

    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoDrr,
        Ablation::NoLsr,
        Ablation::Baseline,
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoDrr => "no-drr",
            Ablation::NoLsr => "no-lsr",
            Ablation::Baseline => "baseline",
        }
    }
}

/// Everything the objective needs besides the scene.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub photometric: PhotometricConfig,
    pub ranking: RankingConfig,
    pub edges: EdgeSamplingConfig,
    pub weights: TermWeights,
    /// Drop pixels whose warped error does not beat the unwarped source.
    pub automask: bool,
    /// Treat the self-discovered mask as a constant of the evaluation point.
    pub detach_mask: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            photometric: PhotometricConfig::default(),
            ranking: RankingConfig::default(),
            edges: EdgeSamplingConfig::default(),
            weights: TermWeights::full(&TotalWeights::default()),
            automask: true,
            detach_mask: true,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.photometric.validate()?;
        self.ranking.validate()?;
        self.edges.validate()?;
        self.weights.validate()
    }
}

/// Quantities held constant while differentiating at one evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenContext {
    /// Warp targets inside the image with positive depth.
    pub geometry_valid: Vec<bool>,
    /// `geometry_valid` restricted by the auto-mask.
    pub photometric_valid: Vec<bool>,
    /// Self-discovered mask when detached.
    pub mask_weight: Option<Vec<f64>>,
    pub ranking_pairs: Vec<LabelledPair>,
    /// Pixels selected as dynamic by the ranking sampler.
    pub dynamic: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Term values, weighted total, and gradient of the total.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub terms: [f64; 7],
    pub weights: TermWeights,
    pub grad_depth_a: ScalarGrid,
    pub grad_depth_b: ScalarGrid,
    /// Derivative with respect to the local perturbation `(omega, v)` of the pose.
    pub grad_pose: [f64; 6],
    pub warnings: Vec<String>,
}

impl LossReport {
    pub fn term(&self, term: LossTerm) -> f64 {
        self.terms[term.index()]
    }

    /// Terms that carry a nonzero weight, in canonical order.
    pub fn weighted_terms(&self) -> Vec<(LossTerm, f64, f64)> {
        LossTerm::ALL
            .into_iter()
            .filter(|t| self.weights.get(*t) != 0.0)
            .map(|t| (t, self.weights.get(t), self.term(t)))
            .collect()
    }
}

/// Gradient of one term with respect to all variables.
#[derive(Clone, Debug, PartialEq)]
pub struct TermGradient {
    pub value: f64,
    /// Depth of view a, then depth of view b, then the six pose parameters.
    pub gradient: Vec<f64>,
}

/// How far a point is from the kinks of `|.|` in the residual terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualMargins {
    /// Smallest photometric residual, in pixels of warp displacement.
    pub photometric: f64,
    /// Smallest normal or relative normal residual, in depth units of the
    /// single depth value it is most sensitive to.
    pub normal: f64,
}

/// The objective bound to one scene and configuration.
pub struct Objective<'a> {
    sample: &'a SceneSample,
    cfg: &'a ObjectiveConfig,
    smoothness: SmoothnessWeights,
    pseudo_normals: Vec<[f64; 3]>,
    edge_pairs: Vec<(usize, usize)>,
    warnings: Vec<String>,
}

impl<'a> Objective<'a> {
    pub fn new(sample: &'a SceneSample, cfg: &'a ObjectiveConfig) -> Result<Self> {
        cfg.validate()?;
        sample.validate()?;
        let k = &sample.intrinsics;
        let (pseudo_normals, _) = normals_value(
            sample.pseudo_depth.values(),
            sample.width(),
            sample.height(),
            k,
        );
        let edges = edge_guided_sampling(
            &sample.image_a,
            cfg.edges.pairs,
            cfg.ranking.seed,
            &cfg.edges,
        )?;
        let mut warnings = Vec::new();
        if edges.no_edges {
            warnings
                .push("no edge pixels in the target image; relative normal loss is 0".to_string());
        }
        Ok(Self {
            sample,
            cfg,
            smoothness: SmoothnessWeights::from_image(&sample.image_a),
            pseudo_normals,
            edge_pairs: edges.pairs.index_pairs(),
            warnings,
        })
    }

    pub fn sample(&self) -> &SceneSample {
        self.sample
    }

    pub fn config(&self) -> &ObjectiveConfig {
        self.cfg
    }

    pub fn pixel_count(&self) -> usize {
        self.sample.width() * self.sample.height()
    }

    /// Total number of variables: two depth maps and six pose parameters.
    pub fn variable_count(&self) -> usize {
        2 * self.pixel_count() + 6
    }

    pub fn edge_pairs(&self) -> &[(usize, usize)] {
        &self.edge_pairs
    }

    /// Distances to the kinks of the absolute values inside the photometric,
    /// normal and relative normal terms at the given point.
    pub fn residual_margins(
        &self,
        depth_a: &ScalarGrid,
        depth_b: &ScalarGrid,
        pose: &PoseSE3,
    ) -> Result<ResidualMargins> {
        let s = self.sample;
        let (w, h) = (s.width(), s.height());
        let flow = compute_warp(depth_a, pose, &s.intrinsics)?;
        depth_b.ensure_positive()?;
        let mut photometric = f64::INFINITY;
        let step = 1e-4;
        for i in 0..w * h {
            if !flow.is_valid(i) {
                continue;
            }
            let (x, y) = (flow.x.values()[i], flow.y.values()[i]);
            for (a, b) in s.image_a.channels().iter().zip(s.image_b.channels()) {
                let v = b.values();
                let at = |x: f64, y: f64| bilinear_at(w, h, x, y, |j| v[j]);
                let slope = ((at(x + step, y) - at(x - step, y)).abs()
                    + (at(x, y + step) - at(x, y - step)).abs())
                    / (2.0 * step);
                let residual = (a.values()[i] - at(x, y)).abs();
                photometric = photometric.min(residual / slope.max(1e-12));
            }
        }

        // Sensitivity of every normal residual to each single depth value,
        // from one-sided differences over the 3x3 neighbourhood it touches.
        let dot = |p: &[f64; 3], q: &[f64; 3]| p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
        let target = &self.pseudo_normals;
        let (normals, _) = normals_value(depth_a.values(), w, h, &s.intrinsics);
        let pair_dot = |n: &[[f64; 3]], &(a, b): &(usize, usize)| dot(&n[a], &n[b]);
        let mut slope_n = vec![[0.0f64; 3]; w * h];
        let mut slope_e = vec![0.0f64; self.edge_pairs.len()];
        let mut touching = vec![Vec::new(); w * h];
        for (p, &(a, b)) in self.edge_pairs.iter().enumerate() {
            touching[a].push(p);
            touching[b].push(p);
        }
        let mut probe = depth_a.values().to_vec();
        for j in 0..w * h {
            let eps = 1e-6 * probe[j];
            probe[j] += eps;
            let (moved, _) = normals_value(&probe, w, h, &s.intrinsics);
            probe[j] = depth_a.values()[j];
            let (x, y) = (j % w, j / w);
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let i = yy * w + xx;
                    for k in 0..3 {
                        slope_n[i][k] =
                            slope_n[i][k].max((moved[i][k] - normals[i][k]).abs() / eps);
                    }
                    for &p in &touching[i] {
                        let pair = &self.edge_pairs[p];
                        slope_e[p] = slope_e[p]
                            .max((pair_dot(&moved, pair) - pair_dot(&normals, pair)).abs() / eps);
                    }
                }
            }
        }
        let mut normal = f64::INFINITY;
        for i in 0..w * h {
            for k in 0..3 {
                normal =
                    normal.min((normals[i][k] - target[i][k]).abs() / slope_n[i][k].max(1e-12));
            }
        }
        for (pair, slope) in self.edge_pairs.iter().zip(&slope_e) {
            normal = normal
                .min((pair_dot(&normals, pair) - pair_dot(target, pair)).abs() / slope.max(1e-12));
        }
        Ok(ResidualMargins {
            photometric,
            normal,
        })
    }

    /// Computes masks, mask weights and ranking pairs at the given estimate.
    pub fn freeze(
        &self,
        depth_a: &ScalarGrid,
        depth_b: &ScalarGrid,
        pose: &PoseSE3,
        sampling_seed: u64,
    ) -> Result<FrozenContext> {
        let s = self.sample;
        let n = self.pixel_count();
        depth_b.ensure_positive()?;
        let flow = compute_warp(depth_a, pose, &s.intrinsics)?;
        let geometry_valid: Vec<bool> = (0..n).map(|i| flow.is_valid(i)).collect();
        if !geometry_valid.iter().any(|v| *v) {
            return Err(Error::EmptyValidSet);
        }
        let mut warnings = self.warnings.clone();

        // Values at the estimate with every pixel's warp, to build the masks.
        let probe = FrozenContext {
            geometry_valid: geometry_valid.clone(),
            photometric_valid: geometry_valid.clone(),
            mask_weight: None,
            ranking_pairs: Vec::new(),
            dynamic: Vec::new(),
            warnings: Vec::new(),
        };
        let fields = self.fields(&probe, depth_a.values(), depth_b.values(), pose, [0.0; 6]);

        let photometric_valid = if self.cfg.automask {
            let identity = photometric_value(
                &channels_of(&s.image_a),
                &channels_of(&s.image_b),
                s.width(),
                s.height(),
                &self.cfg.photometric,
            );
            (0..n)
                .map(|i| geometry_valid[i] && fields.photometric[i] < identity[i])
                .collect()
        } else {
            geometry_valid.clone()
        };
        if !photometric_valid.iter().any(|v| *v) {
            warnings
                .push("auto-mask removed every valid pixel; photometric terms are 0".to_string());
        }

        let mask: Vec<f64> = fields.depth_diff.iter().map(|d| 1.0 - d).collect();
        let mask_grid = ScalarGrid::new(s.height(), s.width(), mask.clone())?;
        let ranking_cfg = RankingConfig {
            seed: sampling_seed,
            ..self.cfg.ranking
        };
        let sampling = dynamic_focused_sampling(&mask_grid, &ranking_cfg)?;
        let ranking_pairs = confident_pairs(&s.pseudo_depth, &sampling.pairs, ranking_cfg.tau)?;
        if ranking_pairs.is_empty() {
            warnings.push("no confident ranking pairs; ranking loss is 0".to_string());
        }

        Ok(FrozenContext {
            geometry_valid,
            photometric_valid,
            mask_weight: self.cfg.detach_mask.then_some(mask),
            ranking_pairs,
            dynamic: sampling.dynamic,
            warnings,
        })
    }

    fn fields<S: Real>(
        &self,
        ctx: &FrozenContext,
        depth_a: &[S],
        depth_b: &[S],
        base: &PoseSE3,
        params: [S; 6],
    ) -> WarpFields<S> {
        let s = self.sample;
        let (w, h) = (s.width(), s.height());
        let k = &s.intrinsics;
        let pose = RigidTransform::from_perturbation(base, params);
        let n = w * h;
        let channels = s.image_b.channels();
        let mut synthesized = vec![vec![S::zero(); n]; channels.len()];
        let mut depth_diff = vec![S::zero(); n];
        for i in 0..n {
            if !ctx.geometry_valid[i] {
                continue;
            }
            let (x, y, computed) = warp_pixel(k, &pose, i % w, i / w, depth_a[i]);
            for (c, grid) in channels.iter().enumerate() {
                let values = grid.values();
                synthesized[c][i] = bilinear_at(w, h, x, y, |j| S::cst(values[j]));
            }
            let interpolated = bilinear_at(w, h, x, y, |j| depth_b[j]);
            depth_diff[i] = normalized_difference(computed, interpolated);
        }
        let target: Vec<Vec<S>> = s
            .image_a
            .channels()
            .iter()
            .map(|c| c.values().iter().map(|v| S::cst(*v)).collect())
            .collect();
        let photometric = photometric_value(&target, &synthesized, w, h, &self.cfg.photometric);
        WarpFields {
            photometric,
            depth_diff,
        }
    }

    /// All seven term values at `depth_a`, `depth_b` and `base` perturbed by `params`.
    pub fn terms<S: Real>(
        &self,
        ctx: &FrozenContext,
        depth_a: &[S],
        depth_b: &[S],
        base: &PoseSE3,
        params: [S; 6],
    ) -> Result<[S; 7]> {
        let fields = self.fields(ctx, depth_a, depth_b, base, params);
        let geometry =
            masked_mean(&fields.depth_diff, &ctx.geometry_valid).ok_or(Error::EmptyValidSet)?;
        let photometric =
            masked_mean(&fields.photometric, &ctx.photometric_valid).unwrap_or(S::zero());
        let weighted: Vec<S> = match &ctx.mask_weight {
            Some(m) => fields
                .photometric
                .iter()
                .zip(m)
                .map(|(l, w)| *l * *w)
                .collect(),
            None => fields
                .photometric
                .iter()
                .zip(&fields.depth_diff)
                .map(|(l, d)| *l * (S::cst(1.0) - *d))
                .collect(),
        };
        let weighted = masked_mean(&weighted, &ctx.photometric_valid).unwrap_or(S::zero());
        let smoothness = smoothness_value(depth_a, &self.smoothness);

        let s = self.sample;
        let (normals, _) = normals_value(depth_a, s.width(), s.height(), &s.intrinsics);
        let normal = normal_matching_value(&normals, &self.pseudo_normals);
        let ranking =
            cdr_value(depth_a, &ctx.ranking_pairs, self.cfg.ranking.log_depth).unwrap_or(S::zero());
        let relative =
            ern_value(&normals, &self.pseudo_normals, &self.edge_pairs).unwrap_or(S::zero());

        let mut out = [S::zero(); 7];
        out[LossTerm::Photometric.index()] = photometric;
        out[LossTerm::WeightedPhotometric.index()] = weighted;
        out[LossTerm::Geometry.index()] = geometry;
        out[LossTerm::Smoothness.index()] = smoothness;
        out[LossTerm::NormalMatching.index()] = normal;
        out[LossTerm::Ranking.index()] = ranking;
        out[LossTerm::RelativeNormal.index()] = relative;
        Ok(out)
    }

    /// Plain-value terms and weighted total under a frozen context.
    pub fn evaluate(
        &self,
        ctx: &FrozenContext,
        depth_a: &[f64],
        depth_b: &[f64],
        pose: &PoseSE3,
        params: [f64; 6],
    ) -> Result<([f64; 7], f64)> {
        let terms = self.terms(ctx, depth_a, depth_b, pose, params)?;
        Ok((terms, self.cfg.weights.combine(&terms)))
    }

    /// Gradients of the requested terms (and of the weighted total when `total` is set).
    ///
    /// Returns one entry per requested term, in order, followed by the total.
    pub fn gradients(
        &self,
        ctx: &FrozenContext,
        depth_a: &[f64],
        depth_b: &[f64],
        pose: &PoseSE3,
        requested: &[LossTerm],
        total: bool,
    ) -> Result<Vec<TermGradient>> {
        let n = self.pixel_count();
        let tape = Tape::with_capacity(400 * n);
        let da: Vec<Var> = depth_a.iter().map(|v| tape.var(*v)).collect();
        let db: Vec<Var> = depth_b.iter().map(|v| tape.var(*v)).collect();
        let params: [Var; 6] = std::array::from_fn(|_| tape.var(0.0));
        let terms = self.terms(ctx, &da, &db, pose, params)?;
        let mut outputs: Vec<Var> = requested.iter().map(|t| terms[t.index()]).collect();
        if total {
            outputs.push(self.cfg.weights.combine(&terms));
        }
        Ok(outputs
            .into_iter()
            .map(|out| {
                let g = tape.gradient(out);
                let gradient = da
                    .iter()
                    .chain(&db)
                    .chain(&params)
                    .map(|v| g.wrt(*v))
                    .collect();
                TermGradient {
                    value: out.value(),
                    gradient,
                }
            })
            .collect())
    }

    /// Freezes the context at the estimate and returns values with the total's gradient.
    pub fn report(
        &self,
        depth_a: &ScalarGrid,
        depth_b: &ScalarGrid,
        pose: &PoseSE3,
        sampling_seed: u64,
    ) -> Result<LossReport> {
        let ctx = self.freeze(depth_a, depth_b, pose, sampling_seed)?;
        self.report_with(&ctx, depth_a, depth_b, pose)
    }

    pub fn report_with(
        &self,
        ctx: &FrozenContext,
        depth_a: &ScalarGrid,
        depth_b: &ScalarGrid,
        pose: &PoseSE3,
    ) -> Result<LossReport> {
        let n = self.pixel_count();
        let (terms, _) = self.evaluate(ctx, depth_a.values(), depth_b.values(), pose, [0.0; 6])?;
        let grads = self.gradients(ctx, depth_a.values(), depth_b.values(), pose, &[], true)?;
        let total = grads[0].clone();
        if total.gradient.iter().any(|g| !g.is_finite()) {
            let per_term = self.gradients(
                ctx,
                depth_a.values(),
                depth_b.values(),
                pose,
                &LossTerm::ALL,
                false,
            )?;
            let culprit = LossTerm::ALL
                .into_iter()
                .zip(&per_term)
                .find(|(t, g)| {
                    self.cfg.weights.get(*t) != 0.0 && g.gradient.iter().any(|v| !v.is_finite())
                })
                .map(|(t, _)| t.name().to_string())
                .unwrap_or_else(|| "total".to_string());
            return Err(Error::NonFiniteGradient { term: culprit });
        }
        let (h, w) = (self.sample.height(), self.sample.width());
        Ok(LossReport {
            total: total.value,
            terms,
            weights: self.cfg.weights,
            grad_depth_a: ScalarGrid::new(h, w, total.gradient[..n].to_vec())?,
            grad_depth_b: ScalarGrid::new(h, w, total.gradient[n..2 * n].to_vec())?,
            grad_pose: std::array::from_fn(|i| total.gradient[2 * n + i]),
            warnings: ctx.warnings.clone(),
        })
    }
}

struct WarpFields<S> {
    photometric: Vec<S>,
    depth_diff: Vec<S>,
}

fn channels_of(image: &crate::grid::Image) -> Vec<Vec<f64>> {
    image
        .channels()
        .iter()
        .map(|c| c.values().to_vec())
        .collect()
}

/// Two-view objective `alpha L_P^M + beta L_G + gamma L_S` with gradients.
pub fn total_selfsup(
    sample: &SceneSample,
    depth_a: &ScalarGrid,
    depth_b: &ScalarGrid,
    pose: &PoseSE3,
    weights: &SelfSupWeights,
    cfg: &ObjectiveConfig,
) -> Result<LossReport> {
    weights.validate()?;
    let cfg = ObjectiveConfig {
        weights: TermWeights::self_supervised(weights),
        ..cfg.clone()
    };
    Objective::new(sample, &cfg)?.report(depth_a, depth_b, pose, cfg.ranking.seed)
}

/// Objective with pseudo-depth refinement terms, with gradients.
pub fn total_loss(
    sample: &SceneSample,
    depth_a: &ScalarGrid,
    depth_b: &ScalarGrid,
    pose: &PoseSE3,
    weights: &TotalWeights,
    cfg: &ObjectiveConfig,
) -> Result<LossReport> {
    weights.validate()?;
    let cfg = ObjectiveConfig {
        weights: TermWeights::full(weights),
        ..cfg.clone()
    };
    Objective::new(sample, &cfg)?.report(depth_a, depth_b, pose, cfg.ranking.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn term_names_round_trip() {
        for t in LossTerm::ALL {
            assert_eq!(LossTerm::from_name(t.name()), Some(t));
        }
        assert_eq!(LossTerm::from_name("bogus"), None);
    }

    #[test]
    fn self_supervised_weighted_sum() {
        let w = TermWeights::self_supervised(&SelfSupWeights::default());
        let mut terms = [0.0; 7];
        terms[LossTerm::WeightedPhotometric.index()] = 0.2;
        terms[LossTerm::Geometry.index()] = 0.1;
        terms[LossTerm::Smoothness.index()] = 0.05;
        terms[LossTerm::Photometric.index()] = 9.0;
        assert_abs_diff_eq!(w.combine(&terms), 0.255, epsilon = 1e-15);
        assert_eq!(w.combine(&[0.0; 7]), 0.0);
    }

    #[test]
    fn ablations_drop_the_right_terms() {
        let (t, s) = (TotalWeights::default(), SelfSupWeights::default());
        let full = Ablation::Full.weights(&t, &s);
        assert_eq!(full.get(LossTerm::Smoothness), 0.0);
        assert_eq!(full.get(LossTerm::Ranking), 0.1);
        assert_eq!(Ablation::NoDrr.weights(&t, &s).get(LossTerm::Ranking), 0.0);
        let no_lsr = Ablation::NoLsr.weights(&t, &s);
        assert_eq!(no_lsr.get(LossTerm::NormalMatching), 0.0);
        assert_eq!(no_lsr.get(LossTerm::RelativeNormal), 0.0);
        assert_eq!(no_lsr.get(LossTerm::Smoothness), 0.1);
        let base = Ablation::Baseline.weights(&t, &s);
        assert_eq!(base.get(LossTerm::Ranking), 0.0);
        assert_eq!(base.get(LossTerm::Smoothness), 0.1);
    }
}
