//! Finite-difference checking and first-order fitting of depth fields.

use crate::error::{Error, Result};
use crate::geometry::{compute_warp, sample_at, CameraIntrinsics, PoseSE3};
use crate::grid::ScalarGrid;
use crate::objective::{LossReport, LossTerm, Objective};

/// Depth bounds of the fitted fields in meters.
pub const DEFAULT_MIN_DEPTH: f64 = 0.1;
pub const DEFAULT_MAX_DEPTH: f64 = 100.0;

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Per-pixel inverse-depth variables with depth bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthField {
    inverse: ScalarGrid,
    min_depth: f64,
    max_depth: f64,
}

impl DepthField {
    pub fn from_depth(depth: &ScalarGrid, min_depth: f64, max_depth: f64) -> Result<Self> {
        if !(min_depth > 0.0 && max_depth > min_depth && max_depth.is_finite()) {
            return Err(Error::Config(format!(
                "invalid depth bounds [{min_depth}, {max_depth}]"
            )));
        }
        depth.ensure_positive()?;
        let mut field = Self {
            inverse: depth.map(|d| 1.0 / d),
            min_depth,
            max_depth,
        };
        field.clamp();
        Ok(field)
    }

    pub fn with_default_bounds(depth: &ScalarGrid) -> Result<Self> {
        Self::from_depth(depth, DEFAULT_MIN_DEPTH, DEFAULT_MAX_DEPTH)
    }

    pub fn inverse(&self) -> &ScalarGrid {
        &self.inverse
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.min_depth, self.max_depth)
    }

    pub fn depth(&self) -> ScalarGrid {
        self.inverse.map(|x| 1.0 / x)
    }

    fn clamp(&mut self) {
        let (lo, hi) = (1.0 / self.max_depth, 1.0 / self.min_depth);
        for x in self.inverse.values_mut() {
            *x = x.clamp(lo, hi);
        }
    }

    /// Moves the inverse depths by `delta` and clamps to the bounds.
    pub fn step(&mut self, delta: &[f64]) {
        for (x, d) in self.inverse.values_mut().iter_mut().zip(delta) {
            *x += d;
        }
        self.clamp();
    }

    /// Converts a depth gradient into an inverse-depth gradient.
    pub fn chain(&self, grad_depth: &[f64]) -> Vec<f64> {
        self.inverse
            .values()
            .iter()
            .zip(grad_depth)
            .map(|(x, g)| -g / (x * x))
            .collect()
    }
}

/// Result of comparing an analytic gradient with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    /// Variable index of the worst entry.
    pub worst: usize,
    pub numeric: Vec<f64>,
}

/// Relative error with a `max(|a|, |n|, 1e-12)` denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Central differences of `f` at `x`, compared against `analytic`.
pub fn finite_diff_check<F>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<FiniteDiffReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if x.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} variables but {} gradient entries",
            x.len(),
            analytic.len()
        )));
    }
    if !(step > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step {step} must be positive"
        )));
    }
    let mut probe = x.to_vec();
    let mut numeric = Vec::with_capacity(x.len());
    let (mut max_rel_error, mut worst) = (0.0, 0);
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = f(&probe)?;
        probe[i] = x[i] - step;
        let minus = f(&probe)?;
        probe[i] = x[i];
        let n = (plus - minus) / (2.0 * step);
        let e = relative_error(analytic[i], n);
        if !(e <= max_rel_error) {
            max_rel_error = e;
            worst = i;
        }
        numeric.push(n);
    }
    Ok(FiniteDiffReport {
        max_rel_error,
        worst,
        numeric,
    })
}

/// Distance from the nearest non-differentiable point of the warp: the smaller of
/// the distance of any valid warp coordinate to an integer (a bilinear cell
/// edge) and the smallest normalized depth inconsistency (the kink of `|.|`).
///
/// Central differences are only meaningful where this exceeds the step's effect.
pub fn warp_kink_margin(
    depth_a: &ScalarGrid,
    depth_b: &ScalarGrid,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
) -> Result<f64> {
    let flow = compute_warp(depth_a, pose, k)?;
    let mut margin = f64::INFINITY;
    for i in 0..depth_a.len() {
        if !flow.is_valid(i) {
            continue;
        }
        let (x, y) = (flow.x.values()[i], flow.y.values()[i]);
        let interpolated = sample_at(depth_b, x, y);
        let computed = flow.depth.values()[i];
        let diff = (computed - interpolated).abs() / (computed + interpolated);
        margin = margin
            .min((x - x.round()).abs())
            .min((y - y.round()).abs())
            .min(diff);
    }
    Ok(margin)
}

/// Smallest kink margin `check_point` accepts.
pub const MIN_KINK_MARGIN: f64 = 1e-3;

/// A point near the scene's ground truth where every term is differentiable
/// well beyond a finite-difference step: both depths scaled per pixel by a
/// random factor in `[1.05, 1.25)`, redrawn until `warp_kink_margin` and
/// both `Objective::residual_margins` reach `MIN_KINK_MARGIN`.
pub fn check_point(objective: &Objective, seed: u64) -> Result<(ScalarGrid, ScalarGrid)> {
    use rand::{Rng, SeedableRng};
    let sample = objective.sample();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..5000 {
        let a = sample.depth_a.map(|d| d * rng.gen_range(1.05..1.25));
        let b = sample.depth_b.map(|d| d * rng.gen_range(1.05..1.25));
        if warp_kink_margin(&a, &b, &sample.pose_ab, &sample.intrinsics)? >= MIN_KINK_MARGIN {
            let m = objective.residual_margins(&a, &b, &sample.pose_ab)?;
            if m.photometric >= MIN_KINK_MARGIN && m.normal >= MIN_KINK_MARGIN {
                return Ok((a, b));
            }
        }
    }
    Err(Error::Contract(
        "no differentiable check point found in 5000 draws".into(),
    ))
}

/// Maximum relative error of one term's gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct TermCheck {
    /// Term name, or "total" for the weighted objective.
    pub name: String,
    pub value: f64,
    pub max_rel_error: f64,
    pub worst: usize,
}

/// Checks every term and the weighted total with respect to both depth maps and
/// the six pose parameters, under the context frozen at the given point.
///
/// `perturb` is applied to analytic gradients before comparison; it exists so
/// callers can verify that a broken gradient is caught. Each denominator is at
/// least `floor` times the largest analytic entry of the same term, so entries
/// far below a term's scale are compared against that scale; 0 disables this.
pub fn check_objective_gradients(
    objective: &Objective,
    depth_a: &ScalarGrid,
    depth_b: &ScalarGrid,
    pose: &PoseSE3,
    sampling_seed: u64,
    step: f64,
    floor: f64,
    perturb: Option<&dyn Fn(&mut [f64])>,
) -> Result<Vec<TermCheck>> {
    let n = objective.pixel_count();
    let ctx = objective.freeze(depth_a, depth_b, pose, sampling_seed)?;
    let mut grads = objective.gradients(
        &ctx,
        depth_a.values(),
        depth_b.values(),
        pose,
        &LossTerm::ALL,
        true,
    )?;
    if let Some(p) = perturb {
        for g in &mut grads {
            p(&mut g.gradient);
        }
    }
    let x: Vec<f64> = depth_a
        .values()
        .iter()
        .chain(depth_b.values())
        .copied()
        .chain([0.0; 6])
        .collect();
    let eval = |v: &[f64]| -> Result<([f64; 7], f64)> {
        let params: [f64; 6] = std::array::from_fn(|k| v[2 * n + k]);
        objective.evaluate(&ctx, &v[..n], &v[n..2 * n], pose, params)
    };
    // One sweep of central differences serves all outputs.
    let outputs = LossTerm::ALL.len() + 1;
    let mut numeric = vec![Vec::with_capacity(x.len()); outputs];
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let (tp, fp) = eval(&probe)?;
        probe[i] = x[i] - step;
        let (tm, fm) = eval(&probe)?;
        probe[i] = x[i];
        for k in 0..LossTerm::ALL.len() {
            numeric[k].push((tp[k] - tm[k]) / (2.0 * step));
        }
        numeric[outputs - 1].push((fp - fm) / (2.0 * step));
    }
    let names = LossTerm::ALL
        .iter()
        .map(|t| t.name().to_string())
        .chain(["total".to_string()]);
    Ok(names
        .zip(grads.iter().zip(&numeric))
        .map(|(name, (g, num))| {
            let (mut max_rel_error, mut worst) = (0.0, 0);
            let scale = floor * g.gradient.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (i, (a, b)) in g.gradient.iter().zip(num).enumerate() {
                let e = (a - b).abs() / a.abs().max(b.abs()).max(scale).max(1e-12);
                if !(e <= max_rel_error) {
                    max_rel_error = e;
                    worst = i;
                }
            }
            TermCheck {
                name,
                value: g.value,
                max_rel_error,
                worst,
            }
        })
        .collect())
}

/// Loss report together with gradients of the inverse-depth variables.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGradients {
    pub report: LossReport,
    pub grad_inverse_a: Vec<f64>,
    pub grad_inverse_b: Vec<f64>,
}

/// Evaluates the objective at the fields' depths with all sampling decisions
/// frozen at this point.
pub fn loss_with_gradients(
    objective: &Objective,
    depth_a: &DepthField,
    depth_b: &DepthField,
    pose: &PoseSE3,
    sampling_seed: u64,
) -> Result<FieldGradients> {
    let report = objective.report(&depth_a.depth(), &depth_b.depth(), pose, sampling_seed)?;
    let grad_inverse_a = depth_a.chain(report.grad_depth_a.values());
    let grad_inverse_b = depth_b.chain(report.grad_depth_b.values());
    Ok(FieldGradients {
        report,
        grad_inverse_a,
        grad_inverse_b,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    GradientDescent,
    Adam,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::GradientDescent => "gradient_descent",
            Method::Adam => "adam",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gradient_descent" | "gd" => Some(Method::GradientDescent),
            "adam" => Some(Method::Adam),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub method: Method,
    /// Step size for inverse-depth variables.
    pub learning_rate: f64,
    /// Step size for the six pose parameters.
    pub pose_learning_rate: f64,
    pub max_iters: usize,
    /// Adam step sizes decay exponentially to this fraction at `max_iters` (1 keeps them constant).
    pub final_lr_fraction: f64,
    /// Stop once the relative loss change falls below this (0 disables).
    pub convergence_tol: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub optimize_depth_b: bool,
    pub optimize_pose: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::Adam,
            learning_rate: 3e-3,
            pose_learning_rate: 1e-3,
            max_iters: 500,
            final_lr_fraction: 0.01,
            convergence_tol: 0.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            optimize_depth_b: true,
            optimize_pose: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.pose_learning_rate >= 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Config("final_lr_fraction must lie in (0, 1]".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Config("convergence_tol must be nonnegative".into()));
        }
        if !((0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0)
        {
            return Err(Error::Config(
                "Adam needs beta1, beta2 in [0, 1) and epsilon > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Loss at one iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub total: f64,
    pub terms: [f64; 7],
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationResult {
    pub depth_a: DepthField,
    pub depth_b: DepthField,
    pub pose: PoseSE3,
    /// Loss at the initial point and after every accepted step.
    pub history: Vec<IterationRecord>,
    pub converged: bool,
}

fn check_divergence(iteration: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LOSS {
        return Err(Error::Diverged { iteration, loss });
    }
    Ok(())
}

fn relative_change(previous: f64, current: f64) -> f64 {
    (previous - current).abs() / previous.abs().max(1e-12)
}

struct State {
    a: DepthField,
    b: DepthField,
    pose: PoseSE3,
}

impl State {
    fn moved(&self, da: &[f64], db: Option<&[f64]>, dpose: Option<[f64; 6]>) -> State {
        let mut a = self.a.clone();
        a.step(da);
        let mut b = self.b.clone();
        if let Some(db) = db {
            b.step(db);
        }
        let pose = match dpose {
            Some(p) => self.pose.perturbed(p),
            None => self.pose,
        };
        State { a, b, pose }
    }
}

/// Fits the depth fields (and optionally the pose) by minimizing the objective.
pub fn optimize_depth(
    objective: &Objective,
    init_a: DepthField,
    init_b: DepthField,
    init_pose: PoseSE3,
    cfg: &OptimizerConfig,
) -> Result<OptimizationResult> {
    cfg.validate()?;
    let state = State {
        a: init_a,
        b: init_b,
        pose: init_pose,
    };
    match cfg.method {
        Method::GradientDescent => gradient_descent(objective, state, cfg),
        Method::Adam => adam(objective, state, cfg),
    }
}

fn record(iteration: usize, report: &LossReport) -> IterationRecord {
    IterationRecord {
        iteration,
        total: report.total,
        terms: report.terms,
    }
}

fn gradient_descent(
    objective: &Objective,
    mut state: State,
    cfg: &OptimizerConfig,
) -> Result<OptimizationResult> {
    const ARMIJO: f64 = 1e-4;
    const MAX_HALVINGS: usize = 40;
    let seed = cfg.seed;
    let mut current = loss_with_gradients(objective, &state.a, &state.b, &state.pose, seed)?;
    check_divergence(0, current.report.total)?;
    let mut history = vec![record(0, &current.report)];
    let pose_ratio = cfg.pose_learning_rate / cfg.learning_rate;
    let mut eta = cfg.learning_rate;
    let mut converged = false;
    for iteration in 1..=cfg.max_iters {
        let ga = &current.grad_inverse_a;
        let gb = &current.grad_inverse_b;
        let gp = current.report.grad_pose;
        let mut norm2: f64 = ga.iter().map(|g| g * g).sum();
        if cfg.optimize_depth_b {
            norm2 += gb.iter().map(|g| g * g).sum::<f64>();
        }
        if cfg.optimize_pose {
            norm2 += pose_ratio * gp.iter().map(|g| g * g).sum::<f64>();
        }
        if norm2 == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let da: Vec<f64> = ga.iter().map(|g| -eta * g).collect();
            let db: Vec<f64> = gb.iter().map(|g| -eta * g).collect();
            let dp: [f64; 6] = std::array::from_fn(|k| -eta * pose_ratio * gp[k]);
            let trial = state.moved(
                &da,
                cfg.optimize_depth_b.then_some(&db[..]),
                cfg.optimize_pose.then_some(dp),
            );
            // The trial is scored with its own freshly frozen context, the same way it will be recorded.
            match loss_with_gradients(objective, &trial.a, &trial.b, &trial.pose, seed) {
                Ok(next) if next.report.total <= current.report.total - ARMIJO * eta * norm2 => {
                    accepted = Some((trial, next));
                    break;
                }
                Ok(_) | Err(Error::EmptyValidSet) => eta *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((trial, next)) = accepted else {
            converged = true;
            break;
        };
        check_divergence(iteration, next.report.total)?;
        let change = relative_change(current.report.total, next.report.total);
        state = trial;
        current = next;
        history.push(record(iteration, &current.report));
        eta *= 2.0;
        if change < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    Ok(OptimizationResult {
        depth_a: state.a,
        depth_b: state.b,
        pose: state.pose,
        history,
        converged,
    })
}

struct AdamMoments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamMoments {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, grad: &[f64], lr: f64, t: i32, cfg: &OptimizerConfig) -> Vec<f64> {
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        grad.iter()
            .enumerate()
            .map(|(i, g)| {
                self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
                self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
                -lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.epsilon)
            })
            .collect()
    }
}

fn adam(
    objective: &Objective,
    mut state: State,
    cfg: &OptimizerConfig,
) -> Result<OptimizationResult> {
    let n = objective.pixel_count();
    let (mut ma, mut mb, mut mp) = (
        AdamMoments::new(n),
        AdamMoments::new(n),
        AdamMoments::new(6),
    );
    let mut history = Vec::with_capacity(cfg.max_iters + 1);
    let mut converged = false;
    let mut iteration = 0;
    loop {
        let sampling_seed = cfg.seed.wrapping_add(iteration as u64);
        // An iterate that leaves the image or breaks the gradient has diverged.
        let current =
            match loss_with_gradients(objective, &state.a, &state.b, &state.pose, sampling_seed) {
                Err(Error::EmptyValidSet | Error::NonFiniteGradient { .. }) if iteration > 0 => {
                    return Err(Error::Diverged {
                        iteration,
                        loss: f64::NAN,
                    })
                }
                r => r?,
            };
        check_divergence(iteration, current.report.total)?;
        if let Some(prev) = history.last().map(|r: &IterationRecord| r.total) {
            if relative_change(prev, current.report.total) < cfg.convergence_tol {
                converged = true;
            }
        }
        history.push(record(iteration, &current.report));
        if converged || iteration == cfg.max_iters {
            break;
        }
        iteration += 1;
        let t = iteration as i32;
        let decay = cfg
            .final_lr_fraction
            .powf((iteration - 1) as f64 / cfg.max_iters as f64);
        let lr = cfg.learning_rate * decay;
        let da = ma.step(&current.grad_inverse_a, lr, t, cfg);
        let db = cfg
            .optimize_depth_b
            .then(|| mb.step(&current.grad_inverse_b, lr, t, cfg));
        let dp = cfg.optimize_pose.then(|| {
            let d = mp.step(
                &current.report.grad_pose,
                cfg.pose_learning_rate * decay,
                t,
                cfg,
            );
            std::array::from_fn(|k| d[k])
        });
        state = state.moved(&da, db.as_deref(), dp);
    }
    Ok(OptimizationResult {
        depth_a: state.a,
        depth_b: state.b,
        pose: state.pose,
        history,
        converged,
    })
}
