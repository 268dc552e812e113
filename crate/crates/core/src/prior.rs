//! Losses driven by a single-image pseudo-depth prior.
//!
//! Dynamic region refinement ranks the self-discovered mask, pairs the least
//! consistent pixels with static ones and applies a confident ordinal ranking
//! loss whose labels come from pseudo-depth. Local structure refinement matches
//! surface normals of the prediction against pseudo-depth normals and keeps
//! relative normal angles across image edges consistent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::grid::{Image, ScalarGrid};

/// Ordinal relation of the first pixel of a pair to the second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ordinal {
    /// The first pixel is farther (label +1).
    Farther,
    /// The first pixel is nearer (label -1).
    Nearer,
    /// Within tolerance (label 0).
    Equal,
}

impl Ordinal {
    pub fn sign(self) -> f64 {
        match self {
            Ordinal::Farther => 1.0,
            Ordinal::Nearer => -1.0,
            Ordinal::Equal => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairProvenance {
    DynamicStatic,
    GlobalRandom,
    EdgeGuided,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PointPair {
    pub first: usize,
    pub second: usize,
    pub provenance: PairProvenance,
}

/// Sampled pixel-index pairs, optionally labelled.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointPairSet {
    pub pairs: Vec<PointPair>,
    pub labels: Option<Vec<Ordinal>>,
}

impl PointPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn index_pairs(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().map(|p| (p.first, p.second)).collect()
    }

    pub fn check_bounds(&self, pixel_count: usize) -> Result<()> {
        if let Some(labels) = &self.labels {
            if labels.len() != self.pairs.len() {
                return Err(Error::Contract(
                    "label count differs from pair count".into(),
                ));
            }
        }
        match self
            .pairs
            .iter()
            .find(|p| p.first >= pixel_count || p.second >= pixel_count)
        {
            Some(p) => Err(Error::Contract(format!(
                "pair {p:?} outside {pixel_count} pixels"
            ))),
            None => Ok(()),
        }
    }
}

/// Settings of dynamic-focused sampling and the confident ranking loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankingConfig {
    /// Ordinal tolerance: ratios within `[1/(1+tau), 1+tau]` are unlabelled.
    pub tau: f64,
    /// Fraction of pixels, lowest mask first, treated as dynamic.
    pub dynamic_fraction: f64,
    /// Dynamic-static pairs; `None` pairs every dynamic pixel once.
    pub pairs_dynamic: Option<usize>,
    /// Extra whole-image pairs; `None` matches the dynamic-static count.
    pub pairs_global: Option<usize>,
    pub seed: u64,
    /// Rank log-depth differences instead of raw depth differences.
    pub log_depth: bool,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            tau: 0.15,
            dynamic_fraction: 0.2,
            pairs_dynamic: None,
            pairs_global: None,
            seed: 0,
            log_depth: false,
        }
    }
}

impl RankingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau {} must be positive", self.tau)));
        }
        if !(self.dynamic_fraction > 0.0 && self.dynamic_fraction < 1.0) {
            return Err(Error::Config(format!(
                "dynamic fraction {} outside (0, 1)",
                self.dynamic_fraction
            )));
        }
        Ok(())
    }
}

/// Dynamic-focused sampling output.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicSampling {
    pub pairs: PointPairSet,
    /// Pixel indices of the dynamic set, in ascending mask order.
    pub dynamic: Vec<usize>,
}

/// Splits pixels by mask rank and draws dynamic-static pairs plus whole-image pairs.
pub fn dynamic_focused_sampling(mask: &ScalarGrid, cfg: &RankingConfig) -> Result<DynamicSampling> {
    cfg.validate()?;
    let n = mask.len();
    let n_dynamic = (cfg.dynamic_fraction * n as f64).round() as usize;
    if n_dynamic == 0 || n_dynamic >= n {
        return Err(Error::Config(format!(
            "{n} pixels cannot host both a dynamic and a static set at fraction {}",
            cfg.dynamic_fraction
        )));
    }
    let values = mask.values();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let (dynamic, static_set) = order.split_at(n_dynamic);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pairs = Vec::new();
    match cfg.pairs_dynamic {
        None => {
            for &d in dynamic {
                let s = static_set[rng.gen_range(0..static_set.len())];
                pairs.push(PointPair {
                    first: d,
                    second: s,
                    provenance: PairProvenance::DynamicStatic,
                });
            }
        }
        Some(count) => {
            for _ in 0..count {
                let d = dynamic[rng.gen_range(0..dynamic.len())];
                let s = static_set[rng.gen_range(0..static_set.len())];
                pairs.push(PointPair {
                    first: d,
                    second: s,
                    provenance: PairProvenance::DynamicStatic,
                });
            }
        }
    }
    let global = cfg.pairs_global.unwrap_or(pairs.len());
    for _ in 0..global {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        pairs.push(PointPair {
            first: a,
            second: b,
            provenance: PairProvenance::GlobalRandom,
        });
    }
    Ok(DynamicSampling {
        pairs: PointPairSet {
            pairs,
            labels: None,
        },
        dynamic: dynamic.to_vec(),
    })
}

/// Ordinal label from two pseudo-depth values at tolerance `tau`.
pub fn ordinal_label(pd0: f64, pd1: f64, tau: f64) -> Result<Ordinal> {
    if !(pd0 > 0.0 && pd1 > 0.0) {
        return Err(Error::Contract(format!(
            "non-positive pseudo-depth in pair ({pd0}, {pd1})"
        )));
    }
    let ratio = pd0 / pd1;
    Ok(if ratio >= 1.0 + tau {
        Ordinal::Farther
    } else if ratio <= 1.0 / (1.0 + tau) {
        Ordinal::Nearer
    } else {
        Ordinal::Equal
    })
}

/// Classic ranking loss: softplus on labelled pairs, squared difference on equal pairs.
pub fn ranking_loss_original<S: Real>(p0: S, p1: S, label: Ordinal) -> S {
    match label {
        Ordinal::Equal => (p0 - p1).square(),
        l => ((p0 - p1) * -l.sign()).softplus(),
    }
}

/// A pair that survived the confidence band.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelledPair {
    pub first: usize,
    pub second: usize,
    pub label: Ordinal,
}

/// Labels `pairs` from pseudo-depth and keeps only those outside the tolerance band.
pub fn confident_pairs(
    pseudo: &ScalarGrid,
    pairs: &PointPairSet,
    tau: f64,
) -> Result<Vec<LabelledPair>> {
    pairs.check_bounds(pseudo.len())?;
    let pd = pseudo.values();
    let mut out = Vec::with_capacity(pairs.len());
    for p in &pairs.pairs {
        let label = ordinal_label(pd[p.first], pd[p.second], tau)?;
        if label != Ordinal::Equal {
            out.push(LabelledPair {
                first: p.first,
                second: p.second,
                label,
            });
        }
    }
    Ok(out)
}

/// Mean confident ranking loss over labelled pairs, `None` when there are none.
pub fn cdr_value<S: Real>(depth: &[S], pairs: &[LabelledPair], log_depth: bool) -> Option<S> {
    if pairs.is_empty() {
        return None;
    }
    let mut acc = S::zero();
    for p in pairs {
        let (a, b) = (depth[p.first], depth[p.second]);
        let diff = if log_depth { a.ln() - b.ln() } else { a - b };
        acc = acc + (diff * -p.label.sign()).softplus();
    }
    Some(acc / pairs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CdrLoss {
    pub value: f64,
    /// Number of pairs outside the tolerance band.
    pub confident: usize,
    /// Set when no pair was confident and the loss defaulted to 0.
    pub empty: bool,
}

pub fn cdr_loss(
    depth: &ScalarGrid,
    pseudo: &ScalarGrid,
    pairs: &PointPairSet,
    cfg: &RankingConfig,
) -> Result<CdrLoss> {
    depth.ensure_same_shape(pseudo, "cdr_loss")?;
    let labelled = confident_pairs(pseudo, pairs, cfg.tau)?;
    Ok(match cdr_value(depth.values(), &labelled, cfg.log_depth) {
        Some(value) => CdrLoss {
            value,
            confident: labelled.len(),
            empty: false,
        },
        None => CdrLoss {
            value: 0.0,
            confident: 0,
            empty: true,
        },
    })
}

/// Per-pixel unit normals facing the camera.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalGrid {
    pub height: usize,
    pub width: usize,
    pub normals: Vec<[f64; 3]>,
    /// Pixels whose tangents were degenerate; their normal is the reversed viewing ray.
    pub degenerate: Vec<usize>,
}

impl NormalGrid {
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.normals[y * self.width + x]
    }
}

#[inline]
fn sub3<S: Real>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot3<S: Real>(a: [S; 3], b: [S; 3]) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross3<S: Real>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Normals of the back-projected depth: cross product of central-difference
/// tangents (one-sided on the border), oriented so that `n . p < 0`.
pub fn normals_value<S: Real>(
    depth: &[S],
    width: usize,
    height: usize,
    k: &CameraIntrinsics,
) -> (Vec<[S; 3]>, Vec<usize>) {
    let points: Vec<[S; 3]> = depth
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let r = k.ray((i % width) as f64, (i / width) as f64);
            [d * r[0], d * r[1], d]
        })
        .collect();
    let at = |x: usize, y: usize| points[y * width + x];
    let mut normals = Vec::with_capacity(depth.len());
    let mut degenerate = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(width - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(height - 1));
            let tx = sub3(at(xr, y), at(xl, y));
            let ty = sub3(at(x, yd), at(x, yu));
            let p = at(x, y);
            let mut c = cross3(tx, ty);
            let norm2 = dot3(c, c);
            let scale = dot3(tx, tx).value() * dot3(ty, ty).value();
            if !(norm2.value() > 1e-24 * scale) || norm2.value() == 0.0 {
                degenerate.push(y * width + x);
                let len = dot3(p, p).sqrt();
                normals.push([-p[0] / len, -p[1] / len, -p[2] / len]);
                continue;
            }
            if dot3(c, p).value() > 0.0 {
                c = [-c[0], -c[1], -c[2]];
            }
            let len = norm2.sqrt();
            normals.push([c[0] / len, c[1] / len, c[2] / len]);
        }
    }
    (normals, degenerate)
}

pub fn normals_from_depth(depth: &ScalarGrid, k: &CameraIntrinsics) -> Result<NormalGrid> {
    depth.ensure_positive()?;
    k.ensure_matches(depth)?;
    let (normals, degenerate) = normals_value(depth.values(), depth.width(), depth.height(), k);
    Ok(NormalGrid {
        height: depth.height(),
        width: depth.width(),
        normals,
        degenerate,
    })
}

/// Mean over pixels of the L1 distance between normal vectors.
pub fn normal_matching_value<S: Real>(normals: &[[S; 3]], target: &[[f64; 3]]) -> S {
    let mut acc = S::zero();
    for (n, t) in normals.iter().zip(target) {
        acc = acc + (n[0] - t[0]).abs() + (n[1] - t[1]).abs() + (n[2] - t[2]).abs();
    }
    acc / normals.len() as f64
}

fn ensure_same_normals(a: &NormalGrid, b: &NormalGrid) -> Result<()> {
    if a.height == b.height && a.width == b.width {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "normal grids {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )))
    }
}

pub fn normal_matching_loss(normals: &NormalGrid, target: &NormalGrid) -> Result<f64> {
    ensure_same_normals(normals, target)?;
    Ok(normal_matching_value(&normals.normals, &target.normals))
}

/// Edge detection and pair geometry for edge-guided sampling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeSamplingConfig {
    /// Pixels at or above this percentile of Sobel magnitude are edges.
    pub percentile: f64,
    pub offset_min: f64,
    pub offset_max: f64,
    /// Number of pairs; `None` draws one pair per edge pixel.
    pub pairs: Option<usize>,
}

impl Default for EdgeSamplingConfig {
    fn default() -> Self {
        Self {
            percentile: 90.0,
            offset_min: 2.0,
            offset_max: 5.0,
            pairs: None,
        }
    }
}

impl EdgeSamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..100.0).contains(&self.percentile) {
            return Err(Error::Config(format!(
                "edge percentile {} outside [0, 100)",
                self.percentile
            )));
        }
        if !(self.offset_min > 0.0 && self.offset_min <= self.offset_max) {
            return Err(Error::Config(format!(
                "edge offsets [{}, {}] must be positive and ordered",
                self.offset_min, self.offset_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSampling {
    pub pairs: PointPairSet,
    /// Set when the image had no edge pixels.
    pub no_edges: bool,
}

/// Sobel derivatives of the channel-mean image with replicated borders.
pub fn sobel(image: &Image) -> (ScalarGrid, ScalarGrid) {
    let gray = image.luminance();
    let (w, h) = (gray.width() as isize, gray.height() as isize);
    let at = |x: isize, y: isize| *gray.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize);
    let gx = ScalarGrid::from_fn(h as usize, w as usize, |x, y| {
        let (x, y) = (x as isize, y as isize);
        (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
            - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1))
    });
    let gy = ScalarGrid::from_fn(h as usize, w as usize, |x, y| {
        let (x, y) = (x as isize, y as isize);
        (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
            - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1))
    });
    (gx, gy)
}

/// Pairs that straddle image edges along the local gradient direction.
pub fn edge_guided_sampling(
    image: &Image,
    n_pairs: Option<usize>,
    seed: u64,
    cfg: &EdgeSamplingConfig,
) -> Result<EdgeSampling> {
    cfg.validate()?;
    let (gx, gy) = sobel(image);
    let (w, h) = (image.width(), image.height());
    let magnitude: Vec<f64> = gx
        .values()
        .iter()
        .zip(gy.values())
        .map(|(a, b)| a.hypot(*b))
        .collect();
    let mut sorted = magnitude.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((cfg.percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    let threshold = sorted[rank.min(sorted.len() - 1)];
    let edges: Vec<usize> = (0..magnitude.len())
        .filter(|&i| magnitude[i] > 1e-12 && magnitude[i] >= threshold)
        .collect();
    if edges.is_empty() {
        return Ok(EdgeSampling {
            pairs: PointPairSet::default(),
            no_edges: true,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = n_pairs.unwrap_or(edges.len());
    let mut pairs = Vec::with_capacity(count);
    let place = |c: f64, size: usize| (c.round().max(0.0) as usize).min(size - 1);
    for draw in 0..count {
        let e = if n_pairs.is_none() {
            edges[draw]
        } else {
            edges[rng.gen_range(0..edges.len())]
        };
        let offset = rng.gen_range(cfg.offset_min..=cfg.offset_max);
        let (dx, dy) = (gx.values()[e] / magnitude[e], gy.values()[e] / magnitude[e]);
        let (x, y) = ((e % w) as f64, (e / w) as f64);
        let a = place(y - offset * dy, h) * w + place(x - offset * dx, w);
        let b = place(y + offset * dy, h) * w + place(x + offset * dx, w);
        if a != b {
            pairs.push(PointPair {
                first: a,
                second: b,
                provenance: PairProvenance::EdgeGuided,
            });
        }
    }
    Ok(EdgeSampling {
        pairs: PointPairSet {
            pairs,
            labels: None,
        },
        no_edges: false,
    })
}

/// Mean over pairs of `|n_A . n_B - n*_A . n*_B|`, `None` without pairs.
pub fn ern_value<S: Real>(
    normals: &[[S; 3]],
    target: &[[f64; 3]],
    pairs: &[(usize, usize)],
) -> Option<S> {
    if pairs.is_empty() {
        return None;
    }
    let mut acc = S::zero();
    for &(a, b) in pairs {
        let (na, nb) = (normals[a], normals[b]);
        let predicted = na[0] * nb[0] + na[1] * nb[1] + na[2] * nb[2];
        let (ta, tb) = (target[a], target[b]);
        let reference = ta[0] * tb[0] + ta[1] * tb[1] + ta[2] * tb[2];
        acc = acc + (predicted - reference).abs();
    }
    Some(acc / pairs.len() as f64)
}

/// Edge-aware relative normal loss; 0 for an empty pair set.
pub fn ern_loss(normals: &NormalGrid, target: &NormalGrid, pairs: &PointPairSet) -> Result<f64> {
    ensure_same_normals(normals, target)?;
    pairs.check_bounds(normals.normals.len())?;
    Ok(ern_value(&normals.normals, &target.normals, &pairs.index_pairs()).unwrap_or(0.0))
}

/// Weights of `alpha L_P^M + beta L_G + gamma L_N + delta L_CDR + epsilon L_ERN`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TotalWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl Default for TotalWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.1,
            delta: 0.1,
            epsilon: 0.1,
        }
    }
}

impl TotalWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma, self.delta, self.epsilon]
            .iter()
            .all(|w| *w >= 0.0)
        {
            Ok(())
        } else {
            Err(Error::Config(format!("negative loss weight in {self:?}")))
        }
    }

    /// Weighted sum of `(L_P^M, L_G, L_N, L_CDR, L_ERN)`.
    pub fn combine(&self, terms: [f64; 5]) -> f64 {
        self.alpha * terms[0]
            + self.beta * terms[1]
            + self.gamma * terms[2]
            + self.delta * terms[3]
            + self.epsilon * terms[4]
    }
}
