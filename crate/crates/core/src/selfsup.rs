//! Two-view self-supervised terms: photometric reconstruction with SSIM,
//! geometry consistency, the self-discovered mask, edge-aware smoothness and
//! minimum-reprojection auto-masking.
//!
//! Each loss has a generic kernel (`*_value`) used by the differentiable
//! objective and a grid-level wrapper for direct use.

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::geometry::{compute_warp, sample_at, CameraIntrinsics, PoseSE3};
use crate::grid::{Image, ScalarGrid};

/// Mixing and SSIM constants of the photometric term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotometricConfig {
    /// Weight of the L1 term; SSIM gets `1 - lambda`.
    pub lambda: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    /// Side of the square SSIM pooling window.
    pub window: usize,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self {
            lambda: 0.15,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
            window: 3,
        }
    }
}

impl PhotometricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if !(self.ssim_c1 > 0.0 && self.ssim_c2 > 0.0) {
            return Err(Error::Config("SSIM constants must be positive".into()));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "SSIM window {} must be odd and >= 3",
                self.window
            )));
        }
        Ok(())
    }
}

/// Weights of the two-view objective `alpha L_P^M + beta L_G + gamma L_S`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfSupWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for SelfSupWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.1,
        }
    }
}

impl SelfSupWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma]
            .iter()
            .all(|w| *w >= 0.0)
        {
            Ok(())
        } else {
            Err(Error::Config(format!("negative loss weight in {self:?}")))
        }
    }

    pub fn combine(&self, weighted_photometric: f64, geometry: f64, smoothness: f64) -> f64 {
        self.alpha * weighted_photometric + self.beta * geometry + self.gamma * smoothness
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i.clamp(0, n - 1) as usize
}

/// Box-filter mean with reflected borders.
fn box_mean<S: Real>(values: &[S], width: usize, height: usize, window: usize) -> Vec<S> {
    let r = (window / 2) as isize;
    let norm = (window * window) as f64;
    let mut out = Vec::with_capacity(values.len());
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut acc = S::zero();
            for dy in -r..=r {
                let row = reflect(y + dy, height) * width;
                for dx in -r..=r {
                    acc = acc + values[row + reflect(x + dx, width)];
                }
            }
            out.push(acc / norm);
        }
    }
    out
}

/// Per-pixel SSIM of two equally sized channels.
pub fn ssim_value<S: Real>(
    x: &[S],
    y: &[S],
    width: usize,
    height: usize,
    cfg: &PhotometricConfig,
) -> Vec<S> {
    let w = cfg.window;
    let mu_x = box_mean(x, width, height, w);
    let mu_y = box_mean(y, width, height, w);
    let xx: Vec<S> = x.iter().map(|v| *v * *v).collect();
    let yy: Vec<S> = y.iter().map(|v| *v * *v).collect();
    let xy: Vec<S> = x.iter().zip(y).map(|(a, b)| *a * *b).collect();
    let e_xx = box_mean(&xx, width, height, w);
    let e_yy = box_mean(&yy, width, height, w);
    let e_xy = box_mean(&xy, width, height, w);
    (0..x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sxx = e_xx[i] - mx * mx;
            let syy = e_yy[i] - my * my;
            let sxy = e_xy[i] - mx * my;
            let num = (mx * my * 2.0 + cfg.ssim_c1) * (sxy * 2.0 + cfg.ssim_c2);
            let den = (mx * mx + my * my + cfg.ssim_c1) * (sxx + syy + cfg.ssim_c2);
            num / den
        })
        .collect()
}

/// Per-pixel `lambda * L1 + (1 - lambda) * (1 - SSIM) / 2`, each channel-averaged first.
pub fn photometric_value<S: Real>(
    target: &[Vec<S>],
    synthesized: &[Vec<S>],
    width: usize,
    height: usize,
    cfg: &PhotometricConfig,
) -> Vec<S> {
    let n = width * height;
    let channels = target.len() as f64;
    let mut l1 = vec![S::zero(); n];
    let mut ssim = vec![S::zero(); n];
    for (a, b) in target.iter().zip(synthesized) {
        let s = ssim_value(a, b, width, height, cfg);
        for i in 0..n {
            l1[i] = l1[i] + (a[i] - b[i]).abs();
            ssim[i] = ssim[i] + s[i];
        }
    }
    (0..n)
        .map(|i| {
            l1[i] / channels * cfg.lambda
                + (S::cst(1.0) - ssim[i] / channels) * ((1.0 - cfg.lambda) / 2.0)
        })
        .collect()
}

/// Mean of `values` where `mask` holds, or `None` on an empty mask.
pub fn masked_mean<S: Real>(values: &[S], mask: &[bool]) -> Option<S> {
    let mut acc = S::zero();
    let mut count = 0usize;
    for (v, m) in values.iter().zip(mask) {
        if *m {
            acc = acc + *v;
            count += 1;
        }
    }
    (count > 0).then(|| acc / count as f64)
}

/// `|a - b| / (a + b)` for positive depths.
#[inline]
pub fn normalized_difference<S: Real>(computed: S, interpolated: S) -> S {
    (computed - interpolated).abs() / (computed + interpolated)
}

fn channel_values(image: &Image) -> Vec<Vec<f64>> {
    image
        .channels()
        .iter()
        .map(|c| c.values().to_vec())
        .collect()
}

pub fn ssim_map(x: &ScalarGrid, y: &ScalarGrid, cfg: &PhotometricConfig) -> Result<ScalarGrid> {
    cfg.validate()?;
    x.ensure_same_shape(y, "ssim_map")?;
    let values = ssim_value(x.values(), y.values(), x.width(), x.height(), cfg);
    ScalarGrid::new(x.height(), x.width(), values)
}

/// Per-pixel photometric error between `target` and `synthesized` over the whole image.
pub fn photometric_map(
    target: &Image,
    synthesized: &Image,
    cfg: &PhotometricConfig,
) -> Result<ScalarGrid> {
    cfg.validate()?;
    target.ensure_same_shape(synthesized, "photometric_map")?;
    let values = photometric_value(
        &channel_values(target),
        &channel_values(synthesized),
        target.width(),
        target.height(),
        cfg,
    );
    ScalarGrid::new(target.height(), target.width(), values)
}

/// Mean photometric error over the valid mask, together with the per-pixel map.
pub fn photometric_loss(
    target: &Image,
    synthesized: &Image,
    valid: &ScalarGrid,
    cfg: &PhotometricConfig,
) -> Result<(f64, ScalarGrid)> {
    let map = photometric_map(target, synthesized, cfg)?;
    map.ensure_same_shape(valid, "photometric_loss mask")?;
    let mean = map.masked_mean(valid).ok_or(Error::EmptyValidSet)?;
    Ok((mean, map))
}

/// Normalized depth inconsistency between `depth_a` warped into view b and `depth_b`
/// sampled at the warp targets, with the validity mask of the warp.
pub fn depth_inconsistency(
    depth_a: &ScalarGrid,
    depth_b: &ScalarGrid,
    pose_ab: &PoseSE3,
    k: &CameraIntrinsics,
) -> Result<(ScalarGrid, ScalarGrid)> {
    depth_a.ensure_same_shape(depth_b, "depth_inconsistency")?;
    depth_b.ensure_positive()?;
    let flow = compute_warp(depth_a, pose_ab, k)?;
    let mut diff = ScalarGrid::zeros(depth_a.height(), depth_a.width());
    for (i, d) in diff.values_mut().iter_mut().enumerate() {
        if flow.is_valid(i) {
            let interpolated = sample_at(depth_b, flow.x.values()[i], flow.y.values()[i]);
            *d = normalized_difference(flow.depth.values()[i], interpolated);
        }
    }
    Ok((diff, flow.valid))
}

/// Self-discovered mask `1 - D_diff`.
pub fn self_mask(depth_diff: &ScalarGrid) -> ScalarGrid {
    depth_diff.map(|d| 1.0 - d)
}

/// Mean inconsistency over valid pixels.
pub fn geometry_loss(depth_diff: &ScalarGrid, valid: &ScalarGrid) -> Result<f64> {
    depth_diff.ensure_same_shape(valid, "geometry_loss")?;
    depth_diff.masked_mean(valid).ok_or(Error::EmptyValidSet)
}

/// Mean over valid pixels of the mask-weighted per-pixel photometric error.
pub fn weighted_photometric(
    per_pixel: &ScalarGrid,
    mask_weight: &ScalarGrid,
    valid: &ScalarGrid,
) -> Result<f64> {
    per_pixel.ensure_same_shape(mask_weight, "weighted_photometric")?;
    per_pixel.ensure_same_shape(valid, "weighted_photometric")?;
    let weighted = ScalarGrid::new(
        per_pixel.height(),
        per_pixel.width(),
        per_pixel
            .values()
            .iter()
            .zip(mask_weight.values())
            .map(|(l, m)| l * m)
            .collect(),
    )?;
    weighted.masked_mean(valid).ok_or(Error::EmptyValidSet)
}

/// Edge-aware weights `exp(-|dI|)` for the forward differences in x and y.
///
/// The last column (row) has no forward difference and carries weight 0.
#[derive(Clone, Debug)]
pub struct SmoothnessWeights {
    pub width: usize,
    pub height: usize,
    pub wx: Vec<f64>,
    pub wy: Vec<f64>,
}

impl SmoothnessWeights {
    pub fn from_image(image: &Image) -> Self {
        let (w, h) = (image.width(), image.height());
        let n = image.channel_count() as f64;
        let mut wx = vec![0.0; w * h];
        let mut wy = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    let g: f64 = image
                        .channels()
                        .iter()
                        .map(|c| (c.values()[i + 1] - c.values()[i]).abs())
                        .sum();
                    wx[i] = (-g / n).exp();
                }
                if y + 1 < h {
                    let g: f64 = image
                        .channels()
                        .iter()
                        .map(|c| (c.values()[i + w] - c.values()[i]).abs())
                        .sum();
                    wy[i] = (-g / n).exp();
                }
            }
        }
        Self {
            width: w,
            height: h,
            wx,
            wy,
        }
    }
}

/// Sum over pixels of `(wx dD/dx)^2 + (wy dD/dy)^2`.
pub fn smoothness_value<S: Real>(depth: &[S], weights: &SmoothnessWeights) -> S {
    let w = weights.width;
    let mut acc = S::zero();
    for y in 0..weights.height {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                acc = acc + ((depth[i + 1] - depth[i]) * weights.wx[i]).square();
            }
            if y + 1 < weights.height {
                acc = acc + ((depth[i + w] - depth[i]) * weights.wy[i]).square();
            }
        }
    }
    acc
}

pub fn smoothness_loss(depth: &ScalarGrid, image: &Image) -> Result<f64> {
    image.channels()[0].ensure_same_shape(depth, "smoothness_loss")?;
    Ok(smoothness_value(
        depth.values(),
        &SmoothnessWeights::from_image(image),
    ))
}

/// Per-pixel minimum over sources of the warped photometric error, and the
/// auto-mask that keeps pixels whose minimum beats every unwarped source strictly.
pub fn min_reprojection_automask(
    target: &Image,
    warped_errors: &[ScalarGrid],
    raw_sources: &[Image],
    cfg: &PhotometricConfig,
) -> Result<(ScalarGrid, ScalarGrid)> {
    let first = warped_errors.first().ok_or_else(|| {
        Error::Contract("min_reprojection_automask needs at least one source".into())
    })?;
    if raw_sources.is_empty() {
        return Err(Error::Contract(
            "min_reprojection_automask needs at least one raw source".into(),
        ));
    }
    let mut best = first.clone();
    for e in &warped_errors[1..] {
        best.ensure_same_shape(e, "warped errors")?;
        for (b, v) in best.values_mut().iter_mut().zip(e.values()) {
            *b = b.min(*v);
        }
    }
    let mut identity_best = ScalarGrid::filled(best.height(), best.width(), f64::INFINITY);
    for src in raw_sources {
        let e = photometric_map(target, src, cfg)?;
        identity_best.ensure_same_shape(&e, "raw sources")?;
        for (b, v) in identity_best.values_mut().iter_mut().zip(e.values()) {
            *b = b.min(*v);
        }
    }
    let mask = ScalarGrid::new(
        best.height(),
        best.width(),
        best.values()
            .iter()
            .zip(identity_best.values())
            .map(|(w, i)| if w < i { 1.0 } else { 0.0 })
            .collect(),
    )?;
    Ok((best, mask))
}
