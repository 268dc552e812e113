//! Analytic two-view scenes with exact ground truth.
//!
//! Scenes are made of textured infinite planes and at most one textured box
//! that may move rigidly between the two frames. Every pixel ray is cast
//! against all surfaces and the nearest hit gives depth, normal and color.
//! Textures are band-limited value noise evaluated in each surface's own frame,
//! so the moving box carries its texture along.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PoseSE3};
use crate::grid::{Image, ScalarGrid};
use crate::prior::{ordinal_label, NormalGrid, Ordinal};
use crate::scene::SceneSample;

const HIT_EPS: f64 = 1e-9;

/// Value-noise texture parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureParams {
    /// Wavelength of the coarsest octave in meters.
    pub wavelength: f64,
    pub octaves: u32,
    /// Peak deviation from mid-gray.
    pub contrast: f64,
    pub seed: u64,
}

impl TextureParams {
    pub fn new(wavelength: f64, seed: u64) -> Self {
        Self {
            wavelength,
            octaves: 3,
            contrast: 0.45,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneSpec {
    pub point: [f64; 3],
    pub normal: [f64; 3],
    pub texture: TextureParams,
}

/// Box given in the frame of camera a, moved rigidly by `displacement` for frame b.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxSpec {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    /// Rotation about the vertical (y) axis in radians.
    pub yaw: f64,
    /// World-frame motion of the box between frames a and b.
    pub displacement: PoseSE3,
    pub texture: TextureParams,
}

/// Monotone distortion and smoothing that turn ground-truth depth into pseudo-depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoDepthConfig {
    pub gain: f64,
    pub exponent: f64,
    pub offset: f64,
    /// Box-smoothing radius in pixels.
    pub radius: usize,
    pub seed: u64,
    /// Pairs whose ground-truth ratio reaches `1 + tau_check` must keep their ordinal.
    pub tau_check: f64,
    pub audit_pairs: usize,
}

impl Default for PseudoDepthConfig {
    fn default() -> Self {
        Self {
            gain: 0.5,
            exponent: 1.05,
            offset: 0.0,
            radius: 0,
            seed: 0,
            tau_check: 0.15,
            audit_pairs: 10_000,
        }
    }
}

impl PseudoDepthConfig {
    pub fn identity() -> Self {
        Self {
            gain: 1.0,
            exponent: 1.0,
            offset: 0.0,
            radius: 0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.exponent > 0.0 && self.offset >= 0.0) {
            return Err(Error::Config(format!(
                "pseudo-depth needs gain > 0, exponent > 0, offset >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub intrinsics: CameraIntrinsics,
    pub planes: Vec<PlaneSpec>,
    pub moving_box: Option<BoxSpec>,
    /// Maps frame-a points into frame b.
    pub camera_motion: PoseSE3,
    /// Standard deviation of additive intensity noise.
    pub noise: f64,
    /// Seeds the textures and layout-dependent draws.
    pub seed: u64,
    /// Seeds the intensity noise alone.
    pub noise_seed: u64,
    pub pseudo: PseudoDepthConfig,
}

/// Named scene layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenePreset {
    /// Ground, back wall and a box moving laterally with the camera.
    Dynamic,
    /// The same layout without the moving box.
    Static,
    /// Ground and a wall slanted 30 degrees about the vertical axis.
    TwoPlane,
}

impl ScenePreset {
    pub fn name(self) -> &'static str {
        match self {
            ScenePreset::Dynamic => "dynamic",
            ScenePreset::Static => "static",
            ScenePreset::TwoPlane => "two_plane",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            ScenePreset::Dynamic,
            ScenePreset::Static,
            ScenePreset::TwoPlane,
        ]
        .into_iter()
        .find(|p| p.name() == name)
    }
}

/// Default image size of the presets.
pub const DEFAULT_WIDTH: usize = 64;
pub const DEFAULT_HEIGHT: usize = 48;
/// Camera motion of the presets: rotation vector, then translation in meters.
pub const PRESET_CAMERA_MOTION: [f64; 6] = [0.0, 0.01, 0.0, -0.5, 0.0, -0.2];
/// Lateral displacement of the moving box in the dynamic preset, in meters.
pub const PRESET_BOX_SPEED: f64 = 0.4;

impl SceneConfig {
    /// Preset layout at `width` x `height` with a 67 degree horizontal field of view.
    pub fn preset(preset: ScenePreset, width: usize, height: usize, seed: u64) -> Self {
        let f = 0.75 * width as f64;
        let intrinsics = CameraIntrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        };
        let wall_normal = match preset {
            ScenePreset::TwoPlane => [0.5, 0.0, -(0.75f64).sqrt()],
            _ => [0.0, 0.0, -1.0],
        };
        let wall_distance = if preset == ScenePreset::TwoPlane {
            12.0
        } else {
            20.0
        };
        let planes = vec![
            PlaneSpec {
                point: [0.0, 1.5, 0.0],
                normal: [0.0, -1.0, 0.0],
                texture: TextureParams::new(1.2, seed.wrapping_mul(31).wrapping_add(1)),
            },
            PlaneSpec {
                point: [0.0, 0.0, wall_distance],
                normal: wall_normal,
                texture: TextureParams::new(2.5, seed.wrapping_mul(31).wrapping_add(2)),
            },
        ];
        let box_spec = |displacement| BoxSpec {
            center: [-0.8, 0.5, 7.0],
            half_extents: [1.2, 1.0, 1.0],
            yaw: 0.15,
            displacement,
            texture: TextureParams::new(0.8, seed.wrapping_mul(31).wrapping_add(3)),
        };
        let moving_box = match preset {
            ScenePreset::Dynamic => Some(box_spec(PoseSE3::from_translation([
                PRESET_BOX_SPEED,
                0.0,
                0.0,
            ]))),
            ScenePreset::Static | ScenePreset::TwoPlane => None,
        };
        Self {
            intrinsics,
            planes,
            moving_box,
            camera_motion: PoseSE3::from_params(PRESET_CAMERA_MOTION),
            noise: 0.01,
            seed,
            noise_seed: seed,
            pseudo: PseudoDepthConfig {
                seed,
                ..Default::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.camera_motion.validate()?;
        self.pseudo.validate()?;
        if !(self.noise >= 0.0) {
            return Err(Error::Config(format!(
                "noise {} must be nonnegative",
                self.noise
            )));
        }
        if self.planes.is_empty() && self.moving_box.is_none() {
            return Err(Error::Config("scene has no surfaces".into()));
        }
        for p in &self.planes {
            let n = Vector3::from(p.normal);
            if !(n.norm() > 0.0) {
                return Err(Error::Config("plane normal must be nonzero".into()));
            }
        }
        if let Some(b) = &self.moving_box {
            b.displacement.validate()?;
            if b.half_extents.iter().any(|e| !(*e > 0.0)) {
                return Err(Error::Config("box extents must be positive".into()));
            }
        }
        Ok(())
    }
}

// Hash-based value noise.

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn lattice(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let mut h = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    h = mix64(h ^ x as u64);
    h = mix64(h ^ (y as u64).rotate_left(21));
    h = mix64(h ^ (z as u64).rotate_left(42));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, p: [f64; 3]) -> f64 {
    let cell = p.map(f64::floor);
    let f = [
        fade(p[0] - cell[0]),
        fade(p[1] - cell[1]),
        fade(p[2] - cell[2]),
    ];
    let (x0, y0, z0) = (cell[0] as i64, cell[1] as i64, cell[2] as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                    * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                    * (if dz == 1 { f[2] } else { 1.0 - f[2] });
                acc += w * lattice(seed, x0 + dx, y0 + dy, z0 + dz);
            }
        }
    }
    acc
}

/// Octaves shorter than this many pixels fade out; below half of it they are gone.
const MIN_OCTAVE_PIXELS: f64 = 4.0;

/// Approximate size in meters of camera a's pixel footprint at `p` on a surface with normal `n`.
fn footprint(p: &Vector3<f64>, n: &Vector3<f64>, focal: f64) -> f64 {
    let r = p.norm();
    let cos = (n.dot(p) / r).abs().max(0.2);
    r / (focal * cos)
}

/// Color of `texture` at surface-frame point `p`, one value per channel in [0, 1].
///
/// Octaves whose wavelength spans fewer than a few pixels of `footprint` meters
/// fade to mid-gray, so the rendered image stays band-limited.
pub fn texture_color(texture: &TextureParams, p: [f64; 3], footprint: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let seed = mix64(texture.seed.wrapping_add(c as u64 * 0x5851_f42d));
        let mut sum = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        let mut freq = 1.0 / texture.wavelength;
        for octave in 0..texture.octaves {
            let s = seed.wrapping_add(octave as u64);
            let pixels = 1.0 / (freq * footprint);
            let keep = fade(
                ((pixels - 0.5 * MIN_OCTAVE_PIXELS) / (0.5 * MIN_OCTAVE_PIXELS)).clamp(0.0, 1.0),
            );
            let value = if keep > 0.0 {
                value_noise(s, [p[0] * freq, p[1] * freq, p[2] * freq])
            } else {
                0.5
            };
            sum += amp * (keep * value + (1.0 - keep) * 0.5);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        *o = (0.5 + 2.0 * texture.contrast * (sum / norm - 0.5)).clamp(0.0, 1.0);
    }
    out
}

/// Zero-mean unit Gaussian from a counter, via Box-Muller.
fn counter_gaussian(seed: u64, view: u64, channel: u64, index: u64) -> f64 {
    let base =
        mix64(mix64(mix64(seed) ^ view.wrapping_mul(0xa076_1d64_78bd_642f)) ^ channel) ^ index;
    let a = mix64(base.wrapping_mul(2).wrapping_add(1));
    let b = mix64(base.wrapping_mul(2).wrapping_add(2));
    let u1 = ((a >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = (b >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

struct Hit {
    t: f64,
    normal: Vector3<f64>,
    color: [f64; 3],
    surface: usize,
}

/// Box placed in the world for one view.
struct PlacedBox<'a> {
    spec: &'a BoxSpec,
    rotation: Matrix3<f64>,
    center: Vector3<f64>,
}

impl<'a> PlacedBox<'a> {
    fn new(spec: &'a BoxSpec, moved: bool) -> Self {
        let rotation = Rotation3::from_axis_angle(&Vector3::y_axis(), spec.yaw).into_inner();
        let center = Vector3::from(spec.center);
        if moved {
            Self {
                spec,
                rotation: spec.displacement.rotation * rotation,
                center: spec.displacement.transform(&center),
            }
        } else {
            Self {
                spec,
                rotation,
                center,
            }
        }
    }

    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, focal: f64) -> Option<Hit> {
        let rt = self.rotation.transpose();
        let o = rt * (origin - self.center);
        let d = rt * dir;
        let e = self.spec.half_extents;
        let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut axis = 0;
        for k in 0..3 {
            if d[k].abs() < 1e-15 {
                if o[k].abs() > e[k] {
                    return None;
                }
                continue;
            }
            let (mut t0, mut t1) = ((-e[k] - o[k]) / d[k], (e[k] - o[k]) / d[k]);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            if t0 > t_near {
                t_near = t0;
                axis = k;
            }
            t_far = t_far.min(t1);
        }
        if t_near > t_far || t_near <= HIT_EPS {
            return None;
        }
        let local = o + d * t_near;
        let mut n_local = Vector3::zeros();
        n_local[axis] = -d[axis].signum();
        // The band limit follows the box's placement in frame a in both views.
        let rest = Rotation3::from_axis_angle(&Vector3::y_axis(), self.spec.yaw).into_inner();
        let at_rest = rest * local + Vector3::from(self.spec.center);
        let scale = footprint(&at_rest, &(rest * n_local), focal);
        Some(Hit {
            t: t_near,
            normal: self.rotation * n_local,
            color: texture_color(&self.spec.texture, [local.x, local.y, local.z], scale),
            surface: BOX_SURFACE,
        })
    }
}

fn intersect_plane(
    plane: &PlaneSpec,
    index: usize,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    focal: f64,
) -> Option<Hit> {
    let n = Vector3::from(plane.normal).normalize();
    let denom = n.dot(dir);
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = n.dot(&(Vector3::from(plane.point) - origin)) / denom;
    if t <= HIT_EPS {
        return None;
    }
    let p = origin + dir * t;
    let normal = if denom < 0.0 { n } else { -n };
    let color = texture_color(&plane.texture, [p.x, p.y, p.z], footprint(&p, &n, focal));
    Some(Hit {
        t,
        normal,
        color,
        surface: index,
    })
}

/// Surface id of the box; planes use their index.
const BOX_SURFACE: usize = usize::MAX;

struct RenderedView {
    image: Image,
    depth: ScalarGrid,
    normals: NormalGrid,
    surfaces: Vec<usize>,
}

fn render_view(cfg: &SceneConfig, view: char) -> Result<RenderedView> {
    let k = &cfg.intrinsics;
    let (w, h) = (k.width, k.height);
    // Rays are cast in the frame of camera a.
    let (origin, to_world) = match view {
        'a' => (Vector3::zeros(), Matrix3::identity()),
        _ => {
            let inv = cfg.camera_motion.inverse();
            (inv.translation, inv.rotation)
        }
    };
    let placed = cfg
        .moving_box
        .as_ref()
        .map(|b| PlacedBox::new(b, view == 'b'));
    let k_focal = 0.5 * (k.fx + k.fy);
    let mut channels = vec![ScalarGrid::zeros(h, w); 3];
    let mut depth = ScalarGrid::zeros(h, w);
    let mut surfaces = Vec::with_capacity(w * h);
    let mut normals = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let ray = Vector3::from(k.ray(u as f64, v as f64));
            let dir = to_world * ray;
            let mut best: Option<Hit> = None;
            let candidates = cfg
                .planes
                .iter()
                .enumerate()
                .filter_map(|(k, p)| intersect_plane(p, k, &origin, &dir, k_focal))
                .chain(
                    placed
                        .as_ref()
                        .and_then(|b| b.intersect(&origin, &dir, k_focal)),
                );
            for hit in candidates {
                if best.as_ref().map_or(true, |b| hit.t < b.t) {
                    best = Some(hit);
                }
            }
            let hit = best.ok_or(Error::UncoveredPixel { x: u, y: v, view })?;
            let i = v * w + u;
            // The camera-frame ray has unit z, so the ray parameter is the depth.
            depth.values_mut()[i] = hit.t;
            for c in 0..3 {
                let noise =
                    cfg.noise * counter_gaussian(cfg.noise_seed, view as u64, c as u64, i as u64);
                channels[c].values_mut()[i] = (hit.color[c] + noise).clamp(0.0, 1.0);
            }
            surfaces.push(hit.surface);
            let n_cam = to_world.transpose() * hit.normal;
            normals.push([n_cam.x, n_cam.y, n_cam.z]);
        }
    }
    Ok(RenderedView {
        image: Image::new(channels)?,
        depth,
        normals: NormalGrid {
            height: h,
            width: w,
            normals,
            degenerate: Vec::new(),
        },
        surfaces,
    })
}

/// Mean photometric error between two renders of view a that differ only in
/// their noise draw: the loss a perfect warp cannot go below.
pub fn photometric_noise_floor(
    cfg: &SceneConfig,
    photometric: &crate::selfsup::PhotometricConfig,
) -> Result<f64> {
    let first = render_view(cfg, 'a')?;
    let other = SceneConfig {
        noise_seed: cfg.noise_seed ^ 0x5eed_f100_d,
        ..cfg.clone()
    };
    let second = render_view(&other, 'a')?;
    let valid = ScalarGrid::filled(first.depth.height(), first.depth.width(), 1.0);
    Ok(crate::selfsup::photometric_loss(&first.image, &second.image, &valid, photometric)?.0)
}

/// Ray-casts both views and derives the dynamic mask and pseudo-depth of view a.
pub fn render_scene(cfg: &SceneConfig) -> Result<SceneSample> {
    cfg.validate()?;
    let a = render_view(cfg, 'a')?;
    let b = render_view(cfg, 'b')?;
    let moving = cfg
        .moving_box
        .as_ref()
        .map_or(false, |bx| bx.displacement != PoseSE3::identity());
    let (h, w) = (a.depth.height(), a.depth.width());
    let dynamic_mask = ScalarGrid::from_fn(h, w, |x, y| {
        if moving && a.surfaces[y * w + x] == BOX_SURFACE {
            1.0
        } else {
            0.0
        }
    });
    let pseudo_depth = make_pseudo_depth(&a.depth, &cfg.pseudo)?;
    Ok(SceneSample {
        intrinsics: cfg.intrinsics,
        image_a: a.image,
        image_b: b.image,
        depth_a: a.depth,
        depth_b: b.depth,
        pose_ab: cfg.camera_motion,
        dynamic_mask,
        pseudo_depth,
        normals_a: a.normals,
    })
}

/// Pixels of view a whose ground-truth warp into view b lands inside the image
/// with all four bilinear neighbours on the same surface as the pixel itself.
///
/// Excludes occluded pixels and those whose interpolation straddles a depth edge.
pub fn covisibility_mask(cfg: &SceneConfig) -> Result<ScalarGrid> {
    cfg.validate()?;
    let a = render_view(cfg, 'a')?;
    let b = render_view(cfg, 'b')?;
    let k = &cfg.intrinsics;
    let (w, h) = (k.width, k.height);
    let flow = crate::geometry::compute_warp(&a.depth, &cfg.camera_motion, k)?;
    Ok(ScalarGrid::from_fn(h, w, |x, y| {
        let i = y * w + x;
        if !flow.is_valid(i) {
            return 0.0;
        }
        let (fx, fy) = (flow.x.values()[i], flow.y.values()[i]);
        let (x0, y0) = (fx.floor().max(0.0) as usize, fy.floor().max(0.0) as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let same = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
            .iter()
            .all(|&(u, v)| b.surfaces[v * w + u] == a.surfaces[i]);
        if same {
            1.0
        } else {
            0.0
        }
    }))
}

/// Applies `gain * d^exponent + offset`, box-smooths, and audits ordinal preservation.
pub fn make_pseudo_depth(gt: &ScalarGrid, cfg: &PseudoDepthConfig) -> Result<ScalarGrid> {
    cfg.validate()?;
    gt.ensure_positive()?;
    let mapped = gt.map(|d| cfg.gain * d.powf(cfg.exponent) + cfg.offset);
    if cfg.radius == 0 {
        return Ok(mapped);
    }
    let (w, h) = (gt.width() as isize, gt.height() as isize);
    let r = cfg.radius as isize;
    let smoothed = ScalarGrid::from_fn(h as usize, w as usize, |x, y| {
        let (x, y) = (x as isize, y as isize);
        let mut sum = 0.0;
        let mut count = 0.0;
        for yy in (y - r).max(0)..=(y + r).min(h - 1) {
            for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                sum += mapped.get(xx as usize, yy as usize);
                count += 1.0;
            }
        }
        sum / count
    });
    audit_ordinals(gt, &smoothed, cfg)?;
    Ok(smoothed)
}

fn audit_ordinals(gt: &ScalarGrid, pseudo: &ScalarGrid, cfg: &PseudoDepthConfig) -> Result<()> {
    let n = gt.len();
    if n < 2 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0a0d_17);
    let (mut checked, mut flipped) = (0usize, 0usize);
    for _ in 0..cfg.audit_pairs {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let (ga, gb) = (gt.values()[a], gt.values()[b]);
        let label = ordinal_label(ga, gb, cfg.tau_check)?;
        if label == Ordinal::Equal {
            continue;
        }
        checked += 1;
        let (pa, pb) = (pseudo.values()[a], pseudo.values()[b]);
        let agrees = match label {
            Ordinal::Farther => pa > pb,
            _ => pa < pb,
        };
        if !agrees {
            flipped += 1;
        }
    }
    if flipped > 0 {
        Err(Error::OrdinalAudit { flipped, checked })
    } else {
        Ok(())
    }
}

/// Unstructured scene with uniform random images and depths, for gradient checks.
///
/// Draws are repeated until every warp at the ground-truth point stays at least
/// `1e-3` away from a non-differentiable point.
pub fn random_scene(width: usize, height: usize, seed: u64) -> Result<SceneSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let scene = random_draw(width, height, &mut rng)?;
        let margin = crate::grad::warp_kink_margin(
            &scene.depth_a,
            &scene.depth_b,
            &scene.pose_ab,
            &scene.intrinsics,
        )?;
        if margin >= 1e-3 {
            return Ok(scene);
        }
    }
}

fn random_draw(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Result<SceneSample> {
    let f = 1.2 * width as f64;
    let intrinsics = CameraIntrinsics::new(
        f,
        f,
        (width as f64 - 1.0) / 2.0,
        (height as f64 - 1.0) / 2.0,
        width,
        height,
    )?;
    let mut grid = |lo: f64, hi: f64| {
        let values = (0..width * height).map(|_| rng.gen_range(lo..hi)).collect();
        ScalarGrid::new(height, width, values)
    };
    let image_a = Image::new(vec![grid(0.0, 1.0)?, grid(0.0, 1.0)?, grid(0.0, 1.0)?])?;
    let image_b = Image::new(vec![grid(0.0, 1.0)?, grid(0.0, 1.0)?, grid(0.0, 1.0)?])?;
    let depth_a = grid(2.0, 4.0)?;
    let depth_b = grid(2.0, 4.0)?;
    let pseudo_depth = grid(0.5, 5.0)?;
    let params: [f64; 6] = std::array::from_fn(|k| {
        if k < 3 {
            rng.gen_range(-0.02..0.02)
        } else {
            rng.gen_range(-0.15..0.15)
        }
    });
    let normals_a = crate::prior::normals_from_depth(&depth_a, &intrinsics)?;
    Ok(SceneSample {
        intrinsics,
        image_a,
        image_b,
        depth_a,
        depth_b,
        pose_ab: PoseSE3::from_params(params),
        dynamic_mask: ScalarGrid::zeros(height, width),
        pseudo_depth,
        normals_a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::compute_warp;
    use crate::selfsup::{depth_inconsistency, photometric_loss, PhotometricConfig};
    use approx::assert_abs_diff_eq;

    fn single_plane(motion: PoseSE3, noise: f64) -> SceneConfig {
        let mut cfg = SceneConfig::preset(ScenePreset::TwoPlane, 32, 24, 5);
        cfg.planes = vec![PlaneSpec {
            point: [0.0, 0.0, 5.0],
            normal: [0.0, 0.0, -1.0],
            texture: TextureParams::new(1.0, 9),
        }];
        cfg.camera_motion = motion;
        cfg.noise = noise;
        cfg
    }

    #[test]
    fn fronto_parallel_plane_identity_motion() {
        let s = render_scene(&single_plane(PoseSE3::identity(), 0.0)).unwrap();
        for d in s.depth_a.values() {
            assert_abs_diff_eq!(*d, 5.0, epsilon = 1e-12);
        }
        assert_eq!(s.image_a, s.image_b);
        for n in &s.normals_a.normals {
            assert_eq!(*n, [0.0, 0.0, -1.0]);
        }
        assert!(s.dynamic_mask.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rendering_is_deterministic() {
        let cfg = SceneConfig::preset(ScenePreset::Dynamic, 32, 24, 11);
        assert_eq!(render_scene(&cfg).unwrap(), render_scene(&cfg).unwrap());
        let other = SceneConfig {
            noise_seed: 12,
            ..cfg.clone()
        };
        assert_ne!(
            render_scene(&cfg).unwrap().image_a,
            render_scene(&other).unwrap().image_a
        );
    }

    #[test]
    fn uncovered_rays_are_rejected() {
        let mut cfg = single_plane(PoseSE3::identity(), 0.0);
        cfg.planes[0].normal = [0.0, -1.0, 0.0];
        cfg.planes[0].point = [0.0, 1.0, 0.0];
        assert!(matches!(
            render_scene(&cfg),
            Err(Error::UncoveredPixel { .. })
        ));
    }

    #[test]
    fn lateral_shift_is_photo_consistent_under_true_warp() {
        let cfg = single_plane(PoseSE3::from_translation([-0.4, 0.0, 0.0]), 0.0);
        let s = render_scene(&cfg).unwrap();
        let flow = compute_warp(&s.depth_a, &s.pose_ab, &s.intrinsics).unwrap();
        let warped = Image::new(
            s.image_b
                .channels()
                .iter()
                .map(|c| crate::geometry::bilinear_sample(c, &flow))
                .collect(),
        )
        .unwrap();
        let shift = s.intrinsics.fx * 0.4 / 5.0;
        for i in 0..s.depth_a.len() {
            if flow.is_valid(i) {
                assert_abs_diff_eq!(
                    s.depth_a.coords(i).0 as f64 - flow.x.values()[i],
                    shift,
                    epsilon = 1e-9
                );
            }
        }
        let (loss, _) = photometric_loss(
            &s.image_a,
            &warped,
            &flow.valid,
            &PhotometricConfig::default(),
        )
        .unwrap();
        assert!(loss < 0.02, "photometric loss {loss}");
    }

    #[test]
    fn moving_box_breaks_consistency() {
        let cfg = SceneConfig::preset(ScenePreset::Dynamic, 64, 48, 3);
        let s = render_scene(&cfg).unwrap();
        let covisible = covisibility_mask(&cfg).unwrap();
        let (diff, valid) =
            depth_inconsistency(&s.depth_a, &s.depth_b, &s.pose_ab, &s.intrinsics).unwrap();
        let region_mean = |want: f64| {
            let mut sum = 0.0;
            let mut n = 0.0;
            for i in 0..diff.len() {
                let static_ok = want == 1.0 || covisible.values()[i] == 1.0;
                if valid.values()[i] == 1.0 && s.dynamic_mask.values()[i] == want && static_ok {
                    sum += diff.values()[i];
                    n += 1.0;
                }
            }
            sum / n
        };
        let (dynamic, fixed) = (region_mean(1.0), region_mean(0.0));
        assert!(fixed < 1e-3, "static inconsistency {fixed}");
        assert!(
            dynamic > 10.0 * fixed,
            "dynamic {dynamic} vs static {fixed}"
        );
    }

    #[test]
    fn pseudo_identity_and_affine() {
        let gt = ScalarGrid::from_fn(6, 7, |x, y| 1.0 + x as f64 * 0.7 + y as f64 * 0.3);
        assert_eq!(
            make_pseudo_depth(&gt, &PseudoDepthConfig::identity()).unwrap(),
            gt
        );
        let cfg = PseudoDepthConfig {
            gain: 0.5,
            exponent: 1.0,
            offset: 2.0,
            radius: 0,
            ..Default::default()
        };
        let pd = make_pseudo_depth(&gt, &cfg).unwrap();
        let abs_rel: f64 = pd
            .values()
            .iter()
            .zip(gt.values())
            .map(|(p, g)| (p - g).abs() / g)
            .sum::<f64>()
            / 42.0;
        assert!(abs_rel > 0.2);
        for i in 0..42 {
            for j in 0..42 {
                let (g, p) = (
                    gt.values()[i] - gt.values()[j],
                    pd.values()[i] - pd.values()[j],
                );
                assert_eq!(g.partial_cmp(&0.0), p.partial_cmp(&0.0));
            }
        }
    }

    #[test]
    fn power_distortion_keeps_plane_order_and_flat_normals() {
        // Near fronto-parallel plane partly covering a far one.
        let mut cfg = SceneConfig::preset(ScenePreset::TwoPlane, 24, 16, 2);
        cfg.planes = vec![PlaneSpec {
            point: [0.0, 0.0, 12.0],
            normal: [0.0, 0.0, -1.0],
            texture: TextureParams::new(1.0, 1),
        }];
        cfg.moving_box = Some(BoxSpec {
            center: [-2.0, 0.0, 5.0],
            half_extents: [2.0, 6.0, 0.5],
            yaw: 0.0,
            displacement: PoseSE3::identity(),
            texture: TextureParams::new(1.0, 2),
        });
        cfg.pseudo = PseudoDepthConfig {
            gain: 1.0,
            exponent: 1.3,
            offset: 0.0,
            radius: 0,
            ..Default::default()
        };
        let s = render_scene(&cfg).unwrap();
        let near: Vec<usize> = (0..s.depth_a.len())
            .filter(|&i| s.depth_a.values()[i] < 6.0)
            .collect();
        let far: Vec<usize> = (0..s.depth_a.len())
            .filter(|&i| s.depth_a.values()[i] > 6.0)
            .collect();
        assert!(!near.is_empty() && !far.is_empty());
        let near_max = near
            .iter()
            .map(|&i| s.pseudo_depth.values()[i])
            .fold(f64::MIN, f64::max);
        let far_min = far
            .iter()
            .map(|&i| s.pseudo_depth.values()[i])
            .fold(f64::MAX, f64::min);
        assert!(near_max < far_min);
        let normals = crate::prior::normals_from_depth(&s.pseudo_depth, &s.intrinsics).unwrap();
        // Interior pixels of each region (all four neighbours in the same region).
        let w = s.width();
        for region in [&near, &far] {
            for &i in region.iter() {
                let (x, y) = (i % w, i / w);
                if x == 0 || y == 0 || x + 1 == w || y + 1 == s.height() {
                    continue;
                }
                let same = [i - 1, i + 1, i - w, i + w]
                    .iter()
                    .all(|j| region.contains(j));
                if same {
                    let n = normals.normals[i];
                    assert_abs_diff_eq!(n[2], -1.0, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn smoothing_audit() {
        let gt = ScalarGrid::from_fn(20, 20, |x, _| if x == 10 { 8.0 } else { 2.0 });
        let gentle = PseudoDepthConfig {
            radius: 1,
            ..PseudoDepthConfig::identity()
        };
        // Blurring a thin ridge ties it with its neighbours.
        assert!(matches!(
            make_pseudo_depth(&gt, &gentle),
            Err(Error::OrdinalAudit { .. })
        ));
        let smooth_gt = ScalarGrid::from_fn(20, 20, |x, y| 2.0 + 0.3 * x as f64 + 0.1 * y as f64);
        let pd = make_pseudo_depth(
            &smooth_gt,
            &PseudoDepthConfig {
                radius: 2,
                ..PseudoDepthConfig::identity()
            },
        )
        .unwrap();
        assert!(pd.values().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn counter_noise_is_standard_normal() {
        let n = 20000;
        let xs: Vec<f64> = (0..n).map(|i| counter_gaussian(7, 0, 0, i)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(
            mean.abs() < 0.03 && (var - 1.0).abs() < 0.05,
            "{mean} {var}"
        );
    }
}
