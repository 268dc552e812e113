//! Pinhole camera, rigid poses, warping and bilinear sampling.
//!
//! Pixel centers sit at integer coordinates; the image domain is
//! `[0, W-1] x [0, H-1]`. A pose `P_ab` maps frame-a points into frame b as
//! `p_b = R p_a + t`.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::grid::ScalarGrid;

/// Minimum admissible projected depth in meters.
pub const MIN_PROJECTED_DEPTH: f64 = 1e-6;

/// Coordinates reported for points that cannot be projected.
pub const INVALID_COORD: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Unit-depth ray through pixel `(u, v)`.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }

    /// Intrinsics of the `width` x `height` window starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        Self::new(
            self.fx,
            self.fy,
            self.cx - x0 as f64,
            self.cy - y0 as f64,
            width,
            height,
        )
    }

    pub fn ensure_matches(&self, grid: &ScalarGrid) -> Result<()> {
        if grid.width() == self.width && grid.height() == self.height {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "grid {}x{} vs camera {}x{}",
                grid.height(),
                grid.width(),
                self.height,
                self.width
            )))
        }
    }
}

/// Rigid transform taking frame-a points into frame b.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Row-major rotation followed by translation.
    pub fn from_rows(values: [f64; 12]) -> Result<Self> {
        let rotation = Matrix3::from_row_slice(&values[..9]);
        Self::new(rotation, Vector3::new(values[9], values[10], values[11]))
    }

    pub fn to_rows(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    /// Axis-angle (first three) plus translation (last three).
    pub fn from_params(params: [f64; 6]) -> Self {
        let omega = Vector3::new(params[0], params[1], params[2]);
        Self {
            rotation: Rotation3::from_scaled_axis(omega).into_inner(),
            translation: Vector3::new(params[3], params[4], params[5]),
        }
    }

    pub fn to_params(&self) -> [f64; 6] {
        let omega = Rotation3::from_matrix_unchecked(self.rotation).scaled_axis();
        [
            omega.x,
            omega.y,
            omega.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        let det = self.rotation.determinant();
        let finite = self
            .rotation
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite());
        if finite && err < 1e-9 && (det - 1.0).abs() < 1e-9 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "rotation not in SO(3) (orthogonality error {err:e}, det {det})"
            )))
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self` after `first`: maps through `first`, then through `self`.
    pub fn compose(&self, first: &PoseSE3) -> Self {
        Self {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Applies the local perturbation `(omega, v)`: rotation `Exp(omega) R`, translation `t + v`.
    pub fn perturbed(&self, params: [f64; 6]) -> Self {
        let mut pose = Self {
            rotation: rotation_exp([params[0], params[1], params[2]]) * self.rotation,
            translation: self.translation + Vector3::new(params[3], params[4], params[5]),
        };
        pose.renormalize();
        pose
    }

    /// Projects the rotation back onto SO(3).
    pub fn renormalize(&mut self) {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        self.rotation = r;
    }
}

fn rotation_exp(omega: [f64; 3]) -> Matrix3<f64> {
    let m = perturbed_rotation(&Matrix3::identity(), [omega[0], omega[1], omega[2]]);
    Matrix3::from_fn(|i, j| m[i][j])
}

/// `Exp(omega) * base` as a generic 3x3 array; differentiable at `omega = 0`.
pub fn perturbed_rotation<S: Real>(base: &Matrix3<f64>, omega: [S; 3]) -> [[S; 3]; 3] {
    let [wx, wy, wz] = omega;
    let theta2 = wx * wx + wy * wy + wz * wz;
    // Rodrigues coefficients; Taylor series below 1e-4 rad keeps them smooth at zero.
    let (a, b) = if theta2.value() < 1e-8 {
        (
            S::cst(1.0) - theta2 / 6.0 + theta2 * theta2 / 120.0,
            S::cst(0.5) - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (S::cst(1.0) - theta.cos()) / theta2)
    };
    let k = [
        [S::zero(), -wz, wy],
        [wz, S::zero(), -wx],
        [-wy, wx, S::zero()],
    ];
    let mut exp = [[S::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut k2 = S::zero();
            for (l, kl) in k.iter().enumerate() {
                k2 = k2 + k[i][l] * kl[j];
            }
            let id = if i == j { 1.0 } else { 0.0 };
            exp[i][j] = a * k[i][j] + b * k2 + id;
        }
    }
    let mut out = [[S::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = S::zero();
            for (l, row) in exp[i].iter().enumerate() {
                acc = acc + *row * base[(l, j)];
            }
            out[i][j] = acc;
        }
    }
    out
}

/// Rotation plus translation in generic scalars.
#[derive(Clone, Copy, Debug)]
pub struct RigidTransform<S> {
    pub rotation: [[S; 3]; 3],
    pub translation: [S; 3],
}

impl<S: Real> RigidTransform<S> {
    /// The pose `base` perturbed by `params = (omega, v)`.
    pub fn from_perturbation(base: &PoseSE3, params: [S; 6]) -> Self {
        let rotation = perturbed_rotation(&base.rotation, [params[0], params[1], params[2]]);
        let translation = [
            params[3] + base.translation.x,
            params[4] + base.translation.y,
            params[5] + base.translation.z,
        ];
        Self {
            rotation,
            translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: [S; 3]) -> [S; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }
}

/// Warps pixel `(u, v)` with depth `depth` through `pose`: target `(x, y)` and target-frame depth.
#[inline]
pub fn warp_pixel<S: Real>(
    k: &CameraIntrinsics,
    pose: &RigidTransform<S>,
    u: usize,
    v: usize,
    depth: S,
) -> (S, S, S) {
    let ray = k.ray(u as f64, v as f64);
    let q = pose.apply([depth * ray[0], depth * ray[1], depth]);
    let x = q[0] / q[2] * k.fx + k.cx;
    let y = q[1] / q[2] * k.fy + k.cy;
    (x, y, q[2])
}

/// Per-pixel 3D points in camera coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PointGrid {
    pub height: usize,
    pub width: usize,
    pub points: Vec<Vector3<f64>>,
}

impl PointGrid {
    pub fn get(&self, x: usize, y: usize) -> Vector3<f64> {
        self.points[y * self.width + x]
    }
}

/// Warp targets, validity and target-frame depth for every source pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub x: ScalarGrid,
    pub y: ScalarGrid,
    pub valid: ScalarGrid,
    pub depth: ScalarGrid,
}

impl FlowField {
    pub fn is_valid(&self, index: usize) -> bool {
        self.valid.values()[index] != 0.0
    }
}

pub fn backproject(depth: &ScalarGrid, k: &CameraIntrinsics) -> Result<PointGrid> {
    depth.ensure_positive()?;
    let points = depth
        .values()
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let (u, v) = depth.coords(i);
            let r = k.ray(u as f64, v as f64);
            Vector3::new(d * r[0], d * r[1], d)
        })
        .collect();
    Ok(PointGrid {
        height: depth.height(),
        width: depth.width(),
        points,
    })
}

pub fn transform_points(points: &PointGrid, pose: &PoseSE3) -> PointGrid {
    PointGrid {
        height: points.height,
        width: points.width,
        points: points.points.iter().map(|p| pose.transform(p)).collect(),
    }
}

/// Slack on the image border so that round-off on lattice points stays inside.
const BOUNDS_SLACK: f64 = 1e-9;

#[inline]
fn in_bounds(x: f64, y: f64, width: usize, height: usize) -> bool {
    x >= -BOUNDS_SLACK
        && x <= (width - 1) as f64 + BOUNDS_SLACK
        && y >= -BOUNDS_SLACK
        && y <= (height - 1) as f64 + BOUNDS_SLACK
}

/// Projects points through `k`; points with `z <= MIN_PROJECTED_DEPTH` or outside the image are invalid.
pub fn project(points: &PointGrid, k: &CameraIntrinsics) -> FlowField {
    let (h, w) = (points.height, points.width);
    let mut x = ScalarGrid::zeros(h, w);
    let mut y = ScalarGrid::zeros(h, w);
    let mut valid = ScalarGrid::zeros(h, w);
    let mut depth = ScalarGrid::zeros(h, w);
    for (i, p) in points.points.iter().enumerate() {
        depth.values_mut()[i] = p.z;
        if p.z > MIN_PROJECTED_DEPTH {
            let u = k.fx * p.x / p.z + k.cx;
            let v = k.fy * p.y / p.z + k.cy;
            x.values_mut()[i] = u;
            y.values_mut()[i] = v;
            if in_bounds(u, v, k.width, k.height) {
                valid.values_mut()[i] = 1.0;
            }
        } else {
            x.values_mut()[i] = INVALID_COORD;
            y.values_mut()[i] = INVALID_COORD;
        }
    }
    FlowField { x, y, valid, depth }
}

/// Flow induced by depth `depth_a` and pose `pose_ab`.
pub fn compute_warp(
    depth_a: &ScalarGrid,
    pose_ab: &PoseSE3,
    k: &CameraIntrinsics,
) -> Result<FlowField> {
    k.ensure_matches(depth_a)?;
    let points = backproject(depth_a, k)?;
    Ok(project(&transform_points(&points, pose_ab), k))
}

/// Bilinear interpolation of `fetch` at `(x, y)` without a bounds check.
///
/// The cell is chosen from the coordinate values and clamped to the grid, so
/// coordinates slightly outside the image extrapolate linearly. At integer
/// coordinates the cell to the right/below is used.
#[inline]
pub fn bilinear_at<S: Real>(
    width: usize,
    height: usize,
    x: S,
    y: S,
    fetch: impl Fn(usize) -> S,
) -> S {
    let (x0, fx) = cell(x, width);
    let (y0, fy) = cell(y, height);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let v00 = fetch(y0 * width + x0);
    let v10 = fetch(y0 * width + x1);
    let v01 = fetch(y1 * width + x0);
    let v11 = fetch(y1 * width + x1);
    let top = v00 + (v10 - v00) * fx;
    let bottom = v01 + (v11 - v01) * fx;
    top + (bottom - top) * fy
}

#[inline]
fn cell<S: Real>(c: S, size: usize) -> (usize, S) {
    if size < 2 {
        return (0, c * 0.0);
    }
    let v = c.value();
    let i = if v <= 0.0 {
        0
    } else {
        (v.floor() as usize).min(size - 2)
    };
    (i, c - i as f64)
}

/// Samples `grid` at each flow target; out-of-bounds or invalid targets give 0.
pub fn bilinear_sample(grid: &ScalarGrid, coords: &FlowField) -> ScalarGrid {
    let (w, h) = (grid.width(), grid.height());
    let values = grid.values();
    let mut out = ScalarGrid::zeros(coords.x.height(), coords.x.width());
    for (i, o) in out.values_mut().iter_mut().enumerate() {
        let (x, y) = (coords.x.values()[i], coords.y.values()[i]);
        if coords.is_valid(i) && x.is_finite() && y.is_finite() && in_bounds(x, y, w, h) {
            *o = bilinear_at(w, h, x, y, |j| values[j]);
        }
    }
    out
}

/// Bilinear value of `grid` at `(x, y)`, or 0 outside the image.
pub fn sample_at(grid: &ScalarGrid, x: f64, y: f64) -> f64 {
    let (w, h) = (grid.width(), grid.height());
    if x.is_finite() && y.is_finite() && in_bounds(x, y, w, h) {
        bilinear_at(w, h, x, y, |j| grid.values()[j])
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam(fx: f64, cx: f64, cy: f64, w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics::new(fx, fx, cx, cy, w, h).unwrap()
    }

    #[test]
    fn rows_round_trip_exactly() {
        let p = PoseSE3::from_params([0.1, -0.2, 0.05, 1.0, 2.0, -3.0]);
        assert_eq!(PoseSE3::from_rows(p.to_rows()).unwrap(), p);
        let mut bad = p.to_rows();
        bad[0] = 2.0;
        assert!(PoseSE3::from_rows(bad).is_err());
    }

    #[test]
    fn backproject_principal_ray() {
        let k = cam(1.0, 0.0, 0.0, 4, 4);
        let p = backproject(&ScalarGrid::filled(4, 4, 1.0), &k).unwrap();
        assert_eq!(p.get(0, 0), Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn backproject_offset_pixel() {
        let k = cam(100.0, 50.0, 50.0, 200, 100);
        let p = backproject(&ScalarGrid::filled(100, 200, 2.0), &k).unwrap();
        assert_eq!(p.get(150, 50), Vector3::new(2.0, 0.0, 2.0));
    }

    #[test]
    fn backproject_rejects_nonpositive() {
        let k = cam(1.0, 0.0, 0.0, 3, 2);
        let mut d = ScalarGrid::filled(2, 3, 1.0);
        d.set(2, 1, -0.5);
        assert!(matches!(
            backproject(&d, &k),
            Err(Error::NonPositiveDepth { x: 2, y: 1, .. })
        ));
    }

    #[test]
    fn project_examples() {
        let k = cam(100.0, 50.0, 50.0, 100, 100);
        let pts = PointGrid {
            height: 1,
            width: 3,
            points: vec![
                Vector3::new(0.0, 0.0, 5.0),
                Vector3::new(1.0, 0.0, 1.0),
                Vector3::new(1.0, 1.0, 0.0),
            ],
        };
        let f = project(&pts, &k);
        assert_eq!(
            (f.x.values()[0], f.y.values()[0], f.depth.values()[0]),
            (50.0, 50.0, 5.0)
        );
        assert_eq!(f.x.values()[1], 150.0);
        assert_eq!(f.valid.values()[1], 0.0);
        assert_eq!(f.valid.values()[2], 0.0);
        assert!(f.x.values()[2].is_finite() && f.y.values()[2].is_finite());
    }

    #[test]
    fn project_unit_x_with_zero_principal_point() {
        let k = CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0, 200, 10).unwrap();
        let pts = PointGrid {
            height: 1,
            width: 1,
            points: vec![Vector3::new(1.0, 0.0, 1.0)],
        };
        assert_eq!(project(&pts, &k).x.values()[0], 100.0);
    }

    #[test]
    fn identity_warp_is_lattice() {
        let k = cam(30.0, 7.5, 5.5, 16, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = ScalarGrid::from_fn(12, 16, |_, _| rng.gen_range(0.5..20.0));
        let f = compute_warp(&d, &PoseSE3::identity(), &k).unwrap();
        for i in 0..d.len() {
            let (u, v) = d.coords(i);
            assert_abs_diff_eq!(f.x.values()[i], u as f64, epsilon = 1e-9);
            assert_abs_diff_eq!(f.y.values()[i], v as f64, epsilon = 1e-9);
            assert_eq!(f.depth.values()[i], d.values()[i]);
            assert_eq!(f.valid.values()[i], 1.0);
        }
    }

    #[test]
    fn lateral_translation_gives_uniform_disparity() {
        let k = cam(100.0, 40.0, 20.0, 80, 40);
        let d = ScalarGrid::filled(40, 80, 10.0);
        let f = compute_warp(&d, &PoseSE3::from_translation([0.5, 0.0, 0.0]), &k).unwrap();
        for i in 0..d.len() {
            let (u, v) = d.coords(i);
            assert_abs_diff_eq!(f.x.values()[i] - u as f64, 5.0, epsilon = 1e-9);
            assert_abs_diff_eq!(f.y.values()[i], v as f64, epsilon = 1e-9);
        }
    }

    #[test]
    fn forward_motion_past_surface_invalidates() {
        // Hand evaluation of the projection per pixel on a 4x4 grid.
        let k = cam(2.0, 1.5, 1.5, 4, 4);
        let d = ScalarGrid::from_fn(4, 4, |x, y| 1.0 + 0.5 * x as f64 + 0.25 * y as f64);
        let tz = -1.2;
        let f = compute_warp(&d, &PoseSE3::from_translation([0.0, 0.0, tz]), &k).unwrap();
        for i in 0..16 {
            let (u, v) = d.coords(i);
            let z = d.values()[i];
            let zc = z + tz;
            let expect_valid = if zc > MIN_PROJECTED_DEPTH {
                let xu = 2.0 * (z * (u as f64 - 1.5) / 2.0) / zc + 1.5;
                let yv = 2.0 * (z * (v as f64 - 1.5) / 2.0) / zc + 1.5;
                in_bounds(xu, yv, 4, 4)
            } else {
                false
            };
            assert_eq!(f.valid.values()[i] == 1.0, expect_valid, "pixel {u},{v}");
            assert_eq!(f.depth.values()[i], zc);
        }
        assert!(f.valid.values().iter().any(|&v| v == 0.0));
        assert!(f.valid.values().iter().any(|&v| v == 1.0));
    }

    #[test]
    fn bilinear_integer_and_midpoint() {
        let g = ScalarGrid::new(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(sample_at(&g, 0.5, 0.5), 0.5);
        assert_eq!(sample_at(&g, 1.0, 1.0), 1.0);
        assert_eq!(sample_at(&g, 0.0, 1.0), 1.0);
        assert_eq!(sample_at(&g, 1.5, 0.0), 0.0);
    }

    #[test]
    fn bilinear_matches_corner_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = ScalarGrid::from_fn(5, 5, |_, _| rng.gen::<f64>());
        for _ in 0..200 {
            let (x, y): (f64, f64) = (rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0));
            let (i, j) = (x.floor() as usize, y.floor() as usize);
            let (a, b) = (x - i as f64, y - j as f64);
            let oracle = (1.0 - a) * (1.0 - b) * g.get(i, j)
                + a * (1.0 - b) * g.get(i + 1, j)
                + (1.0 - a) * b * g.get(i, j + 1)
                + a * b * g.get(i + 1, j + 1);
            assert_abs_diff_eq!(sample_at(&g, x, y), oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn bilinear_sample_masks_invalid() {
        let g = ScalarGrid::filled(3, 3, 2.0);
        let flow = FlowField {
            x: ScalarGrid::new(1, 2, vec![1.5, 1.0]).unwrap(),
            y: ScalarGrid::new(1, 2, vec![1.0, 1.0]).unwrap(),
            valid: ScalarGrid::new(1, 2, vec![1.0, 0.0]).unwrap(),
            depth: ScalarGrid::filled(1, 2, 1.0),
        };
        assert_eq!(bilinear_sample(&g, &flow).values(), &[2.0, 0.0]);
    }

    #[test]
    fn perturbed_rotation_gradient_at_zero() {
        // d/d omega_z of (Exp(omega) e_x)_y is 1 at omega = 0.
        let tape = Tape::new();
        let w = [tape.var(0.0), tape.var(0.0), tape.var(0.0)];
        let r = perturbed_rotation(&Matrix3::identity(), w);
        let g = tape.gradient(r[1][0]);
        assert_abs_diff_eq!(g.wrt(w[2]), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.wrt(w[0]), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn generic_exp_matches_nalgebra() {
        for omega in [
            [0.3, -0.2, 0.9],
            [1e-5, 2e-5, -1e-5],
            [0.0, 0.0, 0.0],
            [2.5, 0.1, 0.0],
        ] {
            let ours = rotation_exp(omega);
            let reference = Rotation3::from_scaled_axis(Vector3::from(omega)).into_inner();
            assert!((ours - reference).amax() < 1e-12);
        }
    }

    fn arb_pose() -> impl Strategy<Value = PoseSE3> {
        (
            -1.5f64..1.5,
            -1.5f64..1.5,
            -1.5f64..1.5,
            -3.0f64..3.0,
            -3.0f64..3.0,
            -3.0f64..3.0,
        )
            .prop_map(|(a, b, c, x, y, z)| PoseSE3::from_params([a, b, c, x, y, z]))
    }

    proptest! {
        #[test]
        fn pose_is_valid_and_round_trips(pose in arb_pose()) {
            prop_assert!(pose.validate().is_ok());
            let back = PoseSE3::from_params(pose.to_params());
            prop_assert!((back.rotation - pose.rotation).amax() < 1e-9);
            prop_assert!((back.translation - pose.translation).amax() < 1e-9);
        }

        #[test]
        fn rigid_transform_preserves_distances(
            pose in arb_pose(),
            a in prop::array::uniform3(-10.0f64..10.0),
            b in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let (a, b) = (Vector3::from(a), Vector3::from(b));
            let before = (a - b).norm();
            let after = (pose.transform(&a) - pose.transform(&b)).norm();
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn inverse_composes_to_identity(pose in arb_pose()) {
            let id = pose.inverse().compose(&pose);
            prop_assert!((id.rotation - Matrix3::identity()).amax() < 1e-12);
            prop_assert!(id.translation.amax() < 1e-12);
        }

        #[test]
        fn project_backproject_round_trip(seed in 0u64..1000) {
            let k = cam(20.0, 4.5, 3.5, 10, 8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = ScalarGrid::from_fn(8, 10, |_, _| rng.gen_range(0.1..100.0));
            let f = project(&backproject(&d, &k).unwrap(), &k);
            for i in 0..d.len() {
                let (u, v) = d.coords(i);
                prop_assert!((f.x.values()[i] - u as f64).abs() < 1e-9);
                prop_assert!((f.y.values()[i] - v as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn inverse_pose_returns_to_source_pixels() {
        // Fronto-parallel plane, small motion: warp a->b, then warp the landing
        // points back with the inverse pose using the depth they carry in b.
        let k = cam(40.0, 15.5, 11.5, 32, 24);
        let pose = PoseSE3::from_params([0.01, -0.02, 0.005, 0.2, -0.05, 0.1]);
        let d = ScalarGrid::filled(24, 32, 6.0);
        let f = compute_warp(&d, &pose, &k).unwrap();
        let inv = pose.inverse();
        for i in 0..d.len() {
            if !f.is_valid(i) {
                continue;
            }
            let (xb, yb, zb) = (f.x.values()[i], f.y.values()[i], f.depth.values()[i]);
            let r = k.ray(xb, yb);
            let p = inv.transform(&Vector3::new(zb * r[0], zb * r[1], zb));
            let (u, v) = d.coords(i);
            assert_abs_diff_eq!(k.fx * p.x / p.z + k.cx, u as f64, epsilon = 1e-6);
            assert_abs_diff_eq!(k.fy * p.y / p.z + k.cy, v as f64, epsilon = 1e-6);
        }
    }
}
