//! Perspective (EWA) projection of 3D Gaussians to image-space Gaussians.

use crate::camera::Camera;
use crate::gaussian::{covariance3d_backward, covariance_from_parts, Gaussian3D};
use crate::linalg::{mat_mul, mat_t_vec, transpose, unit_quat_to_mat, Mat3, Vec3};
use crate::Scalar;

/// Isotropic variance in px² added to every projected covariance.
pub const LOW_PASS_DILATION: f64 = 0.3;

/// Symmetric 2×2 covariance `[[a, b], [b, c]]` in pixel² units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance2D<T> {
    pub a: T,
    pub b: T,
    pub c: T,
}

impl<T: Scalar> Covariance2D<T> {
    #[inline]
    pub fn det(&self) -> T {
        self.a * self.c - self.b * self.b
    }

    pub fn is_psd(&self) -> bool {
        self.a >= T::zero() && self.c >= T::zero() && self.det() >= T::zero()
    }

    /// Inverse `(A, B, C)` so that the Mahalanobis distance is
    /// `A dx² + 2 B dx dy + C dy²`. `None` when not positive definite.
    pub fn conic(&self) -> Option<[T; 3]> {
        let det = self.det();
        if !(det > T::zero()) || !det.is_finite() {
            return None;
        }
        let inv = T::one() / det;
        Some([self.c * inv, -self.b * inv, self.a * inv])
    }

    fn dilated(self) -> Self {
        let d = T::of(LOW_PASS_DILATION);
        Self { a: self.a + d, b: self.b, c: self.c + d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T> {
    /// Pixel coordinates; pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.
    pub mean2d: [T; 2],
    /// Projected covariance including the low-pass dilation.
    pub cov2d: Covariance2D<T>,
    /// Camera-space `z` of the mean.
    pub depth: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CullReason {
    BehindNearPlane,
    BeyondFarPlane,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projected<T> {
    Visible(Projection<T>),
    Culled(CullReason),
}

impl<T> Projected<T> {
    pub fn visible(self) -> Option<Projection<T>> {
        match self {
            Projected::Visible(p) => Some(p),
            Projected::Culled(_) => None,
        }
    }

    pub fn is_culled(&self) -> bool {
        matches!(self, Projected::Culled(_))
    }
}

/// Projection Jacobian `∂(u, v)/∂(x, y, z)` at a camera-space point.
#[inline]
fn jacobian<T: Scalar>(cam: &Camera<T>, t: Vec3<T>) -> [[T; 3]; 2] {
    let iz = T::one() / t[2];
    let iz2 = iz * iz;
    [[cam.fx * iz, T::zero(), -cam.fx * t[0] * iz2], [T::zero(), cam.fy * iz, -cam.fy * t[1] * iz2]]
}

/// `J Σ Jᵀ` for a 2×3 Jacobian.
#[inline]
fn jsj<T: Scalar>(j: &[[T; 3]; 2], s: &Mat3<T>) -> Covariance2D<T> {
    let mut js = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            js[r][c] = j[r][0] * s[0][c] + j[r][1] * s[1][c] + j[r][2] * s[2][c];
        }
    }
    let e = |r: usize, q: usize| js[r][0] * j[q][0] + js[r][1] * j[q][1] + js[r][2] * j[q][2];
    Covariance2D { a: e(0, 0), b: e(0, 1), c: e(1, 1) }
}

/// Projects a Gaussian through a pinhole camera.
///
/// Means at or in front of the near plane (camera-space `z <= near`), beyond
/// the far plane, or with non-finite parameters come back as
/// [`Projected::Culled`].
pub fn project<T: Scalar>(g: &Gaussian3D<T>, cam: &Camera<T>) -> Projected<T> {
    if !g.is_finite() {
        return Projected::Culled(CullReason::Degenerate);
    }
    let t = cam.world_to_camera(g.mean);
    if !(t[2] > cam.near) {
        return Projected::Culled(CullReason::BehindNearPlane);
    }
    if t[2] > cam.far {
        return Projected::Culled(CullReason::BeyondFarPlane);
    }
    let qn = (g.rotation.iter().map(|v| *v * *v).sum::<T>()).sqrt();
    if !(qn > T::zero()) {
        return Projected::Culled(CullReason::Degenerate);
    }
    let r = unit_quat_to_mat(g.rotation.map(|c| c / qn));
    let sigma = covariance_from_parts(&r, g.scale());
    let sigma_cam = mat_mul(&mat_mul(&cam.rotation, &sigma), &transpose(&cam.rotation));
    let j = jacobian(cam, t);
    let cov2d = jsj(&j, &sigma_cam).dilated();
    if !(cov2d.det() > T::zero()) || !cov2d.det().is_finite() {
        return Projected::Culled(CullReason::Degenerate);
    }
    let iz = T::one() / t[2];
    Projected::Visible(Projection {
        mean2d: [cam.fx * t[0] * iz + cam.cx, cam.fy * t[1] * iz + cam.cy],
        cov2d,
        depth: t[2],
    })
}

/// Gradients of one Gaussian's 3D parameters, before opacity and color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ProjectionGrad<T> {
    pub mean: Vec3<T>,
    pub rotation: [T; 4],
    pub log_scale: Vec3<T>,
}

/// Adjoint of [`project`]. `d_cov2d` holds `(∂L/∂a, ∂L/∂b, ∂L/∂c)` where `b`
/// is the shared off-diagonal entry.
pub(crate) fn project_backward<T: Scalar>(
    g: &Gaussian3D<T>,
    cam: &Camera<T>,
    d_mean2d: [T; 2],
    d_cov2d: [T; 3],
) -> ProjectionGrad<T> {
    let w = &cam.rotation;
    let t = cam.world_to_camera(g.mean);
    let sigma = covariance3d_from(g);
    let sigma_cam = mat_mul(&mat_mul(w, &sigma), &transpose(w));
    let j = jacobian(cam, t);
    let (x, y, z) = (t[0], t[1], t[2]);
    let iz = T::one() / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let two = T::of(2.0);

    // mean2d = (fx x/z + cx, fy y/z + cy)
    let mut d_t = [
        cam.fx * iz * d_mean2d[0],
        cam.fy * iz * d_mean2d[1],
        -cam.fx * x * iz2 * d_mean2d[0] - cam.fy * y * iz2 * d_mean2d[1],
    ];

    let half = T::of(0.5);
    let g2 = [[d_cov2d[0], d_cov2d[1] * half], [d_cov2d[1] * half, d_cov2d[2]]];

    // dL/dJ = 2 G J Σc
    let mut j_sc = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            j_sc[r][c] = j[r][0] * sigma_cam[0][c] + j[r][1] * sigma_cam[1][c] + j[r][2] * sigma_cam[2][c];
        }
    }
    let mut d_j = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            d_j[r][c] = two * (g2[r][0] * j_sc[0][c] + g2[r][1] * j_sc[1][c]);
        }
    }
    d_t[0] += d_j[0][2] * (-cam.fx * iz2);
    d_t[1] += d_j[1][2] * (-cam.fy * iz2);
    d_t[2] += d_j[0][0] * (-cam.fx * iz2)
        + d_j[0][2] * (two * cam.fx * x * iz3)
        + d_j[1][1] * (-cam.fy * iz2)
        + d_j[1][2] * (two * cam.fy * y * iz3);

    // dL/dΣc = Jᵀ G J, dL/dΣ = Wᵀ dΣc W
    let mut d_sc = [[T::zero(); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = T::zero();
            for r in 0..2 {
                for q in 0..2 {
                    acc += j[r][a] * g2[r][q] * j[q][b];
                }
            }
            d_sc[a][b] = acc;
        }
    }
    let d_sigma = mat_mul(&mat_mul(&transpose(w), &d_sc), w);
    let (d_rot, d_ls) = covariance3d_backward(g.rotation, g.log_scale, &d_sigma);

    ProjectionGrad { mean: mat_t_vec(w, d_t), rotation: d_rot, log_scale: d_ls }
}

fn covariance3d_from<T: Scalar>(g: &Gaussian3D<T>) -> Mat3<T> {
    let qn = (g.rotation.iter().map(|v| *v * *v).sum::<T>()).sqrt();
    let r = unit_quat_to_mat(g.rotation.map(|c| c / qn));
    covariance_from_parts(&r, g.scale())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{orbit_cameras, Intrinsics};
    use crate::linalg::{add3, axis_angle_to_mat, mat_vec, quat_from_axis_angle, quat_mul};

    fn axis_camera() -> Camera<f64> {
        // Identity pose: world == camera space.
        let intr = Intrinsics { fx: 50.0, fy: 50.0, cx: 32.0, cy: 24.0, width: 64, height: 48, near: 0.1, far: 100.0 };
        Camera::new(&intr, crate::linalg::identity3(), [0.0; 3]).unwrap()
    }

    fn gaussian(mean: [f64; 3], rot: [f64; 4], ls: [f64; 3]) -> Gaussian3D<f64> {
        Gaussian3D { mean, rotation: rot, log_scale: ls, opacity_logit: 0.0, color: [0.5; 3] }
    }

    #[test]
    fn mean_on_optical_axis_lands_on_principal_point() {
        let cam = axis_camera();
        let q = quat_from_axis_angle([0.3, 1.0, -0.2], 0.9);
        let p = project(&gaussian([0.0, 0.0, 5.0], q, [-1.0, -2.0, -1.5]), &cam).visible().unwrap();
        assert_eq!(p.mean2d, [32.0, 24.0]);
        assert_eq!(p.depth, 5.0);
    }

    #[test]
    fn isotropic_covariance_matches_finite_difference_jacobian() {
        let cam = axis_camera();
        let sigma: f64 = 0.05;
        let mean = [0.4, -0.3, 3.0];
        let g = gaussian(mean, [1.0, 0.0, 0.0, 0.0], [sigma.ln(); 3]);
        let p = project(&g, &cam).visible().unwrap();

        // Oracle: Jacobian of the pinhole map by central differences, then J σ² I Jᵀ.
        let pix = |v: [f64; 3]| [cam.fx * v[0] / v[2] + cam.cx, cam.fy * v[1] / v[2] + cam.cy];
        let h = 1e-6;
        let mut jac = [[0.0; 3]; 2];
        for k in 0..3 {
            let (mut a, mut b) = (mean, mean);
            a[k] += h;
            b[k] -= h;
            let (pa, pb) = (pix(a), pix(b));
            for r in 0..2 {
                jac[r][k] = (pa[r] - pb[r]) / (2.0 * h);
            }
        }
        let s2 = sigma * sigma;
        let e = |r: usize, q: usize| (0..3).map(|k| jac[r][k] * jac[q][k] * s2).sum::<f64>();
        let d = LOW_PASS_DILATION;
        assert!((p.cov2d.a - d - e(0, 0)).abs() < 1e-6);
        assert!((p.cov2d.b - e(0, 1)).abs() < 1e-6);
        assert!((p.cov2d.c - d - e(1, 1)).abs() < 1e-6);

        // On the axis the footprint is exactly (fσ/z)² on both diagonals.
        let on_axis = project(&gaussian([0.0, 0.0, 3.0], [1.0, 0.0, 0.0, 0.0], [sigma.ln(); 3]), &cam)
            .visible()
            .unwrap();
        let expected = (cam.fx * sigma / 3.0).powi(2);
        assert!((on_axis.cov2d.a - d - expected).abs() < 1e-9);
        assert!((on_axis.cov2d.c - d - expected).abs() < 1e-9);
        assert!(on_axis.cov2d.b.abs() < 1e-12);
    }

    #[test]
    fn depth_at_or_before_near_plane_is_culled() {
        let cam = axis_camera();
        let g = gaussian([0.0, 0.0, 0.1], [1.0, 0.0, 0.0, 0.0], [0.0; 3]);
        assert_eq!(project(&g, &cam), Projected::Culled(CullReason::BehindNearPlane));
        let g = gaussian([0.0, 0.0, -3.0], [1.0, 0.0, 0.0, 0.0], [0.0; 3]);
        assert!(project(&g, &cam).is_culled());
        let g = gaussian([0.0, 0.0, 300.0], [1.0, 0.0, 0.0, 0.0], [0.0; 3]);
        assert_eq!(project(&g, &cam), Projected::Culled(CullReason::BeyondFarPlane));
    }

    #[test]
    fn dilated_covariance_is_psd() {
        let cam = axis_camera();
        // Needle-thin splat seen end-on would be singular without dilation.
        let g = gaussian([0.0, 0.0, 2.0], [1.0, 0.0, 0.0, 0.0], [-30.0, -30.0, 0.0]);
        let p = project(&g, &cam).visible().unwrap();
        assert!(p.cov2d.is_psd());
        assert!(p.cov2d.a >= LOW_PASS_DILATION && p.cov2d.c >= LOW_PASS_DILATION);
    }

    #[test]
    fn rigid_motion_of_scene_and_camera_leaves_projection_unchanged() {
        let intr = Intrinsics::square(64);
        let cam = orbit_cameras::<f64>(5, 2.0, 0.2, [0.0; 3], &intr).unwrap()[2];
        let g = gaussian([0.1, -0.2, 0.3], quat_from_axis_angle([1.0, 0.5, 0.0], 0.4), [-2.0, -2.5, -1.8]);
        let axis = [0.2, -0.7, 0.4];
        let angle = 1.3;
        let rot = axis_angle_to_mat(axis, angle);
        let shift = [0.5, -1.0, 2.0];
        // x' = Q x + s ; camera: R' = R Qᵀ, t' = t - R' s
        let moved = Gaussian3D {
            mean: add3(mat_vec(&rot, g.mean), shift),
            rotation: quat_mul(quat_from_axis_angle(axis, angle), g.rotation),
            ..g
        };
        let r2 = mat_mul(&cam.rotation, &transpose(&rot));
        let t2 = crate::linalg::sub3(cam.translation, mat_vec(&r2, shift));
        let cam2 = Camera::new(&intr, r2, t2).unwrap();
        let a = project(&g, &cam).visible().unwrap();
        let b = project(&moved, &cam2).visible().unwrap();
        for k in 0..2 {
            assert!((a.mean2d[k] - b.mean2d[k]).abs() < 1e-4);
        }
        assert!((a.cov2d.a - b.cov2d.a).abs() < 1e-4);
        assert!((a.cov2d.b - b.cov2d.b).abs() < 1e-4);
        assert!((a.cov2d.c - b.cov2d.c).abs() < 1e-4);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let intr = Intrinsics::square(64);
        let cam = orbit_cameras::<f64>(3, 2.0, 0.3, [0.0; 3], &intr).unwrap()[1];
        let g = gaussian([0.2, 0.1, -0.3], [0.9, 0.2, -0.3, 0.1], [-2.0, -1.6, -2.4]);
        let wm = [0.7, -1.3];
        let wc = [0.4, -0.8, 1.1];
        let loss = |g: &Gaussian3D<f64>| {
            let p = project(g, &cam).visible().unwrap();
            wm[0] * p.mean2d[0] + wm[1] * p.mean2d[1] + wc[0] * p.cov2d.a + wc[1] * p.cov2d.b + wc[2] * p.cov2d.c
        };
        let grad = project_backward(&g, &cam, wm, wc);
        let analytic: Vec<f64> = grad.mean.iter().chain(grad.rotation.iter()).chain(grad.log_scale.iter()).copied().collect();
        let base = g.to_params();
        let h = 1e-6;
        for (k, a) in analytic.iter().enumerate() {
            let (mut p, mut m) = (base, base);
            p[k] += h;
            m[k] -= h;
            let fd = (loss(&Gaussian3D::from_params(&p)) - loss(&Gaussian3D::from_params(&m))) / (2.0 * h);
            assert!((fd - a).abs() <= 1e-5 * (1.0 + fd.abs()), "param {k}: fd {fd} analytic {a}");
        }
    }
}
