//! Scene representation: anisotropic 3D Gaussians and clouds of them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{mat_mul, transpose, unit_quat_to_mat, Mat3, Vec3};
use crate::Scalar;

/// Number of scalar parameters in one Gaussian.
pub const PARAMS_PER_GAUSSIAN: usize = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("rotation quaternion has zero norm")]
    ZeroQuaternion,
}

/// One splat. Rotation is a `(w, x, y, z)` quaternion, scale is stored as the
/// log of the per-axis standard deviation and opacity as a logit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian3D<T> {
    pub mean: Vec3<T>,
    pub rotation: [T; 4],
    pub log_scale: Vec3<T>,
    pub opacity_logit: T,
    pub color: Vec3<T>,
}

impl<T: Scalar> Gaussian3D<T> {
    pub fn isotropic(mean: Vec3<T>, sigma: T, opacity: T, color: Vec3<T>) -> Self {
        let ls = sigma.ln();
        Self {
            mean,
            rotation: [T::one(), T::zero(), T::zero(), T::zero()],
            log_scale: [ls; 3],
            opacity_logit: opacity.logit(),
            color,
        }
    }

    #[inline]
    pub fn opacity(&self) -> T {
        self.opacity_logit.sigmoid()
    }

    #[inline]
    pub fn scale(&self) -> Vec3<T> {
        self.log_scale.map(|s| s.exp())
    }

    pub fn covariance(&self) -> Result<Mat3<T>, GaussianError> {
        covariance3d(self.rotation, self.log_scale)
    }

    /// Renormalizes the rotation quaternion in place.
    pub fn normalize_rotation(&mut self) {
        let n = quat_norm(self.rotation);
        if n > T::zero() && n.is_finite() {
            self.rotation = self.rotation.map(|c| c / n);
        } else {
            self.rotation = [T::one(), T::zero(), T::zero(), T::zero()];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.color.iter().all(|v| v.is_finite())
    }

    /// Checks the per-splat invariants: unit rotation, finite positive scale,
    /// opacity strictly inside (0, 1).
    pub fn satisfies_invariants(&self) -> bool {
        if !self.is_finite() {
            return false;
        }
        let unit = (quat_norm(self.rotation) - T::one()).abs() <= T::of(1e-6);
        let scale_ok = self.scale().iter().all(|s| s.is_finite() && *s > T::zero());
        let o = self.opacity();
        unit && scale_ok && o > T::zero() && o < T::one()
    }

    /// Flattened parameters in the fixed order mean, rotation, log_scale,
    /// opacity_logit, color.
    pub fn to_params(&self) -> [T; PARAMS_PER_GAUSSIAN] {
        let mut p = [T::zero(); PARAMS_PER_GAUSSIAN];
        p[0..3].copy_from_slice(&self.mean);
        p[3..7].copy_from_slice(&self.rotation);
        p[7..10].copy_from_slice(&self.log_scale);
        p[10] = self.opacity_logit;
        p[11..14].copy_from_slice(&self.color);
        p
    }

    pub fn from_params(p: &[T; PARAMS_PER_GAUSSIAN]) -> Self {
        Self {
            mean: [p[0], p[1], p[2]],
            rotation: [p[3], p[4], p[5], p[6]],
            log_scale: [p[7], p[8], p[9]],
            opacity_logit: p[10],
            color: [p[11], p[12], p[13]],
        }
    }

    pub fn cast<U: Scalar>(&self) -> Gaussian3D<U> {
        Gaussian3D {
            mean: self.mean.map(|v| v.cast()),
            rotation: self.rotation.map(|v| v.cast()),
            log_scale: self.log_scale.map(|v| v.cast()),
            opacity_logit: self.opacity_logit.cast(),
            color: self.color.map(|v| v.cast()),
        }
    }
}

#[inline]
fn quat_norm<T: Scalar>(q: [T; 4]) -> T {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// An ordered set of splats composited over a constant background color.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianCloud<T> {
    pub gaussians: Vec<Gaussian3D<T>>,
    pub background: Vec3<T>,
}

impl<T: Scalar> GaussianCloud<T> {
    pub fn new(gaussians: Vec<Gaussian3D<T>>, background: Vec3<T>) -> Self {
        Self { gaussians, background }
    }

    pub fn empty(background: Vec3<T>) -> Self {
        Self::new(Vec::new(), background)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn satisfies_invariants(&self) -> bool {
        self.gaussians.iter().all(Gaussian3D::satisfies_invariants)
    }

    pub fn cast<U: Scalar>(&self) -> GaussianCloud<U> {
        GaussianCloud {
            gaussians: self.gaussians.iter().map(Gaussian3D::cast).collect(),
            background: self.background.map(|v| v.cast()),
        }
    }
}

/// World-space covariance `R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
///
/// The quaternion is normalized before use, so gradients flowing back through
/// [`covariance3d_backward`] are tangent to the unit sphere.
pub fn covariance3d<T: Scalar>(rotation: [T; 4], log_scale: Vec3<T>) -> Result<Mat3<T>, GaussianError> {
    if !rotation.iter().all(|v| v.is_finite()) {
        return Err(GaussianError::NonFinite("rotation"));
    }
    if !log_scale.iter().all(|v| v.is_finite()) {
        return Err(GaussianError::NonFinite("log_scale"));
    }
    let n = quat_norm(rotation);
    if n <= T::zero() {
        return Err(GaussianError::ZeroQuaternion);
    }
    let r = unit_quat_to_mat(rotation.map(|c| c / n));
    let s = log_scale.map(|v| v.exp());
    if !s.iter().all(|v| v.is_finite()) {
        return Err(GaussianError::NonFinite("scale"));
    }
    Ok(covariance_from_parts(&r, s))
}

#[inline]
pub(crate) fn covariance_from_parts<T: Scalar>(r: &Mat3<T>, s: Vec3<T>) -> Mat3<T> {
    let mut m = *r;
    for row in m.iter_mut() {
        for (v, sj) in row.iter_mut().zip(s) {
            *v *= sj;
        }
    }
    mat_mul(&m, &transpose(&m))
}

/// Pulls `dL/dΣ` back to the raw (unnormalized) quaternion and log-scale.
pub(crate) fn covariance3d_backward<T: Scalar>(
    rotation: [T; 4],
    log_scale: Vec3<T>,
    d_cov: &Mat3<T>,
) -> ([T; 4], Vec3<T>) {
    let n = quat_norm(rotation);
    let q = rotation.map(|c| c / n);
    let r = unit_quat_to_mat(q);
    let s = log_scale.map(|v| v.exp());

    // M = R S, Σ = M Mᵀ  =>  dL/dM = (G + Gᵀ) M
    let mut m = r;
    for row in m.iter_mut() {
        for (v, sj) in row.iter_mut().zip(s) {
            *v *= sj;
        }
    }
    let mut g_sym = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            g_sym[i][j] = d_cov[i][j] + d_cov[j][i];
        }
    }
    let d_m = mat_mul(&g_sym, &m);

    let mut d_log_scale = [T::zero(); 3];
    let mut d_r = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            d_log_scale[j] += d_m[i][j] * r[i][j] * s[j];
            d_r[i][j] = d_m[i][j] * s[j];
        }
    }

    let d_qhat = rotation_matrix_backward(q, &d_r);
    // q̂ = q / |q|
    let dot = d_qhat[0] * q[0] + d_qhat[1] * q[1] + d_qhat[2] * q[2] + d_qhat[3] * q[3];
    let d_q = [0, 1, 2, 3].map(|k| (d_qhat[k] - q[k] * dot) / n);
    (d_q, d_log_scale)
}

/// `dL/dq` for `R(q)` of a unit quaternion given `dL/dR`.
fn rotation_matrix_backward<T: Scalar>(q: [T; 4], g: &Mat3<T>) -> [T; 4] {
    let [w, x, y, z] = q;
    let two = T::of(2.0);
    let dw = -z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1];
    let dx = y * g[0][1] + z * g[0][2] + y * g[1][0] - two * x * g[1][1] - w * g[1][2] + z * g[2][0] + w * g[2][1]
        - two * x * g[2][2];
    let dy = -two * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1]
        - two * y * g[2][2];
    let dz = -two * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - two * z * g[1][1] + y * g[1][2]
        + x * g[2][0]
        + y * g[2][1];
    [dw * two, dx * two, dy * two, dz * two]
}
