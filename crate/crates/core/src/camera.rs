//! Pinhole cameras, orbit sampling and the JSON camera manifest.
//!
//! Camera space follows the usual vision convention: `+x` right, `+y` down,
//! `+z` along the optical axis. The world is `+z` up; orbit elevation is
//! measured from the `xy` plane toward `+z` and azimuth counter-clockwise
//! from `+x`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{add3, cross3, dot3, mat_t_vec, mat_vec, normalize3, scale3, sub3, Mat3, Vec3};
use crate::Scalar;

/// Orbit radius used when nothing else is configured.
pub const DEFAULT_ORBIT_RADIUS: f64 = 2.0;
/// Fraction of the shorter image side covered by a unit sphere at the look-at point.
pub const UNIT_SPHERE_FILL: f64 = 0.8;
pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("rotation is not orthonormal with det +1")]
    NotARotation,
    #[error("clip planes must satisfy 0 < near < far (got near={near}, far={far})")]
    ClipPlanes { near: f64, far: f64 },
    #[error("image size must be at least 1x1 (got {width}x{height})")]
    ImageSize { width: u32, height: u32 },
    #[error("non-finite camera parameter")]
    NonFinite,
    #[error("orbit needs at least one camera")]
    NoCameras,
    #[error("orbit radius must be positive (got {0})")]
    Radius(f64),
    #[error("elevation must lie strictly between -90 and 90 degrees (got {0} rad)")]
    Elevation(f64),
    #[error("look-at direction is parallel to world up or zero")]
    DegenerateLookAt,
}

/// Pixel-unit pinhole intrinsics together with image size and clip planes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl Intrinsics {
    /// Square-pixel intrinsics with the principal point at the image center,
    /// chosen so that a unit sphere seen from `distance` spans
    /// [`UNIT_SPHERE_FILL`] of the shorter image side.
    pub fn framing_unit_sphere(width: u32, height: u32, distance: f64) -> Self {
        // Silhouette radius of a unit sphere at distance d is f / sqrt(d² - 1).
        let d = distance.max(1.0 + 1e-6);
        let side = f64::from(width.min(height));
        let f = 0.5 * UNIT_SPHERE_FILL * side * (d * d - 1.0).sqrt();
        Self {
            fx: f,
            fy: f,
            cx: f64::from(width) * 0.5,
            cy: f64::from(height) * 0.5,
            width,
            height,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        }
    }

    pub fn square(resolution: u32) -> Self {
        Self::framing_unit_sphere(resolution, resolution, DEFAULT_ORBIT_RADIUS)
    }
}

/// A posed pinhole camera. `rotation`/`translation` map world points into
/// camera space: `p_cam = R p_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
    pub width: u32,
    pub height: u32,
    pub near: T,
    pub far: T,
}

impl<T: Scalar> Camera<T> {
    pub fn new(intrinsics: &Intrinsics, rotation: Mat3<T>, translation: Vec3<T>) -> Result<Self, CameraError> {
        let cam = Self {
            fx: T::of(intrinsics.fx),
            fy: T::of(intrinsics.fy),
            cx: T::of(intrinsics.cx),
            cy: T::of(intrinsics.cy),
            rotation,
            translation,
            width: intrinsics.width,
            height: intrinsics.height,
            near: T::of(intrinsics.near),
            far: T::of(intrinsics.far),
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `center` whose optical axis passes through `target`, with
    /// image-up as close to world `+z` as possible.
    pub fn look_at(intrinsics: &Intrinsics, center: Vec3<T>, target: Vec3<T>) -> Result<Self, CameraError> {
        let forward = normalize3(sub3(target, center)).ok_or(CameraError::DegenerateLookAt)?;
        let up = [T::zero(), T::zero(), T::one()];
        let right = normalize3(cross3(forward, up)).ok_or(CameraError::DegenerateLookAt)?;
        let down = cross3(forward, right);
        let rotation = [right, down, forward];
        let translation = scale3(mat_vec(&rotation, center), -T::one());
        Self::new(intrinsics, rotation, translation)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.near, self.far]
            .iter()
            .chain(self.rotation.iter().flatten())
            .chain(self.translation.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(CameraError::NonFinite);
        }
        if self.width < 1 || self.height < 1 {
            return Err(CameraError::ImageSize { width: self.width, height: self.height });
        }
        if !(self.near > T::zero() && self.near < self.far) {
            return Err(CameraError::ClipPlanes { near: self.near.to_f64_lossy(), far: self.far.to_f64_lossy() });
        }
        let tol = T::of(1e-6);
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let e = dot3(r[i], r[j]) - if i == j { T::one() } else { T::zero() };
                if e.abs() > tol {
                    return Err(CameraError::NotARotation);
                }
            }
        }
        if (crate::linalg::det3(r) - T::one()).abs() > tol {
            return Err(CameraError::NotARotation);
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx.to_f64_lossy(),
            fy: self.fy.to_f64_lossy(),
            cx: self.cx.to_f64_lossy(),
            cy: self.cy.to_f64_lossy(),
            width: self.width,
            height: self.height,
            near: self.near.to_f64_lossy(),
            far: self.far.to_f64_lossy(),
        }
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vec3<T> {
        scale3(mat_t_vec(&self.rotation, self.translation), -T::one())
    }

    /// Optical axis direction in world coordinates.
    pub fn forward(&self) -> Vec3<T> {
        self.rotation[2]
    }

    #[inline]
    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        add3(mat_vec(&self.rotation, p), self.translation)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn cast<U: Scalar>(&self) -> Camera<U> {
        Camera {
            fx: self.fx.cast(),
            fy: self.fy.cast(),
            cx: self.cx.cast(),
            cy: self.cy.cast(),
            rotation: crate::linalg::map_mat(&self.rotation),
            translation: crate::linalg::map_vec(self.translation),
            width: self.width,
            height: self.height,
            near: self.near.cast(),
            far: self.far.cast(),
        }
    }
}

/// Parameters of a ring of cameras around a look-at point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub count: usize,
    pub radius: f64,
    /// Radians above the `xy` plane.
    pub elevation: f64,
    pub look_at: [f64; 3],
    /// Azimuth of the first camera, radians.
    #[serde(default)]
    pub azimuth_offset: f64,
}

impl OrbitSpec {
    pub fn new(count: usize) -> Self {
        Self { count, radius: DEFAULT_ORBIT_RADIUS, elevation: 0.0, look_at: [0.0; 3], azimuth_offset: 0.0 }
    }

    /// Azimuth of camera `k` in radians.
    pub fn azimuth(&self, k: usize) -> f64 {
        self.azimuth_offset + std::f64::consts::TAU * k as f64 / self.count as f64
    }

    pub fn cameras<T: Scalar>(&self, intrinsics: &Intrinsics) -> Result<Vec<Camera<T>>, CameraError> {
        if self.count == 0 {
            return Err(CameraError::NoCameras);
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(CameraError::Radius(self.radius));
        }
        if !(self.elevation.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(CameraError::Elevation(self.elevation));
        }
        let target = self.look_at.map(T::of);
        (0..self.count)
            .map(|k| {
                let az = self.azimuth(k);
                let (se, ce) = self.elevation.sin_cos();
                let offset = [self.radius * ce * az.cos(), self.radius * ce * az.sin(), self.radius * se];
                let center = add3(target, offset.map(T::of));
                Camera::look_at(intrinsics, center, target)
            })
            .collect()
    }
}

/// `n` cameras uniformly spaced in azimuth (first at azimuth 0) at a fixed
/// elevation and distance, all aimed at `look_at`.
pub fn orbit_cameras<T: Scalar>(
    n: usize,
    radius: f64,
    elevation: f64,
    look_at: [f64; 3],
    intrinsics: &Intrinsics,
) -> Result<Vec<Camera<T>>, CameraError> {
    OrbitSpec { count: n, radius, elevation, look_at, azimuth_offset: 0.0 }.cameras(intrinsics)
}

/// JSON form of one camera. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl CameraRecord {
    pub fn from_camera<T: Scalar>(cam: &Camera<T>) -> Self {
        let i = cam.intrinsics();
        Self {
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            width: i.width,
            height: i.height,
            near: i.near,
            far: i.far,
            rotation: crate::linalg::map_mat(&cam.rotation),
            translation: crate::linalg::map_vec(cam.translation),
        }
    }

    pub fn to_camera<T: Scalar>(&self) -> Result<Camera<T>, CameraError> {
        let intr = Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            near: self.near,
            far: self.far,
        };
        Camera::new(&intr, self.rotation.map(|r| r.map(T::of)), self.translation.map(T::of))
    }
}

/// Camera set serialized as `cameras.json`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<usize>,
    pub cameras: Vec<CameraRecord>,
}

impl CameraManifest {
    pub fn from_cameras<T: Scalar>(frame_index: Option<usize>, cameras: &[Camera<T>]) -> Self {
        Self { frame_index, cameras: cameras.iter().map(CameraRecord::from_camera).collect() }
    }

    pub fn to_cameras<T: Scalar>(&self) -> Result<Vec<Camera<T>>, CameraError> {
        self.cameras.iter().map(CameraRecord::to_camera).collect()
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}
