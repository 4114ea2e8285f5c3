//! Animated ground-truth scenes standing in for generated multi-view data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::gaussian::{Gaussian3D, GaussianCloud};
use crate::linalg::{add3, mat_vec, norm3, quat_from_axis_angle, quat_mul, scale3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    /// Anisotropic blobs scattered in a ball.
    Blobs,
    /// Three stacked spheres of splats with a nose, like a snowman.
    Snowman,
}

impl std::str::FromStr for SceneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "blobs" => Ok(Self::Blobs),
            "snowman" => Ok(Self::Snowman),
            other => Err(format!("unknown scene '{other}' (expected blobs or snowman)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub n_gaussians: usize,
    /// Radius of the region the base cloud occupies.
    pub radius: f64,
    pub seed: u64,
    /// Scales the rigid motion; zero gives a static trajectory.
    pub motion_amplitude: f64,
    /// Scales the per-Gaussian wobble on top of the rigid motion.
    pub oscillation: f64,
    pub background: [f64; 3],
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::Blobs,
            n_gaussians: 200,
            radius: 0.6,
            seed: 0,
            motion_amplitude: 1.0,
            oscillation: 0.0,
            background: [0.0; 3],
        }
    }
}

// Per unit amplitude: spin about +z per frame, vertical bob and its period.
const YAW_PER_FRAME: f64 = 0.04;
const BOB_HEIGHT: f64 = 0.05;
const BOB_PERIOD: f64 = 25.0;
const WOBBLE: f64 = 0.02;
const WOBBLE_PERIOD: f64 = 12.5;

/// A base cloud plus a closed-form trajectory; frame `t` is a pure function
/// of the spec and `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    base: GaussianCloud<f64>,
    wobble: Vec<(Vec3<f64>, f64)>,
}

impl SyntheticScene {
    pub fn new(spec: SceneSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let gaussians = match spec.kind {
            SceneKind::Blobs => blobs(&spec, &mut rng),
            SceneKind::Snowman => snowman(&spec, &mut rng),
        };
        let wobble = (0..gaussians.len())
            .map(|_| (unit_vector(&mut rng), rng.random::<f64>() * std::f64::consts::TAU))
            .collect();
        Self { base: GaussianCloud::new(gaussians, spec.background), wobble, spec }
    }

    pub fn base(&self) -> &GaussianCloud<f64> {
        &self.base
    }

    /// Rigid pose at frame `t`: yaw about +z and a vertical offset.
    pub fn pose(&self, t: usize) -> (f64, Vec3<f64>) {
        let a = self.spec.motion_amplitude;
        let t = t as f64;
        let yaw = a * YAW_PER_FRAME * t;
        let lift = a * BOB_HEIGHT * (std::f64::consts::TAU * t / BOB_PERIOD).sin();
        (yaw, [0.0, 0.0, lift])
    }

    pub fn frame(&self, t: usize) -> GaussianCloud<f64> {
        let (yaw, shift) = self.pose(t);
        let q = quat_from_axis_angle([0.0, 0.0, 1.0], yaw);
        let r = crate::linalg::quat_to_mat(q);
        let osc = self.spec.oscillation * WOBBLE;
        let phase_t = std::f64::consts::TAU * t as f64 / WOBBLE_PERIOD;
        let gaussians = self
            .base
            .gaussians
            .iter()
            .zip(&self.wobble)
            .map(|(g, (dir, phase))| {
                let local = add3(g.mean, scale3(*dir, osc * (phase_t + phase).sin()));
                Gaussian3D {
                    mean: add3(mat_vec(&r, local), shift),
                    rotation: quat_mul(q, g.rotation),
                    ..*g
                }
            })
            .collect();
        GaussianCloud::new(gaussians, self.base.background)
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    loop {
        let d: Vec3<f64> = [0; 3].map(|_| StandardNormal.sample(rng));
        let n = norm3(d);
        if n > 1e-9 {
            return scale3(d, 1.0 / n);
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let q: [f64; 4] = [0; 4].map(|_| StandardNormal.sample(rng));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    q.map(|x| x / n)
}

fn in_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vec3<f64> {
    scale3(unit_vector(rng), radius * rng.random::<f64>().cbrt())
}

fn blobs(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Gaussian3D<f64>> {
    (0..spec.n_gaussians)
        .map(|_| {
            let mean = in_ball(rng, spec.radius);
            let base = rng.random_range(0.04..0.10) * spec.radius / 0.6;
            let log_scale = [0; 3].map(|_| (base * rng.random_range(0.5..1.5f64)).ln());
            let opacity: f64 = rng.random_range(0.6..0.95);
            Gaussian3D {
                mean,
                rotation: random_rotation(rng),
                log_scale,
                opacity_logit: (opacity / (1.0 - opacity)).ln(),
                color: [0; 3].map(|_| rng.random_range(0.05..0.95)),
            }
        })
        .collect()
}

fn snowman(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Gaussian3D<f64>> {
    let r = spec.radius;
    // (center, radius, color) of body, torso and head, then the nose.
    let parts: [(Vec3<f64>, f64, Vec3<f64>); 4] = [
        ([0.0, 0.0, -0.45 * r], 0.5 * r, [0.92, 0.92, 0.95]),
        ([0.0, 0.0, 0.2 * r], 0.35 * r, [0.85, 0.88, 0.95]),
        ([0.0, 0.0, 0.68 * r], 0.25 * r, [0.95, 0.9, 0.85]),
        ([0.3 * r, 0.0, 0.7 * r], 0.08 * r, [0.95, 0.45, 0.1]),
    ];
    let weights = [0.45, 0.3, 0.18, 0.07];
    let mut out = Vec::with_capacity(spec.n_gaussians);
    for i in 0..spec.n_gaussians {
        let u = (i as f64 + 0.5) / spec.n_gaussians as f64;
        let mut acc = 0.0;
        let part = weights
            .iter()
            .position(|w| {
                acc += w;
                u < acc
            })
            .unwrap_or(3);
        let (c, pr, color) = parts[part];
        let mean = add3(c, scale3(unit_vector(rng), pr * rng.random_range(0.8..1.0)));
        let sigma = pr * 0.18;
        let shade = rng.random_range(0.85..1.0);
        out.push(Gaussian3D {
            mean,
            rotation: random_rotation(rng),
            log_scale: [0; 3].map(|_| (sigma * rng.random_range(0.7..1.3f64)).ln()),
            opacity_logit: 2.0,
            color: color.map(|x| x * shade),
        });
    }
    out
}
