//! Fitting one Gaussian cloud to one set of posed views.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Camera;
use crate::gaussian::{Gaussian3D, GaussianCloud};
use crate::image::Image;
use crate::linalg::{add3, dot3, norm3, scale3, sub3, Vec3};
use crate::loss::{photometric_loss, LossError};
use crate::optim::{Adam, AdamHyper, LearningRates};
use crate::raster::{render_backward, render_with, RasterError, RasterSettings};
use crate::Scalar;

/// Reported instead of infinity when two images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Mean nearest-neighbour distance of `n` uniform points in a ball of
/// radius `r`, in units of `r / n^(1/3)`: Γ(4/3) for a Poisson process.
const NN_DISTANCE_FACTOR: f64 = 0.893;

// Keep sigmoid strictly inside (0, 1) and exp finite in f32.
const OPACITY_LOGIT_BOUND: f64 = 15.0;
const LOG_SCALE_RANGE: (f64, f64) = (-15.0, 5.0);

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid view set: {0}")]
    Views(String),
    #[error("non-finite loss {loss} at step {step} (view {view})")]
    NonFiniteLoss { step: usize, view: usize, loss: f64 },
    #[error("non-finite gradient at step {step} (view {view})")]
    NonFiniteGradient { step: usize, view: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingView<T> {
    pub camera: Camera<T>,
    pub target: Image<T>,
}

/// All posed views of a single timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameViewSet<T> {
    pub frame_index: usize,
    pub views: Vec<TrainingView<T>>,
}

impl<T: Scalar> FrameViewSet<T> {
    pub fn new(frame_index: usize, views: Vec<TrainingView<T>>) -> Result<Self, ReconstructError> {
        let set = Self { frame_index, views };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), ReconstructError> {
        let first = self.views.first().ok_or_else(|| ReconstructError::Views("no views".into()))?;
        let (w, h) = (first.target.width, first.target.height);
        for (i, v) in self.views.iter().enumerate() {
            if v.target.width != w || v.target.height != h {
                return Err(ReconstructError::Views(format!(
                    "view {i} is {}x{}, view 0 is {w}x{h}",
                    v.target.width, v.target.height
                )));
            }
            if v.camera.width != w || v.camera.height != h {
                return Err(ReconstructError::Views(format!(
                    "camera {i} is {}x{} but its image is {w}x{h}",
                    v.camera.width, v.camera.height
                )));
            }
            v.camera.validate().map_err(|e| ReconstructError::Views(format!("camera {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn resolution(&self) -> (u32, u32) {
        self.views.first().map_or((0, 0), |v| (v.target.width, v.target.height))
    }

    /// Every `step`-th view starting from the first.
    pub fn decimate(&self, step: usize) -> Self {
        let step = step.max(1);
        Self { frame_index: self.frame_index, views: self.views.iter().step_by(step).cloned().collect() }
    }

    /// Point closest (in the least-squares sense) to every optical axis.
    /// Falls back to the foot of the world origin on the first axis when the
    /// axes are all parallel.
    pub fn look_at_estimate(&self) -> Vec3<f64> {
        let mut a = [[0.0f64; 3]; 3];
        let mut b = [0.0f64; 3];
        for v in &self.views {
            let c = v.camera.center().map(|x| x.to_f64_lossy());
            let d = v.camera.forward().map(|x| x.to_f64_lossy());
            for r in 0..3 {
                for k in 0..3 {
                    let p = if r == k { 1.0 } else { 0.0 } - d[r] * d[k];
                    a[r][k] += p;
                    b[r] += p * c[k];
                }
            }
        }
        let c0 = self.views[0].camera.center().map(|x| x.to_f64_lossy());
        let d0 = self.views[0].camera.forward().map(|x| x.to_f64_lossy());
        let fallback = add3(c0, scale3(d0, -dot3(c0, d0)));
        // Two parallel axes leave a rank-deficient system.
        let scale = a.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
        match crate::linalg::inverse3(&a) {
            Some(inv) if crate::linalg::det3(&a).abs() > 1e-9 * scale.powi(3) => crate::linalg::mat_vec(&inv, b),
            _ => fallback,
        }
    }

    /// Mean distance from the camera centers to `look_at`.
    pub fn extent(&self, look_at: Vec3<f64>) -> f64 {
        let sum: f64 = self
            .views
            .iter()
            .map(|v| norm3(sub3(v.camera.center().map(|x| x.to_f64_lossy()), look_at)))
            .sum();
        sum / self.views.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewOrder {
    RoundRobin,
    /// A fresh seeded permutation of the views every epoch.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub n_splats: usize,
    pub n_steps: usize,
    pub learning_rates: LearningRates,
    pub lambda_dssim: f64,
    pub adam: AdamHyper,
    pub seed: u64,
    pub prune_opacity_threshold: f64,
    pub prune_interval: usize,
    pub view_order: ViewOrder,
    /// Radius of the ball around the look-at point that initial means fill.
    pub init_radius: f64,
    pub background: [f64; 3],
    pub tile_size: usize,
    /// When set, view sets with a different number of views are rejected.
    pub expected_views: Option<usize>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            n_splats: 100_000,
            n_steps: 4_000,
            learning_rates: LearningRates::default(),
            lambda_dssim: 0.2,
            adam: AdamHyper::default(),
            seed: 0,
            prune_opacity_threshold: 0.005,
            prune_interval: 500,
            view_order: ViewOrder::RoundRobin,
            init_radius: 1.0,
            background: [0.0; 3],
            tile_size: crate::raster::DEFAULT_TILE_SIZE,
            expected_views: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), ReconstructError> {
        let bad = |m: String| Err(ReconstructError::Config(m));
        if self.n_splats == 0 {
            return bad("n_splats must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return bad(format!("lambda_dssim must lie in [0, 1] (got {})", self.lambda_dssim));
        }
        let lr = &self.learning_rates;
        for (name, v) in [
            ("means", lr.means),
            ("log_scales", lr.log_scales),
            ("rotations", lr.rotations),
            ("opacity", lr.opacity),
            ("color", lr.color),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("learning rate for {name} must be finite and non-negative (got {v})"));
            }
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(a.epsilon > 0.0) {
            return bad("adam epsilon must be positive".into());
        }
        if !(0.0..1.0).contains(&self.prune_opacity_threshold) {
            return bad("prune_opacity_threshold must lie in [0, 1)".into());
        }
        if self.prune_interval == 0 {
            return bad("prune_interval must be at least 1".into());
        }
        if !(self.init_radius > 0.0 && self.init_radius.is_finite()) {
            return bad("init_radius must be positive".into());
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("background must lie in [0, 1]".into());
        }
        if self.tile_size == 0 {
            return bad("tile_size must be at least 1".into());
        }
        Ok(())
    }

    fn check_views<T: Scalar>(&self, views: &FrameViewSet<T>) -> Result<(), ReconstructError> {
        views.validate()?;
        if let Some(n) = self.expected_views {
            if views.len() != n {
                return Err(ReconstructError::Views(format!(
                    "frame {} has {} views, configuration expects {n}",
                    views.frame_index,
                    views.len()
                )));
            }
        }
        Ok(())
    }
}

/// Seeded initial cloud: means uniform in a ball around the estimated
/// look-at point, isotropic scales sized to the expected neighbour spacing,
/// opacity 0.1 and colors drawn from the target pixel statistics.
pub fn init_cloud<T: Scalar>(views: &FrameViewSet<T>, config: &OptimConfig) -> Result<GaussianCloud<T>, ReconstructError> {
    config.validate()?;
    config.check_views(views)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let center = views.look_at_estimate();
    let radius = config.init_radius;
    let n = config.n_splats;

    let nn = NN_DISTANCE_FACTOR * radius / (n as f64).cbrt();
    let log_sigma = (nn / 2.0).ln();
    let logit = T::logit(T::of(0.1));

    let (mean, std) = pixel_statistics(views);
    let color_dist: Vec<Normal<f64>> =
        (0..3).map(|c| Normal::new(mean[c], std[c].max(1e-3)).expect("finite statistics")).collect();

    let gaussians = (0..n)
        .map(|_| {
            let dir: Vec3<f64> = loop {
                let d = [0; 3].map(|_| StandardNormal.sample(&mut rng));
                let len = norm3(d);
                if len > 1e-12 {
                    break scale3(d, 1.0 / len);
                }
            };
            let r = radius * rng.random::<f64>().cbrt();
            let p = add3(center, scale3(dir, r));
            let color = [0, 1, 2].map(|c| T::of(color_dist[c].sample(&mut rng).clamp(0.0, 1.0)));
            Gaussian3D {
                mean: p.map(T::of),
                rotation: [T::one(), T::zero(), T::zero(), T::zero()],
                log_scale: [T::of(log_sigma); 3],
                opacity_logit: logit,
                color,
            }
        })
        .collect();
    Ok(GaussianCloud::new(gaussians, config.background.map(T::of)))
}

fn pixel_statistics<T: Scalar>(views: &FrameViewSet<T>) -> ([f64; 3], [f64; 3]) {
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    let mut count = 0usize;
    for v in &views.views {
        for px in v.target.data.chunks_exact(3) {
            for c in 0..3 {
                let x = px[c].to_f64_lossy();
                sum[c] += x;
                sq[c] += x * x;
            }
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    let mean = sum.map(|s| s / n);
    let std = [0, 1, 2].map(|c| (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt());
    (mean, std)
}

/// Peak signal-to-noise ratio for images in [0, 1], capped at [`PSNR_CAP_DB`].
pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64, LossError> {
    if a.width != b.width || a.height != b.height {
        return Err(LossError::ShapeMismatch(a.width, a.height, b.width, b.height));
    }
    let n = a.data.len().max(1) as f64;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub view: usize,
    pub loss: f64,
    pub psnr_train: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub entries: Vec<TraceEntry>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,psnr_train\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{:e},{:.6}", e.step, e.loss, e.psnr_train);
        }
        out
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.entries.first().map(|e| e.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.entries.last().map(|e| e.loss)
    }

    /// Mean loss over the last `n` steps.
    pub fn tail_mean(&self, n: usize) -> Option<f64> {
        let n = n.min(self.entries.len());
        if n == 0 {
            return None;
        }
        Some(self.entries[self.entries.len() - n..].iter().map(|e| e.loss).sum::<f64>() / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameFit<T> {
    pub cloud: GaussianCloud<T>,
    pub trace: LossTrace,
    pub pruned: usize,
}

/// Seen by the observer after every completed step.
pub struct StepEvent<'a, T> {
    pub step: usize,
    pub entry: TraceEntry,
    pub cloud: &'a GaussianCloud<T>,
}

pub fn optimize_frame<T: Scalar>(views: &FrameViewSet<T>, config: &OptimConfig) -> Result<FrameFit<T>, ReconstructError> {
    optimize_frame_with(views, config, |_| {})
}

/// Like [`optimize_frame`], calling `observer` after each step (for
/// checkpointing or progress output).
pub fn optimize_frame_with<T: Scalar>(
    views: &FrameViewSet<T>,
    config: &OptimConfig,
    mut observer: impl FnMut(StepEvent<'_, T>),
) -> Result<FrameFit<T>, ReconstructError> {
    let mut cloud = init_cloud(views, config)?;
    let look_at = views.look_at_estimate();
    let extent = views.extent(look_at);
    let mut adam = Adam::new(cloud.len(), &config.learning_rates, extent, config.adam);
    let settings = RasterSettings { tile_size: config.tile_size };
    let mut schedule = ViewSchedule::new(views.len(), config.view_order, config.seed);
    let mut trace = LossTrace { entries: Vec::with_capacity(config.n_steps) };
    let mut pruned = 0;

    for step in 0..config.n_steps {
        let vi = schedule.next();
        let view = &views.views[vi];
        let out = render_with(&cloud, &view.camera, settings);
        let (loss, d_image) = photometric_loss(&out.image, &view.target, config.lambda_dssim)?;
        let loss = loss.to_f64_lossy();
        if !loss.is_finite() {
            return Err(ReconstructError::NonFiniteLoss { step, view: vi, loss });
        }
        let grads = render_backward(&cloud, &view.camera, &out.state, &d_image)?;
        if !grads.is_finite() {
            return Err(ReconstructError::NonFiniteGradient { step, view: vi });
        }
        adam.step(&mut cloud, &grads);
        for g in &mut cloud.gaussians {
            project_to_valid(g);
        }
        if (step + 1) % config.prune_interval == 0 {
            let threshold = T::of(config.prune_opacity_threshold);
            let keep: Vec<bool> = cloud.gaussians.iter().map(|g| g.opacity() >= threshold).collect();
            let before = cloud.len();
            adam.retain(&mut cloud, &keep);
            pruned += before - cloud.len();
        }
        let entry = TraceEntry { step, view: vi, loss, psnr_train: psnr(&out.image, &view.target)? };
        trace.entries.push(entry);
        observer(StepEvent { step, entry, cloud: &cloud });
    }
    Ok(FrameFit { cloud, trace, pruned })
}

fn project_to_valid<T: Scalar>(g: &mut Gaussian3D<T>) {
    g.normalize_rotation();
    let (lo, hi) = (T::of(LOG_SCALE_RANGE.0), T::of(LOG_SCALE_RANGE.1));
    for s in &mut g.log_scale {
        *s = s.max(lo).min(hi);
    }
    let b = T::of(OPACITY_LOGIT_BOUND);
    g.opacity_logit = g.opacity_logit.max(-b).min(b);
    for c in &mut g.color {
        *c = c.max(T::zero()).min(T::one());
    }
}

struct ViewSchedule {
    order: Vec<usize>,
    pos: usize,
    mode: ViewOrder,
    rng: ChaCha8Rng,
}

impl ViewSchedule {
    fn new(n: usize, mode: ViewOrder, seed: u64) -> Self {
        // Separate stream from the initialization draws.
        let rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce7_d01e_0f7e_a5e5);
        Self { order: (0..n).collect(), pos: n, mode, rng }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.pos = 0;
            if self.mode == ViewOrder::Shuffled {
                self.order.shuffle(&mut self.rng);
            }
        }
        let v = self.order[self.pos];
        self.pos += 1;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, OrbitSpec};
    use crate::raster::render;

    fn views_of(cloud: &GaussianCloud<f64>, n: usize, res: u32) -> FrameViewSet<f64> {
        let cams = OrbitSpec::new(n).cameras::<f64>(&Intrinsics::square(res)).unwrap();
        let views = cams
            .into_iter()
            .map(|camera| TrainingView { target: render(cloud, &camera).image, camera })
            .collect();
        FrameViewSet::new(3, views).unwrap()
    }

    fn blob() -> GaussianCloud<f64> {
        GaussianCloud::new(
            vec![
                Gaussian3D::isotropic([0.0, 0.0, 0.0], 0.3, 0.9, [0.8, 0.2, 0.1]),
                Gaussian3D::isotropic([0.2, 0.1, 0.3], 0.2, 0.8, [0.1, 0.6, 0.9]),
            ],
            [0.0; 3],
        )
    }

    fn small_config() -> OptimConfig {
        OptimConfig { n_splats: 100, n_steps: 0, ..Default::default() }
    }

    #[test]
    fn init_has_budget_and_is_seeded() {
        let views = views_of(&blob(), 4, 24);
        let cfg = small_config();
        let a = init_cloud(&views, &cfg).unwrap();
        let b = init_cloud(&views, &cfg).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);
        let c = init_cloud(&views, &OptimConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
        assert!(a.satisfies_invariants());
    }

    #[test]
    fn init_means_stay_in_ball() {
        let views = views_of(&blob(), 4, 24);
        let cloud = init_cloud(&views, &OptimConfig { n_splats: 5000, ..small_config() }).unwrap();
        let max = cloud.gaussians.iter().map(|g| norm3(g.mean)).fold(0.0, f64::max);
        assert!(max <= 1.0 + 1e-9, "max radius {max}");
        assert!(max > 0.95);
        // Volume-uniform: half the points lie inside radius 2^(-1/3).
        let inner = cloud.gaussians.iter().filter(|g| norm3(g.mean) < 0.5f64.cbrt()).count();
        assert!((inner as f64 / 5000.0 - 0.5).abs() < 0.03);
    }

    #[test]
    fn init_scale_matches_neighbour_spacing() {
        let views = views_of(&blob(), 4, 24);
        let cloud = init_cloud(&views, &OptimConfig { n_splats: 2000, ..small_config() }).unwrap();
        // Brute-force nearest neighbours, ignoring the boundary layer.
        let pts: Vec<Vec3<f64>> = cloud.gaussians.iter().map(|g| g.mean).collect();
        let mut dists = Vec::new();
        for (i, p) in pts.iter().enumerate() {
            if norm3(*p) > 0.7 {
                continue;
            }
            let d = pts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| norm3(sub3(*p, *q)))
                .fold(f64::INFINITY, f64::min);
            dists.push(d);
        }
        let mean_nn = dists.iter().sum::<f64>() / dists.len() as f64;
        let sigma = cloud.gaussians[0].scale()[0];
        assert!((2.0 * sigma / mean_nn - 1.0).abs() < 0.08, "2σ={} nn={mean_nn}", 2.0 * sigma);
    }

    #[test]
    fn look_at_estimate_recovers_orbit_center() {
        let intr = Intrinsics::square(16);
        let spec = OrbitSpec { look_at: [0.3, -0.2, 0.5], ..OrbitSpec::new(3) };
        let views = spec
            .cameras::<f64>(&intr)
            .unwrap()
            .into_iter()
            .map(|camera| TrainingView { camera, target: Image::zeros(16, 16) })
            .collect();
        let set = FrameViewSet::new(0, views).unwrap();
        let c = set.look_at_estimate();
        assert!(norm3(sub3(c, [0.3, -0.2, 0.5])) < 1e-9);
        assert!((set.extent(c) - 2.0).abs() < 1e-9);
        // A single view falls back to the point on its axis nearest the origin.
        let one = set.decimate(5);
        assert_eq!(one.len(), 1);
        assert!(one.look_at_estimate().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn zero_steps_returns_init() {
        let views = views_of(&blob(), 4, 24);
        let cfg = small_config();
        let fit = optimize_frame(&views, &cfg).unwrap();
        assert_eq!(fit.cloud, init_cloud(&views, &cfg).unwrap());
        assert!(fit.trace.entries.is_empty());
    }

    #[test]
    fn round_robin_visits_each_view_once_per_window() {
        let mut s = ViewSchedule::new(5, ViewOrder::RoundRobin, 0);
        let seq: Vec<usize> = (0..23).map(|_| s.next()).collect();
        for w in seq.windows(5) {
            let mut sorted = w.to_vec();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        }
        let mut s = ViewSchedule::new(5, ViewOrder::Shuffled, 3);
        let epoch: Vec<usize> = (0..5).map(|_| s.next()).collect();
        let mut sorted = epoch.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn short_fit_reduces_loss_and_is_deterministic() {
        let views = views_of(&blob(), 6, 32);
        let cfg = OptimConfig { n_splats: 200, n_steps: 300, prune_interval: 100, ..Default::default() };
        let a = optimize_frame(&views, &cfg).unwrap();
        let b = optimize_frame(&views, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.cloud, b.cloud);
        let first = a.trace.entries[..6].iter().map(|e| e.loss).sum::<f64>();
        let last = a.trace.entries[294..].iter().map(|e| e.loss).sum::<f64>();
        assert!(last < 0.7 * first, "first {first} last {last}");
        assert!(a.cloud.satisfies_invariants());
        assert!(a.trace.entries.iter().all(|e| e.loss.is_finite()));
        assert_eq!(a.trace.entries.len(), 300);
    }

    #[test]
    fn observer_sees_every_step() {
        let views = views_of(&blob(), 2, 16);
        let cfg = OptimConfig { n_splats: 20, n_steps: 7, ..Default::default() };
        let mut seen = Vec::new();
        optimize_frame_with(&views, &cfg, |e| seen.push((e.step, e.cloud.len()))).unwrap();
        assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_inputs() {
        let views = views_of(&blob(), 3, 16);
        let bad = OptimConfig { n_splats: 0, ..small_config() };
        assert!(matches!(init_cloud(&views, &bad), Err(ReconstructError::Config(_))));
        let bad = OptimConfig { lambda_dssim: 1.5, ..small_config() };
        assert!(matches!(optimize_frame(&views, &bad), Err(ReconstructError::Config(_))));
        let bad = OptimConfig { expected_views: Some(18), ..small_config() };
        assert!(matches!(optimize_frame(&views, &bad), Err(ReconstructError::Views(_))));
        assert!(FrameViewSet::<f64>::new(0, vec![]).is_err());
        let mut mixed = views.clone();
        mixed.views[1].target = Image::zeros(8, 8);
        assert!(mixed.validate().is_err());
    }

    #[test]
    fn psnr_reference_values() {
        let a = Image::<f64>::filled(4, 4, [0.0; 3]);
        let b = Image::<f64>::filled(4, 4, [1.0; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        assert!(psnr(&a, &b).unwrap().abs() < 1e-12);
        let c = Image::<f64>::filled(4, 4, [0.1; 3]);
        assert!((psnr(&a, &c).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let t = LossTrace {
            entries: vec![
                TraceEntry { step: 0, view: 0, loss: 0.5, psnr_train: 10.0 },
                TraceEntry { step: 1, view: 1, loss: 0.25, psnr_train: 12.5 },
            ],
        };
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,loss,psnr_train");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,2.5e-1,12.5"));
        assert_eq!(t.tail_mean(2), Some(0.375));
    }
}
