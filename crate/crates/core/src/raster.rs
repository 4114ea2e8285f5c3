//! Tile-based differentiable rasterizer.
//!
//! Splats are projected, binned into square pixel tiles by the bounding box
//! of their 3σ ellipse, sorted front to back by `(depth, index)` and alpha
//! composited per pixel. The splat kernel is a Gaussian truncated at 3σ and
//! shifted so it reaches zero exactly at the cutoff, which keeps the image a
//! continuous function of every parameter.
//!
//! The backward pass does not keep per-pixel contributor chains; it replays
//! the compositing of each tile and walks the contributors back to front.
//! Per-tile partial gradients are reduced in tile order, so results are
//! bit-identical regardless of how many threads run the tiles.

use rayon::prelude::*;
use thiserror::Error;

use crate::camera::Camera;
use crate::gaussian::{Gaussian3D, GaussianCloud};
use crate::image::Image;
use crate::projection::{project, project_backward};
use crate::Scalar;

pub const DEFAULT_TILE_SIZE: usize = 16;
/// Per-pixel compositing stops once transmittance drops below this.
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;
/// Splat extent in standard deviations.
pub const FOOTPRINT_SIGMAS: f64 = 3.0;
/// Upper bound on a single splat's alpha.
pub const MAX_ALPHA: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("render state does not match the inputs of the backward pass ({0})")]
    StateMismatch(&'static str),
    #[error("upstream gradient is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    UpstreamShape { got_w: u32, got_h: u32, want_w: u32, want_h: u32 },
    #[error("tile size must be at least 1")]
    TileSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterSettings {
    pub tile_size: usize,
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self { tile_size: DEFAULT_TILE_SIZE }
    }
}

/// Inclusive-exclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub x1: u32,
    pub y0: u32,
    pub y1: u32,
}

/// A splat after projection, ready to be binned and composited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D<T> {
    /// Index into the source cloud.
    pub index: u32,
    pub mean2d: [T; 2],
    /// Inverse covariance `(A, B, C)`, Mahalanobis `A dx² + 2B dx dy + C dy²`.
    pub conic: [T; 3],
    pub cov2d: [T; 3],
    pub opacity: T,
    pub color: [T; 3],
    pub depth: T,
    /// Pixels whose centers fall inside the 3σ bounding box.
    pub rect: PixelRect,
}

/// Projects every Gaussian and keeps those with a non-empty on-screen
/// footprint, in cloud order.
pub fn project_splats<T: Scalar>(cloud: &GaussianCloud<T>, camera: &Camera<T>) -> Vec<Splat2D<T>> {
    cloud
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| splat_for(i, g, camera))
        .collect()
}

fn splat_for<T: Scalar>(index: usize, g: &Gaussian3D<T>, camera: &Camera<T>) -> Option<Splat2D<T>> {
    let p = project(g, camera).visible()?;
    let conic = p.cov2d.conic()?;
    let k = T::of(FOOTPRINT_SIGMAS);
    let half = T::of(0.5);
    let rx = k * p.cov2d.a.sqrt();
    let ry = k * p.cov2d.c.sqrt();
    // pixel i has center i + 0.5; keep centers within [m - r, m + r]
    let range = |m: T, r: T, n: u32| -> Option<(u32, u32)> {
        let lo = (m - r - half).ceil();
        let hi = (m + r - half).floor();
        let lo = lo.max(T::zero());
        let hi = hi.min(T::of(f64::from(n) - 1.0));
        if !(lo <= hi) {
            return None;
        }
        Some((lo.to_u32()?, hi.to_u32()? + 1))
    };
    let (x0, x1) = range(p.mean2d[0], rx, camera.width)?;
    let (y0, y1) = range(p.mean2d[1], ry, camera.height)?;
    Some(Splat2D {
        index: index as u32,
        mean2d: p.mean2d,
        conic,
        cov2d: [p.cov2d.a, p.cov2d.b, p.cov2d.c],
        opacity: g.opacity(),
        color: g.color,
        depth: p.depth,
        rect: PixelRect { x0, x1, y0, y1 },
    })
}

/// Per-tile splat lists. Entries are positions into the slice passed to
/// [`tile_bin`], sorted by depth then by cloud index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn list(&self, tx: usize, ty: usize) -> &[u32] {
        &self.lists[ty * self.tiles_x + tx]
    }
}

/// Assigns each splat to every tile its 3σ bounding box touches.
pub fn tile_bin<T: Scalar>(splats: &[Splat2D<T>], width: u32, height: u32, tile_size: usize) -> TileBins {
    let ts = tile_size.max(1);
    let tiles_x = (width as usize).div_ceil(ts);
    let tiles_y = (height as usize).div_ceil(ts);
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
        sa.depth
            .partial_cmp(&sb.depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(sa.index.cmp(&sb.index))
    });
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for &s in &order {
        let r = splats[s as usize].rect;
        let (tx0, tx1) = (r.x0 as usize / ts, (r.x1 as usize - 1) / ts);
        let (ty0, ty1) = (r.y0 as usize / ts, (r.y1 as usize - 1) / ts);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                lists[ty * tiles_x + tx].push(s);
            }
        }
    }
    TileBins { tile_size: ts, tiles_x, tiles_y, lists }
}

/// Identifies the inputs a forward pass was run with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderState {
    pub width: u32,
    pub height: u32,
    pub tile_size: usize,
    pub gaussian_count: usize,
    pub fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput<T> {
    pub image: Image<T>,
    /// Accumulated opacity per pixel, row-major.
    pub alpha: Vec<T>,
    /// Number of splats composited into each pixel.
    pub contributors: Vec<u32>,
    pub state: RenderState,
}

/// Gradients with the same layout as the cloud: each field of entry `i`
/// holds `∂L/∂field` of Gaussian `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudGradients<T> {
    pub gaussians: Vec<Gaussian3D<T>>,
}

impl<T: Scalar> CloudGradients<T> {
    pub fn zeros(n: usize) -> Self {
        let z = T::zero();
        Self {
            gaussians: vec![
                Gaussian3D { mean: [z; 3], rotation: [z; 4], log_scale: [z; 3], opacity_logit: z, color: [z; 3] };
                n
            ],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.gaussians.iter().all(Gaussian3D::is_finite)
    }
}

#[derive(Clone, Copy)]
struct Kernel<T> {
    falloff_floor: T,
    inv_norm: T,
    max_q: T,
    max_alpha: T,
    half: T,
}

impl<T: Scalar> Kernel<T> {
    fn new() -> Self {
        let k = FOOTPRINT_SIGMAS;
        let floor = (-0.5 * k * k).exp();
        Self {
            falloff_floor: T::of(floor),
            inv_norm: T::of(1.0 / (1.0 - floor)),
            max_q: T::of(k * k),
            max_alpha: T::of(MAX_ALPHA),
            half: T::of(0.5),
        }
    }

    /// Returns `(alpha, falloff, d falloff / d q, clamped)` at offset `(dx, dy)`.
    #[inline(always)]
    fn eval(&self, s: &Splat2D<T>, dx: T, dy: T) -> Option<(T, T, T, bool)> {
        let [a, b, c] = s.conic;
        let q = a * dx * dx + (b + b) * dx * dy + c * dy * dy;
        if !(q < self.max_q) {
            return None;
        }
        let e = (-self.half * q).exp();
        let g = (e - self.falloff_floor) * self.inv_norm;
        let raw = s.opacity * g;
        if !(raw > T::zero()) {
            return None;
        }
        let clamped = raw > self.max_alpha;
        let alpha = if clamped { self.max_alpha } else { raw };
        Some((alpha, g, -self.half * e * self.inv_norm, clamped))
    }
}

fn fingerprint<T: Scalar>(cloud: &GaussianCloud<T>, camera: &Camera<T>) -> u64 {
    // FNV-1a over the bit patterns of every input.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |v: f64| {
        for byte in v.to_bits().to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for g in &cloud.gaussians {
        g.to_params().iter().for_each(|v| mix(v.to_f64_lossy()));
    }
    cloud.background.iter().for_each(|v| mix(v.to_f64_lossy()));
    [camera.fx, camera.fy, camera.cx, camera.cy, camera.near, camera.far]
        .iter()
        .chain(camera.rotation.iter().flatten())
        .chain(camera.translation.iter())
        .for_each(|v| mix(v.to_f64_lossy()));
    mix(f64::from(camera.width));
    mix(f64::from(camera.height));
    h
}

struct TileRect {
    x0: u32,
    x1: u32,
    y0: u32,
    y1: u32,
}

fn tile_rect(bins: &TileBins, tile: usize, width: u32, height: u32) -> TileRect {
    let ts = bins.tile_size as u32;
    let (tx, ty) = ((tile % bins.tiles_x) as u32, (tile / bins.tiles_x) as u32);
    TileRect { x0: tx * ts, x1: ((tx + 1) * ts).min(width), y0: ty * ts, y1: ((ty + 1) * ts).min(height) }
}

/// Per-pixel compositing state of one tile, reused across tiles.
struct TileScratch<T> {
    trans: Vec<T>,
    rgb: Vec<[T; 3]>,
    count: Vec<u32>,
    done: Vec<bool>,
    chains: Vec<Vec<Contribution<T>>>,
}

impl<T: Scalar> TileScratch<T> {
    fn new() -> Self {
        Self { trans: Vec::new(), rgb: Vec::new(), count: Vec::new(), done: Vec::new(), chains: Vec::new() }
    }

    /// Composites the depth-sorted `list` front to back over the pixels of
    /// `r`. Each splat only visits the pixels of its own rectangle, but every
    /// pixel still sees its splats in list order, so the per-pixel arithmetic
    /// is the same as a pixel-major loop. With `record`, every contribution
    /// is kept for the backward pass.
    fn composite(&mut self, list: &[u32], splats: &[Splat2D<T>], r: &TileRect, kernel: &Kernel<T>, cutoff: T, record: bool) {
        let tw = (r.x1 - r.x0) as usize;
        let n = tw * (r.y1 - r.y0) as usize;
        self.trans.clear();
        self.trans.resize(n, T::one());
        self.rgb.clear();
        self.rgb.resize(n, [T::zero(); 3]);
        self.count.clear();
        self.count.resize(n, 0);
        self.done.clear();
        self.done.resize(n, false);
        if record {
            self.chains.resize_with(n, Vec::new);
            self.chains.truncate(n);
            self.chains.iter_mut().for_each(Vec::clear);
        }
        let half = T::of(0.5);
        let mut active = n;
        for (slot, &si) in list.iter().enumerate() {
            let s = &splats[si as usize];
            let (x0, x1) = (s.rect.x0.max(r.x0), s.rect.x1.min(r.x1));
            let (y0, y1) = (s.rect.y0.max(r.y0), s.rect.y1.min(r.y1));
            for y in y0..y1 {
                let py = T::of(f64::from(y)) + half;
                let row = (y - r.y0) as usize * tw;
                for x in x0..x1 {
                    let p = row + (x - r.x0) as usize;
                    if self.done[p] {
                        continue;
                    }
                    let px = T::of(f64::from(x)) + half;
                    let (dx, dy) = (px - s.mean2d[0], py - s.mean2d[1]);
                    let Some((alpha, falloff, dfalloff_dq, clamped)) = kernel.eval(s, dx, dy) else {
                        continue;
                    };
                    let trans = self.trans[p];
                    let w = alpha * trans;
                    for ch in 0..3 {
                        self.rgb[p][ch] += s.color[ch] * w;
                    }
                    if record {
                        self.chains[p].push(Contribution { slot, alpha, falloff, dfalloff_dq, clamped, trans, dx, dy });
                    }
                    self.trans[p] = trans * (T::one() - alpha);
                    self.count[p] += 1;
                    if self.trans[p] < cutoff {
                        self.done[p] = true;
                        active -= 1;
                    }
                }
            }
            if active == 0 {
                break;
            }
        }
    }
}

/// Renders with the default 16-pixel tiles.
pub fn render<T: Scalar>(cloud: &GaussianCloud<T>, camera: &Camera<T>) -> RenderOutput<T> {
    render_with(cloud, camera, RasterSettings::default())
}

pub fn render_with<T: Scalar>(cloud: &GaussianCloud<T>, camera: &Camera<T>, settings: RasterSettings) -> RenderOutput<T> {
    let (width, height) = (camera.width, camera.height);
    let splats = project_splats(cloud, camera);
    let bins = tile_bin(&splats, width, height, settings.tile_size);
    let kernel = Kernel::<T>::new();
    let cutoff = T::of(TRANSMITTANCE_CUTOFF);
    let bg = cloud.background;

    let tiles: Vec<Vec<([T; 3], T, u32)>> = (0..bins.lists.len())
        .into_par_iter()
        .map_init(TileScratch::new, |scratch, tile| {
            let r = tile_rect(&bins, tile, width, height);
            scratch.composite(&bins.lists[tile], &splats, &r, &kernel, cutoff, false);
            (0..scratch.trans.len())
                .map(|p| {
                    let trans = scratch.trans[p];
                    let mut rgb = scratch.rgb[p];
                    for ch in 0..3 {
                        rgb[ch] += trans * bg[ch];
                    }
                    (rgb, T::one() - trans, scratch.count[p])
                })
                .collect()
        })
        .collect();

    let mut image = Image::zeros(width, height);
    let mut alpha = vec![T::zero(); camera.pixel_count()];
    let mut contributors = vec![0u32; camera.pixel_count()];
    for (tile, pixels) in tiles.into_iter().enumerate() {
        let r = tile_rect(&bins, tile, width, height);
        let mut it = pixels.into_iter();
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let (rgb, a, n) = it.next().expect("one result per pixel");
                let i = y as usize * width as usize + x as usize;
                image.data[i * 3..i * 3 + 3].copy_from_slice(&rgb);
                alpha[i] = a;
                contributors[i] = n;
            }
        }
    }

    RenderOutput {
        image,
        alpha,
        contributors,
        state: RenderState {
            width,
            height,
            tile_size: bins.tile_size,
            gaussian_count: cloud.len(),
            fingerprint: fingerprint(cloud, camera),
        },
    }
}

/// Partial gradient of one splat's screen-space quantities:
/// mean2d (2), conic (3), opacity (1), color (3).
type ScreenGrad<T> = [T; 9];

struct Contribution<T> {
    slot: usize,
    alpha: T,
    falloff: T,
    dfalloff_dq: T,
    clamped: bool,
    trans: T,
    dx: T,
    dy: T,
}

/// Gradients of a scalar loss with respect to every Gaussian parameter,
/// given `upstream = ∂L/∂image` and the state of the matching forward pass.
pub fn render_backward<T: Scalar>(
    cloud: &GaussianCloud<T>,
    camera: &Camera<T>,
    state: &RenderState,
    upstream: &Image<T>,
) -> Result<CloudGradients<T>, RasterError> {
    let (width, height) = (camera.width, camera.height);
    if state.width != width || state.height != height {
        return Err(RasterError::StateMismatch("image size"));
    }
    if state.gaussian_count != cloud.len() {
        return Err(RasterError::StateMismatch("gaussian count"));
    }
    if state.tile_size == 0 {
        return Err(RasterError::TileSize);
    }
    if state.fingerprint != fingerprint(cloud, camera) {
        return Err(RasterError::StateMismatch("cloud or camera parameters"));
    }
    if upstream.width != width || upstream.height != height {
        return Err(RasterError::UpstreamShape {
            got_w: upstream.width,
            got_h: upstream.height,
            want_w: width,
            want_h: height,
        });
    }

    let splats = project_splats(cloud, camera);
    let bins = tile_bin(&splats, width, height, state.tile_size);
    let kernel = Kernel::<T>::new();
    let cutoff = T::of(TRANSMITTANCE_CUTOFF);
    let bg = cloud.background;
    let half = T::of(0.5);
    let one = T::one();
    let two = T::of(2.0);

    let partials: Vec<Vec<ScreenGrad<T>>> = (0..bins.lists.len())
        .into_par_iter()
        .map_init(TileScratch::new, |scratch, tile| {
            let list = &bins.lists[tile];
            let mut acc = vec![[T::zero(); 9]; list.len()];
            if list.is_empty() {
                return acc;
            }
            let r = tile_rect(&bins, tile, width, height);
            scratch.composite(list, &splats, &r, &kernel, cutoff, true);
            let tw = (r.x1 - r.x0) as usize;
            for (p, chain) in scratch.chains.iter().enumerate() {
                let (x, y) = (r.x0 as usize + p % tw, r.y0 as usize + p / tw);
                let i = (y * width as usize + x) * 3;
                let up = [upstream.data[i], upstream.data[i + 1], upstream.data[i + 2]];
                if up.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                // back to front; `behind` is the color composited after splat k
                let trans = scratch.trans[p];
                let mut behind = [trans * bg[0], trans * bg[1], trans * bg[2]];
                for c in chain.iter().rev() {
                    let s = &splats[list[c.slot] as usize];
                    let w = c.alpha * c.trans;
                    let g = &mut acc[c.slot];
                    let mut d_alpha = T::zero();
                    for ch in 0..3 {
                        g[6 + ch] += w * up[ch];
                        d_alpha += up[ch] * (c.trans * s.color[ch] - behind[ch] / (one - c.alpha));
                        behind[ch] += s.color[ch] * w;
                    }
                    if c.clamped {
                        continue;
                    }
                    g[5] += d_alpha * c.falloff;
                    let d_q = d_alpha * s.opacity * c.dfalloff_dq;
                    let [ca, cb, cc] = s.conic;
                    g[0] += -d_q * two * (ca * c.dx + cb * c.dy);
                    g[1] += -d_q * two * (cb * c.dx + cc * c.dy);
                    g[2] += d_q * c.dx * c.dx;
                    g[3] += d_q * two * c.dx * c.dy;
                    g[4] += d_q * c.dy * c.dy;
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![[T::zero(); 9]; splats.len()];
    for (tile, acc) in partials.into_iter().enumerate() {
        for (slot, g) in acc.into_iter().enumerate() {
            let dst = &mut screen[bins.lists[tile][slot] as usize];
            for k in 0..9 {
                dst[k] += g[k];
            }
        }
    }

    let per_splat: Vec<(usize, Gaussian3D<T>)> = splats
        .par_iter()
        .zip(screen.par_iter())
        .map(|(s, sg)| {
            let g = &cloud.gaussians[s.index as usize];
            // conic = cov⁻¹  =>  dL/dcov = -M G M with G the symmetric conic gradient
            let [ca, cb, cc] = s.conic;
            let gm = [[sg[2], sg[3] * half], [sg[3] * half, sg[4]]];
            let m = [[ca, cb], [cb, cc]];
            let mut mg = [[T::zero(); 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    mg[i][j] = m[i][0] * gm[0][j] + m[i][1] * gm[1][j];
                }
            }
            let mut d_cov = [[T::zero(); 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    d_cov[i][j] = -(mg[i][0] * m[0][j] + mg[i][1] * m[1][j]);
                }
            }
            let pg = project_backward(g, camera, [sg[0], sg[1]], [d_cov[0][0], d_cov[0][1] + d_cov[1][0], d_cov[1][1]]);
            let o = s.opacity;
            (
                s.index as usize,
                Gaussian3D {
                    mean: pg.mean,
                    rotation: pg.rotation,
                    log_scale: pg.log_scale,
                    opacity_logit: sg[5] * o * (one - o),
                    color: [sg[6], sg[7], sg[8]],
                },
            )
        })
        .collect();

    let mut grads = CloudGradients::zeros(cloud.len());
    for (i, g) in per_splat {
        grads.gaussians[i] = g;
    }
    Ok(grads)
}
