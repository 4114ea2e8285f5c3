//! Image embedders and the deterministic surrogate.

use thiserror::Error;

use crate::image::Image;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding service unreachable after {attempts} attempts: {message}")]
    Connection { attempts: usize, message: String },
    #[error("malformed embedding response: {0}")]
    Malformed(String),
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding service answered {status}: {body}")]
    Service { status: u16, body: String },
}

impl EmbedError {
    /// True for failures caused by the service being unavailable rather
    /// than by the request.
    pub fn is_connectivity(&self) -> bool {
        matches!(self, Self::Connection { .. } | Self::Service { status: 500..=599, .. })
    }
}

/// Maps an image to a unit-norm vector of fixed dimension.
pub trait Embedder: Sync {
    fn id(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed(&self, image: &Image<f32>) -> Result<Vec<f32>, EmbedError>;
}

/// L2-normalizes in place; zero vectors are left untouched.
pub fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x = (f64::from(*x) / n) as f32);
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

const GRID: usize = 8;
const BINS: usize = 16;
const DCT_INPUT: usize = 32;
const DCT_KEEP: usize = 12;
pub const SURROGATE_DIM: usize = GRID * GRID + 3 * BINS + DCT_KEEP * DCT_KEEP;

/// Hand-made 256-d features: an 8×8 luminance thumbnail, 16-bin histograms
/// per channel and the magnitudes of the 12×12 lowest DCT-II coefficients of
/// a 32×32 luminance thumbnail. Each block is normalized separately so they
/// weigh equally. All features are non-negative.
#[derive(Debug, Clone)]
pub struct SurrogateEmbedder {
    dct: Vec<f64>,
}

impl Default for SurrogateEmbedder {
    fn default() -> Self {
        Self::new()
    }
}

impl SurrogateEmbedder {
    pub fn new() -> Self {
        let n = DCT_INPUT as f64;
        let mut dct = vec![0.0; DCT_KEEP * DCT_INPUT];
        for u in 0..DCT_KEEP {
            let scale = if u == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for x in 0..DCT_INPUT {
                dct[u * DCT_INPUT + x] = scale * (std::f64::consts::PI * (x as f64 + 0.5) * u as f64 / n).cos();
            }
        }
        Self { dct }
    }

    pub fn features(&self, image: &Image<f32>) -> Vec<f32> {
        let luma: Vec<f64> = image
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
            .collect();
        let (w, h) = (image.width as usize, image.height as usize);

        let mut thumb = box_downsample(&luma, w, h, GRID);
        unit(&mut thumb);

        let mut hist = vec![0.0; 3 * BINS];
        for p in image.data.chunks_exact(3) {
            for c in 0..3 {
                let v = f64::from(p[c]).clamp(0.0, 1.0);
                let bin = ((v * BINS as f64) as usize).min(BINS - 1);
                hist[c * BINS + bin] += 1.0;
            }
        }
        unit(&mut hist);

        let small = box_downsample(&luma, w, h, DCT_INPUT);
        // Separable 2D DCT: rows first, then columns.
        let mut rows = vec![0.0; DCT_INPUT * DCT_KEEP];
        for y in 0..DCT_INPUT {
            for u in 0..DCT_KEEP {
                let basis = &self.dct[u * DCT_INPUT..(u + 1) * DCT_INPUT];
                rows[y * DCT_KEEP + u] = (0..DCT_INPUT).map(|x| basis[x] * small[y * DCT_INPUT + x]).sum();
            }
        }
        let mut coeffs = vec![0.0; DCT_KEEP * DCT_KEEP];
        for v in 0..DCT_KEEP {
            let basis = &self.dct[v * DCT_INPUT..(v + 1) * DCT_INPUT];
            for u in 0..DCT_KEEP {
                let c: f64 = (0..DCT_INPUT).map(|y| basis[y] * rows[y * DCT_KEEP + u]).sum();
                coeffs[v * DCT_KEEP + u] = c.abs();
            }
        }
        unit(&mut coeffs);

        let mut out: Vec<f32> = thumb.iter().chain(&hist).chain(&coeffs).map(|x| *x as f32).collect();
        normalize(&mut out);
        out
    }
}

fn unit(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Averages a `w × h` plane onto an `n × n` grid of equal-area cells; every
/// cell covers at least one source pixel.
fn box_downsample(plane: &[f64], w: usize, h: usize, n: usize) -> Vec<f64> {
    let span = |i: usize, len: usize| {
        let a = i * len / n;
        let b = ((i + 1) * len / n).max(a + 1).min(len);
        (a.min(len - 1), b)
    };
    let mut out = vec![0.0; n * n];
    for gy in 0..n {
        let (y0, y1) = span(gy, h);
        for gx in 0..n {
            let (x0, x1) = span(gx, w);
            let mut acc = 0.0;
            for y in y0..y1 {
                acc += plane[y * w + x0..y * w + x1].iter().sum::<f64>();
            }
            out[gy * n + gx] = acc / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

impl Embedder for SurrogateEmbedder {
    fn id(&self) -> &str {
        "surrogate-256"
    }

    fn dim(&self) -> usize {
        SURROGATE_DIM
    }

    fn embed(&self, image: &Image<f32>) -> Result<Vec<f32>, EmbedError> {
        Ok(self.features(image))
    }
}
