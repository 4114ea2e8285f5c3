//! Photometric training loss `(1 - λ)·L1 + λ·(1 - SSIM)` and its gradient.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5), zero padding at the
//! borders, `C1 = 0.01²`, `C2 = 0.03²`, and is averaged over all pixels and
//! channels.

use thiserror::Error;

use crate::image::Image;
use crate::Scalar;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("image shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(u32, u32, u32, u32),
    #[error("loss weight must lie in [0, 1] (got {0})")]
    Weight(f64),
}

fn check_shapes<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<(), LossError> {
    if a.width != b.width || a.height != b.height || a.data.len() != b.data.len() {
        return Err(LossError::ShapeMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_window<T: Scalar>() -> [T; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    let mut w = [T::zero(); SSIM_WINDOW];
    for (dst, v) in w.iter_mut().zip(raw) {
        *dst = T::of(v / sum);
    }
    w
}

/// Separable zero-padded "same" blur of a `w × h` plane.
fn blur<T: Scalar>(plane: &[T], w: usize, h: usize, taps: &[T; SSIM_WINDOW], tmp: &mut Vec<T>, out: &mut Vec<T>) {
    let r = SSIM_WINDOW / 2;
    tmp.clear();
    tmp.resize(w * h, T::zero());
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        let dst = &mut tmp[y * w..(y + 1) * w];
        // dst[x] += taps[k] * row[x + k - r], one shifted slice per tap
        for (k, &t) in taps.iter().enumerate() {
            let (d0, s0) = if k < r { (r - k, 0) } else { (0, k - r) };
            let len = w.saturating_sub(d0.max(s0));
            if len == 0 {
                continue;
            }
            for (d, v) in dst[d0..d0 + len].iter_mut().zip(&row[s0..s0 + len]) {
                *d += t * *v;
            }
        }
    }
    out.clear();
    out.resize(w * h, T::zero());
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        let dst = &mut out[y * w..(y + 1) * w];
        for yy in lo..=hi {
            let t = taps[yy + r - y];
            let src = &tmp[yy * w..(yy + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += t * *s;
            }
        }
    }
}

fn plane<T: Scalar>(img: &Image<T>, ch: usize) -> Vec<T> {
    img.data.iter().skip(ch).step_by(3).copied().collect()
}

/// Mean SSIM and, when requested, its gradient with respect to `x`.
fn ssim_impl<T: Scalar>(x: &Image<T>, y: &Image<T>, want_grad: bool) -> (T, Option<Image<T>>) {
    let (w, h) = (x.width as usize, x.height as usize);
    let n = w * h;
    let taps = gaussian_window::<T>();
    let c1 = T::of(SSIM_C1);
    let c2 = T::of(SSIM_C2);
    let two = T::of(2.0);
    let norm = T::one() / T::of((3 * n) as f64);
    let mut total = T::zero();
    let mut grad = want_grad.then(|| Image::zeros(x.width, x.height));

    let mut tmp = Vec::new();
    let (mut mx, mut my, mut exx, mut eyy, mut exy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for ch in 0..3 {
        let px = plane(x, ch);
        let py = plane(y, ch);
        let sq = |a: &[T], b: &[T]| a.iter().zip(b).map(|(u, v)| *u * *v).collect::<Vec<T>>();
        blur(&px, w, h, &taps, &mut tmp, &mut mx);
        blur(&py, w, h, &taps, &mut tmp, &mut my);
        blur(&sq(&px, &px), w, h, &taps, &mut tmp, &mut exx);
        blur(&sq(&py, &py), w, h, &taps, &mut tmp, &mut eyy);
        blur(&sq(&px, &py), w, h, &taps, &mut tmp, &mut exy);

        let mut d_mx = vec![T::zero(); if want_grad { n } else { 0 }];
        let mut d_exx = d_mx.clone();
        let mut d_exy = d_mx.clone();
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let sxx = exx[i] - ux * ux;
            let syy = eyy[i] - uy * uy;
            let sxy = exy[i] - ux * uy;
            let n1 = two * ux * uy + c1;
            let n2 = two * sxy + c2;
            let d1 = ux * ux + uy * uy + c1;
            let d2 = sxx + syy + c2;
            let s = (n1 * n2) / (d1 * d2);
            total += s;
            if want_grad {
                let ds_dmx = (two * uy * n2) / (d1 * d2) - s * two * ux / d1;
                let ds_dsxx = -s / d2;
                let ds_dsxy = two * n1 / (d1 * d2);
                d_mx[i] = ds_dmx - two * ux * ds_dsxx - uy * ds_dsxy;
                d_exx[i] = ds_dsxx;
                d_exy[i] = ds_dsxy;
            }
        }
        if let Some(g) = grad.as_mut() {
            let (mut b_mx, mut b_exx, mut b_exy) = (Vec::new(), Vec::new(), Vec::new());
            blur(&d_mx, w, h, &taps, &mut tmp, &mut b_mx);
            blur(&d_exx, w, h, &taps, &mut tmp, &mut b_exx);
            blur(&d_exy, w, h, &taps, &mut tmp, &mut b_exy);
            for i in 0..n {
                g.data[i * 3 + ch] = (b_mx[i] + two * px[i] * b_exx[i] + py[i] * b_exy[i]) * norm;
            }
        }
    }
    (total * norm, grad)
}

/// Mean SSIM over pixels and channels.
pub fn ssim<T: Scalar>(x: &Image<T>, y: &Image<T>) -> Result<T, LossError> {
    check_shapes(x, y)?;
    Ok(ssim_impl(x, y, false).0)
}

/// Mean absolute error over pixels and channels.
pub fn l1<T: Scalar>(x: &Image<T>, y: &Image<T>) -> Result<T, LossError> {
    check_shapes(x, y)?;
    let n = T::of(x.data.len() as f64);
    Ok(x.data.iter().zip(&y.data).map(|(a, b)| (*a - *b).abs()).sum::<T>() / n)
}

/// Returns the loss and `∂loss/∂rendered`.
pub fn photometric_loss<T: Scalar>(
    rendered: &Image<T>,
    target: &Image<T>,
    lambda_dssim: f64,
) -> Result<(T, Image<T>), LossError> {
    check_shapes(rendered, target)?;
    if !(0.0..=1.0).contains(&lambda_dssim) {
        return Err(LossError::Weight(lambda_dssim));
    }
    let lambda = T::of(lambda_dssim);
    let w_l1 = T::one() - lambda;
    let n = T::of(rendered.data.len() as f64);
    let mut l1_sum = T::zero();
    let mut grad = Image::zeros(rendered.width, rendered.height);
    for ((g, r), t) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let d = *r - *t;
        l1_sum += d.abs();
        let sign = if d > T::zero() {
            T::one()
        } else if d < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        *g = w_l1 * sign / n;
    }
    let mut loss = w_l1 * l1_sum / n;
    if lambda_dssim > 0.0 {
        let (s, ds) = ssim_impl(rendered, target, true);
        loss += lambda * (T::one() - s);
        for (g, d) in grad.data.iter_mut().zip(ds.expect("gradient requested").data) {
            *g -= lambda * d;
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: u32, h: u32) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::zeros(w, h);
        img.data.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
        img
    }

    /// Reference SSIM: explicit 2D windows, zero padding, textbook formula.
    fn oracle_ssim(x: &Image<f64>, y: &Image<f64>) -> f64 {
        let (w, h) = (x.width as i64, x.height as i64);
        let r = 5i64;
        let g1: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * 1.5 * 1.5)).exp()).collect();
        let s1: f64 = g1.iter().sum();
        let mut total = 0.0;
        for ch in 0..3 {
            for py in 0..h {
                for px in 0..w {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (qx, qy) = (px + dx, py + dy);
                            if qx < 0 || qy < 0 || qx >= w || qy >= h {
                                continue;
                            }
                            let wt = g1[(dx + r) as usize] * g1[(dy + r) as usize] / (s1 * s1);
                            let a = x.pixel(qx as u32, qy as u32)[ch];
                            let b = y.pixel(qx as u32, qy as u32)[ch];
                            mx += wt * a;
                            my += wt * b;
                            xx += wt * a * a;
                            yy += wt * b * b;
                            xy += wt * a * b;
                        }
                    }
                    let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    let c1 = 0.0001;
                    let c2 = 0.0009;
                    total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                }
            }
        }
        total / (3 * w * h) as f64
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let a = random_image(1, 9, 7);
        let (loss, grad) = photometric_loss(&a, &a, 0.2).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.data.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn all_ones_vs_all_zeros_is_one() {
        let ones = Image::filled(4, 4, [1.0_f64; 3]);
        let zeros = Image::zeros(4, 4);
        assert_eq!(photometric_loss(&ones, &zeros, 0.0).unwrap().0, 1.0);
    }

    #[test]
    fn mixed_loss_matches_reference_ssim() {
        let a = random_image(2, 17, 13);
        let b = random_image(3, 17, 13);
        let (loss, _) = photometric_loss(&a, &b, 0.2).unwrap();
        let l1_ref = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64;
        let expected = 0.8 * l1_ref + 0.2 * (1.0 - oracle_ssim(&a, &b));
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
        assert!((ssim(&a, &b).unwrap() - oracle_ssim(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = random_image(4, 12, 10);
        let b = random_image(5, 12, 10);
        let (_, grad) = photometric_loss(&a, &b, 0.2).unwrap();
        let h = 1e-7;
        for idx in [0, 7, 31, 100, 222, 359] {
            let (mut p, mut m) = (a.clone(), a.clone());
            p.data[idx] += h;
            m.data[idx] -= h;
            let fd = (photometric_loss(&p, &b, 0.2).unwrap().0 - photometric_loss(&m, &b, 0.2).unwrap().0) / (2.0 * h);
            let rel = (fd - grad.data[idx]).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-3, "idx {idx}: fd {fd} analytic {}", grad.data[idx]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = random_image(1, 4, 4);
        let b = random_image(1, 4, 5);
        assert!(matches!(photometric_loss(&a, &b, 0.2), Err(LossError::ShapeMismatch(..))));
        assert_eq!(photometric_loss(&a, &a, 1.5).unwrap_err(), LossError::Weight(1.5));
    }
}
