//! Quality metrics of an estimate against ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::MultiBandImage;

/// Side length of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
/// Standard deviation of the SSIM Gaussian window.
pub const SSIM_SIGMA: f64 = 1.5;
/// SSIM stabilizers for dynamic range 1.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    /// Radians.
    pub sam: f64,
    pub mssim: f64,
    pub cc: f64,
}

impl MetricsReport {
    /// Fixed-precision table, one metric per line.
    pub fn table(&self) -> String {
        format!(
            "RMSE   {:.6}\nSAM    {:.6}\nMSSIM  {:.6}\nCC     {:.6}\n",
            self.rmse, self.sam, self.mssim, self.cc
        )
    }
}

fn same_geometry(est: &MultiBandImage, truth: &MultiBandImage) -> Result<()> {
    if est.geometry() != truth.geometry() {
        return Err(Error::Geometry(format!(
            "estimate is {:?} but truth is {:?}",
            est.geometry(),
            truth.geometry()
        )));
    }
    Ok(())
}

pub fn rmse(est: &MultiBandImage, truth: &MultiBandImage) -> Result<f64> {
    same_geometry(est, truth)?;
    let sq: f64 = est
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sq / est.data().len() as f64).sqrt())
}

/// Mean per-pixel spectral angle in radians. A pixel whose spectrum is zero
/// in either image contributes 0.
pub fn sam(est: &MultiBandImage, truth: &MultiBandImage) -> Result<f64> {
    same_geometry(est, truth)?;
    let n = est.pixels();
    let (a, b) = (est.data(), truth.data());
    let mut total = 0.0;
    for p in 0..n {
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for band in 0..est.bands() {
            let (x, y) = (a[band * n + p], b[band * n + p]);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        if na > 0.0 && nb > 0.0 {
            total += (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0).acos();
        }
    }
    Ok(total / n as f64)
}

/// Pearson correlation over all samples.
pub fn cc(est: &MultiBandImage, truth: &MultiBandImage) -> Result<f64> {
    same_geometry(est, truth)?;
    let (a, b) = (est.data(), truth.data());
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(a) || constant(b) {
        return Err(Error::ZeroVariance);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let t: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = t.iter().sum();
    t.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        let line = &x[i * w..(i + 1) * w];
        for j in 0..ow {
            rows[i * ow + j] = taps.iter().zip(&line[j..j + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = taps.iter().enumerate().map(|(t, c)| c * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// SSIM of two single-band planes, averaged over every window position that
/// fits inside the image.
pub fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::WindowTooLarge {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    if x.len() != h * w || y.len() != h * w {
        return Err(Error::DimensionMismatch {
            expected: h * w,
            actual: x.len().min(y.len()),
        });
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let f = |v: &[f64]| filter_valid(v, h, w, &taps);
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
    let (mx, my) = (f(x), f(y));
    let (sxx, syy, sxy) = (f(&prod(x, x)), f(&prod(y, y)), f(&prod(x, y)));
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
            / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / mx.len() as f64)
}

/// Mean over bands of the single-band SSIM.
pub fn mssim(est: &MultiBandImage, truth: &MultiBandImage) -> Result<f64> {
    same_geometry(est, truth)?;
    let (h, w) = (est.height(), est.width());
    let mut total = 0.0;
    for b in 0..est.bands() {
        total += ssim_plane(est.band(b)?.as_slice(), truth.band(b)?.as_slice(), h, w)?;
    }
    Ok(total / est.bands() as f64)
}

pub fn evaluate(est: &MultiBandImage, truth: &MultiBandImage) -> Result<MetricsReport> {
    Ok(MetricsReport {
        rmse: rmse(est, truth)?,
        sam: sam(est, truth)?,
        mssim: mssim(est, truth)?,
        cc: cc(est, truth)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Geometry;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn img(h: usize, w: usize, b: usize, data: Vec<f64>) -> MultiBandImage {
        MultiBandImage::new(h, w, b, data).unwrap()
    }

    fn pattern(h: usize, w: usize, b: usize) -> MultiBandImage {
        let g = Geometry::new(h, w, b).unwrap();
        MultiBandImage::from_fn(g, |b, i, j| {
            0.5 + 0.3 * ((i as f64 * 0.7 + b as f64).sin() * (j as f64 * 0.3).cos())
        })
        .unwrap()
    }

    #[test]
    fn rmse_examples() {
        let t = pattern(4, 4, 2);
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        let shifted = t.map(|v| v + 0.1).unwrap();
        assert!((rmse(&shifted, &t).unwrap() - 0.1).abs() < 1e-12);
        let est = img(1, 2, 1, vec![0.0, 0.0]);
        let truth = img(1, 2, 1, vec![0.3, 0.4]);
        assert!((rmse(&est, &truth).unwrap() - 0.125f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sam_examples() {
        let t = pattern(3, 3, 4);
        assert!(sam(&t.map(|v| 2.5 * v).unwrap(), &t).unwrap().abs() < 1e-7);
        let a = img(1, 1, 2, vec![1.0, 0.0]);
        let b = img(1, 1, 2, vec![0.0, 1.0]);
        assert!((sam(&a, &b).unwrap() - FRAC_PI_2).abs() < 1e-12);
        let c = img(1, 1, 2, vec![1.0, 1.0]);
        assert!((sam(&a, &c).unwrap() - FRAC_PI_4).abs() < 1e-12);
        let z = img(1, 1, 2, vec![0.0, 0.0]);
        assert_eq!(sam(&z, &c).unwrap(), 0.0);
    }

    #[test]
    fn cc_examples() {
        let t = pattern(5, 5, 2);
        assert!((cc(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        assert!((cc(&t.map(|v| 3.0 * v - 1.0).unwrap(), &t).unwrap() - 1.0).abs() < 1e-12);
        let centered = img(1, 4, 1, vec![-1.0, 2.0, 0.5, -1.5]);
        let neg = centered.map(|v| -v).unwrap();
        assert!((cc(&neg, &centered).unwrap() + 1.0).abs() < 1e-12);
        let flat = MultiBandImage::filled(t.geometry(), 0.2);
        assert!(matches!(cc(&flat, &t), Err(Error::ZeroVariance)));
    }

    #[test]
    fn mssim_examples() {
        let t = pattern(16, 16, 2);
        assert!((mssim(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        assert!(mssim(&t.map(|v| 1.0 - v).unwrap(), &t).unwrap() < 1.0);
        let small = pattern(10, 16, 1);
        assert!(matches!(mssim(&small, &small), Err(Error::WindowTooLarge { .. })));
    }

    #[test]
    fn gaussian_taps_are_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(t[i], t[10 - i]);
        }
    }

    #[test]
    fn geometry_mismatch_is_an_error() {
        let a = pattern(4, 4, 1);
        let b = pattern(4, 4, 2);
        assert!(rmse(&a, &b).is_err());
        assert!(evaluate(&a, &b).is_err());
    }
}
