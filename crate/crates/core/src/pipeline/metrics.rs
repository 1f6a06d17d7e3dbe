//! Image quality metrics in HU.

use crate::error::{MarError, Result};
use crate::image::{Image, Unit};
use crate::mar::MetalMask;

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Dynamic range of CT numbers.
pub const SSIM_RANGE: f64 = 4095.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Offset turning HU into non-negative CT numbers before SSIM.
const CT_OFFSET: f64 = 1024.0;
/// Margin around the metal bounding box that forms the region of interest.
pub const ROI_MARGIN: usize = 8;

/// Rectangular pixel region `[row0, row1) x [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub rows: [usize; 2],
    pub cols: [usize; 2],
}

impl Region {
    pub fn full(height: usize, width: usize) -> Self {
        Region {
            rows: [0, height],
            cols: [0, width],
        }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.rows[0]..self.rows[1]).contains(&r) && (self.cols[0]..self.cols[1]).contains(&c)
    }
}

/// Bounding box of the metal grown by `margin` pixels and clipped to the image;
/// the whole image when there is no metal.
pub fn metal_roi(mask: &MetalMask, margin: usize) -> Region {
    let (h, w) = (mask.grid.height, mask.grid.width);
    let mut rows = [usize::MAX, 0];
    let mut cols = [usize::MAX, 0];
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) {
                rows = [rows[0].min(r), rows[1].max(r + 1)];
                cols = [cols[0].min(c), cols[1].max(c + 1)];
            }
        }
    }
    if rows[0] == usize::MAX {
        return Region::full(h, w);
    }
    Region {
        rows: [rows[0].saturating_sub(margin), (rows[1] + margin).min(h)],
        cols: [cols[0].saturating_sub(margin), (cols[1] + margin).min(w)],
    }
}

fn check(x: &Image, reference: &Image, mask: &MetalMask) -> Result<()> {
    x.expect_unit(Unit::Hu)?;
    reference.expect_unit(Unit::Hu)?;
    x.expect_grid(&reference.grid)?;
    if mask.grid != x.grid {
        return Err(MarError::shape(&x.grid.shape(), &mask.grid.shape()));
    }
    Ok(())
}

/// RMSE in HU over non-metal pixels of `region`.
pub fn rmse_hu(x: &Image, reference: &Image, mask: &MetalMask, region: Region) -> Result<f64> {
    check(x, reference, mask)?;
    let w = x.grid.width;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (a, b)) in x.values.iter().zip(&reference.values).enumerate() {
        if !mask.mask[i] && region.contains(i / w, i % w) {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    if n == 0 {
        return Err(MarError::Data("no non-metal pixels to evaluate".into()));
    }
    Ok((sum / n as f64).sqrt())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian smoothing with mirrored borders.
fn smooth(values: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let half = (kernel.len() / 2) as isize;
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * values[r * w + reflect(c as isize + k as isize - half, w)];
            }
            tmp[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[reflect(r as isize + k as isize - half, h) * w + c];
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Mean SSIM over window centers that are non-metal pixels of `region`.
pub fn ssim(x: &Image, reference: &Image, mask: &MetalMask, region: Region) -> Result<f64> {
    check(x, reference, mask)?;
    let (h, w) = (x.grid.height, x.grid.width);
    let a: Vec<f64> = x.values.iter().map(|v| v + CT_OFFSET).collect();
    let b: Vec<f64> = reference.values.iter().map(|v| v + CT_OFFSET).collect();
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let mu_a = smooth(&a, h, w, &k);
    let mu_b = smooth(&b, h, w, &k);
    let aa = smooth(&prod(&a, &a), h, w, &k);
    let bb = smooth(&prod(&b, &b), h, w, &k);
    let ab = smooth(&prod(&a, &b), h, w, &k);
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..h * w {
        if mask.mask[i] || !region.contains(i / w, i % w) {
            continue;
        }
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        sum += s;
        n += 1;
    }
    if n == 0 {
        return Err(MarError::Data("no non-metal pixels to evaluate".into()));
    }
    Ok(sum / n as f64)
}

/// The four per-case numbers of the metric table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseMetrics {
    pub rmse_hu: f64,
    pub ssim: f64,
    pub roi_rmse_hu: f64,
    pub roi_ssim: f64,
}

pub fn case_metrics(x: &Image, reference: &Image, mask: &MetalMask) -> Result<CaseMetrics> {
    let full = Region::full(x.grid.height, x.grid.width);
    let roi = metal_roi(mask, ROI_MARGIN);
    Ok(CaseMetrics {
        rmse_hu: rmse_hu(x, reference, mask, full)?,
        ssim: ssim(x, reference, mask, full)?,
        roi_rmse_hu: rmse_hu(x, reference, mask, roi)?,
        roi_ssim: ssim(x, reference, mask, roi)?,
    })
}
