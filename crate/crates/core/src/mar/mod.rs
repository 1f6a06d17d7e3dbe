//! Metal segmentation, metal traces, and the non-learned sinogram completion
//! steps: linear interpolation, normalized interpolation and compositing.

mod interp;
mod morphology;

pub use interp::{li_complete, nmar_complete, nmar_prior_image, nmar_with_prior, NmarConfig};
pub use morphology::{dilate_mask, erode_mask};

use crate::error::{MarError, Result};
use crate::geometry::{ImageGrid, ScanGeometry};
use crate::image::{Image, Sinogram, Unit};
use crate::physics::SUBRAY_OFFSETS;
use crate::projector::project_many;

/// Default metal threshold in HU.
pub const METAL_THRESHOLD_HU: f64 = 2000.0;

/// Binary image-domain mask, 1 = metal.
#[derive(Debug, Clone, PartialEq)]
pub struct MetalMask {
    pub grid: ImageGrid,
    pub mask: Vec<bool>,
}

impl MetalMask {
    pub fn new(grid: ImageGrid, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), grid.len(), "mask does not match its grid");
        MetalMask { grid, mask }
    }

    pub fn empty(grid: ImageGrid) -> Self {
        MetalMask {
            grid,
            mask: vec![false; grid.len()],
        }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.grid.width + col]
    }

    /// The mask as a unit-attenuation image.
    pub fn as_image(&self) -> Image {
        Image {
            grid: self.grid,
            unit: Unit::Mu,
            values: self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &MetalMask) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    /// Sorensen-Dice overlap with `other`.
    pub fn dice(&self, other: &MetalMask) -> f64 {
        let inter = self.mask.iter().zip(&other.mask).filter(|(&a, &b)| a && b).count();
        let total = self.count() + other.count();
        if total == 0 {
            1.0
        } else {
            2.0 * inter as f64 / total as f64
        }
    }
}

/// Binary sinogram-domain mask of metal-affected projections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetalTrace {
    pub num_views: usize,
    pub num_bins: usize,
    pub mask: Vec<bool>,
}

impl MetalTrace {
    pub fn new(num_views: usize, num_bins: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != num_views * num_bins {
            return Err(MarError::shape(&[num_views * num_bins], &[mask.len()]));
        }
        Ok(MetalTrace {
            num_views,
            num_bins,
            mask,
        })
    }

    pub fn empty(num_views: usize, num_bins: usize) -> Self {
        MetalTrace {
            num_views,
            num_bins,
            mask: vec![false; num_views * num_bins],
        }
    }

    pub fn full(num_views: usize, num_bins: usize) -> Self {
        MetalTrace {
            num_views,
            num_bins,
            mask: vec![true; num_views * num_bins],
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.num_views, self.num_bins]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    #[inline]
    pub fn row(&self, view: usize) -> &[bool] {
        &self.mask[view * self.num_bins..(view + 1) * self.num_bins]
    }

    /// Contiguous `[start, end)` runs of set bins in one view.
    pub fn runs(&self, view: usize) -> Vec<(usize, usize)> {
        let row = self.row(view);
        let mut runs = Vec::new();
        let mut i = 0;
        while i < row.len() {
            if row[i] {
                let start = i;
                while i < row.len() && row[i] {
                    i += 1;
                }
                runs.push((start, i));
            } else {
                i += 1;
            }
        }
        runs
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
    }
}

/// Pixels at or above `threshold` HU.
pub fn segment_metal(x: &Image, threshold: f64) -> Result<MetalMask> {
    x.expect_unit(Unit::Hu)?;
    Ok(MetalMask {
        grid: x.grid,
        mask: x.values.iter().map(|&v| v >= threshold).collect(),
    })
}

/// Projections whose detector aperture sees any metal: a bin is in the trace
/// when the forward projection of the mask along any of the partial-volume
/// sub-rays of that bin is positive.
pub fn metal_trace(m: &MetalMask, geom: &ScanGeometry) -> Result<MetalTrace> {
    if m.grid != geom.grid {
        return Err(MarError::shape(&geom.grid.shape(), &m.grid.shape()));
    }
    let [nv, nb] = geom.sino_shape();
    let mut trace = vec![false; nv * nb];
    if !m.is_empty() {
        let img = m.as_image();
        for &off in SUBRAY_OFFSETS.iter() {
            let p = project_many(geom, &[&img.values], off);
            for (t, v) in trace.iter_mut().zip(&p[0]) {
                *t |= *v > 0.0;
            }
        }
    }
    MetalTrace::new(nv, nb, trace)
}

/// `s_net` inside the trace, `s_li` outside.
pub fn composite(s_net: &Sinogram, s_li: &Sinogram, tr: &MetalTrace) -> Result<Sinogram> {
    s_net.expect_shape(s_li.shape())?;
    s_net.expect_shape(tr.shape())?;
    let values = s_net
        .values
        .iter()
        .zip(&s_li.values)
        .zip(&tr.mask)
        .map(|((&n, &l), &t)| if t { n } else { l })
        .collect();
    Ok(Sinogram {
        num_views: s_net.num_views,
        num_bins: s_net.num_bins,
        values,
    })
}
