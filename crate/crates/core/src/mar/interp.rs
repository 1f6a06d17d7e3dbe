use serde::{Deserialize, Serialize};

use super::MetalTrace;
use crate::error::{MarError, Result};
use crate::geometry::ScanGeometry;
use crate::image::{Image, Sinogram, Unit};
use crate::projector::forward_project;

/// Replace every trace run with the straight line between its two unaffected
/// neighbors in the same view. Values outside the trace are copied.
pub fn li_complete(s: &Sinogram, tr: &MetalTrace) -> Result<Sinogram> {
    s.expect_shape(tr.shape())?;
    let mut out = s.clone();
    for view in 0..s.num_views {
        let runs = tr.runs(view);
        let row = out.row_mut(view);
        for (start, end) in runs {
            if start == 0 || end == row.len() {
                return Err(MarError::TraceAtEdge { view });
            }
            let left = row[start - 1];
            let right = row[end];
            // integer-valued affine rows are reproduced exactly
            let span = (end - start + 1) as f64;
            for (k, v) in row[start..end].iter_mut().enumerate() {
                let t = (k + 1) as f64;
                *v = ((span - t) * left + t * right) / span;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmarConfig {
    /// Below this HU a pixel becomes air.
    pub air_threshold: f64,
    /// At or above this HU a pixel is kept as bone.
    pub bone_threshold: f64,
    /// At or above this HU a pixel is metal and becomes soft tissue.
    pub metal_threshold: f64,
    /// Floor on the prior sinogram before division.
    pub epsilon: f64,
}

impl Default for NmarConfig {
    fn default() -> Self {
        NmarConfig {
            air_threshold: -500.0,
            bone_threshold: 350.0,
            metal_threshold: super::METAL_THRESHOLD_HU,
            epsilon: 1e-6,
        }
    }
}

/// Tissue-class prior: air -> -1000 HU, soft tissue -> 0 HU, bone kept,
/// metal -> soft tissue.
pub fn nmar_prior_image(x_ma: &Image, cfg: &NmarConfig) -> Result<Image> {
    x_ma.expect_unit(Unit::Hu)?;
    let values = x_ma
        .values
        .iter()
        .map(|&v| {
            if v >= cfg.metal_threshold {
                0.0
            } else if v >= cfg.bone_threshold {
                v
            } else if v >= cfg.air_threshold {
                0.0
            } else {
                -1000.0
            }
        })
        .collect();
    Ok(Image {
        grid: x_ma.grid,
        unit: Unit::Hu,
        values,
    })
}

/// Normalized interpolation with an explicit prior sinogram.
pub fn nmar_with_prior(s_ma: &Sinogram, tr: &MetalTrace, prior: &Sinogram, epsilon: f64) -> Result<Sinogram> {
    s_ma.expect_shape(tr.shape())?;
    s_ma.expect_shape(prior.shape())?;
    let floor: Vec<f64> = prior.values.iter().map(|&p| p.max(epsilon)).collect();
    let ratio = Sinogram {
        num_views: s_ma.num_views,
        num_bins: s_ma.num_bins,
        values: s_ma.values.iter().zip(&floor).map(|(s, p)| s / p).collect(),
    };
    let completed = li_complete(&ratio, tr)?;
    let values = s_ma
        .values
        .iter()
        .zip(&completed.values)
        .zip(&floor)
        .zip(&tr.mask)
        .map(|(((&s, &r), &p), &t)| if t { r * p } else { s })
        .collect();
    Ok(Sinogram {
        num_views: s_ma.num_views,
        num_bins: s_ma.num_bins,
        values,
    })
}

/// Normalized metal artifact reduction driven by a tissue prior built from `x_ma`.
pub fn nmar_complete(
    s_ma: &Sinogram,
    tr: &MetalTrace,
    x_ma: &Image,
    geom: &ScanGeometry,
    cfg: &NmarConfig,
) -> Result<Sinogram> {
    let prior = nmar_prior_image(x_ma, cfg)?;
    let prior_sino = forward_project(&prior.to_mu(), geom)?;
    nmar_with_prior(s_ma, tr, &prior_sino, cfg.epsilon)
}
