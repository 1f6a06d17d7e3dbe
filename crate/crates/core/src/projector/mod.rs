//! Linear fan-beam operators: forward projection, its adjoint, ramp filtering
//! and filtered backprojection together with its adjoint.
//!
//! Forward projection is ray-driven (bilinear interpolation, step of at most
//! half a pixel); [`Projector::back_project`] scatters the very same weights,
//! so `<FP x, s> = <x, BP s>` holds to rounding. Filtered backprojection is
//! the equiangular weighted form: cosine pre-weight, Hann-apodized ramp
//! convolution, then pixel-driven backprojection weighted by `1/L^2` with
//! linear interpolation across bins. All stages are linear, and
//! [`Projector::fbp_adjoint`] applies their transposes in reverse order.

mod filter;
mod ray;

pub use filter::{fan_kernel, ram_lak_hann_tap, ram_lak_tap};
pub(crate) use ray::project_many;

use crate::error::{MarError, Result};
use crate::geometry::ScanGeometry;
use crate::image::{Image, Sinogram, Unit};

/// Largest `(view, pixel)` table cached for pixel-driven backprojection.
const MAX_CACHED_TAPS: usize = 16_000_000;

#[derive(Debug, Clone, Copy)]
struct BackprojTap {
    /// Left bin of the interpolation pair; negative or past the detector means
    /// the tap is partially or fully off-detector.
    bin: i32,
    frac: f32,
    inv_dist2: f64,
}

/// Operators bound to one geometry, with precomputed filter kernel and (when
/// small enough) backprojection interpolation table.
#[derive(Debug, Clone)]
pub struct Projector {
    geom: ScanGeometry,
    cos_weight: Vec<f64>,
    kernel: Vec<f64>,
    taps: Option<Vec<BackprojTap>>,
}

impl Projector {
    pub fn new(geom: &ScanGeometry) -> Self {
        let fan = &geom.fan_beam;
        let cos_weight = (0..fan.num_bins)
            .map(|k| fan.source_to_isocenter * fan.fan_angle(k as f64).cos())
            .collect();
        let kernel = fan_kernel(fan);
        let mut p = Projector {
            geom: geom.clone(),
            cos_weight,
            kernel,
            taps: None,
        };
        if fan.num_views * geom.grid.len() <= MAX_CACHED_TAPS {
            let mut taps = Vec::with_capacity(fan.num_views * geom.grid.len());
            for view in 0..fan.num_views {
                for pix in 0..geom.grid.len() {
                    taps.push(p.backproj_tap(view, pix));
                }
            }
            p.taps = Some(taps);
        }
        p
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geom
    }

    #[inline]
    fn backproj_tap(&self, view: usize, pix: usize) -> BackprojTap {
        let grid = &self.geom.grid;
        let fan = &self.geom.fan_beam;
        let p = grid.pixel_center(pix / grid.width, pix % grid.width);
        let s = fan.source_position(view);
        let v = [p[0] - s[0], p[1] - s[1]];
        // central ray direction, from the source through the isocenter
        let c = [-s[0] / fan.source_to_isocenter, -s[1] / fan.source_to_isocenter];
        let gamma = (c[0] * v[1] - c[1] * v[0]).atan2(c[0] * v[0] + c[1] * v[1]);
        let u = gamma / fan.detector_arc + fan.center_bin() as f64;
        let k0 = u.floor();
        BackprojTap {
            bin: k0 as i32,
            frac: (u - k0) as f32,
            inv_dist2: 1.0 / (v[0] * v[0] + v[1] * v[1]),
        }
    }

    #[inline]
    fn tap(&self, view: usize, pix: usize) -> BackprojTap {
        match &self.taps {
            Some(t) => t[view * self.geom.grid.len() + pix],
            None => self.backproj_tap(view, pix),
        }
    }

    fn check_image(&self, x: &Image, unit: Unit) -> Result<()> {
        x.expect_unit(unit)?;
        x.expect_grid(&self.geom.grid)
    }

    /// Line integrals of a mu image along every (view, bin) ray.
    pub fn forward_project(&self, x: &Image) -> Result<Sinogram> {
        self.check_image(x, Unit::Mu)?;
        let [v, b] = self.geom.sino_shape();
        Ok(Sinogram {
            num_views: v,
            num_bins: b,
            values: ray::project(&self.geom, &x.values),
        })
    }

    /// Exact transpose of [`Projector::forward_project`].
    pub fn back_project(&self, s: &Sinogram) -> Result<Image> {
        s.expect_geometry(&self.geom)?;
        Ok(Image {
            grid: self.geom.grid,
            unit: Unit::Mu,
            values: ray::backproject(&self.geom, &s.values),
        })
    }

    /// Per-view convolution with the fan-beam Hann-apodized ramp kernel.
    pub fn ramp_filter(&self, s: &Sinogram) -> Result<Sinogram> {
        s.expect_geometry(&self.geom)?;
        let mut out = Sinogram::zeros_for(&self.geom);
        let alpha = self.geom.fan_beam.detector_arc;
        for view in 0..s.num_views {
            filter::convolve_row(s.row(view), &self.kernel, alpha, out.row_mut(view));
        }
        Ok(out)
    }

    /// Filtered backprojection to a mu image.
    pub fn fbp(&self, s: &Sinogram) -> Result<Image> {
        s.expect_geometry(&self.geom)?;
        let mut weighted = s.clone();
        for view in 0..s.num_views {
            for (v, w) in weighted.row_mut(view).iter_mut().zip(&self.cos_weight) {
                *v *= w;
            }
        }
        let filtered = self.ramp_filter(&weighted)?;
        Ok(Image {
            grid: self.geom.grid,
            unit: Unit::Mu,
            values: self.weighted_backproject(&filtered.values),
        })
    }

    /// Transpose of [`Projector::fbp`]: maps an image cotangent to a sinogram.
    pub fn fbp_adjoint(&self, g: &Image) -> Result<Sinogram> {
        self.check_image(g, Unit::Mu)?;
        let scattered = Sinogram {
            num_views: self.geom.fan_beam.num_views,
            num_bins: self.geom.fan_beam.num_bins,
            values: self.weighted_backproject_adjoint(&g.values),
        };
        let mut out = self.ramp_filter(&scattered)?;
        for view in 0..out.num_views {
            for (v, w) in out.row_mut(view).iter_mut().zip(&self.cos_weight) {
                *v *= w;
            }
        }
        Ok(out)
    }

    /// Vector-Jacobian product of forward projection.
    pub fn vjp_forward_project(&self, grad_out: &Sinogram) -> Result<Image> {
        self.back_project(grad_out)
    }

    /// Vector-Jacobian product of filtered backprojection.
    pub fn vjp_fbp(&self, grad_out: &Image) -> Result<Sinogram> {
        self.fbp_adjoint(grad_out)
    }

    fn weighted_backproject(&self, filtered: &[f64]) -> Vec<f64> {
        let fan = &self.geom.fan_beam;
        let n_pix = self.geom.grid.len();
        let nb = fan.num_bins as i32;
        let dbeta = fan.view_step();
        let mut out = vec![0.0; n_pix];
        for view in 0..fan.num_views {
            let row = &filtered[view * fan.num_bins..(view + 1) * fan.num_bins];
            for (pix, o) in out.iter_mut().enumerate() {
                let t = self.tap(view, pix);
                let w = t.frac as f64;
                let mut val = 0.0;
                if t.bin >= 0 && t.bin < nb {
                    val += (1.0 - w) * row[t.bin as usize];
                }
                if t.bin + 1 >= 0 && t.bin + 1 < nb {
                    val += w * row[(t.bin + 1) as usize];
                }
                *o += dbeta * t.inv_dist2 * val;
            }
        }
        out
    }

    fn weighted_backproject_adjoint(&self, g: &[f64]) -> Vec<f64> {
        let fan = &self.geom.fan_beam;
        let nb = fan.num_bins as i32;
        let dbeta = fan.view_step();
        let mut out = vec![0.0; fan.len()];
        for view in 0..fan.num_views {
            let row = &mut out[view * fan.num_bins..(view + 1) * fan.num_bins];
            for (pix, &gv) in g.iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                let t = self.tap(view, pix);
                let w = t.frac as f64;
                let a = dbeta * t.inv_dist2 * gv;
                if t.bin >= 0 && t.bin < nb {
                    row[t.bin as usize] += (1.0 - w) * a;
                }
                if t.bin + 1 >= 0 && t.bin + 1 < nb {
                    row[(t.bin + 1) as usize] += w * a;
                }
            }
        }
        out
    }
}

pub fn forward_project(x: &Image, geom: &ScanGeometry) -> Result<Sinogram> {
    x.expect_unit(Unit::Mu)?;
    x.expect_grid(&geom.grid)?;
    let [v, b] = geom.sino_shape();
    Ok(Sinogram {
        num_views: v,
        num_bins: b,
        values: ray::project(geom, &x.values),
    })
}

pub fn back_project(s: &Sinogram, geom: &ScanGeometry) -> Result<Image> {
    s.expect_geometry(geom)?;
    Ok(Image {
        grid: geom.grid,
        unit: Unit::Mu,
        values: ray::backproject(geom, &s.values),
    })
}

pub fn ramp_filter(s: &Sinogram, geom: &ScanGeometry) -> Result<Sinogram> {
    s.expect_geometry(geom)?;
    let kernel = fan_kernel(&geom.fan_beam);
    let mut out = Sinogram::zeros_for(geom);
    for view in 0..s.num_views {
        filter::convolve_row(s.row(view), &kernel, geom.fan_beam.detector_arc, out.row_mut(view));
    }
    Ok(out)
}

pub fn fbp(s: &Sinogram, geom: &ScanGeometry) -> Result<Image> {
    if s.shape() != geom.sino_shape() {
        return Err(MarError::shape(&geom.sino_shape(), &s.shape()));
    }
    Projector::new(geom).fbp(s)
}
