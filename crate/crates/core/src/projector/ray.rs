//! Ray-driven sampling shared by forward projection and its adjoint.
//!
//! A ray is clipped to the support of the bilinearly interpolated image and
//! sampled at midpoints of equal sub-segments no longer than half a pixel.
//! Forward projection gathers `w * x[i]` over the visited taps and
//! backprojection scatters `w * s` to the same taps, so the two are exact
//! transposes of one another.

use crate::geometry::{ImageGrid, ScanGeometry};

/// Visit every bilinear tap `(pixel index, weight)` along one ray.
///
/// `bin` may be fractional; partial-volume sub-rays use offsets around the
/// bin center.
#[inline]
pub(crate) fn for_each_tap(geom: &ScanGeometry, view: usize, bin: f64, mut visit: impl FnMut(usize, f64)) {
    let grid = &geom.grid;
    let fan = &geom.fan_beam;
    let s = fan.source_position(view);
    let d = fan.ray_direction(view, bin);
    let Some((t0, t1)) = clip_to_support(grid, s, d, fan.source_to_detector) else {
        return;
    };
    let max_step = grid.pixel_size / 2.0;
    let n = ((t1 - t0) / max_step).ceil().max(1.0) as usize;
    let dt = (t1 - t0) / n as f64;

    // index-space position is affine in t
    let (r_s, c_s) = grid.to_index_space(s);
    let dr = -d[1] / grid.pixel_size;
    let dc = d[0] / grid.pixel_size;
    let h = grid.height as isize;
    let w = grid.width as isize;
    for k in 0..n {
        let t = t0 + (k as f64 + 0.5) * dt;
        let r = r_s + t * dr;
        let c = c_s + t * dc;
        let r0 = r.floor();
        let c0 = c.floor();
        let fr = r - r0;
        let fc = c - c0;
        let r0 = r0 as isize;
        let c0 = c0 as isize;
        let taps = [
            (r0, c0, (1.0 - fr) * (1.0 - fc)),
            (r0, c0 + 1, (1.0 - fr) * fc),
            (r0 + 1, c0, fr * (1.0 - fc)),
            (r0 + 1, c0 + 1, fr * fc),
        ];
        for (rr, cc, wt) in taps {
            if rr >= 0 && rr < h && cc >= 0 && cc < w && wt != 0.0 {
                visit(rr as usize * grid.width + cc as usize, wt * dt);
            }
        }
    }
}

/// Parameter interval `[t0, t1]` of the ray inside the bilinear support box.
fn clip_to_support(grid: &ImageGrid, s: [f64; 2], d: [f64; 2], t_max: f64) -> Option<(f64, f64)> {
    let half_w = (grid.width as f64 + 1.0) / 2.0 * grid.pixel_size;
    let half_h = (grid.height as f64 + 1.0) / 2.0 * grid.pixel_size;
    let lo = [grid.center[0] - half_w, grid.center[1] - half_h];
    let hi = [grid.center[0] + half_w, grid.center[1] + half_h];
    let mut t0 = 0.0f64;
    let mut t1 = t_max;
    for axis in 0..2 {
        if d[axis].abs() < 1e-15 {
            if s[axis] <= lo[axis] || s[axis] >= hi[axis] {
                return None;
            }
            continue;
        }
        let a = (lo[axis] - s[axis]) / d[axis];
        let b = (hi[axis] - s[axis]) / d[axis];
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        t0 = t0.max(a);
        t1 = t1.min(b);
    }
    (t1 > t0).then_some((t0, t1))
}

/// Line integrals of several same-grid images along every ray at one bin offset.
///
/// Returns one views-major sinogram buffer per input image.
pub(crate) fn project_many(geom: &ScanGeometry, images: &[&[f64]], bin_offset: f64) -> Vec<Vec<f64>> {
    let fan = &geom.fan_beam;
    let mut out = vec![vec![0.0; fan.len()]; images.len()];
    for view in 0..fan.num_views {
        for bin in 0..fan.num_bins {
            let idx = view * fan.num_bins + bin;
            let mut acc = [0.0f64; 8];
            if images.len() <= acc.len() {
                for_each_tap(geom, view, bin as f64 + bin_offset, |p, wt| {
                    for (a, img) in acc.iter_mut().zip(images) {
                        *a += wt * img[p];
                    }
                });
                for (o, a) in out.iter_mut().zip(acc) {
                    o[idx] = a;
                }
            } else {
                for (o, img) in out.iter_mut().zip(images) {
                    let mut a = 0.0;
                    for_each_tap(geom, view, bin as f64 + bin_offset, |p, wt| a += wt * img[p]);
                    o[idx] = a;
                }
            }
        }
    }
    out
}

pub(crate) fn project(geom: &ScanGeometry, image: &[f64]) -> Vec<f64> {
    let fan = &geom.fan_beam;
    let mut out = vec![0.0; fan.len()];
    for view in 0..fan.num_views {
        for bin in 0..fan.num_bins {
            let mut a = 0.0;
            for_each_tap(geom, view, bin as f64, |p, wt| a += wt * image[p]);
            out[view * fan.num_bins + bin] = a;
        }
    }
    out
}

pub(crate) fn backproject(geom: &ScanGeometry, sino: &[f64]) -> Vec<f64> {
    let fan = &geom.fan_beam;
    let mut out = vec![0.0; geom.grid.len()];
    for view in 0..fan.num_views {
        for bin in 0..fan.num_bins {
            let s = sino[view * fan.num_bins + bin];
            if s == 0.0 {
                continue;
            }
            for_each_tap(geom, view, bin as f64, |p, wt| out[p] += wt * s);
        }
    }
    out
}
