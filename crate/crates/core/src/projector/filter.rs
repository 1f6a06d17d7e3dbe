//! Band-limited ramp filtering for equiangular fan-beam data.

use std::f64::consts::PI;

use crate::geometry::FanBeamGeometry;

/// Sampled band-limited ramp (Ram-Lak) for sample spacing `spacing`.
pub fn ram_lak_tap(n: i64, spacing: f64) -> f64 {
    if n == 0 {
        1.0 / (4.0 * spacing * spacing)
    } else if n % 2 == 0 {
        0.0
    } else {
        let nf = n as f64;
        -1.0 / (PI * PI * nf * nf * spacing * spacing)
    }
}

/// Ram-Lak tap apodized by a Hann window reaching zero at Nyquist.
///
/// The raised-cosine window in frequency is a three-tap `[1/4, 1/2, 1/4]`
/// blend of the Ram-Lak samples in space.
pub fn ram_lak_hann_tap(n: i64, spacing: f64) -> f64 {
    0.5 * ram_lak_tap(n, spacing) + 0.25 * (ram_lak_tap(n - 1, spacing) + ram_lak_tap(n + 1, spacing))
}

/// Fan-beam convolution kernel `g[n]` for lags `-(N-1)..=(N-1)`, stored with
/// lag `n` at index `n + N - 1`.
pub fn fan_kernel(fan: &FanBeamGeometry) -> Vec<f64> {
    let alpha = fan.detector_arc;
    let n_bins = fan.num_bins as i64;
    (-(n_bins - 1)..=(n_bins - 1))
        .map(|n| {
            let h = ram_lak_hann_tap(n, alpha);
            if n == 0 {
                0.5 * h
            } else {
                let g = n as f64 * alpha;
                0.5 * (g / g.sin()).powi(2) * h
            }
        })
        .collect()
}

/// `out[i] = spacing * sum_k row[k] * kernel[i - k]`. The kernel is symmetric,
/// so this matrix is its own transpose.
pub(crate) fn convolve_row(row: &[f64], kernel: &[f64], spacing: f64, out: &mut [f64]) {
    let n = row.len();
    debug_assert_eq!(kernel.len(), 2 * n - 1);
    for (i, o) in out.iter_mut().enumerate() {
        // lag i - k, index i - k + n - 1
        let mut acc = 0.0;
        let base = i + n - 1;
        for (k, &r) in row.iter().enumerate() {
            acc += r * kernel[base - k];
        }
        *o = spacing * acc;
    }
}
