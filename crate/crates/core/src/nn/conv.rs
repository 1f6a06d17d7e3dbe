//! 2-D cross-correlation through im2col and matrix products.

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{MarError, Result};

/// One convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Standard deviation multiplier on the fan-in Kaiming scale; 0 gives a
    /// zero-initialized layer.
    pub init_scale: f64,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: 3,
            stride,
            padding: 1,
            init_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) {
            return Err(MarError::Config(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        if !(self.stride == 1 || self.stride == 2) {
            return Err(MarError::Config(format!("stride must be 1 or 2, got {}", self.stride)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(MarError::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn bias_shape(&self) -> [usize; 4] {
        [1, self.out_channels, 1, 1]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

pub(crate) fn out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Unfold one `c x h x w` item into a `(c k k) x (ho wo)` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize, cols: &mut [T]) {
    let ho = out_size(h, k, stride, pad);
    let wo = out_size(w, k, stride, pad);
    let p = ho * wo;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((ch * k + ki) * k + kj) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *d = if ix >= 0 && ix < w as isize {
                            src[ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into the item.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize, x: &mut [T]) {
    let ho = out_size(h, k, stride, pad);
    let wo = out_size(w, k, stride, pad);
    let p = ho * wo;
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((ch * k + ki) * k + kj) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_shapes<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    let [co, ci, kh, kw] = w.shape;
    if kh != kw || kh % 2 == 0 {
        return Err(MarError::Config(format!(
            "kernel must be square and odd, got {kh}x{kw}"
        )));
    }
    if x.channels() != ci {
        return Err(MarError::shape(&[ci], &[x.channels()]));
    }
    if b.shape != [1, co, 1, 1] {
        return Err(MarError::shape(&[1, co, 1, 1], &b.shape));
    }
    Ok(())
}

/// Cross-correlation with bias.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    check_shapes(x, w, b)?;
    let [n, c, h, wd] = x.shape;
    let [co, _, k, _] = w.shape;
    if h + 2 * pad < k || wd + 2 * pad < k {
        return Err(MarError::Config("input smaller than kernel".into()));
    }
    let ho = out_size(h, k, stride, pad);
    let wo = out_size(wd, k, stride, pad);
    let p = ho * wo;
    let kk = c * k * k;
    let mut out = Tensor::zeros([n, co, ho, wo]);
    let mut cols = vec![T::zero(); kk * p];
    for item in 0..n {
        let xi = &x.data[item * x.item_len()..(item + 1) * x.item_len()];
        im2col(xi, c, h, wd, k, stride, pad, &mut cols);
        let oi = &mut out.data[item * co * p..(item + 1) * co * p];
        for (o, chunk) in oi.chunks_mut(p).enumerate() {
            chunk.fill(b.data[o]);
        }
        T::gemm(
            co,
            kk,
            p,
            T::one(),
            &w.data,
            kk as isize,
            1,
            &cols,
            p as isize,
            1,
            T::one(),
            oi,
            p as isize,
            1,
        );
    }
    Ok(out)
}

/// Gradients with respect to input, weights and bias.
pub type ConvGrads<T> = (Option<Tensor<T>>, Tensor<T>, Tensor<T>);

/// Gradients of [`conv2d_forward`] given the output cotangent. The input
/// gradient is skipped when `need_dx` is false.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> Result<ConvGrads<T>> {
    let [n, c, h, wd] = x.shape;
    let [co, ci, k, _] = w.shape;
    if ci != c {
        return Err(MarError::shape(&[ci], &[c]));
    }
    let ho = out_size(h, k, stride, pad);
    let wo = out_size(wd, k, stride, pad);
    if grad_out.shape != [n, co, ho, wo] {
        return Err(MarError::shape(&[n, co, ho, wo], &grad_out.shape));
    }
    let p = ho * wo;
    let kk = c * k * k;
    let mut dw = Tensor::zeros(w.shape);
    let mut db = Tensor::zeros([1, co, 1, 1]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape));
    let mut cols = vec![T::zero(); kk * p];
    let mut dcols = if need_dx { vec![T::zero(); kk * p] } else { Vec::new() };
    for item in 0..n {
        let xi = &x.data[item * x.item_len()..(item + 1) * x.item_len()];
        let gi = &grad_out.data[item * co * p..(item + 1) * co * p];
        im2col(xi, c, h, wd, k, stride, pad, &mut cols);
        // dW += G cols^T
        T::gemm(
            co,
            p,
            kk,
            T::one(),
            gi,
            p as isize,
            1,
            &cols,
            1,
            p as isize,
            T::one(),
            &mut dw.data,
            kk as isize,
            1,
        );
        for (o, chunk) in gi.chunks(p).enumerate() {
            let mut s = T::zero();
            for &g in chunk {
                s += g;
            }
            db.data[o] += s;
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = W^T G
            T::gemm(
                kk,
                co,
                p,
                T::one(),
                &w.data,
                1,
                kk as isize,
                gi,
                p as isize,
                1,
                T::zero(),
                &mut dcols,
                p as isize,
                1,
            );
            let di = &mut dx.data[item * c * h * wd..(item + 1) * c * h * wd];
            col2im(&dcols, c, h, wd, k, stride, pad, di);
        }
    }
    Ok((dx, dw, db))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let [n, c, h, wd] = x.shape;
        let [co, _, k, _] = w.shape;
        let ho = out_size(h, k, stride, pad);
        let wo = out_size(wd, k, stride, pad);
        let mut out = Tensor::zeros([n, co, ho, wo]);
        for item in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data[o];
                        for ch in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                        acc += x.data[((item * c + ch) * h + iy as usize) * wd + ix as usize]
                                            * w.data[((o * c + ch) * k + ki) * k + kj];
                                    }
                                }
                            }
                        }
                        out.data[((item * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: [usize; 4], a: f64) -> Tensor<f64> {
        let n = shape.iter().product::<usize>();
        Tensor::new(
            shape,
            (0..n).map(|i| ((i as f64 * a).sin() * 10.0).round() / 10.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn matches_direct_loops() {
        for stride in [1, 2] {
            let x = ramp([2, 3, 7, 6], 0.37);
            let w = ramp([4, 3, 3, 3], 1.3);
            let b = ramp([1, 4, 1, 1], 2.1);
            let fast = conv2d_forward(&x, &w, &b, stride, 1).unwrap();
            let slow = naive(&x, &w, &b, stride, 1);
            assert_eq!(fast.shape, slow.shape);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_kernel() {
        let x = ramp([1, 1, 5, 5], 0.9);
        let mut w = Tensor::zeros([1, 1, 3, 3]);
        w.data[4] = 1.0;
        let out = conv2d_forward(&x, &w, &Tensor::zeros([1, 1, 1, 1]), 1, 1).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn zero_weights() {
        let x = ramp([1, 2, 4, 4], 0.5);
        let w = Tensor::zeros([3, 2, 3, 3]);
        let b = Tensor::zeros([1, 3, 1, 1]);
        let out = conv2d_forward(&x, &w, &b, 1, 1).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
        let g = ramp(out.shape, 0.3);
        let (dx, _, _) = conv2d_backward(&x, &w, &g, 1, 1, true).unwrap();
        assert!(dx.unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_mismatched_channels() {
        let x = ramp([1, 2, 4, 4], 0.5);
        let w = Tensor::zeros([3, 3, 3, 3]);
        assert!(conv2d_forward(&x, &w, &Tensor::zeros([1, 3, 1, 1]), 1, 1).is_err());
        assert!(ConvSpec {
            kernel: 4,
            ..ConvSpec::new(1, 1, 1)
        }
        .validate()
        .is_err());
        assert!(ConvSpec::new(1, 1, 3).validate().is_err());
    }
}
