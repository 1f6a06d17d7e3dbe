//! Encoder-decoder with concatenated skips and an optional mask pyramid.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::conv::ConvSpec;
use super::graph::{Graph, Var};
use super::tensor::{Real, Tensor};
use crate::error::{MarError, Result};

/// Architecture of one U-Net.
///
/// Scale `l` carries `width * 2^l` channels. Every convolution is 3x3 and
/// followed by a leaky ReLU except the final 1-channel projection, which is
/// linear and zero-initialized. With `mask_pyramid`, a max-pooled copy of the
/// mask is concatenated to the features entering every encoder block below
/// the top scale and every decoder block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub in_channels: usize,
    pub width: usize,
    pub scales: usize,
    pub mask_pyramid: bool,
    pub slope: f64,
}

impl UNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.width == 0 {
            return Err(MarError::Config("network channel counts must be positive".into()));
        }
        if !(1..=6).contains(&self.scales) {
            return Err(MarError::Config(format!(
                "scales must be in 1..=6, got {}",
                self.scales
            )));
        }
        if !(0.0..1.0).contains(&self.slope) {
            return Err(MarError::Config(format!(
                "leaky slope must be in [0, 1), got {}",
                self.slope
            )));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.width << level
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.scales - 1)
    }

    /// Convolutions in declaration order.
    pub fn convs(&self) -> Vec<ConvSpec> {
        let m = usize::from(self.mask_pyramid);
        let mut v = vec![
            ConvSpec::new(self.in_channels, self.channels(0), 1),
            ConvSpec::new(self.channels(0), self.channels(0), 1),
        ];
        for l in 1..self.scales {
            let c = self.channels(l);
            v.push(ConvSpec::new(self.channels(l - 1), c, 2));
            v.push(ConvSpec::new(c + m, c, 1));
            v.push(ConvSpec::new(c, c, 1));
        }
        for l in (0..self.scales - 1).rev() {
            let c = self.channels(l);
            v.push(ConvSpec::new(self.channels(l + 1), c, 1));
            v.push(ConvSpec::new(2 * c + m, c, 1));
            v.push(ConvSpec::new(c, c, 1));
        }
        let mut last = ConvSpec::new(self.channels(0), 1, 1);
        last.init_scale = 0.0;
        v.push(last);
        v
    }

    pub fn num_params(&self) -> usize {
        self.convs()
            .iter()
            .map(|c| c.weight_shape().iter().product::<usize>() + c.out_channels)
            .sum()
    }

    /// Weight and bias tensors for every convolution, in declaration order.
    /// Weights are normal with standard deviation `init_scale * sqrt(2 / fan_in)`;
    /// biases start at zero.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor<f32>> {
        let mut out = Vec::new();
        for c in self.convs() {
            let std = c.init_scale * (2.0 / c.fan_in() as f64).sqrt();
            let mut w = Tensor::zeros(c.weight_shape());
            if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("positive std");
                for v in w.data.iter_mut() {
                    *v = normal.sample(rng) as f32;
                }
            }
            out.push(w);
            out.push(Tensor::zeros(c.bias_shape()));
        }
        out
    }

    /// Shapes of [`UNetSpec::init_params`].
    pub fn param_shapes(&self) -> Vec<[usize; 4]> {
        self.convs()
            .iter()
            .flat_map(|c| [c.weight_shape(), c.bias_shape()])
            .collect()
    }

    /// Build the network on `g`. `params` holds the weight and bias nodes in
    /// declaration order, `x` is `n x in_channels x h x w` and `mask` (required
    /// with a mask pyramid) is `n x 1 x h x w`. Inputs are zero-padded to a
    /// multiple of [`UNetSpec::size_multiple`] and the output is cropped back.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &[Var], x: Var, mask: Option<Var>) -> Result<Var> {
        let convs = self.convs();
        if params.len() != 2 * convs.len() {
            return Err(MarError::shape(&[2 * convs.len()], &[params.len()]));
        }
        let [_, c, h, w] = g.shape(x);
        if c != self.in_channels {
            return Err(MarError::shape(&[self.in_channels], &[c]));
        }
        let k = self.size_multiple();
        let (hp, wp) = (h.div_ceil(k) * k, w.div_ceil(k) * k);
        let x = if (hp, wp) != (h, w) { g.pad_to(x, hp, wp)? } else { x };

        let mut pyramid = Vec::new();
        if self.mask_pyramid {
            let m = mask.ok_or_else(|| MarError::Config("mask pyramid needs a mask input".into()))?;
            let [_, mc, mh, mw] = g.shape(m);
            if mc != 1 || (mh, mw) != (h, w) {
                return Err(MarError::shape(&[1, h, w], &[mc, mh, mw]));
            }
            let mut m = if (hp, wp) != (h, w) { g.pad_to(m, hp, wp)? } else { m };
            pyramid.push(m);
            for _ in 1..self.scales {
                m = g.max_pool2(m);
                pyramid.push(m);
            }
        }

        let mut next = 0;
        let slope = self.slope;
        let mut conv = |g: &mut Graph<T>, input: Var, act: bool| -> Result<Var> {
            let spec = convs[next];
            let out = g.conv2d(input, params[2 * next], params[2 * next + 1], spec.stride, spec.padding)?;
            next += 1;
            Ok(if act { g.leaky_relu(out, slope) } else { out })
        };
        let with_mask = |g: &mut Graph<T>, v: Var, level: usize| -> Result<Var> {
            match pyramid.get(level) {
                Some(&m) => g.concat(v, m),
                None => Ok(v),
            }
        };

        let mut h0 = conv(g, x, true)?;
        h0 = conv(g, h0, true)?;
        let mut skips = vec![h0];
        for l in 1..self.scales {
            let down = conv(g, skips[l - 1], true)?;
            let down = with_mask(g, down, l)?;
            let a = conv(g, down, true)?;
            skips.push(conv(g, a, true)?);
        }
        let mut cur = skips[self.scales - 1];
        for l in (0..self.scales - 1).rev() {
            let up = g.upsample2(cur);
            let up = conv(g, up, true)?;
            let cat = g.concat(skips[l], up)?;
            let cat = with_mask(g, cat, l)?;
            let a = conv(g, cat, true)?;
            cur = conv(g, a, true)?;
        }
        let out = conv(g, cur, false)?;
        if (hp, wp) != (h, w) {
            g.crop_to(out, h, w)
        } else {
            Ok(out)
        }
    }
}
