//! Training objectives. All L1 terms are per-element means.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, LinearOp, Var};
use super::tensor::{Real, Tensor};
use crate::error::{MarError, Result};

/// Weights of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the pre-composite sinogram term.
    pub beta: f64,
    /// Weight of the sinogram loss in the total.
    pub alpha1: f64,
    /// Weight of the reconstruction loss in the total.
    pub alpha2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 0.1,
            alpha1: 1.0,
            alpha2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(MarError::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Mean absolute error of the prior image.
pub fn loss_prior<T: Real>(g: &mut Graph<T>, x_prior: Var, x_gt: &Tensor<T>) -> Result<Var> {
    g.l1_mean(x_prior, x_gt, None)
}

/// `mean|S_gt - S_corr| + beta * mean|S_gt - S'_corr|`.
pub fn loss_sino<T: Real>(g: &mut Graph<T>, s_corr: Var, s_pre: Var, s_gt: &Tensor<T>, beta: f64) -> Result<Var> {
    if beta < 0.0 {
        return Err(MarError::Config(format!("beta must be non-negative, got {beta}")));
    }
    let a = g.l1_mean(s_corr, s_gt, None)?;
    let b = g.l1_mean(s_pre, s_gt, None)?;
    g.weighted_sum(&[(a, 1.0), (b, beta)])
}

/// Mean absolute reconstruction error over non-metal pixels. `recon` maps the
/// sinogram to the image units of `x_gt` up to the additive `offset`.
pub fn loss_fbp<T: Real>(
    g: &mut Graph<T>,
    s_corr: Var,
    recon: Arc<dyn LinearOp<T>>,
    offset: f64,
    x_gt: &Tensor<T>,
    metal: &[bool],
) -> Result<Var> {
    if metal.len() != x_gt.len() {
        return Err(MarError::shape(&[x_gt.len()], &[metal.len()]));
    }
    if metal.iter().all(|&m| m) {
        return Err(MarError::Data("metal mask covers the whole image".into()));
    }
    let x = g.linear(s_corr, recon)?;
    let x = if offset != 0.0 {
        let off = Tensor::filled(g.shape(x), T::from_f64(offset));
        g.affine(x, 1.0, Some(&off))?
    } else {
        x
    };
    let weights: Vec<T> = metal.iter().map(|&m| if m { T::zero() } else { T::one() }).collect();
    g.l1_mean(x, x_gt, Some(&weights))
}

/// `L_prior + alpha1 * L_sino + alpha2 * L_fbp`; an absent prior term counts as 0.
pub fn loss_total<T: Real>(g: &mut Graph<T>, prior: Option<Var>, sino: Var, fbp: Var, w: &LossWeights) -> Result<Var> {
    let mut terms = Vec::with_capacity(3);
    if let Some(p) = prior {
        terms.push((p, 1.0));
    }
    terms.push((sino, w.alpha1));
    terms.push((fbp, w.alpha2));
    g.weighted_sum(&terms)
}
