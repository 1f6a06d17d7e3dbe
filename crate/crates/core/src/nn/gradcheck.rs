//! Central finite-difference check of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Central difference step.
pub const FD_STEP: f64 = 1e-7;

/// Relative disagreement of the one-sided slopes that marks a kink.
const KINK_TOL: f64 = 1e-5;

/// Roundoff allowance on the one-sided slopes, in ulps of the function value.
const ROUNDOFF_ULPS: f64 = 64.0;

/// Compare reverse-mode gradients of `f` with central differences for every
/// input at up to 40 random coordinates (chosen by `seed`). `f` builds a
/// scalar from the input nodes. Returns the worst relative error over the
/// inputs, measured as the norm of the difference over the larger norm.
///
/// Coordinates where the step straddles a kink of a piecewise-linear op
/// (the one-sided slopes disagree) are skipped, since central differences
/// are meaningless there. If more than half the coordinates of an input are
/// skipped the check returns infinity.
pub fn grad_check<F>(inputs: &[Tensor<f64>], seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |ts: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars);
        (g, vars, out)
    };
    let (mut g, vars, out) = eval(inputs);
    let f0 = g.scalar(out);
    g.backward(out).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape));
        let coords: Vec<usize> = if t.len() <= 40 {
            (0..t.len()).collect()
        } else {
            (0..40).map(|_| r.gen_range(0..t.len())).collect()
        };
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for &i in &coords {
            let mut plus = inputs.to_vec();
            plus[k].data[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data[i] -= FD_STEP;
            let (gp, _, op) = eval(&plus);
            let (gm, _, om) = eval(&minus);
            let (fp, fm) = (gp.scalar(op), gm.scalar(om));
            let (fwd, bwd) = ((fp - f0) / FD_STEP, (f0 - fm) / FD_STEP);
            let roundoff = ROUNDOFF_ULPS * f64::EPSILON * f0.abs().max(fp.abs()).max(fm.abs()) / FD_STEP;
            if (fwd - bwd).abs() > KINK_TOL * (fwd.abs() + bwd.abs()) + roundoff {
                continue;
            }
            num.push((fp - fm) / (2.0 * FD_STEP));
            ana.push(analytic.data[i]);
        }
        if 2 * num.len() < coords.len() {
            return f64::INFINITY;
        }
        let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = num
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(ana.iter().map(|a| a * a).sum::<f64>().sqrt());
        if scale > 1e-12 {
            worst = worst.max(diff / scale);
        } else {
            worst = worst.max(diff);
        }
    }
    worst
}
