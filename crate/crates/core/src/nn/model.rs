//! The joint PriorNet/SinoNet model, its graph construction, inference and
//! checkpoint format.
//!
//! Network-facing quantities are normalized: images as `HU / 1000` (so water
//! is 0 and air is -1) and sinograms divided by the model's `sino_scale`.
//! Image inputs to the networks are additionally clipped to
//! [`IMAGE_INPUT_RANGE`] so that metal does not dominate the activations.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, LinearOp, Var};
use super::loss::{loss_fbp, loss_prior, loss_sino, loss_total, LossWeights};
use super::tensor::{Real, Tensor};
use super::unet::UNetSpec;
use crate::error::{MarError, Result};
use crate::geometry::{toy_geometry, ScanGeometry};
use crate::image::{Image, Sinogram, Unit, MU_WATER};
use crate::mar::{composite, MetalMask, MetalTrace};
use crate::projector::Projector;

/// Clip range of normalized image inputs (-1000 to 3000 HU).
pub const IMAGE_INPUT_RANGE: (f64, f64) = (-1.0, 3.0);

const CHECKPOINT_MAGIC: &str = "mar-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Wiring of the two networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Prior image from `[X_ma, X_LI]`, residual sinogram learning.
    Full,
    /// No prior network; SinoNet refines `S_LI` from `[S_LI, Tr]`.
    NoPrior,
    /// SinoNet reads `[S_prior, Tr]` and outputs absolute projections.
    NoResidual,
    /// PriorNet reads `X_ma` alone and refines it.
    MetalImageOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoPrior,
        Variant::NoResidual,
        Variant::MetalImageOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPrior => "no_prior",
            Variant::NoResidual => "no_residual",
            Variant::MetalImageOnly => "metal_image_only",
        }
    }

    pub fn has_prior(self) -> bool {
        self != Variant::NoPrior
    }
}

impl std::str::FromStr for Variant {
    type Err = MarError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| MarError::Config(format!("unknown model variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Channels at the top scale; each lower scale doubles it.
    pub width: usize,
    pub scales: usize,
    pub slope: f64,
    /// `[height, width]` of images.
    pub image_shape: [usize; 2],
    /// `[views, bins]` of sinograms.
    pub sino_shape: [usize; 2],
    /// Divisor applied to line integrals before they enter the networks.
    pub sino_scale: f64,
}

impl ModelSpec {
    /// Four scales with the given top width for a scan geometry.
    pub fn new(variant: Variant, width: usize, geom: &ScanGeometry, sino_scale: f64) -> Self {
        ModelSpec {
            variant,
            width,
            scales: 4,
            slope: 0.2,
            image_shape: geom.image_shape(),
            sino_shape: geom.sino_shape(),
            sino_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sino_scale > 0.0 && self.sino_scale.is_finite()) {
            return Err(MarError::Config(format!(
                "sino_scale must be positive, got {}",
                self.sino_scale
            )));
        }
        if let Some(p) = self.prior_net() {
            p.validate()?;
        }
        self.sino_net().validate()
    }

    pub fn prior_net(&self) -> Option<UNetSpec> {
        let in_channels = match self.variant {
            Variant::NoPrior => return None,
            Variant::MetalImageOnly => 1,
            Variant::Full | Variant::NoResidual => 2,
        };
        Some(UNetSpec {
            in_channels,
            width: self.width,
            scales: self.scales,
            mask_pyramid: false,
            slope: self.slope,
        })
    }

    pub fn sino_net(&self) -> UNetSpec {
        UNetSpec {
            in_channels: 2,
            width: self.width,
            scales: self.scales,
            mask_pyramid: true,
            slope: self.slope,
        }
    }

    pub fn param_shapes(&self) -> Vec<[usize; 4]> {
        let mut v = self.prior_net().map(|p| p.param_shapes()).unwrap_or_default();
        v.extend(self.sino_net().param_shapes());
        v
    }

    /// The square toy geometry matching the model's shapes.
    pub fn geometry(&self) -> Result<ScanGeometry> {
        let g = toy_geometry(self.image_shape[0])?;
        self.check_geometry(&g)?;
        Ok(g)
    }

    pub fn check_geometry(&self, geom: &ScanGeometry) -> Result<()> {
        if geom.image_shape() != self.image_shape || geom.sino_shape() != self.sino_shape {
            return Err(MarError::Config(format!(
                "model expects image {:?} and sinogram {:?}, geometry has {:?} and {:?}",
                self.image_shape,
                self.sino_shape,
                geom.image_shape(),
                geom.sino_shape()
            )));
        }
        Ok(())
    }
}

/// Fixed linear projector stages used inside the graph.
#[derive(Clone)]
pub struct ProjectorOp {
    projector: Arc<Projector>,
    kind: ProjectorOpKind,
    scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectorOpKind {
    ForwardProject,
    Fbp,
}

impl ProjectorOp {
    pub fn new(projector: Arc<Projector>, kind: ProjectorOpKind, scale: f64) -> Self {
        ProjectorOp { projector, kind, scale }
    }

    fn image(&self, x: &[f64]) -> Image {
        Image {
            grid: self.projector.geometry().grid,
            unit: Unit::Mu,
            values: x.to_vec(),
        }
    }

    fn sinogram(&self, s: &[f64]) -> Sinogram {
        let [v, b] = self.projector.geometry().sino_shape();
        Sinogram {
            num_views: v,
            num_bins: b,
            values: s.to_vec(),
        }
    }
}

fn to_f64<T: Real>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.as_f64()).collect()
}

impl<T: Real> LinearOp<T> for ProjectorOp {
    fn in_shape(&self) -> [usize; 2] {
        let g = self.projector.geometry();
        match self.kind {
            ProjectorOpKind::ForwardProject => g.image_shape(),
            ProjectorOpKind::Fbp => g.sino_shape(),
        }
    }

    fn out_shape(&self) -> [usize; 2] {
        let g = self.projector.geometry();
        match self.kind {
            ProjectorOpKind::ForwardProject => g.sino_shape(),
            ProjectorOpKind::Fbp => g.image_shape(),
        }
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        let x = to_f64(x);
        let out = match self.kind {
            ProjectorOpKind::ForwardProject => self.projector.forward_project(&self.image(&x)).map(|s| s.values),
            ProjectorOpKind::Fbp => self.projector.fbp(&self.sinogram(&x)).map(|i| i.values),
        };
        let out = out.expect("projector operand shapes are checked by the graph");
        out.into_iter().map(|v| T::from_f64(self.scale * v)).collect()
    }

    fn adjoint(&self, g: &[T]) -> Vec<T> {
        let g = to_f64(g);
        let out = match self.kind {
            ProjectorOpKind::ForwardProject => self.projector.back_project(&self.sinogram(&g)).map(|i| i.values),
            ProjectorOpKind::Fbp => self.projector.fbp_adjoint(&self.image(&g)).map(|s| s.values),
        };
        let out = out.expect("projector operand shapes are checked by the graph");
        out.into_iter().map(|v| T::from_f64(self.scale * v)).collect()
    }
}

/// Operators shared by every sample of one geometry and normalization.
pub struct Operators<T: Real> {
    pub projector: Arc<Projector>,
    /// Normalized image to normalized sinogram, without the constant term.
    fp: Arc<dyn LinearOp<T>>,
    /// Normalized sinogram to `1 + HU / 1000`.
    fbp: Arc<dyn LinearOp<T>>,
    /// Normalized projection of a water-filled field: the constant term of
    /// the image-to-sinogram map.
    fp_water: Tensor<T>,
}

impl<T: Real> Operators<T> {
    pub fn new(projector: Arc<Projector>, sino_scale: f64) -> Result<Self> {
        let geom = projector.geometry().clone();
        let [nv, nb] = geom.sino_shape();
        let k = MU_WATER / sino_scale;
        let water = projector.forward_project(&Image::filled(geom.grid, Unit::Mu, 1.0))?;
        let fp_water = Tensor::new(
            [1, 1, nv, nb],
            water.values.iter().map(|&v| T::from_f64(k * v)).collect(),
        )?;
        Ok(Operators {
            fp: Arc::new(ProjectorOp::new(projector.clone(), ProjectorOpKind::ForwardProject, k)),
            fbp: Arc::new(ProjectorOp::new(projector.clone(), ProjectorOpKind::Fbp, 1.0 / k)),
            projector,
            fp_water,
        })
    }
}

/// Per-case network inputs, already normalized.
#[derive(Debug, Clone)]
pub struct NetInputs<T> {
    /// Clipped `X_ma / 1000`.
    pub x_ma: Tensor<T>,
    /// Clipped `X_LI / 1000`.
    pub x_li_clipped: Tensor<T>,
    /// Unclipped `X_LI / 1000`, the residual base of the prior image.
    pub x_li: Tensor<T>,
    pub s_li: Tensor<T>,
    pub trace: Tensor<T>,
    pub trace_mask: Vec<bool>,
}

/// Per-case supervision, normalized like [`NetInputs`].
#[derive(Debug, Clone)]
pub struct Targets<T> {
    pub x_gt: Tensor<T>,
    /// Target of the reconstruction loss; `x_gt` unless replaced.
    pub x_fbp: Tensor<T>,
    pub s_gt: Tensor<T>,
    pub metal: Vec<bool>,
}

fn image_tensor<T: Real>(x: &Image, clip: bool) -> Result<Tensor<T>> {
    x.expect_unit(Unit::Hu)?;
    let [h, w] = x.grid.shape();
    let (lo, hi) = IMAGE_INPUT_RANGE;
    Tensor::new(
        [1, 1, h, w],
        x.values
            .iter()
            .map(|&v| {
                let n = v / 1000.0;
                T::from_f64(if clip { n.clamp(lo, hi) } else { n })
            })
            .collect(),
    )
}

fn sino_tensor<T: Real>(s: &Sinogram, scale: f64) -> Result<Tensor<T>> {
    Tensor::new(
        [1, 1, s.num_views, s.num_bins],
        s.values.iter().map(|&v| T::from_f64(v / scale)).collect(),
    )
}

impl<T: Real> NetInputs<T> {
    pub fn new(x_ma: &Image, x_li: &Image, s_li: &Sinogram, tr: &MetalTrace, sino_scale: f64) -> Result<Self> {
        s_li.expect_shape(tr.shape())?;
        x_ma.expect_grid(&x_li.grid)?;
        let [nv, nb] = tr.shape();
        Ok(NetInputs {
            x_ma: image_tensor(x_ma, true)?,
            x_li_clipped: image_tensor(x_li, true)?,
            x_li: image_tensor(x_li, false)?,
            s_li: sino_tensor(s_li, sino_scale)?,
            trace: Tensor::new(
                [1, 1, nv, nb],
                tr.mask.iter().map(|&m| if m { T::one() } else { T::zero() }).collect(),
            )?,
            trace_mask: tr.mask.clone(),
        })
    }
}

impl<T: Real> Targets<T> {
    pub fn new(x_gt: &Image, s_gt: &Sinogram, mask: &MetalMask, sino_scale: f64) -> Result<Self> {
        x_gt.expect_grid(&mask.grid)?;
        let x = image_tensor(x_gt, false)?;
        Ok(Targets {
            x_fbp: x.clone(),
            x_gt: x,
            s_gt: sino_tensor(s_gt, sino_scale)?,
            metal: mask.mask.clone(),
        })
    }

    /// Use `x` (HU) as the target of the reconstruction loss.
    pub fn with_fbp_target(mut self, x: &Image) -> Result<Self> {
        let t = image_tensor(x, false)?;
        if t.shape != self.x_gt.shape {
            return Err(MarError::shape(&self.x_gt.shape, &t.shape));
        }
        self.x_fbp = t;
        Ok(self)
    }
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub x_prior: Option<Var>,
    pub s_prior: Option<Var>,
    /// First SinoNet input channel.
    pub sino_input: Var,
    /// Pre-composite sinogram.
    pub s_pre: Var,
    /// Composite sinogram.
    pub s_corr: Var,
}

/// Loss nodes of one training pass.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub prior: Option<Var>,
    pub sino: Var,
    pub fbp: Var,
    pub total: Var,
}

/// Scalar loss values of one sample or an average over samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub prior: f64,
    pub sino: f64,
    pub fbp: f64,
    pub total: f64,
}

impl LossValues {
    pub fn accumulate(&mut self, other: &LossValues, weight: f64) {
        self.prior += weight * other.prior;
        self.sino += weight * other.sino;
        self.fbp += weight * other.fbp;
        self.total += weight * other.total;
    }

    pub fn is_finite(&self) -> bool {
        self.prior.is_finite() && self.sino.is_finite() && self.fbp.is_finite() && self.total.is_finite()
    }
}

/// Reconstruction outputs with the intermediates of the dual-domain path.
#[derive(Debug, Clone)]
pub struct InferOutput {
    /// HU
    pub x_out: Image,
    /// HU; absent for the no-prior variant.
    pub x_prior: Option<Image>,
    pub s_prior: Option<Sinogram>,
    pub s_pre: Sinogram,
    pub s_corr: Sinogram,
}

/// Parameters of both networks, prior network first.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Tensor<f32>>,
    pub seed: u64,
    /// Optimizer steps taken.
    pub step: u64,
    pub epoch: u64,
}

impl Model {
    /// Fresh model: Kaiming-normal weights from `seed`, zero output layers.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = spec.prior_net().map(|p| p.init_params(&mut rng)).unwrap_or_default();
        params.extend(spec.sino_net().init_params(&mut rng));
        Ok(Model {
            spec,
            params,
            seed,
            step: 0,
            epoch: 0,
        })
    }

    fn prior_param_count(&self) -> usize {
        self.spec.prior_net().map(|p| 2 * p.convs().len()).unwrap_or(0)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Place the parameters on `g`, trainable or constant.
    pub fn bind<T: Real>(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                let t = p.cast::<T>();
                if trainable {
                    g.param(t)
                } else {
                    g.input(t)
                }
            })
            .collect()
    }

    /// Build the forward pass of one case on `g`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        inputs: &NetInputs<T>,
        ops: &Operators<T>,
    ) -> Result<ForwardNodes> {
        let split = self.prior_param_count();
        if params.len() != self.params.len() {
            return Err(MarError::shape(&[self.params.len()], &[params.len()]));
        }
        let (prior_params, sino_params) = params.split_at(split);
        let s_li = g.input(inputs.s_li.clone());
        let trace = g.input(inputs.trace.clone());

        let (x_prior, s_prior) = match self.spec.prior_net() {
            None => (None, None),
            Some(net) => {
                let x_ma = g.input(inputs.x_ma.clone());
                let (net_in, base) = if self.spec.variant == Variant::MetalImageOnly {
                    (x_ma, x_ma)
                } else {
                    let x_li_c = g.input(inputs.x_li_clipped.clone());
                    (g.concat(x_ma, x_li_c)?, g.input(inputs.x_li.clone()))
                };
                let r = net.forward(g, prior_params, net_in, None)?;
                let x_prior = g.add(base, r)?;
                let p = g.linear(x_prior, ops.fp.clone())?;
                let s_prior = g.affine(p, 1.0, Some(&ops.fp_water))?;
                (Some(x_prior), Some(s_prior))
            }
        };

        let sino_input = match (self.spec.variant, s_prior) {
            (Variant::NoPrior, _) => s_li,
            (Variant::NoResidual, Some(sp)) => sp,
            (_, Some(sp)) => g.sub(sp, s_li)?,
            (_, None) => unreachable!("prior variants always produce a prior sinogram"),
        };
        let net_in = g.concat(sino_input, trace)?;
        let r = self.spec.sino_net().forward(g, sino_params, net_in, Some(trace))?;
        let s_pre = if self.spec.variant == Variant::NoResidual {
            r
        } else {
            g.add(s_li, r)?
        };
        let s_corr = g.select(&inputs.trace_mask, s_pre, s_li)?;
        Ok(ForwardNodes {
            x_prior,
            s_prior,
            sino_input,
            s_pre,
            s_corr,
        })
    }

    /// Attach the joint objective to a forward pass.
    pub fn losses<T: Real>(
        &self,
        g: &mut Graph<T>,
        nodes: &ForwardNodes,
        targets: &Targets<T>,
        ops: &Operators<T>,
        weights: &LossWeights,
    ) -> Result<LossNodes> {
        let prior = match nodes.x_prior {
            Some(x) => Some(loss_prior(g, x, &targets.x_gt)?),
            None => None,
        };
        let sino = loss_sino(g, nodes.s_corr, nodes.s_pre, &targets.s_gt, weights.beta)?;
        let fbp = loss_fbp(g, nodes.s_corr, ops.fbp.clone(), -1.0, &targets.x_fbp, &targets.metal)?;
        let total = loss_total(g, prior, sino, fbp, weights)?;
        Ok(LossNodes {
            prior,
            sino,
            fbp,
            total,
        })
    }

    /// Loss values of one case without building gradients.
    pub fn evaluate_loss(
        &self,
        inputs: &NetInputs<f32>,
        targets: &Targets<f32>,
        ops: &Operators<f32>,
        weights: &LossWeights,
    ) -> Result<LossValues> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let nodes = self.forward(&mut g, &params, inputs, ops)?;
        let l = self.losses(&mut g, &nodes, targets, ops, weights)?;
        Ok(read_losses(&g, &l))
    }

    /// Loss values and parameter gradients of one case.
    pub fn loss_and_grad(
        &self,
        inputs: &NetInputs<f32>,
        targets: &Targets<f32>,
        ops: &Operators<f32>,
        weights: &LossWeights,
    ) -> Result<(LossValues, Vec<Tensor<f32>>)> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, true);
        let nodes = self.forward(&mut g, &params, inputs, ops)?;
        let l = self.losses(&mut g, &nodes, targets, ops, weights)?;
        let values = read_losses(&g, &l);
        if !values.is_finite() {
            return Err(MarError::Divergence(format!("non-finite loss {values:?}")));
        }
        g.backward(l.total)?;
        let grads = params
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape)))
            .collect();
        Ok((values, grads))
    }

    /// Full dual-domain correction of one case in double precision around
    /// single-precision network evaluations. Outside the trace the corrected
    /// sinogram is a copy of `s_li`.
    pub fn infer(
        &self,
        x_ma: &Image,
        x_li: &Image,
        s_li: &Sinogram,
        tr: &MetalTrace,
        projector: &Projector,
    ) -> Result<InferOutput> {
        let geom = projector.geometry();
        self.spec.check_geometry(geom)?;
        x_ma.expect_unit(Unit::Hu)?;
        x_li.expect_unit(Unit::Hu)?;
        x_ma.expect_grid(&geom.grid)?;
        x_li.expect_grid(&geom.grid)?;
        s_li.expect_geometry(geom)?;
        let sigma = self.spec.sino_scale;
        let inputs = NetInputs::<f32>::new(x_ma, x_li, s_li, tr, sigma)?;
        let split = self.prior_param_count();
        let [nv, nb] = geom.sino_shape();

        let (x_prior, s_prior) = match self.spec.prior_net() {
            None => (None, None),
            Some(net) => {
                let mut g = Graph::<f32>::new();
                let params = self.bind(&mut g, false);
                let x_ma_n = g.input(inputs.x_ma.clone());
                let (net_in, base) = if self.spec.variant == Variant::MetalImageOnly {
                    let (lo, hi) = IMAGE_INPUT_RANGE;
                    let clipped = x_ma
                        .values
                        .iter()
                        .map(|&v| 1000.0 * (v / 1000.0).clamp(lo, hi))
                        .collect();
                    (x_ma_n, clipped)
                } else {
                    let x_li_c = g.input(inputs.x_li_clipped.clone());
                    (g.concat(x_ma_n, x_li_c)?, x_li.values.clone())
                };
                let r = net.forward(&mut g, &params[..split], net_in, None)?;
                let r = g.value(r);
                let values: Vec<f64> = base.iter().zip(&r.data).map(|(&b, &d)| b + 1000.0 * d as f64).collect();
                let x_prior = Image {
                    grid: geom.grid,
                    unit: Unit::Hu,
                    values,
                };
                if !x_prior.values.iter().all(|v| v.is_finite()) {
                    return Err(MarError::Divergence("prior image is not finite".into()));
                }
                let s_prior = projector.forward_project(&x_prior.to_mu())?;
                (Some(x_prior), Some(s_prior))
            }
        };

        let sino_in: Vec<f64> = match (self.spec.variant, &s_prior) {
            (Variant::NoPrior, _) => s_li.values.clone(),
            (Variant::NoResidual, Some(sp)) => sp.values.clone(),
            (_, Some(sp)) => sp.values.iter().zip(&s_li.values).map(|(p, l)| p - l).collect(),
            (_, None) => unreachable!("prior variants always produce a prior sinogram"),
        };
        let mut g = Graph::<f32>::new();
        let params = self.bind(&mut g, false);
        let s_in = g.input(Tensor::new(
            [1, 1, nv, nb],
            sino_in.iter().map(|&v| (v / sigma) as f32).collect(),
        )?);
        let trace = g.input(inputs.trace.clone());
        let net_in = g.concat(s_in, trace)?;
        let r = self
            .spec
            .sino_net()
            .forward(&mut g, &params[split..], net_in, Some(trace))?;
        let r = g.value(r);
        let pre_values: Vec<f64> = if self.spec.variant == Variant::NoResidual {
            r.data.iter().map(|&d| sigma * d as f64).collect()
        } else {
            s_li.values
                .iter()
                .zip(&r.data)
                .map(|(&l, &d)| l + sigma * d as f64)
                .collect()
        };
        if !pre_values.iter().all(|v| v.is_finite()) {
            return Err(MarError::Divergence("corrected sinogram is not finite".into()));
        }
        let s_pre = Sinogram::new(nv, nb, pre_values)?;
        let s_corr = composite(&s_pre, s_li, tr)?;
        let x_out = projector.fbp(&s_corr)?.to_hu();
        Ok(InferOutput {
            x_out,
            x_prior,
            s_prior,
            s_pre,
            s_corr,
        })
    }

    /// Write the single-file checkpoint: an 8-byte little-endian header
    /// length, the JSON header, then every parameter as little-endian `f32`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            format: CHECKPOINT_MAGIC.into(),
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            seed: self.seed,
            step: self.step,
            epoch: self.epoch,
            param_shapes: self.params.iter().map(|p| p.shape).collect(),
        };
        let json = serde_json::to_vec_pretty(&header).map_err(|e| MarError::json(path, e))?;
        let file = File::create(path).map_err(|e| MarError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| MarError::io(path, e);
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for p in &self.params {
            for v in &p.data {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| MarError::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| MarError::io(path, e);
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(io)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 24 {
            return Err(MarError::Data(format!(
                "{}: implausible checkpoint header length {len}",
                path.display()
            )));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json).map_err(io)?;
        let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| MarError::json(path, e))?;
        if header.format != CHECKPOINT_MAGIC || header.version != CHECKPOINT_VERSION {
            return Err(MarError::Data(format!(
                "{}: not a version {CHECKPOINT_VERSION} checkpoint",
                path.display()
            )));
        }
        header.spec.validate()?;
        if header.param_shapes != header.spec.param_shapes() {
            return Err(MarError::Data(format!(
                "{}: parameter shapes do not match the architecture",
                path.display()
            )));
        }
        let mut params = Vec::with_capacity(header.param_shapes.len());
        for shape in &header.param_shapes {
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; 4 * n];
            r.read_exact(&mut bytes).map_err(io)?;
            let data: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push(Tensor::new(*shape, data)?);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(io)?;
        if !rest.is_empty() {
            return Err(MarError::Data(format!(
                "{}: trailing bytes after parameters",
                path.display()
            )));
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(MarError::Data(format!("{}: non-finite parameters", path.display())));
        }
        Ok(Model {
            spec: header.spec,
            params,
            seed: header.seed,
            step: header.step,
            epoch: header.epoch,
        })
    }
}

fn read_losses<T: Real>(g: &Graph<T>, l: &LossNodes) -> LossValues {
    LossValues {
        prior: l.prior.map(|v| g.scalar(v).as_f64()).unwrap_or(0.0),
        sino: g.scalar(l.sino).as_f64(),
        fbp: g.scalar(l.fbp).as_f64(),
        total: g.scalar(l.total).as_f64(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    spec: ModelSpec,
    seed: u64,
    step: u64,
    epoch: u64,
    param_shapes: Vec<[usize; 4]>,
}
