//! Metal artifact simulation: material decomposition, metal insertion,
//! polychromatic projection with partial volume and Poisson noise.

mod attenuation;
pub mod phantom;
mod spectrum;

pub use attenuation::{mass_attenuation, mu_per_density, Material, MetalMaterial};
pub use spectrum::{Spectrum, DEFAULT_PHOTONS};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{MarError, Result};
use crate::geometry::{ImageGrid, ScanGeometry};
use crate::image::{hu_to_mu, Image, Sinogram, Unit, REFERENCE_KEV};
use crate::mar::{metal_trace, MetalMask, MetalTrace, METAL_THRESHOLD_HU};
use crate::projector::{project_many, Projector};
use crate::rng::case_rng;

/// Sub-ray positions within a detector bin, in bin units, averaged in the
/// intensity domain to model the partial volume effect.
pub const SUBRAY_OFFSETS: [f64; 3] = [-1.0 / 3.0, 0.0, 1.0 / 3.0];

/// Pixels above this HU are treated as bone.
pub const BONE_THRESHOLD_HU: f64 = 350.0;

/// Per-pixel densities (g/cm^3) of the simulated materials.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialMap {
    pub grid: ImageGrid,
    /// Relative to water (= 1 at 0 HU).
    pub water_density: Vec<f64>,
    pub bone_density: Vec<f64>,
    pub metal_density: Vec<f64>,
    pub metal_material: MetalMaterial,
}

impl MaterialMap {
    /// Linear attenuation (mm^-1) at `kev`.
    pub fn mu_at(&self, kev: f64) -> Image {
        let w = mu_per_density(Material::Water, kev);
        let b = mu_per_density(Material::Bone, kev);
        let m = mu_per_density(self.metal_material.material(), kev);
        let values = (0..self.grid.len())
            .map(|i| w * self.water_density[i] + b * self.bone_density[i] + m * self.metal_density[i])
            .collect();
        Image {
            grid: self.grid,
            unit: Unit::Mu,
            values,
        }
    }
}

/// Split an HU image into water-equivalent and bone densities that reproduce
/// its attenuation at the reference energy.
pub fn decompose(x: &Image) -> Result<MaterialMap> {
    x.expect_unit(Unit::Hu)?;
    let bone_mu = mu_per_density(Material::Bone, REFERENCE_KEV);
    let water_mu = mu_per_density(Material::Water, REFERENCE_KEV);
    let n = x.grid.len();
    let mut water = vec![0.0; n];
    let mut bone = vec![0.0; n];
    for (i, &hu) in x.values.iter().enumerate() {
        let mu = hu_to_mu(hu).max(0.0);
        if hu > BONE_THRESHOLD_HU {
            bone[i] = mu / bone_mu;
        } else {
            water[i] = mu / water_mu;
        }
    }
    Ok(MaterialMap {
        grid: x.grid,
        water_density: water,
        bone_density: bone,
        metal_density: vec![0.0; n],
        metal_material: MetalMaterial::Titanium,
    })
}

/// Place metal of `density` on the mask, clearing tissue underneath.
pub fn insert_metal(m: &MaterialMap, mask: &MetalMask, material: MetalMaterial, density: f64) -> Result<MaterialMap> {
    if mask.grid != m.grid {
        return Err(MarError::shape(&m.grid.shape(), &mask.grid.shape()));
    }
    if mask.is_empty() {
        return Err(MarError::EmptyMask);
    }
    let mut out = m.clone();
    out.metal_material = material;
    for (i, &inside) in mask.mask.iter().enumerate() {
        if inside {
            out.water_density[i] = 0.0;
            out.bone_density[i] = 0.0;
            out.metal_density[i] = density;
        }
    }
    Ok(out)
}

/// Outcome of a polychromatic projection.
#[derive(Debug, Clone)]
pub struct PolySinogram {
    pub sinogram: Sinogram,
    /// Bins whose detected count fell below one photon and were clamped.
    pub starved_bins: usize,
}

/// Post-log sinogram of a polychromatic scan.
///
/// For each bin the expected count is the mean over [`SUBRAY_OFFSETS`] of
/// `sum_e fluence(e) * N0 * exp(-sum_mat mu_mat(e) * L_mat)`. With `rng` the
/// count is Poisson-sampled; without it the expectation is used. The post-log
/// value is `-ln(max(I, 1) / N0)`.
pub fn polychromatic_sinogram(
    m: &MaterialMap,
    spectrum: &Spectrum,
    geom: &ScanGeometry,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<PolySinogram> {
    polychromatic_sinogram_with(m, spectrum, geom, &SUBRAY_OFFSETS, rng)
}

/// [`polychromatic_sinogram`] with explicit sub-ray offsets (in bins); a
/// single zero offset disables the partial volume effect.
pub fn polychromatic_sinogram_with(
    m: &MaterialMap,
    spectrum: &Spectrum,
    geom: &ScanGeometry,
    offsets: &[f64],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<PolySinogram> {
    spectrum.validate()?;
    if offsets.is_empty() {
        return Err(MarError::Config("at least one sub-ray offset is required".into()));
    }
    if m.grid != geom.grid {
        return Err(MarError::shape(&geom.grid.shape(), &m.grid.shape()));
    }
    let n0 = spectrum.total_photons;
    let coeffs: Vec<[f64; 3]> = spectrum
        .energies
        .iter()
        .map(|&e| {
            [
                mu_per_density(Material::Water, e),
                mu_per_density(Material::Bone, e),
                mu_per_density(m.metal_material.material(), e),
            ]
        })
        .collect();
    let has_metal = m.metal_density.iter().any(|&d| d != 0.0);
    let mut expected = vec![0.0; geom.fan_beam.len()];
    for &off in offsets {
        let lines = if has_metal {
            project_many(geom, &[&m.water_density, &m.bone_density, &m.metal_density], off)
        } else {
            let mut l = project_many(geom, &[&m.water_density, &m.bone_density], off);
            l.push(vec![0.0; geom.fan_beam.len()]);
            l
        };
        for (i, e) in expected.iter_mut().enumerate() {
            let (lw, lb, lm) = (lines[0][i], lines[1][i], lines[2][i]);
            let mut intensity = 0.0;
            for (c, &f) in coeffs.iter().zip(&spectrum.fluence) {
                intensity += f * (-(c[0] * lw + c[1] * lb + c[2] * lm)).exp();
            }
            *e += n0 * intensity;
        }
    }
    let k = offsets.len() as f64;
    for e in &mut expected {
        *e /= k;
    }

    let mut starved = 0;
    let counts: Vec<f64> = match rng {
        Some(rng) => expected
            .iter()
            .map(|&lambda| {
                if lambda > 0.0 {
                    Poisson::new(lambda).map(|p| p.sample(rng)).unwrap_or(0.0)
                } else {
                    0.0
                }
            })
            .collect(),
        None => expected,
    };
    let values = counts
        .iter()
        .map(|&c| {
            if c < 1.0 {
                starved += 1;
            }
            -(c.max(1.0) / n0).ln()
        })
        .collect();
    let [nv, nb] = geom.sino_shape();
    Ok(PolySinogram {
        sinogram: Sinogram::new(nv, nb, values)?,
        starved_bins: starved,
    })
}

/// Settings for one simulated acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub spectrum: Spectrum,
    pub metal: MetalMaterial,
    /// g/cm^3
    pub metal_density: f64,
    /// Average sub-rays across each detector bin.
    #[serde(default = "default_true")]
    pub partial_volume: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            spectrum: Spectrum::default(),
            metal: MetalMaterial::Titanium,
            metal_density: MetalMaterial::Titanium.density(),
            partial_volume: true,
        }
    }
}

/// A simulated training/evaluation pair.
#[derive(Debug, Clone)]
pub struct CasePair {
    pub s_ma: Sinogram,
    /// HU
    pub x_ma: Image,
    pub s_gt: Sinogram,
    /// HU
    pub x_gt: Image,
    pub mask: MetalMask,
    pub trace: MetalTrace,
    pub starved_bins: usize,
}

/// Simulate a metal-corrupted scan of a clean HU image.
///
/// The ground-truth sinogram is the noise-free monochromatic projection at the
/// reference energy. Noise draws come from stream `stream` of `seed`. An empty
/// mask yields a metal-free control case.
pub fn simulate_case(
    x_clean: &Image,
    mask: &MetalMask,
    projector: &Projector,
    cfg: &SimConfig,
    seed: u64,
    stream: u64,
) -> Result<CasePair> {
    x_clean.expect_unit(Unit::Hu)?;
    let geom = projector.geometry();
    x_clean.expect_grid(&geom.grid)?;
    if x_clean.values.iter().any(|&v| v >= METAL_THRESHOLD_HU) {
        return Err(MarError::Data("clean image already contains metal-range values".into()));
    }
    let s_gt = projector.forward_project(&x_clean.to_mu())?;
    let tissue = decompose(x_clean)?;
    let materials = if mask.is_empty() {
        tissue
    } else {
        insert_metal(&tissue, mask, cfg.metal, cfg.metal_density)?
    };
    let mut rng = case_rng(seed, stream);
    let offsets: &[f64] = if cfg.partial_volume { &SUBRAY_OFFSETS } else { &[0.0] };
    let poly = polychromatic_sinogram_with(&materials, &cfg.spectrum, geom, offsets, Some(&mut rng))?;
    let x_ma = projector.fbp(&poly.sinogram)?.to_hu();
    let trace = metal_trace(mask, geom)?;
    Ok(CasePair {
        s_ma: poly.sinogram,
        x_ma,
        s_gt,
        x_gt: x_clean.clone(),
        mask: mask.clone(),
        trace,
        starved_bins: poly.starved_bins,
    })
}
