use serde::{Deserialize, Serialize};

use super::attenuation::{mu_per_density, Material};
use crate::error::{MarError, Result};

/// Expected photons per detector bin in an air scan.
pub const DEFAULT_PHOTONS: f64 = 2.0e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Bin centers, keV.
    pub energies: Vec<f64>,
    /// Photon fraction per bin, sums to one.
    pub fluence: Vec<f64>,
    pub total_photons: f64,
}

impl Spectrum {
    pub fn new(energies: Vec<f64>, fluence: Vec<f64>, total_photons: f64) -> Result<Self> {
        let s = Spectrum {
            energies,
            fluence,
            total_photons,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.energies.is_empty() || self.energies.len() != self.fluence.len() {
            return Err(MarError::Spectrum(
                "energies and fluence must be nonempty and paired".into(),
            ));
        }
        if self.energies.iter().any(|&e| !(e > 10.0)) {
            return Err(MarError::Spectrum("energies must exceed 10 keV".into()));
        }
        if self.energies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MarError::Spectrum("energies must be strictly increasing".into()));
        }
        if self.fluence.iter().any(|&f| !(f >= 0.0)) {
            return Err(MarError::Spectrum("fluence must be nonnegative".into()));
        }
        let sum: f64 = self.fluence.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MarError::Spectrum(format!("fluence sums to {sum}, not 1")));
        }
        if !(self.total_photons > 0.0 && self.total_photons.is_finite()) {
            return Err(MarError::Spectrum("total photon count must be positive".into()));
        }
        Ok(())
    }

    /// Single-energy beam.
    pub fn monochromatic(kev: f64, total_photons: f64) -> Result<Self> {
        Spectrum::new(vec![kev], vec![1.0], total_photons)
    }

    /// 120 kVp tube approximated by ten 10-keV bins (25..115 keV): Kramers'
    /// photon spectrum `(kVp - E) / E` hardened by 2.5 mm Al and 0.9 mm Cu.
    /// The filtration puts the effective water attenuation next to the 70 keV
    /// reference.
    pub fn tube_120kvp(total_photons: f64) -> Self {
        const KVP: f64 = 120.0;
        const AL_MM: f64 = 2.5;
        const CU_MM: f64 = 0.9;
        const AL_DENSITY: f64 = 2.699;
        const CU_DENSITY: f64 = 8.96;
        let energies: Vec<f64> = (0..10).map(|i| 25.0 + 10.0 * i as f64).collect();
        let raw: Vec<f64> = energies
            .iter()
            .map(|&e| {
                let filter = mu_per_density(Material::Aluminum, e) * AL_DENSITY * AL_MM
                    + mu_per_density(Material::Copper, e) * CU_DENSITY * CU_MM;
                (KVP - e) / e * (-filter).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        let fluence = raw.iter().map(|r| r / total).collect();
        Spectrum::new(energies, fluence, total_photons).expect("built-in spectrum is valid")
    }

    /// Fluence-weighted mean energy, keV.
    pub fn mean_energy(&self) -> f64 {
        self.energies.iter().zip(&self.fluence).map(|(e, f)| e * f).sum()
    }
}

impl Default for Spectrum {
    fn default() -> Self {
        Spectrum::tube_120kvp(DEFAULT_PHOTONS)
    }
}
