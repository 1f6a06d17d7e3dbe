//! Mass attenuation coefficients (cm^2/g, total with coherent scattering),
//! after the NIST XCOM / Hubbell-Seltzer tables, interpolated log-log.
//!
//! The water entry carries an extra knot at 70 keV pinned to 0.1930 cm^2/g so
//! that unit-density water reproduces the 0.0193 mm^-1 reference exactly.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Water,
    Bone,
    Titanium,
    Iron,
    Gold,
    Aluminum,
    Copper,
}

/// Metals that can be inserted into a phantom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetalMaterial {
    Titanium,
    Iron,
    Gold,
}

impl MetalMaterial {
    pub fn material(self) -> Material {
        match self {
            MetalMaterial::Titanium => Material::Titanium,
            MetalMaterial::Iron => Material::Iron,
            MetalMaterial::Gold => Material::Gold,
        }
    }

    /// Nominal density, g/cm^3.
    pub fn density(self) -> f64 {
        match self {
            MetalMaterial::Titanium => 4.5,
            MetalMaterial::Iron => 7.87,
            MetalMaterial::Gold => 19.32,
        }
    }
}

const KNOTS: [f64; 8] = [20.0, 30.0, 40.0, 50.0, 60.0, 80.0, 100.0, 150.0];

const WATER: [(f64, f64); 9] = [
    (20.0, 0.8096),
    (30.0, 0.3756),
    (40.0, 0.2683),
    (50.0, 0.2269),
    (60.0, 0.2059),
    (70.0, 0.1930),
    (80.0, 0.1837),
    (100.0, 0.1707),
    (150.0, 0.1505),
];
// ICRU-44 cortical bone
const BONE: [f64; 8] = [4.001, 1.331, 0.6655, 0.4242, 0.3148, 0.2229, 0.1855, 0.1480];
const TITANIUM: [f64; 8] = [15.85, 4.972, 2.214, 1.213, 0.7661, 0.4052, 0.2721, 0.1649];
const IRON: [f64; 8] = [25.68, 8.176, 3.629, 1.958, 1.205, 0.5952, 0.3717, 0.1964];
const ALUMINUM: [f64; 8] = [3.441, 1.128, 0.5685, 0.3681, 0.2778, 0.2018, 0.1704, 0.1378];
const COPPER: [f64; 8] = [33.79, 10.92, 4.862, 2.613, 1.593, 0.7630, 0.4584, 0.2217];
// K edge at 80.725 keV appears as a repeated energy
const GOLD: [(f64, f64); 10] = [
    (20.0, 78.83),
    (30.0, 27.0),
    (40.0, 12.9),
    (50.0, 7.256),
    (60.0, 4.528),
    (80.0, 2.185),
    (80.725, 2.137),
    (80.725, 8.904),
    (100.0, 5.158),
    (150.0, 1.859),
];

fn loglog(table: &[(f64, f64)], e: f64) -> f64 {
    let last = table.len() - 1;
    // last knot with energy <= e, so an edge switches to the upper branch at e
    let i = match table.iter().rposition(|&(k, _)| k <= e) {
        None => 0,
        Some(i) if i >= last => last - 1,
        Some(i) => i,
    };
    let (e0, v0) = table[i];
    let (e1, v1) = table[i + 1];
    if e1 == e0 {
        return v1;
    }
    let t = (e.ln() - e0.ln()) / (e1.ln() - e0.ln());
    (v0.ln() + t * (v1.ln() - v0.ln())).exp()
}

fn zip_knots(values: &[f64; 8]) -> [(f64, f64); 8] {
    let mut out = [(0.0, 0.0); 8];
    for (o, (&e, &v)) in out.iter_mut().zip(KNOTS.iter().zip(values)) {
        *o = (e, v);
    }
    out
}

/// Mass attenuation coefficient in cm^2/g at `kev`.
pub fn mass_attenuation(material: Material, kev: f64) -> f64 {
    match material {
        Material::Water => loglog(&WATER, kev),
        Material::Bone => loglog(&zip_knots(&BONE), kev),
        Material::Titanium => loglog(&zip_knots(&TITANIUM), kev),
        Material::Iron => loglog(&zip_knots(&IRON), kev),
        Material::Aluminum => loglog(&zip_knots(&ALUMINUM), kev),
        Material::Copper => loglog(&zip_knots(&COPPER), kev),
        Material::Gold => loglog(&GOLD, kev),
    }
}

/// Linear attenuation in mm^-1 per unit density (g/cm^3).
pub fn mu_per_density(material: Material, kev: f64) -> f64 {
    0.1 * mass_attenuation(material, kev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{MU_WATER, REFERENCE_KEV};

    #[test]
    fn water_reference() {
        assert!((mu_per_density(Material::Water, REFERENCE_KEV) - MU_WATER).abs() < 1e-15);
    }

    #[test]
    fn knots_are_reproduced() {
        assert!((mass_attenuation(Material::Iron, 60.0) - 1.205).abs() < 1e-12);
        assert!((mass_attenuation(Material::Bone, 100.0) - 0.1855).abs() < 1e-12);
    }

    #[test]
    fn gold_k_edge_jumps() {
        let below = mass_attenuation(Material::Gold, 80.7);
        let above = mass_attenuation(Material::Gold, 80.8);
        assert!(above > 3.0 * below);
    }

    #[test]
    fn decreasing_away_from_edges() {
        for m in [Material::Water, Material::Bone, Material::Titanium, Material::Iron] {
            let mut prev = f64::INFINITY;
            for e in (25..=115).step_by(10) {
                let v = mass_attenuation(m, e as f64);
                assert!(v < prev);
                prev = v;
            }
        }
    }
}
