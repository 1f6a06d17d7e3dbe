//! Image and sinogram containers.

use serde::{Deserialize, Serialize};

use crate::error::{MarError, Result};
use crate::geometry::{ImageGrid, ScanGeometry};

/// Linear attenuation of water at the 70 keV reference energy, mm^-1.
pub const MU_WATER: f64 = 0.0193;
/// Reference energy for ground-truth attenuation and HU conversion, keV.
pub const REFERENCE_KEV: f64 = 70.0;

#[inline]
pub fn hu_to_mu(hu: f64) -> f64 {
    MU_WATER * (1.0 + hu / 1000.0)
}

#[inline]
pub fn mu_to_hu(mu: f64) -> f64 {
    (mu / MU_WATER - 1.0) * 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    /// Hounsfield units.
    Hu,
    /// Linear attenuation, mm^-1.
    Mu,
}

impl Unit {
    pub fn name(self) -> &'static str {
        match self {
            Unit::Hu => "hu",
            Unit::Mu => "mu",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub grid: ImageGrid,
    pub unit: Unit,
    /// Row-major, row 0 at +y.
    pub values: Vec<f64>,
}

impl Image {
    pub fn new(grid: ImageGrid, unit: Unit, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MarError::shape(&[grid.len()], &[values.len()]));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MarError::Data("image contains non-finite values".into()));
        }
        Ok(Image { grid, unit, values })
    }

    pub fn zeros(grid: ImageGrid, unit: Unit) -> Self {
        Image {
            grid,
            unit,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn filled(grid: ImageGrid, unit: Unit, value: f64) -> Self {
        Image {
            grid,
            unit,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: ImageGrid, unit: Unit, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for r in 0..grid.height {
            for c in 0..grid.width {
                values.push(f(r, c));
            }
        }
        Image { grid, unit, values }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid.width + col]
    }

    pub fn to_mu(&self) -> Image {
        match self.unit {
            Unit::Mu => self.clone(),
            Unit::Hu => Image {
                grid: self.grid,
                unit: Unit::Mu,
                values: self.values.iter().map(|&v| hu_to_mu(v)).collect(),
            },
        }
    }

    pub fn to_hu(&self) -> Image {
        match self.unit {
            Unit::Hu => self.clone(),
            Unit::Mu => Image {
                grid: self.grid,
                unit: Unit::Hu,
                values: self.values.iter().map(|&v| mu_to_hu(v)).collect(),
            },
        }
    }

    pub fn expect_unit(&self, unit: Unit) -> Result<()> {
        if self.unit != unit {
            return Err(MarError::Unit {
                expected: unit.name(),
                got: self.unit.name(),
            });
        }
        Ok(())
    }

    pub fn expect_grid(&self, grid: &ImageGrid) -> Result<()> {
        if self.grid != *grid {
            return Err(MarError::shape(&grid.shape(), &self.grid.shape()));
        }
        Ok(())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Post-log line integrals, `num_views x num_bins`, views-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub num_views: usize,
    pub num_bins: usize,
    pub values: Vec<f64>,
}

impl Sinogram {
    pub fn new(num_views: usize, num_bins: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_views * num_bins {
            return Err(MarError::shape(&[num_views * num_bins], &[values.len()]));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MarError::Data("sinogram contains non-finite values".into()));
        }
        Ok(Sinogram {
            num_views,
            num_bins,
            values,
        })
    }

    pub fn zeros_for(geom: &ScanGeometry) -> Self {
        let [v, b] = geom.sino_shape();
        Sinogram {
            num_views: v,
            num_bins: b,
            values: vec![0.0; v * b],
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.num_views, self.num_bins]
    }

    #[inline]
    pub fn row(&self, view: usize) -> &[f64] {
        &self.values[view * self.num_bins..(view + 1) * self.num_bins]
    }

    #[inline]
    pub fn row_mut(&mut self, view: usize) -> &mut [f64] {
        &mut self.values[view * self.num_bins..(view + 1) * self.num_bins]
    }

    pub fn expect_geometry(&self, geom: &ScanGeometry) -> Result<()> {
        if self.shape() != geom.sino_shape() {
            return Err(MarError::shape(&geom.sino_shape(), &self.shape()));
        }
        Ok(())
    }

    pub fn expect_shape(&self, other: [usize; 2]) -> Result<()> {
        if self.shape() != other {
            return Err(MarError::shape(&other, &self.shape()));
        }
        Ok(())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, a: f64) -> Sinogram {
        Sinogram {
            num_views: self.num_views,
            num_bins: self.num_bins,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }
}

/// Sum of elementwise products.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hu_mu_roundtrip() {
        assert_eq!(hu_to_mu(0.0), MU_WATER);
        assert_eq!(hu_to_mu(-1000.0), 0.0);
        for hu in [-1000.0, -250.0, 0.0, 40.0, 1200.0, 3000.0] {
            assert!((mu_to_hu(hu_to_mu(hu)) - hu).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let g = ImageGrid::new(8, 8, 1.0).unwrap();
        assert!(Image::new(g, Unit::Hu, vec![0.0; 63]).is_err());
        assert!(Image::new(g, Unit::Hu, vec![f64::NAN; 64]).is_err());
        assert!(Sinogram::new(4, 5, vec![0.0; 19]).is_err());
    }

    #[test]
    fn unit_checks() {
        let g = ImageGrid::new(8, 8, 1.0).unwrap();
        let img = Image::zeros(g, Unit::Hu);
        assert!(img.expect_unit(Unit::Mu).is_err());
        assert_eq!(img.to_mu().values[0], MU_WATER);
    }
}
