//! Raw little-endian `f32` arrays with JSON sidecars.
//!
//! `name.f32` holds the values in row-major order (sinograms views-major) and
//! `name.json` records shape, unit and, when known, the scan geometry.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{MarError, Result};
use crate::geometry::{ImageGrid, ScanGeometry};
use crate::image::{Image, Sinogram, Unit};
use crate::mar::{MetalMask, MetalTrace};

/// What a raw array holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayKind {
    Image,
    Sinogram,
    Mask,
    Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: ArrayKind,
    /// `[height, width]` or `[views, bins]`.
    pub shape: [usize; 2],
    /// `hu`, `mu`, `line_integral` or `binary`.
    pub unit: String,
    pub layout: String,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<ScanGeometry>,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("f32"), base.with_extension("json"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| MarError::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| MarError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| MarError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| MarError::json(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| MarError::io(path, e))
}

/// Write `values` as `base.f32` plus `base.json`.
pub fn write_raw(base: &Path, values: &[f64], sidecar: &Sidecar) -> Result<()> {
    let n = sidecar.shape[0] * sidecar.shape[1];
    if values.len() != n {
        return Err(MarError::shape(&sidecar.shape, &[values.len()]));
    }
    let (data_path, meta_path) = paths(base);
    let mut bytes = Vec::with_capacity(4 * n);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(&data_path, bytes).map_err(|e| MarError::io(&data_path, e))?;
    write_json(&meta_path, sidecar)
}

/// Read `base.f32` and its sidecar.
pub fn read_raw(base: &Path) -> Result<(Vec<f64>, Sidecar)> {
    let (data_path, meta_path) = paths(base);
    let sidecar: Sidecar = read_json(&meta_path)?;
    let bytes = fs::read(&data_path).map_err(|e| MarError::io(&data_path, e))?;
    let n = sidecar.shape[0] * sidecar.shape[1];
    if bytes.len() != 4 * n {
        return Err(MarError::Data(format!(
            "{}: {} bytes, sidecar shape {:?} needs {}",
            data_path.display(),
            bytes.len(),
            sidecar.shape,
            4 * n
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((values, sidecar))
}

fn expect_kind(base: &Path, meta: &Sidecar, kind: ArrayKind) -> Result<()> {
    if meta.kind != kind {
        return Err(MarError::Data(format!(
            "{}: expected a {kind:?} array, found {:?}",
            base.display(),
            meta.kind
        )));
    }
    Ok(())
}

pub fn write_image(base: &Path, x: &Image, geometry: Option<&ScanGeometry>) -> Result<()> {
    write_raw(
        base,
        &x.values,
        &Sidecar {
            kind: ArrayKind::Image,
            shape: x.grid.shape(),
            unit: x.unit.name().into(),
            layout: "row_major".into(),
            dtype: "f32_le".into(),
            geometry: geometry.cloned(),
        },
    )
}

/// Read an image; a sidecar without geometry gets a grid of `pixel_size` mm.
pub fn read_image(base: &Path, pixel_size: f64) -> Result<Image> {
    let (values, meta) = read_raw(base)?;
    expect_kind(base, &meta, ArrayKind::Image)?;
    let unit = match meta.unit.as_str() {
        "hu" => Unit::Hu,
        "mu" => Unit::Mu,
        other => {
            return Err(MarError::Data(format!(
                "{}: unknown image unit '{other}'",
                base.display()
            )))
        }
    };
    let grid = match &meta.geometry {
        Some(g) => g.grid,
        None => ImageGrid::new(meta.shape[0], meta.shape[1], pixel_size)?,
    };
    if grid.shape() != meta.shape {
        return Err(MarError::shape(&grid.shape(), &meta.shape));
    }
    Image::new(grid, unit, values)
}

pub fn write_sinogram(base: &Path, s: &Sinogram, geometry: Option<&ScanGeometry>) -> Result<()> {
    write_raw(
        base,
        &s.values,
        &Sidecar {
            kind: ArrayKind::Sinogram,
            shape: s.shape(),
            unit: "line_integral".into(),
            layout: "views_major".into(),
            dtype: "f32_le".into(),
            geometry: geometry.cloned(),
        },
    )
}

pub fn read_sinogram(base: &Path) -> Result<Sinogram> {
    let (values, meta) = read_raw(base)?;
    expect_kind(base, &meta, ArrayKind::Sinogram)?;
    Sinogram::new(meta.shape[0], meta.shape[1], values)
}

pub fn write_mask(base: &Path, m: &MetalMask) -> Result<()> {
    let values: Vec<f64> = m.mask.iter().map(|&b| f64::from(u8::from(b))).collect();
    write_raw(
        base,
        &values,
        &Sidecar {
            kind: ArrayKind::Mask,
            shape: m.grid.shape(),
            unit: "binary".into(),
            layout: "row_major".into(),
            dtype: "f32_le".into(),
            geometry: None,
        },
    )
}

pub fn read_mask(base: &Path, grid: ImageGrid) -> Result<MetalMask> {
    let (values, meta) = read_raw(base)?;
    expect_kind(base, &meta, ArrayKind::Mask)?;
    if meta.shape != grid.shape() {
        return Err(MarError::shape(&grid.shape(), &meta.shape));
    }
    Ok(MetalMask::new(grid, values.iter().map(|&v| v > 0.5).collect()))
}

pub fn write_trace(base: &Path, t: &MetalTrace) -> Result<()> {
    write_raw(
        base,
        &t.as_f64(),
        &Sidecar {
            kind: ArrayKind::Trace,
            shape: t.shape(),
            unit: "binary".into(),
            layout: "views_major".into(),
            dtype: "f32_le".into(),
            geometry: None,
        },
    )
}

pub fn read_trace(base: &Path) -> Result<MetalTrace> {
    let (values, meta) = read_raw(base)?;
    expect_kind(base, &meta, ArrayKind::Trace)?;
    MetalTrace::new(meta.shape[0], meta.shape[1], values.iter().map(|&v| v > 0.5).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::toy_geometry;

    #[test]
    fn arrays_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let geom = toy_geometry(16).unwrap();
        let x = Image::from_fn(geom.grid, Unit::Hu, |r, c| (r * 16 + c) as f64 - 100.0);
        write_image(&dir.path().join("x"), &x, Some(&geom)).unwrap();
        assert_eq!(read_image(&dir.path().join("x"), 1.0).unwrap(), x);

        let s = Sinogram::new(2, 3, vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0]).unwrap();
        write_sinogram(&dir.path().join("s"), &s, None).unwrap();
        assert_eq!(read_sinogram(&dir.path().join("s")).unwrap(), s);
        assert!(read_image(&dir.path().join("s"), 1.0).is_err());

        let t = MetalTrace::new(2, 3, vec![false, true, false, true, true, false]).unwrap();
        write_trace(&dir.path().join("t"), &t).unwrap();
        assert_eq!(read_trace(&dir.path().join("t")).unwrap(), t);

        let mut m = vec![false; 256];
        m[17] = true;
        let m = MetalMask::new(geom.grid, m);
        write_mask(&dir.path().join("m"), &m).unwrap();
        assert_eq!(read_mask(&dir.path().join("m"), geom.grid).unwrap(), m);
    }

    #[test]
    fn sidecar_geometry_is_bit_exact() {
        // inference compares the stored geometry with the model's by equality
        let dir = tempfile::tempdir().unwrap();
        for n in [16, 32, 48, 64, 416] {
            let geom = toy_geometry(n).unwrap();
            let base = dir.path().join(format!("x{n}"));
            write_image(&base, &Image::zeros(geom.grid, Unit::Hu), Some(&geom)).unwrap();
            assert_eq!(read_raw(&base).unwrap().1.geometry, Some(geom));
        }
    }

    #[test]
    fn truncated_data_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = Sinogram::new(2, 2, vec![1.0; 4]).unwrap();
        let base = dir.path().join("s");
        write_sinogram(&base, &s, None).unwrap();
        std::fs::write(base.with_extension("f32"), [0u8; 12]).unwrap();
        assert!(matches!(read_sinogram(&base), Err(MarError::Data(_))));
    }
}
