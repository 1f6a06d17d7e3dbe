//! Procedural training and test sets.
//!
//! Training cases pair random body phantoms with implant layouts from the
//! first [`TRAIN_MASKS`] entries of the mask bank; test cases use only the
//! remaining held-out layouts. All arrays are rounded to `f32` on creation so
//! the in-memory set equals what is written to disk.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::par_map;
use crate::error::{MarError, Result};
use crate::geometry::{toy_geometry, ScanGeometry};
use crate::image::{Image, Sinogram};
use crate::io;
use crate::mar::{li_complete, MetalMask, MetalTrace};
use crate::physics::phantom::{
    mask_from_spec, mask_spec, random_body_phantom, PhantomParams, MASK_BANK_SIZE, TRAIN_MASKS,
};
use crate::physics::{simulate_case, SimConfig};
use crate::projector::Projector;
use crate::rng::case_rng;

const MANIFEST_FORMAT: &str = "mar-dataset";
const MANIFEST_VERSION: u32 = 1;
/// Offsets of the phantom and mask-choice streams from the noise streams.
const PHANTOM_KEY: u64 = 0x7068_616e_746f_6d00;
const MASK_KEY: u64 = 0x6d61_736b_0000_0000;
/// Test case indices start here so they do not depend on the training size.
const TEST_INDEX_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub image_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub phantom: PhantomParams,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 && self.n_test == 0 {
            return Err(MarError::Config("dataset needs at least one case".into()));
        }
        toy_geometry(self.image_size)?;
        self.sim.spectrum.validate()
    }

    pub fn geometry(&self) -> Result<ScanGeometry> {
        toy_geometry(self.image_size)
    }
}

/// One simulated case.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub id: String,
    pub split: Split,
    pub mask_id: usize,
    pub s_ma: Sinogram,
    pub s_gt: Sinogram,
    /// HU
    pub x_gt: Image,
    pub mask: MetalMask,
    pub trace: MetalTrace,
    pub starved_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub split: Split,
    pub mask_id: usize,
    /// Relative to the dataset root.
    pub dir: PathBuf,
    pub metal_pixels: usize,
    pub trace_bins: usize,
    pub starved_bins: usize,
    /// Hash of the case arrays, for reproducibility checks.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: DatasetConfig,
    pub geometry: ScanGeometry,
    /// Mask-bank ids available to training cases (`[start, end)`).
    pub train_mask_ids: [usize; 2],
    /// Held-out mask-bank ids used by test cases (`[start, end)`).
    pub test_mask_ids: [usize; 2],
    pub cases: Vec<CaseEntry>,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Self> {
        let m: Manifest = io::read_json(&root.join("manifest.json"))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(MarError::Data(format!("{}: not a dataset manifest", root.display())));
        }
        Ok(m)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &CaseEntry> {
        self.cases.iter().filter(move |c| c.split == split)
    }
}

fn round_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

fn checksum(case: &Case) -> String {
    let mut h = DefaultHasher::new();
    for arr in [&case.s_ma.values, &case.s_gt.values, &case.x_gt.values] {
        for v in arr.iter() {
            h.write_u32((*v as f32).to_bits());
        }
    }
    for &m in &case.mask.mask {
        h.write_u8(u8::from(m));
    }
    format!("{:016x}", h.finish())
}

/// Simulate one case. `index` selects the random streams; test indices are
/// offset so the test set does not depend on the training size.
pub fn simulate_one(cfg: &DatasetConfig, projector: &Projector, split: Split, k: usize) -> Result<Case> {
    let geom = projector.geometry();
    let index = match split {
        Split::Train => k as u64,
        Split::Test => TEST_INDEX_BASE + k as u64,
    };
    let x = random_body_phantom(
        geom.grid,
        &mut case_rng(cfg.seed.wrapping_add(PHANTOM_KEY), index),
        &cfg.phantom,
    );
    let mask_id = match split {
        Split::Train => case_rng(cfg.seed ^ MASK_KEY, index).gen_range(0..TRAIN_MASKS),
        Split::Test => TRAIN_MASKS + k % (MASK_BANK_SIZE - TRAIN_MASKS),
    };
    let mask = mask_from_spec(geom.grid, &mask_spec(mask_id));
    let pair = simulate_case(&x, &mask, projector, &cfg.sim, cfg.seed, index)?;
    let mut case = Case {
        id: format!("{}_{k:04}", split.name()),
        split,
        mask_id,
        s_ma: pair.s_ma,
        s_gt: pair.s_gt,
        x_gt: pair.x_gt,
        mask: pair.mask,
        trace: pair.trace,
        starved_bins: pair.starved_bins,
    };
    round_f32(&mut case.s_ma.values);
    round_f32(&mut case.s_gt.values);
    round_f32(&mut case.x_gt.values);
    Ok(case)
}

/// Simulate the whole set in memory.
pub fn simulate_dataset(cfg: &DatasetConfig) -> Result<Vec<Case>> {
    cfg.validate()?;
    let geom = cfg.geometry()?;
    let projector = Projector::new(&geom);
    let jobs: Vec<(Split, usize)> = (0..cfg.n_train)
        .map(|k| (Split::Train, k))
        .chain((0..cfg.n_test).map(|k| (Split::Test, k)))
        .collect();
    par_map(&jobs, |&(split, k)| simulate_one(cfg, &projector, split, k))
        .into_iter()
        .collect()
}

fn case_dir(case: &Case) -> PathBuf {
    PathBuf::from(case.split.name()).join(&case.id)
}

/// Simulate the set and write it under `root` with a `manifest.json`.
pub fn generate_dataset(cfg: &DatasetConfig, root: &Path) -> Result<Manifest> {
    let cases = simulate_dataset(cfg)?;
    let geom = cfg.geometry()?;
    let mut entries = Vec::with_capacity(cases.len());
    for case in &cases {
        let rel = case_dir(case);
        let dir = root.join(&rel);
        io::create_dir(&dir)?;
        io::write_sinogram(&dir.join("s_ma"), &case.s_ma, Some(&geom))?;
        io::write_sinogram(&dir.join("s_gt"), &case.s_gt, Some(&geom))?;
        io::write_image(&dir.join("x_gt"), &case.x_gt, Some(&geom))?;
        io::write_mask(&dir.join("mask"), &case.mask)?;
        io::write_trace(&dir.join("trace"), &case.trace)?;
        entries.push(CaseEntry {
            id: case.id.clone(),
            split: case.split,
            mask_id: case.mask_id,
            dir: rel,
            metal_pixels: case.mask.count(),
            trace_bins: case.trace.count(),
            starved_bins: case.starved_bins,
            checksum: checksum(case),
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        geometry: geom,
        train_mask_ids: [0, TRAIN_MASKS],
        test_mask_ids: [TRAIN_MASKS, MASK_BANK_SIZE],
        cases: entries,
    };
    io::create_dir(root)?;
    io::write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Load every case of `split` listed in the manifest.
pub fn load_cases(root: &Path, manifest: &Manifest, split: Split) -> Result<Vec<Case>> {
    let grid = manifest.geometry.grid;
    manifest
        .entries(split)
        .map(|e| {
            let dir = root.join(&e.dir);
            let case = Case {
                id: e.id.clone(),
                split: e.split,
                mask_id: e.mask_id,
                s_ma: io::read_sinogram(&dir.join("s_ma"))?,
                s_gt: io::read_sinogram(&dir.join("s_gt"))?,
                x_gt: io::read_image(&dir.join("x_gt"), grid.pixel_size)?,
                mask: io::read_mask(&dir.join("mask"), grid)?,
                trace: io::read_trace(&dir.join("trace"))?,
                starved_bins: e.starved_bins,
            };
            if checksum(&case) != e.checksum {
                return Err(MarError::Data(format!(
                    "{}: case data does not match the manifest",
                    dir.display()
                )));
            }
            Ok(case)
        })
        .collect()
}

/// Reconstructions shared by every method: `X_ma`, `S_LI` and `X_LI`.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// HU
    pub x_ma: Image,
    pub s_li: Sinogram,
    /// HU
    pub x_li: Image,
}

pub fn prepare(s_ma: &Sinogram, trace: &MetalTrace, projector: &Projector) -> Result<Prepared> {
    let s_li = li_complete(s_ma, trace)?;
    Ok(Prepared {
        x_ma: projector.fbp(s_ma)?.to_hu(),
        x_li: projector.fbp(&s_li)?.to_hu(),
        s_li,
    })
}

/// Largest ground-truth line integral over the cases: the sinogram
/// normalization constant of the networks.
pub fn sino_scale(cases: &[Case]) -> Result<f64> {
    let m = cases.iter().map(|c| c.s_gt.max()).fold(0.0, f64::max);
    if !(m > 0.0 && m.is_finite()) {
        return Err(MarError::Data(
            "training sinograms have no positive line integrals".into(),
        ));
    }
    Ok(m)
}
