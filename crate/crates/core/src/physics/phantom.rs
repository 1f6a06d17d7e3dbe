//! Procedural phantoms and metal masks.
//!
//! Body phantoms are built from painted ellipses: a soft-tissue body, fat and
//! organ inclusions, an optional air pocket and several bone structures.
//! Metal masks come from a fixed bank of 100 implant layouts; ids `0..90`
//! form the training family and `90..100` the held-out family.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::ImageGrid;
use crate::image::{Image, Unit};
use crate::mar::MetalMask;
use crate::rng::case_rng;

/// Samples per pixel side used when rasterizing shapes.
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Blend {
    /// Add the value inside the shape.
    Add,
    /// Replace whatever is underneath.
    Paint,
}

/// An ellipse in physical coordinates (mm, radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub rotation: f64,
    pub value: f64,
    pub blend: Blend,
}

impl Ellipse {
    /// Normalized radius: < 1 inside, > 1 outside.
    #[inline]
    fn rho(&self, p: [f64; 2]) -> f64 {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let (s, c) = self.rotation.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        ((u / self.semi_axes[0]).powi(2) + (v / self.semi_axes[1]).powi(2)).sqrt()
    }

    /// Fractional membership of point `p`; `edge` > 0 gives a raised-cosine
    /// transition of roughly that width in mm.
    #[inline]
    fn membership(&self, p: [f64; 2], edge: f64) -> f64 {
        let rho = self.rho(p);
        if edge <= 0.0 {
            return if rho <= 1.0 { 1.0 } else { 0.0 };
        }
        let scale = 0.5 * (self.semi_axes[0] + self.semi_axes[1]);
        let d = (rho - 1.0) * scale / edge;
        if d <= -0.5 {
            1.0
        } else if d >= 0.5 {
            0.0
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * (d + 0.5)).cos())
        }
    }
}

/// Rasterize shapes in order with supersampled area coverage.
pub fn rasterize(grid: ImageGrid, unit: Unit, background: f64, shapes: &[Ellipse], edge: f64) -> Image {
    let mut img = Image::filled(grid, unit, background);
    let ss = SUPERSAMPLE;
    let inv = 1.0 / (ss * ss) as f64;
    for shape in shapes {
        for r in 0..grid.height {
            for c in 0..grid.width {
                let pc = grid.pixel_center(r, c);
                // cheap reject
                let reach = shape.semi_axes[0].max(shape.semi_axes[1]) + edge + grid.pixel_size;
                if (pc[0] - shape.center[0]).abs() > reach || (pc[1] - shape.center[1]).abs() > reach {
                    continue;
                }
                let mut cover = 0.0;
                for i in 0..ss {
                    for j in 0..ss {
                        let p = [
                            pc[0] + ((j as f64 + 0.5) / ss as f64 - 0.5) * grid.pixel_size,
                            pc[1] - ((i as f64 + 0.5) / ss as f64 - 0.5) * grid.pixel_size,
                        ];
                        cover += shape.membership(p, edge);
                    }
                }
                cover *= inv;
                if cover == 0.0 {
                    continue;
                }
                let v = &mut img.values[r * grid.width + c];
                *v = match shape.blend {
                    Blend::Add => *v + cover * shape.value,
                    Blend::Paint => (1.0 - cover) * *v + cover * shape.value,
                };
            }
        }
    }
    img
}

/// Modified Shepp-Logan head phantom in mu, scaled to the inscribed circle.
/// Intensities are multiples of `peak_mu`; `edge` softens the boundaries (mm).
pub fn shepp_logan(grid: ImageGrid, peak_mu: f64, edge: f64) -> Image {
    // value, a, b, x0, y0, phi (degrees), in units of the phantom radius
    const TABLE: [[f64; 6]; 10] = [
        [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
        [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
        [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
        [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
        [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
        [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
        [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
        [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
        [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
        [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
    ];
    let radius = 0.47 * grid.height.min(grid.width) as f64 * grid.pixel_size;
    let shapes: Vec<Ellipse> = TABLE
        .iter()
        .map(|e| Ellipse {
            center: [e[3] * radius, e[4] * radius],
            semi_axes: [e[1] * radius, e[2] * radius],
            rotation: e[5].to_radians(),
            value: e[0] * peak_mu,
            blend: Blend::Add,
        })
        .collect();
    rasterize(grid, Unit::Mu, 0.0, &shapes, edge)
}

/// Parameters of the random body phantoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    /// Body semi-axes as a fraction of the inscribed radius.
    pub body_extent: [f64; 2],
    pub soft_tissue_hu: [f64; 2],
    pub fat_hu: [f64; 2],
    pub organ_hu: [f64; 2],
    pub bone_hu: [f64; 2],
    pub organs: [usize; 2],
    pub bones: [usize; 2],
    /// Probability of an air pocket (bowel / lung).
    pub air_pocket: f64,
    /// Edge softening width in mm.
    pub edge: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            body_extent: [0.78, 0.95],
            soft_tissue_hu: [20.0, 60.0],
            fat_hu: [-120.0, -60.0],
            organ_hu: [-30.0, 90.0],
            bone_hu: [400.0, 1400.0],
            organs: [2, 5],
            bones: [2, 5],
            air_pocket: 0.4,
            edge: 0.5,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.gen_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// A random metal-free body slice in HU. Values stay below 1500 HU.
pub fn random_body_phantom(grid: ImageGrid, rng: &mut ChaCha8Rng, params: &PhantomParams) -> Image {
    let radius = 0.5 * grid.height.min(grid.width) as f64 * grid.pixel_size;
    let mut shapes = Vec::new();
    let ax = radius * uniform(rng, params.body_extent);
    let ay = ax * rng.gen_range(0.85..1.0);
    let body = Ellipse {
        center: [0.0, 0.0],
        semi_axes: [ax, ay],
        rotation: rng.gen_range(-0.2..0.2),
        value: uniform(rng, params.soft_tissue_hu),
        blend: Blend::Paint,
    };
    shapes.push(body);
    // subcutaneous fat ring approximated by a slightly smaller tissue ellipse
    // painted over a fat layer
    let fat = uniform(rng, params.fat_hu);
    shapes.push(Ellipse {
        semi_axes: [ax * 0.96, ay * 0.96],
        value: fat,
        ..body
    });
    shapes.push(Ellipse {
        semi_axes: [ax * 0.88, ay * 0.88],
        ..body
    });

    let inner = |rng: &mut ChaCha8Rng, scale: f64| -> [f64; 2] {
        let t = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = scale * rng.gen_range(0.0f64..1.0).sqrt();
        [r * ax * t.cos(), r * ay * t.sin()]
    };

    let n_organs = rng.gen_range(params.organs[0]..=params.organs[1]);
    for _ in 0..n_organs {
        let size = radius * rng.gen_range(0.12..0.32);
        shapes.push(Ellipse {
            center: inner(rng, 0.55),
            semi_axes: [size, size * rng.gen_range(0.5..1.0)],
            rotation: rng.gen_range(0.0..std::f64::consts::PI),
            value: uniform(rng, params.organ_hu),
            blend: Blend::Paint,
        });
    }
    if rng.gen_bool(params.air_pocket) {
        let size = radius * rng.gen_range(0.05..0.12);
        shapes.push(Ellipse {
            center: inner(rng, 0.6),
            semi_axes: [size, size * rng.gen_range(0.6..1.0)],
            rotation: rng.gen_range(0.0..std::f64::consts::PI),
            value: -1000.0,
            blend: Blend::Paint,
        });
    }
    let n_bones = rng.gen_range(params.bones[0]..=params.bones[1]);
    for _ in 0..n_bones {
        let size = radius * rng.gen_range(0.04..0.13);
        let c = inner(rng, 0.75);
        let hu = uniform(rng, params.bone_hu);
        shapes.push(Ellipse {
            center: c,
            semi_axes: [size, size * rng.gen_range(0.35..1.0)],
            rotation: rng.gen_range(0.0..std::f64::consts::PI),
            value: hu,
            blend: Blend::Paint,
        });
        // marrow
        if size > 2.5 * grid.pixel_size && rng.gen_bool(0.5) {
            shapes.push(Ellipse {
                center: c,
                semi_axes: [size * 0.5, size * 0.3],
                rotation: 0.0,
                value: hu * 0.4,
                blend: Blend::Paint,
            });
        }
    }
    rasterize(grid, Unit::Hu, -1000.0, &shapes, params.edge)
}

/// Implant layout of one bank entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub id: usize,
    /// Disk centers and radii in units of the inscribed radius.
    pub disks: Vec<([f64; 2], f64)>,
    /// Rods: (center, half-length, half-width, rotation) in inscribed-radius units.
    pub rods: Vec<([f64; 2], f64, f64, f64)>,
}

/// Number of implant layouts in the bank.
pub const MASK_BANK_SIZE: usize = 100;
/// Layouts `0..TRAIN_MASKS` are for training; the rest are held out.
pub const TRAIN_MASKS: usize = 90;

/// Deterministic bank entry `id`.
pub fn mask_spec(id: usize) -> MaskSpec {
    // fixed stream independent of any dataset seed
    let mut rng = case_rng(0x6d61_736b, id as u64);
    let kind = id % 5;
    let mut disks = Vec::new();
    let mut rods = Vec::new();
    let place = |rng: &mut ChaCha8Rng| -> [f64; 2] {
        let t = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = rng.gen_range(0.0..0.4);
        [r * t.cos(), r * t.sin()]
    };
    match kind {
        // single implant
        0 => disks.push((place(&mut rng), rng.gen_range(0.05..0.12))),
        // a pair, e.g. bilateral hip screws
        1 | 2 => {
            let c = place(&mut rng);
            let t = rng.gen_range(0.0..std::f64::consts::PI);
            let sep = rng.gen_range(0.22..0.45);
            let r = rng.gen_range(0.045..0.09);
            for sgn in [-1.0, 1.0] {
                let p = [
                    (c[0] + sgn * 0.5 * sep * t.cos()).clamp(-0.6, 0.6),
                    (c[1] + sgn * 0.5 * sep * t.sin()).clamp(-0.6, 0.6),
                ];
                disks.push((p, r * rng.gen_range(0.85..1.15)));
            }
        }
        // rod (pedicle screw / nail)
        3 => rods.push((
            place(&mut rng),
            rng.gen_range(0.1..0.22),
            rng.gen_range(0.03..0.06),
            rng.gen_range(0.0..std::f64::consts::PI),
        )),
        // cluster of small fillings
        _ => {
            let n = rng.gen_range(2..=4);
            let c = place(&mut rng);
            for _ in 0..n {
                let p = [c[0] + rng.gen_range(-0.2..0.2), c[1] + rng.gen_range(-0.2..0.2)];
                disks.push((p, rng.gen_range(0.04..0.07)));
            }
        }
    }
    MaskSpec { id, disks, rods }
}

/// Rasterize a bank entry on `grid`. A pixel is metal when its center lies
/// inside any implant; every implant covers at least its central pixel.
pub fn mask_from_spec(grid: ImageGrid, spec: &MaskSpec) -> MetalMask {
    let radius = 0.5 * grid.height.min(grid.width) as f64 * grid.pixel_size;
    let mut mask = vec![false; grid.len()];
    let mark_nearest = |p: [f64; 2], mask: &mut Vec<bool>| {
        let (r, c) = grid.to_index_space(p);
        let r = r.round().clamp(0.0, grid.height as f64 - 1.0) as usize;
        let c = c.round().clamp(0.0, grid.width as f64 - 1.0) as usize;
        mask[r * grid.width + c] = true;
    };
    for &(c, rad) in &spec.disks {
        let center = [c[0] * radius, c[1] * radius];
        let rr = (rad * radius).max(0.5 * grid.pixel_size);
        for r in 0..grid.height {
            for col in 0..grid.width {
                let p = grid.pixel_center(r, col);
                if (p[0] - center[0]).hypot(p[1] - center[1]) <= rr {
                    mask[r * grid.width + col] = true;
                }
            }
        }
        mark_nearest(center, &mut mask);
    }
    for &(c, half_len, half_w, rot) in &spec.rods {
        let center = [c[0] * radius, c[1] * radius];
        let (s, co) = rot.sin_cos();
        let hl = half_len * radius;
        let hw = (half_w * radius).max(0.5 * grid.pixel_size);
        for r in 0..grid.height {
            for col in 0..grid.width {
                let p = grid.pixel_center(r, col);
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                let u = co * dx + s * dy;
                let v = -s * dx + co * dy;
                if u.abs() <= hl && v.abs() <= hw {
                    mask[r * grid.width + col] = true;
                }
            }
        }
        mark_nearest(center, &mut mask);
    }
    MetalMask::new(grid, mask)
}

/// Smooth test phantom: soft-edged ellipses in mu with dynamic range `peak_mu`.
pub fn smooth_phantom(grid: ImageGrid, peak_mu: f64) -> Image {
    let r = 0.45 * grid.height.min(grid.width) as f64 * grid.pixel_size;
    let shapes = [
        Ellipse {
            center: [0.0, 0.0],
            semi_axes: [0.85 * r, 0.7 * r],
            rotation: 0.1,
            value: 0.6,
            blend: Blend::Add,
        },
        Ellipse {
            center: [0.3 * r, 0.1 * r],
            semi_axes: [0.25 * r, 0.18 * r],
            rotation: 0.6,
            value: 0.4,
            blend: Blend::Add,
        },
        Ellipse {
            center: [-0.35 * r, -0.2 * r],
            semi_axes: [0.2 * r, 0.3 * r],
            rotation: -0.3,
            value: -0.25,
            blend: Blend::Add,
        },
        Ellipse {
            center: [-0.1 * r, 0.4 * r],
            semi_axes: [0.12 * r, 0.12 * r],
            rotation: 0.0,
            value: 0.3,
            blend: Blend::Add,
        },
    ];
    let edge = 0.12 * r;
    let mut img = rasterize(grid, Unit::Mu, 0.0, &shapes, edge);
    for v in &mut img.values {
        *v *= peak_mu;
    }
    img
}
