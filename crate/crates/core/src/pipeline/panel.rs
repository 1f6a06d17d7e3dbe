//! Grayscale PNG panels.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{MarError, Result};
use crate::image::Image;
use crate::mar::MetalMask;

/// Display window in HU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub low: f64,
    pub high: f64,
}

impl Default for Window {
    /// The soft-tissue window used for the abdominal figures.
    fn default() -> Self {
        Window {
            low: -480.0,
            high: 560.0,
        }
    }
}

impl Window {
    fn gray(&self, hu: f64) -> u8 {
        let t = ((hu - self.low) / (self.high - self.low)).clamp(0.0, 1.0);
        (255.0 * t).round() as u8
    }
}

/// Window of difference images, symmetric around zero.
pub const DIFF_WINDOW: Window = Window {
    low: -250.0,
    high: 250.0,
};

const GAP: usize = 2;

/// Write a two-row panel: the reference followed by every image on top, and
/// below each image its difference to the reference. Metal pixels of the
/// difference row are drawn white.
pub fn write_panel(
    path: &Path,
    reference: &Image,
    images: &[(&str, &Image)],
    mask: &MetalMask,
    window: Window,
) -> Result<()> {
    let (h, w) = (reference.grid.height, reference.grid.width);
    let cols = images.len() + 1;
    let width = cols * w + (cols - 1) * GAP;
    let height = 2 * h + GAP;
    let mut pixels = vec![0u8; width * height];
    let mut blit = |col: usize, row: usize, f: &dyn Fn(usize) -> u8| {
        for r in 0..h {
            for c in 0..w {
                pixels[(row * (h + GAP) + r) * width + col * (w + GAP) + c] = f(r * w + c);
            }
        }
    };
    blit(0, 0, &|i| window.gray(reference.values[i]));
    for (k, (_, img)) in images.iter().enumerate() {
        img.expect_grid(&reference.grid)?;
        blit(k + 1, 0, &|i| window.gray(img.values[i]));
        blit(k + 1, 1, &|i| {
            if mask.mask[i] {
                255
            } else {
                DIFF_WINDOW.gray(img.values[i] - reference.values[i])
            }
        });
    }
    let file = File::create(path).map_err(|e| MarError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let names: Vec<&str> = images.iter().map(|(n, _)| *n).collect();
    enc.add_text_chunk("Columns".into(), format!("reference,{}", names.join(",")))
        .map_err(|e| MarError::Data(format!("png metadata: {e}")))?;
    let encoding = |e: png::EncodingError| MarError::Data(format!("{}: png encoding failed: {e}", path.display()));
    let mut writer = enc.write_header().map_err(encoding)?;
    writer.write_image_data(&pixels).map_err(encoding)?;
    writer.finish().map_err(encoding)
}

/// Single windowed image.
pub fn write_image_png(path: &Path, x: &Image, window: Window) -> Result<()> {
    let (h, w) = (x.grid.height, x.grid.width);
    let pixels: Vec<u8> = x.values.iter().map(|&v| window.gray(v)).collect();
    let file = File::create(path).map_err(|e| MarError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let encoding = |e: png::EncodingError| MarError::Data(format!("{}: png encoding failed: {e}", path.display()));
    let mut writer = enc.write_header().map_err(encoding)?;
    writer.write_image_data(&pixels).map_err(encoding)?;
    writer.finish().map_err(encoding)
}
