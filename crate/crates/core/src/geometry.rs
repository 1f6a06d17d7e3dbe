//! Image lattice and equiangular fan-beam acquisition geometry.
//!
//! Conventions shared by every operator in the crate:
//!
//! * angles are measured counterclockwise from the +x axis;
//! * images are stored row-major with row 0 at +y, column 0 at -x, and the
//!   grid center at the isocenter;
//! * sinograms are stored views-major (`values[view * num_bins + bin]`);
//! * detector bin `k` sits at fan angle `(k - center_bin) * detector_arc`,
//!   positive fan angles rotate the ray counterclockwise about the source.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{MarError, Result};

/// Pixel pitch used at every resolution, in mm.
pub const PIXEL_SIZE_MM: f64 = 1.0;
/// Image side length of the full-resolution configuration.
pub const PAPER_IMAGE_SIZE: usize = 416;
pub const PAPER_NUM_VIEWS: usize = 640;
pub const PAPER_NUM_BINS: usize = 641;

const SOURCE_DISTANCE_PER_DIAGONAL: f64 = 2.5;
const DETECTOR_DISTANCE_PER_SOURCE: f64 = 2.0;
const FAN_MARGIN: f64 = 1.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
    /// mm per pixel
    pub pixel_size: f64,
    /// Physical position of the grid center, in mm.
    pub center: [f64; 2],
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, pixel_size: f64) -> Result<Self> {
        let grid = ImageGrid {
            height,
            width,
            pixel_size,
            center: [0.0, 0.0],
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(MarError::Geometry(format!(
                "image grid must be at least 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(MarError::Geometry(format!(
                "pixel size must be positive, got {}",
                self.pixel_size
            )));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(MarError::Geometry("grid center must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.height, self.width]
    }

    /// Physical diagonal of the field of view in mm.
    pub fn diagonal(&self) -> f64 {
        self.pixel_size * ((self.height * self.height + self.width * self.width) as f64).sqrt()
    }

    /// Center of pixel `(row, col)` in mm.
    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        let x = (col as f64 - (self.width as f64 - 1.0) / 2.0) * self.pixel_size + self.center[0];
        let y = ((self.height as f64 - 1.0) / 2.0 - row as f64) * self.pixel_size + self.center[1];
        [x, y]
    }

    /// Continuous (row, col) coordinates of a physical point.
    #[inline]
    pub fn to_index_space(&self, p: [f64; 2]) -> (f64, f64) {
        let col = (p[0] - self.center[0]) / self.pixel_size + (self.width as f64 - 1.0) / 2.0;
        let row = (self.height as f64 - 1.0) / 2.0 - (p[1] - self.center[1]) / self.pixel_size;
        (row, col)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanBeamGeometry {
    pub num_views: usize,
    pub num_bins: usize,
    /// Total rotation covered by the views, radians.
    pub angular_range: f64,
    /// mm
    pub source_to_isocenter: f64,
    /// mm
    pub source_to_detector: f64,
    /// Equiangular bin pitch, radians.
    pub detector_arc: f64,
    pub view_angles: Vec<f64>,
}

impl FanBeamGeometry {
    pub fn new(
        num_views: usize,
        num_bins: usize,
        angular_range: f64,
        source_to_isocenter: f64,
        source_to_detector: f64,
        detector_arc: f64,
    ) -> Result<Self> {
        let step = angular_range / num_views.max(1) as f64;
        let geom = FanBeamGeometry {
            num_views,
            num_bins,
            angular_range,
            source_to_isocenter,
            source_to_detector,
            detector_arc,
            view_angles: (0..num_views).map(|v| v as f64 * step).collect(),
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_views < 4 {
            return Err(MarError::Geometry(format!(
                "need at least 4 views, got {}",
                self.num_views
            )));
        }
        if self.num_bins < 3 || self.num_bins.is_multiple_of(2) {
            return Err(MarError::Geometry(format!(
                "detector bin count must be odd and >= 3, got {}",
                self.num_bins
            )));
        }
        if !(self.source_to_isocenter > 0.0 && self.source_to_detector > self.source_to_isocenter) {
            return Err(MarError::Geometry(format!(
                "need source_to_detector ({}) > source_to_isocenter ({}) > 0",
                self.source_to_detector, self.source_to_isocenter
            )));
        }
        if !(self.angular_range > 0.0 && self.angular_range <= 2.0 * PI + 1e-12) {
            return Err(MarError::Geometry(format!(
                "angular range must lie in (0, 2pi], got {}",
                self.angular_range
            )));
        }
        if !(self.detector_arc > 0.0 && self.half_fan_angle() < PI / 2.0) {
            return Err(MarError::Geometry(format!(
                "detector arc {} gives an invalid fan",
                self.detector_arc
            )));
        }
        if self.view_angles.len() != self.num_views {
            return Err(MarError::Geometry("view angle list has the wrong length".into()));
        }
        let step = self.view_step();
        for (v, &a) in self.view_angles.iter().enumerate() {
            if (a - v as f64 * step).abs() > 1e-9 {
                return Err(MarError::Geometry(format!("view angle {v} is not uniformly spaced")));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.num_views, self.num_bins]
    }

    pub fn len(&self) -> usize {
        self.num_views * self.num_bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn view_step(&self) -> f64 {
        self.angular_range / self.num_views as f64
    }

    pub fn center_bin(&self) -> usize {
        self.num_bins / 2
    }

    /// Fan angle of the outermost bin center.
    pub fn half_fan_angle(&self) -> f64 {
        self.center_bin() as f64 * self.detector_arc
    }

    /// Fan angle of a (possibly fractional) bin position.
    #[inline]
    pub fn fan_angle(&self, bin: f64) -> f64 {
        (bin - self.center_bin() as f64) * self.detector_arc
    }

    /// Radius of the circle around the isocenter that the fan covers.
    pub fn covered_radius(&self) -> f64 {
        self.source_to_isocenter * self.half_fan_angle().sin()
    }

    #[inline]
    pub fn source_position(&self, view: usize) -> [f64; 2] {
        let a = self.view_angles[view];
        [self.source_to_isocenter * a.cos(), self.source_to_isocenter * a.sin()]
    }

    /// Unit direction of the ray leaving the source at fractional bin position `bin`.
    #[inline]
    pub fn ray_direction(&self, view: usize, bin: f64) -> [f64; 2] {
        // central ray points from the source back through the isocenter
        let a = self.view_angles[view] + PI + self.fan_angle(bin);
        [a.cos(), a.sin()]
    }

    /// Source and detector-element positions (mm) for one ray.
    pub fn ray_endpoints(&self, view: usize, bin: usize) -> Result<([f64; 2], [f64; 2])> {
        if view >= self.num_views {
            return Err(MarError::OutOfRange {
                what: "view",
                index: view,
                limit: self.num_views,
            });
        }
        if bin >= self.num_bins {
            return Err(MarError::OutOfRange {
                what: "bin",
                index: bin,
                limit: self.num_bins,
            });
        }
        let s = self.source_position(view);
        let d = self.ray_direction(view, bin as f64);
        let det = [
            s[0] + self.source_to_detector * d[0],
            s[1] + self.source_to_detector * d[1],
        ];
        Ok((s, det))
    }
}

/// An image grid bound to the fan-beam geometry that scans it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub grid: ImageGrid,
    pub fan_beam: FanBeamGeometry,
}

impl ScanGeometry {
    pub fn new(grid: ImageGrid, fan_beam: FanBeamGeometry) -> Result<Self> {
        let g = ScanGeometry { grid, fan_beam };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.fan_beam.validate()?;
        let fov_radius = self.grid.diagonal() / 2.0 + self.grid.center[0].hypot(self.grid.center[1]);
        if fov_radius >= self.fan_beam.source_to_isocenter {
            return Err(MarError::Geometry("field of view reaches the source trajectory".into()));
        }
        if self.fan_beam.covered_radius() <= fov_radius {
            return Err(MarError::Geometry(format!(
                "fan covers radius {:.3} mm but the field of view needs {:.3} mm",
                self.fan_beam.covered_radius(),
                fov_radius
            )));
        }
        Ok(())
    }

    pub fn image_shape(&self) -> [usize; 2] {
        self.grid.shape()
    }

    pub fn sino_shape(&self) -> [usize; 2] {
        self.fan_beam.shape()
    }

    /// Geometry for an `height x width` grid with `num_views` views and `num_bins`
    /// detector bins over a full rotation, using the fixed source distances and a
    /// fan that covers the field of view with a small margin.
    pub fn full_scan(height: usize, width: usize, pixel_size: f64, num_views: usize, num_bins: usize) -> Result<Self> {
        let grid = ImageGrid::new(height, width, pixel_size)?;
        let diag = grid.diagonal();
        let sid = SOURCE_DISTANCE_PER_DIAGONAL * diag;
        let sdd = DETECTOR_DISTANCE_PER_SOURCE * sid;
        if num_bins < 3 || num_bins.is_multiple_of(2) {
            return Err(MarError::Geometry(format!(
                "detector bin count must be odd and >= 3, got {num_bins}"
            )));
        }
        let half_fan = FAN_MARGIN * (diag / 2.0 / sid).asin();
        let arc = half_fan / (num_bins / 2) as f64;
        let fan = FanBeamGeometry::new(num_views, num_bins, 2.0 * PI, sid, sdd, arc)?;
        ScanGeometry::new(grid, fan)
    }
}

/// The full-resolution configuration: 416x416 images, 640 views, 641 bins.
pub fn paper_geometry() -> ScanGeometry {
    ScanGeometry::full_scan(
        PAPER_IMAGE_SIZE,
        PAPER_IMAGE_SIZE,
        PIXEL_SIZE_MM,
        PAPER_NUM_VIEWS,
        PAPER_NUM_BINS,
    )
    .expect("built-in geometry is valid")
}

/// Views and bins for an `n x n` grid, scaled from the full-resolution sampling.
pub fn toy_sampling(n: usize) -> (usize, usize) {
    let mut views = (PAPER_NUM_VIEWS * n).div_ceil(PAPER_IMAGE_SIZE);
    if views % 2 == 1 {
        views += 1;
    }
    let mut bins = views + 1;
    if bins.is_multiple_of(2) {
        bins += 1;
    }
    (views, bins)
}

/// Desk-scale geometry for an `n x n` grid; `toy_geometry(416)` equals [`paper_geometry`].
pub fn toy_geometry(n: usize) -> Result<ScanGeometry> {
    if n < 8 {
        return Err(MarError::Geometry(format!("toy geometry needs n >= 8, got {n}")));
    }
    let (views, bins) = toy_sampling(n);
    ScanGeometry::full_scan(n, n, PIXEL_SIZE_MM, views, bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist_point_to_line(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
        let d = [b[0] - a[0], b[1] - a[1]];
        let n = d[0].hypot(d[1]);
        ((p[0] - a[0]) * d[1] - (p[1] - a[1]) * d[0]).abs() / n
    }

    #[test]
    fn paper_shapes() {
        let g = paper_geometry();
        assert_eq!(g.image_shape(), [416, 416]);
        assert_eq!(g.sino_shape(), [640, 641]);
        assert_eq!(g.fan_beam.view_angles[0], 0.0);
        assert!((g.fan_beam.angular_range - 2.0 * PI).abs() < 1e-15);
    }

    #[test]
    fn toy_scaling() {
        let g = toy_geometry(64).unwrap();
        assert_eq!(g.sino_shape(), [100, 101]);
        assert_eq!(toy_geometry(416).unwrap(), paper_geometry());
        assert!(toy_geometry(4).is_err());
        assert!(toy_geometry(7).is_err());
    }

    #[test]
    fn central_ray_hits_isocenter() {
        let g = toy_geometry(64).unwrap();
        let f = &g.fan_beam;
        for v in 0..f.num_views {
            let (s, d) = f.ray_endpoints(v, f.center_bin()).unwrap();
            assert!(dist_point_to_line([0.0, 0.0], s, d) < 1e-9 * f.source_to_isocenter);
        }
    }

    #[test]
    fn opposite_views_reflect_source() {
        let g = toy_geometry(64).unwrap();
        let f = &g.fan_beam;
        let half = f.num_views / 2;
        for v in 0..half {
            let (a, _) = f.ray_endpoints(v, 0).unwrap();
            let (b, _) = f.ray_endpoints(v + half, 0).unwrap();
            assert!((a[0] + b[0]).abs() < 1e-9 && (a[1] + b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn segment_length_from_trigonometry() {
        // Independent construction: detector element from the law of cosines
        // in the triangle (source, isocenter, element).
        let g = toy_geometry(32).unwrap();
        let f = &g.fan_beam;
        for &(v, b) in &[(0usize, 0usize), (3, 10), (17, f.num_bins - 1), (30, 25)] {
            let (s, d) = f.ray_endpoints(v, b).unwrap();
            let len = (d[0] - s[0]).hypot(d[1] - s[1]);
            assert!(len >= f.source_to_detector - 1e-9);
            let gamma = (b as f64 - f.center_bin() as f64) * f.detector_arc;
            let r = f.source_to_isocenter;
            let l = f.source_to_detector;
            let iso_to_det = (r * r + l * l - 2.0 * r * l * gamma.cos()).sqrt();
            assert!((d[0].hypot(d[1]) - iso_to_det).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_range_indices() {
        let g = toy_geometry(16).unwrap();
        assert!(g.fan_beam.ray_endpoints(g.fan_beam.num_views, 0).is_err());
        assert!(g.fan_beam.ray_endpoints(0, g.fan_beam.num_bins).is_err());
    }

    #[test]
    fn invalid_fan_parameters() {
        assert!(FanBeamGeometry::new(3, 11, 2.0 * PI, 100.0, 200.0, 0.01).is_err());
        assert!(FanBeamGeometry::new(8, 10, 2.0 * PI, 100.0, 200.0, 0.01).is_err());
        assert!(FanBeamGeometry::new(8, 11, 2.0 * PI, 200.0, 100.0, 0.01).is_err());
        assert!(ImageGrid::new(16, 16, 0.0).is_err());
    }

    #[test]
    fn pixel_index_roundtrip() {
        let g = ImageGrid::new(10, 12, 0.7).unwrap();
        let p = g.pixel_center(3, 5);
        let (r, c) = g.to_index_space(p);
        assert!((r - 3.0).abs() < 1e-12 && (c - 5.0).abs() < 1e-12);
        // row 0 is at +y
        assert!(g.pixel_center(0, 0)[1] > g.pixel_center(9, 0)[1]);
    }

    proptest! {
        #[test]
        fn toy_geometry_invariants(n in 8usize..600) {
            let g = toy_geometry(n).unwrap();
            prop_assert!(g.validate().is_ok());
            let f = &g.fan_beam;
            prop_assert!(f.num_bins % 2 == 1 && f.num_views.is_multiple_of(2));
            prop_assert!(f.num_bins > f.num_views);
            let step = f.view_step();
            for w in f.view_angles.windows(2) {
                prop_assert!(w[1] > w[0]);
                prop_assert!(((w[1] - w[0]) - step).abs() < 1e-12);
            }
        }
    }
}
