use super::{LaserScan, ScanError};

/// Geometry of the occupancy raster. Defaults give 256 px over 20.48 m,
/// i.e. 8 cm pixels with the robot at pixel (128, 128).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RasterConfig {
    pub side_px: usize,
    pub world_span: f64,
    pub center_px: (i64, i64),
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            side_px: 256,
            world_span: 20.48,
            center_px: (128, 128),
        }
    }
}

impl RasterConfig {
    /// A square raster of `side_px` pixels centred on the robot.
    pub fn centered(side_px: usize, world_span: f64) -> Self {
        let c = (side_px / 2) as i64;
        Self {
            side_px,
            world_span,
            center_px: (c, c),
        }
    }

    /// Metres per pixel.
    pub fn resolution(&self) -> f64 {
        self.world_span / self.side_px as f64
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        if self.side_px == 0 {
            return Err(ScanError::InvalidConfig("side_px must be positive".into()));
        }
        if !(self.world_span.is_finite() && self.world_span > 0.0) {
            return Err(ScanError::InvalidConfig(format!(
                "world_span must be positive, got {}",
                self.world_span
            )));
        }
        Ok(())
    }

    /// Pixel (column, row) for a point in the robot frame, `None` when off-grid.
    /// x grows to the right, world y grows up while row index grows down.
    pub fn pixel_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let res = self.resolution();
        let col = self.center_px.0 + (x / res).floor() as i64;
        let row = self.center_px.1 - (y / res).floor() as i64;
        let side = self.side_px as i64;
        if (0..side).contains(&col) && (0..side).contains(&row) {
            Some((col as usize, row as usize))
        } else {
            None
        }
    }
}

/// Binary occupancy raster of the returns of one scan, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanBitmap {
    config: RasterConfig,
    cells: Vec<u8>,
}

impl ScanBitmap {
    pub fn empty(config: RasterConfig) -> Result<Self, ScanError> {
        config.validate()?;
        Ok(Self {
            cells: vec![0; config.side_px * config.side_px],
            config,
        })
    }

    /// Builds a bitmap from row-major cells; any non-zero cell counts as set.
    pub fn from_cells(config: RasterConfig, cells: Vec<u8>) -> Result<Self, ScanError> {
        config.validate()?;
        if cells.len() != config.side_px * config.side_px {
            return Err(ScanError::InvalidConfig(format!(
                "expected {} cells, got {}",
                config.side_px * config.side_px,
                cells.len()
            )));
        }
        let cells = cells.into_iter().map(|c| u8::from(c != 0)).collect();
        Ok(Self { config, cells })
    }

    pub fn config(&self) -> &RasterConfig {
        &self.config
    }

    pub fn side(&self) -> usize {
        self.config.side_px
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.cells[row * self.config.side_px + col] != 0
    }

    pub fn set(&mut self, col: usize, row: usize) {
        self.cells[row * self.config.side_px + col] = 1;
    }

    pub fn count_set(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    /// (column, row) of every set pixel in row-major order.
    pub fn set_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let side = self.config.side_px;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(move |(i, _)| (i % side, i / side))
    }

    /// 8-bit grayscale PNG: unset pixels black, set pixels white.
    pub fn to_png(&self) -> Vec<u8> {
        let side = self.config.side_px as u32;
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, side, side);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().expect("png header to a Vec");
            let data: Vec<u8> = self.cells.iter().map(|&c| c * 255).collect();
            writer.write_image_data(&data).expect("png data to a Vec");
        }
        out
    }
}

/// Marks the pixel of every return. Returns past `range_max` or off the
/// grid are dropped, never clamped onto the border.
pub fn rasterize(scan: &LaserScan, config: &RasterConfig) -> Result<ScanBitmap, ScanError> {
    let mut bitmap = ScanBitmap::empty(*config)?;
    for (i, &r) in scan.ranges().iter().enumerate() {
        if !scan.is_return(r) {
            continue;
        }
        let theta = scan.beam_angle(i);
        if let Some((col, row)) = config.pixel_of(r * theta.cos(), r * theta.sin()) {
            bitmap.set(col, row);
        }
    }
    Ok(bitmap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::{ScanMeta, NO_RETURN};

    #[test]
    fn default_resolution_is_eight_centimetres() {
        let c = RasterConfig::default();
        assert!((c.resolution() - 0.08).abs() < 1e-12);
        assert_eq!(c.center_px, (128, 128));
    }

    #[test]
    fn no_returns_gives_empty_bitmap() {
        let s = LaserScan::new(vec![NO_RETURN; 90], -1.0, 0.01, 10.0, ScanMeta::default()).unwrap();
        let b = rasterize(&s, &RasterConfig::default()).unwrap();
        assert_eq!(b.count_set(), 0);
    }

    #[test]
    fn single_return_lands_on_expected_pixel() {
        let cfg = RasterConfig::centered(256, 20.0);
        assert_eq!(cfg.resolution(), 0.078125);
        let s = LaserScan::new(vec![5.0], 0.0, 0.01, 10.0, ScanMeta::default()).unwrap();
        let b = rasterize(&s, &cfg).unwrap();
        assert_eq!(b.count_set(), 1);
        assert!(b.get(192, 128));
    }

    #[test]
    fn zero_span_is_a_config_error() {
        let cfg = RasterConfig {
            world_span: 0.0,
            ..RasterConfig::default()
        };
        let s = LaserScan::new(vec![1.0], 0.0, 0.01, 10.0, ScanMeta::default()).unwrap();
        assert!(matches!(rasterize(&s, &cfg), Err(ScanError::InvalidConfig(_))));
    }

    #[test]
    fn off_grid_returns_are_dropped() {
        let cfg = RasterConfig::centered(16, 1.6);
        let s = LaserScan::new(vec![5.0, 0.3], 0.0, 0.01, 10.0, ScanMeta::default()).unwrap();
        let b = rasterize(&s, &cfg).unwrap();
        assert_eq!(b.count_set(), 1);
    }

    #[test]
    fn png_round_trips_the_grid() {
        let s = LaserScan::new(vec![2.0, 3.0, 4.0], 0.3, 0.4, 10.0, ScanMeta::default()).unwrap();
        let b = rasterize(&s, &RasterConfig::default()).unwrap();
        let bytes = b.to_png();
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (256, 256));
        let expected: Vec<u8> = b.cells().iter().map(|&c| c * 255).collect();
        assert_eq!(&buf[..info.buffer_size()], &expected[..]);
    }
}
