use serde::{Deserialize, Serialize};

use super::DetectionError;

/// Smallest image side any pyramid layer may have.
pub const MIN_LAYER_SIDE: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipLayer {
    /// 1-based; layer 1 is full resolution.
    pub index: usize,
    pub width: u32,
    pub height: u32,
    /// Downsampling factor relative to the full-resolution image.
    pub scale: f64,
    /// Owned object sizes (max side, full-resolution pixels), `[lo, hi)`.
    pub size_lo: f64,
    /// `None` means unbounded.
    pub size_hi: Option<f64>,
}

impl DipLayer {
    pub fn owns(&self, size: f64) -> bool {
        size >= self.size_lo && self.size_hi.map_or(true, |hi| size < hi)
    }
}

/// A square tile of one pyramid layer, in that layer's pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub id: u32,
    pub layer: usize,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipSpec {
    pub layers: Vec<DipLayer>,
    pub scale_factor: f64,
    pub window: u32,
    pub stride: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DipConfig {
    pub layers: usize,
    pub window: u32,
    pub stride: u32,
    /// Size threshold unit; layer `m ≥ 2` owns `[s_min·2^(m−1), s_min·2^m)`.
    pub s_min: f64,
}

impl Default for DipConfig {
    fn default() -> Self {
        Self { layers: 4, window: 1024, stride: 1024, s_min: 32.0 }
    }
}

/// Factor-2 pyramid with non-overlapping windows and the default size unit.
pub fn build_dip(width: u32, height: u32, layers: usize, window: u32) -> Result<DipSpec, DetectionError> {
    build_dip_with(width, height, &DipConfig { layers, window, stride: window, ..DipConfig::default() })
}

pub fn build_dip_with(width: u32, height: u32, cfg: &DipConfig) -> Result<DipSpec, DetectionError> {
    let m = cfg.layers;
    if m == 0 {
        return Err(DetectionError::Config("a pyramid needs at least one layer".into()));
    }
    if cfg.stride == 0 || cfg.window < cfg.stride {
        return Err(DetectionError::Config(format!("window {} and stride {} need window ≥ stride > 0", cfg.window, cfg.stride)));
    }
    if cfg.s_min.is_nan() || cfg.s_min <= 0.0 {
        return Err(DetectionError::Config("s_min must be positive".into()));
    }
    let mut layers = Vec::with_capacity(m);
    for i in 1..=m {
        let scale = 2f64.powi(i as i32 - 1);
        let w = (width as f64 / scale).ceil() as u32;
        let h = (height as f64 / scale).ceil() as u32;
        if w < MIN_LAYER_SIDE || h < MIN_LAYER_SIDE {
            return Err(DetectionError::Config(format!(
                "{m} layers are too many for a {width}x{height} image: layer {i} would be {w}x{h}"
            )));
        }
        let size_lo = if i == 1 { 0.0 } else { cfg.s_min * scale };
        let size_hi = (i < m).then(|| cfg.s_min * scale * 2.0);
        layers.push(DipLayer { index: i, width: w, height: h, scale, size_lo, size_hi });
    }
    Ok(DipSpec { layers, scale_factor: 2.0, window: cfg.window, stride: cfg.stride })
}

fn starts(extent: u32, window: u32, stride: u32) -> Vec<u32> {
    if extent <= window {
        return vec![0];
    }
    let mut out: Vec<u32> = (0..).map(|k| k * stride).take_while(|&s| s + window < extent).collect();
    out.push(extent - window);
    out.dedup();
    out
}

impl DipSpec {
    /// 1-based layer owning an object whose max side is `size`.
    pub fn layer_for_size(&self, size: f64) -> usize {
        self.layers.iter().find(|l| l.owns(size)).map_or(self.layers.len(), |l| l.index)
    }

    pub fn layer(&self, index: usize) -> &DipLayer {
        &self.layers[index - 1]
    }

    /// Windows covering every layer; ids are consecutive in layer, row, column order.
    pub fn windows(&self) -> Vec<Window> {
        let mut out = Vec::new();
        for l in &self.layers {
            for &y0 in &starts(l.height, self.window, self.stride) {
                for &x0 in &starts(l.width, self.window, self.stride) {
                    out.push(Window {
                        id: out.len() as u32,
                        layer: l.index,
                        x0,
                        y0,
                        x1: (x0 + self.window).min(l.width),
                        y1: (y0 + self.window).min(l.height),
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_widths_halve() {
        let d = build_dip(8192, 8192, 4, 1024).unwrap();
        let widths: Vec<u32> = d.layers.iter().map(|l| l.width).collect();
        assert_eq!(widths, vec![8192, 4096, 2048, 1024]);
    }

    #[test]
    fn odd_sizes_round_up() {
        let d = build_dip(1001, 37, 2, 64).unwrap();
        assert_eq!((d.layers[1].width, d.layers[1].height), (501, 19));
    }

    #[test]
    fn single_layer_owns_everything() {
        let d = build_dip(512, 512, 1, 256).unwrap();
        assert!(d.layers[0].owns(1e-3) && d.layers[0].owns(1e9));
        assert_eq!(d.layers[0].size_hi, None);
    }

    #[test]
    fn too_many_layers() {
        assert!(build_dip(64, 64, 5, 32).is_err());
        assert!(build_dip(64, 64, 4, 32).is_ok());
    }

    #[test]
    fn window_covering_the_image_gives_one_per_layer() {
        let d = build_dip(800, 600, 3, 1024).unwrap();
        let w = d.windows();
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|w| w.x0 == 0 && w.y0 == 0));
    }

    #[test]
    fn overlapping_windows_cover_the_layer() {
        let d = build_dip_with(1000, 1000, &DipConfig { layers: 1, window: 400, stride: 300, s_min: 32.0 }).unwrap();
        let w = d.windows();
        let xs: Vec<u32> = w.iter().filter(|w| w.y0 == 0).map(|w| w.x0).collect();
        assert_eq!(xs, vec![0, 300, 600]);
        assert!(w.iter().all(|w| w.x1 <= 1000 && w.y1 <= 1000));
    }

    #[test]
    fn bad_window_config() {
        assert!(build_dip_with(512, 512, &DipConfig { layers: 1, window: 100, stride: 200, s_min: 32.0 }).is_err());
        assert!(build_dip(512, 512, 0, 100).is_err());
    }
}
