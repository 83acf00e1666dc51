use super::Image;

/// Single-channel real raster, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "plane buffer length");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self::new(width, height, vec![v; width * height])
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Studio-swing BT.601 luma, `16 + (65.481 R + 128.553 G + 24.966 B) / 255`.
///
/// The weighted sum is taken in integers (coefficients ×1000) so that equal
/// luma is decided exactly and the range end points come out as 16 and 235.
pub fn rgb_to_y(img: &Image) -> Plane {
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| {
            let dot =
                65_481 * u64::from(p[0]) + 128_553 * u64::from(p[1]) + 24_966 * u64::from(p[2]);
            16.0 + dot as f64 / 255_000.0
        })
        .collect();
    Plane::new(img.width(), img.height(), data)
}
