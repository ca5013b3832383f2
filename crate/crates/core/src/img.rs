//! Dense pixel grids used by the renderer, the losses and the metrics.

/// Row-major image with `channels` interleaved `f64` samples per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn add(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] += v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Elementwise product, used for masking predictions before a loss.
    /// A single-channel mask broadcasts over a multi-channel image.
    pub fn masked(&self, mask: &Image) -> Image {
        assert_eq!(self.width, mask.width);
        assert_eq!(self.height, mask.height);
        assert!(mask.channels == 1 || mask.channels == self.channels);
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    let m = if mask.channels == 1 {
                        mask.get(x, y, 0)
                    } else {
                        mask.get(x, y, c)
                    };
                    let i = out.idx(x, y, c);
                    out.data[i] *= m;
                }
            }
        }
        out
    }
}
