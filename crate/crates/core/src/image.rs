//! Grayscale image primitives: normalized intensity buffers, slice stacks,
//! Sobel gradients and Bresenham line rasterization.

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::Dimension(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::MalformedInput(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image filled with a single intensity.
    pub fn filled(width: u32, height: u32, value: f64) -> Result<Self> {
        Self::new(
            width,
            height,
            vec![value; (width as usize) * (height as usize)],
        )
    }

    /// Builds an image by evaluating `f` at every pixel. `f` must return
    /// values in `[0, 1]`.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize) * (self.width as usize) + (x as usize)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: f64) {
        debug_assert!((0.0..=1.0).contains(&value), "intensity {value} out of range");
        let i = self.idx(x, y);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as u64) < self.width as u64 && (y as u64) < self.height as u64
    }
}

/// Ordered stack of equally sized slices, optionally carrying tilt angles.
#[derive(Debug, Clone)]
pub struct SliceStack {
    slices: Vec<GrayImage>,
    angles: Option<Vec<f64>>,
}

impl SliceStack {
    pub fn new(slices: Vec<GrayImage>, angles: Option<Vec<f64>>) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::Dimension("stack must contain at least one slice".into()));
        }
        let (w, h) = (slices[0].width(), slices[0].height());
        for (i, s) in slices.iter().enumerate() {
            if s.width() != w || s.height() != h {
                return Err(Error::Dimension(format!(
                    "slice {i} is {}x{}, expected {w}x{h}",
                    s.width(),
                    s.height()
                )));
            }
        }
        if let Some(a) = &angles {
            if a.len() != slices.len() {
                return Err(Error::Dimension(format!(
                    "{} angles for {} slices",
                    a.len(),
                    slices.len()
                )));
            }
            if a.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::MalformedInput(
                    "tilt angles must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self { slices, angles })
    }

    pub fn slices(&self) -> &[GrayImage] {
        &self.slices
    }

    pub fn angles(&self) -> Option<&[f64]> {
        self.angles.as_deref()
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.slices[0].width()
    }

    pub fn height(&self) -> u32 {
        self.slices[0].height()
    }
}

/// Per-pixel gradient components of an image.
#[derive(Debug, Clone)]
pub struct VectorField {
    width: u32,
    height: u32,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl VectorField {
    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize) * (self.width as usize) + (x as usize)
    }

    #[inline]
    pub fn dx(&self, x: u32, y: u32) -> f64 {
        self.dx[self.idx(x, y)]
    }

    #[inline]
    pub fn dy(&self, x: u32, y: u32) -> f64 {
        self.dy[self.idx(x, y)]
    }

    /// Gradient magnitude at a pixel.
    #[inline]
    pub fn magnitude(&self, x: u32, y: u32) -> f64 {
        self.dx(x, y).hypot(self.dy(x, y))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }
}

/// Sample bit depth of raw integer images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Integer image as read from disk, before normalization.
#[derive(Debug, Clone)]
pub struct RawImage {
    pub width: u32,
    pub height: u32,
    pub samples: Vec<u16>,
}

/// Scales integer samples to `[0, 1]` by the full range of the bit depth.
pub fn normalize(raw: &RawImage, bit_depth: BitDepth) -> Result<GrayImage> {
    let expected = (raw.width as usize) * (raw.height as usize);
    if raw.samples.len() != expected {
        return Err(Error::Dimension(format!(
            "raw sample count {} does not match {}x{}",
            raw.samples.len(),
            raw.width,
            raw.height
        )));
    }
    let max = bit_depth.max_value();
    let scale = 1.0 / max as f64;
    let mut data = Vec::with_capacity(expected);
    for &s in &raw.samples {
        if s > max {
            return Err(Error::MalformedInput(format!(
                "sample {s} exceeds bit depth maximum {max}"
            )));
        }
        data.push(s as f64 * scale);
    }
    GrayImage::new(raw.width, raw.height, data)
}

/// Sobel 3x3 gradient. Border pixels take zero gradient.
pub fn gradient(img: &GrayImage) -> Result<VectorField> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(Error::Dimension(format!(
            "gradient needs at least 3x3, got {w}x{h}"
        )));
    }
    let n = (w as usize) * (h as usize);
    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; n];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let tl = img.get(x - 1, y - 1);
            let tc = img.get(x, y - 1);
            let tr = img.get(x + 1, y - 1);
            let ml = img.get(x - 1, y);
            let mr = img.get(x + 1, y);
            let bl = img.get(x - 1, y + 1);
            let bc = img.get(x, y + 1);
            let br = img.get(x + 1, y + 1);
            let i = (y as usize) * (w as usize) + (x as usize);
            dx[i] = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
            dy[i] = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr);
        }
    }
    Ok(VectorField {
        width: w,
        height: h,
        dx,
        dy,
    })
}

/// 8-connected discrete line from `p0` to `p1`, both endpoints included.
///
/// Integer-error variant; when the midpoint test ties, the minor coordinate
/// advances. The returned list has `max(|dx|, |dy|) + 1` pixels.
pub fn bresenham_line(p0: (i64, i64), p1: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x0, mut y0) = p0;
    let (x1, y1) = p1;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push((x0, y0));
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
    out
}
