//! Grayscale images, PGM I/O and the synthetic test phantom.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major grayscale image with nominal range `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels supplied for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Decode a binary (P5) or ASCII (P2) PGM, scaling by `1/maxval`.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut cur = PgmCursor { bytes, pos: 0 };
        let magic = cur.token()?;
        let binary = match magic.as_str() {
            "P5" => true,
            "P2" => false,
            other => return Err(Error::Format(format!("not a PGM file (magic '{other}')"))),
        };
        let width = cur.number()?;
        let height = cur.number()?;
        let maxval = cur.number()?;
        if width == 0 || height == 0 {
            return Err(Error::Format("PGM has zero size".into()));
        }
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Format(format!("PGM maxval {maxval} out of range")));
        }
        let n = width * height;
        let scale = 1.0 / maxval as f64;
        let mut data = Vec::with_capacity(n);
        if binary {
            // exactly one whitespace byte separates the header from the raster
            let start = cur.pos + 1;
            let bpp = if maxval < 256 { 1 } else { 2 };
            let raster = bytes
                .get(start..start + n * bpp)
                .ok_or_else(|| Error::Format("PGM raster is truncated".into()))?;
            for px in raster.chunks_exact(bpp) {
                let v = if bpp == 1 {
                    px[0] as usize
                } else {
                    ((px[0] as usize) << 8) | px[1] as usize
                };
                if v > maxval {
                    return Err(Error::Format(format!("pixel value {v} exceeds maxval")));
                }
                data.push(v as f64 * scale);
            }
        } else {
            for _ in 0..n {
                let v = cur.number()?;
                if v > maxval {
                    return Err(Error::Format(format!("pixel value {v} exceeds maxval")));
                }
                data.push(v as f64 * scale);
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Encode as 8-bit binary PGM, clamping to `[0, 1]`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| {
            let v = if v.is_finite() {
                v.clamp(0.0, 1.0)
            } else {
                0.0
            };
            (v * 255.0).round() as u8
        }));
        out
    }
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmCursor<'_> {
    fn token(&mut self) -> Result<String> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("unexpected end of PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<usize> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| Error::Format(format!("expected a number in PGM, got '{t}'")))
    }
}

/// Seeded piecewise-constant phantom with optional stripe texture.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub n_shapes: usize,
    /// Peak-to-peak amplitude of the sinusoidal stripes; `0` disables them.
    pub texture: f64,
}

impl PhantomSpec {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            seed: 7,
            n_shapes: 5,
            texture: 0.2,
        }
    }
}

enum Shape {
    Ellipse {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        rot: f64,
    },
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse {
                cx,
                cy,
                rx,
                ry,
                rot,
            } => {
                let (s, c) = rot.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
        }
    }
}

/// Render the phantom described by `spec`. Values lie in `[0, 1]`.
pub fn phantom(spec: &PhantomSpec) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let background = rng.random_range(0.1..0.3);
    let mut shapes = Vec::with_capacity(spec.n_shapes);
    for i in 0..spec.n_shapes {
        let value = rng.random_range(0.25..0.95);
        let shape = if i % 3 == 2 {
            let (xa, xb) = (rng.random_range(0.0..w), rng.random_range(0.0..w));
            let (ya, yb) = (rng.random_range(0.0..h), rng.random_range(0.0..h));
            Shape::Rect {
                x0: xa.min(xb),
                y0: ya.min(yb),
                x1: xa.max(xb),
                y1: ya.max(yb),
            }
        } else {
            Shape::Ellipse {
                cx: rng.random_range(0.15 * w..0.85 * w),
                cy: rng.random_range(0.15 * h..0.85 * h),
                rx: rng.random_range(0.1 * w..0.4 * w),
                ry: rng.random_range(0.1 * h..0.4 * h),
                rot: rng.random_range(0.0..PI),
            }
        };
        shapes.push((shape, value));
    }
    // stripes live inside the first shape, like a patterned garment
    let stripe_angle = rng.random_range(0.0..PI);
    let stripe_period = rng.random_range(2.5..4.5);
    let (sa, ca) = stripe_angle.sin_cos();

    let mut data = Vec::with_capacity(spec.width * spec.height);
    for r in 0..spec.height {
        for c in 0..spec.width {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let mut v = background;
            for (shape, value) in &shapes {
                if shape.contains(x, y) {
                    v = *value;
                }
            }
            if spec.texture > 0.0 {
                if let Some((first, _)) = shapes.first() {
                    if first.contains(x, y) {
                        let phase = 2.0 * PI * (ca * x + sa * y) / stripe_period;
                        v += 0.5 * spec.texture * phase.sin();
                    }
                }
            }
            data.push(v.clamp(0.0, 1.0));
        }
    }
    Image {
        width: spec.width,
        height: spec.height,
        data,
    }
}
