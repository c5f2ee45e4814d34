//! Sensing and dictionary operators.
//!
//! Images are vectorized row-major with the origin at the top-left pixel.
//! Pixel `(row, col)` covers the unit square `[col, col+1] × [row, row+1]`
//! with `y` pointing down.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};
use crate::model::ModelMatrices;

/// Parallel-beam projection geometry.
///
/// Each angle contributes `samples_per_ray` parallel lines, centred on the
/// image and spaced `detector_spacing` pixels apart. Angle `0` is a
/// horizontal line travelling in `+x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadonSpec {
    pub image_width: usize,
    pub image_height: usize,
    pub n_rays: usize,
    pub samples_per_ray: usize,
    pub angles: Vec<f64>,
    pub detector_spacing: f64,
}

impl RadonSpec {
    /// `n_rays` equiangular projection directions over `[0, π)`.
    pub fn equiangular(
        image_width: usize,
        image_height: usize,
        n_rays: usize,
        samples_per_ray: usize,
        detector_spacing: f64,
    ) -> Self {
        let angles = (0..n_rays).map(|k| k as f64 * PI / n_rays as f64).collect();
        Self {
            image_width,
            image_height,
            n_rays,
            samples_per_ray,
            angles,
            detector_spacing,
        }
    }

    /// Equiangular geometry whose detector spans the image diagonal.
    pub fn covering(
        image_width: usize,
        image_height: usize,
        n_rays: usize,
        samples_per_ray: usize,
    ) -> Self {
        let diag = ((image_width * image_width + image_height * image_height) as f64).sqrt();
        let spacing = if samples_per_ray > 1 {
            diag / (samples_per_ray - 1) as f64
        } else {
            1.0
        };
        Self::equiangular(image_width, image_height, n_rays, samples_per_ray, spacing)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidSpec(
                "image dimensions must be positive".into(),
            ));
        }
        if self.n_rays == 0 || self.samples_per_ray == 0 {
            return Err(Error::InvalidSpec(
                "n_rays and samples_per_ray must be at least 1".into(),
            ));
        }
        if self.angles.len() != self.n_rays {
            return Err(Error::InvalidSpec(format!(
                "{} angles given for {} rays",
                self.angles.len(),
                self.n_rays
            )));
        }
        if let Some(a) = self.angles.iter().find(|a| !(0.0..PI).contains(*a)) {
            return Err(Error::InvalidSpec(format!("angle {a} outside [0, pi)")));
        }
        if !(self.detector_spacing > 0.0) || !self.detector_spacing.is_finite() {
            return Err(Error::InvalidSpec(
                "detector_spacing must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn n_measurements(&self) -> usize {
        self.n_rays * self.samples_per_ray
    }

    pub fn n_pixels(&self) -> usize {
        self.image_width * self.image_height
    }
}

/// Intersection lengths of one line with the pixel grid, as `(pixel, length)`.
///
/// The line is `p(s) = origin + s·dir` with `dir` a unit vector. Crossings
/// with every vertical and horizontal grid line inside the image are sorted
/// along the line; each segment between consecutive crossings lies in one
/// pixel, found from its midpoint.
fn trace_line(
    width: usize,
    height: usize,
    origin: (f64, f64),
    dir: (f64, f64),
) -> Vec<(usize, f64)> {
    const EPS: f64 = 1e-12;
    let (w, h) = (width as f64, height as f64);
    let (ox, oy) = origin;
    let (dx, dy) = dir;

    // clip to the image box
    let mut s_min = f64::NEG_INFINITY;
    let mut s_max = f64::INFINITY;
    for (o, d, hi) in [(ox, dx, w), (oy, dy, h)] {
        if d.abs() < EPS {
            if o < 0.0 || o > hi {
                return Vec::new();
            }
        } else {
            let (s0, s1) = ((0.0 - o) / d, (hi - o) / d);
            s_min = s_min.max(s0.min(s1));
            s_max = s_max.min(s0.max(s1));
        }
    }
    if s_max - s_min <= EPS {
        return Vec::new();
    }

    let mut cuts = vec![s_min, s_max];
    for (o, d, count) in [(ox, dx, width), (oy, dy, height)] {
        if d.abs() < EPS {
            continue;
        }
        for k in 1..count {
            let s = (k as f64 - o) / d;
            if s > s_min && s < s_max {
                cuts.push(s);
            }
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));

    let mut out: Vec<(usize, f64)> = Vec::with_capacity(cuts.len());
    for pair in cuts.windows(2) {
        let len = pair[1] - pair[0];
        if len <= EPS {
            continue;
        }
        let mid = 0.5 * (pair[0] + pair[1]);
        let px = ox + mid * dx;
        let py = oy + mid * dy;
        let col = (px.floor() as isize).clamp(0, width as isize - 1) as usize;
        let row = (py.floor() as isize).clamp(0, height as isize - 1) as usize;
        let pixel = row * width + col;
        match out.last_mut() {
            Some((p, l)) if *p == pixel => *l += len,
            _ => out.push((pixel, len)),
        }
    }
    out
}

/// Discrete Radon matrix `Ψ` (`m × n`, `m = n_rays · samples_per_ray`).
///
/// Row `r = angle_index · samples_per_ray + sample` holds the exact
/// intersection lengths of that line with every pixel.
pub fn build_radon_matrix(spec: &RadonSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let (w, h) = (spec.image_width, spec.image_height);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let half = (spec.samples_per_ray as f64 - 1.0) / 2.0;
    let mut psi = DMatrix::zeros(spec.n_measurements(), spec.n_pixels());
    for (ai, &theta) in spec.angles.iter().enumerate() {
        let dir = (theta.cos(), theta.sin());
        let normal = (-theta.sin(), theta.cos());
        for si in 0..spec.samples_per_ray {
            let t = (si as f64 - half) * spec.detector_spacing;
            let origin = (cx + t * normal.0, cy + t * normal.1);
            let row = ai * spec.samples_per_ray + si;
            for (pixel, len) in trace_line(w, h, origin, dir) {
                psi[(row, pixel)] += len;
            }
        }
    }
    Ok(psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DictionaryKind {
    /// Full multi-level 2-D Haar wavelet (pyramid layout).
    Haar2D,
    /// Orthonormal 2-D DCT-II.
    Dct2D,
    Identity,
}

impl DictionaryKind {
    pub fn name(&self) -> &'static str {
        match self {
            DictionaryKind::Haar2D => "haar",
            DictionaryKind::Dct2D => "dct",
            DictionaryKind::Identity => "identity",
        }
    }
}

impl std::str::FromStr for DictionaryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" | "haar2d" | "wavelet" => Ok(DictionaryKind::Haar2D),
            "dct" | "dct2d" => Ok(DictionaryKind::Dct2D),
            "identity" | "pixel" => Ok(DictionaryKind::Identity),
            other => Err(Error::InvalidSpec(format!("unknown dictionary '{other}'"))),
        }
    }
}

impl std::fmt::Display for DictionaryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Orthonormal DCT-II matrix; row `k` is the `k`-th basis vector.
fn dct_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |k, i| {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        scale * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos()
    })
}

/// One analysis level of the orthonormal Haar transform on the top-left
/// `size × size` block of a row-major `stride`-wide buffer.
fn haar_level(buf: &mut [f64], stride: usize, size: usize) {
    let half = size / 2;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut tmp = vec![0.0; size];
    for r in 0..size {
        let row = &mut buf[r * stride..r * stride + size];
        for i in 0..half {
            tmp[i] = s * (row[2 * i] + row[2 * i + 1]);
            tmp[half + i] = s * (row[2 * i] - row[2 * i + 1]);
        }
        row.copy_from_slice(&tmp);
    }
    for c in 0..size {
        for i in 0..half {
            let (a, b) = (buf[2 * i * stride + c], buf[(2 * i + 1) * stride + c]);
            tmp[i] = s * (a + b);
            tmp[half + i] = s * (a - b);
        }
        for r in 0..size {
            buf[r * stride + c] = tmp[r];
        }
    }
}

/// Forward multi-level 2-D Haar transform of a `size × size` image.
pub fn haar2d_forward(image: &[f64], size: usize) -> Vec<f64> {
    let mut buf = image.to_vec();
    let mut level = size;
    while level > 1 {
        haar_level(&mut buf, size, level);
        level /= 2;
    }
    buf
}

/// Unitary dictionary `Φ` (`n × n`, `n = width · height`); column `j` is
/// the image of the `j`-th basis atom.
pub fn build_dictionary(kind: DictionaryKind, width: usize, height: usize) -> Result<DMatrix<f64>> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidSpec(
            "image dimensions must be positive".into(),
        ));
    }
    let n = width * height;
    match kind {
        DictionaryKind::Identity => Ok(DMatrix::identity(n, n)),
        DictionaryKind::Dct2D => {
            let cw = dct_matrix(width);
            let ch = dct_matrix(height);
            // atom (k, l) at pixel (r, c) = ch[k, r] · cw[l, c]
            Ok(DMatrix::from_fn(n, n, |p, j| {
                let (r, c) = (p / width, p % width);
                let (k, l) = (j / width, j % width);
                ch[(k, r)] * cw[(l, c)]
            }))
        }
        DictionaryKind::Haar2D => {
            if width != height || !width.is_power_of_two() {
                return Err(Error::InvalidSpec(format!(
                    "Haar dictionary needs a square power-of-two image, got {width}x{height}"
                )));
            }
            // Column p of the analysis matrix W is W·e_p; Φ = Wᵀ.
            let mut w = DMatrix::zeros(n, n);
            let mut unit = vec![0.0; n];
            for p in 0..n {
                unit[p] = 1.0;
                let coeffs = haar2d_forward(&unit, width);
                unit[p] = 0.0;
                for (j, v) in coeffs.into_iter().enumerate() {
                    w[(j, p)] = v;
                }
            }
            Ok(w.transpose())
        }
    }
}

/// Maximum entry of `|ΦᵀΦ − I|`.
pub fn unitarity_defect(phi: &DMatrix<f64>) -> f64 {
    let g = phi.tr_mul(phi);
    let mut worst: f64 = 0.0;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Compose `X = ΨΦ`. The dictionary must be unitary.
pub fn compose_model(psi: DMatrix<f64>, phi: DMatrix<f64>) -> Result<ModelMatrices> {
    if psi.ncols() != phi.nrows() {
        return Err(shape_err(format!(
            "psi is {}x{} but phi has {} rows",
            psi.nrows(),
            psi.ncols(),
            phi.nrows()
        )));
    }
    if phi.nrows() != phi.ncols() {
        return Err(shape_err(format!(
            "phi must be square, got {}x{}",
            phi.nrows(),
            phi.ncols()
        )));
    }
    let defect = unitarity_defect(&phi);
    if defect > 1e-10 {
        return Err(Error::InvalidInput(format!(
            "dictionary is not unitary (defect {defect:e})"
        )));
    }
    let x_mat = &psi * &phi;
    Ok(ModelMatrices { psi, phi, x_mat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_pixel_single_ray() {
        let spec = RadonSpec::equiangular(1, 1, 1, 1, 1.0);
        let psi = build_radon_matrix(&spec).unwrap();
        assert_eq!(psi.shape(), (1, 1));
        assert!((psi[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn horizontal_ray_through_top_row() {
        // offsets -0.5 and +0.5 around the centre: first sample hits row 0
        let spec = RadonSpec::equiangular(2, 2, 1, 2, 1.0);
        let psi = build_radon_matrix(&spec).unwrap();
        let row: Vec<f64> = psi.row(0).iter().copied().collect();
        for (got, want) in row.iter().zip([1.0, 1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-12, "{row:?}");
        }
        let row: Vec<f64> = psi.row(1).iter().copied().collect();
        for (got, want) in row.iter().zip([0.0, 0.0, 1.0, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{row:?}");
        }
    }

    #[test]
    fn diagonal_ray_length() {
        let spec = RadonSpec {
            image_width: 3,
            image_height: 3,
            n_rays: 1,
            samples_per_ray: 1,
            angles: vec![PI / 4.0],
            detector_spacing: 1.0,
        };
        let psi = build_radon_matrix(&spec).unwrap();
        let total: f64 = psi.row(0).iter().sum();
        assert!((total - 3.0 * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn missing_rays_give_zero_rows() {
        let spec = RadonSpec::equiangular(4, 4, 2, 3, 10.0);
        let psi = build_radon_matrix(&spec).unwrap();
        for r in [0, 2, 3, 5] {
            assert!(psi.row(r).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn adjoint_identity() {
        let spec = RadonSpec::covering(8, 8, 5, 11);
        let psi = build_radon_matrix(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = nalgebra::DVector::from_fn(64, |_, _| rng.random::<f64>());
        let g = nalgebra::DVector::from_fn(55, |_, _| rng.random::<f64>());
        let lhs = (&psi * &f).dot(&g);
        let rhs = f.dot(&(psi.transpose() * &g));
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = RadonSpec::equiangular(4, 4, 2, 3, 1.0);
        spec.angles[1] = PI;
        assert!(build_radon_matrix(&spec).is_err());
        assert!(build_radon_matrix(&RadonSpec::equiangular(4, 4, 0, 3, 1.0)).is_err());
        assert!(build_radon_matrix(&RadonSpec::equiangular(4, 4, 2, 0, 1.0)).is_err());
    }

    #[test]
    fn dictionary_examples() {
        let id = build_dictionary(DictionaryKind::Identity, 2, 2).unwrap();
        assert_eq!(id, DMatrix::identity(4, 4));

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let c = DMatrix::from_row_slice(2, 2, &[s, s, s, -s]);
        let dct = build_dictionary(DictionaryKind::Dct2D, 2, 2).unwrap();
        assert!((&dct - c.kronecker(&c)).amax() < 1e-12);
        assert!(unitarity_defect(&dct) < 1e-12);

        let haar = build_dictionary(DictionaryKind::Haar2D, 2, 2).unwrap();
        for i in 0..4 {
            assert!((haar[(i, 0)] - 0.5).abs() < 1e-12);
        }
        assert!(unitarity_defect(&haar) < 1e-12);
    }

    #[test]
    fn haar_requires_power_of_two_square() {
        assert!(matches!(
            build_dictionary(DictionaryKind::Haar2D, 6, 6),
            Err(Error::InvalidSpec(_))
        ));
        assert!(build_dictionary(DictionaryKind::Haar2D, 4, 8).is_err());
        assert!(build_dictionary(DictionaryKind::Dct2D, 3, 5).is_ok());
    }

    #[test]
    fn larger_dictionaries_are_unitary() {
        for kind in [DictionaryKind::Haar2D, DictionaryKind::Dct2D] {
            let phi = build_dictionary(kind, 8, 8).unwrap();
            assert!(unitarity_defect(&phi) <= 1e-10, "{kind}");
            assert!((phi.determinant().abs() - 1.0).abs() <= 1e-8, "{kind}");
        }
    }

    #[test]
    fn compose_examples() {
        let model = compose_model(DMatrix::identity(4, 4), DMatrix::identity(4, 4)).unwrap();
        assert_eq!(model.x(), &DMatrix::identity(4, 4));

        let dct = build_dictionary(DictionaryKind::Dct2D, 2, 2).unwrap();
        let model = compose_model(DMatrix::identity(4, 4), dct.clone()).unwrap();
        assert!((model.x() - &dct).amax() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let psi = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let model = compose_model(psi.clone(), dct.clone()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += psi[(i, k)] * dct[(k, j)];
                }
                assert!((model.x()[(i, j)] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn compose_rejects_mismatch() {
        assert!(matches!(
            compose_model(DMatrix::zeros(3, 4), DMatrix::identity(5, 5)),
            Err(Error::Shape(_))
        ));
        assert!(compose_model(DMatrix::zeros(3, 2), DMatrix::from_element(2, 2, 1.0)).is_err());
    }
}
