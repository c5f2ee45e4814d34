//! Image quality metrics.

use crate::error::{Error, Result};
use crate::image::Image;

/// Gaussian-window SSIM settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    /// Odd window side length in pixels.
    pub window: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    /// Standard 11×11 / σ = 1.5 window, shrunk to the largest odd size that
    /// fits for small images, with σ scaled in proportion.
    pub fn for_size(width: usize, height: usize) -> Self {
        let side = width.min(height).max(1);
        let largest_odd = if side % 2 == 1 { side } else { side - 1 };
        let window = largest_odd.min(11);
        Self {
            window,
            window_sigma: 1.5 * window as f64 / 11.0,
            ..Self::default()
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.window.is_multiple_of(2) || self.window == 0 {
            return Err(Error::InvalidInput(format!(
                "SSIM window must be odd, got {}",
                self.window
            )));
        }
        if self.window > width.min(height) {
            return Err(Error::InvalidInput(format!(
                "SSIM window {} exceeds image size {width}x{height}",
                self.window
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::InvalidInput("k1 and k2 must be positive".into()));
        }
        if !(self.dynamic_range > 0.0) {
            return Err(Error::InvalidInput("dynamic_range must be positive".into()));
        }
        if !(self.window_sigma > 0.0) {
            return Err(Error::InvalidInput("window_sigma must be positive".into()));
        }
        Ok(())
    }

    fn kernel(&self) -> Vec<f64> {
        let w = self.window;
        let half = (w / 2) as f64;
        let g: Vec<f64> = (0..w)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.window_sigma * self.window_sigma)).exp()
            })
            .collect();
        let mut k = Vec::with_capacity(w * w);
        for gy in &g {
            for gx in &g {
                k.push(gy * gx);
            }
        }
        let total: f64 = k.iter().sum();
        k.iter().map(|v| v / total).collect()
    }
}

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape(format!(
            "images differ in size: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean SSIM over every window position fully inside the image.
pub fn ssim(a: &Image, b: &Image, cfg: &SsimConfig) -> Result<f64> {
    windowed(a, b, cfg).map(|(full, _)| full)
}

/// Mean of the contrast-structure factor `(2σ_ab + C2) / (σ_a² + σ_b² + C2)`
/// alone, i.e. SSIM without its luminance term.
pub fn contrast_structure(a: &Image, b: &Image, cfg: &SsimConfig) -> Result<f64> {
    windowed(a, b, cfg).map(|(_, cs)| cs)
}

fn windowed(a: &Image, b: &Image, cfg: &SsimConfig) -> Result<(f64, f64)> {
    same_dims(a, b)?;
    cfg.validate(a.width, a.height)?;
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let kernel = cfg.kernel();
    let w = cfg.window;
    let mut total = 0.0;
    let mut total_cs = 0.0;
    let mut count = 0usize;
    for r0 in 0..=a.height - w {
        for c0 in 0..=a.width - w {
            let (mut mu_a, mut mu_b) = (0.0, 0.0);
            for i in 0..w {
                for j in 0..w {
                    let k = kernel[i * w + j];
                    mu_a += k * a.get(r0 + i, c0 + j);
                    mu_b += k * b.get(r0 + i, c0 + j);
                }
            }
            let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..w {
                for j in 0..w {
                    let k = kernel[i * w + j];
                    let da = a.get(r0 + i, c0 + j) - mu_a;
                    let db = b.get(r0 + i, c0 + j) - mu_b;
                    var_a += k * da * da;
                    var_b += k * db * db;
                    cov += k * da * db;
                }
            }
            let luminance = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1);
            let cs = (2.0 * cov + c2) / (var_a + var_b + c2);
            total += luminance * cs;
            total_cs += cs;
            count += 1;
        }
    }
    Ok((total / count as f64, total_cs / count as f64))
}

pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let sse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sse / a.len() as f64).sqrt())
}

/// Peak signal-to-noise ratio in dB; `+∞` for identical images.
pub fn psnr(a: &Image, b: &Image, dynamic_range: f64) -> Result<f64> {
    let e = rmse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (dynamic_range / e).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let img = random_image(1, 16, 16);
        let s = ssim(&img, &img, &SsimConfig::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_inverted_halves_is_negative() {
        let (w, h) = (16, 16);
        let data: Vec<f64> = (0..w * h)
            .map(|p| if p % w < w / 2 { 0.0 } else { 1.0 })
            .collect();
        let a = Image::new(w, h, data).unwrap();
        let b = Image::new(w, h, a.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        let s = ssim(&a, &b, &SsimConfig::default()).unwrap();
        assert!(s < 0.0, "{s}");
    }

    #[test]
    fn ssim_is_symmetric() {
        for seed in 0..5 {
            let a = random_image(seed, 20, 13);
            let b = random_image(seed + 100, 20, 13);
            let cfg = SsimConfig::for_size(20, 13);
            let ab = ssim(&a, &b, &cfg).unwrap();
            let ba = ssim(&b, &a, &cfg).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn shift_leaves_structure_term_unchanged() {
        let a = random_image(7, 16, 16);
        let b = random_image(8, 16, 16);
        let cfg = SsimConfig::default();
        let shift = |img: &Image, c: f64| {
            Image::new(16, 16, img.data.iter().map(|v| v + c).collect()).unwrap()
        };
        let base = contrast_structure(&a, &b, &cfg).unwrap();
        for c in [0.3, -0.2, 5.0] {
            let shifted = contrast_structure(&shift(&a, c), &shift(&b, c), &cfg).unwrap();
            assert!((base - shifted).abs() < 1e-9);
        }
        // the full index is shift invariant too whenever the local means agree
        let same_means = ssim(&a, &a, &cfg).unwrap();
        assert!((same_means - ssim(&shift(&a, 0.4), &shift(&a, 0.4), &cfg).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn window_selection() {
        assert_eq!(SsimConfig::for_size(32, 32).window, 11);
        assert_eq!(SsimConfig::for_size(16, 16).window, 11);
        assert_eq!(SsimConfig::for_size(8, 8).window, 7);
        assert_eq!(SsimConfig::for_size(9, 40).window, 9);
        assert!((SsimConfig::for_size(8, 8).window_sigma - 1.5 * 7.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn ssim_rejects_mismatch_and_big_window() {
        let a = random_image(1, 8, 8);
        let b = random_image(2, 8, 9);
        assert!(matches!(
            ssim(&a, &b, &SsimConfig::default()),
            Err(Error::Shape(_))
        ));
        assert!(ssim(&a, &a, &SsimConfig::default()).is_err());
    }

    #[test]
    fn rmse_and_psnr() {
        let a = random_image(3, 5, 4);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);

        let zero = Image::zeros(5, 4);
        let c = Image::new(5, 4, vec![0.3; 20]).unwrap();
        assert!((rmse(&zero, &c).unwrap() - 0.3).abs() < 1e-12);
        assert!((psnr(&zero, &c, 1.0).unwrap() + 20.0 * 0.3f64.log10()).abs() < 1e-9);

        let b = random_image(4, 5, 4);
        let mut sse = 0.0;
        for r in 0..4 {
            for c in 0..5 {
                let d = a.get(r, c) - b.get(r, c);
                sse += d * d;
            }
        }
        assert!((rmse(&a, &b).unwrap().powi(2) - sse / 20.0).abs() < 1e-12);
    }
}
