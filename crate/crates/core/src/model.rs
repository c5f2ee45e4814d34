//! Compound-Gaussian measurement model and the Type-II objective.
//!
//! Coefficients are modelled as `β = u ⊙ z` with `u ~ N(0, σ_u² I)` and
//! `z = h(x)`, `h(x)_i = sqrt(exp(x_i / a))`. Integrating `u` out gives the
//! marginal covariance
//!
//! ```text
//! B(x) = σ_u² X diag(h(x))² Xᵀ + σ_ε² I        (m × m)
//! ```
//!
//! and the Type-II objective minimized over `x`:
//!
//! ```text
//! f(x) = yᵀ B(x)⁻¹ y + log det B(x) + ‖x‖² / σ_x²
//!        \___ f1 ___/   \__ f2 ___/   \__ f3 __/
//! ```
//!
//! The fast objective replaces `f2` with its lower-bound surrogate
//! `Σ x_i / a`, which only shifts the bound by an `x`-independent constant.

use faer::Mat;
use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Error, Result};
use crate::linalg::SpdFactor;

/// Model hyperparameters. `Σ_u = σ_u² I`, `Σ_ε = σ_ε² I`, `Σ_x = σ_x² I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub sigma_u_sq: f64,
    pub sigma_eps_sq: f64,
    /// Scale of the nonlinearity `h`.
    pub a: f64,
    pub sigma_x_sq: f64,
    /// Support threshold for the thresholded Type-I solve.
    pub tau: f64,
    /// Lower clamp on `z` wherever `Λ⁻¹` or `Λ⁻²` is formed.
    pub z_floor: f64,
}

/// Defaults suit images with values in `[0, 1]` under the 18-angle Radon
/// geometries with `m ≈ 1.25 n`; `σ_u²` and `a` were chosen on the synthetic
/// phantom.
impl Default for HyperParams {
    fn default() -> Self {
        Self {
            sigma_u_sq: 0.01,
            sigma_eps_sq: 0.1,
            a: 0.75,
            sigma_x_sq: 1.0,
            tau: 0.0,
            z_floor: 1e-8,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma_u_sq", self.sigma_u_sq),
            ("sigma_eps_sq", self.sigma_eps_sq),
            ("sigma_x_sq", self.sigma_x_sq),
            ("z_floor", self.z_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.a == 0.0 || !self.a.is_finite() {
            return Err(Error::InvalidInput(format!(
                "a must be finite and nonzero, got {}",
                self.a
            )));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "tau must be nonnegative, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Forward model `X = Ψ Φ`: sensing matrix times a unitary dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrices {
    pub(crate) psi: DMatrix<f64>,
    pub(crate) phi: DMatrix<f64>,
    pub(crate) x_mat: DMatrix<f64>,
}

impl ModelMatrices {
    /// A model whose dictionary is the identity, so `X = Ψ`.
    pub fn from_sensing(psi: DMatrix<f64>) -> Self {
        let n = psi.ncols();
        Self {
            x_mat: psi.clone(),
            psi,
            phi: DMatrix::identity(n, n),
        }
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// The composed matrix `X = ΨΦ`.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x_mat
    }

    /// Number of measurements.
    pub fn m(&self) -> usize {
        self.x_mat.nrows()
    }

    /// Number of coefficients.
    pub fn n(&self) -> usize {
        self.x_mat.ncols()
    }
}

/// Type-II variable `x` together with its scale image `z = h(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
}

impl LatentState {
    pub fn new(x: DVector<f64>, a: f64) -> Result<Self> {
        let z = apply_h(&x, a)?;
        Ok(Self { x, z })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub y: DVector<f64>,
    /// Noise variance the measurement was generated with.
    pub noise_variance: f64,
}

impl Measurement {
    pub fn new(y: DVector<f64>, noise_variance: f64) -> Self {
        Self { y, noise_variance }
    }
}

/// `h(x)_i = sqrt(exp(x_i / a)) = exp(x_i / (2a))`.
pub fn apply_h(x: &DVector<f64>, a: f64) -> Result<DVector<f64>> {
    if a == 0.0 || !a.is_finite() {
        return Err(Error::InvalidInput(format!(
            "nonlinearity scale must be nonzero, got {a}"
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("x[{i}] is not finite")));
    }
    Ok(x.map(|v| (v / (2.0 * a)).exp()))
}

fn check_dims(model: &ModelMatrices, x: &DVector<f64>, y: Option<&Measurement>) -> Result<()> {
    if x.len() != model.n() {
        return Err(shape_err(format!(
            "x has length {}, model has n = {}",
            x.len(),
            model.n()
        )));
    }
    if let Some(y) = y {
        if y.y.len() != model.m() {
            return Err(shape_err(format!(
                "y has length {}, model has m = {}",
                y.y.len(),
                model.m()
            )));
        }
    }
    Ok(())
}

/// `B(x) = σ_u² X diag(h(x))² Xᵀ + σ_ε² I`, in measurement space.
pub fn build_b(
    model: &ModelMatrices,
    x: &DVector<f64>,
    params: &HyperParams,
) -> Result<DMatrix<f64>> {
    params.validate()?;
    check_dims(model, x, None)?;
    let h = apply_h(x, params.a)?;
    let xm = model.x();
    // scale columns by σ_u h_i so that B = W Wᵀ + σ_ε² I stays exactly symmetric
    let mut w = xm.clone();
    for (j, mut col) in w.column_iter_mut().enumerate() {
        col *= params.sigma_u_sq.sqrt() * h[j];
    }
    let mut b = &w * w.transpose();
    for i in 0..b.nrows() {
        b[(i, i)] += params.sigma_eps_sq;
    }
    Ok(b)
}

/// The three additive parts of the Type-II objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    /// `yᵀ B(x)⁻¹ y`
    pub data_fit: f64,
    /// `log det B(x)`, or `Σ x_i / a` for the fast objective.
    pub log_det: f64,
    /// `‖x‖² / σ_x²`
    pub prior: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.data_fit + self.log_det + self.prior
    }
}

fn prior_term(x: &DVector<f64>, params: &HyperParams) -> f64 {
    x.norm_squared() / params.sigma_x_sq
}

/// `Σ x_i / a`, the surrogate for `log det B(x)`.
pub fn log_det_surrogate(x: &DVector<f64>, a: f64) -> f64 {
    x.sum() / a
}

fn exact_terms_with(
    x: &DVector<f64>,
    y: &Measurement,
    model: &ModelMatrices,
    params: &HyperParams,
) -> Result<(ObjectiveTerms, SpdFactor)> {
    check_dims(model, x, Some(y))?;
    let b = build_b(model, x, params)?;
    let factor = SpdFactor::new(&b)?;
    let terms = ObjectiveTerms {
        data_fit: factor.inv_quad(&y.y),
        log_det: factor.log_det(),
        prior: prior_term(x, params),
    };
    Ok((terms, factor))
}

/// Exact objective split into its terms.
pub fn objective_exact_terms(
    x: &DVector<f64>,
    y: &Measurement,
    model: &ModelMatrices,
    params: &HyperParams,
) -> Result<ObjectiveTerms> {
    exact_terms_with(x, y, model, params).map(|(t, _)| t)
}

/// Type-II objective `f = f1 + f2 + f3`, evaluated through a Cholesky
/// factorization of `B(x)`. This is the quantity being minimized.
pub fn objective_exact(
    x: &DVector<f64>,
    y: &Measurement,
    model: &ModelMatrices,
    params: &HyperParams,
) -> Result<f64> {
    objective_exact_terms(x, y, model, params).map(|t| t.total())
}

/// Fast objective split into its terms.
pub fn objective_fast_terms(
    x: &DVector<f64>,
    y: &Measurement,
    model: &ModelMatrices,
    params: &HyperParams,
) -> Result<ObjectiveTerms> {
    let (mut terms, _) = exact_terms_with(x, y, model, params)?;
    terms.log_det = log_det_surrogate(x, params.a);
    Ok(terms)
}

/// `f̃ = f1 + Σ x_i / a + f3`. Only the log-determinant differs from
/// [`objective_exact`].
pub fn objective_fast(
    x: &DVector<f64>,
    y: &Measurement,
    model: &ModelMatrices,
    params: &HyperParams,
) -> Result<f64> {
    objective_fast_terms(x, y, model, params).map(|t| t.total())
}

/// Central-difference gradient, one coordinate at a time.
pub fn finite_diff_gradient<F>(mut loss: F, x: &DVector<f64>, step: f64) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!(
            "step must be positive, got {step}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = DVector::zeros(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = loss(&probe);
        probe[i] = x[i] - step;
        let down = loss(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical(format!(
                "loss is not finite around coordinate {i}"
            )));
        }
        grad[i] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}

/// Which space the cached data-fit term is factorized in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitSpace {
    /// Factor the `m × m` matrix `B(x)` directly.
    Measurement,
    /// Factor the `n × n` matrix `XᵀX + (σ_ε²/σ_u²) diag(z)⁻²` and use the
    /// matrix inversion lemma. Cheaper whenever `n < m`.
    Coefficient,
}

/// The fast objective with every `x`-independent quantity precomputed.
///
/// This is what the optimizer calls thousands of times. The data-fit term
/// is computed in whichever space is smaller; both routes give the same
/// value up to rounding.
pub struct FastObjective {
    space: FitSpace,
    params: HyperParams,
    n: usize,
    y_sq: f64,
    y: DVector<f64>,
    /// `Xᵀy`
    xty: DVector<f64>,
    /// `XᵀX` in the coefficient space, or `X` itself in the measurement space.
    cache: Mat<f64>,
}

impl FastObjective {
    pub fn new(model: &ModelMatrices, y: &Measurement, params: &HyperParams) -> Result<Self> {
        let space = if model.n() < model.m() {
            FitSpace::Coefficient
        } else {
            FitSpace::Measurement
        };
        Self::with_space(model, y, params, space)
    }

    pub fn with_space(
        model: &ModelMatrices,
        y: &Measurement,
        params: &HyperParams,
        space: FitSpace,
    ) -> Result<Self> {
        params.validate()?;
        if y.y.len() != model.m() {
            return Err(shape_err(format!(
                "y has length {}, model has m = {}",
                y.y.len(),
                model.m()
            )));
        }
        let x = model.x();
        let xty = x.tr_mul(&y.y);
        let cache = match space {
            FitSpace::Coefficient => {
                let g = x.tr_mul(x);
                Mat::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)])
            }
            FitSpace::Measurement => Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)]),
        };
        Ok(Self {
            space,
            params: *params,
            n: model.n(),
            y_sq: y.y.norm_squared(),
            y: y.y.clone(),
            xty,
            cache,
        })
    }

    pub fn space(&self) -> FitSpace {
        self.space
    }

    pub fn params(&self) -> &HyperParams {
        &self.params
    }

    pub fn terms(&self, x: &DVector<f64>) -> Result<ObjectiveTerms> {
        if x.len() != self.n {
            return Err(shape_err(format!(
                "x has length {}, model has n = {}",
                x.len(),
                self.n
            )));
        }
        let z = apply_h(x, self.params.a)?;
        let data_fit = match self.space {
            FitSpace::Coefficient => self.data_fit_coefficient(&z)?,
            FitSpace::Measurement => self.data_fit_measurement(&z)?,
        };
        Ok(ObjectiveTerms {
            data_fit,
            log_det: log_det_surrogate(x, self.params.a),
            prior: prior_term(x, &self.params),
        })
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        self.terms(x).map(|t| t.total())
    }

    // yᵀB⁻¹y = (yᵀy − bᵀ M⁻¹ b) / σ_ε²,  M = XᵀX + κ diag(z)⁻²,  b = Xᵀy,  κ = σ_ε²/σ_u²
    fn data_fit_coefficient(&self, z: &DVector<f64>) -> Result<f64> {
        let p = &self.params;
        let kappa = p.sigma_eps_sq / p.sigma_u_sq;
        let mut m = self.cache.clone();
        for i in 0..self.n {
            let zi = z[i].max(p.z_floor);
            m[(i, i)] += kappa / (zi * zi);
        }
        let factor = SpdFactor::from_faer(m)?;
        let reduction = factor.inv_quad(&self.xty);
        Ok((self.y_sq - reduction) / p.sigma_eps_sq)
    }

    fn data_fit_measurement(&self, z: &DVector<f64>) -> Result<f64> {
        let p = &self.params;
        let (rows, cols) = (self.cache.nrows(), self.cache.ncols());
        let scale = p.sigma_u_sq.sqrt();
        let w = Mat::from_fn(rows, cols, |i, j| self.cache[(i, j)] * scale * z[j]);
        let mut b = &w * w.transpose();
        for i in 0..rows {
            b[(i, i)] += p.sigma_eps_sq;
        }
        let factor = SpdFactor::from_faer(b)?;
        Ok(factor.inv_quad(&self.y))
    }
}
